use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Obb, Vec2};
use crate::kinematics::EgoState;
use serde::{Deserialize, Serialize};

const TIME_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    LaneCenter,
    RoadBoundary,
    Crosswalk,
}

impl MapKind {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            MapKind::LaneCenter => [1.0, 0.0, 0.0],
            MapKind::RoadBoundary => [0.0, 1.0, 0.0],
            MapKind::Crosswalk => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapPolyline {
    pub id: u32,
    pub kind: MapKind,
    pub points: Vec<Vec2>,
    /// m/s, lane centers only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_limit: Option<f64>,
}

impl MapPolyline {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::Validation(format!(
                "map polyline {} has {} points, needs at least 2",
                self.id,
                self.points.len()
            )));
        }
        for (i, w) in self.points.windows(2).enumerate() {
            if w[0] == w[1] {
                return Err(Error::Validation(format!(
                    "map polyline {}: points {i} and {} coincide",
                    self.id,
                    i + 1
                )));
            }
        }
        if self.points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Validation(format!(
                "map polyline {} has non-finite coordinates",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Vehicle,
    Cyclist,
    Pedestrian,
}

impl AgentKind {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            AgentKind::Vehicle => [1.0, 0.0, 0.0],
            AgentKind::Cyclist => [0.0, 1.0, 0.0],
            AgentKind::Pedestrian => [0.0, 0.0, 1.0],
        }
    }
}

/// One logged state, serialized as `[t, x, y, heading, speed]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct TrackPoint {
    pub t: f64,
    pub state: EgoState,
}

impl From<[f64; 5]> for TrackPoint {
    fn from(a: [f64; 5]) -> Self {
        TrackPoint {
            t: a[0],
            state: EgoState {
                x: a[1],
                y: a[2],
                heading: a[3],
                speed: a[4],
            },
        }
    }
}

impl From<TrackPoint> for [f64; 5] {
    fn from(p: TrackPoint) -> Self {
        [p.t, p.state.x, p.state.y, p.state.heading, p.state.speed]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentTrack {
    #[serde(rename = "id")]
    pub agent_id: u32,
    pub kind: AgentKind,
    pub length: f64,
    pub width: f64,
    pub states: Vec<TrackPoint>,
}

impl AgentTrack {
    /// Builds a track from states sampled every `dt` starting at `start_tick`.
    pub fn from_states(
        agent_id: u32,
        kind: AgentKind,
        (length, width): (f64, f64),
        start_tick: usize,
        dt: f64,
        states: &[EgoState],
    ) -> Self {
        let states = states
            .iter()
            .enumerate()
            .map(|(i, s)| TrackPoint {
                t: (start_tick + i) as f64 * dt,
                state: *s,
            })
            .collect();
        AgentTrack {
            agent_id,
            kind,
            length,
            width,
            states,
        }
    }

    pub fn start_tick(&self, dt: f64) -> usize {
        (self.states[0].t / dt).round() as usize
    }

    /// Last tick with a logged state (inclusive).
    pub fn end_tick(&self, dt: f64) -> usize {
        self.start_tick(dt) + self.states.len() - 1
    }

    pub fn state_at_tick(&self, tick: usize, dt: f64) -> Option<EgoState> {
        let start = self.start_tick(dt);
        if tick < start {
            return None;
        }
        self.states.get(tick - start).map(|p| p.state)
    }

    pub fn obb_at_tick(&self, tick: usize, dt: f64) -> Option<Obb> {
        self.state_at_tick(tick, dt).map(|s| self.footprint_at(&s))
    }

    pub fn footprint_at(&self, s: &EgoState) -> Obb {
        Obb::new(s.position(), s.heading, self.length, self.width)
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        let who = format!("agent track {}", self.agent_id);
        if self.states.is_empty() {
            return Err(Error::Validation(format!("{who} has no states")));
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::Validation(format!(
                "{who}: footprint dimensions must be > 0 (got {} x {})",
                self.length, self.width
            )));
        }
        let t0 = self.states[0].t;
        if ((t0 / dt).round() * dt - t0).abs() > TIME_TOL {
            return Err(Error::Validation(format!(
                "{who}: first timestamp {t0} is not on the {dt} s grid"
            )));
        }
        for (i, w) in self.states.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if step <= 0.0 {
                return Err(Error::Validation(format!(
                    "{who}: timestamps must be strictly increasing (index {})",
                    i + 1
                )));
            }
            if (step - dt).abs() > TIME_TOL {
                return Err(Error::Validation(format!(
                    "{who}: non-uniform time step {step} at index {} (expected uniform {dt})",
                    i + 1
                )));
            }
        }
        for (i, p) in self.states.iter().enumerate() {
            let s = p.state;
            if ![p.t, s.x, s.y, s.heading, s.speed].iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("{who}: non-finite state at index {i}")));
            }
            if s.speed < 0.0 {
                return Err(Error::Validation(format!(
                    "{who}: negative speed {} at index {i}",
                    s.speed
                )));
            }
        }
        Ok(())
    }
}

/// A static map, replayed agents, and the expert ego demonstration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub id: String,
    pub map: Vec<MapPolyline>,
    pub agents: Vec<AgentTrack>,
    #[serde(rename = "ego")]
    pub ego_track: AgentTrack,
    pub goal: Vec2,
    pub duration: f64,
    pub dt: f64,
}

impl Scenario {
    /// Ticks covering the scenario duration (the last tick is `num_ticks()`).
    pub fn num_ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn ego_state(&self, tick: usize) -> Option<EgoState> {
        self.ego_track.state_at_tick(tick, self.dt)
    }

    /// Map bounding box, the region all agent states must stay within.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        bounding_box(self.map.iter().flat_map(|m| m.points.iter().copied()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.duration > 0.0) {
            return Err(Error::Validation(format!(
                "dt ({}) and duration ({}) must be positive",
                self.dt, self.duration
            )));
        }
        for m in &self.map {
            m.validate()?;
        }
        self.ego_track.validate(self.dt)?;
        for a in &self.agents {
            a.validate(self.dt)?;
        }
        let first = self.ego_track.states[0].t;
        let last = self.ego_track.states[self.ego_track.states.len() - 1].t;
        if first.abs() > TIME_TOL || last < self.duration - TIME_TOL {
            return Err(Error::Validation(format!(
                "ego track spans [{first}, {last}] but must cover [0, {}]",
                self.duration
            )));
        }
        let area = super::drivable_area(self)?;
        if !area.contains(self.goal) {
            return Err(Error::Validation(format!(
                "goal ({}, {}) lies outside the drivable area",
                self.goal.x, self.goal.y
            )));
        }
        let (lo, hi) = self.bounds();
        for a in &self.agents {
            for (i, p) in a.states.iter().enumerate() {
                let s = p.state;
                if s.x < lo.x - TIME_TOL
                    || s.x > hi.x + TIME_TOL
                    || s.y < lo.y - TIME_TOL
                    || s.y > hi.y + TIME_TOL
                {
                    return Err(Error::Validation(format!(
                        "agent {} state {i} at ({:.2}, {:.2}) leaves the scene bounding box",
                        a.agent_id, s.x, s.y
                    )));
                }
            }
        }
        Ok(())
    }
}
