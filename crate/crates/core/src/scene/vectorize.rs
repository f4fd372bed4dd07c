use super::types::{AgentTrack, Scenario};
use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Frame, Vec2};
use crate::kinematics::EgoState;
use serde::{Deserialize, Serialize};

/// Width of the per-vector attribute block.
pub const ATTR_WIDTH: usize = 11;

/// Attribute slots within a vector row.
pub mod attr {
    pub const KIND: usize = 0;
    pub const SPEED: usize = 3;
    pub const HEADING_COS: usize = 4;
    pub const HEADING_SIN: usize = 5;
    pub const LENGTH: usize = 6;
    pub const WIDTH: usize = 7;
    pub const SPEED_LIMIT: usize = 8;
    pub const LOCAL_INDEX: usize = 9;
    /// Seconds relative to the vectorization time (≤ 0).
    pub const TIME: usize = 10;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineRole {
    Ego,
    Agent,
    Map,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorRow {
    pub start: Vec2,
    pub end: Vec2,
    pub attrs: [f64; ATTR_WIDTH],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub id: u32,
    pub role: PolylineRole,
    pub vectors: Vec<VectorRow>,
}

/// A scene in the ego frame at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct PolylineSet {
    pub polylines: Vec<Polyline>,
    /// Goal position in the ego frame.
    pub goal: Vec2,
}

impl PolylineSet {
    pub fn ego_index(&self) -> Option<usize> {
        self.polylines.iter().position(|p| p.role == PolylineRole::Ego)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VectorizeConfig {
    /// States per agent/ego polyline, including the current one.
    pub history_len: usize,
    /// Map vectors farther than this from the ego are dropped (each map
    /// polyline keeps at least its nearest vector).
    pub map_radius: f64,
}

impl Default for VectorizeConfig {
    fn default() -> Self {
        VectorizeConfig {
            history_len: 10,
            map_radius: 60.0,
        }
    }
}

/// Vectorizes the scenario at `tick` using the logged ego track as history.
pub fn vectorize(scenario: &Scenario, tick: usize, history_len: usize) -> Result<PolylineSet> {
    if tick > scenario.num_ticks() || tick + 1 < history_len || history_len == 0 {
        return Err(Error::Validation(format!(
            "history window of {history_len} states ending at tick {tick} is outside [0, {}]",
            scenario.num_ticks()
        )));
    }
    let history: Vec<EgoState> = (tick + 1 - history_len..=tick)
        .map(|k| {
            scenario.ego_state(k).ok_or_else(|| {
                Error::Validation(format!("ego track has no state at tick {k}"))
            })
        })
        .collect::<Result<_>>()?;
    let cfg = VectorizeConfig {
        history_len,
        ..VectorizeConfig::default()
    };
    vectorize_with_ego(scenario, &history, tick, &cfg)
}

/// Vectorizes with an explicit ego history (oldest first, last = current).
pub fn vectorize_with_ego(
    scenario: &Scenario,
    ego_history: &[EgoState],
    tick: usize,
    cfg: &VectorizeConfig,
) -> Result<PolylineSet> {
    let Some(current) = ego_history.last() else {
        return Err(Error::Empty("ego history"));
    };
    let frame = Frame::new(current.position(), current.heading);
    let dt = scenario.dt;
    let hist = &ego_history[ego_history.len().saturating_sub(cfg.history_len)..];

    let mut polylines = Vec::with_capacity(scenario.map.len() + scenario.agents.len() + 1);
    polylines.push(Polyline {
        id: scenario.ego_track.agent_id,
        role: PolylineRole::Ego,
        vectors: track_vectors(&scenario.ego_track, hist, &frame, dt),
    });
    for agent in &scenario.agents {
        if agent.state_at_tick(tick, dt).is_none() {
            continue;
        }
        let first = (tick + 1).saturating_sub(cfg.history_len);
        let states: Vec<EgoState> = (first..=tick)
            .filter_map(|k| agent.state_at_tick(k, dt))
            .collect();
        polylines.push(Polyline {
            id: agent.agent_id,
            role: PolylineRole::Agent,
            vectors: track_vectors(agent, &states, &frame, dt),
        });
    }
    for m in &scenario.map {
        let local: Vec<Vec2> = m.points.iter().map(|&p| frame.to_local(p)).collect();
        let mut base = [0.0; ATTR_WIDTH];
        base[attr::KIND..attr::KIND + 3].copy_from_slice(&m.kind.one_hot());
        base[attr::SPEED_LIMIT] = m.speed_limit.unwrap_or(0.0);
        let mut vectors = Vec::new();
        let mut nearest = (f64::INFINITY, 0);
        for (i, w) in local.windows(2).enumerate() {
            let d = point_segment_distance(Vec2::ZERO, w[0], w[1]);
            if d < nearest.0 {
                nearest = (d, i);
            }
            if d <= cfg.map_radius {
                vectors.push(map_vector(&base, w[0], w[1], i));
            }
        }
        if vectors.is_empty() {
            let i = nearest.1;
            vectors.push(map_vector(&base, local[i], local[i + 1], i));
        }
        polylines.push(Polyline {
            id: m.id,
            role: PolylineRole::Map,
            vectors,
        });
    }
    Ok(PolylineSet {
        polylines,
        goal: frame.to_local(scenario.goal),
    })
}

fn map_vector(base: &[f64; ATTR_WIDTH], a: Vec2, b: Vec2, index: usize) -> VectorRow {
    let mut attrs = *base;
    attrs[attr::LOCAL_INDEX] = index as f64;
    VectorRow {
        start: a,
        end: b,
        attrs,
    }
}

/// Connected vectors through consecutive states; a lone state becomes one
/// zero-length vector.
fn track_vectors(track: &AgentTrack, states: &[EgoState], frame: &Frame, dt: f64) -> Vec<VectorRow> {
    let row = |a: &EgoState, b: &EgoState, idx: usize, age: usize| {
        let mut attrs = [0.0; ATTR_WIDTH];
        attrs[attr::KIND..attr::KIND + 3].copy_from_slice(&track.kind.one_hot());
        attrs[attr::SPEED] = b.speed;
        let h = frame.heading_to_local(b.heading);
        attrs[attr::HEADING_COS] = h.cos();
        attrs[attr::HEADING_SIN] = h.sin();
        attrs[attr::LENGTH] = track.length;
        attrs[attr::WIDTH] = track.width;
        attrs[attr::LOCAL_INDEX] = idx as f64;
        attrs[attr::TIME] = -(age as f64) * dt;
        VectorRow {
            start: frame.to_local(a.position()),
            end: frame.to_local(b.position()),
            attrs,
        }
    };
    if states.len() < 2 {
        let s = states.last().expect("track has a current state");
        return vec![row(s, s, 0, 0)];
    }
    let n = states.len() - 1;
    states
        .windows(2)
        .enumerate()
        .map(|(i, w)| row(&w[0], &w[1], i, n - 1 - i))
        .collect()
}
