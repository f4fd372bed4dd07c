//! Synthetic scenario generators: a four-way unsignalized intersection and a
//! multi-lane stop-and-go road. Expert and agent tracks come from a
//! car-following rule plus pure-pursuit steering integrated with
//! [`kinematics::step`](crate::kinematics::step).

use super::drivable::drivable_area;
use super::types::{AgentKind, AgentTrack, MapKind, MapPolyline, Scenario};
use crate::error::{Error, Result};
use crate::geometry::{Obb, Vec2};
use crate::kinematics::{normalize_angle, step, Control, EgoState, VehicleLimits, DEFAULT_DT};
use crate::path::ArcPath;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

const EGO_ID: u32 = 0;
const EGO_SIZE: (f64, f64) = (4.5, 1.8);
const LANE_SPACING: f64 = 10.0;
/// The goal is the expert position this long before the scenario ends.
const GOAL_LEAD_TIME: f64 = 4.0;
const MAX_ATTEMPTS: usize = 40;
/// Lateral acceleration used to cap speed in curves (m/s²).
const LATERAL_ACCEL: f64 = 2.5;
/// Stationary time that would make an expert terminally stuck.
const STUCK_TIME: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Lanes per direction.
    pub lanes: usize,
    /// Crossing agents (intersection) or vehicles in adjacent lanes (jam).
    pub agents: usize,
    /// Platoon vehicles ahead of the ego (jam only).
    pub lead_vehicles: usize,
    pub duration: f64,
    pub dt: f64,
    pub lane_width: f64,
    /// Distance from the intersection center to the end of each arm.
    pub arm_length: f64,
    /// Fillet radius of the curb at each intersection corner.
    pub corner_radius: f64,
    /// Length of the straight road (jam only).
    pub road_length: f64,
    /// Speed limit written on lane centers.
    pub speed_limit: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            lanes: 1,
            agents: 4,
            lead_vehicles: 2,
            duration: 20.0,
            dt: DEFAULT_DT,
            lane_width: 3.5,
            arm_length: 150.0,
            corner_radius: 8.0,
            road_length: 300.0,
            speed_limit: 10.0,
        }
    }
}

impl ScenarioConfig {
    /// Defaults for the traffic-jam generator (two lanes).
    pub fn jam() -> Self {
        ScenarioConfig {
            lanes: 2,
            ..ScenarioConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lanes == 0 {
            return Err(Error::Config("lanes must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.duration > GOAL_LEAD_TIME + 1.0) {
            return Err(Error::Config(format!(
                "need dt > 0 and duration > {} s (got dt={}, duration={})",
                GOAL_LEAD_TIME + 1.0,
                self.dt,
                self.duration
            )));
        }
        if !(self.lane_width >= 2.5 && self.speed_limit > 0.0) {
            return Err(Error::Config(
                "lane_width must be >= 2.5 m and speed_limit > 0".into(),
            ));
        }
        Ok(())
    }

    fn validate_intersection(&self) -> Result<()> {
        self.validate()?;
        if !(self.corner_radius > 0.5) {
            return Err(Error::Geometry(format!(
                "corner radius {} m is too small to close the boundary",
                self.corner_radius
            )));
        }
        let inner = self.lanes as f64 * self.lane_width + self.corner_radius;
        if self.arm_length < inner + 60.0 {
            return Err(Error::Geometry(format!(
                "arm length {} m cannot close the boundary around an {inner:.1} m junction \
                 (needs at least {:.1} m)",
                self.arm_length,
                inner + 60.0
            )));
        }
        Ok(())
    }

    fn validate_jam(&self) -> Result<()> {
        self.validate()?;
        if self.lead_vehicles == 0 {
            return Err(Error::Config("traffic jam needs at least one lead vehicle".into()));
        }
        if self.road_length < 150.0 {
            return Err(Error::Config(format!(
                "road_length {} m is too short (min 150)",
                self.road_length
            )));
        }
        Ok(())
    }
}

/// Which generator builds each member of a suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    Intersection,
    Jam,
    /// Even indices are intersections, odd indices are jams.
    Mixed,
}

impl std::str::FromStr for SuiteKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intersection" => Ok(SuiteKind::Intersection),
            "jam" => Ok(SuiteKind::Jam),
            "mixed" => Ok(SuiteKind::Mixed),
            _ => Err(Error::Config(format!(
                "unknown suite `{s}` (expected intersection, jam or mixed)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub intersection: ScenarioConfig,
    #[serde(default = "ScenarioConfig::jam")]
    pub jam: ScenarioConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            intersection: ScenarioConfig::default(),
            jam: ScenarioConfig::jam(),
        }
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of the `index`-th suite member: the `index`-th output of a splitmix64
/// stream whose state starts at `suite_seed`, i.e.
/// `mix(suite_seed + (index + 1) * 0x9E3779B97F4A7C15)`.
pub fn derive_seed(suite_seed: u64, index: usize) -> u64 {
    splitmix64(suite_seed.wrapping_add((index as u64 + 1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Kind of the suite member at `index`.
pub fn member_kind(kind: SuiteKind, index: usize) -> SuiteKind {
    match kind {
        SuiteKind::Mixed if index % 2 == 0 => SuiteKind::Intersection,
        SuiteKind::Mixed => SuiteKind::Jam,
        k => k,
    }
}

/// Generates `count` scenarios with derived per-member seeds.
pub fn generate_suite(
    kind: SuiteKind,
    count: usize,
    seed: u64,
    cfg: &SuiteConfig,
) -> Result<Vec<Scenario>> {
    (0..count).map(|i| generate_member(kind, i, seed, cfg)).collect()
}

pub fn generate_member(kind: SuiteKind, index: usize, seed: u64, cfg: &SuiteConfig) -> Result<Scenario> {
    let s = derive_seed(seed, index);
    let (mut sc, name) = match member_kind(kind, index) {
        SuiteKind::Jam => (generate_trafficjam(s, &cfg.jam)?, "jam"),
        _ => (generate_intersection(s, &cfg.intersection)?, "intersection"),
    };
    sc.id = format!("{index:04}_{name}");
    Ok(sc)
}

// ---------------------------------------------------------------------------
// Driver model

#[derive(Clone, Copy, Debug)]
struct Idm {
    accel: f64,
    decel: f64,
    headway: f64,
    min_gap: f64,
}

const IDM: Idm = Idm {
    accel: 1.5,
    decel: 2.0,
    headway: 1.5,
    min_gap: 2.0,
};

impl Idm {
    /// `lead` is (bumper gap, closing speed).
    fn accel(&self, v: f64, v0: f64, lead: Option<(f64, f64)>) -> f64 {
        let free = 1.0 - (v / v0.max(0.1)).powi(4);
        let interact = lead.map_or(0.0, |(gap, dv)| {
            let s_star = self.min_gap
                + (v * self.headway + v * dv / (2.0 * (self.accel * self.decel).sqrt())).max(0.0);
            (s_star / gap.max(0.05)).powi(2)
        });
        self.accel * (free - interact)
    }
}

fn curve_speed(path: &ArcPath, s: f64, v_des: f64) -> f64 {
    let k = path.max_curvature(s, s + 12.0 + 1.5 * v_des);
    if k > 1e-6 {
        v_des.min((LATERAL_ACCEL / k).sqrt())
    } else {
        v_des
    }
}

fn pursuit(path: &ArcPath, state: &EgoState, s: f64, limits: &VehicleLimits) -> f64 {
    let look = (3.0 + 0.6 * state.speed).clamp(3.0, 12.0);
    let target = path.point_at(s + look);
    let d = target - state.position();
    let alpha = normalize_angle(d.angle() - state.heading);
    let curvature = 2.0 * alpha.sin() / d.norm().max(1e-6);
    (state.speed * curvature).clamp(-limits.omega_max, limits.omega_max)
}

fn start_on(path: &ArcPath, s: f64, v: f64) -> EgoState {
    let p = path.point_at(s);
    EgoState::new(p.x, p.y, path.heading_at(s), v)
}

/// Follows `path` for `ticks` steps with longitudinal control from `long`
/// (called with tick, state and arc length). Returns states and arc lengths,
/// both of length `ticks + 1`.
fn follow(
    path: &ArcPath,
    start: EgoState,
    ticks: usize,
    dt: f64,
    limits: &VehicleLimits,
    mut long: impl FnMut(usize, &EgoState, f64) -> f64,
) -> (Vec<EgoState>, Vec<f64>) {
    let mut states = Vec::with_capacity(ticks + 1);
    let mut arc = Vec::with_capacity(ticks + 1);
    let mut st = start;
    let mut s = path.project(st.position()).0;
    states.push(st);
    arc.push(s);
    for k in 0..ticks {
        let a = long(k, &st, s);
        let w = pursuit(path, &st, s, limits);
        st = step(&st, Control::new(a, w).clamped(limits), dt, limits);
        s = path.project(st.position()).0;
        states.push(st);
        arc.push(s);
    }
    (states, arc)
}

fn obb(s: &EgoState, (l, w): (f64, f64)) -> Obb {
    Obb::new(s.position(), s.heading, l, w)
}

/// Whether a box of size `size` following `states` (from tick 0) stays at
/// least `margin` clear of `track` at every shared tick.
fn clear_of(states: &[EgoState], size: (f64, f64), track: &AgentTrack, dt: f64, margin: f64) -> bool {
    let grown = (size.0 + 2.0 * margin, size.1 + 2.0 * margin);
    let start = track.start_tick(dt);
    track.states.iter().enumerate().all(|(i, p)| {
        let tick = start + i;
        states
            .get(tick)
            .map_or(true, |s| !obb(s, grown).overlaps(&track.footprint_at(&p.state)))
    })
}

fn terminally_stuck(states: &[EgoState], dt: f64) -> bool {
    let run = states.iter().rev().take_while(|s| s.speed < 0.1).count();
    run as f64 * dt > STUCK_TIME
}

// ---------------------------------------------------------------------------
// Intersection

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Maneuver {
    Straight,
    Left,
    Right,
}

struct Junction {
    lanes: usize,
    lane_width: f64,
    /// Half-width of the paved arm.
    half: f64,
    /// Distance from the center where the fillets end.
    inner: f64,
    arm: f64,
}

struct Route {
    path: ArcPath,
    /// Arc length where the junction starts and ends.
    entry: f64,
    exit: f64,
}

fn arm_dir(d: usize) -> Vec2 {
    Vec2::from_angle(d as f64 * FRAC_PI_2)
}

fn arc_points(center: Vec2, from: Vec2, to: Vec2, segments: usize) -> Vec<Vec2> {
    let a0 = (from - center).angle();
    let sweep = normalize_angle((to - center).angle() - a0);
    let r = from.distance(center);
    (0..=segments)
        .map(|i| {
            if i == 0 {
                from
            } else if i == segments {
                to
            } else {
                center + Vec2::from_angle(a0 + sweep * i as f64 / segments as f64) * r
            }
        })
        .collect()
}

impl Junction {
    fn new(cfg: &ScenarioConfig) -> Self {
        let half = cfg.lanes as f64 * cfg.lane_width;
        Junction {
            lanes: cfg.lanes,
            lane_width: cfg.lane_width,
            half,
            inner: half + cfg.corner_radius,
            arm: cfg.arm_length,
        }
    }

    fn offset(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    fn radial(&self, d: usize, lane_offset: f64, from: f64, to: f64) -> Vec<Vec2> {
        let (u, n) = (arm_dir(d), arm_dir(d).perp());
        let count = ((from - to).abs() / LANE_SPACING).ceil().max(1.0) as usize;
        (0..=count)
            .map(|i| {
                let r = from + (to - from) * i as f64 / count as f64;
                u * r + n * lane_offset
            })
            .collect()
    }

    /// Inbound lane on arm `d`, from the arm end to the junction.
    fn inbound(&self, d: usize, lane: usize) -> Vec<Vec2> {
        self.radial(d, self.offset(lane), self.arm, self.inner)
    }

    fn outbound(&self, d: usize, lane: usize) -> Vec<Vec2> {
        self.radial(d, -self.offset(lane), self.inner, self.arm)
    }

    fn exit_arm(d: usize, m: Maneuver) -> usize {
        match m {
            Maneuver::Straight => (d + 2) % 4,
            Maneuver::Right => (d + 1) % 4,
            Maneuver::Left => (d + 3) % 4,
        }
    }

    fn connector(&self, d: usize, m: Maneuver, lane: usize) -> Vec<Vec2> {
        let e = Self::exit_arm(d, m);
        let o = self.offset(lane);
        let from = arm_dir(d) * self.inner + arm_dir(d).perp() * o;
        let to = arm_dir(e) * self.inner - arm_dir(e).perp() * o;
        match m {
            Maneuver::Straight => vec![from, to],
            _ => arc_points(arm_dir(d) * self.inner + arm_dir(e) * self.inner, from, to, 6),
        }
    }

    fn lane_for(&self, m: Maneuver, rng: &mut ChaCha8Rng) -> usize {
        match m {
            Maneuver::Straight => rng.gen_range(0..self.lanes),
            Maneuver::Left => 0,
            Maneuver::Right => self.lanes - 1,
        }
    }

    fn route(&self, d: usize, m: Maneuver, lane: usize) -> Route {
        let inb = self.inbound(d, lane);
        let conn = self.connector(d, m, lane);
        let out = self.outbound(Self::exit_arm(d, m), lane);
        let entry = self.arm - self.inner;
        let conn_len: f64 = conn.windows(2).map(|w| w[0].distance(w[1])).sum();
        let mut pts = inb;
        pts.extend_from_slice(&conn[1..]);
        pts.extend_from_slice(&out[1..]);
        Route {
            path: ArcPath::new(pts),
            entry,
            exit: entry + conn_len,
        }
    }

    fn map(&self, speed_limit: f64) -> Vec<MapPolyline> {
        let mut map = Vec::new();
        let mut lane_id = 100;
        let mut lane = |points: Vec<Vec2>, map: &mut Vec<MapPolyline>| {
            map.push(MapPolyline {
                id: lane_id,
                kind: MapKind::LaneCenter,
                points,
                speed_limit: Some(speed_limit),
            });
            lane_id += 1;
        };
        for d in 0..4 {
            for j in 0..self.lanes {
                lane(self.inbound(d, j), &mut map);
                lane(self.outbound(d, j), &mut map);
                lane(self.connector(d, Maneuver::Straight, j), &mut map);
            }
            lane(self.connector(d, Maneuver::Left, 0), &mut map);
            lane(self.connector(d, Maneuver::Right, self.lanes - 1), &mut map);
        }
        let mut bid = 200;
        for d in 0..4 {
            let e = (d + 1) % 4;
            let (ud, nd, ue, ne) = (arm_dir(d), arm_dir(d).perp(), arm_dir(e), arm_dir(e).perp());
            let fillet_from = ud * self.inner + nd * self.half;
            let fillet_to = ue * self.inner - ne * self.half;
            let mut pts = vec![ud * self.arm + nd * self.half];
            pts.extend(arc_points(ud * self.inner + ue * self.inner, fillet_from, fillet_to, 8));
            pts.push(ue * self.arm - ne * self.half);
            map.push(MapPolyline {
                id: bid,
                kind: MapKind::RoadBoundary,
                points: pts,
                speed_limit: None,
            });
            // end cap of arm e
            map.push(MapPolyline {
                id: bid + 1,
                kind: MapKind::RoadBoundary,
                points: vec![ue * self.arm - ne * self.half, ue * self.arm + ne * self.half],
                speed_limit: None,
            });
            bid += 2;
        }
        for d in 0..4 {
            let (u, n) = (arm_dir(d), arm_dir(d).perp());
            let r = self.inner + 2.0;
            map.push(MapPolyline {
                id: 300 + d as u32,
                kind: MapKind::Crosswalk,
                points: vec![u * r - n * self.half, u * r + n * self.half],
                speed_limit: None,
            });
        }
        map
    }
}

fn pick_maneuver(rng: &mut ChaCha8Rng) -> Maneuver {
    match rng.gen_range(0..4) {
        0 => Maneuver::Left,
        1 => Maneuver::Right,
        _ => Maneuver::Straight,
    }
}

/// Simulates a free-flowing vehicle on `route` entering at `start_tick`.
fn drive_free(
    route: &Route,
    s0: f64,
    v: f64,
    start_tick: usize,
    ticks: usize,
    dt: f64,
    size: (f64, f64),
    limits: &VehicleLimits,
) -> Vec<EgoState> {
    let path = &route.path;
    let (states, arc) = follow(path, start_on(path, s0, v), ticks - start_tick, dt, limits, |_, st, s| {
        IDM.accel(st.speed, curve_speed(path, s, v), None)
    });
    let end = path.length() - 0.5 * size.0;
    let keep = arc.iter().position(|&s| s >= end).unwrap_or(arc.len());
    states[..keep.max(1)].to_vec()
}

pub fn generate_intersection(seed: u64, cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate_intersection()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let junction = Junction::new(cfg);
    let map = junction.map(cfg.speed_limit);
    let limits = VehicleLimits::default();
    let dt = cfg.dt;
    let ticks = (cfg.duration / dt).round() as usize;
    let goal_tick = ((cfg.duration - GOAL_LEAD_TIME) / dt).round() as usize;
    let probe = Scenario {
        id: String::new(),
        map: map.clone(),
        agents: vec![],
        ego_track: AgentTrack::from_states(EGO_ID, AgentKind::Vehicle, EGO_SIZE, 0, dt, &[EgoState::default()]),
        goal: Vec2::ZERO,
        duration: cfg.duration,
        dt,
    };
    let area = drivable_area(&probe)?;

    for _ in 0..MAX_ATTEMPTS {
        let d_ego = rng.gen_range(0..4);
        let m_ego = pick_maneuver(&mut rng);
        let lane = junction.lane_for(m_ego, &mut rng);
        let route = junction.route(d_ego, m_ego, lane);
        let v_ego = rng.gen_range(6.0..8.0);
        let s0 = route.entry - rng.gen_range(20.0..32.0);
        let v_des = cfg.speed_limit.min(8.0);

        // free-flow arrival time at the junction
        let (_, free_arc) = follow(&route.path, start_on(&route.path, s0, v_ego), ticks, dt, &limits, |_, st, s| {
            IDM.accel(st.speed, curve_speed(&route.path, s, v_des), None)
        });
        let t_arrive = free_arc
            .iter()
            .position(|&s| s + 0.5 * EGO_SIZE.0 >= route.entry)
            .unwrap_or(ticks) as f64
            * dt;

        let mut agents: Vec<AgentTrack> = Vec::new();
        for a in 0..cfg.agents {
            for _ in 0..20 {
                let (d, m) = if a == 0 {
                    ((d_ego + if rng.gen_bool(0.5) { 1 } else { 3 }) % 4, Maneuver::Straight)
                } else {
                    ((d_ego + rng.gen_range(1..4)) % 4, pick_maneuver(&mut rng))
                };
                let lane = junction.lane_for(m, &mut rng);
                let r = junction.route(d, m, lane);
                let v = rng.gen_range(6.0..9.0);
                let size = (rng.gen_range(4.2..4.8), 1.8);
                let t_entry = t_arrive + rng.gen_range(-2.5..3.0);
                let mut s_start = r.entry - v * t_entry;
                let mut start_tick = 0;
                let min_s = 0.5 * size.0;
                if s_start < min_s {
                    start_tick = ((min_s - s_start) / v / dt).round() as usize;
                    s_start = min_s;
                }
                if start_tick + 10 >= ticks {
                    continue;
                }
                let states = drive_free(&r, s_start, v, start_tick, ticks, dt, size, &limits);
                let track = AgentTrack::from_states(
                    a as u32 + 1,
                    AgentKind::Vehicle,
                    size,
                    start_tick,
                    dt,
                    &states,
                );
                let clash = agents.iter().any(|o| {
                    track.states.iter().enumerate().any(|(i, p)| {
                        o.obb_at_tick(start_tick + i, dt).is_some_and(|b| {
                            let grown = Obb::new(p.state.position(), p.state.heading, size.0 + 1.0, size.1 + 1.0);
                            grown.overlaps(&b)
                        })
                    })
                });
                if !clash {
                    agents.push(track);
                    break;
                }
            }
        }

        // expert: wait at the stop line until a release tick, then go
        let stop_s = route.entry - 0.5 * EGO_SIZE.0 - 0.5;
        let release_options = std::iter::once(0usize)
            .chain((1..).map(|k| (k as f64 * 0.5 / dt).round() as usize))
            .take_while(|&t| t < goal_tick);
        for release in release_options {
            let (states, arc) = follow(&route.path, start_on(&route.path, s0, v_ego), ticks, dt, &limits, |k, st, s| {
                let v0 = curve_speed(&route.path, s, v_des);
                let lead = (k < release && s < stop_s + 0.5).then(|| (stop_s - s, st.speed));
                IDM.accel(st.speed, v0, lead)
            });
            if arc[goal_tick] < route.exit + 5.0 || arc[ticks] > route.path.length() - 5.0 {
                continue;
            }
            if !agents.iter().all(|a| clear_of(&states, EGO_SIZE, a, dt, 0.75)) {
                continue;
            }
            if !states.iter().all(|s| obb(s, EGO_SIZE).corners().iter().all(|&c| area.contains(c))) {
                continue;
            }
            if terminally_stuck(&states, dt) {
                continue;
            }
            let ego_track = AgentTrack::from_states(EGO_ID, AgentKind::Vehicle, EGO_SIZE, 0, dt, &states);
            let scenario = Scenario {
                id: format!("intersection_{seed:016x}"),
                map,
                agents,
                goal: states[goal_tick].position(),
                ego_track,
                duration: cfg.duration,
                dt,
            };
            scenario.validate()?;
            return Ok(scenario);
        }
    }
    Err(Error::Config(format!(
        "could not generate a conflict-free intersection scenario for seed {seed} \
         with {} agents after {MAX_ATTEMPTS} attempts",
        cfg.agents
    )))
}

// ---------------------------------------------------------------------------
// Traffic jam

const ROAD_START: f64 = -40.0;

/// Stop-and-go profile of a platoon leader: cruise, brake to a full stop,
/// hold, then accelerate back to cruise speed.
#[derive(Clone, Copy, Debug)]
struct StopAndGo {
    cruise: f64,
    brake_at: f64,
    decel: f64,
    hold: f64,
}

impl StopAndGo {
    fn sample(rng: &mut ChaCha8Rng, latest_restart: f64) -> Self {
        let cruise = rng.gen_range(6.0..9.0);
        let brake_at = rng.gen_range(1.5..3.0);
        let decel = rng.gen_range(2.0..3.0);
        let max_hold = (latest_restart - brake_at - cruise / decel).min(STUCK_TIME + 2.5);
        let hold = rng.gen_range(STUCK_TIME + 1.0..max_hold.max(STUCK_TIME + 1.0 + 1e-9));
        StopAndGo {
            cruise,
            brake_at,
            decel,
            hold,
        }
    }

    fn accel(&self, t: f64, v: f64) -> f64 {
        let stop_at = self.brake_at + self.cruise / self.decel;
        if t < self.brake_at {
            0.0
        } else if v > 1e-9 && t < stop_at + 0.5 {
            -self.decel
        } else if t < stop_at + self.hold {
            if v > 1e-9 {
                -self.decel
            } else {
                0.0
            }
        } else if v < self.cruise {
            1.5f64.min((self.cruise - v) / DEFAULT_DT)
        } else {
            0.0
        }
    }
}

struct Lane {
    path: ArcPath,
}

impl Lane {
    fn new(y: f64, end: f64) -> Self {
        let count = ((end - ROAD_START) / LANE_SPACING).ceil() as usize;
        let pts = (0..=count)
            .map(|i| Vec2::new(ROAD_START + (end - ROAD_START) * i as f64 / count as f64, y))
            .collect();
        Lane { path: ArcPath::new(pts) }
    }
}

/// Simulates a platoon: the front vehicle follows `profile`, everyone behind
/// uses car-following. `positions` are arc lengths, front first.
fn platoon(
    lane: &Lane,
    profile: &StopAndGo,
    positions: &[f64],
    sizes: &[(f64, f64)],
    ticks: usize,
    dt: f64,
    limits: &VehicleLimits,
) -> Vec<Vec<EgoState>> {
    let mut out: Vec<Vec<EgoState>> = Vec::with_capacity(positions.len());
    let mut lead_arc: Vec<f64> = Vec::new();
    for (i, &s0) in positions.iter().enumerate() {
        let start = start_on(&lane.path, s0, profile.cruise);
        let (states, arc) = if i == 0 {
            follow(&lane.path, start, ticks, dt, limits, |k, st, _| profile.accel(k as f64 * dt, st.speed))
        } else {
            let lead = &out[i - 1];
            let lead_len = sizes[i - 1].0;
            let len = sizes[i].0;
            let la = lead_arc.clone();
            follow(&lane.path, start, ticks, dt, limits, |k, st, s| {
                let gap = la[k] - s - 0.5 * (lead_len + len);
                IDM.accel(st.speed, profile.cruise + 1.0, Some((gap, st.speed - lead[k].speed)))
            })
        };
        out.push(states);
        lead_arc = arc;
    }
    out
}

fn truncate_at_end(states: &[EgoState], end_x: f64, length: f64) -> Vec<EgoState> {
    let keep = states
        .iter()
        .position(|s| s.x + 0.5 * length >= end_x)
        .unwrap_or(states.len());
    states[..keep.max(1)].to_vec()
}

pub fn generate_trafficjam(seed: u64, cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate_jam()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limits = VehicleLimits::default();
    let dt = cfg.dt;
    let ticks = (cfg.duration / dt).round() as usize;
    let goal_tick = ((cfg.duration - GOAL_LEAD_TIME) / dt).round() as usize;
    let w = cfg.lane_width;
    let road_end = cfg.road_length;
    let width = cfg.lanes as f64 * w;
    let lanes: Vec<Lane> = (0..cfg.lanes).map(|j| Lane::new((j as f64 + 0.5) * w, road_end)).collect();

    let mut map: Vec<MapPolyline> = lanes
        .iter()
        .enumerate()
        .map(|(j, l)| MapPolyline {
            id: 100 + j as u32,
            kind: MapKind::LaneCenter,
            points: l.path.points().to_vec(),
            speed_limit: Some(cfg.speed_limit),
        })
        .collect();
    let corners = [
        Vec2::new(ROAD_START, 0.0),
        Vec2::new(road_end, 0.0),
        Vec2::new(road_end, width),
        Vec2::new(ROAD_START, width),
    ];
    for i in 0..4 {
        map.push(MapPolyline {
            id: 200 + i as u32,
            kind: MapKind::RoadBoundary,
            points: vec![corners[i], corners[(i + 1) % 4]],
            speed_limit: None,
        });
    }
    // lane dividers are not boundaries; the whole road is drivable
    let latest_restart = cfg.duration - GOAL_LEAD_TIME - 2.0;

    for _ in 0..MAX_ATTEMPTS {
        let ego_lane = rng.gen_range(0..cfg.lanes);
        let profile = StopAndGo::sample(&mut rng, latest_restart);
        let ego_s = -ROAD_START;
        let mut sizes = Vec::new();
        for _ in 0..cfg.lead_vehicles {
            sizes.push((rng.gen_range(4.2..4.8), 1.8));
        }
        sizes.push(EGO_SIZE);
        // place the platoon ahead of the ego, back to front
        let mut positions = vec![0.0; sizes.len()];
        positions[sizes.len() - 1] = ego_s;
        for i in (0..sizes.len() - 1).rev() {
            let gap = IDM.min_gap + profile.cruise * IDM.headway * rng.gen_range(0.9..1.3);
            positions[i] = positions[i + 1] + gap + 0.5 * (sizes[i].0 + sizes[i + 1].0);
        }
        let tracks = platoon(&lanes[ego_lane], &profile, &positions, &sizes, ticks, dt, &limits);
        let expert = tracks[tracks.len() - 1].clone();

        let mut agents = Vec::new();
        let mut next_id = 1u32;
        for (i, st) in tracks[..tracks.len() - 1].iter().enumerate() {
            let states = truncate_at_end(st, road_end, sizes[i].0);
            agents.push(AgentTrack::from_states(next_id, AgentKind::Vehicle, sizes[i], 0, dt, &states));
            next_id += 1;
        }
        let others: Vec<usize> = (0..cfg.lanes).filter(|&j| j != ego_lane).collect();
        if !others.is_empty() {
            let mut per_lane = vec![0usize; others.len()];
            for a in 0..cfg.agents {
                per_lane[a % others.len()] += 1;
            }
            for (&lane, &n) in others.iter().zip(&per_lane) {
                if n == 0 {
                    continue;
                }
                let prof = StopAndGo::sample(&mut rng, latest_restart);
                let sz: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(4.2..4.8), 1.8)).collect();
                let mut pos = vec![ego_s + rng.gen_range(-15.0..60.0)];
                for i in 1..n {
                    let gap = IDM.min_gap + prof.cruise * IDM.headway * rng.gen_range(0.9..1.4);
                    pos.push(pos[i - 1] - gap - 0.5 * (sz[i - 1].0 + sz[i].0));
                }
                // keep everyone on the road
                let back = pos[n - 1] - 0.5 * sz[n - 1].0;
                if back < 1.0 {
                    let shift = 1.0 - back;
                    pos.iter_mut().for_each(|p| *p += shift);
                }
                for (i, st) in platoon(&lanes[lane], &prof, &pos, &sz, ticks, dt, &limits).iter().enumerate() {
                    let states = truncate_at_end(st, road_end, sz[i].0);
                    agents.push(AgentTrack::from_states(next_id, AgentKind::Vehicle, sz[i], 0, dt, &states));
                    next_id += 1;
                }
            }
        }

        if expert[ticks].x + 0.5 * EGO_SIZE.0 > road_end - 10.0 {
            continue;
        }
        if !agents.iter().all(|a| clear_of(&expert, EGO_SIZE, a, dt, 0.2)) {
            continue;
        }
        if terminally_stuck(&expert, dt) {
            continue;
        }
        let ego_track = AgentTrack::from_states(EGO_ID, AgentKind::Vehicle, EGO_SIZE, 0, dt, &expert);
        let scenario = Scenario {
            id: format!("jam_{seed:016x}"),
            map,
            agents,
            goal: expert[goal_tick].position(),
            ego_track,
            duration: cfg.duration,
            dt,
        };
        scenario.validate()?;
        return Ok(scenario);
    }
    Err(Error::Config(format!(
        "could not generate a collision-free traffic jam for seed {seed}"
    )))
}
