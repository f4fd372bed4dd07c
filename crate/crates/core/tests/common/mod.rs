//! Hand-built scenes shared by the integration tests.
#![allow(dead_code)]

use conplan::geometry::Vec2;
use conplan::kinematics::EgoState;
use conplan::scene::{AgentKind, AgentTrack, MapKind, MapPolyline, Scenario};

pub const DT: f64 = 0.1;
pub const EGO_ID: u32 = 0;

/// Straight road along +x from `x0` to `x1`, `half_width` to either side of
/// a single lane center at y = 0.
pub fn straight_map(x0: f64, x1: f64, half_width: f64) -> Vec<MapPolyline> {
    let v = |x: f64, y: f64| Vec2::new(x, y);
    vec![
        MapPolyline {
            id: 100,
            kind: MapKind::LaneCenter,
            points: vec![v(x0, 0.0), v(x1, 0.0)],
            speed_limit: Some(10.0),
        },
        MapPolyline {
            id: 101,
            kind: MapKind::RoadBoundary,
            points: vec![v(x0, -half_width), v(x1, -half_width), v(x1, half_width)],
            speed_limit: None,
        },
        MapPolyline {
            id: 102,
            kind: MapKind::RoadBoundary,
            points: vec![v(x1, half_width), v(x0, half_width), v(x0, -half_width)],
            speed_limit: None,
        },
    ]
}

/// States at constant speed along +x starting at `x`.
pub fn cruise(x: f64, y: f64, speed: f64, ticks: usize) -> Vec<EgoState> {
    (0..=ticks)
        .map(|k| EgoState::new(x + speed * k as f64 * DT, y, 0.0, speed))
        .collect()
}

pub fn track(id: u32, states: &[EgoState], start_tick: usize) -> AgentTrack {
    AgentTrack::from_states(id, AgentKind::Vehicle, (4.5, 1.8), start_tick, DT, states)
}

/// Ego cruising at `speed` along the lane center of a 300 m straight road
/// for `duration` seconds, with the given agents.
pub fn straight_scene(speed: f64, duration: f64, agents: Vec<AgentTrack>) -> Scenario {
    let ticks = (duration / DT).round() as usize;
    let ego = cruise(0.0, 0.0, speed, ticks);
    let goal = ego[ego.len() - 1].position();
    Scenario {
        id: "straight".into(),
        map: straight_map(-50.0, 250.0, 5.0),
        agents,
        ego_track: track(EGO_ID, &ego, 0),
        goal,
        duration,
        dt: DT,
    }
}
