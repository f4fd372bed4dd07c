//! World model: maps, replayed agents, expert ego tracks and goals, plus
//! synthetic generators, file I/O and ego-frame vectorization.

mod drivable;
pub mod generate;
mod io;
mod types;
pub mod vectorize;

pub use drivable::{drivable_area, DrivableArea};
pub use generate::{
    derive_seed, generate_intersection, generate_member, generate_suite, generate_trafficjam,
    member_kind, ScenarioConfig, SuiteConfig, SuiteKind,
};
pub use io::{
    assemble_scenario, ingest_tracks_csv, load_scenario, parse_scenario, save_scenario,
    scenario_to_json,
};
pub use types::{AgentKind, AgentTrack, MapKind, MapPolyline, Scenario, TrackPoint};
pub use vectorize::{
    vectorize, vectorize_with_ego, Polyline, PolylineRole, PolylineSet, VectorRow,
    VectorizeConfig, ATTR_WIDTH,
};
