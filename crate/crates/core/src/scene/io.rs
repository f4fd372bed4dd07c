//! Scenario files (JSON) and inD-style CSV track ingestion.

use super::types::{AgentKind, AgentTrack, MapPolyline, Scenario, TrackPoint};
use crate::error::{Error, Result};
use crate::kinematics::{normalize_angle, EgoState};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

/// Parses and validates a scenario from JSON text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut de = serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            field,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|e| Error::Parse {
        field: ".".into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut s = parse_scenario(&text)?;
    if s.id.is_empty() {
        s.id = path
            .file_stem()
            .map(|x| x.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(s)
}

pub fn scenario_to_json(s: &Scenario) -> String {
    let mut out = serde_json::to_string(s).expect("scenario serialization is infallible");
    out.push('\n');
    out
}

pub fn save_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scenario_to_json(s)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CsvRow {
    track_id: u32,
    frame: i64,
    x_center: f64,
    y_center: f64,
    /// degrees
    heading: f64,
    x_velocity: f64,
    y_velocity: f64,
    width: f64,
    length: f64,
    #[serde(default)]
    class: Option<String>,
}

fn agent_kind(class: Option<&str>) -> AgentKind {
    match class.map(str::to_ascii_lowercase).as_deref() {
        Some("bicycle") | Some("cyclist") => AgentKind::Cyclist,
        Some("pedestrian") => AgentKind::Pedestrian,
        _ => AgentKind::Vehicle,
    }
}

/// Reads inD-style rows (`trackId, frame, xCenter, yCenter, heading,
/// xVelocity, yVelocity, width, length`, optional `class`) recorded at
/// `frame_rate` Hz and resamples every track onto the `dt` grid.
pub fn ingest_tracks_csv<R: Read>(reader: R, frame_rate: f64, dt: f64) -> Result<Vec<AgentTrack>> {
    if !(frame_rate > 0.0 && dt > 0.0) {
        return Err(Error::Config("frame rate and dt must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut by_track: BTreeMap<u32, Vec<CsvRow>> = BTreeMap::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        by_track.entry(row.track_id).or_default().push(row);
    }
    let mut tracks = Vec::with_capacity(by_track.len());
    for (id, mut rows) in by_track {
        rows.sort_by_key(|r| r.frame);
        for (i, w) in rows.windows(2).enumerate() {
            if w[1].frame - w[0].frame != 1 {
                return Err(Error::Validation(format!(
                    "agent track {id}: non-uniform time step between frames {} and {} (row {}); \
                     timestamps must be strictly increasing with uniform step",
                    w[0].frame,
                    w[1].frame,
                    i + 1
                )));
            }
        }
        let raw: Vec<(f64, EgoState)> = rows
            .iter()
            .map(|r| {
                (
                    r.frame as f64 / frame_rate,
                    EgoState::new(
                        r.x_center,
                        r.y_center,
                        r.heading.to_radians(),
                        r.x_velocity.hypot(r.y_velocity),
                    ),
                )
            })
            .collect();
        let (t_first, t_last) = (raw[0].0, raw[raw.len() - 1].0);
        let first_tick = (t_first / dt - 1e-9).ceil().max(0.0) as usize;
        let last_tick = (t_last / dt + 1e-9).floor() as usize;
        if last_tick < first_tick {
            continue;
        }
        let mut states = Vec::with_capacity(last_tick - first_tick + 1);
        let mut j = 0;
        for tick in first_tick..=last_tick {
            let t = tick as f64 * dt;
            while j + 1 < raw.len() - 1 && raw[j + 1].0 <= t {
                j += 1;
            }
            let (ta, a) = raw[j];
            let (tb, b) = if raw.len() > 1 { raw[j + 1] } else { raw[j] };
            let u = if tb > ta { ((t - ta) / (tb - ta)).clamp(0.0, 1.0) } else { 0.0 };
            let dh = normalize_angle(b.heading - a.heading);
            states.push(EgoState::new(
                a.x + (b.x - a.x) * u,
                a.y + (b.y - a.y) * u,
                a.heading + dh * u,
                a.speed + (b.speed - a.speed) * u,
            ));
        }
        let track = AgentTrack::from_states(
            id,
            agent_kind(rows[0].class.as_deref()),
            (rows[0].length, rows[0].width),
            first_tick,
            dt,
            &states,
        );
        track.validate(dt)?;
        tracks.push(track);
    }
    Ok(tracks)
}

/// Builds a scenario around the track `ego_id`: time is shifted so the ego
/// starts at 0, the goal is the ego's final position, and other tracks are
/// cropped to the ego's time window.
pub fn assemble_scenario(
    id: impl Into<String>,
    map: Vec<MapPolyline>,
    tracks: Vec<AgentTrack>,
    ego_id: u32,
    dt: f64,
) -> Result<Scenario> {
    let ego = tracks
        .iter()
        .find(|t| t.agent_id == ego_id)
        .cloned()
        .ok_or_else(|| Error::Validation(format!("ego track {ego_id} not present in CSV")))?;
    let t0 = ego.start_tick(dt);
    let t1 = ego.end_tick(dt);
    let shift = |track: &AgentTrack| -> Option<AgentTrack> {
        let pts: Vec<TrackPoint> = track
            .states
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let tick = track.start_tick(dt) + i;
                (tick >= t0 && tick <= t1).then(|| TrackPoint {
                    t: (tick - t0) as f64 * dt,
                    state: p.state,
                })
            })
            .collect();
        (!pts.is_empty()).then(|| AgentTrack {
            states: pts,
            ..track.clone()
        })
    };
    let ego_track = shift(&ego).expect("ego overlaps its own window");
    let agents = tracks
        .iter()
        .filter(|t| t.agent_id != ego_id)
        .filter_map(shift)
        .collect();
    let goal = ego_track.states[ego_track.states.len() - 1].state.position();
    let scenario = Scenario {
        id: id.into(),
        map,
        agents,
        duration: (t1 - t0) as f64 * dt,
        ego_track,
        goal,
        dt,
    };
    scenario.validate()?;
    Ok(scenario)
}
