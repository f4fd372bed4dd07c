use super::{EpisodeResult, TickRecord};
use crate::encoder::{top_k, AttentionEntry};
use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Vec2};
use crate::labeling::ego_footprint;
use crate::scene::{MapKind, PolylineRole, Scenario};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Circle radius (m) for an attention weight of 1.
pub const CIRCLE_SCALE: f64 = 8.0;
const VIEW_HALF: f64 = 60.0;

/// JSON sidecar entry for one planning tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionFrame {
    pub tick: usize,
    pub time: f64,
    pub weights: Vec<AttentionEntry>,
    pub top2: Vec<AttentionEntry>,
}

fn fmt_points(points: impl IntoIterator<Item = Vec2>) -> String {
    let mut s = String::new();
    for p in points {
        let _ = write!(s, "{:.2},{:.2} ", p.x, p.y);
    }
    s.trim_end().to_string()
}

/// Location used to anchor an attention circle for a polyline.
fn anchor(scenario: &Scenario, e: &AttentionEntry, tick: usize, ego: Vec2) -> Option<Vec2> {
    match e.role {
        PolylineRole::Ego => Some(ego),
        PolylineRole::Agent => scenario
            .agents
            .iter()
            .find(|a| a.agent_id == e.polyline_id)
            .and_then(|a| a.state_at_tick(tick, scenario.dt))
            .map(|s| s.position()),
        PolylineRole::Map => {
            let m = scenario.map.iter().find(|m| m.id == e.polyline_id)?;
            m.points
                .windows(2)
                .map(|w| (point_segment_distance(ego, w[0], w[1]), w))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, w)| {
                    let d = w[1] - w[0];
                    let len = d.norm_sq();
                    let t = if len > 0.0 { ((ego - w[0]).dot(d) / len).clamp(0.0, 1.0) } else { 0.0 };
                    w[0] + d * t
                })
        }
    }
}

/// SVG for one planning tick: map, agents, driven path, plan, and circles on
/// the two highest-attention polylines with radius proportional to weight.
pub fn render_frame(scenario: &Scenario, episode: &EpisodeResult, record: &TickRecord) -> Result<String> {
    let first = episode.ticks.first().map_or(record.tick, |t| t.tick);
    let ego = episode
        .states
        .get(record.tick - first)
        .ok_or_else(|| Error::Validation(format!("episode has no state for tick {}", record.tick)))?;
    let c = ego.position();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.2} {:.2} {:.2} {:.2}" width="600" height="600">"#,
        c.x - VIEW_HALF,
        -c.y - VIEW_HALF,
        2.0 * VIEW_HALF,
        2.0 * VIEW_HALF
    );
    let _ = writeln!(svg, r#"<g transform="scale(1,-1)" fill="none" stroke-width="0.3">"#);
    for m in &scenario.map {
        let color = match m.kind {
            MapKind::LaneCenter => "#9aa5b1",
            MapKind::RoadBoundary => "#222222",
            MapKind::Crosswalk => "#d4a017",
        };
        let _ = writeln!(
            svg,
            r#"<polyline data-id="{}" stroke="{color}" points="{}"/>"#,
            m.id,
            fmt_points(m.points.iter().copied())
        );
    }
    for a in &scenario.agents {
        if let Some(b) = a.obb_at_tick(record.tick, scenario.dt) {
            let _ = writeln!(
                svg,
                r##"<polygon data-id="{}" fill="#4a90d9" stroke="#1f4e79" points="{}"/>"##,
                a.agent_id,
                fmt_points(b.corners())
            );
        }
    }
    let driven = &episode.states[..=record.tick - first];
    let _ = writeln!(
        svg,
        r##"<polyline stroke="#2e7d32" stroke-width="0.5" points="{}"/>"##,
        fmt_points(driven.iter().map(|s| s.position()))
    );
    let _ = writeln!(
        svg,
        r##"<polyline stroke="#c62828" stroke-dasharray="1,1" points="{}"/>"##,
        fmt_points(record.plan.iter().map(|&p| Vec2::from(p)))
    );
    let _ = writeln!(
        svg,
        r##"<polygon fill="#43a047" stroke="#1b5e20" points="{}"/>"##,
        fmt_points(ego_footprint(scenario, ego).corners())
    );
    for e in top_k(record.attention.clone(), 2) {
        if let Some(p) = anchor(scenario, &e, record.tick, c) {
            let _ = writeln!(
                svg,
                r##"<circle class="attention" data-id="{}" data-role="{}" cx="{:.2}" cy="{:.2}" r="{:.4}" stroke="#ff6f00" stroke-width="0.4"/>"##,
                e.polyline_id,
                role_name(e.role),
                p.x,
                p.y,
                CIRCLE_SCALE * e.weight
            );
        }
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

fn role_name(r: PolylineRole) -> &'static str {
    match r {
        PolylineRole::Ego => "ego",
        PolylineRole::Agent => "agent",
        PolylineRole::Map => "map",
    }
}

/// Writes one SVG per planning tick plus `attention.json` into `dir`.
/// Returns the number of frames written.
pub fn export_attention(scenario: &Scenario, episode: &EpisodeResult, dir: impl AsRef<Path>) -> Result<usize> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::with_capacity(episode.ticks.len());
    for r in &episode.ticks {
        let path = dir.join(format!("frame_{:04}.svg", r.tick));
        std::fs::write(&path, render_frame(scenario, episode, r)?).map_err(|e| Error::io(&path, e))?;
        frames.push(AttentionFrame {
            tick: r.tick,
            time: r.time,
            weights: r.attention.clone(),
            top2: top_k(r.attention.clone(), 2),
        });
    }
    let path = dir.join("attention.json");
    let mut text = serde_json::to_string_pretty(&frames)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(frames.len())
}
