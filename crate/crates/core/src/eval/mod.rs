//! Closed-loop rollouts and the metric suite.

mod viz;

pub use viz::{export_attention, render_frame, AttentionFrame, CIRCLE_SCALE};

use crate::encoder::AttentionEntry;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::kinematics::{EgoState, Trajectory};
use crate::labeling::{detect_collision, detect_out_of_map};
use crate::par::Exec;
use crate::path::ArcPath;
use crate::planner::{plan_step, PlannerConfig, PlannerModel, ScoringMode};
use crate::training::ScenarioContext;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Executed steps between replans.
    pub replan_every: usize,
    /// Distance to the goal that counts as arrival (m).
    pub goal_radius: f64,
    /// Seconds past the scenario duration before timing out.
    pub timeout_slack: f64,
    pub mode: ScoringMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            replan_every: 5,
            goal_radius: 2.0,
            timeout_slack: 2.0,
            mode: ScoringMode::Constrained,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.replan_every == 0 || self.replan_every > horizon {
            return Err(Error::Config(format!(
                "replan_every must lie in [1, {horizon}], got {}",
                self.replan_every
            )));
        }
        if !(self.goal_radius > 0.0) || !(self.timeout_slack >= 0.0) {
            return Err(Error::Config("goal_radius must be > 0 and timeout_slack >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    OutOfMap,
    Timeout,
}

/// One planning step of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub time: f64,
    pub selected: usize,
    /// Per-candidate collision verdict against the logged agents.
    pub colliding: Vec<bool>,
    /// The constraint-weighted normalizer underflowed at this tick.
    pub fallback: bool,
    /// Positions of the selected plan.
    pub plan: Vec<[f64; 2]>,
    pub attention: Vec<AttentionEntry>,
}

impl TickRecord {
    pub fn collision_ratio(&self) -> f64 {
        if self.colliding.is_empty() {
            return 0.0;
        }
        self.colliding.iter().filter(|&&c| c).count() as f64 / self.colliding.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scenario_id: String,
    pub outcome: Outcome,
    /// Tick at which the episode ended.
    pub end_tick: usize,
    pub distance_driven: f64,
    pub distance_toward_goal: f64,
    pub expert_distance: f64,
    /// Executed ego states, starting with the handover state.
    pub states: Vec<EgoState>,
    pub ticks: Vec<TickRecord>,
}

/// Mean per-tick share of colliding candidates; 0 for an episode without
/// planning ticks.
pub fn risk_factor(ticks: &[TickRecord]) -> f64 {
    if ticks.is_empty() {
        return 0.0;
    }
    ticks.iter().map(TickRecord::collision_ratio).sum::<f64>() / ticks.len() as f64
}

fn expert_path(expert: &[EgoState]) -> Option<ArcPath> {
    let mut pts: Vec<Vec2> = Vec::with_capacity(expert.len());
    for s in expert {
        let p = s.position();
        if pts.last().map_or(true, |q| q.distance(p) > 1e-6) {
            pts.push(p);
        }
    }
    (pts.len() >= 2).then(|| ArcPath::new(pts))
}

/// Runs the planner in closed loop from the end of the expert history.
/// Agents replay their logs. Each executed step is checked for collision,
/// leaving the map, reaching the goal and timing out, in that order.
pub fn run_closed_loop(
    model: &PlannerModel,
    ctx: &ScenarioContext,
    planner: &PlannerConfig,
    cfg: &EvalConfig,
) -> Result<EpisodeResult> {
    cfg.validate(planner.horizon)?;
    let sc = &ctx.scenario;
    let start_tick = planner.vectorize.history_len - 1;
    if ctx.expert.len() <= start_tick {
        return Err(Error::Validation(format!(
            "scenario {} is shorter than the history window",
            sc.id
        )));
    }
    let mut history: Vec<EgoState> = ctx.expert[..=start_tick].to_vec();
    let timeout = ((sc.duration + cfg.timeout_slack) / sc.dt).round() as usize;
    let mut tick = start_tick;
    let mut driven = 0.0;
    let mut records = Vec::new();
    let mut states = vec![history[start_tick]];

    let outcome = 'episode: loop {
        if tick >= timeout {
            break Outcome::Timeout;
        }
        let step = plan_step(model, sc, &ctx.graph, &history, tick, planner, cfg.mode)?;
        let cands = &step.candidates;
        let chosen: &Trajectory = &cands.trajectories[step.selected];
        records.push(TickRecord {
            tick,
            time: tick as f64 * sc.dt,
            selected: step.selected,
            colliding: cands
                .trajectories
                .iter()
                .map(|t| detect_collision(t, sc, tick).is_some())
                .collect(),
            fallback: cands.fallback,
            plan: chosen.states.iter().map(|s| [s.x, s.y]).collect(),
            attention: step.embedding.attention_entries(),
        });
        for s in chosen.states.iter().skip(1).take(cfg.replan_every) {
            tick += 1;
            driven += history[history.len() - 1].position().distance(s.position());
            history.push(*s);
            states.push(*s);
            let here = Trajectory::new(vec![*s]);
            if detect_collision(&here, sc, tick).is_some() {
                break 'episode Outcome::Collision;
            }
            if detect_out_of_map(&here, &ctx.area, sc).is_some() {
                break 'episode Outcome::OutOfMap;
            }
            if s.position().distance(sc.goal) <= cfg.goal_radius {
                break 'episode Outcome::Success;
            }
            if tick >= timeout {
                break 'episode Outcome::Timeout;
            }
        }
    };

    let (toward, expert_distance) = match expert_path(&ctx.expert[start_tick..]) {
        Some(path) => {
            let s0 = path.project(ctx.expert[start_tick].position()).0;
            let goal = path.project(sc.goal).0;
            let end = path.project(history[history.len() - 1].position()).0;
            ((end.min(goal) - s0).max(0.0), (goal - s0).max(0.0))
        }
        None => (0.0, 0.0),
    };
    Ok(EpisodeResult {
        scenario_id: sc.id.clone(),
        outcome,
        end_tick: tick,
        distance_driven: driven,
        distance_toward_goal: toward,
        expert_distance,
        states,
        ticks: records,
    })
}

/// Evaluates every scenario; results keep the input order.
pub fn evaluate_suite(
    model: &PlannerModel,
    suite: &[ScenarioContext],
    planner: &PlannerConfig,
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<Vec<EpisodeResult>> {
    exec.map(suite, |ctx| run_closed_loop(model, ctx, planner, cfg))
        .into_iter()
        .collect()
}

/// Table-style summary of a set of episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: String,
    pub episodes: usize,
    pub progress_rate: f64,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub outside_road: f64,
    pub timeout_rate: f64,
    /// Meters per collision; the total distance when nothing collided.
    pub mdbc: f64,
    /// True when `mdbc` is the total distance because nothing collided.
    pub mdbc_no_collisions: bool,
    pub risk_factor: f64,
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "config",
    "episodes",
    "progress_rate",
    "success_rate",
    "collision_rate",
    "outside_road",
    "timeout_rate",
    "mdbc",
    "mdbc_no_collisions",
    "risk_factor",
];

pub fn metrics(config: &str, episodes: &[EpisodeResult]) -> Result<MetricsReport> {
    if episodes.is_empty() {
        return Err(Error::Empty("episode list"));
    }
    let n = episodes.len() as f64;
    let pct = |o: Outcome| episodes.iter().filter(|e| e.outcome == o).count() as f64 / n * 100.0;
    let progress = episodes
        .iter()
        .map(|e| {
            if e.expert_distance > 0.0 {
                (e.distance_toward_goal / e.expert_distance * 100.0).min(100.0)
            } else {
                100.0
            }
        })
        .sum::<f64>()
        / n;
    let collisions = episodes.iter().filter(|e| e.outcome == Outcome::Collision).count();
    let total: f64 = episodes.iter().map(|e| e.distance_driven).sum();
    Ok(MetricsReport {
        config: config.to_string(),
        episodes: episodes.len(),
        progress_rate: progress,
        success_rate: pct(Outcome::Success),
        collision_rate: pct(Outcome::Collision),
        outside_road: pct(Outcome::OutOfMap),
        timeout_rate: pct(Outcome::Timeout),
        mdbc: total / collisions.max(1) as f64,
        mdbc_no_collisions: collisions == 0,
        risk_factor: episodes.iter().map(|e| risk_factor(&e.ticks)).sum::<f64>() / n,
    })
}

impl MetricsReport {
    fn values(&self) -> [f64; 7] {
        [
            self.progress_rate,
            self.success_rate,
            self.collision_rate,
            self.outside_road,
            self.timeout_rate,
            self.mdbc,
            self.risk_factor,
        ]
    }

    pub fn csv_record(&self) -> Vec<String> {
        let v = self.values();
        vec![
            self.config.clone(),
            self.episodes.to_string(),
            format!("{:.4}", v[0]),
            format!("{:.4}", v[1]),
            format!("{:.4}", v[2]),
            format!("{:.4}", v[3]),
            format!("{:.4}", v[4]),
            format!("{:.4}", v[5]),
            self.mdbc_no_collisions.to_string(),
            format!("{:.6}", v[6]),
        ]
    }

    /// One human-readable table row.
    pub fn table_row(&self) -> String {
        let mdbc = if self.mdbc_no_collisions {
            format!("{:.1}*", self.mdbc)
        } else {
            format!("{:.1}", self.mdbc)
        };
        format!(
            "{:<40} {:>8.1} {:>8.1} {:>9.1} {:>8.1} {:>10} {:>8.4}",
            self.config, self.progress_rate, self.success_rate, self.collision_rate, self.outside_road, mdbc, self.risk_factor
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<40} {:>8} {:>8} {:>9} {:>8} {:>10} {:>8}",
            "config", "progress", "success", "collision", "outside", "mdbc", "risk"
        )
    }
}

/// Mean and sample standard deviation of each metric over repeated runs
/// (for example one report per training seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config: String,
    pub runs: usize,
    pub mean: MetricsReport,
    pub stddev: MetricsReport,
}

pub fn aggregate(config: &str, reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Empty("report list"));
    }
    let n = reports.len() as f64;
    let vals: Vec<[f64; 7]> = reports.iter().map(MetricsReport::values).collect();
    let mut mean = [0.0; 7];
    let mut sd = [0.0; 7];
    for k in 0..7 {
        mean[k] = vals.iter().map(|v| v[k]).sum::<f64>() / n;
        if reports.len() > 1 {
            sd[k] = (vals.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        }
    }
    let build = |v: [f64; 7], flag: bool| MetricsReport {
        config: config.to_string(),
        episodes: reports.iter().map(|r| r.episodes).sum(),
        progress_rate: v[0],
        success_rate: v[1],
        collision_rate: v[2],
        outside_road: v[3],
        timeout_rate: v[4],
        mdbc: v[5],
        mdbc_no_collisions: flag,
        risk_factor: v[6],
    };
    Ok(AggregateReport {
        config: config.to_string(),
        runs: reports.len(),
        mean: build(mean, reports.iter().all(|r| r.mdbc_no_collisions)),
        stddev: build(sd, false),
    })
}

pub fn write_report_csv(reports: &[MetricsReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Per-episode JSON lines.
pub fn write_episodes(episodes: &[EpisodeResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for e in episodes {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episodes(path: impl AsRef<Path>) -> Result<Vec<EpisodeResult>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                field: path.display().to_string(),
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })
        })
        .collect()
}
