//! Target selection, motion estimation and reward/constraint scoring.

use crate::encoder::{self, EncoderDims, EncoderParams, SceneEmbedding, POSITION_SCALE, SPEED_SCALE};
use crate::error::{Error, Result};
use crate::geometry::{Frame, Vec2};
use crate::kinematics::{
    normalize_angle, rollout, smooth_controls, Control, ControlProfile, EgoState, Trajectory, VehicleLimits,
};
use crate::nn::{sigmoid, Mlp, Parameters};
use crate::path::ArcPath;
use crate::scene::{vectorize_with_ego, MapKind, PolylineSet, Scenario, VectorizeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

/// Samples per trajectory fed to the reward and constraint heads.
pub const FEATURE_STRIDE: usize = 5;
/// Values per sampled state: x, y, cos h, sin h, speed.
pub const STATE_FEATURES: usize = 5;
/// Number of control knots per channel.
pub const KNOTS: usize = 3;
const UNDERFLOW: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Targets selected per tick (the stay candidate comes on top).
    pub n_targets: usize,
    /// Steps per candidate trajectory.
    pub horizon: usize,
    pub smoothing_window: usize,
    /// Spacing of lane anchors (m).
    pub anchor_spacing: f64,
    /// Extra look-ahead beyond `v·H·dt` when placing anchors (m).
    pub anchor_margin: f64,
    pub limits: VehicleLimits,
    pub vectorize: VectorizeConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            n_targets: 16,
            horizon: 30,
            smoothing_window: 5,
            anchor_spacing: 2.0,
            anchor_margin: 10.0,
            limits: VehicleLimits::default(),
            vectorize: VectorizeConfig::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_targets < 2 {
            return Err(Error::Config("n_targets must be >= 2".into()));
        }
        if self.horizon < FEATURE_STRIDE || self.horizon % FEATURE_STRIDE != 0 {
            return Err(Error::Config(format!(
                "horizon must be a positive multiple of {FEATURE_STRIDE}"
            )));
        }
        if self.smoothing_window % 2 == 0 {
            return Err(Error::Config("smoothing_window must be odd".into()));
        }
        if self.anchor_spacing <= 0.0 || self.vectorize.history_len == 0 {
            return Err(Error::Config(
                "anchor_spacing must be > 0 and history_len >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn trajectory_features(&self) -> usize {
        self.horizon / FEATURE_STRIDE * STATE_FEATURES
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub encoder: EncoderDims,
    pub head_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            encoder: EncoderDims::default(),
            head_hidden: 64,
        }
    }
}

/// Encoder and all four heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerModel {
    pub encoder: EncoderParams,
    pub target: Mlp,
    pub motion: Mlp,
    pub reward: Mlp,
    pub constraint: Mlp,
}

impl PlannerModel {
    pub fn new(dims: &ModelDims, cfg: &PlannerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = dims.encoder.embed;
        let h = dims.head_hidden;
        let f = cfg.trajectory_features();
        PlannerModel {
            encoder: EncoderParams::new(&dims.encoder, &mut rng),
            target: Mlp::new(&[e + 2, h, h, 1], &mut rng),
            motion: Mlp::new(&[e + 2, h, h, 2 * KNOTS], &mut rng),
            reward: Mlp::new(&[e + f, h, h, 1], &mut rng),
            constraint: Mlp::new(&[e + f, h, h, 1], &mut rng),
        }
    }
}

impl Parameters for PlannerModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        self.encoder.visit(&p("encoder"), f);
        self.target.visit(&p("target"), f);
        self.motion.visit(&p("motion"), f);
        self.reward.visit(&p("reward"), f);
        self.constraint.visit(&p("constraint"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        self.encoder.visit_mut(&p("encoder"), f);
        self.target.visit_mut(&p("target"), f);
        self.motion.visit_mut(&p("motion"), f);
        self.reward.visit_mut(&p("reward"), f);
        self.constraint.visit_mut(&p("constraint"), f);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Softmax over rewards alone.
    Baseline,
    /// Rewards weighted by the constraint probability.
    #[default]
    Constrained,
}

impl std::str::FromStr for ScoringMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ScoringMode::Baseline),
            "constrained" => Ok(ScoringMode::Constrained),
            _ => Err(Error::Config(format!(
                "unknown mode `{s}` (expected baseline or constrained)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Lane anchors

/// Lane centers with successor links, built once per scenario.
#[derive(Clone, Debug)]
pub struct LaneGraph {
    lanes: Vec<ArcPath>,
    successors: Vec<Vec<usize>>,
}

const JOIN_DISTANCE: f64 = 0.5;
const START_LATERAL: f64 = 5.0;
const MAX_DEPTH: usize = 4;

impl LaneGraph {
    pub fn new(scenario: &Scenario) -> Self {
        let lanes: Vec<ArcPath> = scenario
            .map
            .iter()
            .filter(|m| m.kind == MapKind::LaneCenter)
            .map(|m| ArcPath::new(m.points.clone()))
            .collect();
        let successors = lanes
            .iter()
            .map(|a| {
                let end = a.point_at(a.length());
                let h = a.heading_at(a.length());
                (0..lanes.len())
                    .filter(|&j| {
                        let b = &lanes[j];
                        b.points()[0].distance(end) < JOIN_DISTANCE
                            && normalize_angle(b.heading_at(0.0) - h).abs() < FRAC_PI_4
                    })
                    .collect()
            })
            .collect();
        LaneGraph { lanes, successors }
    }

    pub fn lanes(&self) -> &[ArcPath] {
        &self.lanes
    }

    /// Anchor points (world frame) along lanes reachable from `state`,
    /// spaced `spacing` apart up to `reach` meters ahead. Empty when no lane
    /// is aligned with the ego.
    pub fn anchors(&self, state: &EgoState, reach: f64, spacing: f64) -> Vec<Vec2> {
        let mut out: Vec<Vec2> = Vec::new();
        let pos = state.position();
        for (i, lane) in self.lanes.iter().enumerate() {
            let (s, d) = lane.project(pos);
            if d > START_LATERAL || s >= lane.length() - 1e-9 {
                continue;
            }
            if normalize_angle(lane.heading_at(s) - state.heading).abs() > FRAC_PI_4 {
                continue;
            }
            self.walk(i, s, reach, spacing, 0, &mut out);
        }
        let frame = Frame::new(pos, state.heading);
        let mut kept: Vec<Vec2> = Vec::with_capacity(out.len());
        for p in out {
            if frame.to_local(p).x < -0.5 {
                continue;
            }
            if kept.iter().all(|q| q.distance(p) > 0.5 * spacing) {
                kept.push(p);
            }
        }
        kept
    }

    fn walk(&self, lane: usize, s0: f64, remaining: f64, spacing: f64, depth: usize, out: &mut Vec<Vec2>) {
        let path = &self.lanes[lane];
        let len = path.length();
        let mut k = 0;
        loop {
            let off = k as f64 * spacing;
            let s = s0 + off;
            if off > remaining + 1e-9 || s > len + 1e-9 {
                break;
            }
            out.push(path.point_at(s));
            k += 1;
        }
        let used = len - s0;
        if remaining > used && depth < MAX_DEPTH {
            // keep the spacing continuous across the lane junction
            let next = (k as f64 * spacing - used).max(0.0);
            for &j in &self.successors[lane] {
                self.walk(j, next, remaining - used - next, spacing, depth + 1, out);
            }
        }
    }
}

/// Anchors in the world frame for the ego at `state`: lane anchors, or a
/// straight-ahead fan when no lane is reachable, padded with straight-ahead
/// points up to `n` entries.
pub fn candidate_anchors(graph: &LaneGraph, state: &EgoState, cfg: &PlannerConfig, dt: f64) -> Vec<Vec2> {
    let reach = state.speed * cfg.horizon as f64 * dt + cfg.anchor_margin;
    let mut anchors = graph.anchors(state, reach, cfg.anchor_spacing);
    let frame = Frame::new(state.position(), state.heading);
    if anchors.is_empty() {
        for k in 1..=4 {
            for a in [-0.4, -0.2, 0.0, 0.2, 0.4] {
                let d = reach * k as f64 / 4.0;
                anchors.push(frame.to_world(Vec2::from_angle(a) * d));
            }
        }
    }
    let m = anchors.len();
    if m < cfg.n_targets {
        let pad = cfg.n_targets - m;
        for k in 1..=pad {
            anchors.push(frame.to_world(Vec2::new(reach * k as f64 / pad as f64, 0.0)));
        }
    }
    anchors
}

// ---------------------------------------------------------------------------
// Heads

pub fn head_input(embedding: &[f64], extra: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(embedding.len() + extra.len());
    x.extend_from_slice(embedding);
    x.extend_from_slice(extra);
    x
}

pub fn point_input(p: Vec2) -> [f64; 2] {
    [p.x / POSITION_SCALE, p.y / POSITION_SCALE]
}

/// Target-head logits for anchors given in the ego frame.
pub fn target_scores(model: &PlannerModel, embedding: &[f64], anchors_local: &[Vec2]) -> Result<Vec<f64>> {
    anchors_local
        .iter()
        .map(|&a| Ok(model.target.eval(&head_input(embedding, &point_input(a)))?[0]))
        .collect()
}

/// Indices of the `n` best-scoring anchors, highest first; equal scores keep
/// anchor order.
pub fn top_n(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Motion-head output mapped to knot values in [-1, 1] per channel
/// (acceleration knots first, then turn-rate knots).
pub fn knots_from_raw(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|v| v.tanh()).collect()
}

/// Linear interpolation of the knots over `horizon` steps, scaled to the
/// vehicle limits.
pub fn controls_from_knots(knots: &[f64], horizon: usize, limits: &VehicleLimits) -> ControlProfile {
    let interp = |k: &[f64], i: usize| {
        let u = if horizon > 1 { i as f64 / (horizon - 1) as f64 } else { 0.0 };
        let x = u * (KNOTS - 1) as f64;
        let j = (x.floor() as usize).min(KNOTS - 2);
        let t = x - j as f64;
        k[j] * (1.0 - t) + k[j + 1] * t
    };
    let steps = (0..horizon)
        .map(|i| {
            Control::new(
                interp(&knots[..KNOTS], i) * limits.a_max,
                interp(&knots[KNOTS..], i) * limits.omega_max,
            )
        })
        .collect();
    ControlProfile::new(steps)
}

/// Least-squares knot values (normalized by the limits) reproducing a
/// per-step control sequence.
pub fn fit_knots(controls: &[Control], limits: &VehicleLimits) -> Vec<f64> {
    let h = controls.len();
    let basis = |i: usize| -> [f64; KNOTS] {
        let u = if h > 1 { i as f64 / (h - 1) as f64 } else { 0.0 };
        let x = u * (KNOTS - 1) as f64;
        let mut b = [0.0; KNOTS];
        for (j, bj) in b.iter_mut().enumerate() {
            *bj = (1.0 - (x - j as f64).abs()).max(0.0);
        }
        b
    };
    let mut ata = [[0.0; KNOTS]; KNOTS];
    let mut atb = [[0.0; KNOTS]; 2];
    for (i, c) in controls.iter().enumerate() {
        let b = basis(i);
        for r in 0..KNOTS {
            for s in 0..KNOTS {
                ata[r][s] += b[r] * b[s];
            }
            atb[0][r] += b[r] * c.accel / limits.a_max;
            atb[1][r] += b[r] * c.turn_rate / limits.omega_max;
        }
    }
    let mut out = Vec::with_capacity(2 * KNOTS);
    for rhs in atb {
        out.extend(solve3(ata, rhs));
    }
    out
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for (r, row) in a.iter_mut().enumerate() {
        row[r] += 1e-9;
    }
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap_or(c);
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Per-step controls implied by consecutive states.
pub fn implied_controls(states: &[EgoState], dt: f64) -> Vec<Control> {
    states
        .windows(2)
        .map(|w| {
            Control::new(
                (w[1].speed - w[0].speed) / dt,
                normalize_angle(w[1].heading - w[0].heading) / dt,
            )
        })
        .collect()
}

/// Motion candidates for each ego-frame target, rolled out in the world
/// frame from `start`.
pub fn estimate_motions(
    model: &PlannerModel,
    embedding: &[f64],
    targets_local: &[Vec2],
    start: &EgoState,
    cfg: &PlannerConfig,
    dt: f64,
) -> Result<(Vec<ControlProfile>, Vec<Trajectory>)> {
    let mut controls = Vec::with_capacity(targets_local.len());
    let mut trajs = Vec::with_capacity(targets_local.len());
    for &t in targets_local {
        let raw = model.motion.eval(&head_input(embedding, &point_input(t)))?;
        let c = smooth_controls(
            &controls_from_knots(&knots_from_raw(&raw), cfg.horizon, &cfg.limits),
            cfg.smoothing_window,
            &cfg.limits,
        );
        trajs.push(rollout(start, &c, dt, &cfg.limits));
        controls.push(c);
    }
    Ok((controls, trajs))
}

/// Sampled ego-frame states (every fifth step) flattened for the heads.
pub fn trajectory_features(traj: &Trajectory, frame: &Frame) -> Vec<f64> {
    let mut f = Vec::with_capacity(traj.horizon() / FEATURE_STRIDE * STATE_FEATURES);
    for s in traj.states.iter().skip(FEATURE_STRIDE).step_by(FEATURE_STRIDE) {
        let p = frame.to_local(s.position());
        let h = frame.heading_to_local(s.heading);
        f.extend_from_slice(&[
            p.x / POSITION_SCALE,
            p.y / POSITION_SCALE,
            h.cos(),
            h.sin(),
            s.speed / SPEED_SCALE,
        ]);
    }
    f
}

/// Selection probabilities: softmax of the rewards, optionally weighted by
/// the constraint values. Returns the probabilities and whether the weighted
/// form underflowed and fell back to the plain softmax.
pub fn selection_probabilities(rewards: &[f64], constraints: Option<&[f64]>) -> Result<(Vec<f64>, bool)> {
    if rewards.is_empty() {
        return Err(Error::Empty("candidate rewards"));
    }
    let m = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = rewards.iter().map(|r| (r - m).exp()).collect();
    if let Some(c) = constraints {
        if c.len() != rewards.len() {
            return Err(Error::Dimension {
                context: "constraint values",
                expected: rewards.len(),
                got: c.len(),
            });
        }
        let w: Vec<f64> = e.iter().zip(c).map(|(a, b)| a * b).collect();
        let z: f64 = w.iter().sum();
        if z >= UNDERFLOW {
            return Ok((w.into_iter().map(|v| v / z).collect(), false));
        }
        log::debug!("constraint-weighted normalizer underflowed ({z:e}); using plain softmax");
        let z: f64 = e.iter().sum();
        return Ok((e.into_iter().map(|v| v / z).collect(), true));
    }
    let z: f64 = e.iter().sum();
    Ok((e.into_iter().map(|v| v / z).collect(), false))
}

/// Index of the highest probability, lowest index on ties.
pub fn plan(probabilities: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub trajectories: Vec<Trajectory>,
    pub controls: Vec<ControlProfile>,
    /// World-frame targets; the stay candidate's target is the start position.
    pub targets: Vec<Vec2>,
    pub rewards: Vec<f64>,
    pub constraints: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// The weighted normalizer underflowed and the plain softmax was used.
    pub fallback: bool,
}

/// Scores trajectories with the reward and constraint heads.
pub fn score(
    model: &PlannerModel,
    embedding: &[f64],
    trajectories: &[Trajectory],
    frame: &Frame,
    mode: ScoringMode,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, bool)> {
    if trajectories.is_empty() {
        return Err(Error::Empty("trajectory list"));
    }
    let mut rewards = Vec::with_capacity(trajectories.len());
    let mut constraints = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let x = head_input(embedding, &trajectory_features(t, frame));
        let r = model.reward.eval(&x)?[0];
        if !r.is_finite() {
            return Err(Error::NonFinite { head: "reward" });
        }
        let c = model.constraint.eval(&x)?[0];
        if !c.is_finite() {
            return Err(Error::NonFinite { head: "constraint" });
        }
        rewards.push(r);
        constraints.push(sigmoid(c));
    }
    let (probs, fallback) = match mode {
        ScoringMode::Baseline => selection_probabilities(&rewards, None)?,
        ScoringMode::Constrained => selection_probabilities(&rewards, Some(&constraints))?,
    };
    Ok((rewards, constraints, probs, fallback))
}

/// Everything produced by one planning step.
#[derive(Clone, Debug)]
pub struct PlanStep {
    pub polylines: PolylineSet,
    pub embedding: SceneEmbedding,
    /// World-frame anchors and their target-head scores.
    pub anchors: Vec<Vec2>,
    pub anchor_scores: Vec<f64>,
    pub candidates: CandidateSet,
    pub selected: usize,
}

/// Full pipeline at `tick` with the given ego history (oldest first).
pub fn plan_step(
    model: &PlannerModel,
    scenario: &Scenario,
    graph: &LaneGraph,
    ego_history: &[EgoState],
    tick: usize,
    cfg: &PlannerConfig,
    mode: ScoringMode,
) -> Result<PlanStep> {
    let start = *ego_history.last().ok_or(Error::Empty("ego history"))?;
    let polylines = vectorize_with_ego(scenario, ego_history, tick, &cfg.vectorize)?;
    let embedding = encoder::encode(&polylines, &model.encoder)?;
    let frame = Frame::new(start.position(), start.heading);
    let anchors = candidate_anchors(graph, &start, cfg, scenario.dt);
    let local: Vec<Vec2> = anchors.iter().map(|&a| frame.to_local(a)).collect();
    let emb = &embedding.global_context;
    let anchor_scores = target_scores(model, emb, &local)?;
    let chosen = top_n(&anchor_scores, cfg.n_targets);
    let mut targets: Vec<Vec2> = chosen.iter().map(|&i| anchors[i]).collect();
    let targets_local: Vec<Vec2> = chosen.iter().map(|&i| local[i]).collect();
    let (mut controls, mut trajectories) = estimate_motions(model, emb, &targets_local, &start, cfg, scenario.dt)?;
    let stay = ControlProfile::zeros(cfg.horizon);
    trajectories.push(rollout(&start, &stay, scenario.dt, &cfg.limits));
    controls.push(stay);
    targets.push(start.position());
    let (rewards, constraints, probabilities, fallback) = score(model, emb, &trajectories, &frame, mode)?;
    let selected = plan(&probabilities);
    Ok(PlanStep {
        polylines,
        embedding,
        anchors,
        anchor_scores,
        candidates: CandidateSet {
            trajectories,
            controls,
            targets,
            rewards,
            constraints,
            probabilities,
            fallback,
        },
        selected,
    })
}
