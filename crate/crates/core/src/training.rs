//! Losses and the training loop over labeled ticks.

use crate::encoder::{self, SceneEmbedding};
use crate::error::{Error, Result};
use crate::geometry::{Frame, Vec2};
use crate::kinematics::{EgoState, Trajectory};
use crate::labeling::{
    best_trajectory, labels_from_verdicts, stationary_time, ConstraintLabelSet, ConstraintSet, Label, LabelRecord,
    Verdicts,
};
use crate::nn::{checkpoint, sgd_step, sigmoid, softmax, Parameters};
use crate::par::Exec;
use crate::planner::{
    candidate_anchors, controls_from_knots, estimate_motions, fit_knots, head_input, implied_controls, point_input, target_scores, top_n,
    trajectory_features, LaneGraph, KNOTS, ModelDims, PlannerConfig, PlannerModel,
};
use crate::kinematics::{rollout, smooth_controls, ControlProfile};
use crate::scene::{derive_seed, drivable_area, vectorize_with_ego, DrivableArea, PolylineSet, Scenario};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

const LOG_CLAMP: f64 = 1e-12;
const KNOT_TARGET_LIMIT: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub constraints: ConstraintSet,
    pub seed: u64,
    /// Weight of the constraint loss against the reward loss.
    pub lambda: f64,
    /// Steps between training ticks within a scenario.
    pub tick_stride: usize,
    /// Random-knot rollouts per tick added to the motion-head regression.
    pub hindsight_pairs: usize,
    /// Random offsets of the ego history so the heads see off-expert states.
    pub augment: AugmentConfig,
    pub planner: PlannerConfig,
    pub model: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 30,
            batch_size: 2,
            constraints: ConstraintSet::ALL,
            seed: 0,
            lambda: 1.0,
            tick_stride: 10,
            hindsight_pairs: 8,
            augment: AugmentConfig::default(),
            planner: PlannerConfig::default(),
            model: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.tick_stride == 0 {
            return Err(Error::Config("batch_size and tick_stride must be >= 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        self.planner.validate()
    }
}

/// Binary cross-entropy with the logarithm guarded at `1e-12`.
pub fn bce(x: f64, y: f64) -> f64 {
    -y * x.max(LOG_CLAMP).ln() - (1.0 - y) * (1.0 - x).max(LOG_CLAMP).ln()
}

/// Mean cross-entropy over the violating candidates (target 0) and the best
/// candidate (target 1).
pub fn constraint_loss(c: &[f64], labels: &ConstraintLabelSet) -> Result<f64> {
    if c.len() != labels.labels.len() {
        return Err(Error::Dimension {
            context: "constraint values vs labels",
            expected: labels.labels.len(),
            got: c.len(),
        });
    }
    let violating: f64 = labels.violating().map(|i| bce(c[i], 0.0)).sum();
    Ok((violating + bce(c[labels.best_index], 1.0)) / (labels.num_violating() + 1) as f64)
}

/// Negative log-probability of the best candidate.
pub fn reward_loss(probabilities: &[f64], best_index: usize) -> Result<f64> {
    let p = probabilities.get(best_index).ok_or(Error::Dimension {
        context: "best index",
        expected: probabilities.len(),
        got: best_index,
    })?;
    Ok(-p.max(LOG_CLAMP).ln())
}

/// Immutable per-scenario data used while training and evaluating.
#[derive(Clone, Debug)]
pub struct ScenarioContext {
    pub scenario: Scenario,
    pub graph: LaneGraph,
    pub area: DrivableArea,
    pub expert: Vec<EgoState>,
}

impl ScenarioContext {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let area = drivable_area(&scenario)?;
        let graph = LaneGraph::new(&scenario);
        let expert = (0..scenario.num_ticks())
            .map_while(|t| scenario.ego_state(t))
            .collect();
        Ok(ScenarioContext {
            scenario,
            graph,
            area,
            expert,
        })
    }

    /// Training ticks: every `stride` steps once a full history exists and
    /// while the expert covers the horizon.
    pub fn ticks(&self, history_len: usize, horizon: usize, stride: usize) -> Vec<usize> {
        let first = history_len.saturating_sub(1);
        (first..)
            .step_by(stride)
            .take_while(|t| t + horizon < self.expert.len())
            .collect()
    }
}

/// Everything needed to evaluate the losses of one tick with the candidate
/// set held fixed.
#[derive(Clone, Debug)]
pub struct TickSample {
    pub scenario: usize,
    pub tick: usize,
    pub polylines: PolylineSet,
    /// Anchors in the ego frame and the index of the one nearest the expert
    /// endpoint.
    pub anchors: Vec<Vec2>,
    pub target_index: usize,
    /// Motion-head regression pairs: ego-frame endpoint and the knot values
    /// that reach it. The first pair is the expert; the rest are rollouts of
    /// random knots.
    pub motion_pairs: Vec<(Vec2, Vec<f64>)>,
    pub candidates: Vec<Trajectory>,
    pub features: Vec<Vec<f64>>,
    pub best_index: usize,
    pub labels: Option<ConstraintLabelSet>,
    pub gt: Trajectory,
    pub perturbation: Option<Perturbation>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub reward: f64,
    pub constraint: f64,
    pub target: f64,
    pub motion: f64,
}

impl LossParts {
    pub fn total(&self, lambda: f64) -> f64 {
        self.reward + lambda * self.constraint + self.target + self.motion
    }
}

/// Rigid offset of the ego history, expressed in the frame of its last state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub lateral: f64,
    pub heading: f64,
    pub speed_scale: f64,
}

impl Perturbation {
    pub fn apply(&self, history: &[EgoState]) -> Vec<EgoState> {
        let Some(last) = history.last() else {
            return Vec::new();
        };
        let frame = Frame::new(last.position(), last.heading);
        history
            .iter()
            .map(|s| {
                let p = frame.to_local(s.position()).rotate(self.heading) + Vec2::new(0.0, self.lateral);
                let w = frame.to_world(p);
                EgoState::new(w.x, w.y, s.heading + self.heading, s.speed * self.speed_scale)
            })
            .collect()
    }
}

/// Share and size of perturbed training ticks. Off by default; set
/// `probability` to enable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub probability: f64,
    /// Maximum lateral offset (m).
    pub lateral: f64,
    /// Maximum heading offset (rad).
    pub heading: f64,
    /// Maximum relative speed change.
    pub speed: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            probability: 0.0,
            lateral: 1.0,
            heading: 0.1,
            speed: 0.2,
        }
    }
}

impl AugmentConfig {
    pub const OFF: AugmentConfig = AugmentConfig {
        probability: 0.0,
        lateral: 0.0,
        heading: 0.0,
        speed: 0.0,
    };

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Perturbation> {
        // always draw the same number of values so the stream stays aligned
        let u: f64 = rng.gen();
        let l: f64 = rng.gen_range(-1.0..=1.0);
        let h: f64 = rng.gen_range(-1.0..=1.0);
        let v: f64 = rng.gen_range(-1.0..=1.0);
        (u < self.probability).then(|| Perturbation {
            lateral: l * self.lateral,
            heading: h * self.heading,
            speed_scale: (1.0 + v * self.speed).max(0.0),
        })
    }
}

/// Builds the sample for `tick`: proposes candidates with `model` (detached)
/// and labels them against the expert.
pub fn prepare_tick(
    model: &PlannerModel,
    ctx: &ScenarioContext,
    scenario_index: usize,
    tick: usize,
    perturbation: Option<Perturbation>,
    cfg: &TrainConfig,
) -> Result<TickSample> {
    let history = ego_history(ctx, tick, perturbation);
    let polylines = vectorize_with_ego(&ctx.scenario, &history, tick, &cfg.planner.vectorize)?;
    let embedding = encoder::encode(&polylines, &model.encoder)?;
    build_sample(model, ctx, scenario_index, tick, &history, perturbation, cfg, polylines, &embedding)
}

fn ego_history(ctx: &ScenarioContext, tick: usize, perturbation: Option<Perturbation>) -> Vec<EgoState> {
    match perturbation {
        Some(p) => p.apply(&ctx.expert[..=tick]),
        None => ctx.expert[..=tick].to_vec(),
    }
}

fn build_sample(
    model: &PlannerModel,
    ctx: &ScenarioContext,
    scenario_index: usize,
    tick: usize,
    history: &[EgoState],
    perturbation: Option<Perturbation>,
    cfg: &TrainConfig,
    polylines: PolylineSet,
    embedding: &SceneEmbedding,
) -> Result<TickSample> {
    let pc = &cfg.planner;
    let dt = ctx.scenario.dt;
    let start = *history.last().ok_or(Error::Empty("ego history"))?;
    let gt_states = ctx
        .expert
        .get(tick..=tick + pc.horizon)
        .ok_or(Error::Validation(format!("tick {tick} leaves too little expert future")))?;
    let gt = Trajectory::new(gt_states.to_vec());
    let frame = Frame::new(start.position(), start.heading);
    let emb = &embedding.global_context;

    let anchors: Vec<Vec2> = candidate_anchors(&ctx.graph, &start, pc, dt)
        .into_iter()
        .map(|a| frame.to_local(a))
        .collect();
    let expert_endpoint = frame.to_local(gt.end().position());
    let target_index = nearest(&anchors, expert_endpoint);
    let expert_knots: Vec<f64> = fit_knots(&implied_controls(gt_states, dt), &pc.limits)
        .into_iter()
        .map(|k| k.clamp(-KNOT_TARGET_LIMIT, KNOT_TARGET_LIMIT))
        .collect();
    // the expert's controls only describe its own start state
    let mut motion_pairs = Vec::with_capacity(cfg.hindsight_pairs + 1);
    if perturbation.is_none() {
        motion_pairs.push((expert_endpoint, expert_knots));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ ((scenario_index as u64) << 24), tick));
    for _ in 0..cfg.hindsight_pairs {
        // constant acceleration and turn rate: the endpoint pins both down
        let a = rng.gen_range(-KNOT_TARGET_LIMIT..=KNOT_TARGET_LIMIT);
        let w = rng.gen_range(-KNOT_TARGET_LIMIT..=KNOT_TARGET_LIMIT);
        let knots: Vec<f64> = [a; KNOTS].into_iter().chain([w; KNOTS]).collect();
        let controls = smooth_controls(
            &controls_from_knots(&knots, pc.horizon, &pc.limits),
            pc.smoothing_window,
            &pc.limits,
        );
        let end = rollout(&start, &controls, dt, &pc.limits);
        motion_pairs.push((frame.to_local(end.end().position()), knots));
    }

    let scores = target_scores(model, emb, &anchors)?;
    let chosen: Vec<Vec2> = top_n(&scores, pc.n_targets).into_iter().map(|i| anchors[i]).collect();
    let (_, mut candidates) = estimate_motions(model, emb, &chosen, &start, pc, dt)?;
    candidates.push(rollout(&start, &ControlProfile::zeros(pc.horizon), dt, &pc.limits));
    let features = candidates.iter().map(|t| trajectory_features(t, &frame)).collect();

    let best_index = best_trajectory(&candidates, &gt)?;
    let labels = if cfg.constraints.is_empty() {
        None
    } else {
        let stopped = stationary_time(history, dt);
        let verdicts = Verdicts::compute(&candidates, &ctx.scenario, &ctx.area, tick, stopped);
        labels_from_verdicts(&candidates, &gt, &verdicts, cfg.constraints)?
    };
    Ok(TickSample {
        scenario: scenario_index,
        tick,
        polylines,
        anchors,
        target_index,
        motion_pairs,
        candidates,
        features,
        best_index,
        labels,
        gt,
        perturbation,
    })
}

fn nearest(points: &[Vec2], p: Vec2) -> usize {
    let mut best = 0;
    for (i, q) in points.iter().enumerate() {
        if q.distance(p) < points[best].distance(p) {
            best = i;
        }
    }
    best
}

/// Losses of `sample` and, when `grads` is given, their gradients
/// accumulated into it. The encoder runs with a tape so gradients reach it.
pub fn sample_loss(
    model: &PlannerModel,
    sample: &TickSample,
    lambda: f64,
    grads: Option<&mut PlannerModel>,
) -> Result<LossParts> {
    let (embedding, tape) = encoder::encode_with_tape(&sample.polylines, &model.encoder)?;
    match grads {
        None => head_losses(model, &embedding.global_context, sample, lambda, None).map(|(l, _)| l),
        Some(g) => {
            let (loss, d_emb) = head_losses(model, &embedding.global_context, sample, lambda, Some(g))?;
            encoder::backward(&model.encoder, &tape, &d_emb, &mut g.encoder)?;
            Ok(loss)
        }
    }
}

fn head_losses(
    model: &PlannerModel,
    emb: &[f64],
    s: &TickSample,
    lambda: f64,
    mut grads: Option<&mut PlannerModel>,
) -> Result<(LossParts, Vec<f64>)> {
    let e = emb.len();
    let mut d_emb = vec![0.0; e];
    let mut add = |dx: &[f64]| {
        for (d, v) in d_emb.iter_mut().zip(dx) {
            *d += v;
        }
    };
    let mut parts = LossParts::default();

    // target selection: cross-entropy over anchors
    let mut logits = Vec::with_capacity(s.anchors.len());
    let mut tapes = Vec::with_capacity(s.anchors.len());
    for &a in &s.anchors {
        let (y, t) = model.target.forward(&head_input(emb, &point_input(a)))?;
        logits.push(y[0]);
        tapes.push(t);
    }
    let p = softmax(&logits);
    parts.target = -p[s.target_index].max(LOG_CLAMP).ln();
    if let Some(g) = grads.as_deref_mut() {
        for (j, t) in tapes.iter().enumerate() {
            let dz = p[j] - if j == s.target_index { 1.0 } else { 0.0 };
            add(&model.target.backward(t, &[dz], &mut g.target)?[..e]);
        }
    }

    // motion: knot regression, conditioned on the endpoint each pair reaches
    let scale = 1.0 / (s.motion_pairs.len() * 2 * KNOTS) as f64;
    for (end, knots) in &s.motion_pairs {
        let (raw, tape) = model.motion.forward(&head_input(emb, &point_input(*end)))?;
        let mut d_raw = Vec::with_capacity(raw.len());
        for (r, z) in raw.iter().zip(knots) {
            let y = r.tanh();
            parts.motion += (y - z).powi(2) * scale;
            d_raw.push(2.0 * (y - z) * scale * (1.0 - y * y));
        }
        if let Some(g) = grads.as_deref_mut() {
            add(&model.motion.backward(&tape, &d_raw, &mut g.motion)?[..e]);
        }
    }

    // reward: negative log-likelihood of the best candidate under the softmax
    let mut rewards = Vec::with_capacity(s.features.len());
    let mut rtapes = Vec::with_capacity(s.features.len());
    for f in &s.features {
        let (y, t) = model.reward.forward(&head_input(emb, f))?;
        rewards.push(y[0]);
        rtapes.push(t);
    }
    let p = softmax(&rewards);
    parts.reward = reward_loss(&p, s.best_index)?;
    if let Some(g) = grads.as_deref_mut() {
        for (j, t) in rtapes.iter().enumerate() {
            let dz = p[j] - if j == s.best_index { 1.0 } else { 0.0 };
            add(&model.reward.backward(t, &[dz], &mut g.reward)?[..e]);
        }
    }

    // constraint: cross-entropy on the labeled candidates only
    if let Some(labels) = &s.labels {
        let mut labeled: Vec<(usize, f64)> = labels.violating().map(|i| (i, 0.0)).collect();
        labeled.push((labels.best_index, 1.0));
        let n = labeled.len() as f64;
        let mut c = vec![0.5; s.features.len()];
        let mut ctapes = Vec::with_capacity(labeled.len());
        for &(i, _) in &labeled {
            let (y, t) = model.constraint.forward(&head_input(emb, &s.features[i]))?;
            c[i] = sigmoid(y[0]);
            ctapes.push(t);
        }
        parts.constraint = constraint_loss(&c, labels)?;
        if let Some(g) = grads.as_deref_mut() {
            for (&(i, y), t) in labeled.iter().zip(&ctapes) {
                let dz = lambda * (c[i] - y) / n;
                add(&model.constraint.backward(t, &[dz], &mut g.constraint)?[..e]);
            }
        }
    }
    Ok((parts, d_emb))
}

/// Candidates, losses and gradients of one tick from a single taped forward.
pub fn tick_gradient(
    model: &PlannerModel,
    ctx: &ScenarioContext,
    scenario_index: usize,
    tick: usize,
    perturbation: Option<Perturbation>,
    cfg: &TrainConfig,
) -> Result<(TickSample, LossParts, PlannerModel)> {
    let history = ego_history(ctx, tick, perturbation);
    let polylines = vectorize_with_ego(&ctx.scenario, &history, tick, &cfg.planner.vectorize)?;
    let (embedding, tape) = encoder::encode_with_tape(&polylines, &model.encoder)?;
    let sample = build_sample(model, ctx, scenario_index, tick, &history, perturbation, cfg, polylines, &embedding)?;
    let mut grads = model.zeros_like();
    let (loss, d_emb) = head_losses(model, &embedding.global_context, &sample, cfg.lambda, Some(&mut grads))?;
    encoder::backward(&model.encoder, &tape, &d_emb, &mut grads.encoder)?;
    Ok((sample, loss, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub reward_loss: f64,
    pub constraint_loss: f64,
    pub wall_seconds: f64,
    /// Not written to the CSV log.
    pub target_loss: f64,
    pub motion_loss: f64,
}

/// Where training writes its artifacts. All fields optional.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    /// Checkpoint rewritten after every epoch.
    pub checkpoint: Option<PathBuf>,
    /// CSV log, one row per epoch.
    pub log: Option<PathBuf>,
    /// JSON lines of the labels from the final epoch.
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: PlannerModel,
    pub log: Vec<EpochLog>,
    pub steps: usize,
    /// Ticks whose labeling was skipped because every candidate violated.
    pub skipped_labels: usize,
}

/// Checkpoint metadata: enough to rebuild the model shape.
pub fn checkpoint_meta(cfg: &TrainConfig, epoch: usize) -> serde_json::Value {
    serde_json::json!({
        "model": cfg.model,
        "planner": cfg.planner,
        "constraints": cfg.constraints,
        "seed": cfg.seed,
        "epoch": epoch,
    })
}

/// Loads a checkpoint written by [`train`], rebuilding the model from its
/// stored dimensions.
pub fn load_model(path: impl AsRef<Path>) -> Result<(PlannerModel, PlannerConfig, serde_json::Value)> {
    let ckpt = checkpoint::read_checkpoint(path)?;
    let field = |k: &str| {
        ckpt.meta
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("metadata lacks `{k}`")))
    };
    let dims: ModelDims =
        serde_json::from_value(field("model")?).map_err(|e| Error::Checkpoint(format!("bad model dims: {e}")))?;
    let planner: PlannerConfig = serde_json::from_value(field("planner")?)
        .map_err(|e| Error::Checkpoint(format!("bad planner config: {e}")))?;
    let mut model = PlannerModel::new(&dims, &planner, 0);
    ckpt.restore(&mut model)?;
    Ok((model, planner, ckpt.meta))
}

/// Runs the training loop. Ticks are shuffled per epoch with a seed derived
/// from the config seed; each batch proposes candidates with the parameters
/// at the start of the batch, sums per-sample gradients in tick order and
/// takes one SGD step on their mean.
pub fn train(corpus: &[ScenarioContext], cfg: &TrainConfig, exec: Exec, out: &TrainOutputs) -> Result<TrainResult> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let pc = &cfg.planner;
    let mut ticks: Vec<(usize, usize)> = Vec::new();
    for (i, ctx) in corpus.iter().enumerate() {
        for t in ctx.ticks(pc.vectorize.history_len, pc.horizon, cfg.tick_stride) {
            ticks.push((i, t));
        }
    }
    if ticks.is_empty() {
        return Err(Error::Empty("training ticks"));
    }
    let mut model = PlannerModel::new(&cfg.model, pc, cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut log_file = match &out.log {
        Some(p) => {
            let mut w = csv::Writer::from_path(p).map_err(|e| Error::Validation(format!("{}: {e}", p.display())))?;
            w.write_record(["epoch", "reward_loss", "constraint_loss", "wall_seconds"])?;
            w.flush().map_err(|e| Error::io(p, e))?;
            Some(w)
        }
        None => None,
    };
    let started = Instant::now();
    let mut steps = 0;
    let mut skipped = 0;
    let mut records: Vec<LabelRecord> = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut order = ticks.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch));
        order.shuffle(&mut rng);
        let order: Vec<(usize, usize, Option<Perturbation>)> = order
            .into_iter()
            .map(|(i, t)| (i, t, cfg.augment.sample(&mut rng)))
            .collect();
        let (mut reward_sum, mut constraint_sum, mut labeled) = (0.0, 0.0, 0usize);
        let (mut target_sum, mut motion_sum) = (0.0, 0.0);
        skipped = 0;
        records.clear();
        for batch in order.chunks(cfg.batch_size) {
            let results = exec.map(batch, |&(i, t, p)| tick_gradient(&model, &corpus[i], i, t, p, cfg));
            let mut total = model.zeros_like();
            for (r, &(i, t, _)) in results.into_iter().zip(batch) {
                let (sample, loss, g) = r?;
                if !loss.total(cfg.lambda).is_finite() || !g.all_finite() {
                    return Err(Error::NonFiniteLoss {
                        scenario: corpus[i].scenario.id.clone(),
                        tick: t,
                    });
                }
                reward_sum += loss.reward;
                target_sum += loss.target;
                motion_sum += loss.motion;
                if sample.labels.is_some() {
                    constraint_sum += loss.constraint;
                    labeled += 1;
                } else if !cfg.constraints.is_empty() {
                    skipped += 1;
                }
                if out.labels.is_some() && epoch == cfg.epochs {
                    records.push(LabelRecord {
                        scenario: corpus[i].scenario.id.clone(),
                        tick: t,
                        labels: sample.labels.as_ref().map(|l| l.labels.clone()),
                        best_index: sample.labels.as_ref().map(|l| l.best_index),
                    });
                }
                total.add_assign(&g);
            }
            total.scale(1.0 / batch.len() as f64);
            sgd_step(&mut model, &total, cfg.learning_rate);
            steps += 1;
        }
        let entry = EpochLog {
            epoch,
            reward_loss: reward_sum / order.len() as f64,
            constraint_loss: if labeled > 0 { constraint_sum / labeled as f64 } else { 0.0 },
            wall_seconds: started.elapsed().as_secs_f64(),
            target_loss: target_sum / order.len() as f64,
            motion_loss: motion_sum / order.len() as f64,
        };
        log::info!(
            "epoch {epoch}: reward {:.4} constraint {:.4} ({skipped} ticks unlabeled)",
            entry.reward_loss,
            entry.constraint_loss
        );
        if let (Some(w), Some(p)) = (log_file.as_mut(), &out.log) {
            w.write_record([
                epoch.to_string(),
                entry.reward_loss.to_string(),
                entry.constraint_loss.to_string(),
                format!("{:.3}", entry.wall_seconds),
            ])?;
            w.flush().map_err(|e| Error::io(p, e))?;
        }
        log.push(entry);
        if let Some(p) = &out.checkpoint {
            checkpoint::save_checkpoint(&model, checkpoint_meta(cfg, epoch), p)?;
        }
    }
    if let Some(p) = &out.checkpoint {
        if cfg.epochs == 0 {
            checkpoint::save_checkpoint(&model, checkpoint_meta(cfg, 0), p)?;
        }
    }
    if let Some(p) = &out.labels {
        records.sort_by(|a, b| a.scenario.cmp(&b.scenario).then(a.tick.cmp(&b.tick)));
        let mut f = std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?);
        for r in &records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n").map_err(|e| Error::io(p, e))?;
        }
        f.flush().map_err(|e| Error::io(p, e))?;
    }
    Ok(TrainResult {
        model,
        log,
        steps,
        skipped_labels: skipped,
    })
}

/// Label summary of one sample, for tests and dumps.
pub fn label_counts(labels: &ConstraintLabelSet) -> (usize, usize) {
    let best = labels.labels.iter().filter(|l| matches!(l, Label::Best)).count();
    (labels.num_violating(), best)
}
