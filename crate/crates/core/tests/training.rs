use conplan::encoder::EncoderDims;
use conplan::labeling::{ConstraintKind, ConstraintLabelSet, ConstraintSet, Label};
use conplan::nn::{sgd_step, sigmoid, Parameters};
use conplan::par::Exec;
use conplan::planner::{head_input, ModelDims, PlannerModel};
use conplan::scene::{generate_intersection, generate_trafficjam, ScenarioConfig};
use conplan::training::{
    bce, constraint_loss, load_model, prepare_tick, reward_loss, sample_loss, train, ScenarioContext, TickSample,
    TrainConfig, TrainOutputs,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> TrainConfig {
    TrainConfig {
        model: ModelDims {
            encoder: EncoderDims { hidden: 12, embed: 8 },
            head_hidden: 12,
        },
        ..TrainConfig::default()
    }
}

fn context(seed: u64) -> ScenarioContext {
    let sc = if seed % 3 == 2 {
        generate_trafficjam(seed, &ScenarioConfig::jam())
    } else {
        generate_intersection(seed, &ScenarioConfig::default())
    };
    ScenarioContext::new(sc.unwrap()).unwrap()
}

fn labels(violating: &[usize], best: usize, n: usize) -> ConstraintLabelSet {
    let mut l = vec![Label::Unlabeled; n];
    for &i in violating {
        l[i] = Label::Violating(ConstraintKind::Collision);
    }
    l[best] = Label::Best;
    ConstraintLabelSet { labels: l, best_index: best }
}

#[test]
fn one_violator_at_one_half_costs_ln2() {
    let l = labels(&[0], 1, 3);
    let v = constraint_loss(&[0.5, 0.5, 0.5], &l).unwrap();
    assert!((v - 2f64.ln()).abs() < 1e-12);
    // perfect separation costs nothing; unlabeled entries are ignored
    assert!(constraint_loss(&[0.0, 1.0, 0.3], &l).unwrap().abs() < 1e-12);
    assert!(constraint_loss(&[0.5, 0.5], &l).is_err());
}

#[test]
fn cross_entropy_and_nll_examples() {
    assert!((bce(0.25, 1.0) - 4f64.ln()).abs() < 1e-15);
    assert!((bce(0.25, 0.0) - (4.0f64 / 3.0).ln()).abs() < 1e-15);
    assert!(bce(0.0, 1.0).is_finite());
    assert!((reward_loss(&[0.25, 0.75], 0).unwrap() - 4f64.ln()).abs() < 1e-15);
    assert!(reward_loss(&[1.0], 3).is_err());
}

proptest! {
    #[test]
    fn constraint_loss_ignores_candidate_order(seed in 0u64..1000, n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let best = rng.gen_range(0..n);
        let violating: Vec<usize> = (0..n).filter(|&i| i != best && rng.gen_bool(0.5)).collect();
        let base = constraint_loss(&c, &labels(&violating, best, n)).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // candidate i moves to slot perm[i]
        let mut c2 = vec![0.0; n];
        for i in 0..n {
            c2[perm[i]] = c[i];
        }
        let v2: Vec<usize> = violating.iter().map(|&i| perm[i]).collect();
        let permuted = constraint_loss(&c2, &labels(&v2, perm[best], n)).unwrap();
        prop_assert!((base - permuted).abs() < 1e-12);
    }
}

/// A tick in the middle of the scenario.
fn sample(ctx: &ScenarioContext, model: &PlannerModel, cfg: &TrainConfig, pick: usize) -> TickSample {
    let pc = &cfg.planner;
    let ticks = ctx.ticks(pc.vectorize.history_len, pc.horizon, 5);
    prepare_tick(model, ctx, 0, ticks[pick % ticks.len()], None, cfg).unwrap()
}

fn loss(model: &PlannerModel, s: &TickSample, lambda: f64) -> f64 {
    sample_loss(model, s, lambda, None).unwrap().total(lambda)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let cfg = small();
    let h = 1e-5;
    let (mut checked, mut with_labels, mut significant) = (0, 0, 0);
    for instance in 0..20u64 {
        let ctx = context(instance + 1);
        let model = PlannerModel::new(&cfg.model, &cfg.planner, 100 + instance);
        let s = sample(&ctx, &model, &cfg, 7 * instance as usize + 3);
        with_labels += s.labels.is_some() as usize;
        let mut grads = model.zeros_like();
        sample_loss(&model, &s, cfg.lambda, Some(&mut grads)).unwrap();
        let flat = model.flatten();
        let g = grads.flatten();
        // one random coordinate from every tensor
        let mut rng = ChaCha8Rng::seed_from_u64(instance);
        let mut picks = Vec::new();
        let mut offset = 0;
        model.visit("", &mut |name, _, d| {
            picks.push((name.to_string(), offset + rng.gen_range(0..d.len())));
            offset += d.len();
        });
        for (name, k) in picks {
            let mut plus = model.clone();
            let mut minus = model.clone();
            let mut f = flat.clone();
            f[k] += h;
            plus.assign_flat(&f).unwrap();
            f[k] -= 2.0 * h;
            minus.assign_flat(&f).unwrap();
            let numeric = (loss(&plus, &s, cfg.lambda) - loss(&minus, &s, cfg.lambda)) / (2.0 * h);
            let rel = (numeric - g[k]).abs() / numeric.abs().max(g[k].abs()).max(1e-4);
            assert!(rel < 1e-4, "instance {instance} {name}[{k}]: analytic {} numeric {numeric}", g[k]);
            checked += 1;
            significant += (numeric.abs() > 1e-4) as usize;
        }
    }
    assert!(with_labels >= 10, "only {with_labels} labeled instances");
    assert!(checked >= 20 * 20);
    assert!(significant * 2 > checked, "{significant} of {checked} gradients above the floor");
}

#[test]
fn repeated_steps_on_one_tick_separate_best_from_violators() {
    let cfg = small();
    let model0 = PlannerModel::new(&cfg.model, &cfg.planner, 9);
    // first labeled tick that has a violator
    let (ctx, s) = (1..40)
        .find_map(|seed| {
            let ctx = context(seed);
            let pc = &cfg.planner;
            ctx.ticks(pc.vectorize.history_len, pc.horizon, 5)
                .into_iter()
                .map(|t| prepare_tick(&model0, &ctx, 0, t, None, &cfg).unwrap())
                .find(|s| s.labels.as_ref().is_some_and(|l| l.num_violating() > 0))
                .map(|s| (ctx, s))
        })
        .expect("no tick with a violator");
    drop(ctx);
    let mut model = model0;
    for _ in 0..500 {
        let mut g = model.zeros_like();
        sample_loss(&model, &s, cfg.lambda, Some(&mut g)).unwrap();
        sgd_step(&mut model, &g, 0.05);
    }
    let emb = conplan::encoder::encode(&s.polylines, &model.encoder).unwrap().global_context;
    let c = |i: usize| sigmoid(model.constraint.eval(&head_input(&emb, &s.features[i])).unwrap()[0]);
    let l = s.labels.as_ref().unwrap();
    assert!(c(l.best_index) > 0.9, "c(best) = {}", c(l.best_index));
    for i in l.violating() {
        assert!(c(i) < 0.1, "c({i}) = {}", c(i));
    }
}

fn corpus() -> Vec<ScenarioContext> {
    (1..=2).map(context).collect()
}

fn quick(cfg: TrainConfig) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        tick_stride: 40,
        ..cfg
    }
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let cfg = TrainConfig { epochs: 0, ..small() };
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("c.json");
    let out = TrainOutputs {
        checkpoint: Some(ckpt.clone()),
        ..TrainOutputs::default()
    };
    let r = train(&corpus(), &cfg, Exec::Sequential, &out).unwrap();
    assert_eq!(r.model, PlannerModel::new(&cfg.model, &cfg.planner, cfg.seed));
    assert_eq!(r.steps, 0);
    let (loaded, planner, meta) = load_model(&ckpt).unwrap();
    assert_eq!(loaded, r.model);
    assert_eq!(planner, cfg.planner);
    assert_eq!(meta["epoch"], 0);
}

#[test]
fn training_is_deterministic_across_executors() {
    let cfg = quick(small());
    let data = corpus();
    let dir = tempfile::tempdir().unwrap();
    let outs = |tag: &str| TrainOutputs {
        checkpoint: Some(dir.path().join(format!("{tag}.json"))),
        log: None,
        labels: Some(dir.path().join(format!("{tag}.jsonl"))),
    };
    let a = train(&data, &cfg, Exec::Sequential, &outs("a")).unwrap();
    let b = train(&data, &cfg, Exec::Parallel, &outs("b")).unwrap();
    assert_eq!(a.model, b.model);
    assert!(a.steps > 0);
    for ext in ["json", "jsonl"] {
        let ra = std::fs::read(dir.path().join(format!("a.{ext}"))).unwrap();
        let rb = std::fs::read(dir.path().join(format!("b.{ext}"))).unwrap();
        assert_eq!(ra, rb, "{ext} differs");
    }
    let init = PlannerModel::new(&cfg.model, &cfg.planner, cfg.seed);
    assert_ne!(a.model, init);
}

#[test]
fn no_constraints_matches_zero_constraint_weight() {
    let data = corpus();
    let none = quick(TrainConfig {
        constraints: ConstraintSet::NONE,
        ..small()
    });
    let zero = quick(TrainConfig { lambda: 0.0, ..small() });
    let a = train(&data, &none, Exec::Sequential, &TrainOutputs::default()).unwrap();
    let b = train(&data, &zero, Exec::Sequential, &TrainOutputs::default()).unwrap();
    assert_eq!(a.model, b.model);
    assert!(a.log.iter().all(|e| e.constraint_loss == 0.0));
    let init = PlannerModel::new(&none.model, &none.planner, none.seed);
    assert_eq!(a.model.constraint, init.constraint);
}

#[test]
fn invalid_configs_are_rejected() {
    let data = corpus();
    for cfg in [
        TrainConfig { learning_rate: 0.0, ..small() },
        TrainConfig { batch_size: 0, ..small() },
        TrainConfig { lambda: -1.0, ..small() },
    ] {
        assert!(matches!(train(&data, &cfg, Exec::Sequential, &TrainOutputs::default()), Err(conplan::Error::Config(_))));
    }
    assert!(train(&[], &small(), Exec::Sequential, &TrainOutputs::default()).is_err());
}
