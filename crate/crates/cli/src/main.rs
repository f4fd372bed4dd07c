mod config;
mod error;
mod suite;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use conplan::eval::{
    evaluate_suite, metrics, read_episodes, export_attention, write_episodes, write_report_csv, MetricsReport,
};
use conplan::labeling::ConstraintSet;
use conplan::par::{with_jobs, Exec};
use conplan::planner::ScoringMode;
use conplan::scene::SuiteKind;
use conplan::training::{load_model, train, ScenarioContext, TrainOutputs};
use error::{CliError, CliResult};
use std::path::{Path, PathBuf};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "CONPLAN_OUT";

#[derive(Parser, Debug)]
#[command(name = "conplan", version, about = "Constraint-augmented imitation planner on synthetic scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $CONPLAN_OUT/<command>, or runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario suite.
    Gen {
        /// intersection, jam or mixed.
        #[arg(long)]
        kind: Option<SuiteKind>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a planner on a suite.
    Train {
        /// Suite directory.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// none, or a comma list of collision, out_of_map, stuck.
        #[arg(long, value_parser = parse_constraints)]
        constraints: Option<ConstraintSet>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-loop evaluation of a checkpoint on a suite.
    Eval {
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// baseline or constrained (default follows the checkpoint).
        #[arg(long)]
        mode: Option<ScoringMode>,
        #[command(flatten)]
        common: Common,
    },
    /// Render attention frames from evaluated episodes.
    Viz {
        /// Episode JSON lines written by `eval`.
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Only this scenario id (default: every episode).
        #[arg(long)]
        scenario: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_constraints(s: &str) -> Result<ConstraintSet, String> {
    s.parse().map_err(|e: conplan::Error| e.to_string())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, name) = match &cli.command {
        Command::Gen { common, .. } => (common, "gen"),
        Command::Train { common, .. } => (common, "train"),
        Command::Eval { common, .. } => (common, "eval"),
        Command::Viz { common, .. } => (common, "viz"),
    };
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    let out = output_dir(common.out.as_deref(), name);
    let force = common.force;
    let jobs = cfg.jobs;
    with_jobs(jobs, move || match cli.command {
        Command::Gen { kind, count, seed, .. } => {
            if let Some(k) = kind {
                cfg.gen.kind = k;
            }
            if let Some(c) = count {
                cfg.gen.count = c;
            }
            if let Some(s) = seed {
                cfg.gen.seed = s;
            }
            cmd_gen(&cfg, &out, force)
        }
        Command::Train {
            suite,
            constraints,
            seed,
            epochs,
            learning_rate,
            batch_size,
            ..
        } => {
            override_path(&mut cfg.inputs.suite, suite);
            if let Some(c) = constraints {
                cfg.train.constraints = c;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(l) = learning_rate {
                cfg.train.learning_rate = l;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            cmd_train(&cfg, &out, force)
        }
        Command::Eval {
            suite, checkpoint, mode, ..
        } => {
            override_path(&mut cfg.inputs.suite, suite);
            override_path(&mut cfg.inputs.checkpoint, checkpoint);
            if mode.is_some() {
                cfg.eval.mode = mode;
            }
            cmd_eval(&mut cfg, &out, force)
        }
        Command::Viz {
            episodes, suite, scenario, ..
        } => {
            override_path(&mut cfg.inputs.episodes, episodes);
            override_path(&mut cfg.inputs.suite, suite);
            if scenario.is_some() {
                cfg.inputs.scenario = scenario;
            }
            cmd_viz(&cfg, &out, force)
        }
    })
}

fn override_path(slot: &mut Option<PathBuf>, flag: Option<PathBuf>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn output_dir(flag: Option<&Path>, command: &str) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command),
    }
}

/// Creates `dir`, refusing a non-empty directory unless `force` is set.
fn prepare_out(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| conplan::Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::Validation(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| conplan::Error::io(dir, e))?;
    Ok(())
}

fn require<'a>(slot: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    slot.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing --{flag} (or inputs.{flag} in the config file)")))
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{} does not exist", path.display())))
    }
}

fn contexts(dir: &Path) -> CliResult<Vec<ScenarioContext>> {
    let scenarios = suite::load_suite(dir, Exec::Parallel)?;
    Ok(Exec::Parallel
        .map(&scenarios, |s| ScenarioContext::new(s.clone()))
        .into_iter()
        .collect::<conplan::Result<_>>()?)
}

fn cmd_gen(cfg: &RunConfig, out: &Path, force: bool) -> CliResult<()> {
    for k in [&cfg.gen.scenarios.intersection, &cfg.gen.scenarios.jam] {
        k.validate()?;
    }
    prepare_out(out, force)?;
    let g = &cfg.gen;
    let manifest = suite::write_suite(out, g.kind, g.count, g.seed, &g.scenarios, Exec::Parallel)?;
    cfg.write_resolved(out)?;
    println!("wrote {} scenarios to {}", manifest.scenarios.len(), out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, force: bool) -> CliResult<()> {
    cfg.train.validate()?;
    let suite_dir = require(&cfg.inputs.suite, "suite")?;
    let corpus = contexts(suite_dir)?;
    prepare_out(out, force)?;
    cfg.write_resolved(out)?;
    let outputs = TrainOutputs {
        checkpoint: Some(out.join("checkpoint.json")),
        log: Some(out.join("train_log.csv")),
        labels: Some(out.join("labels.jsonl")),
    };
    let result = train(&corpus, &cfg.train, Exec::Parallel, &outputs)?;
    match result.log.last() {
        Some(l) => println!(
            "trained `{}` for {} epochs ({} steps): reward loss {:.4}, constraint loss {:.4}",
            cfg.train.constraints, l.epoch, result.steps, l.reward_loss, l.constraint_loss
        ),
        None => println!("wrote untrained checkpoint ({} epochs)", cfg.train.epochs),
    }
    Ok(())
}

/// Row label for a checkpoint's training constraints.
fn config_label(constraints: ConstraintSet, mode: ScoringMode) -> String {
    let base = if constraints.is_empty() {
        "baseline - no constraints".to_string()
    } else {
        format!("{constraints}")
    };
    match mode {
        ScoringMode::Baseline if !constraints.is_empty() => format!("{base} [baseline scoring]"),
        ScoringMode::Constrained if constraints.is_empty() => format!("{base} [constrained scoring]"),
        _ => base,
    }
}

fn cmd_eval(cfg: &mut RunConfig, out: &Path, force: bool) -> CliResult<()> {
    let suite_dir = require(&cfg.inputs.suite, "suite")?.to_path_buf();
    let ckpt = require(&cfg.inputs.checkpoint, "checkpoint")?.to_path_buf();
    require_file(&ckpt)?;
    let (model, planner, meta) = load_model(&ckpt)?;
    let constraints: ConstraintSet = meta
        .get("constraints")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| CliError::Validation(format!("{}: bad constraints metadata: {e}", ckpt.display())))?
        .unwrap_or_default();
    let default_mode = if constraints.is_empty() {
        ScoringMode::Baseline
    } else {
        ScoringMode::Constrained
    };
    let mode = cfg.eval.mode.unwrap_or(default_mode);
    cfg.eval.mode = Some(mode);
    let ec = cfg.eval.resolve(mode);
    ec.validate(planner.horizon)?;
    let suite = contexts(&suite_dir)?;
    if suite.is_empty() {
        return Err(CliError::Validation(format!("suite {} has no scenarios", suite_dir.display())));
    }
    prepare_out(out, force)?;
    cfg.write_resolved(out)?;
    let episodes = evaluate_suite(&model, &suite, &planner, &ec, Exec::Parallel)?;
    let report = metrics(&config_label(constraints, mode), &episodes)?;
    write_report_csv(std::slice::from_ref(&report), out.join("metrics.csv"))?;
    let json_path = out.join("metrics.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(conplan::Error::from)?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| conplan::Error::io(&json_path, e))?;
    write_episodes(&episodes, out.join("episodes.jsonl"))?;
    println!("{}", MetricsReport::table_header());
    println!("{}", report.table_row());
    Ok(())
}

fn cmd_viz(cfg: &RunConfig, out: &Path, force: bool) -> CliResult<()> {
    let ep_path = require(&cfg.inputs.episodes, "episodes")?;
    require_file(ep_path)?;
    let suite_dir = require(&cfg.inputs.suite, "suite")?;
    let episodes = read_episodes(ep_path)?;
    let scenarios = suite::load_suite(suite_dir, Exec::Parallel)?;
    let selected: Vec<_> = episodes
        .iter()
        .filter(|e| cfg.inputs.scenario.as_ref().map_or(true, |id| &e.scenario_id == id))
        .collect();
    if selected.is_empty() {
        return Err(CliError::Validation(match &cfg.inputs.scenario {
            Some(id) => format!("no episode for scenario `{id}` in {}", ep_path.display()),
            None => format!("{} holds no episodes", ep_path.display()),
        }));
    }
    prepare_out(out, force)?;
    cfg.write_resolved(out)?;
    let mut frames = 0;
    for e in &selected {
        let sc = scenarios
            .iter()
            .find(|s| s.id == e.scenario_id)
            .ok_or_else(|| {
                CliError::Validation(format!("scenario `{}` not found in {}", e.scenario_id, suite_dir.display()))
            })?;
        frames += export_attention(sc, e, out.join(&e.scenario_id))?;
    }
    println!("wrote {frames} frames for {} episodes to {}", selected.len(), out.display());
    Ok(())
}
