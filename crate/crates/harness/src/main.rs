use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use staged_core::growth::{GrowthKind, GrowthOp, LrPolicy, OptimizerPolicy};
use staged_core::model::ModelConfig;
use staged_core::scaling::{optimal_schedule, ratio_constrained_schedule, ScalingLawConstants, SolverOptions};
use staged_core::schedule::{estimate_tau_rho, StagePlan, StagedOptions};
use staged_harness::checkpoint::{load_checkpoint, read_json, save_checkpoint, write_json};
use staged_harness::experiment::{
    read_curve, resume_staged, run_experiment, run_staged, train_fixed, DataSpec, Dataset, DivergenceSpec,
    ExperimentSpec, RunContext, TrainSpec,
};
use staged_harness::report::write_report;
use staged_harness::{HarnessError, Result};

#[derive(Parser)]
#[command(name = "staged", version, about = "Staged training with loss-preserving growth operators")]
struct Cli {
    /// Overrides the seed(s) named in config files.
    #[arg(long, env = "SEED", global = true)]
    seed: Option<u64>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model for a fixed number of steps.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus file, or a `.json` data spec.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a growth operator to a checkpoint.
    Grow {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "depth2x")]
        op: String,
        #[arg(long, value_parser = ["grow", "zero"], default_value = "grow")]
        opt_policy: String,
        #[arg(long, value_parser = ["rho_rewind", "restart", "continue"], default_value = "rho_rewind")]
        lr_policy: String,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        /// Symmetry-breaking noise for width growth.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the compute-optimal multi-stage schedule under a loss law.
    ScheduleOptimal {
        /// `key = value` constants; missing keys keep their defaults.
        #[arg(long)]
        constants: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        stages: usize,
        #[arg(long, default_value_t = 3.0)]
        target_loss: f64,
        /// Pin the final model size.
        #[arg(long)]
        target_n: Option<f64>,
        /// Restrict consecutive size ratios to this set, e.g. `2,4,8`.
        #[arg(long, value_delimiter = ',')]
        ratio_set: Option<Vec<f64>>,
        /// Also write `<out>.json` and `<out>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the slope-triggered staged schedule.
    SchedulePractical {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run an experiment spec: baselines, staged runs, comparison.
    Experiment {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate τ and ρ for a growth operator from two curves.
    EstimateConstants {
        #[arg(long)]
        orig_curve: PathBuf,
        #[arg(long)]
        target_curve: PathBuf,
        #[arg(long)]
        pre_growth_step: u64,
        #[arg(long, default_value_t = 20)]
        window: usize,
    },
    /// Compute-saving crossings and curve overlays for a directory of runs.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// `.csv`, `.png`, or a directory for both.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Config file for `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainConfig {
    model: ModelConfig,
    #[serde(default)]
    train: TrainSpec,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_cadence")]
    cadence: u64,
    #[serde(default = "default_window")]
    window: usize,
}

fn default_cadence() -> u64 {
    StagedOptions::default().cadence
}

fn default_window() -> usize {
    StagedOptions::default().window
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::new(4, 64, 4, staged_harness::corpus::BYTE_VOCAB, 128),
            train: TrainSpec::default(),
            seed: 0,
            cadence: default_cadence(),
            window: default_window(),
        }
    }
}

/// Plan file for `schedule-practical`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PlanFile {
    #[serde(default = "default_name")]
    name: String,
    plan: StagePlan,
    #[serde(default)]
    train: TrainSpec,
    #[serde(default)]
    options: StagedOptions,
    #[serde(default)]
    divergence: DivergenceSpec,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    checkpoint_every: Option<u64>,
    /// Stop after this step, leaving a resumable checkpoint.
    #[serde(default)]
    stop_at: Option<u64>,
}

fn default_name() -> String {
    "staged".into()
}

impl Default for PlanFile {
    fn default() -> Self {
        let base = TrainConfig::default().model;
        let plan = StagePlan::from_ops(
            base,
            &[GrowthKind::Depth2x, GrowthKind::Depth2x],
            &staged_core::schedule::PracticalConstants::default(),
        )
        .expect("default plan is valid");
        PlanFile {
            name: default_name(),
            plan,
            train: TrainSpec::default(),
            options: StagedOptions::default(),
            divergence: DivergenceSpec::default(),
            seed: 0,
            checkpoint_every: None,
            stop_at: None,
        }
    }
}

fn need<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| HarnessError::Experiment(format!("missing --{flag}")))
}

fn print_json<S: Serialize>(value: &S) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn load_or_default<D: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<D> {
    match path {
        Some(p) => read_json(p),
        None => Ok(D::default()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { config, data, steps, out } => {
            let mut cfg: TrainConfig = load_or_default(config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if cli.print_config {
                print_json(&cfg);
                return Ok(ExitCode::SUCCESS);
            }
            let dataset = Dataset::open(&DataSpec::from_path(&need(data, "data")?)?)?;
            let out = need(out, "out")?;
            let summary = train_fixed(
                &cfg.model,
                &cfg.train,
                &dataset,
                cfg.seed,
                need(steps, "steps")?,
                cfg.cadence,
                cfg.window,
                &out,
            )?;
            print_json(&summary);
        }
        Command::Grow {
            checkpoint,
            op,
            opt_policy,
            lr_policy,
            rho,
            noise,
            out,
        } => {
            let op = GrowthOp {
                kind: GrowthKind::parse(&op)?,
                optimizer: if opt_policy == "zero" { OptimizerPolicy::Zero } else { OptimizerPolicy::Grow },
                lr: match lr_policy.as_str() {
                    "restart" => LrPolicy::Restart,
                    "continue" => LrPolicy::Continue,
                    _ => LrPolicy::RhoRewind,
                },
                rho,
                noise,
            };
            if cli.print_config {
                print_json(&op);
                return Ok(ExitCode::SUCCESS);
            }
            let (state, manifest) = load_checkpoint::<f64>(&need(checkpoint, "checkpoint")?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            let grown = op.apply(&state, &mut rng)?;
            let meta = serde_json::json!({ "grown_from": manifest.metadata, "op": op });
            save_checkpoint(&grown, &need(out, "out")?, meta)?;
            println!(
                "{}: {} -> {} parameters, clock {} -> {}",
                op.kind.name(),
                state.model.params.count(),
                grown.model.params.count(),
                state.clock(),
                grown.clock()
            );
        }
        Command::ScheduleOptimal {
            constants,
            stages,
            target_loss,
            target_n,
            ratio_set,
            out,
        } => {
            let c = match &constants {
                Some(p) => ScalingLawConstants::parse(
                    &std::fs::read_to_string(p).map_err(|source| HarnessError::Io { path: p.clone(), source })?,
                )?,
                None => ScalingLawConstants::default(),
            };
            if cli.print_config {
                print!("{}", c.to_text());
                return Ok(ExitCode::SUCCESS);
            }
            let schedule = match &ratio_set {
                Some(r) => ratio_constrained_schedule(stages, target_loss, r, &c, &SolverOptions::default())?,
                None => optimal_schedule(stages, target_loss, target_n, &c)?,
            };
            print_json(&schedule);
            if let Some(out) = out {
                write_json(&out.with_extension("json"), &schedule)?;
                let path = out.with_extension("csv");
                let mut w = csv::Writer::from_path(&path)?;
                for s in &schedule.stages {
                    w.serialize(s)?;
                }
                w.flush().map_err(|source| HarnessError::Io { path, source })?;
            }
        }
        Command::SchedulePractical { plan, data, out, resume } => {
            let mut pf: PlanFile = load_or_default(plan.as_deref())?;
            if let Some(s) = cli.seed {
                pf.seed = s;
            }
            if cli.print_config {
                print_json(&pf);
                return Ok(ExitCode::SUCCESS);
            }
            let dataset = Dataset::open(&DataSpec::from_path(&need(data, "data")?)?)?;
            let hash = staged_harness::experiment::hash_json(&pf);
            let ctx = RunContext {
                experiment: &pf.name,
                config_hash: &hash,
                dataset: &dataset,
                train: &pf.train,
                options: pf.options.clone(),
                divergence: pf.divergence,
                loss_tolerance: 1e-6,
                checkpoint_every: pf.checkpoint_every,
                stop_at: pf.stop_at,
            };
            let out = need(out, "out")?;
            let m = match resume {
                Some(ckpt) => resume_staged(&ctx, &pf.plan, &ckpt, &out)?,
                None => run_staged(&ctx, &pf.name, &pf.plan, pf.seed, &out)?,
            };
            print_json(&m.status);
            if !m.flags.is_empty() {
                eprintln!("flags: {}", m.flags.join(", "));
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Experiment { spec, out } => {
            let mut spec: ExperimentSpec = read_json(&need(spec, "spec")?)?;
            if let Some(s) = cli.seed {
                spec.seeds = vec![s];
            }
            if cli.print_config {
                print_json(&spec);
                return Ok(ExitCode::SUCCESS);
            }
            let report = run_experiment(&spec, &need(out, "out")?)?;
            for c in &report.crossings {
                println!(
                    "{} seed {}: saving {}",
                    c.run,
                    c.seed,
                    c.saving.map_or("not reached".into(), |s| format!("{:.1}%", 100.0 * s))
                );
            }
            for f in &report.flags {
                eprintln!("flag: {f}");
            }
            if report.failed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::EstimateConstants {
            orig_curve,
            target_curve,
            pre_growth_step,
            window,
        } => {
            let orig = read_curve(&orig_curve)?;
            let target = read_curve(&target_curve)?;
            let index = orig
                .samples
                .iter()
                .rposition(|s| s.step <= pre_growth_step)
                .ok_or_else(|| HarnessError::Experiment(format!("no sample at or before step {pre_growth_step}")))?;
            let tr = estimate_tau_rho(&orig, &target, index, window)?;
            println!("tau = {}", tr.tau);
            println!("rho = {}", tr.rho);
            println!("pre_growth_step = {}", tr.pre_growth_step);
            println!("target_step = {}", tr.target_step);
        }
        Command::Report { runs, out } => {
            for s in write_report(&runs, &out)? {
                println!(
                    "{}: saving in {}/{} seeds, mean {}",
                    s.run,
                    s.seeds_saving,
                    s.seeds,
                    s.mean_saving.map_or("n/a".into(), |m| format!("{:.1}%", 100.0 * m))
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
