//! Experiment runner: baseline and staged runs with matched seeds and data
//! order, per-run manifests and curves, and the compute-to-loss comparison.
//!
//! Output layout under the experiment directory:
//!
//! ```text
//! experiment.json              summary, spec hash, flags
//! comparison.csv               compute at which each run reaches the baseline's optimality loss
//! dynamics.csv                 alignment gaps, when the spec asks for them
//! <run>/seed-<s>/manifest.json
//! <run>/seed-<s>/curve.csv
//! <run>/seed-<s>/checkpoint/   latest mid-run checkpoint, when enabled
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use staged_core::model::{InitOptions, Model, ModelConfig, TokenBatch};
use staged_core::optim::{AdamConfig, LrSchedule, TrainingState};
use staged_core::schedule::{
    audit_run, estimate_slope, Audit, CurveSample, Decision, LossCurve, Progress, StagePlan, StagedOptions,
    StagedTrainer,
};
use staged_core::growth::GrowthEvent;
use staged_core::train::{evaluate, train_step, BatchSource};

use crate::checkpoint::{load_checkpoint, read_json, save_checkpoint, write_json};
use crate::corpus::{ingest, Corpus, CorpusConfig};
use crate::dynamics::{run_trial, Arm, DynamicsSpec, Trial};
use crate::error::{HarnessError, IoContext, Result};
use crate::synthetic::{MarkovConfig, MarkovSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Markov(MarkovConfig),
    Corpus(CorpusSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub path: PathBuf,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Seeds the placement of the held-out block.
    #[serde(default)]
    pub split_seed: u64,
}

fn default_val_fraction() -> f64 {
    CorpusConfig::default().val_fraction
}

impl DataSpec {
    /// `path` names a JSON data spec if it ends in `.json`, otherwise a
    /// corpus file read as bytes.
    pub fn from_path(path: &Path) -> Result<Self> {
        if path.extension().map_or(false, |e| e == "json") {
            read_json(path)
        } else {
            Ok(DataSpec::Corpus(CorpusSpec {
                path: path.to_path_buf(),
                val_fraction: default_val_fraction(),
                split_seed: 0,
            }))
        }
    }
}

/// An opened data source. Batches depend only on the seed and the step
/// index, so runs sharing a seed see the same data order.
pub enum Dataset {
    Markov(MarkovConfig),
    Corpus(Corpus),
}

impl Dataset {
    pub fn open(spec: &DataSpec) -> Result<Self> {
        Ok(match spec {
            DataSpec::Markov(c) => Dataset::Markov(c.clone()),
            DataSpec::Corpus(c) => Dataset::Corpus(ingest(
                &c.path,
                &CorpusConfig {
                    val_fraction: c.val_fraction,
                    seed: c.split_seed,
                },
            )?),
        })
    }

    pub fn vocab(&self) -> usize {
        match self {
            Dataset::Markov(c) => c.vocab,
            Dataset::Corpus(_) => crate::corpus::BYTE_VOCAB,
        }
    }

    pub fn train_source(&self, batch: usize, seq: usize, seed: u64) -> Result<Box<dyn BatchSource + '_>> {
        Ok(match self {
            Dataset::Markov(c) => Box::new(MarkovSource::new(c.clone(), batch, seq, seed)?),
            Dataset::Corpus(c) => Box::new(c.batches(batch, seq, seed)?),
        })
    }

    /// The held-out set. For synthetic data it is drawn from streams no
    /// training index reaches.
    pub fn val(&self, batch: usize, seq: usize, count: usize, seed: u64) -> Result<Vec<TokenBatch>> {
        match self {
            Dataset::Markov(c) => Ok(MarkovSource::new(c.clone(), batch, seq, seed)?.val_batches(count)),
            Dataset::Corpus(c) => c.val_batches(batch, seq, count),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub batch: usize,
    pub seq: usize,
    pub val_batches: usize,
    pub schedule: LrSchedule,
    pub optimizer: AdamConfig,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            batch: 16,
            seq: 128,
            val_batches: 8,
            schedule: LrSchedule::new(100, 20_000, staged_core::optim::DecayShape::Cosine, 1e-3).expect("valid"),
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    /// A run diverges when its validation loss stays above `factor` times
    /// the initial loss for `patience` steps.
    pub factor: f64,
    pub patience: u64,
}

impl Default for DivergenceSpec {
    fn default() -> Self {
        DivergenceSpec {
            factor: 2.0,
            patience: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    pub plan: StagePlan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSection {
    pub spec: DynamicsSpec,
    pub arms: Vec<Arm>,
}

fn default_extend_factor() -> f64 {
    1.5
}

fn default_loss_tolerance() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub seeds: Vec<u64>,
    pub data: DataSpec,
    pub train: TrainSpec,
    pub options: StagedOptions,
    pub runs: Vec<RunSpec>,
    /// Run whose optimality loss the others are compared at.
    #[serde(default)]
    pub baseline: Option<String>,
    /// Non-baseline runs keep training past their own τ_opt until this
    /// multiple of the baseline's optimality compute, so the crossing is
    /// observable even when it comes late.
    #[serde(default = "default_extend_factor")]
    pub extend_factor: f64,
    #[serde(default)]
    pub divergence: DivergenceSpec,
    /// Relative tolerance for loss preservation in the run audit.
    #[serde(default = "default_loss_tolerance")]
    pub loss_tolerance: f64,
    /// Save a resumable checkpoint every this many steps.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    #[serde(default)]
    pub dynamics: Option<DynamicsSection>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.runs.is_empty() {
            return Err(HarnessError::Experiment("need at least one seed and one run".into()));
        }
        for (i, r) in self.runs.iter().enumerate() {
            r.plan.validate()?;
            if self.runs[..i].iter().any(|q| q.name == r.name) {
                return Err(HarnessError::Experiment(format!("duplicate run name `{}`", r.name)));
            }
        }
        if let Some(b) = &self.baseline {
            if !self.runs.iter().any(|r| &r.name == b) {
                return Err(HarnessError::Experiment(format!("baseline `{b}` is not a run")));
            }
        }
        if !(self.extend_factor >= 1.0) {
            return Err(HarnessError::Experiment("extend_factor must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the spec's JSON encoding.
    pub fn config_hash(&self) -> String {
        hash_json(self)
    }
}

pub fn hash_json<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Stopped at the requested step; resumable from `checkpoint/`.
    Interrupted { step: u64 },
    Diverged { step: u64, loss: f64 },
    BudgetExceeded { detail: String },
    NonFinite { detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimality {
    pub step: u64,
    pub tokens: u64,
    pub loss: f64,
    pub compute: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub run: String,
    pub seed: u64,
    pub config_hash: String,
    pub plan: StagePlan,
    pub options: StagedOptions,
    pub status: RunStatus,
    pub initial_loss: f64,
    pub optimality: Option<Optimality>,
    pub steps: u64,
    pub tokens: u64,
    pub compute: f64,
    pub final_config: ModelConfig,
    pub events: Vec<GrowthEvent>,
    pub decisions: Vec<Decision>,
    pub audit: Audit,
    /// Curve CSV, relative to the manifest.
    pub curve: PathBuf,
    pub flags: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Flags a run whose validation loss stays above `factor × initial` for
/// `patience` steps.
#[derive(Clone, Debug)]
pub struct DivergenceDetector {
    limit: f64,
    patience: u64,
    since: Option<u64>,
}

impl DivergenceDetector {
    pub fn new(spec: DivergenceSpec, initial_loss: f64) -> Self {
        DivergenceDetector {
            limit: spec.factor * initial_loss,
            patience: spec.patience,
            since: None,
        }
    }

    /// Returns true once the run counts as diverged.
    pub fn observe(&mut self, step: u64, loss: f64) -> bool {
        if !(loss <= self.limit) {
            let since = *self.since.get_or_insert(step);
            step - since >= self.patience
        } else {
            self.since = None;
            false
        }
    }
}

pub fn write_curve(path: &Path, curve: &LossCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in &curve.samples {
        w.serialize(s)?;
    }
    w.flush().at(path)?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<LossCurve> {
    let mut r = csv::Reader::from_path(path)?;
    let mut curve = LossCurve::new();
    for row in r.deserialize() {
        let s: CurveSample = row?;
        curve.samples.push(s);
    }
    Ok(curve)
}

/// Everything a single run needs besides its plan.
pub struct RunContext<'a> {
    pub experiment: &'a str,
    pub config_hash: &'a str,
    pub dataset: &'a Dataset,
    pub train: &'a TrainSpec,
    pub options: StagedOptions,
    pub divergence: DivergenceSpec,
    pub loss_tolerance: f64,
    pub checkpoint_every: Option<u64>,
    /// Stop after this global step and leave a checkpoint behind.
    pub stop_at: Option<u64>,
}

pub fn initial_state(config: &ModelConfig, train: &TrainSpec, seed: u64) -> Result<TrainingState<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::init(config.clone(), InitOptions::default(), &mut rng)?;
    Ok(TrainingState::new(model, train.schedule, train.optimizer)?)
}

#[derive(Serialize, Deserialize)]
struct ResumeInfo {
    run: String,
    seed: u64,
    config_hash: String,
    progress: Progress,
}

/// Runs `plan` from a fresh state and writes the manifest and curve into
/// `dir`.
pub fn run_staged(ctx: &RunContext, name: &str, plan: &StagePlan, seed: u64, dir: &Path) -> Result<RunManifest> {
    let val = ctx.dataset.val(ctx.train.batch, ctx.train.seq, ctx.train.val_batches, seed)?;
    let state = initial_state(&plan.base, ctx.train, seed)?;
    let trainer = StagedTrainer::new(plan, state, &val, ctx.options.clone(), seed)?;
    drive(ctx, name, seed, trainer, &val, dir)
}

/// Continues a run from a checkpoint written by [`run_staged`].
pub fn resume_staged(ctx: &RunContext, plan: &StagePlan, checkpoint: &Path, dir: &Path) -> Result<RunManifest> {
    let (state, manifest) = load_checkpoint::<f64>(checkpoint)?;
    let info: ResumeInfo = serde_json::from_value(manifest.metadata).map_err(|source| HarnessError::Json {
        path: checkpoint.to_path_buf(),
        source,
    })?;
    let val = ctx.dataset.val(ctx.train.batch, ctx.train.seq, ctx.train.val_batches, info.seed)?;
    let trainer = StagedTrainer::resume(plan, state, info.progress, ctx.options.clone(), info.seed)?;
    drive(ctx, &info.run, info.seed, trainer, &val, dir)
}

fn checkpoint(trainer: &StagedTrainer<'_, f64>, name: &str, seed: u64, config_hash: &str, dir: &Path) -> Result<()> {
    let info = ResumeInfo {
        run: name.into(),
        seed,
        config_hash: config_hash.into(),
        progress: trainer.progress.clone(),
    };
    let meta = serde_json::to_value(&info).expect("serializable");
    save_checkpoint(&trainer.state, &dir.join("checkpoint"), meta)?;
    Ok(())
}

fn drive(
    ctx: &RunContext,
    name: &str,
    seed: u64,
    mut trainer: StagedTrainer<'_, f64>,
    val: &[TokenBatch],
    dir: &Path,
) -> Result<RunManifest> {
    std::fs::create_dir_all(dir).at(dir)?;
    let mut data = ctx.dataset.train_source(ctx.train.batch, ctx.train.seq, seed)?;
    let mut detector = DivergenceDetector::new(ctx.divergence, trainer.progress.initial_loss);
    let mut status = RunStatus::Completed;
    while !trainer.is_done() {
        if let Some(stop) = ctx.stop_at.filter(|&s| trainer.progress.step >= s) {
            checkpoint(&trainer, name, seed, ctx.config_hash, dir)?;
            status = RunStatus::Interrupted { step: stop };
            break;
        }
        match trainer.advance(data.as_mut(), val) {
            Ok(Some(sample)) => {
                if detector.observe(sample.step, sample.val_loss) {
                    status = RunStatus::Diverged {
                        step: sample.step,
                        loss: sample.val_loss,
                    };
                    break;
                }
                if ctx.checkpoint_every.map_or(false, |k| k > 0 && sample.step % k == 0) {
                    checkpoint(&trainer, name, seed, ctx.config_hash, dir)?;
                }
            }
            Ok(None) => {}
            Err(e @ staged_core::Error::BudgetExceeded { .. }) => {
                status = RunStatus::BudgetExceeded { detail: e.to_string() };
                break;
            }
            Err(e @ (staged_core::Error::NonFiniteLoss { .. } | staged_core::Error::NonFiniteGradient { .. })) => {
                status = RunStatus::NonFinite { detail: e.to_string() };
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let plan = trainer.plan().clone();
    let p = trainer.progress.clone();
    let final_config = trainer.state.model.config.clone();
    let finished = matches!(status, RunStatus::Completed);
    let audit = if finished {
        audit_run(&plan, &p.curve, &p.decisions, &p.events, &ctx.options, ctx.loss_tolerance)
    } else {
        Audit::default()
    };
    let optimality = p.optimal.map(|(step, loss, compute)| Optimality {
        step,
        tokens: p.curve.samples.iter().find(|s| s.step == step).map_or(0, |s| s.tokens),
        loss,
        compute,
    });
    let mut flags = Vec::new();
    match &status {
        RunStatus::Completed | RunStatus::Interrupted { .. } => {}
        RunStatus::Diverged { .. } => flags.push("diverged".to_string()),
        RunStatus::BudgetExceeded { .. } => flags.push("budget_exceeded".to_string()),
        RunStatus::NonFinite { .. } => flags.push("non_finite".to_string()),
    }
    if !audit.passed() {
        flags.push("audit_failed".into());
    }
    let curve_path = dir.join("curve.csv");
    write_curve(&curve_path, &p.curve)?;
    let manifest = RunManifest {
        experiment: ctx.experiment.into(),
        run: name.into(),
        seed,
        config_hash: ctx.config_hash.into(),
        plan,
        options: ctx.options.clone(),
        status,
        initial_loss: p.initial_loss,
        optimality,
        steps: p.step,
        tokens: p.tokens,
        compute: p.compute,
        final_config,
        events: p.events,
        decisions: p.decisions,
        audit,
        curve: PathBuf::from("curve.csv"),
        flags,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub config_hash: String,
    pub steps: u64,
    pub tokens: u64,
    pub compute: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
}

/// Plain training for a fixed number of steps, no growth. Writes
/// `curve.csv`, `summary.json` and `checkpoint/` into `out`. The curve's
/// slope column uses the same axis as the staged schedule, so it can feed
/// τ/ρ estimation directly.
#[allow(clippy::too_many_arguments)]
pub fn train_fixed(
    config: &ModelConfig,
    train: &TrainSpec,
    dataset: &Dataset,
    seed: u64,
    steps: u64,
    cadence: u64,
    window: usize,
    out: &Path,
) -> Result<TrainSummary> {
    if cadence == 0 {
        return Err(HarnessError::Experiment("cadence must be positive".into()));
    }
    std::fs::create_dir_all(out).at(out)?;
    let val = dataset.val(train.batch, train.seq, train.val_batches, seed)?;
    let mut data = dataset.train_source(train.batch, train.seq, seed)?;
    let mut state = initial_state(config, train, seed)?;
    let n = staged_core::model::param_count(config, false) as f64;
    let initial_loss = evaluate(&state.model, &val)?;
    let mut curve = LossCurve::new();
    let (mut tokens, mut compute) = (0u64, 0.0);
    for step in 1..=steps {
        let batch = data.batch(step - 1)?;
        let stats = train_step(&mut state, &batch)?;
        tokens += batch.target_count() as u64;
        compute += 6.0 * n * batch.target_count() as f64;
        if step % cadence == 0 || step == steps {
            let val_loss = evaluate(&state.model, &val)?;
            curve.push(CurveSample {
                step,
                tokens,
                compute,
                val_loss,
                lr: stats.lr,
                slope_estimate: None,
                stage_index: 0,
            })?;
            let slope = estimate_slope(&curve, window).ok();
            if let Some(last) = curve.samples.last_mut() {
                last.slope_estimate = slope;
            }
        }
    }
    let config_hash = hash_json(&(config, train, seed));
    let meta = serde_json::json!({ "seed": seed, "data_position": steps, "config_hash": config_hash });
    save_checkpoint(&state, &out.join("checkpoint"), meta)?;
    write_curve(&out.join("curve.csv"), &curve)?;
    let summary = TrainSummary {
        seed,
        config_hash,
        steps,
        tokens,
        compute,
        initial_loss,
        final_loss: curve.last().map_or(initial_loss, |s| s.val_loss),
        checkpoint: PathBuf::from("checkpoint"),
        curve: PathBuf::from("curve.csv"),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Compute at which a run first reaches the baseline's optimality loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub seed: u64,
    pub run: String,
    pub baseline_loss: f64,
    pub baseline_compute: f64,
    pub compute_at_loss: Option<f64>,
    /// `1 - compute_at_loss / baseline_compute`.
    pub saving: Option<f64>,
}

pub fn crossing(seed: u64, run: &str, baseline: &Optimality, curve: &LossCurve) -> Crossing {
    let at = curve.first_reaching(baseline.loss).map(|s| s.compute);
    Crossing {
        seed,
        run: run.into(),
        baseline_loss: baseline.loss,
        baseline_compute: baseline.compute,
        compute_at_loss: at,
        saving: at.map(|c| 1.0 - c / baseline.compute),
    }
}

pub fn write_crossings(path: &Path, rows: &[Crossing]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: String,
    pub seed: u64,
    pub manifest: PathBuf,
    pub status: RunStatus,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRow {
    pub seed: u64,
    pub arm: Arm,
    pub max_gap: f64,
    pub within: bool,
    pub matched_rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config_hash: String,
    pub baseline: Option<String>,
    pub runs: Vec<RunSummary>,
    pub crossings: Vec<Crossing>,
    pub dynamics: Vec<Trial>,
    pub flags: Vec<String>,
}

impl ExperimentReport {
    /// Whether any run diverged, ran out of budget or failed its audit.
    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| !r.flags.is_empty())
    }
}

pub fn run_dir(out: &Path, run: &str, seed: u64) -> PathBuf {
    out.join(run).join(format!("seed-{seed}"))
}

pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentReport> {
    spec.validate()?;
    std::fs::create_dir_all(out).at(out)?;
    let hash = spec.config_hash();
    write_json(&out.join("spec.json"), spec)?;
    let dataset = Dataset::open(&spec.data)?;
    for r in &spec.runs {
        if r.plan.base.vocab != dataset.vocab() {
            return Err(HarnessError::Experiment(format!(
                "run `{}` has vocabulary {} but the data has {}",
                r.name,
                r.plan.base.vocab,
                dataset.vocab()
            )));
        }
    }
    let mut report = ExperimentReport {
        name: spec.name.clone(),
        config_hash: hash.clone(),
        baseline: spec.baseline.clone(),
        runs: Vec::new(),
        crossings: Vec::new(),
        dynamics: Vec::new(),
        flags: Vec::new(),
    };
    let ctx = |options: StagedOptions| RunContext {
        experiment: &spec.name,
        config_hash: &hash,
        dataset: &dataset,
        train: &spec.train,
        options,
        divergence: spec.divergence,
        loss_tolerance: spec.loss_tolerance,
        checkpoint_every: spec.checkpoint_every,
        stop_at: None,
    };
    let baseline = spec.baseline.as_ref().and_then(|b| spec.runs.iter().find(|r| &r.name == b));
    for &seed in &spec.seeds {
        let mut reference = None;
        if let Some(b) = baseline {
            let dir = run_dir(out, &b.name, seed);
            let m = run_staged(&ctx(spec.options.clone()), &b.name, &b.plan, seed, &dir)?;
            reference = m.optimality;
            report.runs.push(summary(&m, &dir));
        }
        for r in spec.runs.iter().filter(|r| Some(&r.name) != spec.baseline.as_ref()) {
            let options = StagedOptions {
                extend_to_compute: reference.map(|o| o.compute * spec.extend_factor),
                ..spec.options.clone()
            };
            let dir = run_dir(out, &r.name, seed);
            let m = run_staged(&ctx(options), &r.name, &r.plan, seed, &dir)?;
            if let Some(o) = &reference {
                let curve = read_curve(&dir.join(&m.curve))?;
                report.crossings.push(crossing(seed, &r.name, o, &curve));
            }
            report.runs.push(summary(&m, &dir));
        }
    }
    if !report.crossings.is_empty() {
        write_crossings(&out.join("comparison.csv"), &report.crossings)?;
    }
    if let Some(d) = &spec.dynamics {
        let mut rows = Vec::new();
        for &seed in &spec.seeds {
            let mut data = dataset.train_source(spec.train.batch, spec.train.seq, seed)?;
            let val = dataset.val(spec.train.batch, spec.train.seq, spec.train.val_batches, seed)?;
            let trial = run_trial(&d.spec, data.as_mut(), &val, seed, &d.arms)?;
            rows.extend(trial.arms.iter().map(|a| DynamicsRow {
                seed,
                arm: a.arm,
                max_gap: a.max_gap,
                within: a.within,
                matched_rho: trial.matched_rho,
            }));
            report.dynamics.push(trial);
        }
        let path = out.join("dynamics.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().at(&path)?;
        for &arm in &d.arms {
            let outside = rows.iter().filter(|r| r.arm == arm && !r.within).count();
            if outside > 0 {
                report.flags.push(format!(
                    "{}: training dynamics not preserved in {outside} of {} seeds",
                    arm.name(),
                    spec.seeds.len()
                ));
            }
        }
    }
    for r in &report.runs {
        report.flags.extend(r.flags.iter().map(|f| format!("{} seed {}: {f}", r.run, r.seed)));
    }
    write_json(&out.join("experiment.json"), &report)?;
    Ok(report)
}

fn summary(m: &RunManifest, dir: &Path) -> RunSummary {
    RunSummary {
        run: m.run.clone(),
        seed: m.seed,
        manifest: dir.join("manifest.json"),
        status: m.status.clone(),
        flags: m.flags.clone(),
    }
}
