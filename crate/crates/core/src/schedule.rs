//! Practical stage schedule: grow when the loss-vs-compute slope flattens
//! past a threshold τ, rewind the learning-rate clock by ρ, and stop the
//! last stage at τ_opt.
//!
//! Slopes are least-squares fits of validation loss against log10 of
//! compute over a trailing window of the current stage. Within a stage the
//! compute coordinate is `6 N (tokens per step) * clock`: for a model
//! trained from scratch this is its cumulative compute, and after a rewind
//! it is the compute a same-size model would have spent to reach the same
//! point, which keeps τ_opt comparable across stages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::growth::{GrowthEvent, GrowthKind, GrowthOp};
use crate::model::{param_count, ModelConfig, TokenBatch};
use crate::optim::TrainingState;
use crate::scalar::Scalar;
use crate::train::{evaluate, train_step, BatchSource};

pub const SLOPE_AXIS_LOG10_COMPUTE: &str = "log10_compute";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub step: u64,
    pub tokens: u64,
    pub compute: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub slope_estimate: Option<f64>,
    pub stage_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub samples: Vec<CurveSample>,
}

impl LossCurve {
    pub fn new() -> Self {
        LossCurve::default()
    }

    /// Curve from `(compute, loss)` pairs; steps and tokens are indices.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        let mut c = LossCurve::new();
        for (i, &(compute, val_loss)) in points.iter().enumerate() {
            c.push(CurveSample {
                step: i as u64 + 1,
                tokens: i as u64 + 1,
                compute,
                val_loss,
                lr: 0.0,
                slope_estimate: None,
                stage_index: 0,
            })?;
        }
        Ok(c)
    }

    pub fn push(&mut self, s: CurveSample) -> Result<()> {
        if let Some(last) = self.samples.last() {
            if !(s.compute > last.compute) {
                return Err(Error::Contract(format!(
                    "compute must increase along a curve: {} after {}",
                    s.compute, last.compute
                )));
            }
        }
        self.samples.push(s);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&CurveSample> {
        self.samples.last()
    }

    /// First sample whose loss is at or below `loss`.
    pub fn first_reaching(&self, loss: f64) -> Option<&CurveSample> {
        self.samples.iter().find(|s| s.val_loss <= loss)
    }

    /// Loss at `tokens` by linear interpolation between samples.
    pub fn loss_at_tokens(&self, tokens: f64) -> Option<f64> {
        let s = &self.samples;
        let i = s.iter().position(|p| p.tokens as f64 >= tokens)?;
        if i == 0 {
            return (s[0].tokens as f64 == tokens).then_some(s[0].val_loss);
        }
        let (a, b) = (&s[i - 1], &s[i]);
        let w = (tokens - a.tokens as f64) / (b.tokens - a.tokens) as f64;
        Some(a.val_loss + w * (b.val_loss - a.val_loss))
    }

    /// Tokens at which the (interpolated) curve first reaches `loss`.
    pub fn tokens_reaching(&self, loss: f64) -> Option<f64> {
        let s = &self.samples;
        let i = s.iter().position(|p| p.val_loss <= loss)?;
        if i == 0 {
            return Some(s[0].tokens as f64);
        }
        let (a, b) = (&s[i - 1], &s[i]);
        let w = (a.val_loss - loss) / (a.val_loss - b.val_loss);
        Some(a.tokens as f64 + w * (b.tokens - a.tokens) as f64)
    }
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Slope of loss against log10(compute) over the last `window` samples.
pub fn estimate_slope(curve: &LossCurve, window: usize) -> Result<f64> {
    slope_over(&curve.samples, window)
}

fn slope_over(samples: &[CurveSample], window: usize) -> Result<f64> {
    if window < 3 {
        return Err(Error::Config(format!("slope window must be at least 3, got {window}")));
    }
    if samples.len() < window {
        return Err(Error::InsufficientData {
            needed: window,
            got: samples.len(),
        });
    }
    let tail = &samples[samples.len() - window..];
    let xs: Vec<f64> = tail.iter().map(|s| s.compute.log10()).collect();
    let ys: Vec<f64> = tail.iter().map(|s| s.val_loss).collect();
    Ok(ls_slope(&xs, &ys))
}

/// True once the slope is flatter than `tau` (strictly).
pub fn should_transition(curve: &LossCurve, tau: f64, window: usize) -> Result<bool> {
    Ok(estimate_slope(curve, window)? > tau)
}

pub fn slope_exceeds(slope: f64, tau: f64) -> bool {
    slope > tau
}

/// `round(rho * s_pre)`, the clock handed to the grown model.
pub fn rewind_clock(s_pre: u64, rho: f64) -> Result<u64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")));
    }
    Ok(crate::growth::rewind(s_pre, rho))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauRho {
    pub tau: f64,
    pub rho: f64,
    pub pre_growth_step: u64,
    pub target_step: u64,
}

/// τ is the original curve's slope at the pre-growth sample; ρ is the step
/// of the earliest target-curve sample at or below that loss, over the
/// pre-growth step.
pub fn estimate_tau_rho(orig: &LossCurve, target: &LossCurve, pre_growth_index: usize, window: usize) -> Result<TauRho> {
    let pre = orig.samples.get(pre_growth_index).ok_or(Error::Index {
        what: "pre-growth sample",
        index: pre_growth_index,
        bound: orig.len(),
    })?;
    let tau = slope_over(&orig.samples[..=pre_growth_index], window)?;
    let hit = target
        .first_reaching(pre.val_loss)
        .ok_or(Error::InfeasibleMatch { loss: pre.val_loss })?;
    if pre.step == 0 {
        return Err(Error::Input("pre-growth step must be positive".into()));
    }
    Ok(TauRho {
        tau,
        rho: hit.step as f64 / pre.step as f64,
        pre_growth_step: pre.step,
        target_step: hit.step,
    })
}

/// Thresholds and rewind ratios; the values are only meaningful under the
/// slope convention named by `axis`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PracticalConstants {
    pub tau_opt: f64,
    pub tau_depth: f64,
    pub rho_depth: f64,
    pub tau_width: f64,
    pub rho_width: f64,
    pub tau_depth_width: f64,
    pub rho_depth_width: f64,
    pub axis: String,
}

impl Default for PracticalConstants {
    fn default() -> Self {
        PracticalConstants {
            tau_opt: -0.052,
            tau_depth: -0.0575,
            rho_depth: 0.70,
            tau_width: -0.0475,
            rho_width: 0.55,
            tau_depth_width: -0.03,
            rho_depth_width: 0.40,
            axis: SLOPE_AXIS_LOG10_COMPUTE.into(),
        }
    }
}

impl PracticalConstants {
    pub fn validate(&self) -> Result<()> {
        for tau in [self.tau_opt, self.tau_depth, self.tau_width, self.tau_depth_width] {
            if !(tau < 0.0) {
                return Err(Error::Config(format!("thresholds must be negative, got {tau}")));
            }
        }
        for rho in [self.rho_depth, self.rho_width, self.rho_depth_width] {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")));
            }
        }
        Ok(())
    }

    /// `(τ, ρ)` for a loss-preserving operator.
    pub fn for_kind(&self, kind: GrowthKind) -> Option<(f64, f64)> {
        match kind {
            GrowthKind::Depth2x => Some((self.tau_depth, self.rho_depth)),
            GrowthKind::Width2x => Some((self.tau_width, self.rho_width)),
            GrowthKind::DepthThenWidth => Some((self.tau_depth_width, self.rho_depth_width)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    /// `None` for the first stage.
    pub op: Option<GrowthOp>,
    /// Slope threshold ending the previous stage.
    pub tau: f64,
    /// Grow at this global step instead of by threshold.
    #[serde(default)]
    pub grow_at_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub base: ModelConfig,
    pub stages: Vec<StageEntry>,
    pub tau_opt: f64,
}

impl StagePlan {
    /// Plan whose first stage trains `base`, followed by `ops` with their
    /// τ and ρ taken from `constants`.
    pub fn from_ops(base: ModelConfig, ops: &[GrowthKind], constants: &PracticalConstants) -> Result<Self> {
        let mut stages = vec![StageEntry {
            op: None,
            tau: constants.tau_opt,
            grow_at_step: None,
        }];
        for &k in ops {
            let (tau, rho) = constants
                .for_kind(k)
                .ok_or_else(|| Error::Config(format!("no constants for `{}`", k.name())))?;
            stages.push(StageEntry {
                op: Some(GrowthOp::new(k).with_rho(rho)),
                tau,
                grow_at_step: None,
            });
        }
        let plan = StagePlan {
            base,
            stages,
            tau_opt: constants.tau_opt,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let first = self.stages.first().ok_or_else(|| Error::Config("empty stage plan".into()))?;
        if first.op.is_some() {
            return Err(Error::Config("the first stage must not grow".into()));
        }
        if !(self.tau_opt < 0.0) {
            return Err(Error::Config(format!("tau_opt must be negative, got {}", self.tau_opt)));
        }
        for (i, s) in self.stages.iter().enumerate().skip(1) {
            let op = s
                .op
                .as_ref()
                .ok_or_else(|| Error::Config(format!("stage {i} has no growth operator")))?;
            op.validate()?;
            if !(s.tau < 0.0) && s.grow_at_step.is_none() {
                return Err(Error::Config(format!("stage {i}: tau must be negative, got {}", s.tau)));
            }
        }
        Ok(())
    }

    /// Number of stages, M.
    pub fn m(&self) -> usize {
        self.stages.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagedOptions {
    /// Validate every `cadence` global steps.
    pub cadence: u64,
    pub window: usize,
    /// Abort a stage that has not crossed its threshold after this many
    /// steps.
    pub max_stage_steps: u64,
    /// Ignore threshold crossings until a stage has trained this many
    /// steps. Short runs start on a plateau in log-compute whose slope is
    /// already above any useful τ.
    #[serde(default)]
    pub min_stage_steps: u64,
    /// After the last stage stops at τ_opt, keep training until this much
    /// cumulative compute has been spent. The extra samples are only for
    /// measurement and are marked by `optimality_step` in the result.
    pub extend_to_compute: Option<f64>,
}

impl Default for StagedOptions {
    fn default() -> Self {
        StagedOptions {
            cadence: 50,
            window: 20,
            max_stage_steps: 100_000,
            min_stage_steps: 0,
            extend_to_compute: None,
        }
    }
}

/// Why a stage ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub stage: usize,
    pub step: u64,
    pub clock: u64,
    pub slope: Option<f64>,
    pub threshold: f64,
    pub action: String,
}

#[derive(Clone, Debug)]
pub struct StagedRun<T> {
    pub state: TrainingState<T>,
    pub curve: LossCurve,
    pub events: Vec<GrowthEvent>,
    pub decisions: Vec<Decision>,
    pub initial_loss: f64,
    /// Global step at which the last stage met τ_opt.
    pub optimality_step: u64,
    pub optimality_loss: f64,
    pub optimality_compute: f64,
    pub steps: u64,
}

/// Where the driver is in the plan. Together with the training state this
/// is everything needed to resume a run bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub step: u64,
    pub tokens: u64,
    pub compute: f64,
    pub stage: usize,
    pub stage_steps: u64,
    pub initial_loss: f64,
    pub curve: LossCurve,
    /// Current stage's samples on the clock-based slope axis.
    pub axis: Vec<CurveSample>,
    pub events: Vec<GrowthEvent>,
    pub decisions: Vec<Decision>,
    /// `(step, loss, compute)` once τ_opt was met.
    pub optimal: Option<(u64, f64, f64)>,
    pub done: bool,
}

/// Stepwise driver for the staged schedule. Growth happens only between
/// optimizer steps, at validation points. The randomness a growth operator
/// needs comes from `growth_seed` and the stage index, so a resumed run
/// grows exactly like an uninterrupted one.
pub struct StagedTrainer<'p, T> {
    plan: &'p StagePlan,
    opts: StagedOptions,
    growth_seed: u64,
    pub state: TrainingState<T>,
    pub progress: Progress,
}

impl<'p, T: Scalar> StagedTrainer<'p, T> {
    pub fn new(
        plan: &'p StagePlan,
        state: TrainingState<T>,
        val: &[TokenBatch],
        opts: StagedOptions,
        growth_seed: u64,
    ) -> Result<Self> {
        let initial_loss = evaluate(&state.model, val)?;
        let progress = Progress {
            step: 0,
            tokens: 0,
            compute: 0.0,
            stage: 0,
            stage_steps: 0,
            initial_loss,
            curve: LossCurve::new(),
            axis: Vec::new(),
            events: Vec::new(),
            decisions: Vec::new(),
            optimal: None,
            done: false,
        };
        Self::resume(plan, state, progress, opts, growth_seed)
    }

    pub fn resume(
        plan: &'p StagePlan,
        state: TrainingState<T>,
        progress: Progress,
        opts: StagedOptions,
        growth_seed: u64,
    ) -> Result<Self> {
        plan.validate()?;
        if opts.cadence == 0 || opts.window < 3 {
            return Err(Error::Config("cadence must be positive and window at least 3".into()));
        }
        if progress.stage >= plan.m() {
            return Err(Error::Config(format!("progress is in stage {} of a {}-stage plan", progress.stage, plan.m())));
        }
        if progress.events.is_empty() && state.model.config != plan.base {
            return Err(Error::Config("initial state does not match the plan's base config".into()));
        }
        state.check_layout()?;
        Ok(StagedTrainer {
            plan,
            opts,
            growth_seed,
            state,
            progress,
        })
    }

    pub fn is_done(&self) -> bool {
        self.progress.done
    }

    pub fn plan(&self) -> &'p StagePlan {
        self.plan
    }

    /// One optimizer step, plus validation and the stage decision when the
    /// step lands on the cadence. Returns the validation sample, if any.
    pub fn advance(&mut self, data: &mut dyn BatchSource, val: &[TokenBatch]) -> Result<Option<CurveSample>> {
        if self.progress.done {
            return Ok(None);
        }
        let p = &mut self.progress;
        let batch = data.batch(p.step)?;
        let n = param_count(&self.state.model.config, false) as f64;
        let tps = batch.target_count() as u64;
        let stats = train_step(&mut self.state, &batch)?;
        p.step += 1;
        p.stage_steps += 1;
        p.tokens += tps;
        p.compute += 6.0 * n * tps as f64;
        if p.step % self.opts.cadence != 0 {
            return Ok(None);
        }
        let loss = evaluate(&self.state.model, val)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: p.step });
        }
        let eq_compute = 6.0 * n * tps as f64 * self.state.clock().max(1) as f64;
        if p.axis.last().map_or(false, |s| eq_compute <= s.compute) {
            p.axis.clear();
        }
        let mut sample = CurveSample {
            step: p.step,
            tokens: p.tokens,
            compute: eq_compute,
            val_loss: loss,
            lr: stats.lr,
            slope_estimate: None,
            stage_index: p.stage,
        };
        let slope = if p.optimal.is_none() {
            p.axis.push(sample);
            slope_over(&p.axis, self.opts.window).ok()
        } else {
            None
        };
        sample.compute = p.compute;
        sample.slope_estimate = slope;
        p.curve.push(sample)?;
        self.decide(loss, slope, val)?;
        Ok(Some(sample))
    }

    fn decide(&mut self, loss: f64, slope: Option<f64>, val: &[TokenBatch]) -> Result<()> {
        let plan = self.plan;
        let p = &mut self.progress;
        if p.optimal.is_some() {
            p.done = p.compute >= self.opts.extend_to_compute.unwrap_or(0.0);
            return Ok(());
        }
        let last_stage = p.stage + 1 == plan.m();
        let next = plan.stages.get(p.stage + 1);
        let threshold = if last_stage { plan.tau_opt } else { next.map_or(plan.tau_opt, |e| e.tau) };
        let crossed = match next.and_then(|e| e.grow_at_step) {
            Some(at) => p.step >= at,
            None => p.stage_steps >= self.opts.min_stage_steps && slope.map_or(false, |s| slope_exceeds(s, threshold)),
        };
        if !crossed {
            if p.stage_steps >= self.opts.max_stage_steps {
                return Err(Error::BudgetExceeded {
                    stage: p.stage,
                    budget: self.opts.max_stage_steps,
                    last_slope: slope,
                    threshold,
                });
            }
            return Ok(());
        }
        let clock_before = self.state.clock();
        if last_stage {
            p.decisions.push(Decision {
                stage: p.stage,
                step: p.step,
                clock: clock_before,
                slope,
                threshold,
                action: "stop".into(),
            });
            p.optimal = Some((p.step, loss, p.compute));
            p.done = self.opts.extend_to_compute.map_or(true, |c| p.compute >= c);
            return Ok(());
        }
        let op = next.and_then(|e| e.op).expect("validated plan");
        let mut rng = ChaCha8Rng::seed_from_u64(self.growth_seed);
        rng.set_stream(p.stage as u64 + 1);
        let grown = op.apply(&self.state, &mut rng)?;
        p.decisions.push(Decision {
            stage: p.stage,
            step: p.step,
            clock: clock_before,
            slope,
            threshold,
            action: format!("grow:{}", op.kind.name()),
        });
        p.events.push(GrowthEvent {
            step: p.step,
            stage: p.stage + 1,
            op,
            params_before: self.state.model.params.count(),
            params_after: grown.model.params.count(),
            loss_before: loss,
            loss_after: evaluate(&grown.model, val)?,
            clock_before,
            clock_after: grown.clock(),
        });
        self.state = grown;
        p.stage += 1;
        p.stage_steps = 0;
        p.axis.clear();
        Ok(())
    }

    /// Runs to completion; `monitor` sees every validation sample and may
    /// abort the run by returning an error.
    pub fn run(
        mut self,
        data: &mut dyn BatchSource,
        val: &[TokenBatch],
        monitor: &mut dyn FnMut(&CurveSample, &Progress) -> Result<()>,
    ) -> Result<StagedRun<T>> {
        while !self.progress.done {
            if let Some(sample) = self.advance(data, val)? {
                monitor(&sample, &self.progress)?;
            }
        }
        Ok(self.finish())
    }

    /// Advances until the given global step (or completion).
    pub fn run_until(&mut self, step: u64, data: &mut dyn BatchSource, val: &[TokenBatch]) -> Result<()> {
        while !self.progress.done && self.progress.step < step {
            self.advance(data, val)?;
        }
        Ok(())
    }

    pub fn finish(self) -> StagedRun<T> {
        let p = self.progress;
        let (optimality_step, optimality_loss, optimality_compute) = p.optimal.unwrap_or((p.step, f64::NAN, p.compute));
        StagedRun {
            state: self.state,
            curve: p.curve,
            events: p.events,
            decisions: p.decisions,
            initial_loss: p.initial_loss,
            optimality_step,
            optimality_loss,
            optimality_compute,
            steps: p.step,
        }
    }
}

/// Runs the staged schedule from `state` (whose model must match
/// `plan.base`) to completion.
pub fn staged_train<T: Scalar>(
    plan: &StagePlan,
    state: TrainingState<T>,
    data: &mut dyn BatchSource,
    val: &[TokenBatch],
    opts: &StagedOptions,
    growth_seed: u64,
) -> Result<StagedRun<T>> {
    StagedTrainer::new(plan, state, val, opts.clone(), growth_seed)?.run(data, val, &mut |_, _| Ok(()))
}

/// Fidelity of a finished run to the staged schedule, checked from its
/// record alone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    /// Most steps any stage trained after its slope first crossed the
    /// threshold.
    pub max_overshoot: u64,
    pub problems: Vec<String>,
}

impl Audit {
    pub fn passed(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Checks that no stage trained more than one validation interval past its
/// threshold, that every growth set the clock its policy prescribes, that
/// loss-preserving growth preserved the loss to `loss_tol` (relative), and
/// that the last stage was stopped by τ_opt.
pub fn audit_run(
    plan: &StagePlan,
    curve: &LossCurve,
    decisions: &[Decision],
    events: &[GrowthEvent],
    opts: &StagedOptions,
    loss_tol: f64,
) -> Audit {
    let mut audit = Audit::default();
    let m = plan.m();
    if decisions.len() != m || events.len() + 1 != m {
        audit.problems.push(format!(
            "{} stages but {} decisions and {} growth events",
            m,
            decisions.len(),
            events.len()
        ));
        return audit;
    }
    for (i, d) in decisions.iter().enumerate() {
        let next = plan.stages.get(i + 1);
        let threshold = next.map_or(plan.tau_opt, |e| e.tau);
        if d.stage != i || d.threshold != threshold {
            audit.problems.push(format!("decision {i} is for stage {} at threshold {}", d.stage, d.threshold));
        }
        if next.and_then(|e| e.grow_at_step).is_some() {
            continue;
        }
        let start = if i == 0 { 0 } else { events[i - 1].step };
        let crossing = curve.samples.iter().find(|s| {
            s.stage_index == i
                && s.step <= d.step
                && s.step >= start + opts.min_stage_steps
                && s.slope_estimate.map_or(false, |x| slope_exceeds(x, threshold))
        });
        match crossing {
            Some(c) => {
                let over = d.step - c.step;
                audit.max_overshoot = audit.max_overshoot.max(over);
                if over > opts.cadence {
                    audit.problems.push(format!("stage {i} trained {over} steps past its threshold"));
                }
            }
            None => audit.problems.push(format!("stage {i} ended at step {} without crossing {threshold}", d.step)),
        }
    }
    for (k, e) in events.iter().enumerate() {
        let d = &decisions[k];
        if e.step != d.step || e.clock_before != d.clock {
            audit.problems.push(format!("growth {k} does not match its decision"));
        }
        let expect = e.op.clock_after(e.clock_before);
        if e.clock_after != expect {
            audit.problems.push(format!("growth {k} set clock {} instead of {expect}", e.clock_after));
        }
        if e.op.kind.is_loss_preserving() {
            let rel = (e.loss_after - e.loss_before).abs() / e.loss_before.abs();
            if !(rel <= loss_tol) {
                audit.problems.push(format!("growth {k} changed the loss by {rel:.3e} (relative)"));
            }
        }
    }
    let last = &decisions[m - 1];
    let stopped = last.action == "stop" && last.slope.map_or(false, |s| slope_exceeds(s, plan.tau_opt));
    if !stopped {
        audit.problems.push("last stage was not stopped by tau_opt".into());
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_curve(a: f64, b: f64, n: usize) -> LossCurve {
        let pts: Vec<(f64, f64)> = (1..=n)
            .map(|i| {
                let c = 1e6 * 1.3f64.powi(i as i32);
                (c, a + b * c.log10())
            })
            .collect();
        LossCurve::from_points(&pts).unwrap()
    }

    #[test]
    fn slope_of_exact_line() {
        let c = linear_curve(5.0, -0.1, 30);
        assert!((estimate_slope(&c, 20).unwrap() + 0.1).abs() < 1e-12);
        assert!((estimate_slope(&c, 3).unwrap() + 0.1).abs() < 1e-12);
        let flat = linear_curve(2.0, 0.0, 10);
        assert_eq!(estimate_slope(&flat, 5).unwrap(), 0.0);
    }

    #[test]
    fn slope_errors() {
        let c = linear_curve(5.0, -0.1, 4);
        assert!(matches!(estimate_slope(&c, 5), Err(Error::InsufficientData { needed: 5, got: 4 })));
        assert!(matches!(estimate_slope(&c, 2), Err(Error::Config(_))));
    }

    #[test]
    fn transition_is_strict() {
        let steep = linear_curve(5.0, -0.1, 10);
        assert!(!should_transition(&steep, -0.052, 5).unwrap());
        let shallow = linear_curve(5.0, -0.04, 10);
        assert!(should_transition(&shallow, -0.052, 5).unwrap());
        assert!(!slope_exceeds(-0.052, -0.052));
    }

    #[test]
    fn rewind_values() {
        assert_eq!(rewind_clock(1000, 0.70).unwrap(), 700);
        assert_eq!(rewind_clock(1000, 0.55).unwrap(), 550);
        assert_eq!(rewind_clock(1234, 1.0).unwrap(), 1234);
        assert!(rewind_clock(10, 0.0).is_err());
    }

    #[test]
    fn curve_requires_increasing_compute() {
        assert!(LossCurve::from_points(&[(1.0, 3.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn self_match_gives_unit_rho() {
        let c = linear_curve(6.0, -0.2, 30);
        for i in [5, 12, 29] {
            let tr = estimate_tau_rho(&c, &c, i, 5).unwrap();
            assert_eq!(tr.rho, 1.0);
            assert!((tr.tau + 0.2).abs() < 1e-12);
        }
        let never = linear_curve(9.0, -0.01, 30);
        assert!(matches!(estimate_tau_rho(&c, &never, 20, 5), Err(Error::InfeasibleMatch { .. })));
    }

    #[test]
    fn interpolation_helpers() {
        let c = LossCurve::from_points(&[(1.0, 4.0), (2.0, 3.0), (3.0, 2.0)]).unwrap();
        assert_eq!(c.loss_at_tokens(1.5), Some(3.5));
        assert_eq!(c.tokens_reaching(2.5), Some(2.5));
        assert_eq!(c.loss_at_tokens(4.0), None);
    }

    #[test]
    fn plan_validation() {
        let k = PracticalConstants::default();
        k.validate().unwrap();
        let base = ModelConfig::new(1, 8, 2, 5, 8);
        let p = StagePlan::from_ops(base.clone(), &[GrowthKind::Depth2x], &k).unwrap();
        assert_eq!(p.m(), 2);
        assert_eq!(p.stages[1].op.unwrap().rho, 0.70);
        assert!(StagePlan::from_ops(base, &[GrowthKind::StackCopyDepth], &k).is_err());
    }
}
