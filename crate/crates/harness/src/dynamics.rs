//! Training-dynamics checks: grow a small model partway through training,
//! keep training it, and compare against a model of the grown size trained
//! from scratch on the same data, aligned where both reach the same loss.
//!
//! The data position is tracked separately from the learning-rate clock,
//! so an arm whose clock is rewound or restarted still sees exactly the
//! batches the reference saw at the aligned position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use staged_core::growth::{GrowthOp, LrPolicy, OptimizerPolicy};
use staged_core::model::{InitOptions, Model, ModelConfig, TokenBatch};
use staged_core::optim::{AdamConfig, LrSchedule, TrainingState};
use staged_core::train::{evaluate, train_step, BatchSource};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub base: ModelConfig,
    /// Kind and noise of the growth; the policies come from the arm.
    pub op: GrowthOp,
    pub schedule: LrSchedule,
    pub optimizer: AdamConfig,
    pub pre_growth_steps: u64,
    pub cadence: u64,
    /// Largest allowed gap to the reference, in nats.
    pub epsilon: f64,
    /// Length of the comparison window as a multiple of the pre-growth
    /// steps.
    pub window_factor: u64,
    /// Give up if the reference has not reached the pre-growth loss by
    /// then.
    pub max_reference_steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Grown parameters and moments, clock matched by loss.
    Grown,
    /// As `Grown` with the moments discarded.
    ZeroOptimizer,
    /// As `Grown` with the clock restarted at 0.
    RestartLr,
    /// Control: the small model keeps training ungrown.
    SmallContinue,
    /// Control: a second from-scratch model of the grown size.
    Twin,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Grown => "grown",
            Arm::ZeroOptimizer => "zero_optimizer",
            Arm::RestartLr => "restart_lr",
            Arm::SmallContinue => "small_continue",
            Arm::Twin => "twin",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    /// Largest |loss - reference loss| over the window.
    pub max_gap: f64,
    pub within: bool,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub seed: u64,
    pub pre_growth_loss: f64,
    /// Reference step at which it first reached the pre-growth loss.
    pub aligned_step: u64,
    /// `aligned_step / pre_growth_steps`: the clock rewind the loss match
    /// implies.
    pub matched_rho: f64,
    pub arms: Vec<ArmResult>,
}

impl Trial {
    pub fn arm(&self, arm: Arm) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == arm)
    }
}

/// Trains `state` for `steps` steps starting at data position `pos`,
/// recording the validation loss every `cadence` steps.
fn train_span<T: staged_core::Scalar>(
    state: &mut TrainingState<T>,
    data: &mut dyn BatchSource,
    val: &[TokenBatch],
    pos: u64,
    steps: u64,
    cadence: u64,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..steps {
        train_step(state, &data.batch(pos + i)?)?;
        if (i + 1) % cadence == 0 {
            out.push(evaluate(&state.model, val)?);
        }
    }
    Ok(out)
}

fn init(config: &ModelConfig, spec: &DynamicsSpec, seed: u64, stream: u64) -> Result<TrainingState<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let model = Model::init(config.clone(), InitOptions::default(), &mut rng)?;
    Ok(TrainingState::new(model, spec.schedule, spec.optimizer)?)
}

/// Trains a from-scratch model until it reaches `loss`, then `extra` steps
/// more. Returns the curve (one entry per cadence) and the index of the
/// first entry at or below `loss`.
fn reference_curve(
    state: &mut TrainingState<f64>,
    data: &mut dyn BatchSource,
    val: &[TokenBatch],
    spec: &DynamicsSpec,
    loss: f64,
    extra: u64,
) -> Result<(Vec<f64>, usize)> {
    let mut curve = Vec::new();
    let mut pos = 0;
    let hit = loop {
        let l = train_span(state, data, val, pos, spec.cadence, spec.cadence)?[0];
        pos += spec.cadence;
        curve.push(l);
        if l <= loss {
            break curve.len() - 1;
        }
        if pos >= spec.max_reference_steps {
            return Err(staged_core::Error::InfeasibleMatch { loss }.into());
        }
    };
    curve.extend(train_span(state, data, val, pos, extra, spec.cadence)?);
    Ok((curve, hit))
}

fn gap(arm: &[f64], reference: &[f64]) -> f64 {
    arm.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// One seed of the check. `data` must be indexable by position from 0.
pub fn run_trial(
    spec: &DynamicsSpec,
    data: &mut dyn BatchSource,
    val: &[TokenBatch],
    seed: u64,
    arms: &[Arm],
) -> Result<Trial> {
    if spec.cadence == 0 || spec.pre_growth_steps % spec.cadence != 0 {
        return Err(HarnessError::Experiment("pre-growth steps must be a positive multiple of the cadence".into()));
    }
    let window = spec.window_factor * spec.pre_growth_steps;
    let mut small = init(&spec.base, spec, seed, 0)?;
    train_span(&mut small, data, val, 0, spec.pre_growth_steps, spec.pre_growth_steps)?;
    let pre_growth_loss = evaluate(&small.model, val)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let grown = spec.op.apply(&small, &mut rng)?;
    let mut reference = init(&grown.model.config, spec, seed, 1)?;
    let (ref_curve, hit) = reference_curve(&mut reference, data, val, spec, pre_growth_loss, window)?;
    let aligned_step = (hit as u64 + 1) * spec.cadence;
    let ref_window = &ref_curve[hit + 1..];

    let mut results = Vec::new();
    for &arm in arms {
        let curve = match arm {
            Arm::Twin => {
                let mut twin = init(&grown.model.config, spec, seed, 2)?;
                let (c, h) = reference_curve(&mut twin, data, val, spec, pre_growth_loss, window)?;
                c[h + 1..].to_vec()
            }
            Arm::SmallContinue => {
                let mut s = small.clone();
                train_span(&mut s, data, val, aligned_step, window, spec.cadence)?
            }
            _ => {
                let op = GrowthOp {
                    optimizer: if arm == Arm::ZeroOptimizer { OptimizerPolicy::Zero } else { OptimizerPolicy::Grow },
                    lr: if arm == Arm::RestartLr { LrPolicy::Restart } else { LrPolicy::Continue },
                    ..spec.op
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(3);
                let mut s = op.apply(&small, &mut rng)?;
                if arm != Arm::RestartLr {
                    s.set_clock(aligned_step);
                }
                train_span(&mut s, data, val, aligned_step, window, spec.cadence)?
            }
        };
        let max_gap = gap(&curve, ref_window);
        results.push(ArmResult {
            arm,
            max_gap,
            within: max_gap <= spec.epsilon,
            final_loss: *curve.last().unwrap_or(&f64::NAN),
        });
    }
    Ok(Trial {
        seed,
        pre_growth_loss,
        aligned_step,
        matched_rho: aligned_step as f64 / spec.pre_growth_steps as f64,
        arms: results,
    })
}
