//! Measurements of the two growth properties: loss preservation and
//! commutation of gradients with the optimizer-state growth maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::growth::{grow_moment_width_with, width_moment_factor, GrowthKind, Moment};
use crate::model::{InitOptions, Model, ModelConfig, ParamRole, Parameters, TokenBatch};
use crate::optim::{AdamConfig, LrSchedule, TrainingState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relative_loss_change<T: Scalar>(orig: &Model<T>, grown: &Model<T>, batch: &TokenBatch) -> Result<f64> {
    let a = orig.loss(batch)?.to_f64_lossy();
    let b = grown.loss(batch)?.to_f64_lossy();
    Ok((b - a).abs() / a.abs())
}

/// Largest `|Δlogit| / max|logit|` between two models on `batch`.
pub fn max_logit_deviation<T: Scalar>(orig: &Model<T>, grown: &Model<T>, batch: &TokenBatch) -> Result<f64> {
    let a = orig.forward(batch)?;
    let b = grown.forward(batch)?;
    if a.shape() != b.shape() {
        return Err(Error::dim("max_logit_deviation", "logit shapes differ"));
    }
    let scale = a.max_abs().to_f64_lossy().max(f64::MIN_POSITIVE);
    let worst = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x - *y).abs().to_f64_lossy())
        .fold(0.0, f64::max);
    Ok(worst / scale)
}

/// Elementwise `|a - b| / max(|a|, |b|, floor * max|b|)` over every
/// tensor, maximized, where `max|b|` is taken over all parameters. The floor
/// keeps entries that are zero up to rounding (the key-bias gradient is
/// identically zero, for one) from dominating.
pub fn max_relative_deviation<T: Scalar>(a: &Parameters<T>, b: &Parameters<T>, floor: f64) -> Result<f64> {
    let (ta, tb) = (a.tensors(), b.tensors());
    if ta.len() != tb.len() {
        return Err(Error::Contract("parameter layouts differ".into()));
    }
    let scale = floor * tb.iter().map(|t| t.max_abs().to_f64_lossy()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for (x, y) in ta.iter().zip(&tb) {
        if x.shape() != y.shape() {
            return Err(Error::Contract("parameter shapes differ".into()));
        }
        for (p, q) in x.data().iter().zip(y.data()) {
            let (p, q) = (p.to_f64_lossy(), q.to_f64_lossy());
            let denom = p.abs().max(q.abs()).max(scale);
            if denom > 0.0 {
                worst = worst.max((p - q).abs() / denom);
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Commutation {
    /// Deviation between `g(G(φ))` and `G_m(g(φ))`.
    pub first: f64,
    /// Deviation between `g(G(φ))²` and `G_v(g(φ)²)`.
    pub second: f64,
}

fn square<T: Scalar>(p: &Parameters<T>) -> Parameters<T> {
    p.map(|_, t| t.map(|x| x * x))
}

/// Default floor for [`max_relative_deviation`] in commutation checks.
pub const DEVIATION_FLOOR: f64 = 1e-6;

/// Width-growth commutation for given per-role first-moment factors.
pub fn width_commutation_with<T: Scalar>(
    orig: &Model<T>,
    grown: &Model<T>,
    batch: &TokenBatch,
    factor: impl Fn(ParamRole) -> f64 + Copy,
) -> Result<Commutation> {
    let (_, g_orig) = orig.loss_and_grads(batch)?;
    let (_, g_grown) = grown.loss_and_grads(batch)?;
    let first = grow_moment_width_with(&g_orig, &orig.config, Moment::First, factor)?;
    let second = grow_moment_width_with(&square(&g_orig), &orig.config, Moment::Second, factor)?;
    Ok(Commutation {
        first: max_relative_deviation(&g_grown, &first, DEVIATION_FLOOR)?,
        second: max_relative_deviation(&square(&g_grown), &second, DEVIATION_FLOOR)?,
    })
}

pub fn width_commutation<T: Scalar>(orig: &Model<T>, grown: &Model<T>, batch: &TokenBatch) -> Result<Commutation> {
    width_commutation_with(orig, grown, batch, width_moment_factor)
}

/// Depth-growth commutation over the parameters that have a preimage
/// (everything except the inserted identity blocks). The inserted blocks
/// get zero moments by construction.
pub fn depth_commutation<T: Scalar>(orig: &Model<T>, grown: &Model<T>, batch: &TokenBatch) -> Result<Commutation> {
    let (_, g_orig) = orig.loss_and_grads(batch)?;
    let (_, mut g_grown) = grown.loss_and_grads(batch)?;
    if g_grown.layers.len() != 2 * g_orig.layers.len() {
        return Err(Error::Contract("grown model is not a depth doubling".into()));
    }
    g_grown.layers = g_grown.layers.into_iter().step_by(2).collect();
    Ok(Commutation {
        first: max_relative_deviation(&g_grown, &g_orig, DEVIATION_FLOOR)?,
        second: max_relative_deviation(&square(&g_grown), &square(&g_orig), DEVIATION_FLOOR)?,
    })
}

/// Commutation residual for a loss-preserving operator applied to `state`
/// (moments are not consulted, only the gradients at the two models).
pub fn commutation<T: Scalar>(
    kind: GrowthKind,
    before: &TrainingState<T>,
    after: &TrainingState<T>,
    batch: &TokenBatch,
) -> Result<Commutation> {
    match kind {
        GrowthKind::Width2x => width_commutation(&before.model, &after.model, batch),
        GrowthKind::Depth2x => depth_commutation(&before.model, &after.model, batch),
        other => Err(Error::Config(format!(
            "commutation is defined for width2x and depth2x, not {}",
            other.name()
        ))),
    }
}

/// A state far from initialization: wide weights, perturbed LN affine and
/// biases, random moments and clock. Used as a fixture by property checks.
pub fn random_state(config: ModelConfig, seed: u64) -> Result<TrainingState<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = InitOptions {
        std: rng.gen_range(0.05..0.4),
        scale_residual: false,
    };
    let mut model = Model::init(config, opts, &mut rng)?;
    for t in model.params.tensors_mut() {
        let noise = Tensor::<f64>::randn(t.shape(), 0.1, &mut rng);
        for (x, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *x += n;
        }
    }
    let mut state = TrainingState::new(model, LrSchedule::constant(1e-3), AdamConfig::default())?;
    for t in state.adam.m.tensors_mut() {
        *t = Tensor::randn(t.shape(), 1e-2, &mut rng);
    }
    for t in state.adam.v.tensors_mut() {
        *t = Tensor::<f64>::randn(t.shape(), 1e-3, &mut rng).map(|x| x * x);
    }
    let k = rng.gen_range(1..1000);
    state.adam.moment_steps.fill(k);
    state.set_clock(rng.gen_range(0..5000));
    Ok(state)
}

/// A batch of uniformly random tokens.
pub fn random_batch(config: &ModelConfig, batch: usize, seq: usize, seed: u64) -> Result<TokenBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = seq.min(config.n_ctx);
    let tokens = (0..batch * seq).map(|_| rng.gen_range(0..config.vocab)).collect();
    TokenBatch::new(batch, seq, tokens)
}
