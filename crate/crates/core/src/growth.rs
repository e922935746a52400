//! Growth operators over the whole training state.
//!
//! Width doubling duplicates the residual stream: every vector becomes
//! `[w, w]`, every block matrix `[[W, 0], [0, W]]`, and the output head
//! `[W; W] / 2` so the logits are unchanged. The number of heads doubles
//! with the per-head size fixed, so each new head is a copy of an old one.
//!
//! In the grown model every stream coordinate carries half of the original
//! gradient, including the zero off-diagonal blocks, while the head rows
//! carry the full one. Adam moments are grown to match:
//!
//! | group                                  | m     | v      |
//! |----------------------------------------|-------|--------|
//! | embeddings, LN gains/biases, biases     | 1/2   | 1/4    |
//! | block matrices (all four blocks)        | 1/2   | 1/4    |
//! | head weight (stacked rows)              | 1     | 1      |
//! | head bias                               | 1     | 1      |
//!
//! Depth doubling interleaves identity blocks whose LN gains and biases
//! and linear biases are zero; their moments start at zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{field, LayerParams, Model, ModelConfig, ParamRole, Parameters, DEFAULT_INIT_STD, LAYER_FIELDS};
use crate::optim::{AdamState, TrainingState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthKind {
    Width2x,
    Depth2x,
    /// Depth first, then width.
    DepthThenWidth,
    /// Ablation: append a copy of the whole layer stack.
    StackCopyDepth,
    /// Ablation: double only the feed-forward hidden width.
    FfnOnlyWidth,
}

impl GrowthKind {
    pub fn name(self) -> &'static str {
        match self {
            GrowthKind::Width2x => "width2x",
            GrowthKind::Depth2x => "depth2x",
            GrowthKind::DepthThenWidth => "depth_then_width",
            GrowthKind::StackCopyDepth => "stack_copy_depth",
            GrowthKind::FfnOnlyWidth => "ffn_only_width",
        }
    }

    pub fn is_loss_preserving(self) -> bool {
        matches!(self, GrowthKind::Width2x | GrowthKind::Depth2x | GrowthKind::DepthThenWidth)
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "width2x" => GrowthKind::Width2x,
            "depth2x" => GrowthKind::Depth2x,
            "depth_then_width" => GrowthKind::DepthThenWidth,
            "stack_copy_depth" => GrowthKind::StackCopyDepth,
            "ffn_only_width" => GrowthKind::FfnOnlyWidth,
            _ => return Err(Error::Config(format!("unknown growth operator `{s}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerPolicy {
    #[default]
    Grow,
    /// Ablation: discard the moments.
    Zero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrPolicy {
    /// Clock becomes `round(rho * t)`.
    #[default]
    RhoRewind,
    /// Ablation: clock back to 0, so warmup restarts.
    Restart,
    Continue,
}

fn default_rho() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthOp {
    pub kind: GrowthKind,
    #[serde(default)]
    pub optimizer: OptimizerPolicy,
    #[serde(default)]
    pub lr: LrPolicy,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Std of the symmetry-breaking perturbation added to width-grown
    /// block matrices. Zero keeps gradients exactly commuting.
    #[serde(default)]
    pub noise: f64,
}

impl GrowthOp {
    pub fn new(kind: GrowthKind) -> Self {
        GrowthOp {
            kind,
            optimizer: OptimizerPolicy::Grow,
            lr: LrPolicy::RhoRewind,
            rho: 1.0,
            noise: 0.0,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be nonnegative, got {}", self.noise)));
        }
        Ok(())
    }

    /// Grows parameters and moments, then applies the optimizer and clock
    /// policies. The input state is left untouched.
    pub fn apply<T: Scalar, R: Rng + ?Sized>(&self, state: &TrainingState<T>, rng: &mut R) -> Result<TrainingState<T>> {
        self.validate()?;
        let mut next = match self.kind {
            GrowthKind::Width2x => grow_width(state, self.noise, rng)?,
            GrowthKind::Depth2x => grow_depth(state, rng)?,
            GrowthKind::DepthThenWidth => grow_width(&grow_depth(state, rng)?, self.noise, rng)?,
            GrowthKind::StackCopyDepth => stack_copy_depth(state)?,
            GrowthKind::FfnOnlyWidth => ffn_only_width(state)?,
        };
        if self.optimizer == OptimizerPolicy::Zero {
            zero_optimizer(&mut next);
        }
        next.set_clock(self.clock_after(state.clock()));
        Ok(next)
    }

    /// The clock this operator hands the grown state when the source state
    /// is at `t`.
    pub fn clock_after(&self, t: u64) -> u64 {
        match self.lr {
            LrPolicy::RhoRewind => rewind(t, self.rho),
            LrPolicy::Restart => 0,
            LrPolicy::Continue => t,
        }
    }
}

/// `round(rho * t)`.
pub fn rewind(t: u64, rho: f64) -> u64 {
    (rho * t as f64).round() as u64
}

/// Which Adam moment is being grown; the second moment takes squared factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Moment {
    First,
    Second,
}

/// Factor applied to first-moment entries when width-growing a parameter
/// of the given role.
pub fn width_moment_factor(role: ParamRole) -> f64 {
    match role {
        ParamRole::HeadWeight | ParamRole::HeadBias => 1.0,
        _ => 0.5,
    }
}

fn check_width(config: &ModelConfig) -> Result<()> {
    config.validate()?;
    if config.tie_embeddings {
        return Err(Error::Config(
            "width growth needs an untied output head (duplicated embeddings cannot also be the halved head)".into(),
        ));
    }
    Ok(())
}

pub fn widened_config(config: &ModelConfig) -> Result<ModelConfig> {
    check_width(config)?;
    let mut c = config.clone();
    c.d_model *= 2;
    c.n_heads *= 2;
    c.d_ff *= 2;
    c.validate()?;
    if c.head_dim() != config.head_dim() {
        return Err(Error::Config("width growth must keep the per-head dimension".into()));
    }
    Ok(c)
}

pub fn deepened_config(config: &ModelConfig) -> ModelConfig {
    let mut c = config.clone();
    c.n_layers *= 2;
    c
}

fn dup_vector<T: Scalar>(t: &Tensor<T>, s: T) -> Tensor<T> {
    let mut d: Vec<T> = t.data().iter().map(|&x| x * s).collect();
    d.extend_from_within(..);
    Tensor::vector(d)
}

/// `[r, c] -> [r, 2c]` with each row duplicated.
fn dup_cols<T: Scalar>(t: &Tensor<T>, s: T) -> Tensor<T> {
    let (r, c) = t.dims2().expect("matrix");
    let mut out = Vec::with_capacity(2 * r * c);
    for row in t.data().chunks(c) {
        out.extend(row.iter().map(|&x| x * s));
        out.extend(row.iter().map(|&x| x * s));
    }
    Tensor::matrix(r, 2 * c, out).expect("shape")
}

/// `[a, b] -> [2a, b]`, rows stacked.
fn stack_rows<T: Scalar>(t: &Tensor<T>, s: T) -> Tensor<T> {
    let (a, b) = t.dims2().expect("matrix");
    let mut out: Vec<T> = t.data().iter().map(|&x| x * s).collect();
    out.extend_from_within(..);
    Tensor::matrix(2 * a, b, out).expect("shape")
}

/// Four-block matrix `[[tl, tr], [bl, br]]` of `[a, b]` blocks.
fn blocks<T: Scalar>(a: usize, b: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Tensor<T> {
    let mut out = Vec::with_capacity(4 * a * b);
    for i in 0..2 * a {
        for j in 0..2 * b {
            let q = 2 * (i / a) + j / b;
            out.push(f(q, i % a, j % b));
        }
    }
    Tensor::matrix(2 * a, 2 * b, out).expect("shape")
}

/// `[[W + N, -N'], [-N, W + N']]`; maps `[x, x]` to `[xW, xW]` for any N, N'.
fn block_diag<T: Scalar, R: Rng + ?Sized>(w: &Tensor<T>, noise: f64, rng: &mut R) -> Tensor<T> {
    let (a, b) = w.dims2().expect("matrix");
    let wd = w.data();
    if noise == 0.0 {
        return blocks(a, b, |q, i, j| if q == 0 || q == 3 { wd[i * b + j] } else { T::zero() });
    }
    let n1 = Tensor::<T>::randn(&[a, b], noise, rng);
    let n2 = Tensor::<T>::randn(&[a, b], noise, rng);
    let (n1, n2) = (n1.data(), n2.data());
    blocks(a, b, |q, i, j| {
        let k = i * b + j;
        match q {
            0 => wd[k] + n1[k],
            1 => -n2[k],
            2 => -n1[k],
            _ => wd[k] + n2[k],
        }
    })
}

fn block_full<T: Scalar>(m: &Tensor<T>, s: T) -> Tensor<T> {
    let (a, b) = m.dims2().expect("matrix");
    let md = m.data();
    blocks(a, b, |_, i, j| md[i * b + j] * s)
}

/// Width-grows the parameters.
pub fn grow_params_width<T: Scalar, R: Rng + ?Sized>(
    params: &Parameters<T>,
    config: &ModelConfig,
    noise: f64,
    rng: &mut R,
) -> Result<Parameters<T>> {
    check_width(config)?;
    params.check_layout(config)?;
    let one = T::one();
    let half = T::lit(0.5);
    Ok(params.map(|role, t| match role {
        ParamRole::TokenEmbedding | ParamRole::PositionEmbedding => dup_cols(t, one),
        ParamRole::NormGain | ParamRole::NormBias | ParamRole::Bias => dup_vector(t, one),
        ParamRole::Weight => block_diag(t, noise, rng),
        ParamRole::HeadWeight => stack_rows(t, half),
        ParamRole::HeadBias => t.clone(),
    }))
}

/// Width-grows a moment (or gradient) structure with per-role first-moment
/// factors `factor`; second moments use the squares.
pub fn grow_moment_width_with<T: Scalar>(
    moment: &Parameters<T>,
    config: &ModelConfig,
    which: Moment,
    factor: impl Fn(ParamRole) -> f64,
) -> Result<Parameters<T>> {
    check_width(config)?;
    moment
        .check_layout(config)
        .map_err(|e| Error::Contract(format!("moment layout: {e}")))?;
    Ok(moment.map(|role, t| {
        let f = factor(role);
        let s = T::lit(match which {
            Moment::First => f,
            Moment::Second => f * f,
        });
        match role {
            ParamRole::TokenEmbedding | ParamRole::PositionEmbedding => dup_cols(t, s),
            ParamRole::NormGain | ParamRole::NormBias | ParamRole::Bias => dup_vector(t, s),
            ParamRole::Weight => block_full(t, s),
            ParamRole::HeadWeight => stack_rows(t, s),
            ParamRole::HeadBias => t.scaled(s),
        }
    }))
}

pub fn grow_moment_width<T: Scalar>(moment: &Parameters<T>, config: &ModelConfig, which: Moment) -> Result<Parameters<T>> {
    grow_moment_width_with(moment, config, which, width_moment_factor)
}

/// Width-grows both Adam moments; the step counters carry over, since
/// width growth keeps the tensor list.
pub fn grow_optimizer_width<T: Scalar>(adam: &AdamState<T>, config: &ModelConfig) -> Result<AdamState<T>> {
    Ok(AdamState {
        m: grow_moment_width(&adam.m, config, Moment::First)?,
        v: grow_moment_width(&adam.v, config, Moment::Second)?,
        step: adam.step,
        moment_steps: adam.moment_steps.clone(),
    })
}

pub fn grow_width<T: Scalar, R: Rng + ?Sized>(state: &TrainingState<T>, noise: f64, rng: &mut R) -> Result<TrainingState<T>> {
    let config = &state.model.config;
    let grown = widened_config(config)?;
    let params = grow_params_width(&state.model.params, config, noise, rng)?;
    let adam = grow_optimizer_width(&state.adam, config)?;
    Ok(TrainingState {
        model: Model::new(grown, params)?,
        adam,
        schedule: state.schedule,
        optimizer: state.optimizer,
    })
}

/// A block that is exactly the identity: zero LN affine and biases, fresh
/// weights so gradients can move it away from identity.
pub fn identity_layer<T: Scalar, R: Rng + ?Sized>(config: &ModelConfig, std: f64, rng: &mut R) -> LayerParams<T> {
    let mut l = LayerParams::init(config.d_model, config.d_ff, std, std, rng);
    for i in [field::LN1_GAIN, field::LN2_GAIN] {
        l.tensors[i] = Tensor::zeros(l.tensors[i].shape());
    }
    l
}

fn interleave<T: Clone>(layers: &[T], mut filler: impl FnMut() -> T) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * layers.len());
    for l in layers {
        out.push(l.clone());
        out.push(filler());
    }
    out
}

/// `(φ0, φ1, ...) -> (φ0, φ_id, φ1, φ_id, ...)`.
pub fn grow_params_depth<T: Scalar, R: Rng + ?Sized>(
    params: &Parameters<T>,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Parameters<T>> {
    params.check_layout(config)?;
    let mut p = params.clone();
    p.layers = interleave(&params.layers, || identity_layer(config, DEFAULT_INIT_STD, rng));
    Ok(p)
}

pub fn grow_optimizer_depth<T: Scalar>(adam: &AdamState<T>, config: &ModelConfig) -> Result<AdamState<T>> {
    adam.m
        .check_layout(config)
        .and_then(|_| adam.v.check_layout(config))
        .map_err(|e| Error::Contract(format!("moment layout: {e}")))?;
    let zero = || LayerParams::zeros(config.d_model, config.d_ff);
    let mut m = adam.m.clone();
    m.layers = interleave(&adam.m.layers, zero);
    let mut v = adam.v.clone();
    v.layers = interleave(&adam.v.layers, zero);
    // Identity layers start with zero moments, so their counters restart.
    let per_layer = LAYER_FIELDS.len();
    let (head, rest) = adam.moment_steps.split_at(2);
    let (layers, tail) = rest.split_at(config.n_layers * per_layer);
    let mut moment_steps = head.to_vec();
    for l in layers.chunks(per_layer) {
        moment_steps.extend_from_slice(l);
        moment_steps.extend(std::iter::repeat(0).take(per_layer));
    }
    moment_steps.extend_from_slice(tail);
    Ok(AdamState {
        m,
        v,
        step: adam.step,
        moment_steps,
    })
}

pub fn grow_depth<T: Scalar, R: Rng + ?Sized>(state: &TrainingState<T>, rng: &mut R) -> Result<TrainingState<T>> {
    let config = &state.model.config;
    config.validate()?;
    let params = grow_params_depth(&state.model.params, config, rng)?;
    let adam = grow_optimizer_depth(&state.adam, config)?;
    Ok(TrainingState {
        model: Model::new(deepened_config(config), params)?,
        adam,
        schedule: state.schedule,
        optimizer: state.optimizer,
    })
}

fn stack_layers<T: Scalar>(p: &Parameters<T>) -> Parameters<T> {
    let mut out = p.clone();
    out.layers.extend(p.layers.iter().cloned());
    out
}

/// Progressive-stacking style depth growth: `(φ0..φ_{L-1}, φ0..φ_{L-1})`.
pub fn stack_copy_depth<T: Scalar>(state: &TrainingState<T>) -> Result<TrainingState<T>> {
    let config = &state.model.config;
    let mut adam = state.adam.clone();
    adam.m = stack_layers(&state.adam.m);
    adam.v = stack_layers(&state.adam.v);
    let per_layer = LAYER_FIELDS.len();
    let end = 2 + config.n_layers * per_layer;
    let layers = adam.moment_steps[2..end].to_vec();
    adam.moment_steps.splice(end..end, layers);
    Ok(TrainingState {
        model: Model::new(deepened_config(config), stack_layers(&state.model.params))?,
        adam,
        schedule: state.schedule,
        optimizer: state.optimizer,
    })
}

/// Doubles only the feed-forward hidden width: `up -> [U, U]`,
/// `down -> [D; D]` without halving, so each block's FFN output doubles.
pub fn ffn_only_width<T: Scalar>(state: &TrainingState<T>) -> Result<TrainingState<T>> {
    let config = &state.model.config;
    let mut grown = config.clone();
    grown.d_ff *= 2;
    let one = T::one();
    let widen = |p: &Parameters<T>| {
        let mut p = p.clone();
        for l in &mut p.layers {
            l.tensors[field::UP] = dup_cols(&l.tensors[field::UP], one);
            l.tensors[field::UP_BIAS] = dup_vector(&l.tensors[field::UP_BIAS], one);
            l.tensors[field::DOWN] = stack_rows(&l.tensors[field::DOWN], one);
        }
        p
    };
    let mut adam = state.adam.clone();
    adam.m = widen(&state.adam.m);
    adam.v = widen(&state.adam.v);
    Ok(TrainingState {
        model: Model::new(grown, widen(&state.model.params))?,
        adam,
        schedule: state.schedule,
        optimizer: state.optimizer,
    })
}

/// Zeroes both moments and the bias-correction counter.
pub fn zero_optimizer<T: Scalar>(state: &mut TrainingState<T>) {
    let step = state.adam.step;
    state.adam = AdamState::zeros_like(&state.model.params);
    state.adam.step = step;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    StackCopyDepth,
    FfnOnlyWidth,
    ZeroOptimizer,
    RestartLr,
}

/// Prior-work and ablation transforms; none of them preserves both the
/// loss and the training dynamics.
pub fn ablate<T: Scalar>(state: &TrainingState<T>, which: Ablation) -> Result<TrainingState<T>> {
    match which {
        Ablation::StackCopyDepth => stack_copy_depth(state),
        Ablation::FfnOnlyWidth => ffn_only_width(state),
        Ablation::ZeroOptimizer => {
            let mut s = state.clone();
            zero_optimizer(&mut s);
            Ok(s)
        }
        Ablation::RestartLr => {
            let mut s = state.clone();
            s.set_clock(0);
            Ok(s)
        }
    }
}

/// One growth event as recorded in a run manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthEvent {
    pub step: u64,
    pub stage: usize,
    pub op: GrowthOp,
    pub params_before: usize,
    pub params_after: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    pub clock_before: u64,
    pub clock_after: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitOptions;
    use crate::optim::{AdamConfig, LrSchedule};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(cfg: ModelConfig, seed: u64) -> TrainingState<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::init(cfg, InitOptions::default(), &mut rng).unwrap();
        TrainingState::new(model, LrSchedule::constant(1e-3), AdamConfig::default()).unwrap()
    }

    #[test]
    fn vector_and_matrix_rules() {
        let g = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(dup_vector(&g, 1.0).data(), &[1.0, 2.0, 1.0, 2.0]);
        let w = Tensor::matrix(1, 1, vec![3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grown = block_diag(&w, 0.0, &mut rng);
        assert_eq!(grown.shape(), &[2, 2]);
        assert_eq!(grown.data(), &[3.0, 0.0, 0.0, 3.0]);
        let head = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let h = stack_rows(&head, 0.5);
        assert_eq!(h.shape(), &[2, 1]);
        assert_eq!(h.data(), &[1.0, 1.0]);
    }

    #[test]
    fn noisy_block_preserves_duplicated_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::<f64>::randn(&[3, 2], 1.0, &mut rng);
        let g = block_diag(&w, 0.1, &mut rng);
        let x = Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let xx = dup_cols(&x, 1.0);
        let y = x.matmul(&w).unwrap();
        let yy = xx.matmul(&g).unwrap();
        for j in 0..2 {
            assert!((yy.data()[j] - y.data()[j]).abs() < 1e-12);
            assert!((yy.data()[j + 2] - y.data()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn width_doubles_heads_and_keeps_head_dim() {
        let s = state(ModelConfig::new(1, 8, 2, 7, 5), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = grow_width(&s, 0.0, &mut rng).unwrap();
        let c = &g.model.config;
        assert_eq!((c.d_model, c.n_heads, c.d_ff), (16, 4, 64));
        assert_eq!(c.head_dim(), 4);
        g.check_layout().unwrap();
    }

    #[test]
    fn width_rejects_tied_head() {
        let mut cfg = ModelConfig::new(1, 8, 2, 7, 5);
        cfg.tie_embeddings = true;
        let s = state(cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(grow_width(&s, 0.0, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn depth_places_originals_at_even_indices() {
        let s = state(ModelConfig::new(2, 8, 2, 7, 5), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = grow_depth(&s, &mut rng).unwrap();
        assert_eq!(g.model.config.n_layers, 4);
        assert_eq!(g.model.params.layers[0], s.model.params.layers[0]);
        assert_eq!(g.model.params.layers[2], s.model.params.layers[1]);
        let id = &g.model.params.layers[1];
        for f in [field::LN1_GAIN, field::LN1_BIAS, field::LN2_GAIN, field::LN2_BIAS, field::Q_BIAS, field::DOWN_BIAS] {
            assert_eq!(id.tensors[f].max_abs(), 0.0);
        }
        assert!(id.tensors[field::Q].max_abs() > 0.0);
        assert_eq!(g.adam.m.layers[3].tensors.iter().map(|t| t.max_abs()).fold(0.0, f64::max), 0.0);
    }

    #[test]
    fn policies_set_clock_and_moments() {
        let mut s = state(ModelConfig::new(1, 8, 2, 7, 5), 5);
        s.set_clock(1000);
        s.adam.m.final_ln_gain = Tensor::full(&[8], 0.3);
        s.adam.moment_steps.fill(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let op = GrowthOp::new(GrowthKind::Depth2x).with_rho(0.7);
        assert_eq!(op.apply(&s, &mut rng).unwrap().clock(), 700);
        let op = GrowthOp::new(GrowthKind::Width2x).with_rho(0.55);
        let w = op.apply(&s, &mut rng).unwrap();
        assert_eq!(w.clock(), 550);
        assert_eq!(w.adam.m.final_ln_gain.data()[9], 0.15);
        let zero = GrowthOp {
            optimizer: OptimizerPolicy::Zero,
            lr: LrPolicy::Restart,
            ..op
        };
        let z = zero.apply(&s, &mut rng).unwrap();
        assert_eq!(z.clock(), 0);
        assert!(z.adam.moment_steps.iter().all(|&k| k == 0));
        assert_eq!(z.adam.m.final_ln_gain.max_abs(), 0.0);
        let cont = GrowthOp {
            lr: LrPolicy::Continue,
            ..op
        };
        assert_eq!(cont.apply(&s, &mut rng).unwrap().clock(), 1000);
        assert!(GrowthOp::new(GrowthKind::Depth2x).with_rho(1.5).validate().is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            GrowthKind::Width2x,
            GrowthKind::Depth2x,
            GrowthKind::DepthThenWidth,
            GrowthKind::StackCopyDepth,
            GrowthKind::FfnOnlyWidth,
        ] {
            assert_eq!(GrowthKind::parse(k.name()).unwrap(), k);
        }
        assert!(GrowthKind::parse("triple").is_err());
    }
}
