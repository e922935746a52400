//! GPT2-style decoder-only transformer with pre-LN residual blocks:
//!
//! ```text
//! x' = x  + Attention(LN1(x))
//! y  = x' + FFN(LN2(x'))
//! ```
//!
//! Parameters live in a named, stably ordered structure so optimizer
//! moments, gradients and checkpoints can mirror it tensor for tensor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Reduction, Var, DEFAULT_LN_EPS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_INIT_STD: f64 = 0.02;

fn default_ln_eps() -> f64 {
    DEFAULT_LN_EPS
}

/// Architecture descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab: usize,
    pub n_ctx: usize,
    /// Hidden width of the feed-forward block; `4 * d_model` unless a
    /// feed-forward-only growth changed it.
    pub d_ff: usize,
    /// Output head shares the token embedding matrix (GPT2 convention).
    /// Off by default: the width operator needs an independent head.
    #[serde(default)]
    pub tie_embeddings: bool,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

impl ModelConfig {
    pub fn new(n_layers: usize, d_model: usize, n_heads: usize, vocab: usize, n_ctx: usize) -> Self {
        ModelConfig {
            n_layers,
            d_model,
            n_heads,
            vocab,
            n_ctx,
            d_ff: 4 * d_model,
            tie_embeddings: false,
            ln_eps: DEFAULT_LN_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 {
            return fail(format!("layers/width/heads must be positive: {self:?}"));
        }
        if self.vocab == 0 || self.n_ctx == 0 || self.d_ff == 0 {
            return fail(format!("vocab/context/ffn width must be positive: {self:?}"));
        }
        if self.d_model % 2 != 0 {
            return fail(format!("d_model {} must be even", self.d_model));
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "{} heads do not divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        if !(self.ln_eps > 0.0) {
            return fail(format!("layer norm eps must be positive, got {}", self.ln_eps));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// How a tensor participates in the forward pass; the growth operators
/// dispatch on this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    TokenEmbedding,
    PositionEmbedding,
    NormGain,
    NormBias,
    /// Linear weight inside a block, `[fan_in, fan_out]`.
    Weight,
    Bias,
    /// Final logit-producing weight `[d_model, vocab]`.
    HeadWeight,
    HeadBias,
}

impl ParamRole {
    pub fn is_embedding(self) -> bool {
        matches!(self, ParamRole::TokenEmbedding | ParamRole::PositionEmbedding)
    }
}

/// Which sublayer a block tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sublayer {
    Attention,
    FeedForward,
}

pub const LAYER_FIELDS: [(&str, ParamRole, Sublayer); 16] = [
    ("ln1.gain", ParamRole::NormGain, Sublayer::Attention),
    ("ln1.bias", ParamRole::NormBias, Sublayer::Attention),
    ("attn.q.weight", ParamRole::Weight, Sublayer::Attention),
    ("attn.q.bias", ParamRole::Bias, Sublayer::Attention),
    ("attn.k.weight", ParamRole::Weight, Sublayer::Attention),
    ("attn.k.bias", ParamRole::Bias, Sublayer::Attention),
    ("attn.v.weight", ParamRole::Weight, Sublayer::Attention),
    ("attn.v.bias", ParamRole::Bias, Sublayer::Attention),
    ("attn.out.weight", ParamRole::Weight, Sublayer::Attention),
    ("attn.out.bias", ParamRole::Bias, Sublayer::Attention),
    ("ln2.gain", ParamRole::NormGain, Sublayer::FeedForward),
    ("ln2.bias", ParamRole::NormBias, Sublayer::FeedForward),
    ("ffn.up.weight", ParamRole::Weight, Sublayer::FeedForward),
    ("ffn.up.bias", ParamRole::Bias, Sublayer::FeedForward),
    ("ffn.down.weight", ParamRole::Weight, Sublayer::FeedForward),
    ("ffn.down.bias", ParamRole::Bias, Sublayer::FeedForward),
];

/// Tensors of one transformer block, in `LAYER_FIELDS` order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub tensors: Vec<Tensor<T>>,
}

/// Indices into [`LayerParams::tensors`].
pub mod field {
    pub const LN1_GAIN: usize = 0;
    pub const LN1_BIAS: usize = 1;
    pub const Q: usize = 2;
    pub const Q_BIAS: usize = 3;
    pub const K: usize = 4;
    pub const K_BIAS: usize = 5;
    pub const V: usize = 6;
    pub const V_BIAS: usize = 7;
    pub const OUT: usize = 8;
    pub const OUT_BIAS: usize = 9;
    pub const LN2_GAIN: usize = 10;
    pub const LN2_BIAS: usize = 11;
    pub const UP: usize = 12;
    pub const UP_BIAS: usize = 13;
    pub const DOWN: usize = 14;
    pub const DOWN_BIAS: usize = 15;
}

impl<T: Scalar> LayerParams<T> {
    pub fn shapes(d: usize, d_ff: usize) -> [Vec<usize>; 16] {
        [
            vec![d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, d_ff],
            vec![d_ff],
            vec![d_ff, d],
            vec![d],
        ]
    }

    pub fn zeros(d: usize, d_ff: usize) -> Self {
        LayerParams {
            tensors: Self::shapes(d, d_ff).iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Standard initialization: N(0, std^2) weights, zero biases, unit gains.
    pub fn init<R: Rng + ?Sized>(d: usize, d_ff: usize, std: f64, out_std: f64, rng: &mut R) -> Self {
        let tensors = Self::shapes(d, d_ff)
            .iter()
            .zip(LAYER_FIELDS.iter())
            .enumerate()
            .map(|(i, (shape, (_, role, _)))| match role {
                ParamRole::NormGain => Tensor::ones(shape),
                ParamRole::Weight if i == field::OUT || i == field::DOWN => {
                    Tensor::randn(shape, out_std, rng)
                }
                ParamRole::Weight => Tensor::randn(shape, std, rng),
                _ => Tensor::zeros(shape),
            })
            .collect();
        LayerParams { tensors }
    }
}

/// All model parameters. Canonical order: token embedding, position
/// embedding, each block's 16 tensors, final LN gain and bias, head weight
/// (absent when tied) and head bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    pub token_embedding: Tensor<T>,
    pub position_embedding: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_ln_gain: Tensor<T>,
    pub final_ln_bias: Tensor<T>,
    /// `[d_model, vocab]`; `None` when the head is tied to the token
    /// embedding.
    pub head: Option<Tensor<T>>,
    pub head_bias: Tensor<T>,
}

impl<T: Scalar> Parameters<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (d, v) = (config.d_model, config.vocab);
        Parameters {
            token_embedding: Tensor::zeros(&[v, d]),
            position_embedding: Tensor::zeros(&[config.n_ctx, d]),
            layers: (0..config.n_layers)
                .map(|_| LayerParams::zeros(d, config.d_ff))
                .collect(),
            final_ln_gain: Tensor::zeros(&[d]),
            final_ln_bias: Tensor::zeros(&[d]),
            head: (!config.tie_embeddings).then(|| Tensor::zeros(&[d, v])),
            head_bias: Tensor::zeros(&[v]),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for l in &self.layers {
            out.extend(l.tensors.iter());
        }
        out.push(&self.final_ln_gain);
        out.push(&self.final_ln_bias);
        if let Some(h) = &self.head {
            out.push(h);
        }
        out.push(&self.head_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for l in &mut self.layers {
            out.extend(l.tensors.iter_mut());
        }
        out.push(&mut self.final_ln_gain);
        out.push(&mut self.final_ln_bias);
        if let Some(h) = &mut self.head {
            out.push(h);
        }
        out.push(&mut self.head_bias);
        out
    }

    /// Stable names, aligned with [`Parameters::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["wte".to_string(), "wpe".to_string()];
        for i in 0..self.layers.len() {
            out.extend(LAYER_FIELDS.iter().map(|(n, _, _)| format!("h.{i}.{n}")));
        }
        out.push("ln_f.gain".into());
        out.push("ln_f.bias".into());
        if self.head.is_some() {
            out.push("head.weight".into());
        }
        out.push("head.bias".into());
        out
    }

    pub fn roles(&self) -> Vec<ParamRole> {
        let mut out = vec![ParamRole::TokenEmbedding, ParamRole::PositionEmbedding];
        for _ in &self.layers {
            out.extend(LAYER_FIELDS.iter().map(|(_, r, _)| *r));
        }
        out.push(ParamRole::NormGain);
        out.push(ParamRole::NormBias);
        if self.head.is_some() {
            out.push(ParamRole::HeadWeight);
        }
        out.push(ParamRole::HeadBias);
        out
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        let mut out = vec![self.token_embedding, self.position_embedding];
        for l in self.layers {
            out.extend(l.tensors);
        }
        out.push(self.final_ln_gain);
        out.push(self.final_ln_bias);
        if let Some(h) = self.head {
            out.push(h);
        }
        out.push(self.head_bias);
        out
    }

    /// Inverse of [`Parameters::into_tensors`] for a given layout.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let template = Parameters::<T>::zeros(config);
        let expected: Vec<Vec<usize>> = template.tensors().iter().map(|t| t.shape().to_vec()).collect();
        if tensors.len() != expected.len() {
            return Err(Error::Contract(format!(
                "expected {} tensors for this config, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((t, shape), name) in tensors.iter().zip(&expected).zip(template.names()) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Contract(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let token_embedding = it.next().unwrap();
        let position_embedding = it.next().unwrap();
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                tensors: it.by_ref().take(LAYER_FIELDS.len()).collect(),
            })
            .collect();
        let final_ln_gain = it.next().unwrap();
        let final_ln_bias = it.next().unwrap();
        let head = if config.tie_embeddings { None } else { it.next() };
        let head_bias = it.next().unwrap();
        Ok(Parameters {
            token_embedding,
            position_embedding,
            layers,
            final_ln_gain,
            final_ln_bias,
            head,
            head_bias,
        })
    }

    /// Checks every shape against `config`.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        let template = Parameters::<T>::zeros(config);
        let mine = self.tensors();
        let theirs = template.tensors();
        if mine.len() != theirs.len() {
            return Err(Error::Contract(format!(
                "layout has {} tensors, config implies {}",
                mine.len(),
                theirs.len()
            )));
        }
        for ((a, b), name) in mine.iter().zip(&theirs).zip(template.names()) {
            if a.shape() != b.shape() {
                return Err(Error::Contract(format!(
                    "`{name}`: shape {:?} vs expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Applies `f` to every tensor (with its role), producing a structure of
    /// the same layout.
    pub fn map(&self, mut f: impl FnMut(ParamRole, &Tensor<T>) -> Tensor<T>) -> Self {
        let roles = self.roles();
        let mut mapped = self.tensors().into_iter().zip(roles).map(|(t, r)| f(r, t));
        let token_embedding = mapped.next().unwrap();
        let position_embedding = mapped.next().unwrap();
        let layers = self
            .layers
            .iter()
            .map(|_| LayerParams {
                tensors: mapped.by_ref().take(LAYER_FIELDS.len()).collect(),
            })
            .collect();
        let final_ln_gain = mapped.next().unwrap();
        let final_ln_bias = mapped.next().unwrap();
        let head = self.head.as_ref().map(|_| mapped.next().unwrap());
        let head_bias = mapped.next().unwrap();
        Parameters {
            token_embedding,
            position_embedding,
            layers,
            final_ln_gain,
            final_ln_bias,
            head,
            head_bias,
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// A token batch of `batch` rows, each `seq` tokens long, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch: usize,
    pub seq: usize,
    pub tokens: Vec<usize>,
}

impl TokenBatch {
    pub fn new(batch: usize, seq: usize, tokens: Vec<usize>) -> Result<Self> {
        if batch == 0 || seq == 0 || tokens.len() != batch * seq {
            return Err(Error::Input(format!(
                "token batch {batch}x{seq} with {} tokens",
                tokens.len()
            )));
        }
        Ok(TokenBatch { batch, seq, tokens })
    }

    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let seq = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != seq) {
            return Err(Error::Input("ragged token rows".into()));
        }
        Self::new(rows.len(), seq, rows.concat())
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.tokens[b * self.seq..(b + 1) * self.seq]
    }

    /// Inputs (all but the last token) and next-token targets.
    pub fn shifted(&self) -> Result<(TokenBatch, Vec<usize>)> {
        if self.seq < 2 {
            return Err(Error::Input(format!(
                "need at least 2 tokens per row for next-token targets, got {}",
                self.seq
            )));
        }
        let t = self.seq - 1;
        let mut inputs = Vec::with_capacity(self.batch * t);
        let mut targets = Vec::with_capacity(self.batch * t);
        for b in 0..self.batch {
            let r = self.row(b);
            inputs.extend_from_slice(&r[..t]);
            targets.extend_from_slice(&r[1..]);
        }
        Ok((TokenBatch::new(self.batch, t, inputs)?, targets))
    }

    /// Number of predicted tokens in a loss evaluation.
    pub fn target_count(&self) -> usize {
        self.batch * self.seq.saturating_sub(1)
    }
}

/// Tape produced by a forward pass: the graph, one leaf per parameter in
/// canonical order, and the logits node `[batch * seq, vocab]`.
pub struct ForwardPass<T> {
    pub graph: Graph<T>,
    pub params: Vec<Var>,
    pub logits: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Parameters<T>,
}

/// Initialization options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitOptions {
    pub std: f64,
    /// Scale the residual output projections by `1/sqrt(2L)`.
    pub scale_residual: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            std: DEFAULT_INIT_STD,
            scale_residual: false,
        }
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, params: Parameters<T>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(Model { config, params })
    }

    pub fn init<R: Rng + ?Sized>(config: ModelConfig, opts: InitOptions, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, v) = (config.d_model, config.vocab);
        let out_std = if opts.scale_residual {
            opts.std / ((2 * config.n_layers) as f64).sqrt()
        } else {
            opts.std
        };
        let token_embedding = Tensor::randn(&[v, d], opts.std, rng);
        let position_embedding = Tensor::randn(&[config.n_ctx, d], opts.std, rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams::init(d, config.d_ff, opts.std, out_std, rng))
            .collect();
        let head = (!config.tie_embeddings).then(|| Tensor::randn(&[d, v], opts.std, rng));
        let params = Parameters {
            token_embedding,
            position_embedding,
            layers,
            final_ln_gain: Tensor::ones(&[d]),
            final_ln_bias: Tensor::zeros(&[d]),
            head,
            head_bias: Tensor::zeros(&[v]),
        };
        Ok(Model { config, params })
    }

    fn check_tokens(&self, batch: &TokenBatch) -> Result<()> {
        if batch.seq > self.config.n_ctx {
            return Err(Error::Input(format!(
                "sequence length {} exceeds context {}",
                batch.seq, self.config.n_ctx
            )));
        }
        if let Some(&t) = batch.tokens.iter().find(|&&t| t >= self.config.vocab) {
            return Err(Error::Input(format!(
                "token {t} outside vocabulary of size {}",
                self.config.vocab
            )));
        }
        Ok(())
    }

    /// Records the forward pass for `inputs` on a fresh tape.
    pub fn forward_pass(&self, inputs: &TokenBatch, reduction: Reduction) -> Result<ForwardPass<T>> {
        self.check_tokens(inputs)?;
        let cfg = &self.config;
        let eps = T::lit(cfg.ln_eps);
        let mut g = Graph::with_reduction(reduction);
        let params: Vec<Var> = self
            .params
            .tensors()
            .into_iter()
            .map(|t| g.param(t.clone()))
            .collect();
        let wte = params[0];
        let wpe = params[1];
        let positions: Vec<usize> = (0..inputs.batch).flat_map(|_| 0..inputs.seq).collect();
        let tok = g.embedding(wte, &inputs.tokens)?;
        let pos = g.embedding(wpe, &positions)?;
        let mut x = g.add(tok, pos)?;

        for l in 0..cfg.n_layers {
            let p = |f: usize| params[2 + l * LAYER_FIELDS.len() + f];
            use field::*;
            let h = g.layer_norm(x, p(LN1_GAIN), p(LN1_BIAS), eps)?;
            let q = g.matmul(h, p(Q))?;
            let q = g.add_bias(q, p(Q_BIAS))?;
            let k = g.matmul(h, p(K))?;
            let k = g.add_bias(k, p(K_BIAS))?;
            let v = g.matmul(h, p(V))?;
            let v = g.add_bias(v, p(V_BIAS))?;
            let a = g.causal_attention(q, k, v, inputs.batch, inputs.seq, cfg.n_heads)?;
            let o = g.matmul(a, p(OUT))?;
            let o = g.add_bias(o, p(OUT_BIAS))?;
            x = g.add(x, o)?;

            let h = g.layer_norm(x, p(LN2_GAIN), p(LN2_BIAS), eps)?;
            let u = g.matmul(h, p(UP))?;
            let u = g.add_bias(u, p(UP_BIAS))?;
            let u = g.gelu(u);
            let f = g.matmul(u, p(DOWN))?;
            let f = g.add_bias(f, p(DOWN_BIAS))?;
            x = g.add(x, f)?;
        }
        let tail = 2 + cfg.n_layers * LAYER_FIELDS.len();
        let xf = g.layer_norm(x, params[tail], params[tail + 1], eps)?;
        let (logits, _) = if cfg.tie_embeddings {
            let l = g.matmul_bt(xf, wte)?;
            (g.add_bias(l, params[tail + 2])?, ())
        } else {
            let l = g.matmul(xf, params[tail + 2])?;
            (g.add_bias(l, params[tail + 3])?, ())
        };
        Ok(ForwardPass {
            graph: g,
            params,
            logits,
        })
    }

    /// Logits `[batch, seq, vocab]`.
    pub fn forward(&self, inputs: &TokenBatch) -> Result<Tensor<T>> {
        let fp = self.forward_pass(inputs, Reduction::Sequential)?;
        fp.graph
            .value(fp.logits)
            .clone()
            .reshape(vec![inputs.batch, inputs.seq, self.config.vocab])
    }

    /// Mean next-token cross entropy in nats.
    pub fn loss(&self, batch: &TokenBatch) -> Result<T> {
        let (inputs, targets) = batch.shifted()?;
        let mut fp = self.forward_pass(&inputs, Reduction::Sequential)?;
        let l = fp.graph.softmax_cross_entropy(fp.logits, &targets)?;
        fp.graph.value(l).item()
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, batch: &TokenBatch) -> Result<(T, Parameters<T>)> {
        self.loss_and_grads_with(batch, Reduction::Sequential)
    }

    pub fn loss_and_grads_with(&self, batch: &TokenBatch, reduction: Reduction) -> Result<(T, Parameters<T>)> {
        let (inputs, targets) = batch.shifted()?;
        let mut fp = self.forward_pass(&inputs, reduction)?;
        let l = fp.graph.softmax_cross_entropy(fp.logits, &targets)?;
        let loss = fp.graph.value(l).item()?;
        let mut grads = fp.graph.backward(l)?;
        let tensors: Vec<Tensor<T>> = fp.params.iter().map(|&v| grads.take_or_zeros(v)).collect();
        Ok((loss, Parameters::from_tensors(&self.config, tensors)?))
    }

    /// Greedy next token for each row; a smoke test of the trained model.
    pub fn greedy_next(&self, inputs: &TokenBatch) -> Result<Vec<usize>> {
        let logits = self.forward(inputs)?;
        let v = self.config.vocab;
        let d = logits.data();
        Ok((0..inputs.batch)
            .map(|b| {
                let off = (b * inputs.seq + inputs.seq - 1) * v;
                let row = &d[off..off + v];
                let mut best = 0;
                for (j, x) in row.iter().enumerate() {
                    if *x > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    pub fn non_embedding_params(&self) -> usize {
        param_count(&self.config, false)
    }
}

/// Exact parameter count. The non-embedding variant drops the token and
/// position tables; an untied output head counts as non-embedding.
pub fn param_count(config: &ModelConfig, include_embeddings: bool) -> usize {
    let (d, f, v) = (config.d_model, config.d_ff, config.vocab);
    let per_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d);
    let head = if config.tie_embeddings { v } else { d * v + v };
    let non_embedding = config.n_layers * per_layer + 2 * d + head;
    if include_embeddings {
        non_embedding + v * d + config.n_ctx * d
    } else {
        non_embedding
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> Model<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::init(ModelConfig::new(2, 8, 2, 11, 6), InitOptions::default(), &mut rng).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(1, 8, 3, 5, 4).validate().is_err());
        assert!(ModelConfig::new(1, 7, 7, 5, 4).validate().is_err());
        assert!(ModelConfig::new(0, 8, 2, 5, 4).validate().is_err());
        assert!(ModelConfig::new(1, 8, 2, 5, 4).validate().is_ok());
    }

    #[test]
    fn names_roles_and_tensors_align() {
        let m = tiny(0);
        let n = m.params.names();
        assert_eq!(n.len(), m.params.tensors().len());
        assert_eq!(n.len(), m.params.roles().len());
        assert_eq!(n[2], "h.0.ln1.gain");
        assert_eq!(n.last().unwrap(), "head.bias");
        assert_eq!(m.params.count(), param_count(&m.config, true));
    }

    #[test]
    fn hand_enumerated_count() {
        // L=1, d=2, V=2, n_ctx=2, h=1, d_ff=8
        let cfg = ModelConfig::new(1, 2, 1, 2, 2);
        let by_hand = 2 * 2   // wte
            + 2 * 2           // wpe
            + 2 + 2           // ln1
            + 4 * (2 * 2 + 2) // q k v out
            + 2 + 2           // ln2
            + 2 * 8 + 8       // up
            + 8 * 2 + 2       // down
            + 2 + 2           // ln_f
            + 2 * 2 + 2; // head
        assert_eq!(param_count(&cfg, true), by_hand);
        assert_eq!(param_count(&cfg, false), by_hand - 8);
    }

    #[test]
    fn gpt2_reference_sizes() {
        let mut base = ModelConfig::new(12, 768, 12, 50257, 1024);
        base.tie_embeddings = true;
        let n = param_count(&base, true) as f64;
        assert!((n / 125e6 - 1.0).abs() < 0.03, "{n}");
        let mut large = ModelConfig::new(24, 1536, 16, 50257, 1024);
        large.tie_embeddings = true;
        let n = param_count(&large, true) as f64;
        assert!((n / 760e6 - 1.0).abs() < 0.03, "{n}");
    }

    #[test]
    fn non_embedding_count_monotone() {
        let base = ModelConfig::new(2, 8, 2, 11, 6);
        let mut deeper = base.clone();
        deeper.n_layers = 3;
        let mut wider = ModelConfig::new(2, 10, 2, 11, 6);
        wider.d_ff = 40;
        assert!(param_count(&deeper, false) > param_count(&base, false));
        assert!(param_count(&wider, false) > param_count(&base, false));
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let m = tiny(1);
        let too_long = TokenBatch::new(1, 7, vec![0; 7]).unwrap();
        assert!(matches!(m.forward(&too_long), Err(Error::Input(_))));
        let bad_tok = TokenBatch::new(1, 3, vec![0, 11, 2]).unwrap();
        assert!(matches!(m.forward(&bad_tok), Err(Error::Input(_))));
        let single = TokenBatch::new(2, 1, vec![0, 1]).unwrap();
        assert!(matches!(m.loss(&single), Err(Error::Input(_))));
    }

    #[test]
    fn zeroed_head_gives_uniform_loss() {
        let mut m = tiny(2);
        m.params.head = Some(Tensor::zeros(&[8, 11]));
        let b = TokenBatch::new(2, 5, vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10]).unwrap();
        let l = m.loss(&b).unwrap();
        assert!((l - (11f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_invariant_under_batch_duplication() {
        let m = tiny(3);
        let b = TokenBatch::new(1, 6, vec![3, 1, 4, 1, 5, 9]).unwrap();
        let bb = TokenBatch::new(2, 6, [b.tokens.clone(), b.tokens.clone()].concat()).unwrap();
        assert_eq!(m.loss(&b).unwrap(), m.loss(&bb).unwrap());
    }

    #[test]
    fn tied_head_forward_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = ModelConfig::new(1, 8, 2, 11, 6);
        cfg.tie_embeddings = true;
        let m = Model::<f64>::init(cfg, InitOptions::default(), &mut rng).unwrap();
        assert!(m.params.head.is_none());
        let b = TokenBatch::new(1, 4, vec![1, 2, 3, 4]).unwrap();
        let (l, g) = m.loss_and_grads(&b).unwrap();
        assert!(l.is_finite());
        assert!(g.token_embedding.max_abs() > 0.0);
    }
}
