//! The model against a second, loop-only implementation of the pre-LN
//! block, plus structural properties of the forward pass.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use staged_core::model::{field, param_count, InitOptions, Model, ModelConfig, TokenBatch};
use staged_core::tensor::Tensor;

type Mat = Vec<Vec<f64>>;

fn mat(t: &Tensor<f64>) -> Mat {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn linear(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for (i, xi) in x.iter().enumerate() {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj += xi * w[i][j];
        }
    }
    y
}

fn ln(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let r = 1.0 / (var + eps).sqrt();
    x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mu) * r * g + b).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Straight-line forward for one sequence: per-position loops, explicit
/// per-head attention with a causal mask.
fn oracle_logits(m: &Model<f64>, tokens: &[usize]) -> Mat {
    let c = &m.config;
    let p = &m.params;
    let (d, h) = (c.d_model, c.n_heads);
    let dh = d / h;
    let wte = mat(&p.token_embedding);
    let wpe = mat(&p.position_embedding);
    let mut xs: Mat = tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| (0..d).map(|j| wte[tok][j] + wpe[t][j]).collect())
        .collect();
    for layer in &p.layers {
        let w = |f: usize| mat(&layer.tensors[f]);
        let v = |f: usize| layer.tensors[f].data().to_vec();
        let normed: Mat = xs.iter().map(|x| ln(x, &v(field::LN1_GAIN), &v(field::LN1_BIAS), c.ln_eps)).collect();
        let q: Mat = normed.iter().map(|x| linear(x, &w(field::Q), &v(field::Q_BIAS))).collect();
        let k: Mat = normed.iter().map(|x| linear(x, &w(field::K), &v(field::K_BIAS))).collect();
        let vv: Mat = normed.iter().map(|x| linear(x, &w(field::V), &v(field::V_BIAS))).collect();
        let mut att = vec![vec![0.0; d]; xs.len()];
        for head in 0..h {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..xs.len() {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    att[i][c] = (0..=i).map(|j| e[j] / z * vv[j][c]).sum();
                }
            }
        }
        for (x, a) in xs.iter_mut().zip(&att) {
            let o = linear(a, &w(field::OUT), &v(field::OUT_BIAS));
            x.iter_mut().zip(o).for_each(|(x, o)| *x += o);
        }
        for x in xs.iter_mut() {
            let n = ln(x, &v(field::LN2_GAIN), &v(field::LN2_BIAS), c.ln_eps);
            let u: Vec<f64> = linear(&n, &w(field::UP), &v(field::UP_BIAS)).into_iter().map(gelu).collect();
            let f = linear(&u, &w(field::DOWN), &v(field::DOWN_BIAS));
            x.iter_mut().zip(f).for_each(|(x, f)| *x += f);
        }
    }
    let head = mat(p.head.as_ref().unwrap());
    xs.iter()
        .map(|x| {
            let n = ln(x, p.final_ln_gain.data(), p.final_ln_bias.data(), c.ln_eps);
            linear(&n, &head, p.head_bias.data())
        })
        .collect()
}

fn perturbed_model(cfg: ModelConfig, seed: u64) -> Model<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Model::init(cfg, InitOptions { std: 0.3, ..Default::default() }, &mut rng).unwrap();
    // Non-default LN affine and biases so the oracle exercises them.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    for t in m.params.tensors_mut() {
        let noise = Tensor::<f64>::randn(t.shape(), 0.1, &mut rng);
        for (x, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *x += n;
        }
    }
    m
}

#[test]
fn forward_matches_loop_oracle() {
    let m = perturbed_model(ModelConfig::new(2, 16, 4, 13, 8), 42);
    let rows = vec![vec![3, 1, 4, 1, 5, 9, 2, 6], vec![12, 0, 7, 7, 7, 11, 8, 2]];
    let batch = TokenBatch::from_rows(&rows).unwrap();
    let logits = m.forward(&batch).unwrap();
    let v = m.config.vocab;
    let mut worst: f64 = 0.0;
    let mut oracle_loss = 0.0;
    for (b, row) in rows.iter().enumerate() {
        let o = oracle_logits(&m, row);
        for (t, ot) in o.iter().enumerate() {
            for j in 0..v {
                let mine = logits.data()[(b * 8 + t) * v + j];
                worst = worst.max((mine - ot[j]).abs());
            }
            if t + 1 < row.len() {
                let lse = ot.iter().map(|x| x.exp()).sum::<f64>().ln();
                oracle_loss += lse - ot[row[t + 1]];
            }
        }
    }
    oracle_loss /= 14.0;
    assert!(worst < 1e-12, "max logit deviation {worst:e}");
    let loss = m.loss(&batch).unwrap();
    assert!((loss - oracle_loss).abs() < 1e-12, "{loss} vs {oracle_loss}");
}

#[test]
fn zeroed_sublayers_make_a_layer_identity() {
    let mut m = perturbed_model(ModelConfig::new(1, 8, 2, 7, 6), 3);
    let batch = TokenBatch::new(1, 6, vec![1, 2, 3, 4, 5, 6]).unwrap();
    let before = m.forward(&batch).unwrap();
    let layer = &mut m.params.layers[0].tensors;
    for f in [field::OUT, field::OUT_BIAS, field::DOWN, field::DOWN_BIAS] {
        layer[f] = Tensor::zeros(layer[f].shape());
    }
    let ablated = m.forward(&batch).unwrap();
    m.config.n_layers = 0;
    m.params.layers.clear();
    // A zero-layer model is not a valid config, so evaluate the pass-through
    // by hand: embeddings, final LN, head.
    let oracle = oracle_logits(&m, &batch.tokens);
    for (t, row) in oracle.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            assert!((ablated.data()[t * 7 + j] - x).abs() < 1e-12);
        }
    }
    assert_ne!(before, ablated);
}

#[test]
fn causal_mask() {
    let m = perturbed_model(ModelConfig::new(2, 8, 2, 9, 6), 5);
    let a = TokenBatch::new(1, 6, vec![1, 2, 3, 4, 5, 6]).unwrap();
    let b = TokenBatch::new(1, 6, vec![1, 2, 3, 8, 0, 0]).unwrap();
    let la = m.forward(&a).unwrap();
    let lb = m.forward(&b).unwrap();
    assert_eq!(&la.data()[..3 * 9], &lb.data()[..3 * 9]);
    assert_ne!(&la.data()[3 * 9..4 * 9], &lb.data()[3 * 9..4 * 9]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn non_embedding_count_strictly_monotone(l in 1usize..6, half_d in 1usize..40, v in 2usize..300) {
        let d = 2 * half_d;
        let base = ModelConfig::new(l, d, 1, v, 16);
        let deeper = ModelConfig::new(l + 1, d, 1, v, 16);
        let wider = ModelConfig::new(l, d + 2, 1, v, 16);
        prop_assert!(param_count(&deeper, false) > param_count(&base, false));
        prop_assert!(param_count(&wider, false) > param_count(&base, false));
        prop_assert!(param_count(&base, true) > param_count(&base, false));
    }

    #[test]
    fn logits_finite_and_loss_bounded(seed in 0u64..1000, toks in proptest::collection::vec(0usize..11, 2..8)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Model::<f64>::init(ModelConfig::new(1, 8, 2, 11, 8), InitOptions::default(), &mut rng).unwrap();
        let b = TokenBatch::new(1, toks.len(), toks).unwrap();
        prop_assert!(m.forward(&b).unwrap().is_finite());
        let l = m.loss(&b).unwrap();
        prop_assert!(l > 0.0 && l < 2.0 * (11f64).ln());
    }
}
