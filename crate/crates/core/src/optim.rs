//! Adam with an externally visible, growable state and a warmup-then-decay
//! learning-rate schedule driven by a re-settable step clock.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, Parameters};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayShape {
    Linear,
    Cosine,
    Constant,
}

/// Linear warmup from 0 to `max_lr` over `warmup` steps, then decay to 0
/// (or hold, for `Constant`) at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub warmup: u64,
    pub total: u64,
    pub shape: DecayShape,
    pub max_lr: f64,
}

impl LrSchedule {
    pub fn new(warmup: u64, total: u64, shape: DecayShape, max_lr: f64) -> Result<Self> {
        let s = LrSchedule {
            warmup,
            total,
            shape,
            max_lr,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(max_lr: f64) -> Self {
        LrSchedule {
            warmup: 0,
            total: 0,
            shape: DecayShape::Constant,
            max_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::Config(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        if self.shape != DecayShape::Constant && self.total < self.warmup {
            return Err(Error::Config(format!(
                "total steps {} shorter than warmup {}",
                self.total, self.warmup
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, t: u64) -> f64 {
        if t < self.warmup {
            return self.max_lr * t as f64 / self.warmup as f64;
        }
        let floor = match self.shape {
            DecayShape::Constant => return self.max_lr,
            _ => 0.0,
        };
        if t >= self.total {
            return floor;
        }
        let span = (self.total - self.warmup) as f64;
        let p = (t - self.warmup) as f64 / span;
        match self.shape {
            DecayShape::Linear => self.max_lr * (1.0 - p),
            DecayShape::Cosine => self.max_lr * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()),
            DecayShape::Constant => self.max_lr,
        }
    }
}

pub fn lr_at(schedule: &LrSchedule, t: u64) -> f64 {
    schedule.lr_at(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    pub bias_correction: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            bias_correction: true,
            clip_norm: Some(1.0),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_beta = |b: f64| (0.0..1.0).contains(&b);
        if !ok_beta(self.beta1) || !ok_beta(self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in [0, 1): {} {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("eps must be positive and weight decay nonnegative".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Adam moments mirroring the model parameters name for name.
///
/// `step` is the learning-rate clock: it indexes the schedule and is what
/// growth rewinds. `moment_steps` holds, per tensor in `Parameters::tensors`
/// order, the number of updates folded into that tensor's `m` and `v`. It
/// drives bias correction, so rewinding the clock does not distort warm
/// moments, and a tensor whose moments start from zero after growth gets
/// the full correction a fresh optimizer would.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Parameters<T>,
    pub v: Parameters<T>,
    pub step: u64,
    pub moment_steps: Vec<u64>,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros_like(params: &Parameters<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            moment_steps: vec![0; params.tensors().len()],
        }
    }

    pub fn v_nonnegative(&self) -> bool {
        self.v
            .tensors()
            .iter()
            .all(|t| t.data().iter().all(|&x| x >= T::zero()))
    }
}

/// Parameters, optimizer moments and learning-rate clock: everything a
/// growth operator transforms.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState<T> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub schedule: LrSchedule,
    pub optimizer: AdamConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

impl<T: Scalar> TrainingState<T> {
    pub fn new(model: Model<T>, schedule: LrSchedule, optimizer: AdamConfig) -> Result<Self> {
        schedule.validate()?;
        optimizer.validate()?;
        let adam = AdamState::zeros_like(&model.params);
        Ok(TrainingState {
            model,
            adam,
            schedule,
            optimizer,
        })
    }

    pub fn clock(&self) -> u64 {
        self.adam.step
    }

    /// Learning rate the next step will use.
    pub fn next_lr(&self) -> f64 {
        self.schedule.lr_at(self.adam.step)
    }

    /// Sets the step clock; moments are left untouched.
    pub fn set_clock(&mut self, t_new: u64) {
        self.adam.step = t_new;
    }

    pub fn check_layout(&self) -> Result<()> {
        self.model.params.check_layout(&self.model.config)?;
        self.adam.m.check_layout(&self.model.config)?;
        self.adam.v.check_layout(&self.model.config)?;
        let n = self.model.params.tensors().len();
        if self.adam.moment_steps.len() != n {
            return Err(Error::Contract(format!(
                "{} moment counters for {n} tensors",
                self.adam.moment_steps.len()
            )));
        }
        Ok(())
    }

    /// One Adam update with gradients `grads` (consumed; clipping rescales
    /// them in place).
    pub fn adam_step(&mut self, mut grads: Parameters<T>) -> Result<StepInfo> {
        grads
            .check_layout(&self.model.config)
            .map_err(|e| Error::Contract(format!("gradient layout: {e}")))?;
        let names = grads.names();
        for (t, name) in grads.tensors().iter().zip(&names) {
            if !t.is_finite() {
                return Err(Error::NonFiniteGradient {
                    parameter: name.clone(),
                });
            }
        }
        let cfg = self.optimizer;
        let mut norm_sq = T::zero();
        for t in grads.tensors() {
            norm_sq += t.norm_sq();
        }
        let grad_norm = norm_sq.sqrt().to_f64_lossy();
        let mut clipped = false;
        if let Some(c) = cfg.clip_norm {
            if grad_norm > c {
                let s = T::lit(c / grad_norm);
                for t in grads.tensors_mut() {
                    t.map_inplace(|x| x * s);
                }
                clipped = true;
            }
        }

        let lr = self.schedule.lr_at(self.adam.step);
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let (lr_t, eps, wd) = (T::lit(lr), T::lit(cfg.eps), T::lit(cfg.weight_decay));

        let params = self.model.params.tensors_mut();
        let ms = self.adam.m.tensors_mut();
        let vs = self.adam.v.tensors_mut();
        let counts = self.adam.moment_steps.iter_mut();
        for ((((p, m), v), g), k) in params.into_iter().zip(ms).zip(vs).zip(grads.tensors()).zip(counts) {
            *k += 1;
            let (bc1, bc2) = if cfg.bias_correction {
                let k = (*k).min(i32::MAX as u64) as i32;
                (T::one() - b1.powi(k), T::one() - b2.powi(k))
            } else {
                (T::one(), T::one())
            };
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = b1 * md[i] + one_b1 * gi;
                vd[i] = b2 * vd[i] + one_b2 * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                let mut upd = mhat / (vhat.sqrt() + eps);
                if wd > T::zero() {
                    upd += wd * pd[i];
                }
                pd[i] -= lr_t * upd;
            }
        }
        self.adam.step += 1;
        Ok(StepInfo {
            lr,
            grad_norm,
            clipped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitOptions, ModelConfig};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> LrSchedule {
        LrSchedule::new(100, 1100, DecayShape::Linear, 1e-3).unwrap()
    }

    #[test]
    fn warmup_and_linear_decay() {
        let s = sched();
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(100), 1e-3);
        assert!((s.lr_at(600) - 5e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(1100), 0.0);
        assert_eq!(s.lr_at(5000), 0.0);
        for t in 1..100 {
            assert!(s.lr_at(t) >= s.lr_at(t - 1));
        }
    }

    #[test]
    fn cosine_and_constant_shapes() {
        let c = LrSchedule::new(10, 110, DecayShape::Cosine, 2.0).unwrap();
        assert!((c.lr_at(60) - 1.0).abs() < 1e-12);
        assert!(c.lr_at(110).abs() < 1e-12);
        let k = LrSchedule::new(10, 0, DecayShape::Constant, 2.0).unwrap();
        assert_eq!(k.lr_at(5), 1.0);
        assert_eq!(k.lr_at(1_000_000), 2.0);
    }

    #[test]
    fn schedule_validation() {
        assert!(LrSchedule::new(100, 50, DecayShape::Linear, 1e-3).is_err());
        assert!(LrSchedule::new(0, 50, DecayShape::Linear, 0.0).is_err());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn state() -> TrainingState<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::init(ModelConfig::new(1, 4, 2, 5, 4), InitOptions::default(), &mut rng).unwrap();
        TrainingState::new(model, sched(), AdamConfig::default()).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = state();
        s.set_clock(150);
        let before = s.model.params.clone();
        let g = before.zeros_like();
        s.adam_step(g).unwrap();
        assert_eq!(s.model.params, before);
        assert_eq!(s.clock(), 151);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = state();
        let mut g = s.model.params.zeros_like();
        g.layers[0].tensors[3].data_mut()[1] = f64::NAN;
        match s.adam_step(g) {
            Err(Error::NonFiniteGradient { parameter }) => assert_eq!(parameter, "h.0.attn.q.bias"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn layout_mismatch_is_contract_error() {
        let mut s = state();
        let mut g = s.model.params.zeros_like();
        g.final_ln_gain = Tensor::zeros(&[3]);
        assert!(matches!(s.adam_step(g), Err(Error::Contract(_))));
    }

    #[test]
    fn set_clock_changes_next_lr_only() {
        let mut s = state();
        s.set_clock(1000);
        let m = s.adam.m.clone();
        s.set_clock(700);
        assert_eq!(s.next_lr(), s.schedule.lr_at(700));
        assert_eq!(s.adam.m, m);
        s.set_clock(0);
        assert_eq!(s.next_lr(), 0.0);
    }
}
