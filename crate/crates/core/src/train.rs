//! Single training steps and held-out evaluation.

use crate::error::{Error, Result};
use crate::model::{Model, TokenBatch};
use crate::optim::{StepInfo, TrainingState};
use crate::scalar::Scalar;

/// Deterministic batch stream: the batch for a given global step index is
/// fixed, so matched runs see the same data order and a resumed run picks
/// up exactly where it stopped.
pub trait BatchSource {
    fn batch(&mut self, index: u64) -> Result<TokenBatch>;
}

impl<F: FnMut(u64) -> Result<TokenBatch>> BatchSource for F {
    fn batch(&mut self, index: u64) -> Result<TokenBatch> {
        self(index)
    }
}

/// Cycles over a fixed list of batches.
pub struct FixedBatches(pub Vec<TokenBatch>);

impl BatchSource for FixedBatches {
    fn batch(&mut self, index: u64) -> Result<TokenBatch> {
        if self.0.is_empty() {
            return Err(Error::Input("no batches".into()));
        }
        Ok(self.0[(index % self.0.len() as u64) as usize].clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

pub fn train_step<T: Scalar>(state: &mut TrainingState<T>, batch: &TokenBatch) -> Result<StepStats> {
    let (loss, grads) = state.model.loss_and_grads(batch)?;
    let StepInfo {
        lr,
        grad_norm,
        clipped,
    } = state.adam_step(grads)?;
    Ok(StepStats {
        loss: loss.to_f64_lossy(),
        lr,
        grad_norm,
        clipped,
    })
}

/// Mean of per-batch losses.
pub fn evaluate<T: Scalar>(model: &Model<T>, batches: &[TokenBatch]) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Input("empty validation set".into()));
    }
    let mut total = 0.0;
    for b in batches {
        total += model.loss(b)?.to_f64_lossy();
    }
    Ok(total / batches.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitOptions, ModelConfig};
    use crate::optim::{AdamConfig, DecayShape, LrSchedule};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn memorizes_a_short_string() {
        let text: Vec<usize> = b"the quick brown fox jumps over t".iter().map(|&b| (b - b' ') as usize).collect();
        assert_eq!(text.len(), 32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ModelConfig::new(1, 16, 2, 91, 32);
        let model = Model::<f64>::init(cfg, InitOptions::default(), &mut rng).unwrap();
        let schedule = LrSchedule::new(20, 500, DecayShape::Constant, 1e-2).unwrap();
        let mut s = TrainingState::new(model, schedule, AdamConfig::default()).unwrap();
        let batch = TokenBatch::new(1, 32, text).unwrap();
        for _ in 0..500 {
            train_step(&mut s, &batch).unwrap();
        }
        let l = s.model.loss(&batch).unwrap();
        assert!(l < 0.1, "loss {l}");
    }
}
