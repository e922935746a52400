//! Seeded Markov token source for experiments that need no corpus file.
//!
//! Each token follows its `order` predecessors through a fixed random table
//! with probability `determinism`, and is uniform otherwise. Bigger models
//! memorize the table faster, which is what the staged experiments need.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use staged_core::model::TokenBatch;
use staged_core::train::BatchSource;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovConfig {
    pub vocab: usize,
    pub order: usize,
    pub determinism: f64,
    /// Seeds the transition table, not the sampled text.
    pub table_seed: u64,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        MarkovConfig {
            vocab: 32,
            order: 2,
            determinism: 0.85,
            table_seed: 9,
        }
    }
}

/// Stream offset for held-out batches, far past any training index.
const VAL_STREAM: u64 = 1 << 48;

#[derive(Clone, Debug)]
pub struct MarkovSource {
    pub config: MarkovConfig,
    table: Vec<usize>,
    batch: usize,
    seq: usize,
    seed: u64,
}

impl MarkovSource {
    pub fn new(config: MarkovConfig, batch: usize, seq: usize, seed: u64) -> staged_core::Result<Self> {
        if config.vocab < 2 || !(1..=3).contains(&config.order) || !(0.0..=1.0).contains(&config.determinism) {
            return Err(staged_core::Error::Config(format!("bad Markov source {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.table_seed);
        let table = (0..config.vocab.pow(config.order as u32))
            .map(|_| rng.gen_range(0..config.vocab))
            .collect();
        Ok(MarkovSource {
            config,
            table,
            batch,
            seq,
            seed,
        })
    }

    fn sample(&self, stream: u64) -> TokenBatch {
        let v = self.config.vocab;
        let order = self.config.order;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut tokens = Vec::with_capacity(self.batch * self.seq);
        for _ in 0..self.batch {
            let row_start = tokens.len();
            for i in 0..self.seq {
                let t = if i >= order && rng.gen_bool(self.config.determinism) {
                    let ctx = tokens[row_start + i - order..row_start + i].iter().fold(0, |a, &t| a * v + t);
                    self.table[ctx]
                } else {
                    rng.gen_range(0..v)
                };
                tokens.push(t);
            }
        }
        TokenBatch::new(self.batch, self.seq, tokens).expect("sizes")
    }

    pub fn val_batches(&self, count: usize) -> Vec<TokenBatch> {
        (0..count as u64).map(|i| self.sample(VAL_STREAM + i)).collect()
    }

    /// Per-token entropy of the source once the context is full, in nats;
    /// no model can beat it on those positions.
    pub fn entropy_rate(&self) -> f64 {
        let v = self.config.vocab as f64;
        let q = (1.0 - self.config.determinism) / v;
        let hit = self.config.determinism + q;
        let mut h = -(v - 1.0) * xlnx(q);
        h -= xlnx(hit);
        h
    }
}

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

impl BatchSource for MarkovSource {
    fn batch(&mut self, index: u64) -> staged_core::Result<TokenBatch> {
        Ok(self.sample(index))
    }
}
