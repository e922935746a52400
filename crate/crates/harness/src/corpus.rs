//! Byte-level corpus: every byte is a token, plus one padding id.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use staged_core::model::TokenBatch;
use staged_core::train::BatchSource;

use crate::error::{HarnessError, IoContext, Result};

pub const PAD: usize = 256;
pub const BYTE_VOCAB: usize = 257;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Token stream with a held-out contiguous block. Where the block sits is
/// drawn from the seed; training windows never cross into it.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub source: PathBuf,
    pub tokens: Vec<u16>,
    pub val: std::ops::Range<usize>,
}

pub fn ingest(path: &Path, config: &CorpusConfig) -> Result<Corpus> {
    let bytes = std::fs::read(path).at(path)?;
    Corpus::from_bytes(path, &bytes, config)
}

impl Corpus {
    pub fn from_bytes(source: &Path, bytes: &[u8], config: &CorpusConfig) -> Result<Self> {
        let fail = |reason: String| HarnessError::Ingest {
            path: source.to_path_buf(),
            reason,
        };
        if bytes.is_empty() {
            return Err(fail("file is empty".into()));
        }
        if !(0.0..1.0).contains(&config.val_fraction) {
            return Err(fail(format!("validation fraction {} not in [0, 1)", config.val_fraction)));
        }
        let n = bytes.len();
        let len = (n as f64 * config.val_fraction).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let start = rng.gen_range(0..=n - len);
        Ok(Corpus {
            source: source.to_path_buf(),
            tokens: bytes.iter().map(|&b| b as u16).collect(),
            val: start..start + len,
        })
    }

    pub fn train_len(&self) -> usize {
        self.tokens.len() - self.val.len()
    }

    fn train_segments(&self) -> [&[u16]; 2] {
        [&self.tokens[..self.val.start], &self.tokens[self.val.end..]]
    }

    pub fn train_tokens(&self) -> Vec<u16> {
        self.train_segments().concat()
    }

    pub fn val_tokens(&self) -> &[u16] {
        &self.tokens[self.val.clone()]
    }

    /// Random training windows; batch `index` depends only on the seed and
    /// the index.
    pub fn batches(&self, batch: usize, seq: usize, seed: u64) -> Result<CorpusBatches<'_>> {
        if !self.train_segments().iter().any(|s| s.len() >= seq) {
            return Err(HarnessError::Ingest {
                path: self.source.clone(),
                reason: format!("no training segment holds a window of {seq} tokens"),
            });
        }
        Ok(CorpusBatches {
            corpus: self,
            batch,
            seq,
            seed,
        })
    }

    /// Consecutive non-overlapping windows from the held-out block.
    pub fn val_batches(&self, batch: usize, seq: usize, count: usize) -> Result<Vec<TokenBatch>> {
        let v = self.val_tokens();
        if v.len() < batch * seq * count {
            return Err(HarnessError::Ingest {
                path: self.source.clone(),
                reason: format!(
                    "validation block has {} tokens, need {} for {count} batches",
                    v.len(),
                    batch * seq * count
                ),
            });
        }
        v.chunks_exact(batch * seq)
            .take(count)
            .map(|c| Ok(TokenBatch::new(batch, seq, c.iter().map(|&t| t as usize).collect())?))
            .collect()
    }
}

pub struct CorpusBatches<'a> {
    corpus: &'a Corpus,
    batch: usize,
    seq: usize,
    seed: u64,
}

impl BatchSource for CorpusBatches<'_> {
    fn batch(&mut self, index: u64) -> staged_core::Result<TokenBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let segs = self.corpus.train_segments();
        let usable: Vec<&[u16]> = segs.into_iter().filter(|s| s.len() >= self.seq).collect();
        let weights: Vec<usize> = usable.iter().map(|s| s.len() - self.seq + 1).collect();
        let total: usize = weights.iter().sum();
        let mut tokens = Vec::with_capacity(self.batch * self.seq);
        for _ in 0..self.batch {
            let mut k = rng.gen_range(0..total);
            let mut i = 0;
            while k >= weights[i] {
                k -= weights[i];
                i += 1;
            }
            tokens.extend(usable[i][k..k + self.seq].iter().map(|&t| t as usize));
        }
        TokenBatch::new(self.batch, self.seq, tokens)
    }
}
