//! Weighted mixing of several datasets into frame-budgeted batches.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How much data makes up one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpochSize {
    Steps(usize),
    Samples(usize),
}

/// Dataset mixing weights. `None` weighs each dataset by its size, which
/// makes every item equally likely (plain union of the datasets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPolicy {
    pub weights: Option<Vec<f64>>,
    pub epoch: EpochSize,
}

impl MixPolicy {
    pub fn union(epoch: EpochSize) -> Self {
        Self { weights: None, epoch }
    }
}

/// One drawn item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleRef {
    pub dataset: usize,
    pub index: usize,
}

/// Draws items dataset-first (by weight), then uniformly within the dataset,
/// and packs them into batches whose total frame count stays within budget.
pub struct MixedSampler {
    /// Per dataset, the indices of items that fit the budget on their own.
    eligible: Vec<Vec<usize>>,
    frames: Vec<Vec<usize>>,
    weights: Vec<f64>,
    dist: WeightedIndex<f64>,
    frame_budget: usize,
    max_batch: usize,
    rng: ChaCha8Rng,
    pending: Option<SampleRef>,
    rejected: usize,
}

impl MixedSampler {
    /// `frames[d][i]` is the length of item `i` of dataset `d`.
    pub fn new(
        frames: Vec<Vec<usize>>,
        weights: Option<&[f64]>,
        frame_budget: usize,
        max_batch: usize,
        seed: u64,
    ) -> Result<Self> {
        if frame_budget == 0 || max_batch == 0 {
            return Err(Error::Config("frame budget and batch size must be positive".into()));
        }
        let weights: Vec<f64> = match weights {
            Some(w) => {
                if w.len() != frames.len() {
                    return Err(Error::Config(format!("{} weights for {} datasets", w.len(), frames.len())));
                }
                w.to_vec()
            }
            None => frames.iter().map(|f| f.len() as f64).collect(),
        };
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("mixing weights must be finite and nonnegative: {weights:?}")));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("mixing weights sum to zero".into()));
        }
        let mut rejected = 0;
        let mut eligible = Vec::with_capacity(frames.len());
        for (d, lens) in frames.iter().enumerate() {
            let ok: Vec<usize> = (0..lens.len()).filter(|&i| lens[i] > 0 && lens[i] <= frame_budget).collect();
            rejected += lens.len() - ok.len();
            if weights[d] > 0.0 && ok.is_empty() {
                return Err(Error::Config(format!(
                    "dataset {d} has weight {} but no item fits a {frame_budget}-frame budget",
                    weights[d]
                )));
            }
            eligible.push(ok);
        }
        if rejected > 0 {
            log::warn!("{rejected} items exceed the {frame_budget}-frame budget and will never be drawn");
        }
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("mixing weights: {e}")))?;
        Ok(Self {
            eligible,
            frames,
            weights,
            dist,
            frame_budget,
            max_batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: None,
            rejected,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Items that can never be drawn because they exceed the budget.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn draw(&mut self) -> SampleRef {
        let dataset = self.dist.sample(&mut self.rng);
        let pool = &self.eligible[dataset];
        SampleRef { dataset, index: pool[self.rng.random_range(0..pool.len())] }
    }

    pub fn frames_of(&self, s: SampleRef) -> usize {
        self.frames[s.dataset][s.index]
    }

    /// Next batch. An item that would overflow the budget is held back and
    /// opens the following batch.
    pub fn next_batch(&mut self) -> Vec<SampleRef> {
        let mut batch = Vec::new();
        let mut used = 0;
        loop {
            let s = self.pending.take().unwrap_or_else(|| self.draw());
            let f = self.frames_of(s);
            if !batch.is_empty() && used + f > self.frame_budget {
                self.pending = Some(s);
                return batch;
            }
            used += f;
            batch.push(s);
            if batch.len() == self.max_batch {
                return batch;
            }
        }
    }

    /// All batches of one epoch.
    pub fn epoch(&mut self, size: EpochSize) -> Vec<Vec<SampleRef>> {
        match size {
            EpochSize::Steps(n) => (0..n).map(|_| self.next_batch()).collect(),
            EpochSize::Samples(n) => {
                let mut out = Vec::new();
                let mut seen = 0;
                while seen < n {
                    let b = self.next_batch();
                    seen += b.len();
                    out.push(b);
                }
                out
            }
        }
    }
}
