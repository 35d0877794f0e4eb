//! Shared training utilities: loss curves and length-bucketed sampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-step training losses; entry `i` is the batch loss before update `i`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    /// Means over consecutive non-overlapping windows of `window` steps.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        self.losses
            .chunks_exact(window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn first(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Batches of indices sharing a length key, in a seeded order. Every index
/// is visited once per epoch.
pub(crate) struct BucketSampler {
    buckets: Vec<Vec<usize>>,
    queue: Vec<Vec<usize>>,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BucketSampler {
    pub(crate) fn new(lengths: &[usize], batch: usize, seed: u64) -> Self {
        let mut by_len = BTreeMap::<usize, Vec<usize>>::new();
        for (i, &l) in lengths.iter().enumerate() {
            by_len.entry(l).or_default().push(i);
        }
        BucketSampler {
            buckets: by_len.into_values().collect(),
            queue: Vec::new(),
            batch: batch.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn next_batch(&mut self) -> Vec<usize> {
        if self.queue.is_empty() {
            let mut batches = Vec::new();
            for bucket in &self.buckets {
                let mut b = bucket.clone();
                b.shuffle(&mut self.rng);
                batches.extend(b.chunks(self.batch).map(<[usize]>::to_vec));
            }
            batches.shuffle(&mut self.rng);
            batches.reverse();
            self.queue = batches;
        }
        self.queue.pop().expect("sampler has at least one item")
    }
}
