use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded train/validation partition of `m` sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub batch_size: usize,
    seed: u64,
}

/// Shuffles `0..m` with `seed`, sends the first `ceil(train_fraction * m)`
/// indices to training and the rest to validation.
pub fn split_and_batch(
    m: usize,
    train_fraction: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Split> {
    if m == 0 {
        return Err(Error::Empty("split_and_batch: no patches"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(alloc::format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // guard against 0.8 * 10 = 8.000000000000002 style rounding
    let n_train =
        num_traits::Float::ceil(train_fraction * m as f64 - 1e-9).clamp(1.0, m as f64) as usize;
    let validation = order.split_off(n_train);
    Ok(Split {
        train: order,
        validation,
        batch_size,
        seed,
    })
}

impl Split {
    /// Training batches for one epoch, reshuffled from a per-epoch stream of
    /// the split seed. The last batch may be smaller.
    pub fn epoch_batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order = self.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Validation indices in fixed chunks of `batch_size`.
    pub fn validation_batches(&self) -> Vec<Vec<usize>> {
        self.validation
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}
