use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::World;
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream};

/// Disjoint, sorted cluster ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

/// Test set size is `ceil(N * test_fraction)`; the rest trains.
pub fn split_train_test(world: &World, test_fraction: f64, seed: u64) -> Result<Split> {
    split_ids(world.clusters.len(), test_fraction, seed)
}

/// Same as [`split_train_test`] for ids `0..n`.
pub fn split_ids(n: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let raw = n as f64 * test_fraction;
    if raw < 1.0 {
        return Err(Error::Config(format!(
            "N * test_fraction = {raw} leaves no test cluster"
        )));
    }
    let n_test = (raw - 1e-9).ceil() as usize;
    if n_test >= n {
        return Err(Error::Config(format!(
            "test_fraction {test_fraction} leaves no training cluster out of {n}"
        )));
    }
    let mut ids: Vec<u32> = (0..n as u32).collect();
    ids.shuffle(&mut keyed_rng(&[seed, stream::SPLIT, n as u64]));
    let mut test = ids[..n_test].to_vec();
    let mut train = ids[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, test })
}
