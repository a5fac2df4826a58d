//! Trajectory-level train/test split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use trajmatch_core::seed::{derive_named, rng};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_fraction() -> f64 {
    0.7
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: default_fraction(),
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.train_fraction > 0.0 && self.train_fraction < 1.0 {
            Ok(())
        } else {
            Err(HarnessError::Usage(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )))
        }
    }

    /// Number of training items out of `n` (rounded down).
    pub fn train_count(&self, n: usize) -> usize {
        (self.train_fraction * n as f64).floor() as usize
    }

    /// Shuffled `(train, test)` index sets, each sorted ascending.
    pub fn indices(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>), HarnessError> {
        self.validate()?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(derive_named(self.seed, "split")));
        let k = self.train_count(n);
        let mut train = order[..k].to_vec();
        let mut test = order[k..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((train, test))
    }

    /// Splits `items` into owned train and test vectors.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Result<(Vec<T>, Vec<T>), HarnessError> {
        let (train, test) = self.indices(items.len())?;
        Ok((
            train.iter().map(|&i| items[i].clone()).collect(),
            test.iter().map(|&i| items[i].clone()).collect(),
        ))
    }
}
