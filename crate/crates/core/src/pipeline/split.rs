use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame-blocked train/test partition: the first `⌊n·fraction⌋` frames train,
/// the rest are held out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn blocked(n: usize, train_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Validation(format!("train fraction must be in (0, 1), got {train_fraction}")));
        }
        let cut = (n as f64 * train_fraction).floor() as usize;
        if cut < 2 || n - cut < 2 {
            return Err(Error::Validation(format!("{n} frames leave fewer than 2 frames on one side of the split")));
        }
        Ok(Split { train: (0..cut).collect(), test: (cut..n).collect() })
    }

    pub fn train_rows(&self, m: &Array2<f64>) -> Array2<f64> {
        m.select(Axis(0), &self.train)
    }

    pub fn test_rows(&self, m: &Array2<f64>) -> Array2<f64> {
        m.select(Axis(0), &self.test)
    }

    pub fn is_disjoint(&self) -> bool {
        let test: std::collections::BTreeSet<_> = self.test.iter().collect();
        self.train.iter().all(|i| !test.contains(i))
    }
}
