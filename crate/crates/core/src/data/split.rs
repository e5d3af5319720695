use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Test samples are taken first, then the rest is shuffled and cut into
/// validation and training parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub val_fraction: f64,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `0..n`. The test indices are the last `test_size` samples and
/// do not depend on the seed; the validation part holds
/// `round(val_fraction * (n - test_size))` samples.
pub fn split_dataset(n: usize, spec: &SplitSpec) -> Result<Split> {
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(Error::config(format!(
            "validation fraction must be in [0, 1), got {}",
            spec.val_fraction
        )));
    }
    if n < spec.test_size + 2 {
        return Err(Error::config(format!(
            "{n} samples cannot hold {} test samples plus train and validation",
            spec.test_size
        )));
    }
    let rest = n - spec.test_size;
    let test: Vec<usize> = (rest..n).collect();
    let mut pool: Vec<usize> = (0..rest).collect();
    pool.shuffle(&mut rng::stream(spec.seed, Stream::Split, 0));
    let mut n_val = (spec.val_fraction * rest as f64).round() as usize;
    if spec.val_fraction > 0.0 {
        n_val = n_val.clamp(1, rest - 1);
    }
    let val = pool[..n_val].to_vec();
    let train = pool[n_val..].to_vec();
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn sizes_and_determinism() {
        let spec = SplitSpec {
            seed: 1,
            val_fraction: 0.25,
            test_size: 2,
        };
        let s = split_dataset(10, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert_eq!(split_dataset(10, &spec).unwrap(), s);
    }

    #[test]
    fn disjoint_and_exhaustive() {
        let spec = SplitSpec {
            seed: 5,
            val_fraction: 0.1,
            test_size: 50,
        };
        let s = split_dataset(300, &spec).unwrap();
        let all: HashSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(all.len(), 300);
        assert!(s.train.iter().all(|i| !s.test.contains(i)));
    }

    #[test]
    fn test_membership_is_stable() {
        let a = SplitSpec {
            seed: 3,
            val_fraction: 0.1,
            test_size: 4,
        };
        let b = SplitSpec { seed: 99, ..a };
        assert_eq!(
            split_dataset(20, &a).unwrap().test,
            split_dataset(20, &b).unwrap().test
        );
    }

    #[test]
    fn too_few_samples() {
        let spec = SplitSpec {
            seed: 0,
            val_fraction: 0.1,
            test_size: 9,
        };
        assert!(matches!(split_dataset(10, &spec), Err(Error::Config(_))));
    }
}
