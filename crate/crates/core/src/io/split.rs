//! Deterministic 70:15:15 dataset splitting.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Shuffles `ids` with the seed and cuts floor(0.7n) / floor(0.15n) /
/// remainder into train/val/test. Disjoint and exhaustive by
/// construction; reproducible per seed.
pub fn split(ids: &[String], seed: u64) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    if ids.len() < 10 {
        return Err(Error::Input(format!(
            "need at least 10 ids to split, got {}",
            ids.len()
        )));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = Rng::new(seed ^ 0x5117_70AB);
    rng.shuffle(&mut shuffled);
    let n = shuffled.len();
    let n_train = n * 7 / 10;
    let n_val = n * 15 / 100;
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok((shuffled, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("case{i:04}")).collect()
    }

    #[test]
    fn hundred_splits_70_15_15() {
        let (train, val, test) = split(&ids(100), 9).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (70, 15, 15));
    }

    #[test]
    fn ten_splits_7_1_2() {
        let (train, val, test) = split(&ids(10), 9).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (7, 1, 2));
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let input = ids(37);
        let (train, val, test) = split(&input, 123).unwrap();
        let mut all = BTreeSet::new();
        for id in train.iter().chain(val.iter()).chain(test.iter()) {
            assert!(all.insert(id.clone()), "duplicate {id}");
        }
        assert_eq!(all, input.iter().cloned().collect());
    }

    #[test]
    fn same_seed_reproduces() {
        let input = ids(50);
        assert_eq!(split(&input, 4).unwrap(), split(&input, 4).unwrap());
    }

    #[test]
    fn too_few_ids_rejected() {
        assert!(split(&ids(9), 1).is_err());
    }
}
