use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use super::encoder::EncodedDataset;
use crate::error::{Error, Result};

/// Shuffled index partition with `train:test` proportions. The train size
/// is `round(n * train / (train + test))`, kept within `1..n` when `n ≥ 2`.
pub fn split_indices(n: usize, ratio: (usize, usize), seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let (a, b) = ratio;
    if a == 0 || b == 0 {
        return Err(Error::InvalidArgument(format!("split ratio {a}:{b} has a zero part")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = ((n * a) as f64 / (a + b) as f64).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let test = idx.split_off(n_train.min(n));
    Ok((idx, test))
}

pub fn split(ds: &Dataset, ratio: (usize, usize), seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.n(), ratio, seed)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} rows into two nonempty parts",
            ds.n()
        )));
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Rows drawn from one sensitive group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupBatch {
    pub group: usize,
    pub indices: Vec<usize>,
    /// Set when the group had fewer members than requested.
    pub with_replacement: bool,
}

impl GroupBatch {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

pub fn sample_group_batch<R: Rng + ?Sized>(
    ed: &EncodedDataset,
    group: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<GroupBatch> {
    let members = ed.members(group);
    if members.is_empty() {
        return Err(Error::UnknownGroup(group.to_string()));
    }
    if batch_size <= members.len() {
        let picks = sample(rng, members.len(), batch_size);
        Ok(GroupBatch {
            group,
            indices: picks.into_iter().map(|k| members[k]).collect(),
            with_replacement: false,
        })
    } else {
        Ok(GroupBatch {
            group,
            indices: (0..batch_size)
                .map(|_| members[rng.random_range(0..members.len())])
                .collect(),
            with_replacement: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::collections::BTreeSet;

    fn grouped(sizes: &[usize]) -> EncodedDataset {
        let sensitive: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &k)| std::iter::repeat_n(g, k))
            .collect();
        let n = sensitive.len();
        EncodedDataset::new(Array2::zeros((n, 1)), sensitive, None, vec![], sizes.len()).unwrap()
    }

    #[test]
    fn two_to_one_ratio() {
        let (tr, te) = split_indices(100, (4, 1), 1).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let (tr, te) = split_indices(3, (2, 1), 1).unwrap();
        assert_eq!((tr.len(), te.len()), (2, 1));
    }

    #[test]
    fn split_is_reproducible_and_disjoint() {
        let a = split_indices(57, (2, 1), 9).unwrap();
        assert_eq!(a, split_indices(57, (2, 1), 9).unwrap());
        let all: BTreeSet<usize> = a.0.iter().chain(&a.1).copied().collect();
        assert_eq!(all.len(), 57);
        assert!(split_indices(10, (0, 1), 0).is_err());
    }

    #[test]
    fn group_batch_without_replacement() {
        let ed = grouped(&[64, 64]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_group_batch(&ed, 0, 32, &mut rng).unwrap();
        assert!(!b.with_replacement);
        assert_eq!(b.size(), 32);
        let distinct: BTreeSet<_> = b.indices.iter().collect();
        assert_eq!(distinct.len(), 32);
        assert!(b.indices.iter().all(|&i| ed.sensitive[i] == 0));
    }

    #[test]
    fn oversized_request_samples_with_replacement() {
        let ed = grouped(&[64, 64]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_group_batch(&ed, 1, 128, &mut rng).unwrap();
        assert!(b.with_replacement);
        assert_eq!(b.size(), 128);
        assert!(b.indices.iter().all(|&i| ed.sensitive[i] == 1));
    }

    #[test]
    fn unknown_group_is_an_error() {
        let ed = grouped(&[5, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_group_batch(&ed, 7, 2, &mut rng).is_err());
    }
}
