//! Stratified train/validation/test splitting.

use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::rng::Rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Splits per class in the given proportions, shuffled under `seed`.
///
/// Within each class the three counts are allocated by largest remainder, so
/// each is within one sample of the exact proportion.
pub fn stratified_split(ds: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<DataSplit> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv < 0.0 || rs < 0.0 {
        return Err(Error::Config("split ratios must be nonnegative, train positive".into()));
    }
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios sum to {}, expected 1",
            rt + rv + rs
        )));
    }
    let mut rng = Rng::new(seed);
    let mut split = DataSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut idx) in ds.class_indices().into_iter().enumerate() {
        if idx.len() < 3 {
            return Err(Error::Stratification(format!(
                "class {class} has only {} samples; at least 3 required",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let counts = largest_remainder(idx.len(), &[rt, rv, rs]);
        let (a, b) = (counts[0], counts[0] + counts[1]);
        split.train.extend_from_slice(&idx[..a]);
        split.validation.extend_from_slice(&idx[a..b]);
        split.test.extend_from_slice(&idx[b..]);
    }
    Ok(split)
}

/// Integer allocation of `n` into parts proportional to `ratios`, exact in
/// total. Remainders are resolved by largest fractional part, earlier part
/// winning ties.
fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(ratios.len());
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(ratios.len());
    let mut assigned = 0;
    for (i, &r) in ratios.iter().enumerate() {
        let exact = n as f64 * r;
        let base = exact.floor() as usize;
        counts.push(base);
        assigned += base;
        fracs.push((i, exact - base as f64));
    }
    // stable sort by descending fraction keeps index order on ties
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for k in 0..(n - assigned) {
        counts[fracs[k % fracs.len()].0] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;

    #[test]
    fn balanced_100_gives_70_15_15() {
        let ds = synthetic::two_blobs(100, 0.5, 3);
        let split = stratified_split(&ds, (0.70, 0.15, 0.15), 9).unwrap();
        assert_eq!(split.train.len(), 70);
        assert_eq!(split.validation.len(), 15);
        assert_eq!(split.test.len(), 15);
        // 35 per class in train, 7 or 8 per class in each eval split
        for class in 0..2 {
            let in_train = split.train.iter().filter(|&&i| ds.labels[i] == class).count();
            assert_eq!(in_train, 35);
            let in_val = split
                .validation
                .iter()
                .filter(|&&i| ds.labels[i] == class)
                .count();
            assert!(in_val == 7 || in_val == 8, "val count {in_val}");
        }
    }

    #[test]
    fn same_seed_is_identical() {
        let ds = synthetic::two_blobs(80, 0.5, 3);
        let a = stratified_split(&ds, (0.7, 0.15, 0.15), 42).unwrap();
        let b = stratified_split(&ds, (0.7, 0.15, 0.15), 42).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn imbalanced_counts_match_counting_oracle() {
        // 150/50 split of 200 rows: train should hold 105 and 35 (+-1)
        let ds = synthetic::imbalanced_blobs(200, 3, 0.4, 5);
        let counts = ds.class_counts();
        assert_eq!(counts, vec![150, 50]);
        let split = stratified_split(&ds, (0.7, 0.15, 0.15), 1).unwrap();
        let train0 = split.train.iter().filter(|&&i| ds.labels[i] == 0).count();
        let train1 = split.train.iter().filter(|&&i| ds.labels[i] == 1).count();
        assert!((train0 as i64 - 105).abs() <= 1, "{train0}");
        assert!((train1 as i64 - 35).abs() <= 1, "{train1}");
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let ds = synthetic::two_blobs(101, 0.5, 8);
        for seed in 0..20 {
            let split = stratified_split(&ds, (0.7, 0.15, 0.15), seed).unwrap();
            let mut all: Vec<usize> = split
                .train
                .iter()
                .chain(&split.validation)
                .chain(&split.test)
                .copied()
                .collect();
            all.sort_unstable();
            let expected: Vec<usize> = (0..ds.len()).collect();
            assert_eq!(all, expected);
        }
    }

    #[test]
    fn tiny_class_is_rejected() {
        let mut ds = synthetic::two_blobs(40, 0.5, 3);
        // shrink class 1 down to two samples
        let keep: Vec<usize> = {
            let mut seen = 0;
            (0..ds.len())
                .filter(|&i| {
                    if ds.labels[i] == 1 {
                        seen += 1;
                        seen <= 2
                    } else {
                        true
                    }
                })
                .collect()
        };
        ds.rows = keep.iter().map(|&i| ds.rows[i].clone()).collect();
        ds.labels = keep.iter().map(|&i| ds.labels[i]).collect();
        assert!(matches!(
            stratified_split(&ds, (0.7, 0.15, 0.15), 0),
            Err(Error::Stratification(_))
        ));
    }
}
