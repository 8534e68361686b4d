use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OmrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Sorts ids, shuffles them with a seeded ChaCha8 stream and cuts the result
/// into train/validation/test with largest-remainder rounding.
pub fn split_dataset(document_ids: &[String], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    if document_ids.is_empty() {
        return Err(OmrError::InvalidArgument("no documents to split".into()));
    }
    let parts = [ratios.train, ratios.validation, ratios.test];
    if parts.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(OmrError::InvalidArgument(format!("invalid split ratios {parts:?}")));
    }
    let total: f64 = parts.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(OmrError::InvalidArgument(format!(
            "split ratios sum to {total}, expected 1"
        )));
    }
    let unique: BTreeSet<&String> = document_ids.iter().collect();
    if unique.len() != document_ids.len() {
        return Err(OmrError::InvalidArgument("duplicate document ids".into()));
    }

    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let sizes = largest_remainder(ids.len(), &parts);
    let mut rest = ids.into_iter();
    let mut take = |k: usize| rest.by_ref().take(k).collect::<Vec<_>>();
    Ok(DatasetSplit {
        seed,
        train: take(sizes[0]),
        validation: take(sizes[1]),
        test: take(sizes[2]),
    })
}

/// Floors `n * r_k`, then hands the leftover units to the largest fractional
/// parts (earlier part wins ties).
fn largest_remainder(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r).collect();
    // 1e-9 absorbs products like 140 * 0.6 landing just under an integer
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = (e + 1e-9).floor() as usize;
    }
    let mut leftover = n - sizes.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        sizes[k] += 1;
        leftover -= 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("doc-{i:03}")).collect()
    }

    #[test]
    fn full_corpus_sizes() {
        let s = split_dataset(&ids(140), SplitRatios::default(), 0).unwrap();
        assert_eq!(s.sizes(), (84, 28, 28));
    }

    #[test]
    fn single_document_goes_to_train() {
        let s = split_dataset(&ids(1), SplitRatios::default(), 3).unwrap();
        assert_eq!(s.sizes(), (1, 0, 0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split_dataset(&ids(20), SplitRatios::default(), 7).unwrap();
        let b = split_dataset(&ids(20), SplitRatios::default(), 7).unwrap();
        assert_eq!(a, b);
        let mut reversed = ids(20);
        reversed.reverse();
        assert_eq!(a, split_dataset(&reversed, SplitRatios::default(), 7).unwrap());
    }

    #[test]
    fn rejects_bad_ratios() {
        let r = SplitRatios {
            train: 0.6,
            validation: 0.3,
            test: 0.2,
        };
        assert!(split_dataset(&ids(5), r, 0).is_err());
        assert!(split_dataset(&[], SplitRatios::default(), 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..200, seed in any::<u64>()) {
            let all = ids(n);
            let s = split_dataset(&all, SplitRatios::default(), seed).unwrap();
            let mut joined: Vec<String> = s.train.iter().chain(&s.validation).chain(&s.test).cloned().collect();
            prop_assert_eq!(joined.len(), n);
            joined.sort();
            prop_assert_eq!(joined, all);
        }
    }
}
