use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::annotations::AnnotatedFrame;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStrategy {
    /// First ceil(n/2) frames train, the rest test.
    FirstHalf,
    /// Odd frame ids train, even frame ids test.
    Interleaved,
    /// A uniform test set of `test_k`, then `train_k` uniform from the rest.
    RandomK {
        train_k: usize,
        test_k: usize,
        seed: u64,
    },
}

impl SplitStrategy {
    pub fn random_k(train_k: usize, seed: u64) -> Self {
        SplitStrategy::RandomK {
            train_k,
            test_k: 200,
            seed,
        }
    }
}

impl FromStr for SplitStrategy {
    type Err = Error;

    /// `first-half`, `interleaved`, or `random-k` (train 400, seed 0; adjust
    /// through the struct fields).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-half" => Ok(SplitStrategy::FirstHalf),
            "interleaved" => Ok(SplitStrategy::Interleaved),
            "random-k" => Ok(SplitStrategy::random_k(400, 0)),
            other => Err(Error::Validation(format!(
                "unknown split {other:?} (first-half, interleaved, random-k)"
            ))),
        }
    }
}

/// Index sets `(train, test)` into `frames`, each in ascending order.
pub fn split_indices(frames: &[AnnotatedFrame], strategy: SplitStrategy) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = frames.len();
    match strategy {
        SplitStrategy::FirstHalf => {
            let cut = n.div_ceil(2);
            Ok(((0..cut).collect(), (cut..n).collect()))
        }
        SplitStrategy::Interleaved => Ok((0..n).partition(|&i| frames[i].frame_id % 2 == 1)),
        SplitStrategy::RandomK {
            train_k,
            test_k,
            seed,
        } => {
            if train_k + test_k > n {
                return Err(Error::Size(format!(
                    "cannot draw {train_k} train + {test_k} test frames from {n}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut test: Vec<usize> = sample(&mut rng, n, test_k).into_vec();
            test.sort_unstable();
            let mut in_test = vec![false; n];
            test.iter().for_each(|&i| in_test[i] = true);
            let rest: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            let mut train: Vec<usize> = sample(&mut rng, rest.len(), train_k)
                .into_iter()
                .map(|k| rest[k])
                .collect();
            train.sort_unstable();
            Ok((train, test))
        }
    }
}

/// Splits frames into `(train, test)` copies.
pub fn split(frames: &[AnnotatedFrame], strategy: SplitStrategy) -> Result<(Vec<AnnotatedFrame>, Vec<AnnotatedFrame>)> {
    let (tr, te) = split_indices(frames, strategy)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| frames[i].clone()).collect();
    Ok((pick(&tr), pick(&te)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::annotations::BBox;
    use proptest::prelude::*;
    use std::path::PathBuf;

    pub(crate) fn frames(n: u32) -> Vec<AnnotatedFrame> {
        (1..=n)
            .map(|id| AnnotatedFrame {
                frame_id: id,
                image_ref: PathBuf::from(format!("{id}.png")),
                landmarks: [[1.0, 1.0]; 4],
                occluded: [false; 4],
                bbox: BBox {
                    x: 0.0,
                    y: 0.0,
                    w: 2.0,
                    h: 2.0,
                },
            })
            .collect()
    }

    fn ids(f: &[AnnotatedFrame]) -> Vec<u32> {
        f.iter().map(|f| f.frame_id).collect()
    }

    #[test]
    fn first_half_of_800() {
        let (tr, te) = split(&frames(800), SplitStrategy::FirstHalf).unwrap();
        assert_eq!(ids(&tr), (1..=400).collect::<Vec<_>>());
        assert_eq!(ids(&te), (401..=800).collect::<Vec<_>>());
    }

    #[test]
    fn interleaved_odd_even() {
        let (tr, te) = split(&frames(800), SplitStrategy::Interleaved).unwrap();
        assert_eq!(tr.len(), 400);
        assert!(tr.iter().all(|f| f.frame_id % 2 == 1));
        assert!(te.iter().all(|f| f.frame_id % 2 == 0));
    }

    #[test]
    fn random_k_sizes_and_disjoint() {
        let (tr, te) = split(&frames(800), SplitStrategy::random_k(600, 4)).unwrap();
        assert_eq!((tr.len(), te.len()), (600, 200));
        let t: std::collections::HashSet<_> = ids(&tr).into_iter().collect();
        assert!(te.iter().all(|f| !t.contains(&f.frame_id)));
    }

    #[test]
    fn random_k_too_large() {
        assert!(matches!(
            split(&frames(100), SplitStrategy::random_k(600, 0)),
            Err(Error::Size(_))
        ));
    }

    proptest! {
        #[test]
        fn deterministic_splits_partition(n in 1u32..300) {
            let f = frames(n);
            for s in [SplitStrategy::FirstHalf, SplitStrategy::Interleaved] {
                let (tr, te) = split_indices(&f, s).unwrap();
                let mut all: Vec<_> = tr.iter().chain(&te).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n as usize).collect::<Vec<_>>());
            }
        }

        #[test]
        fn random_k_disjoint_exact(n in 10usize..200, tk in 0usize..10, seed in any::<u64>()) {
            let f = frames(n as u32);
            let test_k = n / 3;
            let train_k = tk.min(n - test_k);
            let (tr, te) = split_indices(&f, SplitStrategy::RandomK { train_k, test_k, seed }).unwrap();
            prop_assert_eq!(tr.len(), train_k);
            prop_assert_eq!(te.len(), test_k);
            prop_assert!(tr.iter().all(|i| !te.contains(i)));
        }
    }
}
