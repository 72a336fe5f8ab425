use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{binarize_labels, Profile};
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Train / validation / test partition of a corpus by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }
}

/// Floor sizes for train and validation; test takes the remainder.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config(format!("ratios must be nonnegative, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("ratios must sum to 1, got {sum}")));
    }
    if n < 3 {
        return Err(Error::Size(format!("corpus of {n} profiles is too small to split")));
    }
    // The epsilon absorbs representation error such as 0.7 * 10 = 6.999...
    let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let train = floor(ratios[0]);
    let validation = floor(ratios[1]).min(n - train);
    let test = n - train - validation;
    let sizes = [train, validation, test];
    for (name, (size, ratio)) in ["train", "validation", "test"].iter().zip(sizes.iter().zip(ratios)) {
        if *size == 0 && ratio > 0.0 {
            return Err(Error::Size(format!(
                "{name} split would be empty for N = {n} with ratios {ratios:?}"
            )));
        }
    }
    Ok(sizes)
}

/// Seeded shuffle followed by contiguous slicing. With `stratify_on`, positives and
/// negatives of that stage are allocated to each split in proportion to the corpus rate.
pub fn split_corpus(
    profiles: &[Profile],
    ratios: [f64; 3],
    seed: u64,
    stratify_on: Option<&str>,
) -> Result<SplitAssignment> {
    let n = profiles.len();
    let sizes = split_sizes(n, ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = profiles.iter().map(|p| p.id.clone()).collect();

    let [train, validation, test] = match stratify_on {
        None => {
            let mut order = ids;
            order.shuffle(&mut rng);
            let test = order.split_off(sizes[0] + sizes[1]);
            let validation = order.split_off(sizes[0]);
            [order, validation, test]
        }
        Some(stage) => {
            let labels = binarize_labels(profiles, stage)?;
            let (mut pos, mut neg): (Vec<String>, Vec<String>) = (Vec::new(), Vec::new());
            for (id, v) in ids.into_iter().zip(labels.values) {
                if v == 1 {
                    pos.push(id)
                } else {
                    neg.push(id)
                }
            }
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            let total_pos = pos.len();
            let mut parts: [Vec<String>; 3] = Default::default();
            let (mut pos_iter, mut neg_iter) = (pos.into_iter(), neg.into_iter());
            let (mut pos_left, mut neg_left) = (total_pos, n - total_pos);
            for (i, &size) in sizes.iter().enumerate() {
                let want = if i == 2 {
                    pos_left
                } else {
                    (size as f64 * total_pos as f64 / n as f64).round() as usize
                };
                let take_pos = want.min(pos_left).min(size).max(size.saturating_sub(neg_left));
                let take_neg = size - take_pos;
                parts[i].extend(pos_iter.by_ref().take(take_pos));
                parts[i].extend(neg_iter.by_ref().take(take_neg));
                parts[i].shuffle(&mut rng);
                pos_left -= take_pos;
                neg_left -= take_neg;
            }
            parts
        }
    };

    Ok(SplitAssignment {
        seed,
        ratios,
        train,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn corpus(n: usize) -> Vec<Profile> {
        (0..n)
            .map(|i| {
                Profile::new(format!("p{i}"), "a", "b", "c", "d").with_outcome(if i % 3 == 0 {
                    "Offered"
                } else {
                    "Not Offered"
                })
            })
            .collect()
    }

    #[test]
    fn corpus_of_870() {
        assert_eq!(split_sizes(870, DEFAULT_RATIOS).unwrap(), [696, 87, 87]);
        let s = split_corpus(&corpus(870), DEFAULT_RATIOS, 1, None).unwrap();
        assert_eq!(s.sizes(), [696, 87, 87]);
    }

    #[test]
    fn ten_profiles() {
        let s = split_corpus(&corpus(10), DEFAULT_RATIOS, 3, None).unwrap();
        assert_eq!(s.sizes(), [8, 1, 1]);
        let all: HashSet<_> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn deterministic() {
        let c = corpus(50);
        assert_eq!(
            split_corpus(&c, DEFAULT_RATIOS, 9, None).unwrap(),
            split_corpus(&c, DEFAULT_RATIOS, 9, None).unwrap()
        );
        assert_ne!(
            split_corpus(&c, DEFAULT_RATIOS, 9, None).unwrap(),
            split_corpus(&c, DEFAULT_RATIOS, 10, None).unwrap()
        );
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            split_corpus(&corpus(5), DEFAULT_RATIOS, 0, None),
            Err(Error::Size(_))
        ));
        assert!(matches!(
            split_corpus(&corpus(2), DEFAULT_RATIOS, 0, None),
            Err(Error::Size(_))
        ));
        assert!(split_sizes(10, [0.5, 0.5, 0.1]).is_err());
    }

    #[test]
    fn stratified_rates() {
        let c = corpus(101);
        let s = split_corpus(&c, DEFAULT_RATIOS, 4, Some("Type")).unwrap();
        assert_eq!(s.sizes(), [80, 10, 11]);
        let rate = 34.0 / 101.0;
        for part in [&s.train, &s.validation, &s.test] {
            let pos = part
                .iter()
                .filter(|id| id[1..].parse::<usize>().unwrap() % 3 == 0)
                .count();
            let r = pos as f64 / part.len() as f64;
            assert!((r - rate).abs() <= 1.0 / part.len() as f64 + 1e-12, "{r} vs {rate}");
        }
    }
}
