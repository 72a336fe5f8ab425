//! Individual-fairness consistency and classification metrics for decision vectors.

use serde::{Deserialize, Serialize};

use crate::dataset::DecisionVector;
use crate::error::{Error, Result};
use crate::simindex::NeighborList;

/// Neighborhood agreement of one decision source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub score: f64,
    pub k: usize,
    pub n: usize,
    pub per_profile_gap: Vec<f64>,
}

/// `C = 1 - (1/N) * sum_i |y_i - (1/k) * sum_{j in knn(i)} y_j|`.
///
/// `decisions` and `neighbors` must share the same id order.
pub fn consistency(decisions: &DecisionVector, neighbors: &NeighborList) -> Result<ConsistencyResult> {
    decisions.validate()?;
    if decisions.index_order != neighbors.index_order {
        return Err(Error::Misalignment(format!(
            "decisions from {} are not aligned with the neighbor list",
            decisions.source
        )));
    }
    let n = decisions.len();
    if n == 0 {
        return Err(Error::Empty("consistency needs at least one profile"));
    }
    let k = neighbors.k;
    let y = &decisions.values;
    let mut per_profile_gap = Vec::with_capacity(n);
    for (i, nbrs) in neighbors.neighbors.iter().enumerate() {
        if nbrs.len() != k {
            return Err(Error::Misalignment(format!(
                "row {i} has {} neighbors, k = {k}",
                nbrs.len()
            )));
        }
        let hits: usize = nbrs.iter().map(|&j| y[j] as usize).sum();
        let neighbor_mean = hits as f64 / k as f64;
        per_profile_gap.push((y[i] as f64 - neighbor_mean).abs());
    }
    let mean_gap = per_profile_gap.iter().sum::<f64>() / n as f64;
    Ok(ConsistencyResult {
        score: 1.0 - mean_gap,
        k,
        n,
        per_profile_gap,
    })
}

/// Difference `a - b` in percentage points.
pub fn consistency_gap(a: &ConsistencyResult, b: &ConsistencyResult) -> Result<f64> {
    if a.k != b.k {
        return Err(Error::Misalignment(format!(
            "consistency computed with k = {} vs k = {}",
            a.k, b.k
        )));
    }
    if a.n != b.n {
        return Err(Error::Misalignment(format!(
            "consistency computed over {} vs {} profiles",
            a.n, b.n
        )));
    }
    Ok(points(a.score, b.score))
}

pub(crate) fn points(a: f64, b: f64) -> f64 {
    (a - b) * 100.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Binary,
    Macro,
    #[default]
    Weighted,
}

impl std::str::FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(Averaging::Binary),
            "macro" => Ok(Averaging::Macro),
            "weighted" => Ok(Averaging::Weighted),
            other => Err(Error::Config(format!("unknown averaging mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Averaging {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Averaging::Binary => "binary",
            Averaging::Macro => "macro",
            Averaging::Weighted => "weighted",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with class 0 as the positive class.
    fn flipped(&self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    fn prf(&self) -> (f64, f64, f64) {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        (p, r, f1(p, r))
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub averaging: Averaging,
    pub confusion: Confusion,
}

/// Precision, recall, F1 and accuracy with class 1 as the positive class.
///
/// Macro averages per-class scores over the classes present in either vector; weighted
/// averages them by true-class support. Zero denominators give 0.
pub fn classification_metrics(
    predicted: &DecisionVector,
    truth: &DecisionVector,
    averaging: Averaging,
) -> Result<ClassificationMetrics> {
    predicted.validate()?;
    truth.validate()?;
    if predicted.index_order != truth.index_order {
        return Err(Error::Misalignment(format!(
            "{} and {} are not aligned",
            predicted.source, truth.source
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("metrics need at least one profile"));
    }
    let mut c = Confusion::default();
    for (&p, &t) in predicted.values.iter().zip(&truth.values) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;

    let (precision, recall, f1) = match averaging {
        Averaging::Binary => c.prf(),
        Averaging::Macro | Averaging::Weighted => {
            // (confusion, support, present)
            let classes = [
                (c.flipped(), c.tn + c.fp, c.tn + c.fp + c.fn_ > 0),
                (c, c.tp + c.fn_, c.tp + c.fp + c.fn_ > 0),
            ];
            let mut sums = (0.0, 0.0, 0.0);
            let mut total_weight = 0.0;
            for (conf, support, present) in classes {
                let weight = match averaging {
                    Averaging::Macro if present => 1.0,
                    Averaging::Macro => 0.0,
                    _ => support as f64,
                };
                let (p, r, f) = conf.prf();
                sums.0 += weight * p;
                sums.1 += weight * r;
                sums.2 += weight * f;
                total_weight += weight;
            }
            if total_weight == 0.0 {
                (0.0, 0.0, 0.0)
            } else {
                (sums.0 / total_weight, sums.1 / total_weight, sums.2 / total_weight)
            }
        }
    };

    Ok(ClassificationMetrics {
        precision,
        recall,
        f1,
        accuracy,
        averaging,
        confusion: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simindex::Metric;

    fn dv(values: &[u8]) -> DecisionVector {
        let ids = (0..values.len()).map(|i| format!("p{i}")).collect();
        DecisionVector::new("test", values.to_vec(), ids).unwrap()
    }

    fn neighbors(k: usize, rows: Vec<Vec<usize>>) -> NeighborList {
        let n = rows.len();
        NeighborList {
            k,
            metric: Metric::Cosine,
            excludes_self: true,
            index_order: (0..n).map(|i| format!("p{i}")).collect(),
            scores: vec![vec![0.0; k]; n],
            neighbors: rows,
        }
    }

    #[test]
    fn constant_decisions_are_fully_consistent() {
        let nl = neighbors(2, vec![vec![1, 2], vec![2, 3], vec![3, 0], vec![0, 1]]);
        for v in [0, 1] {
            assert_eq!(consistency(&dv(&[v; 4]), &nl).unwrap().score, 1.0);
        }
    }

    #[test]
    fn alternating_pairs() {
        let nl = neighbors(1, vec![vec![1], vec![0], vec![3], vec![2]]);
        let r = consistency(&dv(&[1, 0, 1, 0]), &nl).unwrap();
        assert_eq!(r.per_profile_gap, vec![1.0; 4]);
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn three_of_four() {
        let nl = neighbors(3, vec![vec![1, 2, 3], vec![0, 2, 3], vec![0, 1, 3], vec![0, 1, 2]]);
        let r = consistency(&dv(&[1, 1, 1, 0]), &nl).unwrap();
        let expected = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0];
        for (g, e) in r.per_profile_gap.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((r.score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn misaligned_and_empty() {
        let nl = neighbors(1, vec![vec![1], vec![0]]);
        let other = DecisionVector::new("x", vec![0, 1], vec!["p1".into(), "p0".into()]).unwrap();
        assert!(matches!(consistency(&other, &nl), Err(Error::Misalignment(_))));
        let empty = neighbors(1, vec![]);
        assert!(matches!(consistency(&dv(&[]), &empty), Err(Error::Empty(_))));
    }

    #[test]
    fn gap_in_points() {
        let r = |score| ConsistencyResult {
            score,
            k: 5,
            n: 10,
            per_profile_gap: vec![],
        };
        assert_eq!(consistency_gap(&r(0.7), &r(0.7)).unwrap(), 0.0);
        assert!((consistency_gap(&r(0.8073), &r(0.5632)).unwrap() - 24.41).abs() < 1e-9);
        assert!((consistency_gap(&r(0.7797), &r(0.6023)).unwrap() - 17.74).abs() < 1e-9);
        let mut other = r(0.5);
        other.k = 3;
        assert!(consistency_gap(&r(0.5), &other).is_err());
    }

    #[test]
    fn perfect_classifier() {
        let t = dv(&[1, 0, 1, 1, 0]);
        for avg in [Averaging::Binary, Averaging::Macro, Averaging::Weighted] {
            let m = classification_metrics(&t, &t, avg).unwrap();
            assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn one_of_each_cell() {
        let m = classification_metrics(&dv(&[1, 0, 1, 0]), &dv(&[1, 1, 0, 0]), Averaging::Binary).unwrap();
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 1,
                fp: 1,
                fn_: 1,
                tn: 1
            }
        );
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn weighted_example() {
        let m = classification_metrics(&dv(&[1, 1, 0, 0]), &dv(&[1, 0, 0, 0]), Averaging::Weighted).unwrap();
        assert!((m.precision - 0.875).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.accuracy - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_f1() {
        let m = classification_metrics(&dv(&[0, 0]), &dv(&[1, 1]), Averaging::Binary).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn averaging_parse() {
        assert_eq!("Macro".parse::<Averaging>().unwrap(), Averaging::Macro);
        assert!("micro".parse::<Averaging>().is_err());
    }
}
