use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DecisionVector;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::simindex::{norm, score_with_norms, top_k, Metric};

pub const DEFAULT_K: usize = 5;

/// Majority vote over the `k` most similar reference rows.
#[derive(Clone, Debug)]
pub struct KnnClassifier {
    k: usize,
    metric: Metric,
    reference: EmbeddingMatrix,
    labels: Vec<u8>,
    norms: Vec<f64>,
    row_of: HashMap<String, usize>,
}

/// What a saved k-NN model keeps: the reference ids and labels, not the vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnSnapshot {
    pub k: usize,
    pub metric: Metric,
    pub reference_ids: Vec<String>,
    pub labels: Vec<u8>,
}

impl KnnClassifier {
    pub fn new(k: usize, metric: Metric, reference: EmbeddingMatrix, labels: &DecisionVector) -> Result<Self> {
        labels.validate()?;
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if reference.index_order() != labels.index_order.as_slice() {
            return Err(Error::Misalignment(
                "reference rows and labels differ in id order".into(),
            ));
        }
        if reference.n_rows() < k {
            return Err(Error::KOutOfRange {
                k,
                n: reference.n_rows(),
                detail: "fewer training rows than k",
            });
        }
        let norms = match metric {
            Metric::Cosine => reference.rows().map(norm).collect(),
            Metric::Euclidean => Vec::new(),
        };
        let row_of = reference
            .index_order()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(KnnClassifier {
            k,
            metric,
            labels: labels.values.clone(),
            reference,
            norms,
            row_of,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn snapshot(&self) -> KnnSnapshot {
        KnnSnapshot {
            k: self.k,
            metric: self.metric,
            reference_ids: self.reference.index_order().to_vec(),
            labels: self.labels.clone(),
        }
    }

    /// Label for one query vector. `skip` removes one reference row from the vote.
    fn vote(&self, query: &[f32], skip: Option<usize>) -> Result<u8> {
        let nq = match self.metric {
            Metric::Cosine => norm(query),
            Metric::Euclidean => 0.0,
        };
        let cands: Vec<(f64, usize)> = (0..self.reference.n_rows())
            .filter(|&j| Some(j) != skip)
            .map(|j| {
                let nj = self.norms.get(j).copied().unwrap_or(0.0);
                (score_with_norms(query, self.reference.row(j), nq, nj, self.metric), j)
            })
            .collect();
        if cands.len() < self.k {
            return Err(Error::KOutOfRange {
                k: self.k,
                n: cands.len(),
                detail: "fewer training rows than k after leaving the query out",
            });
        }
        let nearest = top_k(cands, self.k);
        let ones = nearest.iter().filter(|&&(_, j)| self.labels[j] == 1).count();
        let zeros = self.k - ones;
        Ok(match ones.cmp(&zeros) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => self.labels[nearest[0].1],
        })
    }

    /// Predictions for every query row. With `exclude_same_id`, a query whose id is a
    /// reference row does not vote for itself.
    pub fn predict(&self, queries: &EmbeddingMatrix, exclude_same_id: bool) -> Result<DecisionVector> {
        if queries.dim() != self.reference.dim() {
            return Err(Error::Dimension {
                expected: self.reference.dim(),
                found: queries.dim(),
            });
        }
        let values = (0..queries.n_rows())
            .into_par_iter()
            .map(|i| {
                let skip = if exclude_same_id {
                    self.row_of.get(&queries.index_order()[i]).copied()
                } else {
                    None
                };
                self.vote(queries.row(i), skip)
            })
            .collect::<Result<Vec<u8>>>()?;
        DecisionVector::new("model:knn", values, queries.index_order().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f32]]) -> EmbeddingMatrix {
        let rows: Vec<Vec<f32>> = rows.iter().map(|r| r.to_vec()).collect();
        let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        EmbeddingMatrix::from_rows(&rows, ids).unwrap()
    }

    fn labels(m: &EmbeddingMatrix, v: &[u8]) -> DecisionVector {
        DecisionVector::new("train", v.to_vec(), m.index_order().to_vec()).unwrap()
    }

    fn query(row: &[f32]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&[row.to_vec()], vec!["q".into()]).unwrap()
    }

    #[test]
    fn unanimous_and_majority() {
        let m = matrix(&[
            &[0.0, 0.0],
            &[1.0, 0.0],
            &[0.0, 1.0],
            &[1.0, 1.0],
            &[2.0, 0.0],
            &[9.0, 9.0],
        ]);
        let clf = KnnClassifier::new(5, Metric::Euclidean, m.clone(), &labels(&m, &[1, 1, 1, 1, 1, 0])).unwrap();
        assert_eq!(clf.predict(&query(&[0.0, 0.0]), false).unwrap().values, vec![1]);
        let clf = KnnClassifier::new(5, Metric::Euclidean, m.clone(), &labels(&m, &[1, 0, 1, 0, 1, 0])).unwrap();
        assert_eq!(clf.predict(&query(&[0.0, 0.0]), false).unwrap().values, vec![1]);
    }

    #[test]
    fn even_k_tie_goes_to_nearest() {
        // distances from origin: 1, 2, 3, 4
        let m = matrix(&[&[1.0, 0.0], &[0.0, 2.0], &[3.0, 0.0], &[0.0, 4.0]]);
        let clf = KnnClassifier::new(4, Metric::Euclidean, m.clone(), &labels(&m, &[0, 1, 1, 0])).unwrap();
        assert_eq!(clf.predict(&query(&[0.0, 0.0]), false).unwrap().values, vec![0]);
        let clf = KnnClassifier::new(4, Metric::Euclidean, m.clone(), &labels(&m, &[1, 0, 0, 1])).unwrap();
        assert_eq!(clf.predict(&query(&[0.0, 0.0]), false).unwrap().values, vec![1]);
    }

    #[test]
    fn k1_on_training_row_returns_own_label() {
        let m = matrix(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let y = labels(&m, &[1, 0, 1]);
        let clf = KnnClassifier::new(1, Metric::Cosine, m.clone(), &y).unwrap();
        assert_eq!(clf.predict(&m, false).unwrap().values, y.values);
    }

    #[test]
    fn too_few_rows() {
        let m = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(KnnClassifier::new(3, Metric::Cosine, m.clone(), &labels(&m, &[1, 0])).is_err());
        let clf = KnnClassifier::new(2, Metric::Cosine, m.clone(), &labels(&m, &[1, 0])).unwrap();
        assert!(clf.predict(&m, true).is_err());
    }

    #[test]
    fn leave_one_out_skips_self() {
        let m = matrix(&[&[1.0, 0.0], &[0.9, 0.1], &[0.0, 1.0]]);
        let clf = KnnClassifier::new(1, Metric::Cosine, m.clone(), &labels(&m, &[1, 0, 0])).unwrap();
        assert_eq!(clf.predict(&m, true).unwrap().values, vec![0, 1, 0]);
    }
}
