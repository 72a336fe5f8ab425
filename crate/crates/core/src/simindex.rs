//! Exact k-nearest-neighbor retrieval over embedding rows.
//!
//! Scores are similarities: larger is closer. Rows are ranked by descending score with
//! ties broken by ascending neighbor index, so every search below is deterministic and
//! the batched search reproduces the exact search bit for bit.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

const LANES: usize = 8;

// Fixed lane split keeps the reduction order identical for every caller while letting
// the compiler vectorize.
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    acc.iter().sum::<f64>() + tail
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let d = x[l] as f64 - y[l] as f64;
            acc[l] += d * d;
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        let d = *x as f64 - *y as f64;
        tail += d * d;
    }
    acc.iter().sum::<f64>() + tail
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn score_with_norms(a: &[f32], b: &[f32], na: f64, nb: f64, metric: Metric) -> f64 {
    // `+ 0.0` folds -0.0 into 0.0 so the total order below has no signed-zero split.
    match metric {
        Metric::Cosine => {
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot(a, b) / (na * nb) + 0.0
            }
        }
        Metric::Euclidean => -sq_dist(a, b).sqrt() + 0.0,
    }
}

/// Similarity of two vectors. Cosine is 0 when either vector is zero; euclidean
/// similarity is the negated distance.
pub fn pairwise_similarity(a: &[f32], b: &[f32], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = match metric {
        Metric::Cosine => (norm(a), norm(b)),
        Metric::Euclidean => (0.0, 0.0),
    };
    Ok(score_with_norms(a, b, na, nb, metric))
}

/// Per-row norms cached for repeated scoring against one matrix.
struct Scorer<'a> {
    m: &'a EmbeddingMatrix,
    metric: Metric,
    norms: Vec<f64>,
}

impl<'a> Scorer<'a> {
    fn new(m: &'a EmbeddingMatrix, metric: Metric) -> Self {
        let norms = match metric {
            Metric::Cosine => m.rows().map(norm).collect(),
            Metric::Euclidean => Vec::new(),
        };
        Scorer { m, metric, norms }
    }

    fn score(&self, i: usize, j: usize) -> f64 {
        let (ni, nj) = match self.metric {
            Metric::Cosine => (self.norms[i], self.norms[j]),
            Metric::Euclidean => (0.0, 0.0),
        };
        score_with_norms(self.m.row(i), self.m.row(j), ni, nj, self.metric)
    }
}

/// Descending score, then ascending index.
pub(crate) fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top `k` of `cands` under [`rank_order`], sorted.
pub(crate) fn top_k(mut cands: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, rank_order);
        cands.truncate(k);
    }
    cands.sort_unstable_by(rank_order);
    cands
}

/// k nearest neighbors per row, with indices into the matrix's row order.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    pub k: usize,
    pub metric: Metric,
    pub excludes_self: bool,
    pub index_order: Vec<String>,
    pub neighbors: Vec<Vec<usize>>,
    pub scores: Vec<Vec<f64>>,
}

impl NeighborList {
    fn from_rows(
        k: usize,
        metric: Metric,
        excludes_self: bool,
        index_order: Vec<String>,
        rows: Vec<Vec<(f64, usize)>>,
    ) -> Self {
        let (scores, neighbors) = rows
            .into_iter()
            .map(|r| r.into_iter().unzip::<f64, usize, Vec<_>, Vec<_>>())
            .unzip();
        NeighborList {
            k,
            metric,
            excludes_self,
            index_order,
            neighbors,
            scores,
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Checks ordering, self-exclusion, index validity and distinctness.
    pub fn validate(&self) -> Result<()> {
        let n = self.index_order.len();
        if self.neighbors.len() != n || self.scores.len() != n {
            return Err(Error::Misalignment(format!(
                "{} ids but {} neighbor rows",
                n,
                self.neighbors.len()
            )));
        }
        for (i, (nbrs, scores)) in self.neighbors.iter().zip(&self.scores).enumerate() {
            if nbrs.len() != self.k || scores.len() != self.k {
                return Err(Error::Misalignment(format!(
                    "row {i} has {} neighbors, k = {}",
                    nbrs.len(),
                    self.k
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for &j in nbrs {
                if j >= n || !seen.insert(j) || (self.excludes_self && j == i) {
                    return Err(Error::Misalignment(format!("row {i} has invalid neighbor {j}")));
                }
            }
            for w in 0..self.k.saturating_sub(1) {
                let (a, b) = ((scores[w], nbrs[w]), (scores[w + 1], nbrs[w + 1]));
                if rank_order(&a, &b) != Ordering::Less {
                    return Err(Error::Misalignment(format!("row {i} is not in rank order at {w}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let rows = self
            .index_order
            .iter()
            .zip(self.neighbors.iter().zip(&self.scores))
            .map(|(id, (nbrs, scores))| NeighborRowJson {
                id: id.clone(),
                neighbors: nbrs.iter().map(|&j| self.index_order[j].clone()).collect(),
                scores: scores.clone(),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&NeighborListJson {
            k: self.k,
            metric: self.metric,
            excludes_self: self.excludes_self,
            rows,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: NeighborListJson = serde_json::from_str(text)?;
        let index_order: Vec<String> = parsed.rows.iter().map(|r| r.id.clone()).collect();
        let pos: std::collections::HashMap<&str, usize> =
            index_order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        if pos.len() != index_order.len() {
            return Err(Error::Misalignment("duplicate ids in neighbor list".into()));
        }
        let mut neighbors = Vec::with_capacity(parsed.rows.len());
        let mut scores = Vec::with_capacity(parsed.rows.len());
        for row in &parsed.rows {
            let idx = row
                .neighbors
                .iter()
                .map(|id| {
                    pos.get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::IdMismatch(format!("neighbor {id:?} is not a row id")))
                })
                .collect::<Result<Vec<_>>>()?;
            neighbors.push(idx);
            scores.push(row.scores.clone());
        }
        let list = NeighborList {
            k: parsed.k,
            metric: parsed.metric,
            excludes_self: parsed.excludes_self,
            index_order,
            neighbors,
            scores,
        };
        list.validate()?;
        Ok(list)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct NeighborRowJson {
    id: String,
    neighbors: Vec<String>,
    scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NeighborListJson {
    k: usize,
    metric: Metric,
    excludes_self: bool,
    rows: Vec<NeighborRowJson>,
}

fn check_k(k: usize, n: usize, exclude_self: bool) -> Result<()> {
    if k == 0 {
        return Err(Error::KOutOfRange {
            k,
            n,
            detail: "k must be at least 1",
        });
    }
    if exclude_self && k + 1 > n {
        return Err(Error::KOutOfRange {
            k,
            n,
            detail: "k must be at most N - 1 when excluding self",
        });
    }
    if k > n {
        return Err(Error::KOutOfRange {
            k,
            n,
            detail: "k must be at most N",
        });
    }
    Ok(())
}

fn row_candidates(scorer: &Scorer<'_>, i: usize, exclude_self: bool) -> Vec<(f64, usize)> {
    let n = scorer.m.n_rows();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        if exclude_self && j == i {
            continue;
        }
        out.push((scorer.score(i, j), j));
    }
    out
}

/// Brute-force O(N^2) search.
pub fn knn_exact(m: &EmbeddingMatrix, k: usize, metric: Metric, exclude_self: bool) -> Result<NeighborList> {
    let n = m.n_rows();
    check_k(k, n, exclude_self)?;
    let scorer = Scorer::new(m, metric);
    let rows: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| top_k(row_candidates(&scorer, i, exclude_self), k))
        .collect();
    Ok(NeighborList::from_rows(
        k,
        metric,
        exclude_self,
        m.index_order().to_vec(),
        rows,
    ))
}

/// Same result as [`knn_exact`], computed one block of `batch_size` query rows at a
/// time so at most `batch_size * N` scores are alive.
pub fn knn_batched(
    m: &EmbeddingMatrix,
    k: usize,
    metric: Metric,
    exclude_self: bool,
    batch_size: usize,
) -> Result<NeighborList> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let n = m.n_rows();
    check_k(k, n, exclude_self)?;
    let scorer = Scorer::new(m, metric);
    let mut rows = Vec::with_capacity(n);
    let mut block = vec![0f64; batch_size.min(n) * n];
    for start in (0..n).step_by(batch_size) {
        let end = (start + batch_size).min(n);
        let block = &mut block[..(end - start) * n];
        block.par_chunks_mut(n).enumerate().for_each(|(r, out)| {
            let i = start + r;
            for (j, slot) in out.iter_mut().enumerate() {
                *slot = scorer.score(i, j);
            }
        });
        let batch_rows: Vec<_> = block
            .par_chunks(n)
            .enumerate()
            .map(|(r, scores)| {
                let i = start + r;
                let cands = scores
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| !(exclude_self && j == i))
                    .map(|(j, &s)| (s, j))
                    .collect();
                top_k(cands, k)
            })
            .collect();
        rows.extend(batch_rows);
    }
    Ok(NeighborList::from_rows(
        k,
        metric,
        exclude_self,
        m.index_order().to_vec(),
        rows,
    ))
}

/// Default stage-one pool for [`knn_feature_reranked`].
pub fn default_candidate_pool(k: usize) -> usize {
    (4 * k).max(50)
}

/// Two-stage search: retrieve `candidate_pool` rows by whole-row similarity, then
/// rescore each candidate by the weighted mean of per-field block similarities and keep
/// the top `k`. A pool larger than the number of available rows is clamped.
pub fn knn_feature_reranked(
    m: &EmbeddingMatrix,
    k: usize,
    metric: Metric,
    candidate_pool: usize,
    field_weights: &[f64],
    exclude_self: bool,
) -> Result<NeighborList> {
    if candidate_pool < k {
        return Err(Error::Config(format!(
            "candidate_pool {candidate_pool} is smaller than k = {k}"
        )));
    }
    if field_weights.len() != m.n_fields() {
        return Err(Error::LengthMismatch {
            left: field_weights.len(),
            right: m.n_fields(),
        });
    }
    if field_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Config("field weights must be finite and nonnegative".into()));
    }
    let total: f64 = field_weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("field weights must not all be zero".into()));
    }
    let n = m.n_rows();
    check_k(k, n, exclude_self)?;
    let available = if exclude_self { n - 1 } else { n };
    let pool = candidate_pool.min(available);

    let scorer = Scorer::new(m, metric);
    let fields = m.n_fields();
    let block_norms: Vec<f64> = match metric {
        Metric::Cosine => (0..n)
            .flat_map(|i| (0..fields).map(move |f| (i, f)))
            .map(|(i, f)| norm(m.block(i, f)))
            .collect(),
        Metric::Euclidean => Vec::new(),
    };
    let block_score = |i: usize, j: usize, f: usize| {
        let (ni, nj) = match metric {
            Metric::Cosine => (block_norms[i * fields + f], block_norms[j * fields + f]),
            Metric::Euclidean => (0.0, 0.0),
        };
        score_with_norms(m.block(i, f), m.block(j, f), ni, nj, metric)
    };

    let rows: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let stage_one = top_k(row_candidates(&scorer, i, exclude_self), pool);
            let rescored = stage_one
                .into_iter()
                .map(|(_, j)| {
                    let weighted: f64 = field_weights
                        .iter()
                        .enumerate()
                        .map(|(f, w)| w * block_score(i, j, f))
                        .sum();
                    (weighted / total + 0.0, j)
                })
                .collect();
            top_k(rescored, k)
        })
        .collect();
    Ok(NeighborList::from_rows(
        k,
        metric,
        exclude_self,
        m.index_order().to_vec(),
        rows,
    ))
}

/// How the audit builds its neighbor structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum NeighborMode {
    Exact,
    Batched {
        batch_size: usize,
    },
    Reranked {
        candidate_pool: Option<usize>,
        /// Empty means equal weights.
        #[serde(default)]
        field_weights: Vec<f64>,
    },
}

impl Default for NeighborMode {
    fn default() -> Self {
        NeighborMode::Reranked {
            candidate_pool: None,
            field_weights: Vec::new(),
        }
    }
}

pub fn find_neighbors(
    m: &EmbeddingMatrix,
    k: usize,
    metric: Metric,
    exclude_self: bool,
    mode: &NeighborMode,
) -> Result<NeighborList> {
    match mode {
        NeighborMode::Exact => knn_exact(m, k, metric, exclude_self),
        NeighborMode::Batched { batch_size } => knn_batched(m, k, metric, exclude_self, *batch_size),
        NeighborMode::Reranked {
            candidate_pool,
            field_weights,
        } => {
            let weights = if field_weights.is_empty() {
                vec![1.0; m.n_fields()]
            } else {
                field_weights.clone()
            };
            let pool = candidate_pool.unwrap_or_else(|| default_candidate_pool(k));
            knn_feature_reranked(m, k, metric, pool, &weights, exclude_self)
        }
    }
}
