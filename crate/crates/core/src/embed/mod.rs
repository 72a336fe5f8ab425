//! Per-field profile embeddings and their concatenation into one row per profile.

mod format;
mod hashing;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Field, Profile};
use crate::error::{Error, Result};

pub use format::{ingest_embeddings, load_matrix, read_matrix_file, write_matrix_binary, write_matrix_csv};
pub use hashing::{hash_embed_field, hash_embed_field_with, tokenize, HashEmbedder};

pub const DEFAULT_DIM: usize = 768;
/// Token cap matching the usual transformer context; only applied when requested.
pub const TRANSFORMER_MAX_TOKENS: usize = 512;

/// Dense N x D matrix with field-wise block structure, row-major f32.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f32>,
    dim_per_field: usize,
    field_order: Vec<String>,
    index_order: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(
        data: Vec<f32>,
        dim_per_field: usize,
        field_order: Vec<String>,
        index_order: Vec<String>,
    ) -> Result<Self> {
        if dim_per_field == 0 || field_order.is_empty() {
            return Err(Error::Config(
                "embedding needs at least one field of nonzero width".into(),
            ));
        }
        let width = dim_per_field * field_order.len();
        let expected = index_order.len() * width;
        if data.len() != expected {
            return Err(Error::Dimension {
                expected,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / width,
                col: pos % width,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for id in &index_order {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingMatrix {
            data,
            dim_per_field,
            field_order,
            index_order,
        })
    }

    /// Matrix with the canonical five fields.
    pub fn canonical(data: Vec<f32>, dim_per_field: usize, index_order: Vec<String>) -> Result<Self> {
        Self::new(data, dim_per_field, canonical_field_names(), index_order)
    }

    /// Single-block matrix from plain rows, for callers with no field structure.
    pub fn from_rows(rows: &[Vec<f32>], index_order: Vec<String>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, dim, vec!["vector".into()], index_order)
    }

    pub fn n_rows(&self) -> usize {
        self.index_order.len()
    }

    /// Full row width D.
    pub fn dim(&self) -> usize {
        self.dim_per_field * self.field_order.len()
    }

    pub fn dim_per_field(&self) -> usize {
        self.dim_per_field
    }

    pub fn n_fields(&self) -> usize {
        self.field_order.len()
    }

    pub fn field_order(&self) -> &[String] {
        &self.field_order
    }

    pub fn index_order(&self) -> &[String] {
        &self.index_order
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.dim();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim())
    }

    /// Slice of row `i` holding field `f`.
    pub fn block(&self, i: usize, f: usize) -> &[f32] {
        let d = self.dim_per_field;
        &self.row(i)[f * d..(f + 1) * d]
    }

    /// N x d matrix holding only field `f`.
    pub fn field_block(&self, f: usize) -> Result<EmbeddingMatrix> {
        if f >= self.n_fields() {
            return Err(Error::Config(format!("field index {f} out of range")));
        }
        let mut data = Vec::with_capacity(self.n_rows() * self.dim_per_field);
        for i in 0..self.n_rows() {
            data.extend_from_slice(self.block(i, f));
        }
        Self::new(
            data,
            self.dim_per_field,
            vec![self.field_order[f].clone()],
            self.index_order.clone(),
        )
    }

    /// Concatenates single-field matrices column-wise. All must share ids and width.
    pub fn concat_blocks(blocks: &[EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
        let first = blocks.first().ok_or(Error::Empty("no blocks to concatenate"))?;
        let d = first.dim_per_field;
        for b in blocks {
            if b.index_order != first.index_order {
                return Err(Error::IdMismatch("blocks disagree on row order".into()));
            }
            if b.dim_per_field != d {
                return Err(Error::Dimension {
                    expected: d,
                    found: b.dim_per_field,
                });
            }
        }
        let fields: Vec<String> = blocks.iter().flat_map(|b| b.field_order.iter().cloned()).collect();
        let mut data = Vec::with_capacity(first.n_rows() * d * fields.len());
        for i in 0..first.n_rows() {
            for b in blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        Self::new(data, d, fields, first.index_order.clone())
    }

    /// Rows for `ids`, in that order.
    pub fn select_rows(&self, ids: &[String]) -> Result<EmbeddingMatrix> {
        let pos: std::collections::HashMap<&str, usize> = self
            .index_order
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut data = Vec::with_capacity(ids.len() * self.dim());
        for id in ids {
            let &i = pos
                .get(id.as_str())
                .ok_or_else(|| Error::IdMismatch(format!("id {id:?} not in embedding matrix")))?;
            data.extend_from_slice(self.row(i));
        }
        Self::new(data, self.dim_per_field, self.field_order.clone(), ids.to_vec())
    }

    /// L2-normalizes each field block in place; zero blocks stay zero.
    pub fn normalize_blocks(&mut self) {
        let d = self.dim_per_field;
        for block in self.data.chunks_exact_mut(d) {
            let norm = block.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in block.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
    }
}

pub fn canonical_field_names() -> Vec<String> {
    Field::ALL.iter().map(|f| f.name().to_string()).collect()
}

/// Where profile embeddings come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSource {
    Hash {
        seed: u64,
        #[serde(default)]
        max_tokens: Option<usize>,
    },
    Ingest {
        path: PathBuf,
    },
}

impl Default for EmbeddingSource {
    fn default() -> Self {
        EmbeddingSource::Hash {
            seed: 0,
            max_tokens: None,
        }
    }
}

/// Embeds every field of every profile and concatenates the blocks in canonical order.
pub fn embed_corpus(profiles: &[Profile], source: &EmbeddingSource, d: usize) -> Result<EmbeddingMatrix> {
    let ids: Vec<String> = profiles.iter().map(|p| p.id.clone()).collect();
    match source {
        EmbeddingSource::Hash { seed, max_tokens } => {
            let embedder = HashEmbedder {
                dim: d,
                seed: *seed,
                max_tokens: *max_tokens,
            };
            embedder.validate()?;
            let width = d * Field::ALL.len();
            let mut data = vec![0f32; profiles.len() * width];
            data.par_chunks_mut(width.max(1))
                .zip(profiles.par_iter())
                .for_each(|(row, profile)| {
                    for (f, block) in Field::ALL.iter().zip(row.chunks_exact_mut(d)) {
                        embedder.embed_into(profile.field(*f), block);
                    }
                });
            EmbeddingMatrix::canonical(data, d, ids)
        }
        EmbeddingSource::Ingest { path } => ingest_embeddings(path, &ids, d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profiles() -> Vec<Profile> {
        vec![
            Profile::new("a", "math physics", "english", "I like robots", "chess club"),
            Profile::new("b", "history", "art", "essays", "debate captain"),
        ]
    }

    #[test]
    fn block_layout() {
        let ps = profiles();
        let m = embed_corpus(
            &ps,
            &EmbeddingSource::Hash {
                seed: 3,
                max_tokens: None,
            },
            8,
        )
        .unwrap();
        assert_eq!((m.n_rows(), m.dim()), (2, 40));
        assert_eq!(
            m.block(0, 4),
            hash_embed_field(ps[0].field(Field::Combined), 8, 3).as_slice()
        );
        assert_eq!(m.block(1, 2), hash_embed_field("essays", 8, 3).as_slice());
    }

    #[test]
    fn default_width_is_3840() {
        let m = embed_corpus(
            &profiles(),
            &EmbeddingSource::Hash {
                seed: 0,
                max_tokens: None,
            },
            DEFAULT_DIM,
        )
        .unwrap();
        assert_eq!(m.dim(), 3840);
        assert_eq!(m.row(0).len(), 3840);
    }

    #[test]
    fn empty_profile_is_zero_row() {
        let ps = vec![Profile::new("e", "", "", " ", "")];
        let mut ps = ps;
        ps[0].fields[4] = String::new();
        let m = embed_corpus(
            &ps,
            &EmbeddingSource::Hash {
                seed: 1,
                max_tokens: None,
            },
            16,
        )
        .unwrap();
        assert!(m.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blocks_reassemble() {
        let m = embed_corpus(
            &profiles(),
            &EmbeddingSource::Hash {
                seed: 5,
                max_tokens: None,
            },
            6,
        )
        .unwrap();
        let blocks: Vec<_> = (0..m.n_fields()).map(|f| m.field_block(f).unwrap()).collect();
        assert_eq!(EmbeddingMatrix::concat_blocks(&blocks).unwrap(), m);
    }

    #[test]
    fn rejects_nan() {
        let err = EmbeddingMatrix::from_rows(&[vec![0.0, f32::NAN]], vec!["a".into()]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn normalize_blocks_unit_norm() {
        let mut m = EmbeddingMatrix::new(
            vec![3.0, 4.0, 0.0, 0.0, 1.0, 1.0],
            2,
            vec!["x".into(), "y".into(), "z".into()],
            vec!["a".into()],
        )
        .unwrap();
        m.normalize_blocks();
        assert_eq!(m.block(0, 0), &[0.6, 0.8]);
        assert_eq!(m.block(0, 1), &[0.0, 0.0]);
        let n: f32 = m.block(0, 2).iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-6);
    }
}
