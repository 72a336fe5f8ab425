//! Signed feature hashing over lowercase word unigrams and bigrams.

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SIGN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    /// Keep only the first `max_tokens` words when set.
    pub max_tokens: Option<usize>,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEmbedder {
            dim,
            seed,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!(
                "hash embedding dimension must be >= 2, got {}",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut out = vec![0f32; self.dim];
        self.embed_into(text, &mut out);
        out
    }

    /// Writes the embedding of `text` into `out` (length `dim`).
    pub fn embed_into(&self, text: &str, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.dim);
        let mut words = tokenize(text);
        if let Some(cap) = self.max_tokens {
            words.truncate(cap);
        }
        let mut acc = vec![0f64; self.dim];
        for w in &words {
            self.add(&mut acc, &[w.as_bytes()]);
        }
        for pair in words.windows(2) {
            self.add(&mut acc, &[pair[0].as_bytes(), b" ", pair[1].as_bytes()]);
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = if norm > 0.0 { (a / norm) as f32 } else { 0.0 };
        }
    }

    fn add(&self, acc: &mut [f64], parts: &[&[u8]]) {
        let h = seeded_hash(parts, self.seed);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if mix64(h ^ SIGN_SALT) >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
}

/// Lowercase alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn seeded_hash(parts: &[&[u8]], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ mix64(seed);
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    mix64(h)
}

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash embedding of one field. Empty or whitespace-only text gives the zero vector.
pub fn hash_embed_field(text: &str, d: usize, seed: u64) -> Vec<f32> {
    HashEmbedder::new(d, seed).embed(text)
}

pub fn hash_embed_field_with(text: &str, d: usize, seed: u64, max_tokens: Option<usize>) -> Vec<f32> {
    HashEmbedder {
        dim: d,
        seed,
        max_tokens,
    }
    .embed(text)
}
