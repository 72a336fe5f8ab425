//! Synthetic admissions corpus with latent merit, plus a noisy, group-biased
//! rater panel that produces SL/AR/OF decisions.
//!
//! Generative recipe (all draws from one seeded ChaCha8 stream, profile by profile):
//! 1. `q ~ U(0, 1)` is the latent quality, `group ~ Bernoulli(0.5)` the latent group.
//! 2. Each source field gets its own quality `q_f = clamp(q + N(0, 0.1), 0, 1)`.
//! 3. The vocabulary is split into three equal bands (weak, neutral, strong). A field
//!    holds 20..=40 tokens; each token is neutral with probability 0.4, otherwise
//!    strong with probability `q_f` and weak otherwise. Tokens carry a field prefix.
//! 4. The outcome is `Offered` iff `q >= 0.5`.
//!
//! The group never influences the text, so only a biased rater can act on it.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DecisionVector, Field, Profile, STAGES};
use crate::error::{Error, Result};

const NEUTRAL_PROB: f64 = 0.4;
const FIELD_JITTER: f64 = 0.1;
const MIN_TOKENS: usize = 20;
const MAX_TOKENS: usize = 40;
const TOKEN_PREFIX: [&str; 4] = ["ga", "go", "pq", "ld"];

/// Sidecar record with the hidden ground truth of a synthetic profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub id: String,
    pub q: f64,
    pub group: u8,
    /// Per-source-field qualities in canonical order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub field_q: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub profiles: Vec<Profile>,
    pub latents: Vec<Latent>,
}

pub fn generate_synthetic_corpus(n: usize, vocab_size: usize, seed: u64) -> Result<SyntheticCorpus> {
    if vocab_size < 10 {
        return Err(Error::Config(format!("vocab_size must be >= 10, got {vocab_size}")));
    }
    let band = vocab_size / 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profiles = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);

    for i in 0..n {
        let id = format!("S{i:05}");
        let q: f64 = rng.random();
        let group = u8::from(rng.random_bool(0.5));
        let mut field_q = Vec::with_capacity(4);
        let mut texts: [String; 4] = Default::default();
        for (slot, field) in Field::SOURCES.iter().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            let qf = (q + FIELD_JITTER * noise).clamp(0.0, 1.0);
            field_q.push(qf);
            let len = rng.random_range(MIN_TOKENS..=MAX_TOKENS);
            let prefix = TOKEN_PREFIX[field.index()];
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                let offset = if rng.random_bool(NEUTRAL_PROB) {
                    band
                } else if rng.random_bool(qf) {
                    2 * band
                } else {
                    0
                };
                let idx = offset + rng.random_range(0..band);
                words.push(format!("{prefix}{idx}"));
            }
            texts[slot] = words.join(" ");
        }
        let [a, b, c, d] = texts;
        let outcome = if q >= 0.5 { "Offered" } else { "Not Offered" };
        profiles.push(Profile::new(id.clone(), a, b, c, d).with_outcome(outcome));
        latents.push(Latent { id, q, group, field_q });
    }
    Ok(SyntheticCorpus { profiles, latents })
}

/// Parameters of the simulated rater panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterConfig {
    /// Weights over the four source-field qualities. Empty means the rater sees `q` itself.
    #[serde(default)]
    pub quality_weights: Vec<f64>,
    pub noise_sigma: f64,
    /// Latent group to threshold shift; positive values make the rater stricter.
    #[serde(default)]
    pub bias_shift: BTreeMap<u8, f64>,
    /// SL, AR, OF thresholds, nondecreasing.
    pub stage_thresholds: [f64; 3],
    pub seed: u64,
}

impl Default for RaterConfig {
    fn default() -> Self {
        RaterConfig {
            quality_weights: Vec::new(),
            noise_sigma: 0.0,
            bias_shift: BTreeMap::new(),
            stage_thresholds: [0.5, 0.5, 0.5],
            seed: 0,
        }
    }
}

impl RaterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        let t = self.stage_thresholds;
        if !(t[0] <= t[1] && t[1] <= t[2]) {
            return Err(Error::Config(format!(
                "stage thresholds must satisfy SL <= AR <= OF, got {t:?}"
            )));
        }
        if !self.quality_weights.is_empty() {
            if self.quality_weights.len() != 4 {
                return Err(Error::Config(
                    "quality_weights needs one weight per source field".into(),
                ));
            }
            if self.quality_weights.iter().any(|w| *w < 0.0) || self.quality_weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(
                    "quality_weights must be nonnegative with positive sum".into(),
                ));
            }
        }
        Ok(())
    }

    fn perceived(&self, latent: &Latent) -> Result<f64> {
        if self.quality_weights.is_empty() {
            return Ok(latent.q);
        }
        if latent.field_q.len() != 4 {
            return Err(Error::Precondition(format!(
                "latent for {:?} lacks per-field qualities",
                latent.id
            )));
        }
        let total: f64 = self.quality_weights.iter().sum();
        Ok(self
            .quality_weights
            .iter()
            .zip(&latent.field_q)
            .map(|(w, q)| w * q)
            .sum::<f64>()
            / total)
    }
}

/// Simulates SL, AR and OF decisions. Each profile gets one noisy rater score that is
/// compared with every stage threshold; stages still cascade, so a profile rejected
/// earlier stays rejected.
pub fn simulate_raters(
    profiles: &[Profile],
    latents: &[Latent],
    config: &RaterConfig,
) -> Result<BTreeMap<String, DecisionVector>> {
    config.validate()?;
    let by_id: HashMap<&str, &Latent> = latents.iter().map(|l| (l.id.as_str(), l)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut values: [Vec<u8>; 3] = Default::default();

    for p in profiles {
        let latent = by_id
            .get(p.id.as_str())
            .ok_or_else(|| Error::Precondition(format!("no latent sidecar entry for {:?}", p.id)))?;
        let perceived = config.perceived(latent)?;
        let shift = config.bias_shift.get(&latent.group).copied().unwrap_or(0.0);
        let z: f64 = rng.sample(StandardNormal);
        let score = perceived + config.noise_sigma * z;
        let mut still_in = true;
        for (stage, threshold) in config.stage_thresholds.iter().enumerate() {
            still_in = still_in && score >= threshold + shift;
            values[stage].push(u8::from(still_in));
        }
    }

    let ids: Vec<String> = profiles.iter().map(|p| p.id.clone()).collect();
    let mut out = BTreeMap::new();
    for (stage, vals) in STAGES.iter().zip(values) {
        out.insert(
            stage.to_string(),
            DecisionVector::new(format!("human:{stage}"), vals, ids.clone())?,
        );
    }
    Ok(out)
}

/// Writes simulated decisions into profile labels (`sl`, `ar`, `of`).
pub fn apply_rater_labels(profiles: &mut [Profile], decisions: &BTreeMap<String, DecisionVector>) -> Result<()> {
    const WORDS: [(&str, &str); 3] = [("SL", "Shortlisted"), ("AR", "Recommended"), ("OF", "Offered")];
    for (stage, word) in WORDS {
        let Some(dv) = decisions.get(stage) else { continue };
        let dv = dv.select(&profiles.iter().map(|p| p.id.clone()).collect::<Vec<_>>())?;
        for (p, v) in profiles.iter_mut().zip(&dv.values) {
            let label = if *v == 1 {
                word.to_string()
            } else {
                format!("Not {word}")
            };
            p.labels.insert(stage.to_ascii_lowercase(), label);
        }
    }
    Ok(())
}
