//! Applicant profiles, decision labels, corpus splits and the synthetic
//! corpus generator used when no real admissions data is available.

mod io;
mod split;
mod synth;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_corpus, read_latents, save_corpus, write_latents, CorpusFormat};
pub use split::{split_corpus, split_sizes, SplitAssignment, DEFAULT_RATIOS};
pub use synth::{apply_rater_labels, generate_synthetic_corpus, simulate_raters, Latent, RaterConfig, SyntheticCorpus};

/// Text fields of a profile, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    Gcea,
    Gceo,
    Piq,
    Leadership,
    Combined,
}

impl Field {
    pub const ALL: [Field; 5] = [Field::Gcea, Field::Gceo, Field::Piq, Field::Leadership, Field::Combined];

    /// The four source fields that make up the combined document.
    pub const SOURCES: [Field; 4] = [Field::Gcea, Field::Gceo, Field::Piq, Field::Leadership];

    pub fn name(self) -> &'static str {
        match self {
            Field::Gcea => "GCEA",
            Field::Gceo => "GCEO",
            Field::Piq => "PIQ",
            Field::Leadership => "Leadership",
            Field::Combined => "Combined",
        }
    }

    /// Lowercase key used by the JSONL and CSV formats.
    pub fn key(self) -> &'static str {
        match self {
            Field::Gcea => "gcea",
            Field::Gceo => "gceo",
            Field::Piq => "piq",
            Field::Leadership => "leadership",
            Field::Combined => "combined",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Funnel stages with human decisions, plus the final outcome label.
pub const STAGES: [&str; 3] = ["SL", "AR", "OF"];
pub const OUTCOME_STAGE: &str = "Type";

/// One applicant record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Profile {
    pub id: String,
    /// Texts indexed by [`Field::index`].
    pub fields: [String; 5],
    /// Stage name to raw categorical label, keys kept as they appeared in the source.
    pub labels: BTreeMap<String, String>,
    pub outcome: Option<String>,
}

impl Profile {
    /// Builds a profile and derives the combined document from the four source fields.
    pub fn new(
        id: impl Into<String>,
        gcea: impl Into<String>,
        gceo: impl Into<String>,
        piq: impl Into<String>,
        leadership: impl Into<String>,
    ) -> Self {
        let sources = [gcea.into(), gceo.into(), piq.into(), leadership.into()];
        let combined = combine_fields(&sources);
        let [a, b, c, d] = sources;
        Profile {
            id: id.into(),
            fields: [a, b, c, d, combined],
            labels: BTreeMap::new(),
            outcome: None,
        }
    }

    pub fn field(&self, field: Field) -> &str {
        &self.fields[field.index()]
    }

    /// Raw label for `stage`; `"Type"` reads the outcome. Stage names match case-insensitively.
    pub fn label(&self, stage: &str) -> Option<&str> {
        if stage.eq_ignore_ascii_case(OUTCOME_STAGE) {
            return self.outcome.as_deref();
        }
        self.labels
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(stage))
            .map(|(_, v)| v.as_str())
    }

    pub fn with_outcome(mut self, outcome: impl Into<String>) -> Self {
        self.outcome = Some(outcome.into());
        self
    }

    pub fn with_label(mut self, stage: impl Into<String>, label: impl Into<String>) -> Self {
        self.labels.insert(stage.into(), label.into());
        self
    }
}

/// Joins the four source fields with single newlines.
pub fn combine_fields(sources: &[String; 4]) -> String {
    sources.join("\n")
}

/// Binary decisions from a single source, aligned to a profile id order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub source: String,
    pub values: Vec<u8>,
    pub index_order: Vec<String>,
}

impl DecisionVector {
    pub fn new(source: impl Into<String>, values: Vec<u8>, index_order: Vec<String>) -> Result<Self> {
        let dv = DecisionVector {
            source: source.into(),
            values,
            index_order,
        };
        dv.validate()?;
        Ok(dv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.index_order.len() {
            return Err(Error::LengthMismatch {
                left: self.values.len(),
                right: self.index_order.len(),
            });
        }
        if let Some(pos) = self.values.iter().position(|&v| v > 1) {
            return Err(Error::Precondition(format!(
                "decision value {} at position {pos} is not binary",
                self.values[pos]
            )));
        }
        let mut seen = HashSet::with_capacity(self.index_order.len());
        for id in &self.index_order {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Positive rate, or `None` when empty.
    pub fn positive_rate(&self) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        let pos = self.values.iter().filter(|&&v| v == 1).count();
        Some(pos as f64 / self.values.len() as f64)
    }

    /// Restricts the vector to `ids` (in that order). Fails if any id is absent.
    pub fn select(&self, ids: &[String]) -> Result<DecisionVector> {
        let lookup: std::collections::HashMap<&str, u8> = self
            .index_order
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
            .collect();
        let mut values = Vec::with_capacity(ids.len());
        for id in ids {
            match lookup.get(id.as_str()) {
                Some(&v) => values.push(v),
                None => {
                    return Err(Error::Misalignment(format!(
                        "id {id:?} not present in decisions from {}",
                        self.source
                    )))
                }
            }
        }
        Ok(DecisionVector {
            source: self.source.clone(),
            values,
            index_order: ids.to_vec(),
        })
    }
}

/// How label strings outside the known vocabulary are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LabelMode {
    /// Anything that is not a positive label is 0.
    #[default]
    Lenient,
    /// Only the known positive and `Not ...` negative labels are accepted.
    Strict,
}

const POSITIVE_LABELS: [&str; 3] = ["shortlisted", "recommended", "offered"];

/// Maps one raw label to {0, 1}; `None` means unrecognized (only in strict mode).
pub fn binarize_label(raw: &str, mode: LabelMode) -> Option<u8> {
    let norm = raw.trim().to_ascii_lowercase();
    if POSITIVE_LABELS.contains(&norm.as_str()) {
        return Some(1);
    }
    match mode {
        LabelMode::Lenient => Some(0),
        LabelMode::Strict => {
            let known_negative = norm
                .strip_prefix("not ")
                .map(|rest| POSITIVE_LABELS.contains(&rest.trim()))
                .unwrap_or(false);
            known_negative.then_some(0)
        }
    }
}

/// Binarizes every profile's label for `stage` (`"SL"`, `"AR"`, `"OF"`, or `"Type"`).
pub fn binarize_labels(profiles: &[Profile], stage: &str) -> Result<DecisionVector> {
    binarize_labels_with(profiles, stage, LabelMode::Lenient)
}

pub fn binarize_labels_with(profiles: &[Profile], stage: &str, mode: LabelMode) -> Result<DecisionVector> {
    let missing: Vec<String> = profiles
        .iter()
        .filter(|p| p.label(stage).is_none())
        .map(|p| p.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabel {
            stage: stage.to_string(),
            ids: missing,
        });
    }
    let mut values = Vec::with_capacity(profiles.len());
    for p in profiles {
        let raw = p.label(stage).unwrap_or_default();
        let v = binarize_label(raw, mode).ok_or_else(|| Error::UnknownLabel {
            stage: stage.to_string(),
            id: p.id.clone(),
            label: raw.to_string(),
        })?;
        values.push(v);
    }
    DecisionVector::new(
        source_name_for_stage(stage),
        values,
        profiles.iter().map(|p| p.id.clone()).collect(),
    )
}

/// Binarizes only the profiles that carry a label for `stage`.
pub fn binarize_labeled_subset(profiles: &[Profile], stage: &str) -> Result<DecisionVector> {
    let labeled: Vec<Profile> = profiles.iter().filter(|p| p.label(stage).is_some()).cloned().collect();
    binarize_labels(&labeled, stage)
}

pub fn source_name_for_stage(stage: &str) -> String {
    if stage.eq_ignore_ascii_case(OUTCOME_STAGE) {
        "truth:Type".to_string()
    } else {
        format!("human:{}", stage.to_ascii_uppercase())
    }
}

pub(crate) fn check_unique_ids(profiles: &[Profile]) -> Result<()> {
    let mut seen = HashSet::with_capacity(profiles.len());
    for p in profiles {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(id: &str) -> Profile {
        Profile::new(id, "a", "b", "c", "d")
    }

    #[test]
    fn combined_is_newline_join() {
        let p = Profile::new("x", "A levels", "O levels", "essay", "captain");
        assert_eq!(p.field(Field::Combined), "A levels\nO levels\nessay\ncaptain");
    }

    #[test]
    fn binarize_offer_labels() {
        let ps = vec![
            profile("a").with_label("of", "Offered"),
            profile("b").with_label("of", "Not Offered"),
            profile("c").with_label("of", "Offered"),
        ];
        let dv = binarize_labels(&ps, "OF").unwrap();
        assert_eq!(dv.values, vec![1, 0, 1]);
        assert_eq!(dv.index_order, vec!["a", "b", "c"]);
        assert_eq!(dv.source, "human:OF");
    }

    #[test]
    fn all_shortlisted_is_all_ones() {
        let ps: Vec<_> = (0..4)
            .map(|i| profile(&format!("p{i}")).with_label("sl", "Shortlisted"))
            .collect();
        assert_eq!(binarize_labels(&ps, "SL").unwrap().values, vec![1; 4]);
    }

    #[test]
    fn unknown_label_is_zero_unless_strict() {
        let ps = vec![profile("a").with_label("ar", "rejected-late")];
        assert_eq!(binarize_labels(&ps, "AR").unwrap().values, vec![0]);
        let err = binarize_labels_with(&ps, "AR", LabelMode::Strict).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { .. }));
        let ok = vec![profile("b").with_label("ar", "Not Recommended")];
        assert_eq!(
            binarize_labels_with(&ok, "AR", LabelMode::Strict).unwrap().values,
            vec![0]
        );
    }

    #[test]
    fn missing_stage_lists_ids() {
        let ps = vec![profile("a").with_label("sl", "Shortlisted"), profile("b"), profile("c")];
        match binarize_labels(&ps, "SL").unwrap_err() {
            Error::MissingLabel { stage, ids } => {
                assert_eq!(stage, "SL");
                assert_eq!(ids, vec!["b", "c"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_stage_reads_outcome() {
        let ps = vec![
            profile("a").with_outcome("Offered"),
            profile("b").with_outcome("Not Offered"),
        ];
        assert_eq!(binarize_labels(&ps, "Type").unwrap().values, vec![1, 0]);
    }

    #[test]
    fn decision_vector_rejects_duplicates_and_non_binary() {
        assert!(DecisionVector::new("s", vec![0, 1], vec!["a".into(), "a".into()]).is_err());
        assert!(DecisionVector::new("s", vec![0, 2], vec!["a".into(), "b".into()]).is_err());
        assert!(DecisionVector::new("s", vec![0], vec!["a".into(), "b".into()]).is_err());
    }
}
