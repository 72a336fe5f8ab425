//! Individual-fairness auditing of human and model decisions over embedded text
//! profiles.
//!
//! The pipeline loads applicant profiles, embeds each text field, finds every profile's
//! most similar peers and scores each decision source by how often it treats those
//! peers alike, next to the usual precision / recall / F1 / accuracy.

pub mod audit;
pub mod classifiers;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod fairness;
pub mod simindex;

pub use error::{Error, Result};
