//! End-to-end audit: load, embed, split, train, predict and score every decision
//! source, then assemble the per-source report.

mod report;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{
    random_search, train_family, Family, KnnClassifier, LabeledSet, TrainConfig, TrainedModel, TrialRecord,
};
use crate::dataset::{
    binarize_labels, load_corpus, source_name_for_stage, split_corpus, CorpusFormat, DecisionVector, Profile,
    SplitAssignment, DEFAULT_RATIOS, OUTCOME_STAGE,
};
use crate::embed::{embed_corpus, write_matrix_binary, EmbeddingMatrix, EmbeddingSource, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::fairness::{classification_metrics, consistency, Averaging};
use crate::simindex::{find_neighbors, Metric, NeighborList, NeighborMode};

pub use report::{compare_sources, render_report, AuditReport, ReportFormat, ReportRow, SourceComparison, COLUMNS};

pub const DEFAULT_SOURCES: [&str; 6] = [
    "human:SL",
    "human:AR",
    "human:OF",
    "model:knn",
    "model:gbstumps",
    "model:birnn",
];

/// Stages whose neighbor structures feed the two consistency columns.
pub const CONSISTENCY_STAGES: [&str; 2] = ["AR", "OF"];

/// Which profiles a computation covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Train,
    Validation,
    Test,
    All,
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Scope::Train),
            "validation" | "val" => Ok(Scope::Validation),
            "test" => Ok(Scope::Test),
            "all" => Ok(Scope::All),
            other => Err(Error::Config(format!("unknown scope {other:?}"))),
        }
    }
}

impl Scope {
    fn ids<'a>(self, split: &'a SplitAssignment, all: &'a [String]) -> &'a [String] {
        match self {
            Scope::Train => &split.train,
            Scope::Validation => &split.validation,
            Scope::Test => &split.test,
            Scope::All => all,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub seed: u64,
    pub dim_per_field: usize,
    pub normalize_blocks: bool,
    pub split_ratios: [f64; 3],
    pub stratify_on: Option<String>,
    pub k: usize,
    pub metric: Metric,
    pub exclude_self: bool,
    pub neighbor_mode: NeighborMode,
    pub averaging: Averaging,
    pub ground_truth: String,
    pub metric_scope: Scope,
    pub consistency_scope: Scope,
    pub knn_k: usize,
    pub search: bool,
    pub stumps: TrainConfig,
    pub birnn: TrainConfig,
    pub sources: Vec<String>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            seed: 0,
            dim_per_field: DEFAULT_DIM,
            normalize_blocks: true,
            split_ratios: DEFAULT_RATIOS,
            stratify_on: None,
            k: 5,
            metric: Metric::Cosine,
            exclude_self: true,
            neighbor_mode: NeighborMode::default(),
            averaging: Averaging::Weighted,
            ground_truth: OUTCOME_STAGE.to_string(),
            metric_scope: Scope::Test,
            consistency_scope: Scope::All,
            knn_k: 5,
            search: true,
            stumps: TrainConfig::for_family(Family::Stumps),
            birnn: TrainConfig::for_family(Family::BiRnn),
            sources: DEFAULT_SOURCES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Config("no decision sources requested".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.sources {
            if !seen.insert(s.as_str()) {
                return Err(Error::Config(format!("source {s:?} requested twice")));
            }
            if !(s.starts_with("human:") || ["model:knn", "model:gbstumps", "model:birnn"].contains(&s.as_str())) {
                return Err(Error::Config(format!("unknown source {s:?}")));
            }
        }
        if self.k == 0 || self.knn_k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        self.stumps.validate()?;
        self.birnn.validate()?;
        Ok(())
    }

    /// Per-family training seeds derived from the run seed.
    pub fn family_seed(&self, family: Family) -> u64 {
        match family {
            Family::Stumps => self.seed.wrapping_add(1),
            Family::BiRnn => self.seed.wrapping_add(2),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub validation_accuracy: Option<f64>,
    pub best_trial: Option<usize>,
    pub trials: usize,
    pub seed: u64,
}

/// Everything needed to reproduce the report's cells.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditMetadata {
    pub corpus_size: usize,
    pub corpus_sha256: String,
    pub seed: u64,
    pub embedding: EmbeddingSource,
    pub dim_per_field: usize,
    pub normalize_blocks: bool,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    pub stratify_on: Option<String>,
    pub split_sizes: [usize; 3],
    pub k: usize,
    pub metric: Metric,
    pub exclude_self: bool,
    pub neighbor_mode: NeighborMode,
    pub averaging: Averaging,
    pub ground_truth: String,
    pub metric_scope: Option<Scope>,
    pub consistency_scope: Option<Scope>,
    /// Profiles scored per consistency column.
    pub consistency_population: BTreeMap<String, usize>,
    pub knn_k: usize,
    pub models: BTreeMap<String, ModelSummary>,
    pub version: String,
    pub timestamp: String,
}

/// A finished audit with its intermediate artifacts.
#[derive(Clone, Debug)]
pub struct AuditRun {
    pub config: AuditConfig,
    pub report: AuditReport,
    pub embeddings: EmbeddingMatrix,
    pub split: SplitAssignment,
    /// Neighbor structure per consistency stage.
    pub neighbors: BTreeMap<String, NeighborList>,
    pub models: Vec<TrainedModel>,
    pub trials: BTreeMap<String, Vec<TrialRecord>>,
    pub predictions: Vec<DecisionVector>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the audit on a corpus file. The format follows the file extension.
pub fn run_audit(corpus: &Path, embeddings: &EmbeddingSource, config: &AuditConfig) -> Result<AuditRun> {
    let bytes = stage("load", std::fs::read(corpus).map_err(|e| Error::io(corpus, e)))?;
    let profiles = stage("load", load_corpus(corpus, CorpusFormat::from_path(corpus)))?;
    run_audit_profiles(&profiles, &sha256_hex(&bytes), embeddings, config)
}

/// Runs the audit on profiles already in memory; `corpus_sha256` is recorded as given.
pub fn run_audit_profiles(
    profiles: &[Profile],
    corpus_sha256: &str,
    embeddings: &EmbeddingSource,
    config: &AuditConfig,
) -> Result<AuditRun> {
    stage("config", config.validate())?;
    if profiles.is_empty() {
        return Err(Error::Stage {
            stage: "load",
            source: Box::new(Error::Empty("corpus has no profiles")),
        });
    }
    let all_ids: Vec<String> = profiles.iter().map(|p| p.id.clone()).collect();

    let mut x = stage("embed", embed_corpus(profiles, embeddings, config.dim_per_field))?;
    if config.normalize_blocks {
        x.normalize_blocks();
    }

    let split = stage(
        "split",
        split_corpus(
            profiles,
            config.split_ratios,
            config.seed,
            config.stratify_on.as_deref(),
        ),
    )?;

    let truth = stage("labels", binarize_labels(profiles, &config.ground_truth))?;

    // Consistency populations: profiles labeled at each stage, within the scope.
    let scope_ids: HashSet<&str> = config
        .consistency_scope
        .ids(&split, &all_ids)
        .iter()
        .map(String::as_str)
        .collect();
    let mut populations: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for st in CONSISTENCY_STAGES {
        let ids = profiles
            .iter()
            .filter(|p| scope_ids.contains(p.id.as_str()) && p.label(st).is_some())
            .map(|p| p.id.clone())
            .collect();
        populations.insert(st.to_string(), ids);
    }
    let mut neighbors: BTreeMap<String, NeighborList> = BTreeMap::new();
    for (st, ids) in &populations {
        let min_rows = config.k + usize::from(config.exclude_self);
        if ids.len() < min_rows {
            continue;
        }
        if let Some(same) = neighbors.values().find(|nl| nl.index_order == *ids).cloned() {
            neighbors.insert(st.clone(), same);
            continue;
        }
        let sub = if ids.len() == all_ids.len() {
            x.clone()
        } else {
            stage("neighbors", x.select_rows(ids))?
        };
        let nl = stage(
            "neighbors",
            find_neighbors(
                &sub,
                config.k,
                config.metric,
                config.exclude_self,
                &config.neighbor_mode,
            ),
        )?;
        neighbors.insert(st.clone(), nl);
    }

    let train_x = stage("train", x.select_rows(&split.train))?;
    let train_y = stage("train", truth.select(&split.train))?;
    let val_x = stage("train", x.select_rows(&split.validation))?;
    let val_y = stage("train", truth.select(&split.validation))?;
    let train_set = stage("train", LabeledSet::new(&train_x, &train_y))?;
    let val_set = stage("train", LabeledSet::new(&val_x, &val_y))?;

    let mut models = Vec::new();
    let mut trials = BTreeMap::new();
    let mut summaries = BTreeMap::new();
    let mut predictions: BTreeMap<String, DecisionVector> = BTreeMap::new();

    for source in &config.sources {
        let (model, summary) = match source.as_str() {
            "model:knn" => {
                let clf = stage(
                    "train",
                    KnnClassifier::new(config.knn_k, config.metric, train_x.clone(), &train_y),
                )?;
                let pred = stage("predict", clf.predict(&x, true))?;
                predictions.insert(source.clone(), pred);
                models.push(TrainedModel::Knn(clf.snapshot()));
                continue;
            }
            "model:gbstumps" | "model:birnn" => {
                let family = if source == "model:gbstumps" {
                    Family::Stumps
                } else {
                    Family::BiRnn
                };
                let mut cfg = match family {
                    Family::Stumps => config.stumps.clone(),
                    Family::BiRnn => config.birnn.clone(),
                };
                cfg.seed = config.family_seed(family);
                if config.search && !cfg.search_space.is_empty() {
                    let found = stage("train", random_search(train_set, val_set, family, &cfg))?;
                    let summary = ModelSummary {
                        validation_accuracy: Some(found.best_validation_accuracy),
                        best_trial: Some(found.best_trial),
                        trials: found.trials.len(),
                        seed: cfg.seed,
                    };
                    trials.insert(family.name().to_string(), found.trials);
                    (found.model, summary)
                } else {
                    let (model, acc, _) = stage("train", train_family(train_set, val_set, family, &cfg))?;
                    let summary = ModelSummary {
                        validation_accuracy: Some(acc),
                        best_trial: None,
                        trials: 1,
                        seed: cfg.seed,
                    };
                    (model, summary)
                }
            }
            _ => continue,
        };
        let pred = stage("predict", model.predict(&x))?;
        predictions.insert(source.clone(), pred);
        summaries.insert(model.source_name().to_string(), summary);
        models.push(model);
    }

    let metric_ids = config.metric_scope.ids(&split, &all_ids);
    let mut rows = Vec::with_capacity(config.sources.len());
    for source in &config.sources {
        let decisions = match source.strip_prefix("human:") {
            Some(st) => human_decisions(profiles, st),
            None => predictions.get(source).cloned(),
        };
        let mut row = ReportRow::empty(source.clone());
        if let Some(dec) = &decisions {
            let have: HashSet<&str> = dec.index_order.iter().map(String::as_str).collect();
            let ids: Vec<String> = metric_ids
                .iter()
                .filter(|id| have.contains(id.as_str()))
                .cloned()
                .collect();
            if !ids.is_empty() {
                let m = stage(
                    "score",
                    classification_metrics(&dec.select(&ids)?, &truth.select(&ids)?, config.averaging),
                )?;
                row.precision = Some(m.precision);
                row.recall = Some(m.recall);
                row.f1 = Some(m.f1);
                row.accuracy = Some(m.accuracy);
            }
            for st in CONSISTENCY_STAGES {
                let Some(nl) = neighbors.get(st) else { continue };
                if !nl.index_order.iter().all(|id| have.contains(id.as_str())) {
                    continue;
                }
                let c = stage("score", consistency(&dec.select(&nl.index_order)?, nl))?;
                match st {
                    "AR" => row.c_ar = Some(c.score),
                    _ => row.c_of = Some(c.score),
                }
            }
        }
        rows.push(row);
    }

    let metadata = AuditMetadata {
        corpus_size: profiles.len(),
        corpus_sha256: corpus_sha256.to_string(),
        seed: config.seed,
        embedding: embeddings.clone(),
        dim_per_field: config.dim_per_field,
        normalize_blocks: config.normalize_blocks,
        split_ratios: config.split_ratios,
        split_seed: split.seed,
        stratify_on: config.stratify_on.clone(),
        split_sizes: split.sizes(),
        k: config.k,
        metric: config.metric,
        exclude_self: config.exclude_self,
        neighbor_mode: config.neighbor_mode.clone(),
        averaging: config.averaging,
        ground_truth: config.ground_truth.clone(),
        metric_scope: Some(config.metric_scope),
        consistency_scope: Some(config.consistency_scope),
        consistency_population: neighbors.iter().map(|(st, nl)| (st.clone(), nl.len())).collect(),
        knn_k: config.knn_k,
        models: summaries,
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let report = AuditReport { rows, metadata };
    stage("report", report.validate())?;

    Ok(AuditRun {
        config: config.clone(),
        report,
        embeddings: x,
        split,
        neighbors,
        models,
        trials,
        predictions: predictions.into_values().collect(),
    })
}

/// Binarized labels of one human stage over the profiles that carry it.
fn human_decisions(profiles: &[Profile], stage_name: &str) -> Option<DecisionVector> {
    let labeled: Vec<Profile> = profiles
        .iter()
        .filter(|p| p.label(stage_name).is_some())
        .cloned()
        .collect();
    if labeled.is_empty() {
        return None;
    }
    let mut dv = binarize_labels(&labeled, stage_name).ok()?;
    dv.source = source_name_for_stage(stage_name);
    Some(dv)
}

#[derive(Serialize)]
struct RunConfigFile<'a> {
    embedding: &'a EmbeddingSource,
    audit: &'a AuditConfig,
}

impl AuditRun {
    /// Writes the run directory: config, corpus hash, embeddings, split, models,
    /// neighbor lists and the report in every format.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let models_dir = dir.join("models");
        std::fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
        let mut put = |name: PathBuf, text: String| -> Result<()> {
            std::fs::write(&name, text).map_err(|e| Error::io(&name, e))?;
            written.push(name);
            Ok(())
        };

        let cfg = RunConfigFile {
            embedding: &self.report.metadata.embedding,
            audit: &self.config,
        };
        put(dir.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
        put(
            dir.join("corpus.sha256"),
            format!("{}\n", self.report.metadata.corpus_sha256),
        )?;
        put(
            dir.join("splits.json"),
            serde_json::to_string_pretty(&self.split)? + "\n",
        )?;
        for model in &self.models {
            let family = model.source_name().trim_start_matches("model:");
            put(models_dir.join(format!("{family}.json")), model.to_json()? + "\n")?;
        }
        for (family, log) in &self.trials {
            put(
                models_dir.join(format!("{family}_trials.json")),
                serde_json::to_string_pretty(log)? + "\n",
            )?;
        }
        if let Some(of) = self.neighbors.get("OF") {
            put(dir.join("neighbors.json"), of.to_json()? + "\n")?;
        }
        for (st, nl) in &self.neighbors {
            if st != "OF" && self.neighbors.get("OF") != Some(nl) {
                put(
                    dir.join(format!("neighbors_{}.json", st.to_ascii_lowercase())),
                    nl.to_json()? + "\n",
                )?;
            }
        }
        for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
            put(
                dir.join(format!("report.{}", format.extension())),
                render_report(&self.report, format)?,
            )?;
        }
        let emb = dir.join("embeddings.faem");
        write_matrix_binary(&emb, &self.embeddings)?;
        written.push(emb);
        Ok(written)
    }
}
