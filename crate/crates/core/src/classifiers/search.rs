use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::birnn::birnn_train;
use super::stumps::train_stumps;
use super::{accuracy, LabeledSet, TrainedModel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[serde(rename = "gbstumps")]
    Stumps,
    #[serde(rename = "birnn")]
    BiRnn,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Stumps => "gbstumps",
            Family::BiRnn => "birnn",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gbstumps" | "stumps" => Ok(Family::Stumps),
            "birnn" => Ok(Family::BiRnn),
            other => Err(Error::Config(format!("unknown model family {other:?}"))),
        }
    }
}

/// Sampling range for one hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamRange {
    Uniform {
        low: f64,
        high: f64,
    },
    LogUniform {
        low: f64,
        high: f64,
    },
    /// Inclusive on both ends.
    IntRange {
        low: i64,
        high: i64,
    },
    Choice {
        values: Vec<f64>,
    },
}

impl ParamRange {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            ParamRange::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            ParamRange::LogUniform { low, high } => *low > 0.0 && high.is_finite() && low <= high,
            ParamRange::IntRange { low, high } => low <= high,
            ParamRange::Choice { values } => !values.is_empty() && values.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid search range for {name}: {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ParamRange::Uniform { low, high } if low == high => *low,
            ParamRange::Uniform { low, high } => rng.random_range(*low..*high),
            ParamRange::LogUniform { low, high } if low == high => *low,
            ParamRange::LogUniform { low, high } => rng.random_range(low.ln()..high.ln()).exp(),
            ParamRange::IntRange { low, high } => rng.random_range(*low..=*high) as f64,
            ParamRange::Choice { values } => values[rng.random_range(0..values.len())],
        }
    }
}

/// Training and search settings shared by the learned families. Each family reads the
/// fields that apply to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    /// Adam step for the recurrent model, shrinkage for boosted stumps.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub head_hidden: usize,
    pub weight_decay: f64,
    pub rounds: usize,
    pub l2: f64,
    pub feature_fraction: f64,
    pub search_trials: usize,
    pub search_space: BTreeMap<String, ParamRange>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 20,
            patience: 5,
            learning_rate: 0.01,
            batch_size: 32,
            seed: 0,
            hidden: 16,
            head_hidden: 16,
            weight_decay: 0.0,
            rounds: 100,
            l2: 1.0,
            feature_fraction: 1.0,
            search_trials: 1,
            search_space: BTreeMap::new(),
        }
    }
}

const KEYS: [&str; 10] = [
    "learning_rate",
    "batch_size",
    "hidden",
    "head_hidden",
    "weight_decay",
    "rounds",
    "l2",
    "feature_fraction",
    "max_epochs",
    "patience",
];

impl TrainConfig {
    /// Defaults plus the randomized search space used for `family`.
    pub fn for_family(family: Family) -> Self {
        let mut space = BTreeMap::new();
        let mut cfg = TrainConfig {
            search_trials: 6,
            ..TrainConfig::default()
        };
        match family {
            Family::Stumps => {
                cfg.learning_rate = 0.3;
                cfg.feature_fraction = 0.25;
                space.insert("learning_rate".into(), ParamRange::LogUniform { low: 0.05, high: 0.5 });
                space.insert("rounds".into(), ParamRange::IntRange { low: 30, high: 120 });
                space.insert("l2".into(), ParamRange::LogUniform { low: 0.1, high: 10.0 });
                space.insert("feature_fraction".into(), ParamRange::Uniform { low: 0.1, high: 0.4 });
            }
            Family::BiRnn => {
                cfg.learning_rate = 0.005;
                space.insert("learning_rate".into(), ParamRange::LogUniform { low: 1e-3, high: 2e-2 });
                space.insert(
                    "hidden".into(),
                    ParamRange::Choice {
                        values: vec![8.0, 16.0],
                    },
                );
                space.insert(
                    "head_hidden".into(),
                    ParamRange::Choice {
                        values: vec![8.0, 16.0],
                    },
                );
                space.insert(
                    "batch_size".into(),
                    ParamRange::Choice {
                        values: vec![16.0, 32.0, 64.0],
                    },
                );
            }
        }
        cfg.search_space = space;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.search_trials == 0 {
            return Err(Error::Config("search_trials must be at least 1".into()));
        }
        if self.batch_size == 0 || self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::Config("batch_size and hidden sizes must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} is invalid",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        for (name, range) in &self.search_space {
            if !KEYS.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown hyperparameter {name:?}")));
            }
            range.validate(name)?;
        }
        Ok(())
    }

    /// Copy with one named hyperparameter overridden.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let count = || -> Result<usize> {
            if value.is_finite() && value >= 0.0 {
                Ok(value.round() as usize)
            } else {
                Err(Error::Config(format!("{name} = {value} is not a count")))
            }
        };
        match name {
            "learning_rate" => self.learning_rate = value,
            "batch_size" => self.batch_size = count()?,
            "hidden" => self.hidden = count()?,
            "head_hidden" => self.head_hidden = count()?,
            "weight_decay" => self.weight_decay = value,
            "rounds" => self.rounds = count()?,
            "l2" => self.l2 = value,
            "feature_fraction" => self.feature_fraction = value,
            "max_epochs" => self.max_epochs = count()?,
            "patience" => self.patience = count()?,
            other => return Err(Error::Config(format!("unknown hyperparameter {other:?}"))),
        }
        Ok(())
    }
}

/// Per-epoch validation history of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs_run: usize,
    /// Zero-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_score: f64,
    pub history: Vec<f64>,
}

/// Patience counter on a score where larger is better. Only strict improvements reset
/// it.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
    history: Vec<f64>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
            history: Vec::new(),
        }
    }

    /// Records one epoch's score; true when it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        self.history.push(score);
        let improved = self.best.map_or(true, |(_, b)| score > b);
        if improved {
            self.best = Some((epoch, score));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.stale > 0 && self.stale >= self.patience
    }

    pub fn into_log(self) -> TrainLog {
        let (best_epoch, best_score) = self.best.unwrap_or((0, f64::NAN));
        TrainLog {
            epochs_run: self.history.len(),
            best_epoch,
            best_score,
            history: self.history,
        }
    }
}

/// Calls `epoch_score` once per epoch until patience runs out or `max_epochs` is
/// reached.
pub fn run_with_early_stopping(
    max_epochs: usize,
    patience: usize,
    mut epoch_score: impl FnMut(usize) -> Result<f64>,
) -> Result<TrainLog> {
    let mut stopper = EarlyStopping::new(patience);
    for epoch in 0..max_epochs {
        stopper.observe(epoch, epoch_score(epoch)?);
        if stopper.should_stop() {
            break;
        }
    }
    Ok(stopper.into_log())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TrialOutcome {
    Ok {
        validation_accuracy: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        epochs_run: Option<usize>,
    },
    Failed {
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    pub outcome: TrialOutcome,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub model: TrainedModel,
    pub best_trial: usize,
    pub best_validation_accuracy: f64,
    pub trials: Vec<TrialRecord>,
}

/// Trains one model of `family` with exactly `config`, returning it with its
/// validation accuracy and, for the recurrent model, its epoch log.
pub fn train_family(
    train: LabeledSet<'_>,
    validation: LabeledSet<'_>,
    family: Family,
    config: &TrainConfig,
) -> Result<(TrainedModel, f64, Option<TrainLog>)> {
    config.validate()?;
    if validation.is_empty() {
        return Err(Error::Empty("validation set is empty"));
    }
    let (model, log) = match family {
        Family::Stumps => (TrainedModel::Stumps(train_stumps(train, config)?), None),
        Family::BiRnn => {
            let (clf, log) = birnn_train(train, validation, config)?;
            (TrainedModel::BiRnn(clf.snapshot()), Some(log))
        }
    };
    let pred = model.predict(validation.x)?;
    let acc = accuracy(&pred.values, &validation.y.values);
    Ok((model, acc, log))
}

/// Seeded randomized search. Configurations are drawn up front, trained concurrently,
/// and the highest validation accuracy wins with the earliest trial taking ties. A
/// failing trial is logged and skipped; the search fails only if every trial does.
pub fn random_search(
    train: LabeledSet<'_>,
    validation: LabeledSet<'_>,
    family: Family,
    config: &TrainConfig,
) -> Result<SearchResult> {
    config.validate()?;
    if config.search_space.is_empty() {
        return Err(Error::Config(format!("empty search space for {}", family.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let drawn: Vec<(u64, BTreeMap<String, f64>)> = (0..config.search_trials)
        .map(|i| {
            let params = config
                .search_space
                .iter()
                .map(|(name, range)| (name.clone(), range.sample(&mut rng)))
                .collect();
            (config.seed.wrapping_add(i as u64), params)
        })
        .collect();

    let results: Vec<Result<(TrainedModel, f64, Option<TrainLog>)>> = drawn
        .par_iter()
        .map(|(seed, params)| {
            let mut cfg = config.clone();
            cfg.seed = *seed;
            for (name, value) in params {
                cfg.set(name, *value)?;
            }
            train_family(train, validation, family, &cfg)
        })
        .collect();

    let mut trials = Vec::with_capacity(results.len());
    let mut best: Option<(usize, f64, TrainedModel)> = None;
    let mut first_error = None;
    for (index, ((seed, params), result)) in drawn.into_iter().zip(results).enumerate() {
        let outcome = match result {
            Ok((model, acc, log)) => {
                if best.as_ref().map_or(true, |(_, b, _)| acc > *b) {
                    best = Some((index, acc, model));
                }
                TrialOutcome::Ok {
                    validation_accuracy: acc,
                    epochs_run: log.map(|l| l.epochs_run),
                }
            }
            Err(e) => {
                let msg = e.to_string();
                first_error.get_or_insert(e);
                TrialOutcome::Failed { error: msg }
            }
        };
        trials.push(TrialRecord {
            index,
            seed,
            params,
            outcome,
        });
    }
    match best {
        Some((best_trial, best_validation_accuracy, model)) => Ok(SearchResult {
            model,
            best_trial,
            best_validation_accuracy,
            trials,
        }),
        None => Err(first_error.expect("at least one trial ran")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DecisionVector;
    use crate::embed::EmbeddingMatrix;

    #[test]
    fn frozen_run_stops_after_patience() {
        let log = run_with_early_stopping(20, 5, |_| Ok(0.5)).unwrap();
        assert_eq!(log.epochs_run, 6);
        assert_eq!(log.best_epoch, 0);
    }

    #[test]
    fn improving_run_uses_every_epoch() {
        let log = run_with_early_stopping(20, 5, |e| Ok(e as f64)).unwrap();
        assert_eq!(log.epochs_run, 20);
        assert_eq!(log.best_epoch, 19);
    }

    #[test]
    fn late_improvement_resets_patience() {
        let scores = [0.5, 0.5, 0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.9];
        let log = run_with_early_stopping(10, 5, |e| Ok(scores[e])).unwrap();
        assert_eq!(log.epochs_run, 9);
        assert_eq!(log.best_epoch, 3);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.validate().unwrap();
        cfg.patience = 30;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            search_trials: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        assert!(cfg.set("momentum", 0.9).is_err());
        cfg.set("hidden", 7.6).unwrap();
        assert_eq!(cfg.hidden, 8);
    }

    fn line() -> (EmbeddingMatrix, DecisionVector) {
        let xs: Vec<f32> = (0..30).map(|i| i as f32).collect();
        let rows: Vec<Vec<f32>> = xs.iter().map(|&v| vec![v]).collect();
        let ids: Vec<String> = (0..30).map(|i| format!("r{i}")).collect();
        let y = (0..30).map(|i| u8::from(i >= 15)).collect();
        (
            EmbeddingMatrix::from_rows(&rows, ids.clone()).unwrap(),
            DecisionVector::new("t", y, ids).unwrap(),
        )
    }

    #[test]
    fn search_is_deterministic_and_picks_the_best() {
        let (m, y) = line();
        let set = LabeledSet::new(&m, &y).unwrap();
        let mut cfg = TrainConfig::for_family(Family::Stumps);
        cfg.search_trials = 10;
        cfg.search_space = BTreeMap::from([(
            "learning_rate".to_string(),
            ParamRange::Choice { values: vec![0.0, 0.3] },
        )]);
        let a = random_search(set, set, Family::Stumps, &cfg).unwrap();
        let b = random_search(set, set, Family::Stumps, &cfg).unwrap();
        assert_eq!(a.trials, b.trials);
        assert_eq!(a.best_trial, b.best_trial);
        for t in &a.trials {
            if let TrialOutcome::Ok {
                validation_accuracy, ..
            } = t.outcome
            {
                assert!(a.best_validation_accuracy >= validation_accuracy);
            }
        }
        assert_eq!(a.best_validation_accuracy, 1.0);
    }

    #[test]
    fn failures_are_logged() {
        let (m, y) = line();
        let set = LabeledSet::new(&m, &y).unwrap();
        let mut cfg = TrainConfig::for_family(Family::Stumps);
        cfg.search_trials = 6;
        cfg.search_space = BTreeMap::from([(
            "learning_rate".to_string(),
            ParamRange::Choice { values: vec![0.3, 5.0] },
        )]);
        let r = random_search(set, set, Family::Stumps, &cfg).unwrap();
        assert!(r
            .trials
            .iter()
            .any(|t| matches!(t.outcome, TrialOutcome::Failed { .. })));
    }
}
