use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledSet, TrainConfig};
use crate::dataset::DecisionVector;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Depth-1 tree: `x[feature] < threshold` goes left. Leaf values are already scaled
/// by the step that was accepted for the round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

impl Stump {
    fn apply(&self, row: &[f32]) -> f64 {
        if (row[self.feature] as f64) < self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

/// Additive log-odds model built from stumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedStumps {
    pub dim: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub rounds: usize,
    pub l2: f64,
    pub stumps: Vec<Stump>,
    /// Mean training log-loss before the first round and after each kept round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_loss: Vec<f64>,
}

impl BoostedStumps {
    pub fn decision_function(&self, row: &[f32]) -> f64 {
        self.base_score + self.stumps.iter().map(|s| s.apply(row)).sum::<f64>()
    }

    pub fn predict_proba(&self, row: &[f32]) -> f64 {
        sigmoid(self.decision_function(row))
    }

    pub fn predict(&self, x: &EmbeddingMatrix) -> Result<DecisionVector> {
        if x.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: x.dim(),
            });
        }
        let values = x.rows().map(|r| u8::from(self.decision_function(r) >= 0.0)).collect();
        DecisionVector::new("model:gbstumps", values, x.index_order().to_vec())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(-m)) without overflow, where m is the signed margin.
fn log_loss(score: f64, y: u8) -> f64 {
    let m = if y == 1 { score } else { -score };
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

fn mean_loss(scores: &[f64], y: &[u8]) -> f64 {
    scores.iter().zip(y).map(|(&s, &t)| log_loss(s, t)).sum::<f64>() / y.len() as f64
}

struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

const MIN_GAIN: f64 = 1e-12;
const MAX_HALVINGS: usize = 30;

/// Newton-boosted stumps on logistic loss.
///
/// Each round picks the split with the largest second-order gain (lowest feature index
/// on ties), sets leaf values `-G / (H + l2)` and scales them by the learning rate. If a
/// round would raise the training loss the step is halved until it does not, so the
/// loss history never increases. Training stops early once no split has positive gain.
pub fn train_stumps(train: LabeledSet<'_>, config: &TrainConfig) -> Result<BoostedStumps> {
    let (x, y) = (train.x, &train.y.values);
    let n = train.len();
    if n < 2 {
        return Err(Error::Empty("boosted stumps need at least two training rows"));
    }
    train.require_both_classes()?;
    let lr = config.learning_rate;
    if !(0.0..=1.0).contains(&lr) {
        return Err(Error::Config(format!("learning rate {lr} outside [0, 1]")));
    }
    if config.l2.is_nan() || config.l2 < 0.0 {
        return Err(Error::Config("l2 must be nonnegative".into()));
    }
    if !(config.feature_fraction > 0.0 && config.feature_fraction <= 1.0) {
        return Err(Error::Config("feature_fraction must be in (0, 1]".into()));
    }
    let dim = x.dim();
    let l2 = config.l2;

    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let rate = pos / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();

    // Row order sorted by value, per feature.
    let order: Vec<Vec<u32>> = (0..dim)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x.row(a as usize)[f].total_cmp(&x.row(b as usize)[f]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let sorted_vals: Vec<Vec<f32>> = order
        .iter()
        .enumerate()
        .map(|(f, idx)| idx.iter().map(|&i| x.row(i as usize)[f]).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let per_round = ((dim as f64 * config.feature_fraction).ceil() as usize).clamp(1, dim);

    let mut scores = vec![base_score; n];
    let mut loss = mean_loss(&scores, y);
    let mut train_loss = vec![loss];
    let mut stumps = Vec::new();
    let mut grad = vec![0f64; n];
    let mut hess = vec![0f64; n];

    for _ in 0..config.rounds {
        if lr == 0.0 {
            break;
        }
        for i in 0..n {
            let p = sigmoid(scores[i]);
            grad[i] = p - y[i] as f64;
            hess[i] = p * (1.0 - p);
        }
        let g_total: f64 = grad.iter().sum();
        let h_total: f64 = hess.iter().sum();
        let parent = g_total * g_total / (h_total + l2);

        let mut features: Vec<usize> = if per_round == dim {
            (0..dim).collect()
        } else {
            sample(&mut rng, dim, per_round).into_vec()
        };
        features.sort_unstable();

        let mut best: Option<Split> = None;
        for &f in &features {
            let idx = &order[f];
            let vals = &sorted_vals[f];
            let (mut gl, mut hl) = (0f64, 0f64);
            for w in 0..n - 1 {
                let i = idx[w] as usize;
                gl += grad[i];
                hl += hess[i];
                let (here, next) = (vals[w], vals[w + 1]);
                if here == next {
                    continue;
                }
                let (gr, hr) = (g_total - gl, h_total - hl);
                let gain = gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent;
                if best.as_ref().map_or(true, |b| gain > b.gain) {
                    best = Some(Split {
                        gain,
                        feature: f,
                        threshold: (here as f64 + next as f64) / 2.0,
                        left: -gl / (hl + l2),
                        right: -gr / (hr + l2),
                    });
                }
            }
        }
        let Some(split) = best.filter(|b| b.gain > MIN_GAIN) else {
            break;
        };

        let goes_left: Vec<bool> = (0..n)
            .map(|i| (x.row(i)[split.feature] as f64) < split.threshold)
            .collect();
        let mut step = lr;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = scores
                .iter()
                .zip(&goes_left)
                .map(|(&s, &l)| s + step * if l { split.left } else { split.right })
                .collect();
            let trial_loss = mean_loss(&trial, y);
            if trial_loss <= loss {
                accepted = Some((trial, trial_loss));
                break;
            }
            step /= 2.0;
        }
        let Some((trial, trial_loss)) = accepted else {
            break;
        };
        scores = trial;
        loss = trial_loss;
        train_loss.push(loss);
        stumps.push(Stump {
            feature: split.feature,
            threshold: split.threshold,
            left: step * split.left,
            right: step * split.right,
        });
    }

    Ok(BoostedStumps {
        dim,
        base_score,
        learning_rate: lr,
        rounds: config.rounds,
        l2,
        stumps,
        train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::accuracy;

    fn line(xs: &[f32], ys: &[u8]) -> (EmbeddingMatrix, DecisionVector) {
        let rows: Vec<Vec<f32>> = xs.iter().map(|&v| vec![v]).collect();
        let ids: Vec<String> = (0..xs.len()).map(|i| format!("r{i}")).collect();
        let m = EmbeddingMatrix::from_rows(&rows, ids.clone()).unwrap();
        (m, DecisionVector::new("t", ys.to_vec(), ids).unwrap())
    }

    fn cfg(rounds: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            rounds,
            learning_rate: lr,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_line() {
        let (m, y) = line(&[0.0, 1.0, 2.0, 3.0], &[0, 0, 1, 1]);
        let model = train_stumps(LabeledSet::new(&m, &y).unwrap(), &cfg(50, 0.3)).unwrap();
        assert_eq!(accuracy(&model.predict(&m).unwrap().values, &y.values), 1.0);
        assert_eq!(model.stumps[0].threshold, 1.5);
    }

    #[test]
    fn single_class_rejected() {
        let (m, y) = line(&[0.0, 1.0, 2.0], &[1, 1, 1]);
        let err = train_stumps(LabeledSet::new(&m, &y).unwrap(), &cfg(5, 0.3)).unwrap_err();
        assert!(matches!(err, Error::SingleClass(1)));
    }

    #[test]
    fn loss_never_increases_and_deterministic() {
        let xs: Vec<f32> = (0..40).map(|i| ((i * 37) % 17) as f32 * 0.3).collect();
        let ys: Vec<u8> = (0..40).map(|i| u8::from((i * 7) % 5 < 2)).collect();
        let (m, y) = line(&xs, &ys);
        let set = LabeledSet::new(&m, &y).unwrap();
        let a = train_stumps(set, &cfg(60, 1.0)).unwrap();
        for w in a.train_loss.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let b = train_stumps(set, &cfg(60, 1.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_learning_rate_keeps_base_score() {
        let (m, y) = line(&[0.0, 1.0, 2.0, 3.0], &[0, 0, 1, 1]);
        let model = train_stumps(LabeledSet::new(&m, &y).unwrap(), &cfg(10, 0.0)).unwrap();
        assert!(model.stumps.is_empty());
        assert_eq!(model.base_score, 0.0);
    }
}
