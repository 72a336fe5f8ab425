//! Bidirectional tanh recurrent classifier over the sequence of per-field embeddings.
//!
//! The forward cell reads the field blocks in canonical order, the backward cell in
//! reverse. Their final hidden states are concatenated and passed through
//! `linear(2h -> h2)`, ReLU, `linear(h2 -> 2)` and log-softmax. Gradients are derived
//! by hand (backpropagation through time) and trained with Adam.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::search::{EarlyStopping, TrainConfig, TrainLog};
use super::{accuracy, LabeledSet};
use crate::dataset::{DecisionVector, Field};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const SEQ_LEN: usize = Field::ALL.len();

const TENSOR_NAMES: [&str; 10] = ["wx_f", "wh_f", "b_f", "wx_b", "wh_b", "b_b", "w1", "b1", "w2", "b2"];

/// Offsets of the named tensors inside one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    input: usize,
    hidden: usize,
    head: usize,
    shapes: [(usize, usize); 10],
    offsets: [usize; 11],
}

impl Layout {
    fn new(input: usize, hidden: usize, head: usize) -> Self {
        let (d, h, h2) = (input, hidden, head);
        let shapes = [
            (h, d),
            (h, h),
            (h, 1),
            (h, d),
            (h, h),
            (h, 1),
            (h2, 2 * h),
            (h2, 1),
            (2, h2),
            (2, 1),
        ];
        let mut offsets = [0; 11];
        for (t, (r, c)) in shapes.iter().enumerate() {
            offsets[t + 1] = offsets[t] + r * c;
        }
        Layout {
            input,
            hidden,
            head,
            shapes,
            offsets,
        }
    }

    fn len(&self) -> usize {
        self.offsets[10]
    }

    fn range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    fn index_of(name: &str) -> Option<usize> {
        TENSOR_NAMES.iter().position(|n| *n == name)
    }
}

// Tensor slots.
const WX_F: usize = 0;
const WH_F: usize = 1;
const B_F: usize = 2;
const WX_B: usize = 3;
const WH_B: usize = 4;
const B_B: usize = 5;
const W1: usize = 6;
const B1: usize = 7;
const W2: usize = 8;
const B2: usize = 9;

/// A fitted or freshly initialized bidirectional recurrent classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct BiRnnClassifier {
    layout: Layout,
    params: Vec<f64>,
    pub seed: u64,
}

/// Gradient of the loss with respect to every parameter, laid out like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct BiRnnGradients {
    layout: Layout,
    values: Vec<f64>,
}

impl BiRnnGradients {
    /// Mutable view of one named tensor (`wx_f`, `wh_f`, `b_f`, `wx_b`, `wh_b`, `b_b`,
    /// `w1`, `b1`, `w2`, `b2`), row-major.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let t = Layout::index_of(name)?;
        let r = self.layout.range(t);
        Some(&mut self.values[r])
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let t = Layout::index_of(name)?;
        Some(&self.values[self.layout.range(t)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Serialized weights: one base64 blob of little-endian f32 per tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiRnnSnapshot {
    pub input_dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub seed: u64,
    pub tensors: Vec<TensorBlob>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorBlob {
    pub name: String,
    pub shape: [usize; 2],
    pub data: String,
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    hf: Vec<Vec<f64>>,
    hb: Vec<Vec<f64>>,
    concat: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    log_probs: [f64; 2],
}

fn matvec_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn log_softmax(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    [z[0] - lse, z[1] - lse]
}

impl BiRnnClassifier {
    /// Xavier-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden: usize, head_hidden: usize, seed: u64) -> Result<Self> {
        let mut clf = Self::zeros(input_dim, hidden, head_hidden)?;
        clf.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in [WX_F, WH_F, WX_B, WH_B, W1, W2] {
            let (rows, cols) = clf.layout.shapes[t];
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            for w in &mut clf.params[clf.layout.range(t)] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(clf)
    }

    /// Every weight and bias zero.
    pub fn zeros(input_dim: usize, hidden: usize, head_hidden: usize) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || head_hidden == 0 {
            return Err(Error::Config("recurrent classifier dimensions must be positive".into()));
        }
        let layout = Layout::new(input_dim, hidden, head_hidden);
        Ok(BiRnnClassifier {
            params: vec![0.0; layout.len()],
            layout,
            seed: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn head_hidden(&self) -> usize {
        self.layout.head
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Named tensor, row-major.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let t = Layout::index_of(name)?;
        Some(&self.params[self.layout.range(t)])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let t = Layout::index_of(name)?;
        let r = self.layout.range(t);
        Some(&mut self.params[r])
    }

    fn t(&self, t: usize) -> &[f64] {
        &self.params[self.layout.range(t)]
    }

    fn check_sequence(&self, seq: &[&[f32]]) -> Result<()> {
        if seq.len() != SEQ_LEN {
            return Err(Error::LengthMismatch {
                left: seq.len(),
                right: SEQ_LEN,
            });
        }
        for step in seq {
            if step.len() != self.layout.input {
                return Err(Error::Dimension {
                    expected: self.layout.input,
                    found: step.len(),
                });
            }
        }
        Ok(())
    }

    fn forward_trace(&self, seq: &[Vec<f64>]) -> Trace {
        let (d, h, h2) = (self.layout.input, self.layout.hidden, self.layout.head);
        let run = |wx: usize, wh: usize, b: usize, order: &mut dyn Iterator<Item = usize>| {
            let mut states = vec![vec![0.0; h]];
            for s in order {
                let prev = states.last().unwrap();
                let mut z = self.t(b).to_vec();
                matvec_acc(self.t(wx), d, &seq[s], &mut z);
                matvec_acc(self.t(wh), h, prev, &mut z);
                states.push(z.into_iter().map(f64::tanh).collect());
            }
            states
        };
        let hf = run(WX_F, WH_F, B_F, &mut (0..SEQ_LEN));
        let hb = run(WX_B, WH_B, B_B, &mut (0..SEQ_LEN).rev());
        let mut concat = hf[SEQ_LEN].clone();
        concat.extend_from_slice(&hb[SEQ_LEN]);

        let mut z1 = self.t(B1).to_vec();
        matvec_acc(self.t(W1), 2 * h, &concat, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
        let mut z2 = self.t(B2).to_vec();
        matvec_acc(self.t(W2), h2, &a1, &mut z2);
        Trace {
            hf,
            hb,
            concat,
            z1,
            a1,
            log_probs: log_softmax([z2[0], z2[1]]),
        }
    }

    /// Adds d(-log p[label]) / d(params) into `grad`; returns the loss.
    fn backward(&self, seq: &[Vec<f64>], label: u8, grad: &mut [f64]) -> f64 {
        let (d, h, h2) = (self.layout.input, self.layout.hidden, self.layout.head);
        let tr = self.forward_trace(seq);
        let lay = &self.layout;
        let y = label as usize;
        let probs = [tr.log_probs[0].exp(), tr.log_probs[1].exp()];
        let dz2 = [probs[0] - f64::from(y == 0), probs[1] - f64::from(y == 1)];

        let w2 = self.t(W2);
        let mut da1 = vec![0.0; h2];
        for c in 0..2 {
            grad[lay.offsets[B2] + c] += dz2[c];
            for j in 0..h2 {
                grad[lay.offsets[W2] + c * h2 + j] += dz2[c] * tr.a1[j];
                da1[j] += w2[c * h2 + j] * dz2[c];
            }
        }
        let dz1: Vec<f64> = da1
            .iter()
            .zip(&tr.z1)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        let w1 = self.t(W1);
        let mut dconcat = vec![0.0; 2 * h];
        for (r, &g) in dz1.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[lay.offsets[B1] + r] += g;
            let gw = &mut grad[lay.offsets[W1] + r * 2 * h..lay.offsets[W1] + (r + 1) * 2 * h];
            for (c, slot) in gw.iter_mut().enumerate() {
                *slot += g * tr.concat[c];
                dconcat[c] += w1[r * 2 * h + c] * g;
            }
        }

        let mut through_time = |wx: usize, wh: usize, b: usize, states: &[Vec<f64>], order: &[usize], top: &[f64]| {
            let whm = self.t(wh);
            let mut dh = top.to_vec();
            for step in (0..SEQ_LEN).rev() {
                let x = &seq[order[step]];
                let (prev, cur) = (&states[step], &states[step + 1]);
                let da: Vec<f64> = dh.iter().zip(cur).map(|(g, s)| g * (1.0 - s * s)).collect();
                let mut next = vec![0.0; h];
                for (r, &g) in da.iter().enumerate() {
                    grad[lay.offsets[b] + r] += g;
                    let gx = &mut grad[lay.offsets[wx] + r * d..lay.offsets[wx] + (r + 1) * d];
                    for (slot, xv) in gx.iter_mut().zip(x) {
                        *slot += g * xv;
                    }
                    let gh = &mut grad[lay.offsets[wh] + r * h..lay.offsets[wh] + (r + 1) * h];
                    for (c, slot) in gh.iter_mut().enumerate() {
                        *slot += g * prev[c];
                        next[c] += whm[r * h + c] * g;
                    }
                }
                dh = next;
            }
        };
        let fwd: Vec<usize> = (0..SEQ_LEN).collect();
        let bwd: Vec<usize> = (0..SEQ_LEN).rev().collect();
        through_time(WX_F, WH_F, B_F, &tr.hf, &fwd, &dconcat[..h]);
        through_time(WX_B, WH_B, B_B, &tr.hb, &bwd, &dconcat[h..]);

        -tr.log_probs[y]
    }

    fn loss(&self, seq: &[Vec<f64>], label: u8) -> f64 {
        -self.forward_trace(seq).log_probs[label as usize]
    }

    /// Log-probabilities for one 5-step sequence.
    pub fn forward(&self, seq: &[&[f32]]) -> Result<[f64; 2]> {
        self.check_sequence(seq)?;
        Ok(self.forward_trace(&widen(seq)).log_probs)
    }

    /// Analytic gradient of the negative log-likelihood for one example.
    pub fn gradients(&self, seq: &[&[f32]], label: u8) -> Result<(f64, BiRnnGradients)> {
        self.check_sequence(seq)?;
        let mut values = vec![0.0; self.params.len()];
        let loss = self.backward(&widen(seq), label, &mut values);
        Ok((
            loss,
            BiRnnGradients {
                layout: self.layout.clone(),
                values,
            },
        ))
    }

    fn check_matrix(&self, x: &EmbeddingMatrix) -> Result<()> {
        if x.n_fields() != SEQ_LEN {
            return Err(Error::LengthMismatch {
                left: x.n_fields(),
                right: SEQ_LEN,
            });
        }
        if x.dim_per_field() != self.layout.input {
            return Err(Error::Dimension {
                expected: self.layout.input,
                found: x.dim_per_field(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, x: &EmbeddingMatrix) -> Result<DecisionVector> {
        self.check_matrix(x)?;
        let values = (0..x.n_rows())
            .map(|i| {
                let lp = self.forward_trace(&row_sequence(x, i)).log_probs;
                u8::from(lp[1] > lp[0])
            })
            .collect();
        DecisionVector::new("model:birnn", values, x.index_order().to_vec())
    }

    fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    pub fn snapshot(&self) -> BiRnnSnapshot {
        let tensors = (0..TENSOR_NAMES.len())
            .map(|t| {
                let (r, c) = self.layout.shapes[t];
                let bytes: Vec<u8> = self.t(t).iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
                TensorBlob {
                    name: TENSOR_NAMES[t].to_string(),
                    shape: [r, c],
                    data: B64.encode(bytes),
                }
            })
            .collect();
        BiRnnSnapshot {
            input_dim: self.layout.input,
            hidden: self.layout.hidden,
            head_hidden: self.layout.head,
            seed: self.seed,
            tensors,
        }
    }

    pub fn from_snapshot(snap: &BiRnnSnapshot) -> Result<Self> {
        let mut clf = Self::zeros(snap.input_dim, snap.hidden, snap.head_hidden)?;
        clf.seed = snap.seed;
        if snap.tensors.len() != TENSOR_NAMES.len() {
            return Err(Error::Format(format!("expected {} weight tensors", TENSOR_NAMES.len())));
        }
        for blob in &snap.tensors {
            let t = Layout::index_of(&blob.name)
                .ok_or_else(|| Error::Format(format!("unknown weight tensor {:?}", blob.name)))?;
            let (r, c) = clf.layout.shapes[t];
            if blob.shape != [r, c] {
                return Err(Error::Format(format!(
                    "tensor {} has shape {:?}, expected [{r}, {c}]",
                    blob.name, blob.shape
                )));
            }
            let bytes = B64
                .decode(&blob.data)
                .map_err(|e| Error::Format(format!("tensor {}: {e}", blob.name)))?;
            if bytes.len() != r * c * 4 {
                return Err(Error::Format(format!("tensor {} has {} bytes", blob.name, bytes.len())));
            }
            let range = clf.layout.range(t);
            for (slot, chunk) in clf.params[range].iter_mut().zip(bytes.chunks_exact(4)) {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::Format(format!("tensor {} holds a non-finite value", blob.name)));
                }
                *slot = v as f64;
            }
        }
        Ok(clf)
    }
}

fn widen(seq: &[&[f32]]) -> Vec<Vec<f64>> {
    seq.iter().map(|s| s.iter().map(|&v| v as f64).collect()).collect()
}

fn row_sequence(x: &EmbeddingMatrix, i: usize) -> Vec<Vec<f64>> {
    (0..SEQ_LEN)
        .map(|f| x.block(i, f).iter().map(|&v| v as f64).collect())
        .collect()
}

/// Log-probabilities of `clf` on a sequence of exactly five field embeddings.
pub fn birnn_forward(clf: &BiRnnClassifier, seq: &[&[f32]]) -> Result<[f64; 2]> {
    clf.forward(seq)
}

/// Largest relative error between analytic and central-difference gradients over every
/// parameter, `|ga - gn| / max(|ga| + |gn|, 1e-8)`.
pub fn gradient_check(clf: &BiRnnClassifier, seq: &[&[f32]], label: u8) -> Result<f64> {
    gradient_check_with(clf, seq, label, |_| {})
}

/// As [`gradient_check`], with `tamper` applied to the analytic gradient first.
pub fn gradient_check_with(
    clf: &BiRnnClassifier,
    seq: &[&[f32]],
    label: u8,
    tamper: impl FnOnce(&mut BiRnnGradients),
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let (_, mut analytic) = clf.gradients(seq, label)?;
    tamper(&mut analytic);
    let wide = widen(seq);
    let mut probe = clf.clone();
    let mut worst = 0f64;
    for p in 0..probe.params.len() {
        let orig = probe.params[p];
        probe.params[p] = orig + STEP;
        let up = probe.loss(&wide, label);
        probe.params[p] = orig - STEP;
        let down = probe.loss(&wide, label);
        probe.params[p] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let ga = analytic.values[p];
        let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch Adam on negative log-likelihood with early stopping on validation
/// accuracy. Returns the best-validation snapshot (weights rounded to f32) and the
/// epoch log.
pub fn birnn_train(
    train: LabeledSet<'_>,
    validation: LabeledSet<'_>,
    config: &TrainConfig,
) -> Result<(BiRnnClassifier, TrainLog)> {
    if validation.is_empty() {
        return Err(Error::Empty("validation set is empty"));
    }
    if train.is_empty() {
        return Err(Error::Empty("training set is empty"));
    }
    train.require_both_classes()?;
    config.validate()?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut clf = BiRnnClassifier::new(train.x.dim_per_field(), config.hidden, config.head_hidden, config.seed)?;
    clf.check_matrix(train.x)?;
    clf.check_matrix(validation.x)?;

    let train_seqs: Vec<Vec<Vec<f64>>> = (0..train.len()).map(|i| row_sequence(train.x, i)).collect();
    let val_seqs: Vec<Vec<Vec<f64>>> = (0..validation.len()).map(|i| row_sequence(validation.x, i)).collect();
    let ytr = &train.y.values;
    let yval = &validation.y.values;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(clf.params.len());
    let mut grad = vec![0.0; clf.params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = clf.clone();
    let mut stopper = EarlyStopping::new(config.patience);

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                clf.backward(&train_seqs[i], ytr[i], &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            for (g, p) in grad.iter_mut().zip(&clf.params) {
                *g = *g * scale + config.weight_decay * p;
            }
            adam.step(&mut clf.params, &grad, config.learning_rate);
        }
        if clf.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Precondition("recurrent classifier weights diverged".into()));
        }
        let pred: Vec<u8> = val_seqs
            .iter()
            .map(|s| {
                let lp = clf.forward_trace(s).log_probs;
                u8::from(lp[1] > lp[0])
            })
            .collect();
        if stopper.observe(epoch, accuracy(&pred, yval)) {
            best = clf.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }

    best.round_to_f32();
    Ok((best, stopper.into_log()))
}
