//! Per-modality linear-softmax classifier trained by full-batch gradient
//! descent on the L2-regularized mean cross-entropy.
//!
//! Each modality gets its own head with a `classes x (dim + 1)` weight matrix
//! stored row-major; the last column of every row is the bias. The bias is
//! not regularized.

use serde::Serialize;
use thiserror::Error;

use crate::rng::{stream, SimRng};
use crate::types::{ClassDistribution, LabeledSet, Modality};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("class {0} has no training samples")]
    EmptyClass(usize),
    #[error("training needs at least {classes} samples, got {got}")]
    TooFewSamples { got: usize, classes: usize },
    #[error("loss became non-finite at epoch {epoch} ({modality} head)")]
    Degenerate { epoch: usize, modality: Modality },
    #[error("{modality} features have dimension {got}, model expects {expected}")]
    DimensionMismatch {
        modality: Modality,
        got: usize,
        expected: usize,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("malformed model record: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 200,
            l2: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 10.0) {
            return Err(ClassifierError::InvalidConfig(format!(
                "learning_rate must be in (0, 10], got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.epochs > 100_000 {
            return Err(ClassifierError::InvalidConfig(format!(
                "epochs must be in [1, 100000], got {}",
                self.epochs
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(ClassifierError::InvalidConfig(format!(
                "l2 must be non-negative, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

/// Weights of one modality's softmax head.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearHead {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![0.0; classes * (dim + 1)],
        }
    }

    pub fn from_weights(classes: usize, dim: usize, weights: Vec<f64>) -> Result<Self, ClassifierError> {
        if weights.len() != classes * (dim + 1) {
            return Err(ClassifierError::Malformed(format!(
                "expected {} weights, got {}",
                classes * (dim + 1),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ClassifierError::Malformed("non-finite weight".into()));
        }
        Ok(Self { classes, dim, weights })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `classes x (dim + 1)`, bias last in each row.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn scores_into(&self, x: &[f64], out: &mut [f64]) {
        let stride = self.dim + 1;
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.weights[j * stride..(j + 1) * stride];
            *o = row[self.dim] + dot(&row[..self.dim], x);
        }
    }

    pub fn predict(&self, x: &[f64]) -> ClassDistribution {
        let mut scores = vec![0.0; self.classes];
        self.scores_into(x, &mut scores);
        softmax_in_place(&mut scores);
        ClassDistribution::from_raw(&scores).expect("softmax output is a valid distribution")
    }
}

/// Immutable trained model, one head per modality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSnapshot {
    version: u64,
    head_f: LinearHead,
    head_s: LinearHead,
}

/// Fixed header preceding the weights in the binary record.
pub const SNAPSHOT_HEADER_BYTES: u64 = 16;

impl ModelSnapshot {
    pub fn new(version: u64, head_f: LinearHead, head_s: LinearHead) -> Result<Self, ClassifierError> {
        if head_f.classes != head_s.classes {
            return Err(ClassifierError::Malformed(format!(
                "heads disagree on class count ({} vs {})",
                head_f.classes, head_s.classes
            )));
        }
        Ok(Self {
            version,
            head_f,
            head_s,
        })
    }

    /// All-zero model; predicts the uniform distribution everywhere.
    pub fn zeros(classes: usize, dim_f: usize, dim_s: usize) -> Self {
        Self {
            version: 0,
            head_f: LinearHead::zeros(classes, dim_f),
            head_s: LinearHead::zeros(classes, dim_s),
        }
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn classes(&self) -> usize {
        self.head_f.classes
    }

    pub fn head(&self, modality: Modality) -> &LinearHead {
        match modality {
            Modality::F => &self.head_f,
            Modality::S => &self.head_s,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.head_f.weights.len() + self.head_s.weights.len()
    }

    /// Size of the binary record: 8 bytes per weight plus a 16-byte header.
    pub fn size_bytes(&self) -> u64 {
        8 * self.weight_count() as u64 + SNAPSHOT_HEADER_BYTES
    }

    /// Binary record, little-endian:
    /// `version: u64, classes: u16, dim_f: u16, dim_s: u16, reserved: u16`,
    /// then `weights_f` and `weights_s` as row-major f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size_bytes() as usize);
        out.extend_from_slice(&self.version.to_le_bytes());
        for v in [self.classes(), self.head_f.dim, self.head_s.dim, 0] {
            out.extend_from_slice(&(v as u16).to_le_bytes());
        }
        for w in self.head_f.weights.iter().chain(&self.head_s.weights) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        if bytes.len() < SNAPSHOT_HEADER_BYTES as usize {
            return Err(ClassifierError::Malformed("record shorter than header".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
        let version = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let (classes, dim_f, dim_s) = (u16_at(8), u16_at(10), u16_at(12));
        let nf = classes * (dim_f + 1);
        let ns = classes * (dim_s + 1);
        let body = &bytes[SNAPSHOT_HEADER_BYTES as usize..];
        if body.len() != 8 * (nf + ns) {
            return Err(ClassifierError::Malformed(format!(
                "expected {} weight bytes, got {}",
                8 * (nf + ns),
                body.len()
            )));
        }
        let weights: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let head_f = LinearHead::from_weights(classes, dim_f, weights[..nf].to_vec())?;
        let head_s = LinearHead::from_weights(classes, dim_s, weights[nf..].to_vec())?;
        Self::new(version, head_f, head_s)
    }
}

fn check_dim(model: &ModelSnapshot, modality: Modality, x: &[f64]) -> Result<(), ClassifierError> {
    let expected = model.head(modality).dim;
    if x.len() != expected {
        return Err(ClassifierError::DimensionMismatch {
            modality,
            got: x.len(),
            expected,
        });
    }
    Ok(())
}

pub fn predict(model: &ModelSnapshot, modality: Modality, x: &[f64]) -> Result<ClassDistribution, ClassifierError> {
    check_dim(model, modality, x)?;
    Ok(model.head(modality).predict(x))
}

pub fn predict_f(model: &ModelSnapshot, feat_f: &[f64]) -> Result<ClassDistribution, ClassifierError> {
    predict(model, Modality::F, feat_f)
}

pub fn predict_s(model: &ModelSnapshot, feat_s: &[f64]) -> Result<ClassDistribution, ClassifierError> {
    predict(model, Modality::S, feat_s)
}

/// Mean of the two per-modality distributions.
pub fn predict_fused(
    model: &ModelSnapshot,
    feat_f: &[f64],
    feat_s: &[f64],
) -> Result<ClassDistribution, ClassifierError> {
    let df = predict_f(model, feat_f)?;
    let ds = predict_s(model, feat_s)?;
    Ok(ClassDistribution::mean(&df, &ds).expect("heads share the class count"))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

/// Training data for one head in a contiguous row-major matrix.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    labels: Vec<usize>,
}

impl DesignMatrix {
    pub fn from_labeled(labeled: &LabeledSet, modality: Modality) -> Self {
        let dim = match modality {
            Modality::F => labeled.schema().dim_f,
            Modality::S => labeled.schema().dim_s,
        };
        let mut data = Vec::with_capacity(labeled.len() * dim);
        for s in labeled.samples() {
            data.extend_from_slice(s.features(modality));
        }
        Self {
            rows: labeled.len(),
            dim,
            data,
            labels: labeled.labels().to_vec(),
        }
    }

    pub fn new(dim: usize, data: Vec<f64>, labels: Vec<usize>) -> Self {
        assert_eq!(data.len(), dim * labels.len());
        Self {
            rows: labels.len(),
            dim,
            data,
            labels,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Regularized mean cross-entropy and its gradient at `head`.
///
/// `loss = -(1/n) sum_i ln p_i[y_i] + (l2/2) * sum(non-bias w^2)`.
pub fn loss_and_gradient(head: &LinearHead, data: &DesignMatrix, l2: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; head.weights.len()];
    let loss = loss_grad_into(head, data, l2, &mut grad);
    (loss, grad)
}

fn loss_grad_into(head: &LinearHead, data: &DesignMatrix, l2: f64, grad: &mut [f64]) -> f64 {
    let c = head.classes;
    let d = head.dim;
    let stride = d + 1;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut probs = vec![0.0; c];
    let mut nll = 0.0;
    for i in 0..data.rows {
        let x = data.row(i);
        let y = data.labels[i];
        head.scores_into(x, &mut probs);
        let score_y = probs[y];
        let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            total += *p;
        }
        // log-sum-exp form keeps the loss finite for confident wrong scores
        nll += max + total.ln() - score_y;
        for (j, p) in probs.iter_mut().enumerate() {
            let r = *p / total - if j == y { 1.0 } else { 0.0 };
            if r == 0.0 {
                continue;
            }
            let g = &mut grad[j * stride..(j + 1) * stride];
            for (gk, xk) in g[..d].iter_mut().zip(x) {
                *gk += r * xk;
            }
            g[d] += r;
        }
    }
    let n = data.rows.max(1) as f64;
    let mut penalty = 0.0;
    for j in 0..c {
        let w = &head.weights[j * stride..j * stride + d];
        let g = &mut grad[j * stride..j * stride + d];
        for (gk, wk) in g.iter_mut().zip(w) {
            *gk = *gk / n + l2 * wk;
            penalty += wk * wk;
        }
        grad[j * stride + d] /= n;
    }
    nll / n + 0.5 * l2 * penalty
}

/// Loss only (used by finite differences).
pub fn loss(head: &LinearHead, data: &DesignMatrix, l2: f64) -> f64 {
    loss_and_gradient(head, data, l2).0
}

/// Fits one head from zero weights. Returns the head and the loss recorded
/// before each update (`epochs` entries) followed by the final loss.
pub fn fit_head(
    data: &DesignMatrix,
    classes: usize,
    cfg: &TrainConfig,
    modality: Modality,
) -> Result<(LinearHead, Vec<f64>), ClassifierError> {
    let mut head = LinearHead::zeros(classes, data.dim);
    let mut grad = vec![0.0; head.weights.len()];
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let l = loss_grad_into(&head, data, cfg.l2, &mut grad);
        if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ClassifierError::Degenerate { epoch, modality });
        }
        history.push(l);
        if epoch == cfg.epochs {
            break;
        }
        for (w, g) in head.weights.iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * g;
        }
    }
    Ok((head, history))
}

fn check_trainable(labeled: &LabeledSet) -> Result<(), ClassifierError> {
    let classes = labeled.schema().classes;
    if labeled.len() < classes {
        return Err(ClassifierError::TooFewSamples {
            got: labeled.len(),
            classes,
        });
    }
    if let Some(empty) = labeled.class_counts().iter().position(|&n| n == 0) {
        return Err(ClassifierError::EmptyClass(empty));
    }
    Ok(())
}

/// Trains both heads from zero weights. The returned snapshot has version 1;
/// callers that retrain bump it with [`ModelSnapshot::with_version`].
pub fn train(labeled: &LabeledSet, cfg: &TrainConfig) -> Result<ModelSnapshot, ClassifierError> {
    cfg.validate()?;
    check_trainable(labeled)?;
    let classes = labeled.schema().classes;
    let (head_f, _) = fit_head(&DesignMatrix::from_labeled(labeled, Modality::F), classes, cfg, Modality::F)?;
    let (head_s, _) = fit_head(&DesignMatrix::from_labeled(labeled, Modality::S), classes, cfg, Modality::S)?;
    ModelSnapshot::new(1, head_f, head_s)
}

/// Central-difference gradient of `loss` at `head`.
pub fn numerical_gradient(head: &LinearHead, data: &DesignMatrix, l2: f64, h: f64) -> Vec<f64> {
    let mut probe = head.clone();
    (0..head.weights.len())
        .map(|k| {
            let w0 = probe.weights[k];
            probe.weights[k] = w0 + h;
            let up = loss(&probe, data, l2);
            probe.weights[k] = w0 - h;
            let down = loss(&probe, data, l2);
            probe.weights[k] = w0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest absolute difference between the analytic gradient and central
/// finite differences (`h = 1e-5`) over every weight of both heads.
///
/// Each head is probed at zero weights and at a random point drawn from
/// `N(0, 0.5^2)` seeded by `cfg.seed`.
pub fn gradient_check(labeled: &LabeledSet, cfg: &TrainConfig) -> f64 {
    const H: f64 = 1e-5;
    let classes = labeled.schema().classes;
    let mut rng = SimRng::new(cfg.seed, stream::GRADIENT_CHECK);
    let mut worst: f64 = 0.0;
    for modality in [Modality::F, Modality::S] {
        let data = DesignMatrix::from_labeled(labeled, modality);
        let zero = LinearHead::zeros(classes, data.dim);
        let mut random = zero.clone();
        random.weights.iter_mut().for_each(|w| *w = 0.5 * rng.normal());
        for head in [zero, random] {
            let (_, analytic) = loss_and_gradient(&head, &data, cfg.l2);
            let numeric = numerical_gradient(&head, &data, cfg.l2, H);
            for (a, b) in analytic.iter().zip(&numeric) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Fraction of `labeled` whose argmax under `model`'s `modality` head matches.
pub fn head_accuracy(model: &ModelSnapshot, labeled: &LabeledSet, modality: Modality) -> f64 {
    if labeled.is_empty() {
        return 0.0;
    }
    let hits = labeled
        .iter()
        .filter(|(s, y)| model.head(modality).predict(s.features(modality)).argmax() == *y)
        .count();
    hits as f64 / labeled.len() as f64
}
