//! Metric-learning losses with analytic gradients.
//!
//! Distance losses (contrastive, triplet) act on pairs/triplets of
//! embeddings. Classification losses (softmax, ArcFace, AdaCos) act on a
//! single embedding plus a linear classifier. Inputs are `f64`; the
//! embeddings fed in are expected to be unit vectors but the formulas and
//! their gradients are valid for any vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::classifier::ClassifierParams;

/// ArcFace feature scale.
pub const ARCFACE_SCALE: f64 = 64.0;

/// AdaCos scale never drops below this.
pub const MIN_ADACOS_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// No fine-tuning; the identity encoder.
    Vanilla,
    Contrastive,
    Triplet,
    Softmax,
    #[serde(rename = "arcface")]
    ArcFace,
    #[serde(rename = "adacos")]
    AdaCos,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Vanilla,
        LossKind::Contrastive,
        LossKind::Triplet,
        LossKind::Softmax,
        LossKind::ArcFace,
        LossKind::AdaCos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Vanilla => "vanilla",
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
            LossKind::Softmax => "softmax",
            LossKind::ArcFace => "arcface",
            LossKind::AdaCos => "adacos",
        }
    }

    pub fn parse(s: &str) -> Option<LossKind> {
        LossKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Dev-set margin candidates; empty for losses without a margin.
    pub fn margin_candidates(self) -> &'static [f64] {
        match self {
            LossKind::Contrastive | LossKind::Triplet => &[0.1, 0.2, 0.5, 1.0],
            LossKind::ArcFace => &[0.01, 0.02, 0.05, 0.1],
            _ => &[],
        }
    }

    pub fn uses_classifier(self) -> bool {
        matches!(self, LossKind::Softmax | LossKind::ArcFace | LossKind::AdaCos)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which loss to train with and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Margin for contrastive, triplet and ArcFace; ignored otherwise.
    pub margin: f64,
    /// Feature scale for ArcFace; ignored otherwise.
    pub scale: f64,
}

impl LossConfig {
    pub fn new(kind: LossKind, margin: f64) -> Result<Self> {
        if !(margin.is_finite() && margin >= 0.0) {
            return Err(Error::Config(format!("margin must be >= 0, got {margin}")));
        }
        Ok(LossConfig {
            kind,
            margin,
            scale: ARCFACE_SCALE,
        })
    }

    /// Config with the first margin candidate (or zero).
    pub fn default_for(kind: LossKind) -> Self {
        let margin = kind.margin_candidates().first().copied().unwrap_or(0.0);
        LossConfig {
            kind,
            margin,
            scale: ARCFACE_SCALE,
        }
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_i: Vec<f64>,
    pub grad_j: Vec<f64>,
}

/// Same class: `D(xi, xj)`; different class: `max(m - D(xi, xj), 0)`.
pub fn contrastive_loss(xi: &[f64], xj: &[f64], same_class: bool, margin: f64) -> PairLoss {
    let d = sq_dist(xi, xj);
    // dD/dxi = 2 (xi - xj)
    let (loss, coef) = if same_class {
        (d, 2.0)
    } else if d < margin {
        (margin - d, -2.0)
    } else {
        (0.0, 0.0)
    };
    let grad_i: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| coef * (a - b)).collect();
    let grad_j = grad_i.iter().map(|g| -g).collect();
    PairLoss {
        loss,
        grad_i,
        grad_j,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// `max(D(a, p) - D(a, n) + m, 0)`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> TripletLoss {
    let dim = anchor.len();
    let raw = sq_dist(anchor, positive) - sq_dist(anchor, negative) + margin;
    if raw <= 0.0 {
        return TripletLoss {
            loss: 0.0,
            grad_anchor: vec![0.0; dim],
            grad_positive: vec![0.0; dim],
            grad_negative: vec![0.0; dim],
        };
    }
    let grad_positive: Vec<f64> = (0..dim).map(|k| -2.0 * (anchor[k] - positive[k])).collect();
    let grad_negative: Vec<f64> = (0..dim).map(|k| 2.0 * (anchor[k] - negative[k])).collect();
    // 2(a-p) - 2(a-n) = 2(n-p)
    let grad_anchor = (0..dim).map(|k| 2.0 * (negative[k] - positive[k])).collect();
    TripletLoss {
        loss: raw,
        grad_anchor,
        grad_positive,
        grad_negative,
    }
}

/// Loss and gradients for one instance under a classification loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLoss {
    pub loss: f64,
    pub grad_x: Vec<f64>,
    /// Row-major `n x dim`, with respect to the raw (unnormalized) rows.
    pub grad_weight: Vec<f64>,
    /// Zero for the angular losses, which carry no bias.
    pub grad_bias: Vec<f64>,
}

/// Stable `-log softmax(logits)[label]` and `softmax - onehot`.
fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut delta: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    delta[label] -= 1.0;
    (loss, delta)
}

fn check_label(label: usize, cls: &ClassifierParams) {
    assert!(
        label < cls.num_classes(),
        "label {label} out of range for {} classes",
        cls.num_classes()
    );
}

/// `-log softmax(W x + b)[label]`.
pub fn softmax_loss(x: &[f64], label: usize, cls: &ClassifierParams) -> ClassLoss {
    check_label(label, cls);
    let n = cls.num_classes();
    let dim = cls.dim();
    let logits: Vec<f64> = (0..n).map(|j| dot(cls.row(j), x) + cls.bias[j]).collect();
    let (loss, delta) = cross_entropy(&logits, label);
    let mut grad_x = vec![0.0; dim];
    let mut grad_weight = vec![0.0; n * dim];
    for j in 0..n {
        let row = cls.row(j);
        for k in 0..dim {
            grad_x[k] += delta[j] * row[k];
            grad_weight[j * dim + k] = delta[j] * x[k];
        }
    }
    ClassLoss {
        loss,
        grad_x,
        grad_weight,
        grad_bias: delta,
    }
}

/// Cosines between `x` and every l2-normalized classifier row, with the
/// row norms needed for backpropagation.
struct Cosines {
    cos: Vec<f64>,
    row_norms: Vec<f64>,
}

fn cosines(x: &[f64], cls: &ClassifierParams) -> Cosines {
    let n = cls.num_classes();
    let mut cos = Vec::with_capacity(n);
    let mut row_norms = Vec::with_capacity(n);
    for j in 0..n {
        let row = cls.row(j);
        let norm = dot(row, row).sqrt();
        row_norms.push(norm);
        cos.push(dot(row, x) / norm);
    }
    Cosines { cos, row_norms }
}

/// Backpropagate `dL/dcos_j` to `x` and to the raw classifier rows.
fn backprop_cosines(
    x: &[f64],
    cls: &ClassifierParams,
    c: &Cosines,
    dcos: &[f64],
    grad_x: &mut [f64],
    grad_weight: &mut [f64],
) {
    let dim = cls.dim();
    for (j, &g) in dcos.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = cls.row(j);
        let inv = 1.0 / c.row_norms[j];
        for k in 0..dim {
            let unit = row[k] * inv;
            grad_x[k] += g * unit;
            // d(w_hat . x)/dw = (x - cos * w_hat) / |w|
            grad_weight[j * dim + k] += g * (x[k] - c.cos[j] * unit) * inv;
        }
    }
}

/// `s * cos(theta + m)` and its derivative with respect to `cos(theta)`.
///
/// Uses `cos(theta)cos(m) - sin(theta)sin(m)` with `sin(theta)` clamped at
/// zero, so `|cos| -> 1` never reaches an `acos` domain error.
fn margin_logit(cos: f64, margin: f64, scale: f64) -> (f64, f64) {
    let c = cos.clamp(-1.0, 1.0);
    let sin = (1.0 - c * c).max(0.0).sqrt();
    let (sm, cm) = margin.sin_cos();
    let value = scale * (c * cm - sin * sm);
    let deriv = if sin > 0.0 {
        scale * (cm + sm * c / sin)
    } else {
        scale * cm
    };
    (value, deriv)
}

/// Additive angular margin loss over l2-normalized classifier rows.
pub fn arcface_loss(
    x: &[f64],
    label: usize,
    cls: &ClassifierParams,
    margin: f64,
    scale: f64,
) -> ClassLoss {
    check_label(label, cls);
    let n = cls.num_classes();
    let dim = cls.dim();
    let c = cosines(x, cls);
    let mut logits: Vec<f64> = c.cos.iter().map(|&cj| scale * cj).collect();
    let (target, target_deriv) = margin_logit(c.cos[label], margin, scale);
    logits[label] = target;
    let (loss, delta) = cross_entropy(&logits, label);
    let dcos: Vec<f64> = (0..n)
        .map(|j| {
            if j == label {
                delta[j] * target_deriv
            } else {
                delta[j] * scale
            }
        })
        .collect();
    let mut grad_x = vec![0.0; dim];
    let mut grad_weight = vec![0.0; n * dim];
    backprop_cosines(x, cls, &c, &dcos, &mut grad_x, &mut grad_weight);
    ClassLoss {
        loss,
        grad_x,
        grad_weight,
        grad_bias: vec![0.0; n],
    }
}

/// Initial AdaCos scale, `sqrt(2) * ln(n - 1)`, floored at
/// [`MIN_ADACOS_SCALE`].
pub fn adacos_initial_scale(num_classes: usize) -> f64 {
    let raw = std::f64::consts::SQRT_2 * ((num_classes as f64) - 1.0).max(1.0).ln();
    raw.max(MIN_ADACOS_SCALE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaCosOutput {
    /// Mean loss over the batch, computed with the incoming scale.
    pub loss: f64,
    /// Per-instance gradients of the mean loss.
    pub grad_x: Vec<Vec<f64>>,
    pub grad_weight: Vec<f64>,
    /// Scale to use for the next batch.
    pub next_scale: f64,
}

/// Margin-free angular softmax with a dynamically adapted scale.
///
/// The loss uses the current `scale`; the returned `next_scale` is
/// `ln(B_avg) / cos(min(pi/4, theta_med))`, where `B_avg` is the batch
/// mean of the summed non-target exponentials and `theta_med` the median
/// target angle. The scale is treated as a constant for gradients.
pub fn adacos_loss(
    batch: &[(&[f64], usize)],
    cls: &ClassifierParams,
    scale: f64,
) -> Result<AdaCosOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = cls.num_classes();
    let dim = cls.dim();
    let inv_b = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grad_x = Vec::with_capacity(batch.len());
    let mut grad_weight = vec![0.0; n * dim];
    let mut b_sum = 0.0;
    let mut target_angles = Vec::with_capacity(batch.len());
    for &(x, label) in batch {
        check_label(label, cls);
        let c = cosines(x, cls);
        let logits: Vec<f64> = c.cos.iter().map(|&cj| scale * cj).collect();
        let (loss, delta) = cross_entropy(&logits, label);
        total += loss;
        let dcos: Vec<f64> = delta.iter().map(|d| d * scale * inv_b).collect();
        let mut gx = vec![0.0; dim];
        backprop_cosines(x, cls, &c, &dcos, &mut gx, &mut grad_weight);
        grad_x.push(gx);

        b_sum += (0..n)
            .filter(|&j| j != label)
            .map(|j| (scale * c.cos[j]).exp())
            .sum::<f64>();
        target_angles.push(c.cos[label].clamp(-1.0, 1.0).acos());
    }
    let b_avg = b_sum * inv_b;
    target_angles.sort_by(f64::total_cmp);
    // lower median for even batch sizes
    let theta_med = target_angles[(target_angles.len() - 1) / 2];
    let next = b_avg.ln() / theta_med.min(std::f64::consts::FRAC_PI_4).cos();
    let next_scale = if next.is_finite() {
        next.max(MIN_ADACOS_SCALE)
    } else {
        scale
    };
    Ok(AdaCosOutput {
        loss: total * inv_b,
        grad_x,
        grad_weight,
        next_scale,
    })
}
