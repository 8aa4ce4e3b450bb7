//! Vector primitives shared by training, clustering and evaluation.
//!
//! Vectors are stored as `f32`; every reduction (dot products, norms,
//! distance sums) accumulates in `f64`.

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Mixing weight between the word vector and the masked-word vector.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CombineWeight(f64);

impl CombineWeight {
    pub fn new(alpha: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(CombineWeight(alpha))
        } else {
            Err(Error::InvalidWeight(alpha))
        }
    }

    pub const WORD_ONLY: CombineWeight = CombineWeight(0.0);

    pub fn get(self) -> f64 {
        self.0
    }
}

fn check_dims(left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { left, right })
    }
}

/// `(1 - alpha) * word + alpha * mask`, componentwise.
pub fn combine(word: &[f32], mask: &[f32], alpha: CombineWeight) -> Result<Vec<f32>> {
    check_dims(word.len(), mask.len())?;
    let a = alpha.get();
    Ok(word
        .iter()
        .zip(mask)
        .map(|(&w, &m)| ((1.0 - a) * w as f64 + a * m as f64) as f32)
        .collect())
}

pub fn dot(x: &[f32], y: &[f32]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| a as f64 * b as f64).sum()
}

pub fn norm(x: &[f32]) -> f64 {
    dot(x, x).sqrt()
}

pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    let n = norm(v);
    if n <= NORM_EPS {
        return Err(Error::DegenerateVector { norm: n });
    }
    Ok(v.iter().map(|&c| (c as f64 / n) as f32).collect())
}

/// Squared Euclidean distance, the `D` used by the pair and triplet losses.
pub fn sq_euclidean(x: &[f32], y: &[f32]) -> Result<f64> {
    check_dims(x.len(), y.len())?;
    Ok(sq_euclidean_unchecked(x, y))
}

pub(crate) fn sq_euclidean_unchecked(x: &[f32], y: &[f32]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum()
}

/// Plain Euclidean distance, used as the clustering linkage metric.
pub fn euclidean(x: &[f32], y: &[f32]) -> Result<f64> {
    sq_euclidean(x, y).map(f64::sqrt)
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(x: &[f32], y: &[f32]) -> Result<f64> {
    check_dims(x.len(), y.len())?;
    let nx = norm(x);
    let ny = norm(y);
    if nx <= NORM_EPS {
        return Err(Error::DegenerateVector { norm: nx });
    }
    if ny <= NORM_EPS {
        return Err(Error::DegenerateVector { norm: ny });
    }
    Ok((dot(x, y) / (nx * ny)).clamp(-1.0, 1.0))
}

/// Combine and re-normalize; this is the representation clustered and
/// ranked downstream.
pub fn mixed_unit(word: &[f32], mask: &[f32], alpha: CombineWeight) -> Result<Vec<f32>> {
    l2_normalize(&combine(word, mask, alpha)?)
}
