//! Trainable affine head over frozen input vectors.
//!
//! `encode(v) = normalize(A v + b)`. Initialized to the identity so an
//! untrained head reproduces the input embedding space exactly.

use serde::{Deserialize, Serialize};

use crate::embedding::NORM_EPS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    d_in: usize,
    d_out: usize,
    /// Row-major `d_out x d_in`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Forward-pass values needed by [`EncoderParams::backward`].
#[derive(Debug, Clone)]
pub struct Encoded {
    pub unit: Vec<f64>,
    pre_norm: f64,
}

impl EncoderParams {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        EncoderParams {
            d_in: dim,
            d_out: dim,
            weight,
            bias: vec![0.0; dim],
        }
    }

    pub fn new(d_in: usize, d_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let p = EncoderParams {
            d_in,
            d_out,
            weight,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_out == 0 || self.d_in == 0 {
            return Err(Error::Config("encoder has an empty shape".into()));
        }
        if self.weight.len() != self.d_in * self.d_out || self.bias.len() != self.d_out {
            return Err(Error::Config(format!(
                "encoder arrays do not match shape {}x{}",
                self.d_out, self.d_in
            )));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite encoder parameter".into()));
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn forward(&self, v: &[f32]) -> Result<Encoded> {
        if v.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                left: v.len(),
                right: self.d_in,
            });
        }
        let mut z = self.bias.clone();
        for (i, zi) in z.iter_mut().enumerate() {
            let row = &self.weight[i * self.d_in..(i + 1) * self.d_in];
            *zi += row.iter().zip(v).map(|(a, &b)| a * b as f64).sum::<f64>();
        }
        let pre_norm = z.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(pre_norm > NORM_EPS) {
            return Err(Error::DegenerateVector { norm: pre_norm });
        }
        z.iter_mut().for_each(|c| *c /= pre_norm);
        Ok(Encoded { unit: z, pre_norm })
    }

    /// Unit-norm embedding in `f64`.
    pub fn encode(&self, v: &[f32]) -> Result<Vec<f64>> {
        self.forward(v).map(|e| e.unit)
    }

    /// Unit-norm embedding rounded to `f32` for clustering and ranking.
    pub fn embed(&self, v: &[f32]) -> Result<Vec<f32>> {
        Ok(self.encode(v)?.into_iter().map(|c| c as f32).collect())
    }

    /// Accumulate `dL/dA` and `dL/db` into `grad` (same layout as `self`)
    /// given `dL/dx` at the normalized output.
    pub fn backward(&self, v: &[f32], enc: &Encoded, grad_unit: &[f64], grad: &mut EncoderGrad) {
        let x = &enc.unit;
        let proj: f64 = x.iter().zip(grad_unit).map(|(a, b)| a * b).sum();
        for i in 0..self.d_out {
            // (I - x x^T) g / |z|
            let gz = (grad_unit[i] - x[i] * proj) / enc.pre_norm;
            grad.bias[i] += gz;
            let row = &mut grad.weight[i * self.d_in..(i + 1) * self.d_in];
            for (w, &vk) in row.iter_mut().zip(v) {
                *w += gz * vk as f64;
            }
        }
    }

    pub fn zero_grad(&self) -> EncoderGrad {
        EncoderGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EncoderGrad {
    pub fn add_assign(&mut self, other: &EncoderGrad) {
        self.weight.iter_mut().zip(&other.weight).for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
    }
}
