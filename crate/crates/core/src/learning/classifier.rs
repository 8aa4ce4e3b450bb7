use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear classification layer: one weight row and one bias per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    num_classes: usize,
    dim: usize,
    /// Row-major `num_classes x dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierParams {
    /// Rows drawn uniformly on the unit sphere, zero biases.
    pub fn random_init<R: Rng + ?Sized>(num_classes: usize, dim: usize, rng: &mut R) -> Self {
        let mut weight = Vec::with_capacity(num_classes * dim);
        for _ in 0..num_classes {
            loop {
                let row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    weight.extend(row.iter().map(|v| v / norm));
                    break;
                }
            }
        }
        ClassifierParams {
            num_classes,
            dim,
            weight,
            bias: vec![0.0; num_classes],
        }
    }

    /// Panics if rows are ragged or `bias` has the wrong length.
    pub fn from_rows(rows: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == dim), "ragged classifier rows");
        assert_eq!(rows.len(), bias.len(), "one bias per class");
        ClassifierParams {
            num_classes: rows.len(),
            dim,
            weight: rows.concat(),
            bias,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weight[j * self.dim..(j + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 {
            return Err(Error::Config("classifier has an empty shape".into()));
        }
        if self.weight.len() != self.num_classes * self.dim || self.bias.len() != self.num_classes {
            return Err(Error::Config(format!(
                "classifier arrays do not match shape {}x{}",
                self.num_classes, self.dim
            )));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite classifier parameter".into()));
        }
        Ok(())
    }
}
