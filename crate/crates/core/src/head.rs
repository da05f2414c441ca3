//! The trainable `n x n` explainer layers.
//!
//! The MC head emits a thresholded sigmoid mask over filters; the MI head
//! emits a ReLU'd non-negative addition per filter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::check_len;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Dense layer `u = D g + d` with `D` stored row-major as
/// `(output unit, input feature)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub n: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            weights: vec![0.0; n * n],
            bias: vec![0.0; n],
        }
    }

    /// Uniform `[-1/sqrt(n), 1/sqrt(n)]` weights and a constant bias.
    pub fn random<R: Rng + ?Sized>(n: usize, bias: f64, rng: &mut R) -> Self {
        let a = 1.0 / (n as f64).sqrt();
        let weights = (0..n * n).map(|_| rng.random_range(-a..=a)).collect();
        Self {
            n,
            weights,
            bias: vec![bias; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invariant("explainer layer must have n >= 1".into()));
        }
        check_len("explainer weights", self.n * self.n, self.weights.len())?;
        check_len("explainer bias", self.n, self.bias.len())?;
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Invariant("explainer layer has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn pre_activation(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len("feature vector", self.n, g.len())?;
        Ok(self.pre_activation_unchecked(g))
    }

    pub(crate) fn pre_activation_unchecked(&self, g: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(g).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.n * self.n + self.n
    }

    /// Weights followed by bias, the layout used for flat gradients.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.weights.clone();
        out.extend_from_slice(&self.bias);
        out
    }

    pub fn from_flat(n: usize, flat: &[f64]) -> Result<Self> {
        check_len("flat parameters", n * n + n, flat.len())?;
        Ok(Self {
            n,
            weights: flat[..n * n].to_vec(),
            bias: flat[n * n..].to_vec(),
        })
    }

    pub fn quantize(&mut self) {
        crate::bundle::quantize_in_place(&mut self.weights);
        crate::bundle::quantize_in_place(&mut self.bias);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Minimum-correct head: `relu_t(sigmoid(D g + d))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McHead {
    pub dense: DenseLayer,
    pub threshold: f64,
}

impl McHead {
    pub fn new(dense: DenseLayer, threshold: f64) -> Result<Self> {
        let head = Self { dense, threshold };
        head.validate()?;
        Ok(head)
    }

    pub fn n(&self) -> usize {
        self.dense.n
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Invariant(format!(
                "MC threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        self.dense.validate()
    }

    pub fn sigmoid_scores(&self, g: &[f64]) -> Result<Vec<f64>> {
        Ok(self.dense.pre_activation(g)?.into_iter().map(sigmoid).collect())
    }

    /// Soft training-time mask: scores below the threshold are zeroed, the
    /// rest pass through unchanged (inclusive at the threshold).
    pub fn forward_train(&self, g: &[f64]) -> Result<Vec<f64>> {
        let t = self.threshold;
        Ok(self
            .sigmoid_scores(g)?
            .into_iter()
            .map(|s| if s >= t { s } else { 0.0 })
            .collect())
    }

    /// Binary explanation-time mask with the same support as
    /// [`forward_train`](Self::forward_train).
    pub fn forward_infer(&self, g: &[f64]) -> Result<Vec<f64>> {
        let t = self.threshold;
        Ok(self
            .sigmoid_scores(g)?
            .into_iter()
            .map(|s| if s >= t { 1.0 } else { 0.0 })
            .collect())
    }
}

/// Minimum-incorrect head: `relu(D g + d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiHead {
    pub dense: DenseLayer,
}

impl MiHead {
    pub fn new(dense: DenseLayer) -> Result<Self> {
        dense.validate()?;
        Ok(Self { dense })
    }

    pub fn n(&self) -> usize {
        self.dense.n
    }

    pub fn forward(&self, g: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .dense
            .pre_activation(g)?
            .into_iter()
            .map(|u| u.max(0.0))
            .collect())
    }
}

pub fn mc_forward_train(head: &McHead, g: &[f64]) -> Result<Vec<f64>> {
    head.forward_train(g)
}

pub fn mc_forward_infer(head: &McHead, g: &[f64]) -> Result<Vec<f64>> {
    head.forward_infer(g)
}

pub fn mi_forward(head: &MiHead, g: &[f64]) -> Result<Vec<f64>> {
    head.forward(g)
}

/// Indices where a mask or addition is non-zero.
pub fn support(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}
