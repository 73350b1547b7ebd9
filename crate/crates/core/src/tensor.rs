//! Dense parameters and the linear softmax head.
//!
//! A [`ParamVector`] stores an `n_classes x feature_dim` weight matrix
//! followed by an `n_classes` bias vector in one contiguous buffer, so that
//! linear combinations and norms run over every trainable coordinate.

use crate::error::{Error, Result};

/// Trainable parameters of the classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    n_classes: usize,
    feature_dim: usize,
    /// Row-major weights, then bias.
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(n_classes: usize, feature_dim: usize) -> Self {
        Self {
            n_classes,
            feature_dim,
            data: vec![0.0; n_classes * feature_dim + n_classes],
        }
    }

    /// Builds parameters from a row-major weight matrix and a bias vector.
    pub fn from_parts(
        n_classes: usize,
        feature_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != n_classes * feature_dim {
            return Err(Error::shape(format!(
                "weights have {} entries, expected {n_classes}x{feature_dim}",
                weights.len()
            )));
        }
        if bias.len() != n_classes {
            return Err(Error::shape(format!(
                "bias has {} entries, expected {n_classes}",
                bias.len()
            )));
        }
        let mut data = weights;
        data.extend(bias);
        let p = Self {
            n_classes,
            feature_dim,
            data,
        };
        p.ensure_finite()?;
        Ok(p)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_classes, self.feature_dim)
    }

    /// Total number of trainable coordinates, bias included.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// All coordinates: weights row-major, then bias.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn weights(&self) -> &[f64] {
        &self.data[..self.n_classes * self.feature_dim]
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        let start = class * self.feature_dim;
        &self.data[start..start + self.feature_dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.data[self.n_classes * self.feature_dim..]
    }

    pub fn check_same_shape(&self, other: &ParamVector) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "parameter shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!(
                "parameter coordinate {i} is not finite"
            ))),
            None => Ok(()),
        }
    }

    /// Squared Euclidean distance over all coordinates.
    pub fn squared_distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

/// A mini-batch of borrowed feature rows and their labels.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    rows: Vec<&'a [f64]>,
    labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(rows: Vec<&'a [f64]>, labels: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::domain("batch is empty"));
        }
        if rows.len() != labels.len() {
            return Err(Error::shape(format!(
                "batch has {} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("batch rows have differing lengths"));
        }
        Ok(Self { rows, labels })
    }

    /// Splits a row-major feature matrix into a batch.
    pub fn from_matrix(features: &'a [f64], feature_dim: usize, labels: Vec<usize>) -> Result<Self> {
        if feature_dim == 0 || features.len() != feature_dim * labels.len() {
            return Err(Error::shape(format!(
                "{} feature values do not form {} rows of width {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        Self::new(features.chunks_exact(feature_dim).collect(), labels)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[&'a [f64]] {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn validate_for(&self, p: &ParamVector) -> Result<()> {
        if self.rows[0].len() != p.feature_dim {
            return Err(Error::shape(format!(
                "batch feature width {} does not match parameter feature_dim {}",
                self.rows[0].len(),
                p.feature_dim
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= p.n_classes) {
            return Err(Error::domain(format!(
                "label {bad} out of range for {} classes",
                p.n_classes
            )));
        }
        Ok(())
    }
}

/// `logits[c] = weights[c] . x + bias[c]`.
pub fn forward_logits(p: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.feature_dim {
        return Err(Error::shape(format!(
            "feature vector has length {}, expected {}",
            x.len(),
            p.feature_dim
        )));
    }
    Ok(logits_unchecked(p, x))
}

fn logits_unchecked(p: &ParamVector, x: &[f64]) -> Vec<f64> {
    let bias = p.bias();
    (0..p.n_classes)
        .map(|c| dot(p.weight_row(c), x) + bias[c])
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    Ok(softmax_unchecked(logits))
}

fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(z)[label]` via log-sum-exp.
fn nll(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    // Rounding can leave a tiny negative value when the true logit dominates.
    (lse - logits[label]).max(0.0)
}

/// Mean cross-entropy of the batch.
pub fn cross_entropy_loss(p: &ParamVector, b: &Batch<'_>) -> Result<f64> {
    b.validate_for(p)?;
    let total: f64 = b
        .rows
        .iter()
        .zip(&b.labels)
        .map(|(x, &y)| nll(&logits_unchecked(p, x), y))
        .sum();
    let loss = total / b.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("cross-entropy is not finite".into()));
    }
    Ok(loss)
}

/// Batch-mean gradient of [`cross_entropy_loss`] with respect to every coordinate.
pub fn grad_cross_entropy(p: &ParamVector, b: &Batch<'_>) -> Result<ParamVector> {
    Ok(loss_and_grad(p, b)?.1)
}

/// Loss and gradient in one pass over the batch.
pub fn loss_and_grad(p: &ParamVector, b: &Batch<'_>) -> Result<(f64, ParamVector)> {
    b.validate_for(p)?;
    let (k, d) = p.shape();
    let mut grad = ParamVector::zeros(k, d);
    let mut total_loss = 0.0;
    for (x, &y) in b.rows.iter().zip(&b.labels) {
        let logits = logits_unchecked(p, x);
        total_loss += nll(&logits, y);
        let mut residual = softmax_unchecked(&logits);
        residual[y] -= 1.0;
        let (w, bias) = grad.data.split_at_mut(k * d);
        for (c, r) in residual.iter().enumerate() {
            for (g, xj) in w[c * d..(c + 1) * d].iter_mut().zip(x.iter()) {
                *g += r * xj;
            }
            bias[c] += r;
        }
    }
    let scale = 1.0 / b.len() as f64;
    grad.data.iter_mut().for_each(|g| *g *= scale);
    grad.ensure_finite()?;
    Ok((total_loss * scale, grad))
}

/// Element-wise `sum_i coeffs[i] * params[i]`, accumulated in list order.
pub fn axpy_combine(coeffs: &[f64], params: &[&ParamVector]) -> Result<ParamVector> {
    if params.is_empty() {
        return Err(Error::domain("cannot combine an empty parameter list"));
    }
    if coeffs.len() != params.len() {
        return Err(Error::shape(format!(
            "{} coefficients for {} parameter vectors",
            coeffs.len(),
            params.len()
        )));
    }
    let first = params[0];
    let mut out = ParamVector::zeros(first.n_classes, first.feature_dim);
    for (&c, p) in coeffs.iter().zip(params) {
        out.check_same_shape(p)?;
        for (o, v) in out.data.iter_mut().zip(&p.data) {
            *o += c * v;
        }
    }
    out.ensure_finite()?;
    Ok(out)
}
