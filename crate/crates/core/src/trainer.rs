//! Client-side local optimization.
//!
//! Both objectives are minimized by plain mini-batch SGD for a fixed number
//! of local epochs. FedProx adds `(mu / 2) * ||w - w_g||^2` to the
//! cross-entropy, which contributes `mu * (w - w_g)` to every gradient step.

use rand::seq::SliceRandom;

use crate::dataset::{ClientSplit, Dataset};
use crate::error::{Error, Result};
use crate::seeding;
use crate::tensor::{cross_entropy_loss, loss_and_grad, Batch, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    FedAvg,
    FedProx,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    /// Proximal coefficient. Ignored unless `objective` is FedProx.
    pub mu: f64,
    pub objective: Objective,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            local_epochs: 2,
            mu: 0.2,
            objective: Objective::FedAvg,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::domain(format!(
                "learning_rate must be a non-negative finite number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::domain("local_epochs must be at least 1"));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::domain(format!("mu must be non-negative, got {}", self.mu)));
        }
        Ok(())
    }

    /// The coefficient actually applied: zero for FedAvg regardless of `mu`.
    pub fn effective_mu(&self) -> f64 {
        match self.objective {
            Objective::FedAvg => 0.0,
            Objective::FedProx => self.mu,
        }
    }
}

/// Parameters a client sends back after a round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub client_id: usize,
    pub params: ParamVector,
    pub n_samples: usize,
    pub mean_final_epoch_loss: f64,
}

/// `(mu / 2) * ||w - w_g||^2`, bias included.
pub fn proximal_penalty(w: &ParamVector, w_g: &ParamVector, mu: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::domain(format!("mu must be non-negative, got {mu}")));
    }
    Ok(0.5 * mu * w.squared_distance(w_g)?)
}

pub fn local_objective(
    w: &ParamVector,
    w_g: &ParamVector,
    b: &Batch<'_>,
    h: &HyperParams,
) -> Result<f64> {
    let ce = cross_entropy_loss(w, b)?;
    let mu = h.effective_mu();
    if mu == 0.0 {
        w.check_same_shape(w_g)?;
        return Ok(ce);
    }
    Ok(ce + proximal_penalty(w, w_g, mu)?)
}

/// Runs `h.local_epochs` epochs of SGD on one client's split, starting from `w_g`.
///
/// Each epoch reshuffles the split with the stream derived from
/// `(seed, round, client_id, epoch)` and walks mini-batches of
/// `h.batch_size`, keeping the final partial batch.
pub fn local_train(
    w_g: &ParamVector,
    data: &Dataset,
    split: &ClientSplit,
    h: &HyperParams,
    seed: u64,
    round: u64,
) -> Result<LocalUpdate> {
    if split.is_empty() {
        return Err(Error::domain(format!("client {} has an empty split", split.client_id)));
    }
    h.validate()?;
    let mu = h.effective_mu();
    let mut w = w_g.clone();
    let mut order = split.indices.clone();
    let mut last_epoch_loss = f64::NAN;

    for epoch in 0..h.local_epochs {
        order.copy_from_slice(&split.indices);
        order.shuffle(&mut seeding::local_epoch_stream(
            seed,
            round,
            split.client_id as u64,
            epoch as u64,
        ));
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(h.batch_size) {
            let batch = data.batch(chunk)?;
            let (mut loss, mut grad) = loss_and_grad(&w, &batch)?;
            if mu != 0.0 {
                loss += proximal_penalty(&w, w_g, mu)?;
                for ((g, wi), gi) in grad
                    .as_mut_slice()
                    .iter_mut()
                    .zip(w.as_slice())
                    .zip(w_g.as_slice())
                {
                    *g += mu * (wi - gi);
                }
            }
            for (wi, g) in w.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *wi -= h.learning_rate * g;
            }
            loss_sum += loss;
            n_batches += 1;
        }
        last_epoch_loss = loss_sum / n_batches as f64;
    }
    w.ensure_finite()?;

    Ok(LocalUpdate {
        client_id: split.client_id,
        params: w,
        n_samples: split.len(),
        mean_final_epoch_loss: last_epoch_loss,
    })
}
