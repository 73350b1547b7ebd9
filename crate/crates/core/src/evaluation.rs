//! Accuracy, the centralized baseline, and multi-seed summaries.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::dataset::{ClientSplit, Dataset};
use crate::error::{Error, Result};
use crate::federation::{run_federation_with, Schedule};
use crate::tensor::{forward_logits, ParamVector};
use crate::trainer::{local_train, HyperParams, Objective};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn accuracy(p: &ParamVector, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::domain("accuracy over an empty test set"));
    }
    let mut correct = 0usize;
    for i in 0..test.len() {
        if argmax(&forward_logits(p, test.row(i))?) == test.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Trains one model by plain SGD on the pooled training data.
///
/// Uses the same random stream as client 0 in round 0 of a federation with
/// the same seed, so a one-client, full-participation, one-round federation
/// reproduces it exactly.
pub fn centralized_baseline(
    train: &Dataset,
    test: &Dataset,
    h: &HyperParams,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    let init = ParamVector::zeros(train.n_classes(), train.feature_dim());
    if epochs == 0 {
        return accuracy(&init, test);
    }
    let pooled = ClientSplit {
        client_id: 0,
        indices: (0..train.len()).collect(),
    };
    let h = HyperParams {
        local_epochs: epochs,
        objective: Objective::FedAvg,
        ..*h
    };
    let trained = local_train(&init, train, &pooled, &h, seed, 0)?;
    accuracy(&trained.params, test)
}

/// Mean of the values.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Always `"sample"`: the deviation divides by n - 1.
    pub std_convention: &'static str,
    pub config_fingerprint: String,
}

impl ExperimentSummary {
    pub fn from_accuracies(seeds: Vec<u64>, accuracies: Vec<f64>, config_fingerprint: String) -> Self {
        Self {
            mean: mean(&accuracies),
            std: sample_std(&accuracies),
            seeds,
            accuracies,
            std_convention: "sample",
            config_fingerprint,
        }
    }
}

pub fn run_experiment_suite(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<ExperimentSummary> {
    run_experiment_suite_with(cfg, seeds, false)
}

/// One federation per seed, each with `cfg.seed` replaced; final-round
/// accuracies are summarized in seed order.
pub fn run_experiment_suite_with(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    parallel: bool,
) -> Result<ExperimentSummary> {
    check_seeds(seeds)?;
    cfg.validate()?;
    let run_one = |&seed: &u64| -> Result<f64> {
        let c = ExperimentConfig {
            seed,
            ..cfg.clone()
        };
        let outcome = run_federation_with(&c, Schedule::Sequential, |_| {})?;
        outcome.final_accuracy(&c.prepare()?.test)
    };
    let accuracies: Vec<f64> = if parallel {
        seeds.par_iter().map(run_one).collect::<Result<_>>()?
    } else {
        seeds.iter().map(run_one).collect::<Result<_>>()?
    };
    Ok(ExperimentSummary::from_accuracies(
        seeds.to_vec(),
        accuracies,
        cfg.fingerprint(),
    ))
}

pub fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::domain("at least one seed is required"));
    }
    let mut seen = HashSet::new();
    for s in seeds {
        if !seen.insert(s) {
            return Err(Error::domain(format!("seed {s} is listed twice")));
        }
    }
    Ok(())
}
