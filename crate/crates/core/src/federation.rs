//! Server-side orchestration of communication rounds.

use rand::seq::index;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::dataset::{ClientSplit, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::seeding::{self, Purpose};
use crate::tensor::{axpy_combine, ParamVector};
use crate::trainer::{local_train, HyperParams, LocalUpdate};

/// How client parameters are weighted during aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Weighting {
    /// `sum n_i w_i / sum n_i`
    DataSize,
    /// `(1 / m) sum w_i`
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global_params: ParamVector,
    /// Number of completed rounds.
    pub round_index: u64,
}

impl ServerState {
    /// Zero weights and bias.
    pub fn initial(n_classes: usize, feature_dim: usize) -> Self {
        Self {
            global_params: ParamVector::zeros(n_classes, feature_dim),
            round_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// 1-based index of the round this report closes.
    pub round_index: u64,
    pub selected_client_ids: Vec<usize>,
    /// Mean last-epoch loss of each selected client, in `selected_client_ids` order.
    pub client_losses: Vec<f64>,
    /// Test accuracy of the aggregated model.
    pub test_accuracy: f64,
}

impl RoundReport {
    pub fn mean_client_loss(&self) -> f64 {
        self.client_losses.iter().sum::<f64>() / self.client_losses.len() as f64
    }
}

/// Clients per round: `fraction * n_clients` rounded half-up.
pub fn selection_size(n_clients: usize, fraction: f64) -> Result<usize> {
    if n_clients == 0 {
        return Err(Error::domain("n_clients must be at least 1"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::domain(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let m = (fraction * n_clients as f64 + 0.5).floor() as usize;
    if m == 0 {
        return Err(Error::domain(format!(
            "fraction {fraction} of {n_clients} clients selects nobody"
        )));
    }
    Ok(m.min(n_clients))
}

/// Uniform sample without replacement, sorted ascending.
pub fn select_clients(n_clients: usize, fraction: f64, seed: u64, round_index: u64) -> Result<Vec<usize>> {
    let m = selection_size(n_clients, fraction)?;
    let mut rng = seeding::stream(seed, Purpose::Selection, &[round_index]);
    let mut ids = index::sample(&mut rng, n_clients, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Weighted average of client parameters, summed in ascending client-id order.
pub fn aggregate(updates: &[LocalUpdate], weighting: Weighting) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::domain("no updates to aggregate"));
    }
    let mut ordered: Vec<&LocalUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    let coeffs: Vec<f64> = match weighting {
        Weighting::DataSize => {
            if let Some(u) = ordered.iter().find(|u| u.n_samples == 0) {
                return Err(Error::domain(format!("client {} reports zero samples", u.client_id)));
            }
            let total: usize = ordered.iter().map(|u| u.n_samples).sum();
            ordered
                .iter()
                .map(|u| u.n_samples as f64 / total as f64)
                .collect()
        }
        Weighting::Uniform => vec![1.0 / ordered.len() as f64; ordered.len()],
    };
    let params: Vec<&ParamVector> = ordered.iter().map(|u| &u.params).collect();
    axpy_combine(&coeffs, &params)
}

/// Everything a round needs besides the server state.
#[derive(Debug, Clone, Copy)]
pub struct RoundPlan<'a> {
    pub train: &'a Dataset,
    pub splits: &'a [ClientSplit],
    pub test: &'a Dataset,
    pub hyper: HyperParams,
    pub fraction: f64,
    pub weighting: Weighting,
    pub seed: u64,
}

/// One communication round: select, train every selected client from the
/// same snapshot of `w_g`, aggregate, evaluate.
///
/// With `parallel` set the clients train on the current rayon pool. The
/// result is identical either way.
pub fn run_round(
    state: &ServerState,
    plan: &RoundPlan<'_>,
    parallel: bool,
) -> Result<(ServerState, RoundReport)> {
    let selected = select_clients(plan.splits.len(), plan.fraction, plan.seed, state.round_index)?;
    let w_g = &state.global_params;
    let train_one = |&id: &usize| -> Result<LocalUpdate> {
        let split = plan
            .splits
            .get(id)
            .ok_or_else(|| Error::domain(format!("no split for client {id}")))?;
        local_train(w_g, plan.train, split, &plan.hyper, plan.seed, state.round_index)
    };
    let updates: Vec<LocalUpdate> = if parallel {
        selected.par_iter().map(train_one).collect::<Result<_>>()?
    } else {
        selected.iter().map(train_one).collect::<Result<_>>()?
    };

    let global_params = aggregate(&updates, plan.weighting)?;
    let test_accuracy = accuracy(&global_params, plan.test)?;
    let next = ServerState {
        global_params,
        round_index: state.round_index + 1,
    };
    let report = RoundReport {
        round_index: next.round_index,
        selected_client_ids: selected,
        client_losses: updates.iter().map(|u| u.mean_final_epoch_loss).collect(),
        test_accuracy,
    };
    Ok((next, report))
}

/// Client execution strategy for [`run_federation_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Sequential,
    /// Train the clients of a round on a dedicated pool; 0 picks rayon's default size.
    Parallel { threads: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationOutcome {
    pub history: Vec<RoundReport>,
    pub final_state: ServerState,
}

impl FederationOutcome {
    /// Accuracy after the last round, or of the initial model for zero rounds.
    pub fn final_accuracy(&self, test: &Dataset) -> Result<f64> {
        match self.history.last() {
            Some(r) => Ok(r.test_accuracy),
            None => accuracy(&self.final_state.global_params, test),
        }
    }
}

pub fn run_federation(cfg: &ExperimentConfig) -> Result<FederationOutcome> {
    run_federation_with(cfg, Schedule::Sequential, |_| {})
}

/// Runs `cfg.rounds` rounds from zero-initialized parameters, calling
/// `on_round` after each one.
pub fn run_federation_with(
    cfg: &ExperimentConfig,
    schedule: Schedule,
    mut on_round: impl FnMut(&RoundReport) + Send,
) -> Result<FederationOutcome> {
    cfg.validate()?;
    let data = cfg.prepare()?;
    let plan = RoundPlan {
        train: &data.train,
        splits: &data.splits,
        test: &data.test,
        hyper: cfg.hyper_params(),
        fraction: cfg.fraction,
        weighting: cfg.weighting,
        seed: cfg.seed,
    };
    let mut loop_rounds = |parallel: bool| -> Result<FederationOutcome> {
        let mut state = ServerState::initial(data.train.n_classes(), data.train.feature_dim());
        let mut history = Vec::with_capacity(cfg.rounds);
        for _ in 0..cfg.rounds {
            let (next, report) = run_round(&state, &plan, parallel)?;
            on_round(&report);
            history.push(report);
            state = next;
        }
        Ok(FederationOutcome {
            history,
            final_state: state,
        })
    };
    match schedule {
        Schedule::Sequential => loop_rounds(false),
        Schedule::Parallel { threads } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::domain(format!("cannot build thread pool: {e}")))?;
            pool.install(|| loop_rounds(true))
        }
    }
}
