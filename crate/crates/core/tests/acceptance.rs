//! Acceptance criteria. Each test prints one `[PASS]` / `[FAIL]` line.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture`.

use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedsim::cli::{cmd_run, CommonOptions};
use fedsim::config::{DatasetSource, ExperimentConfig};
use fedsim::dataset::{
    distinct_labels, generate_synthetic, label_distribution, make_shards, partition_shards, Dataset,
    PartitionMode,
};
use fedsim::evaluation::{centralized_baseline, run_experiment_suite_with, ExperimentSummary};
use fedsim::federation::{aggregate, run_federation, select_clients, Weighting};
use fedsim::tensor::{grad_cross_entropy, Batch, ParamVector};
use fedsim::trainer::{LocalUpdate, Objective};

fn report(id: &str, pass: bool, detail: impl AsRef<str>) {
    println!("[{}] criterion {id}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
}

fn check(id: &str, pass: bool, detail: String) {
    report(id, pass, &detail);
    assert!(pass, "criterion {id} failed: {detail}");
}

fn within(id: &str, elapsed: Duration, budget: Duration) {
    check(
        &format!("{id} (runtime)"),
        elapsed < budget,
        format!("{elapsed:.2?} < {budget:?}"),
    );
}

#[test]
fn c1_fedprox_mu_zero_reduces_to_fedavg() {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for partition in [PartitionMode::Iid, PartitionMode::Shards(2)] {
        let fedavg = ExperimentConfig {
            method: Objective::FedAvg,
            partition,
            rounds: 20,
            n_clients: 10,
            seed: 3,
            ..ExperimentConfig::default()
        };
        let prox = ExperimentConfig {
            method: Objective::FedProx,
            mu: Some(0.0),
            ..fedavg.clone()
        };
        let a = run_federation(&fedavg).unwrap();
        let b = run_federation(&prox).unwrap();
        let bits = |o: &fedsim::federation::FederationOutcome| -> Vec<u64> {
            o.history
                .iter()
                .flat_map(|r| {
                    r.client_losses
                        .iter()
                        .map(|v| v.to_bits())
                        .chain([r.test_accuracy.to_bits()])
                        .chain(r.selected_client_ids.iter().map(|&i| i as u64))
                })
                .chain(o.final_state.global_params.as_slice().iter().map(|v| v.to_bits()))
                .collect()
        };
        if a.history.len() != 20 || bits(&a) != bits(&b) {
            mismatches.push(format!("{partition:?}"));
        }
    }
    check(
        "1",
        mismatches.is_empty(),
        format!("FedProx(mu=0) == FedAvg bit-for-bit over 20 rounds for IID and shards(2); mismatches: {mismatches:?}"),
    );
    within("1", start.elapsed(), Duration::from_secs(10));
}

/// Mean cross-entropy with scalar loops, independent of the crate's kernels.
fn oracle_loss(raw: &[f64], k: usize, d: usize, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let mut z = vec![0.0; k];
        for c in 0..k {
            z[c] = raw[k * d + c];
            for j in 0..d {
                z[c] += raw[c * d + j] * x[j];
            }
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / rows.len() as f64
}

#[test]
fn c2_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    let mut coords = 0usize;
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=16);
        let w: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = ParamVector::from_parts(k, d, w, b).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let batch = Batch::new(rows.iter().map(Vec::as_slice).collect(), labels.clone()).unwrap();
        let g = grad_cross_entropy(&p, &batch).unwrap();
        for i in 0..p.len() {
            let mut plus = p.as_slice().to_vec();
            plus[i] += h;
            let mut minus = p.as_slice().to_vec();
            minus[i] -= h;
            let fd = (oracle_loss(&plus, k, d, &rows, &labels) - oracle_loss(&minus, k, d, &rows, &labels))
                / (2.0 * h);
            let a = g.as_slice()[i];
            let scale = a.abs().max(fd.abs());
            let err = if scale < 1e-8 { (a - fd).abs() } else { (a - fd).abs() / scale };
            worst = worst.max(err);
            coords += 1;
            if err >= 1e-5 {
                failures += 1;
            }
        }
    }
    check(
        "2",
        failures == 0,
        format!("100 (params, batch) pairs, {coords} coordinates, worst error {worst:.2e} (< 1e-5), {failures} failures"),
    );
    within("2", start.elapsed(), Duration::from_secs(5));
}

#[test]
fn c3_aggregation_matches_weighted_mean_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_oracle = 0.0f64;
    let mut worst_perm = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(1..=10);
        let (k, d) = (rng.random_range(2..=5), rng.random_range(1..=6));
        let mut updates: Vec<LocalUpdate> = (0..m)
            .map(|id| {
                let w = (0..k * d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let b = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
                LocalUpdate {
                    client_id: id,
                    params: ParamVector::from_parts(k, d, w, b).unwrap(),
                    n_samples: rng.random_range(1..500),
                    mean_final_epoch_loss: 0.0,
                }
            })
            .collect();
        for weighting in [Weighting::DataSize, Weighting::Uniform] {
            let agg = aggregate(&updates, weighting).unwrap();
            for i in 0..agg.len() {
                let (mut num, mut den) = (0.0, 0.0);
                for u in &updates {
                    let wt = match weighting {
                        Weighting::DataSize => u.n_samples as f64,
                        Weighting::Uniform => 1.0,
                    };
                    num += wt * u.params.as_slice()[i];
                    den += wt;
                }
                worst_oracle = worst_oracle.max((agg.as_slice()[i] - num / den).abs());
            }
            let mut shuffled = updates.clone();
            for j in (1..shuffled.len()).rev() {
                shuffled.swap(j, rng.random_range(0..=j));
            }
            let permuted = aggregate(&shuffled, weighting).unwrap();
            for (a, b) in agg.as_slice().iter().zip(permuted.as_slice()) {
                worst_perm = worst_perm.max((a - b).abs());
            }
        }
        updates.clear();
    }
    check(
        "3",
        worst_oracle < 1e-12 && worst_perm < 1e-12,
        format!("200 update lists: max oracle deviation {worst_oracle:.2e}, max permutation deviation {worst_perm:.2e} (< 1e-12)"),
    );
}

/// Balanced synthetic data thinned per class to create mild imbalance.
fn audit_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let n = rng.random_range(200..=2000);
    let full = generate_synthetic(n, 4, 4, 2.0, rng.random()).unwrap();
    let keep: Vec<f64> = (0..4).map(|_| rng.random_range(0.6..=1.0)).collect();
    let idx: Vec<usize> = (0..full.len())
        .filter(|&i| rng.random::<f64>() < keep[full.labels()[i]])
        .collect();
    full.select(&idx).unwrap()
}

#[test]
fn c4_shard_partition_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut audited = 0;
    let mut rejected = 0;
    let mut problems: Vec<String> = Vec::new();
    while audited < 50 {
        let n_clients = rng.random_range(2..=20);
        let k = rng.random_range(1..=4);
        let d = audit_dataset(&mut rng);
        let seed: u64 = rng.random();
        let n_shards = n_clients * k;
        if n_shards < d.n_classes() {
            let err = partition_shards(&d, n_clients, k, seed);
            match err {
                Err(e) if e.to_string().contains("class") => rejected += 1,
                other => problems.push(format!("({n_clients},{k}) not rejected: {other:?}")),
            }
            continue;
        }
        audited += 1;
        let splits = partition_shards(&d, n_clients, k, seed).unwrap();
        let shards = make_shards(&d, n_shards, seed).unwrap();
        let tag = format!("n_clients={n_clients} k={k} n={}", d.len());

        if shards.len() != n_shards {
            problems.push(format!("{tag}: {} shards", shards.len()));
        }
        for s in &shards {
            if s.indices.is_empty() || s.indices.iter().any(|&i| d.labels()[i] != s.label) {
                problems.push(format!("{tag}: shard not single-label"));
            }
        }
        // Each shard must land whole inside exactly one client.
        let mut owner = vec![usize::MAX; d.len()];
        let mut seen = vec![false; d.len()];
        for s in &splits {
            for &i in &s.indices {
                if seen[i] {
                    problems.push(format!("{tag}: index {i} on two clients"));
                }
                seen[i] = true;
                owner[i] = s.client_id;
            }
        }
        if !seen.iter().all(|&b| b) {
            problems.push(format!("{tag}: not exhaustive"));
        }
        let mut per_client = vec![0; n_clients];
        for s in &shards {
            let owners: HashSet<usize> = s.indices.iter().map(|&i| owner[i]).collect();
            if owners.len() != 1 {
                problems.push(format!("{tag}: shard split across clients"));
            } else {
                per_client[*owners.iter().next().unwrap()] += 1;
            }
        }
        if per_client.iter().any(|&c| c != k) {
            problems.push(format!("{tag}: shards per client {per_client:?}"));
        }
        for s in &splits {
            let labels = distinct_labels(&label_distribution(&d, s).unwrap());
            if labels > k || (k < 4 && labels == 4) {
                problems.push(format!("{tag}: client {} has {labels} labels", s.client_id));
            }
        }
    }
    check(
        "4",
        problems.is_empty(),
        format!(
            "{audited} feasible shard configs audited (+{rejected} infeasible draws correctly rejected); problems: {:?}",
            problems.iter().take(5).collect::<Vec<_>>()
        ),
    );
}

const TREND_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct TrendResults {
    baseline: f64,
    iid_avg: ExperimentSummary,
    iid_prox: ExperimentSummary,
    s2_avg: ExperimentSummary,
    s2_prox: ExperimentSummary,
    s3_avg: ExperimentSummary,
    s3_prox: ExperimentSummary,
    elapsed: Duration,
}

fn trend_config(method: Objective, partition: PartitionMode) -> ExperimentConfig {
    ExperimentConfig {
        method,
        mu: Some(0.2),
        partition,
        n_clients: 10,
        fraction: 0.5,
        rounds: 100,
        local_epochs: 2,
        batch_size: 64,
        learning_rate: 0.01,
        dataset: DatasetSource::Synthetic {
            n_samples: 5000,
            n_classes: 4,
            feature_dim: 16,
            separation: 6.0,
        },
        test_fraction: 0.2,
        ..ExperimentConfig::default()
    }
}

fn trend_results() -> &'static TrendResults {
    static RESULTS: OnceLock<TrendResults> = OnceLock::new();
    RESULTS.get_or_init(|| {
        let start = Instant::now();
        let suite = |m, p| run_experiment_suite_with(&trend_config(m, p), &TREND_SEEDS, true).unwrap();
        let base = trend_config(Objective::FedAvg, PartitionMode::Iid);
        let data = base.prepare().unwrap();
        assert_eq!((data.train.len(), data.test.len()), (4000, 1000));
        let baseline = centralized_baseline(
            &data.train,
            &data.test,
            &base.hyper_params(),
            base.baseline_epochs(),
            0,
        )
        .unwrap();
        TrendResults {
            baseline,
            iid_avg: suite(Objective::FedAvg, PartitionMode::Iid),
            iid_prox: suite(Objective::FedProx, PartitionMode::Iid),
            s2_avg: suite(Objective::FedAvg, PartitionMode::Shards(2)),
            s2_prox: suite(Objective::FedProx, PartitionMode::Shards(2)),
            s3_avg: suite(Objective::FedAvg, PartitionMode::Shards(3)),
            s3_prox: suite(Objective::FedProx, PartitionMode::Shards(3)),
            elapsed: start.elapsed(),
        }
    })
}

fn pct(s: &ExperimentSummary) -> String {
    format!("{:.2}+-{:.2}", 100.0 * s.mean, 100.0 * s.std)
}

#[test]
fn c5a_iid_on_par_with_centralized() {
    let r = trend_results();
    let gap_avg = (r.iid_avg.mean - r.baseline).abs();
    let gap_prox = (r.iid_prox.mean - r.baseline).abs();
    check(
        "5a",
        gap_avg <= 0.015 && gap_prox <= 0.015,
        format!(
            "centralized {:.2}, IID FedAvg {}, IID FedProx {} (gaps {:.2} / {:.2} pp <= 1.5 pp)",
            100.0 * r.baseline,
            pct(&r.iid_avg),
            pct(&r.iid_prox),
            100.0 * gap_avg,
            100.0 * gap_prox
        ),
    );
    within("5", r.elapsed, Duration::from_secs(300));
}

#[test]
fn c5b_shards_below_iid() {
    let r = trend_results();
    let drop_avg = r.iid_avg.mean - r.s2_avg.mean;
    let drop_prox = r.iid_prox.mean - r.s2_prox.mean;
    check(
        "5b",
        drop_avg >= 0.02 && drop_prox >= 0.02,
        format!(
            "IID - shards(2): FedAvg {:.2} pp, FedProx {:.2} pp (need >= 2 pp); FedAvg {} vs {}, FedProx {} vs {}",
            100.0 * drop_avg,
            100.0 * drop_prox,
            pct(&r.iid_avg),
            pct(&r.s2_avg),
            pct(&r.iid_prox),
            pct(&r.s2_prox)
        ),
    );
}

#[test]
fn c5c_fedprox_at_least_fedavg_under_shards() {
    let r = trend_results();
    check(
        "5c",
        r.s2_prox.mean >= r.s2_avg.mean && r.s3_prox.mean >= r.s3_avg.mean,
        format!(
            "shards(2): FedProx {} vs FedAvg {}; shards(3): FedProx {} vs FedAvg {}",
            pct(&r.s2_prox),
            pct(&r.s2_avg),
            pct(&r.s3_prox),
            pct(&r.s3_avg)
        ),
    );
}

#[test]
fn c5d_shards_std_exceeds_iid_std() {
    let r = trend_results();
    check(
        "5d",
        r.s2_avg.std > r.iid_avg.std,
        format!(
            "FedAvg std: shards(2) {:.4} vs IID {:.4} (need strictly greater)",
            r.s2_avg.std, r.iid_avg.std
        ),
    );
}

#[test]
fn c6_single_client_federation_equals_centralized() {
    let mut diffs = Vec::new();
    for (separation, epochs, seed) in [(6.0, 3, 0u64), (1.0, 2, 5), (1.5, 4, 9)] {
        let cfg = ExperimentConfig {
            n_clients: 1,
            fraction: 1.0,
            rounds: 1,
            local_epochs: epochs,
            seed,
            dataset: DatasetSource::Synthetic {
                n_samples: 2000,
                n_classes: 4,
                feature_dim: 16,
                separation,
            },
            ..ExperimentConfig::default()
        };
        let fed = run_federation(&cfg).unwrap().history[0].test_accuracy;
        let data = cfg.prepare().unwrap();
        let central = centralized_baseline(&data.train, &data.test, &cfg.hyper_params(), epochs, seed).unwrap();
        diffs.push((separation, fed, central, fed - central));
    }
    check(
        "6",
        diffs.iter().all(|d| d.3 == 0.0),
        format!("(separation, federated, centralized, difference): {diffs:?}"),
    );
}

#[test]
fn c7_cmd_run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.cfg");
    std::fs::write(&config, "partition = shards(2)\nrounds = 100\nseed = 7\n").unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in [1usize, 1, 4, 0].into_iter().enumerate() {
        let opts = CommonOptions {
            config: config.clone(),
            out: dir.path().join(format!("run{i}")),
            quiet: true,
            threads,
        };
        cmd_run(&opts, false).unwrap();
        outputs.push(std::fs::read(opts.out.join("rounds.csv")).unwrap());
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    let rows = String::from_utf8_lossy(&outputs[0]).lines().count() - 1;
    check(
        "7",
        identical && rows == 100,
        format!("4 runs (threads 1, 1, 4, all) -> identical rounds.csv: {identical}, {rows} data rows"),
    );
}

#[test]
fn c8_selection_frequency() {
    let mut counts = [0usize; 10];
    for round in 0..1000 {
        for id in select_clients(10, 0.5, 8, round).unwrap() {
            counts[id] += 1;
        }
    }
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / 1000.0).collect();
    check(
        "8",
        freqs.iter().all(|f| (0.45..=0.55).contains(f)),
        format!("per-client selection frequency over 1000 rounds: {freqs:?}"),
    );
}
