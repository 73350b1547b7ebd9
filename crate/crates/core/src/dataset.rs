//! Labeled feature data, synthetic generation, and client partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seeding::{self, Purpose};
use crate::tensor::Batch;

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::domain("feature_dim must be positive"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::shape(format!(
                "{} feature values for {} samples of width {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::domain(format!("label {bad} out of range for {n_classes} classes")));
        }
        if labels.len() < n_classes {
            return Err(Error::domain(format!(
                "{} samples cannot cover {n_classes} classes",
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dataset contains non-finite features".into()));
        }
        let d = Self {
            features,
            labels,
            n_classes,
            feature_dim,
        };
        if let Some(empty) = d.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::domain(format!("class {empty} has no samples")));
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Borrowed batch over the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch<'_>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::domain(format!("sample index {bad} out of range")));
        }
        Batch::new(
            indices.iter().map(|&i| self.row(i)).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Batch over every sample, in storage order.
    pub fn full_batch(&self) -> Result<Batch<'_>> {
        Batch::from_matrix(&self.features, self.feature_dim, self.labels.clone())
    }

    /// New dataset holding the selected rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::domain(format!("sample index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.n_classes, self.feature_dim)
    }
}

/// Draws `n_samples` points where class `c` is an isotropic unit Gaussian
/// centered at `separation * e_c`. Sample `i` has label `i % n_classes`.
pub fn generate_synthetic(
    n_samples: usize,
    n_classes: usize,
    feature_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::domain("need at least 2 classes"));
    }
    if n_samples < n_classes {
        return Err(Error::domain(format!(
            "n_samples ({n_samples}) must be at least n_classes ({n_classes})"
        )));
    }
    if feature_dim < n_classes {
        return Err(Error::domain(format!(
            "feature_dim ({feature_dim}) must be at least n_classes ({n_classes})"
        )));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(Error::domain(format!("separation must be positive, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n_samples * feature_dim);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % n_classes;
        for j in 0..feature_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean = if j == class { separation } else { 0.0 };
            features.push(mean + noise);
        }
        labels.push(class);
    }
    Dataset::new(features, labels, n_classes, feature_dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    Iid,
    /// Single-label shards, `k` per client.
    Shards(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub n_clients: usize,
    pub seed: u64,
}

/// One client's sample indices into the parent dataset, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientSplit {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientSplit {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn partition(d: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientSplit>> {
    match spec.mode {
        PartitionMode::Iid => partition_iid(d, spec.n_clients, spec.seed),
        PartitionMode::Shards(k) => partition_shards(d, spec.n_clients, k, spec.seed),
    }
}

/// Random permutation cut into `n_clients` contiguous chunks; the first
/// `n % n_clients` chunks get one extra sample.
pub fn partition_iid(d: &Dataset, n_clients: usize, seed: u64) -> Result<Vec<ClientSplit>> {
    if n_clients == 0 {
        return Err(Error::domain("n_clients must be positive"));
    }
    if n_clients > d.len() {
        return Err(Error::domain(format!(
            "{n_clients} clients exceed {} samples",
            d.len()
        )));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut seeding::stream(seed, Purpose::Partition, &[]));
    let sizes = near_equal_sizes(d.len(), n_clients);
    let mut start = 0;
    Ok(sizes
        .into_iter()
        .enumerate()
        .map(|(client_id, size)| {
            let mut indices = order[start..start + size].to_vec();
            indices.sort_unstable();
            start += size;
            ClientSplit { client_id, indices }
        })
        .collect())
}

fn near_equal_sizes(total: usize, parts: usize) -> Vec<usize> {
    let (q, r) = (total / parts, total % parts);
    (0..parts).map(|i| q + usize::from(i < r)).collect()
}

/// Number of shards each class receives when `n_shards` are split across
/// classes in proportion to `class_counts`.
///
/// Largest-remainder rounding, ties to the lower class index. Every class
/// gets at least one shard; the top-up is taken from the class holding the
/// most shards. Errors if a class would need more shards than it has samples.
pub fn allocate_shards(class_counts: &[usize], n_shards: usize) -> Result<Vec<usize>> {
    let n_classes = class_counts.len();
    let total: usize = class_counts.iter().sum();
    if n_shards < n_classes {
        return Err(Error::domain(format!(
            "class {n_shards} would receive no shard: {n_shards} shards for {n_classes} classes"
        )));
    }
    if let Some(empty) = class_counts.iter().position(|&c| c == 0) {
        return Err(Error::domain(format!("class {empty} has no samples to shard")));
    }
    // Integer quotas: n_shards * count / total, remainder kept exactly.
    let mut alloc: Vec<usize> = Vec::with_capacity(n_classes);
    let mut remainders: Vec<(usize, usize)> = Vec::with_capacity(n_classes);
    for (c, &count) in class_counts.iter().enumerate() {
        let scaled = n_shards * count;
        alloc.push(scaled / total);
        remainders.push((scaled % total, c));
    }
    let assigned: usize = alloc.iter().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in remainders.iter().take(n_shards - assigned) {
        alloc[c] += 1;
    }
    while let Some(starved) = alloc.iter().position(|&a| a == 0) {
        let donor = (0..n_classes)
            .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
            .expect("at least one class");
        alloc[donor] -= 1;
        alloc[starved] += 1;
    }
    for (c, (&a, &count)) in alloc.iter().zip(class_counts).enumerate() {
        if a > count {
            return Err(Error::domain(format!(
                "class {c} has {count} samples but needs {a} shards"
            )));
        }
    }
    Ok(alloc)
}

/// A single-label block of samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub label: usize,
    pub indices: Vec<usize>,
}

/// Cuts every class into near-equal shards after a seeded shuffle, with
/// shard counts from [`allocate_shards`]. Returned in class order.
pub fn make_shards(d: &Dataset, n_shards: usize, seed: u64) -> Result<Vec<Shard>> {
    if n_shards > d.len() {
        return Err(Error::domain(format!(
            "{n_shards} shards exceed {} samples",
            d.len()
        )));
    }
    let alloc = allocate_shards(&d.class_counts(), n_shards)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.n_classes()];
    for (i, &l) in d.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut shards = Vec::with_capacity(n_shards);
    for (label, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut seeding::stream(seed, Purpose::Partition, &[1, label as u64]));
        let mut start = 0;
        for size in near_equal_sizes(members.len(), alloc[label]) {
            shards.push(Shard {
                label,
                indices: members[start..start + size].to_vec(),
            });
            start += size;
        }
    }
    Ok(shards)
}

/// Groups samples by label, cuts each class into single-label shards, and
/// deals `shards_per_client` random shards to every client.
pub fn partition_shards(
    d: &Dataset,
    n_clients: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<Vec<ClientSplit>> {
    if n_clients == 0 {
        return Err(Error::domain("n_clients must be positive"));
    }
    if shards_per_client == 0 {
        return Err(Error::domain("shards_per_client must be at least 1"));
    }
    let mut shards = make_shards(d, n_clients * shards_per_client, seed)?;
    shards.shuffle(&mut seeding::stream(seed, Purpose::Partition, &[2]));

    Ok(shards
        .chunks_exact(shards_per_client)
        .enumerate()
        .map(|(client_id, group)| {
            let mut indices: Vec<usize> = group.iter().flat_map(|s| s.indices.iter().copied()).collect();
            indices.sort_unstable();
            ClientSplit { client_id, indices }
        })
        .collect())
}

/// Per-class sample counts within one split.
pub fn label_distribution(d: &Dataset, s: &ClientSplit) -> Result<Vec<usize>> {
    let mut counts = vec![0; d.n_classes()];
    for &i in &s.indices {
        let label = d
            .labels()
            .get(i)
            .ok_or_else(|| Error::domain(format!("sample index {i} out of range")))?;
        counts[*label] += 1;
    }
    Ok(counts)
}

pub fn distinct_labels(counts: &[usize]) -> usize {
    counts.iter().filter(|&&c| c > 0).count()
}
