//! Replay buffer lifecycle: collection, partition by latest correctness,
//! retirement, Gaussian-weighted bucket sampling and per-question
//! trajectory selection.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::GroupRollout;
use crate::policy::{trajectory_entropy, ClassId, EntropyMode, PolicyParams, Trajectory};
use crate::task::QuestionId;

/// Metric minimized when picking a stored trajectory to replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SelectionMetric {
    #[default]
    MeanNll,
    MeanDistEntropy,
    Perplexity,
}

impl SelectionMetric {
    pub fn evaluate(self, params: &PolicyParams, class: ClassId, tokens: &[usize]) -> Result<f64> {
        match self {
            SelectionMetric::MeanNll => {
                trajectory_entropy(params, class, tokens, EntropyMode::MeanNll)
            }
            SelectionMetric::MeanDistEntropy => {
                trajectory_entropy(params, class, tokens, EntropyMode::MeanDistEntropy)
            }
            SelectionMetric::Perplexity => {
                Ok(trajectory_entropy(params, class, tokens, EntropyMode::MeanNll)?.exp())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub latest_acc: f64,
    pub stored: Vec<Trajectory>,
}

/// Map from question to its stored successful trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    group_size: usize,
    /// `None` keeps every distinct success.
    capacity_per_question: Option<usize>,
    entries: BTreeMap<QuestionId, BufferEntry>,
}

impl ReplayBuffer {
    pub fn new(group_size: usize, capacity_per_question: Option<usize>) -> Self {
        Self {
            group_size,
            capacity_per_question,
            entries: BTreeMap::new(),
        }
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn capacity_per_question(&self) -> Option<usize> {
        self.capacity_per_question
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: QuestionId) -> Option<&BufferEntry> {
        self.entries.get(&id)
    }

    pub fn get_mut(&mut self, id: QuestionId) -> Option<&mut BufferEntry> {
        self.entries.get_mut(&id)
    }

    pub fn contains(&self, id: QuestionId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&QuestionId, &BufferEntry)> {
        self.entries.iter()
    }

    /// Inserts an entry verbatim (snapshot loading, tests). No checks.
    pub fn insert_raw(&mut self, id: QuestionId, entry: BufferEntry) {
        self.entries.insert(id, entry);
    }

    pub fn remove(&mut self, id: QuestionId) -> Option<BufferEntry> {
        self.entries.remove(&id)
    }

    pub fn total_trajectories(&self) -> usize {
        self.entries.values().map(|e| e.stored.len()).sum()
    }

    /// Lists every violated buffer invariant.
    pub fn violations(&self, retired: &RetiredSet) -> Vec<String> {
        let mut out = Vec::new();
        let k = self.group_size as f64;
        for (id, e) in &self.entries {
            if retired.contains(*id) {
                out.push(format!("question {id} is both buffered and retired"));
            }
            let scaled = e.latest_acc * k;
            let nearest = scaled.round();
            if !(e.latest_acc > 0.0 && e.latest_acc < 1.0)
                || (scaled - nearest).abs() > 1e-9
                || nearest < 1.0
                || nearest > k - 1.0
            {
                out.push(format!(
                    "question {id} has accuracy {} outside {{1/K..(K-1)/K}}",
                    e.latest_acc
                ));
            }
            if e.stored.is_empty() {
                out.push(format!("question {id} has no stored trajectories"));
            }
            for (i, t) in e.stored.iter().enumerate() {
                if !t.is_success() {
                    out.push(format!(
                        "question {id} trajectory {i} has reward {:?}",
                        t.reward
                    ));
                }
                if t.question_id != *id {
                    out.push(format!(
                        "question {id} trajectory {i} belongs to {}",
                        t.question_id
                    ));
                }
            }
            if let Some(cap) = self.capacity_per_question {
                if e.stored.len() > cap {
                    out.push(format!(
                        "question {id} stores {} > capacity {cap}",
                        e.stored.len()
                    ));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RetiredSet {
    ids: BTreeSet<QuestionId>,
}

impl RetiredSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: QuestionId) -> bool {
        self.ids.insert(id)
    }

    pub fn contains(&self, id: QuestionId) -> bool {
        self.ids.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = QuestionId> + '_ {
        self.ids.iter().copied()
    }
}

/// What `record_group` did with a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Retired,
    Stored { added: usize },
    Unchanged,
}

/// Applies one verified group to the buffer and retired set.
///
/// The success count includes a replayed member. `s = K` retires the
/// question; `0 < s < K` stores the new successes and refreshes
/// `latest_acc`; `s = 0` leaves everything untouched. Retired questions are
/// never re-entered into the buffer.
pub fn record_group(
    buffer: &mut ReplayBuffer,
    retired: &mut RetiredSet,
    group: &GroupRollout,
) -> RecordOutcome {
    let k = group.size();
    let s = group.successes();
    let id = group.question_id;
    if s == k {
        buffer.entries.remove(&id);
        retired.insert(id);
        return RecordOutcome::Retired;
    }
    if s == 0 || retired.contains(id) {
        return RecordOutcome::Unchanged;
    }
    let cap = buffer.capacity_per_question;
    let entry = buffer.entries.entry(id).or_insert_with(|| BufferEntry {
        latest_acc: 0.0,
        stored: Vec::new(),
    });
    entry.latest_acc = s as f64 / k as f64;
    let mut added = 0;
    for t in group.trajectories.iter().filter(|t| t.is_success()) {
        if entry.stored.iter().any(|e| e.tokens == t.tokens) {
            continue;
        }
        entry.stored.push(t.clone());
        added += 1;
    }
    if let Some(cap) = cap {
        if entry.stored.len() > cap {
            let excess = entry.stored.len() - cap;
            entry.stored.drain(..excess);
        }
    }
    RecordOutcome::Stored { added }
}

/// Buffer keys grouped by success count `k = round(acc·K)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BucketPartition {
    pub buckets: BTreeMap<usize, Vec<QuestionId>>,
}

impl BucketPartition {
    /// Non-empty bucket keys in ascending order.
    pub fn nonempty(&self) -> Vec<usize> {
        self.buckets
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(&k, _)| k)
            .collect()
    }

    pub fn total(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn bucket_of(&self, id: QuestionId) -> Option<usize> {
        self.buckets
            .iter()
            .find(|(_, ids)| ids.contains(&id))
            .map(|(&k, _)| k)
    }
}

pub fn partition(buffer: &ReplayBuffer, group_size: usize) -> Result<BucketPartition> {
    let k = group_size as f64;
    let mut buckets: BTreeMap<usize, Vec<QuestionId>> = BTreeMap::new();
    for (&id, e) in &buffer.entries {
        let scaled = e.latest_acc * k;
        let nearest = scaled.round();
        if (scaled - nearest).abs() > 1e-9 || nearest < 1.0 || nearest > k - 1.0 {
            return Err(Error::CorruptAccuracy {
                acc: e.latest_acc,
                group_size,
            });
        }
        buckets.entry(nearest as usize).or_default().push(id);
    }
    Ok(BucketPartition { buckets })
}

/// Gaussian bucket weights `exp(-(k/K - μ)² / 2σ²)`, renormalized over the
/// given non-empty buckets.
pub fn bucket_weights(
    nonempty_buckets: &[usize],
    group_size: usize,
    mu: f64,
    sigma: f64,
) -> Result<Vec<f64>> {
    if nonempty_buckets.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let raw: Vec<f64> = nonempty_buckets
        .iter()
        .map(|&k| {
            let x = k as f64 / group_size as f64 - mu;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Multinomial draw by sequential binomials:
/// `X_i ~ Binomial(m, p_i / (1 - Σ_{j<i} p_j))`, `m ← m - X_i`.
pub fn multinomial_counts<R: Rng + ?Sized>(n: usize, p: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    if p.is_empty() {
        return Err(Error::InvalidProbabilities(
            "empty probability vector".into(),
        ));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidProbabilities(
            "negative or non-finite entry".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProbabilities(format!("entries sum to {sum}")));
    }
    let mut counts = vec![0usize; p.len()];
    let mut remaining = n as u64;
    let mut consumed = 0.0;
    let last = p.len() - 1;
    for (i, &pi) in p.iter().enumerate().take(last) {
        if remaining == 0 {
            break;
        }
        let rest = 1.0 - consumed;
        let cond = if rest > 0.0 {
            (pi / rest).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let x = Binomial::new(remaining, cond)
            .map_err(|e| Error::InvalidProbabilities(e.to_string()))?
            .sample(rng);
        counts[i] = x as usize;
        remaining -= x;
        consumed += pi;
    }
    counts[last] += remaining as usize;
    Ok(counts)
}

/// Bucket sampling with per-bucket provenance: `(bucket k, question)`.
///
/// Counts come from [`multinomial_counts`]; any bucket whose count exceeds
/// its size is clipped and the deficit is redrawn over the buckets that
/// still have room, with renormalized weights. Items inside a bucket are
/// drawn uniformly without replacement.
pub fn bucket_sample_with_buckets<R: Rng + ?Sized>(
    partition: &BucketPartition,
    weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<(usize, QuestionId)>> {
    let keys = partition.nonempty();
    if weights.len() != keys.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} non-empty buckets",
            weights.len(),
            keys.len()
        )));
    }
    let available = partition.total();
    if n > available {
        return Err(Error::BufferUnderflow {
            requested: n,
            available,
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let sizes: Vec<usize> = keys.iter().map(|k| partition.buckets[k].len()).collect();
    let mut counts = multinomial_counts(n, weights, rng)?;
    loop {
        let mut deficit = 0;
        for (c, &size) in counts.iter_mut().zip(&sizes) {
            if *c > size {
                deficit += *c - size;
                *c = size;
            }
        }
        if deficit == 0 {
            break;
        }
        let open: Vec<usize> = (0..keys.len()).filter(|&i| counts[i] < sizes[i]).collect();
        let open_mass: f64 = open.iter().map(|&i| weights[i]).sum();
        let renorm: Vec<f64> = if open_mass > 0.0 {
            open.iter().map(|&i| weights[i] / open_mass).collect()
        } else {
            vec![1.0 / open.len() as f64; open.len()]
        };
        let extra = multinomial_counts(deficit, &renorm, rng)?;
        for (&i, e) in open.iter().zip(extra) {
            counts[i] += e;
        }
    }
    let mut out = Vec::with_capacity(n);
    for ((k, &c), &size) in keys.iter().zip(&counts).zip(&sizes) {
        if c == 0 {
            continue;
        }
        let ids = &partition.buckets[k];
        for idx in rand::seq::index::sample(rng, size, c) {
            out.push((*k, ids[idx]));
        }
    }
    Ok(out)
}

pub fn bucket_sample<R: Rng + ?Sized>(
    partition: &BucketPartition,
    weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<QuestionId>> {
    Ok(bucket_sample_with_buckets(partition, weights, n, rng)?
        .into_iter()
        .map(|(_, id)| id)
        .collect())
}

/// Index of the stored trajectory with the lowest metric under `params`
/// (ties go to the lower index). Refreshes every candidate's cached metric.
pub fn select_trajectory_index(
    entry: &mut BufferEntry,
    params: &PolicyParams,
    class: ClassId,
    metric: SelectionMetric,
) -> Result<usize> {
    if entry.stored.is_empty() {
        return Err(Error::InvalidArgument(
            "buffer entry has no stored trajectories".into(),
        ));
    }
    let mut best = (0usize, f64::INFINITY);
    for (i, t) in entry.stored.iter_mut().enumerate() {
        let m = metric.evaluate(params, class, &t.tokens)?;
        t.cached_metric = Some(m);
        if m < best.1 {
            best = (i, m);
        }
    }
    Ok(best.0)
}

pub fn select_trajectory(
    entry: &mut BufferEntry,
    params: &PolicyParams,
    class: ClassId,
    metric: SelectionMetric,
) -> Result<Trajectory> {
    let i = select_trajectory_index(entry, params, class, metric)?;
    Ok(entry.stored[i].clone())
}
