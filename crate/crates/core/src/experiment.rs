//! Multi-arm, multi-seed runs, their on-disk artifacts and buffer
//! inspection.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Arm, ExperimentSpec, TrainConfig};
use crate::error::Result;
use crate::experience::RetiredSet;
use crate::metrics::MetricsWriter;
use crate::optimizer::{train_step, StepReport, TrainState};
use crate::par;
use crate::policy::Vocabulary;
use crate::snapshot::BufferSnapshot;
use crate::task::{generate_suite, TaskSuite};

/// The shared vocabulary and task suite of an experiment.
pub fn build_suite(spec: &ExperimentSpec) -> Result<(Vocabulary, TaskSuite)> {
    let vocab = Vocabulary::with_trailing_end(spec.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.suite_seed);
    let suite = generate_suite(&spec.suite_spec, vocab, &mut rng)?;
    Ok((vocab, suite))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub arm: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub reports: Vec<StepReport>,
    pub snapshot: BufferSnapshot,
}

impl RunResult {
    pub fn final_pass(&self) -> f64 {
        self.reports.last().map_or(0.0, |r| r.suite_pass_at_1)
    }

    pub fn best_pass(&self) -> f64 {
        self.reports
            .iter()
            .map(|r| r.suite_pass_at_1)
            .fold(0.0, f64::max)
    }

    pub fn file_stem(&self) -> String {
        format!("{}_seed{}", self.arm, self.seed)
    }
}

pub fn run_single(
    spec: &ExperimentSpec,
    vocab: Vocabulary,
    suite: &TaskSuite,
    arm: &Arm,
    seed: u64,
) -> Result<RunResult> {
    let mut cfg = arm.apply(&spec.config);
    cfg.seed = seed;
    cfg.validate()?;
    let mut state = TrainState::new(suite.clone(), vocab, &cfg)?;
    let mut reports = Vec::with_capacity(spec.steps);
    for _ in 0..spec.steps {
        reports.push(train_step(&mut state, &cfg)?);
    }
    log::info!(
        "{} seed {}: final Pass@1 {:.4}, buffer {}, retired {}",
        arm.label(),
        seed,
        reports.last().map_or(0.0, |r| r.suite_pass_at_1),
        state.buffer.len(),
        state.retired.len()
    );
    Ok(RunResult {
        arm: arm.label(),
        seed,
        config: cfg,
        reports,
        snapshot: BufferSnapshot {
            step: state.step,
            buffer: state.buffer,
            retired: state.retired,
        },
    })
}

/// Every `(arm, seed)` pair, in arm-major order. Runs execute in parallel;
/// each is deterministic on its own.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunResult>> {
    let (vocab, suite) = build_suite(spec)?;
    let jobs: Vec<(&Arm, u64)> = spec
        .arms
        .iter()
        .flat_map(|a| spec.seeds.iter().map(move |&s| (a, s)))
        .collect();
    par::map_slice(&jobs, |&(arm, seed)| {
        run_single(spec, vocab, &suite, arm, seed)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: usize,
    pub final_mean: f64,
    pub final_std: f64,
    pub best_mean: f64,
    pub best_std: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One row per arm, in the order arms first appear.
pub fn summarize(runs: &[RunResult]) -> Vec<ArmSummary> {
    let mut arms: Vec<&str> = Vec::new();
    for r in runs {
        if !arms.contains(&r.arm.as_str()) {
            arms.push(&r.arm);
        }
    }
    arms.into_iter()
        .map(|arm| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.arm == arm).collect();
            let finals: Vec<f64> = mine.iter().map(|r| r.final_pass()).collect();
            let bests: Vec<f64> = mine.iter().map(|r| r.best_pass()).collect();
            let (final_mean, final_std) = mean_std(&finals);
            let (best_mean, best_std) = mean_std(&bests);
            ArmSummary {
                arm: arm.to_string(),
                seeds: mine.len(),
                final_mean,
                final_std,
                best_mean,
                best_std,
            }
        })
        .collect()
}

pub fn summary_table(rows: &[ArmSummary]) -> String {
    let width = rows.iter().map(|r| r.arm.len()).max().unwrap_or(3).max(3);
    let mut out = format!(
        "{:width$}  seeds  final_mean  final_std  best_mean  best_std\n",
        "arm"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:width$}  {:>5}  {:>10.4}  {:>9.4}  {:>9.4}  {:>8.4}",
            r.arm, r.seeds, r.final_mean, r.final_std, r.best_mean, r.best_std
        );
    }
    out
}

/// Seed-averaged curves per arm: `arm,step,suite_pass_at_1,pass_at_1,buffer_size,retired_size`.
pub fn curves_csv(runs: &[RunResult]) -> String {
    let mut out = String::from("arm,step,suite_pass_at_1,pass_at_1,buffer_size,retired_size\n");
    for row in summarize(runs) {
        let mine: Vec<&RunResult> = runs.iter().filter(|r| r.arm == row.arm).collect();
        let steps = mine.iter().map(|r| r.reports.len()).min().unwrap_or(0);
        let n = mine.len() as f64;
        for s in 0..steps {
            let avg = |f: &dyn Fn(&StepReport) -> f64| {
                mine.iter().map(|r| f(&r.reports[s])).sum::<f64>() / n
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                row.arm,
                mine[0].reports[s].step,
                avg(&|r| r.suite_pass_at_1),
                avg(&|r| r.pass_at_1),
                avg(&|r| r.buffer_size as f64),
                avg(&|r| r.retired_size as f64)
            );
        }
    }
    out
}

/// Writes per-run metrics and snapshots plus the experiment summary:
///
/// ```text
/// out/
///   suite.txt
///   <arm>_seed<s>.jsonl, .csv, .snapshot
///   summary.txt, summary.json, curves.csv
/// ```
pub fn write_outputs(
    out_dir: &Path,
    suite: &TaskSuite,
    runs: &[RunResult],
) -> Result<Vec<ArmSummary>> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("suite.txt"), suite.to_text())?;
    for run in runs {
        let stem = run.file_stem();
        let mut writer = MetricsWriter::create(
            &out_dir.join(format!("{stem}.jsonl")),
            &out_dir.join(format!("{stem}.csv")),
        )?;
        for r in &run.reports {
            writer.write(r)?;
        }
        writer.finish()?;
        run.snapshot
            .save(&out_dir.join(format!("{stem}.snapshot")))?;
    }
    let rows = summarize(runs);
    std::fs::write(out_dir.join("summary.txt"), summary_table(&rows))?;
    let json = serde_json::to_string_pretty(&rows).expect("summary serializes");
    std::fs::write(out_dir.join("summary.json"), json + "\n")?;
    std::fs::write(out_dir.join("curves.csv"), curves_csv(runs))?;
    Ok(rows)
}

/// Bucket histogram and invariant report for a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferInspection {
    pub group_size: usize,
    pub step: u64,
    /// Questions per success count `k = 0..=K`.
    pub histogram: Vec<usize>,
    pub retired: usize,
    /// Mean cached selection metric of stored trajectories per `k`.
    pub bucket_mean_metric: Vec<Option<f64>>,
    pub violations: Vec<String>,
}

pub fn inspect(snapshot: &BufferSnapshot) -> BufferInspection {
    let k = snapshot.buffer.group_size();
    let mut histogram = vec![0; k + 1];
    let mut sums = vec![(0.0, 0usize); k + 1];
    for (_, entry) in snapshot.buffer.iter() {
        let bucket = ((entry.latest_acc * k as f64).round().max(0.0) as usize).min(k);
        histogram[bucket] += 1;
        for m in entry.stored.iter().filter_map(|t| t.cached_metric) {
            sums[bucket].0 += m;
            sums[bucket].1 += 1;
        }
    }
    BufferInspection {
        group_size: k,
        step: snapshot.step,
        histogram,
        retired: snapshot.retired.len(),
        bucket_mean_metric: sums
            .into_iter()
            .map(|(s, n)| (n > 0).then(|| s / n as f64))
            .collect(),
        violations: snapshot.buffer.violations(&snapshot.retired),
    }
}

impl BufferInspection {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "step {}  K {}  buffered {}  retired {}\n",
            self.step,
            self.group_size,
            self.histogram.iter().sum::<usize>(),
            self.retired
        );
        out.push_str("k  questions  mean_metric\n");
        for (k, (&n, m)) in self
            .histogram
            .iter()
            .zip(&self.bucket_mean_metric)
            .enumerate()
        {
            let metric = m.map_or("-".to_string(), |m| format!("{m:.4}"));
            let _ = writeln!(out, "{k}  {n:>9}  {metric:>11}");
        }
        if self.violations.is_empty() {
            out.push_str("invariants ok\n");
        } else {
            let _ = writeln!(out, "{} invariant violation(s):", self.violations.len());
            for v in &self.violations {
                let _ = writeln!(out, "  {v}");
            }
        }
        out
    }
}

/// Empty snapshot for a given group size.
pub fn empty_snapshot(group_size: usize) -> BufferSnapshot {
    BufferSnapshot {
        step: 0,
        buffer: crate::experience::ReplayBuffer::new(group_size, None),
        retired: RetiredSet::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experience::BufferEntry;
    use crate::task::QuestionId;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec::parse(
            "steps = 5\nseeds = 1, 2\narms = exgrpo, on_policy\nstrata = 1:4, 2:4\nbatch_size = 4",
        )
        .unwrap()
    }

    #[test]
    fn summary_has_one_row_per_arm() {
        let runs = run_experiment(&tiny_spec()).unwrap();
        assert_eq!(runs.len(), 4);
        assert!(runs.iter().all(|r| r.reports.len() == 5));
        let rows = summarize(&runs);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].arm, "exgrpo");
        assert_eq!(rows[1].seeds, 2);
        assert!(summary_table(&rows).lines().count() == 3);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn inspection_flags_degenerate_accuracy() {
        let mut snap = empty_snapshot(4);
        let empty = inspect(&snap);
        assert_eq!(empty.histogram, vec![0; 5]);
        assert!(empty.violations.is_empty());
        snap.buffer.insert_raw(
            QuestionId(1),
            BufferEntry {
                latest_acc: 1.0,
                stored: vec![],
            },
        );
        let r = inspect(&snap);
        assert_eq!(r.histogram[4], 1);
        assert!(!r.violations.is_empty());
    }
}
