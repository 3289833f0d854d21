//! Programmatic verification suite behind `exgrpo verify`.
//!
//! The fast tier checks importance-weighted unbiasedness, the need for the
//! correction, the shaping function and every analytic gradient. The full
//! tier adds Monte Carlo unbiasedness, the variance bound and sampler
//! goodness-of-fit tests.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::experience::{bucket_sample, multinomial_counts, BucketPartition};
use crate::grpo::{on_policy_objective, AdvantageMode, GroupRollout, ObjectiveOutput};
use crate::optimizer::{exgrpo_objective, experiential_objective, shaping, ShapingGranularity};
use crate::oracle::{
    check_unbiasedness_with, check_variance_bounds, finite_difference_gradient,
    monte_carlo_unbiasedness, relative_error, EnumerationSpace, MonteCarloReport, VarianceReport,
    WeightMode,
};
use crate::policy::{
    sample_trajectory, sequence_logprobs, ClassId, PolicyParams, Token, Trajectory, Vocabulary,
};
use crate::task::{Question, QuestionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Fast,
    Full,
}

impl std::str::FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Tier::Fast),
            "full" => Ok(Tier::Full),
            _ => Err(Error::InvalidArgument(format!(
                "unknown tier {s:?}, expected fast or full"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub tier: Tier,
    pub seed: u64,
    /// Replaces every importance weight with 1. Exists to show that the
    /// unbiasedness check catches a missing correction.
    pub force_unit_weight: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tier: Tier::Fast,
            seed: 0,
            force_unit_weight: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tier: Tier,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{}  {:width$}  {:>7.2}s  {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.seconds,
                c.detail
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Random instances

/// Fills every logit with `N(0, scale²)` noise.
pub fn randomize_logits<R: Rng + ?Sized>(params: &mut PolicyParams, scale: f64, rng: &mut R) {
    let normal = Normal::new(0.0, scale).expect("positive scale");
    for x in params.logits_mut() {
        *x = normal.sample(rng);
    }
}

/// A small enumerable problem: two policies over one question and a
/// group-dependent statistic `g(o) = Â(o, G)·h(o)`, where the other `K-1`
/// group rewards are fixed and `h` is an arbitrary table over sequences.
#[derive(Debug, Clone)]
pub struct UnbiasednessInstance {
    pub space: EnumerationSpace,
    pub past: PolicyParams,
    pub current: PolicyParams,
    pub other_rewards: Vec<u8>,
    pub table: Vec<f64>,
}

impl UnbiasednessInstance {
    fn index(&self, o: &[Token]) -> usize {
        o.iter().fold(0, |acc, &t| acc * self.space.vocab_size + t)
    }

    pub fn g(&self, o: &[Token]) -> f64 {
        let end = self.current.vocab().end_token();
        let r = f64::from(crate::task::verify(&self.space.question, o, end));
        let k = (self.other_rewards.len() + 1) as f64;
        let mean = (r + self
            .other_rewards
            .iter()
            .map(|&x| f64::from(x))
            .sum::<f64>())
            / k;
        (r - mean) * self.table[self.index(o)]
    }
}

pub fn random_unbiasedness_instance<R: Rng + ?Sized>(rng: &mut R) -> Result<UnbiasednessInstance> {
    let v = rng.random_range(2..=3);
    let l = rng.random_range(1..=3);
    let vocab = Vocabulary::with_trailing_end(v)?;
    let d = rng.random_range(1..=l);
    let answer: Vec<Token> = (0..d).map(|_| rng.random_range(0..v - 1)).collect();
    let question = Question {
        id: QuestionId(0),
        class_id: ClassId(0),
        difficulty: d,
        golden_answer: answer,
        latest_acc: None,
    };
    let space = EnumerationSpace::new(v, l, question)?;
    let mut past = PolicyParams::new(vocab, 1, l)?;
    let mut current = past.clone();
    randomize_logits(&mut past, 1.0, rng);
    randomize_logits(&mut current, 1.0, rng);
    let k = rng.random_range(2..=8);
    let other_rewards = (0..k - 1).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let table = (0..space.total()).map(|_| normal.sample(rng)).collect();
    Ok(UnbiasednessInstance {
        space,
        past,
        current,
        other_rewards,
        table,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    OnPolicy,
    Experiential,
    ExGrpo,
}

/// Groups and a config at a random `θ`. Fresh members were sampled from a
/// nearby `θ_old`, so importance ratios differ from 1 and clipping binds
/// on some tokens; replayed members come from an unrelated `θ_past`.
#[derive(Debug, Clone)]
pub struct ObjectiveCase {
    pub params: PolicyParams,
    pub on_groups: Vec<GroupRollout>,
    pub exp_groups: Vec<GroupRollout>,
    pub cfg: TrainConfig,
}

impl ObjectiveCase {
    pub fn evaluate(&self, kind: ObjectiveKind, params: &PolicyParams) -> Result<ObjectiveOutput> {
        match kind {
            ObjectiveKind::OnPolicy => on_policy_objective(&self.on_groups, params, &self.cfg),
            ObjectiveKind::Experiential => {
                experiential_objective(&self.exp_groups, params, &self.cfg)
            }
            ObjectiveKind::ExGrpo => {
                exgrpo_objective(&self.on_groups, &self.exp_groups, params, &self.cfg)
            }
        }
    }

    /// Relative error between the analytic gradient and central differences.
    pub fn gradient_error(&self, kind: ObjectiveKind) -> Result<f64> {
        let analytic = self.evaluate(kind, &self.params)?.gradient;
        let numeric = finite_difference_gradient(
            |p| self.evaluate(kind, p).map(|o| o.value).unwrap_or(f64::NAN),
            &self.params,
            1e-5,
        );
        Ok(relative_error(analytic.as_slice(), numeric.as_slice()))
    }
}

fn random_question<R: Rng + ?Sized>(id: u32, classes: u32, v: usize, rng: &mut R) -> Question {
    let d = rng.random_range(1..=2);
    Question {
        id: QuestionId(id),
        class_id: ClassId(rng.random_range(0..classes)),
        difficulty: d,
        golden_answer: (0..d).map(|_| rng.random_range(0..v - 1)).collect(),
        latest_acc: None,
    }
}

fn with_rewards(mut members: Vec<Trajectory>, rewards: &[u8]) -> Vec<Trajectory> {
    for (t, &r) in members.iter_mut().zip(rewards) {
        t.reward = Some(r);
    }
    members
}

/// Mixed 0/1 rewards: the first two members are forced to differ so every
/// group carries a non-zero advantage.
fn mixed_rewards<R: Rng + ?Sized>(k: usize, first: u8, rng: &mut R) -> Vec<u8> {
    let mut r: Vec<u8> = (0..k).map(|_| u8::from(rng.random_bool(0.5))).collect();
    r[0] = first;
    r[1] = 1 - first;
    r
}

pub fn random_objective_case<R: Rng + ?Sized>(
    use_clip: bool,
    use_shaping: bool,
    rng: &mut R,
) -> Result<ObjectiveCase> {
    let v = rng.random_range(3..=4);
    let classes = 2;
    let max_len = 3;
    let vocab = Vocabulary::with_trailing_end(v)?;
    let mut params = PolicyParams::new(vocab, classes as usize, max_len)?;
    randomize_logits(&mut params, 1.0, rng);
    let mut old = params.clone();
    let jitter = Normal::new(0.0, 0.3).expect("positive scale");
    for x in old.logits_mut() {
        *x += jitter.sample(rng);
    }
    let mut past = params.clone();
    randomize_logits(&mut past, 1.0, rng);

    let mut cfg = TrainConfig {
        use_clip,
        use_shaping,
        entropy_coeff: if rng.random_bool(0.5) { 0.0 } else { 0.01 },
        rho: rng.random_range(0.1..0.9),
        shaping_granularity: if rng.random_bool(0.5) {
            ShapingGranularity::Trajectory
        } else {
            ShapingGranularity::Token
        },
        advantage: AdvantageMode {
            scale_by_std: rng.random_bool(0.3),
        },
        ..TrainConfig::default()
    };
    if rng.random_bool(0.25) {
        cfg.masked_band = Some((0.25, 0.75));
    }

    let n_on = rng.random_range(1..=3);
    let n_exp = rng.random_range(1..=3);
    let mut on_groups = Vec::new();
    let mut exp_groups = Vec::new();
    for g in 0..n_on + n_exp {
        let q = random_question(g as u32, classes, v, rng);
        let k = rng.random_range(2..=4);
        if g < n_on {
            let members = (0..k)
                .map(|_| sample_trajectory(&old, &q, max_len, rng))
                .collect::<Result<Vec<_>>>()?;
            let rewards = mixed_rewards(k, 1, rng);
            on_groups.push(GroupRollout::new(
                q.id,
                q.class_id,
                with_rewards(members, &rewards),
                cfg.advantage,
                None,
            )?);
        } else {
            let len = rng.random_range(1..=max_len);
            let tokens: Vec<Token> = (0..len).map(|_| rng.random_range(0..v)).collect();
            let replayed = Trajectory {
                question_id: q.id,
                behavior_logprobs: sequence_logprobs(&past, q.class_id, &tokens)?,
                tokens,
                reward: Some(1),
                producer_version: 0,
                cached_metric: None,
            };
            let mut members = vec![replayed];
            for _ in 1..k {
                members.push(sample_trajectory(&old, &q, max_len, rng)?);
            }
            let rewards = mixed_rewards(k, 1, rng);
            exp_groups.push(GroupRollout::new(
                q.id,
                q.class_id,
                with_rewards(members, &rewards),
                cfg.advantage,
                Some(0),
            )?);
        }
    }
    Ok(ObjectiveCase {
        params,
        on_groups,
        exp_groups,
        cfg,
    })
}

// ---------------------------------------------------------------------------
// Sampler statistics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square with cells of expected count below 5 pooled.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> Result<ChiSquareReport> {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        if e < 5.0 {
            pooled.0 += o;
            pooled.1 += e;
        } else {
            cells.push((o, e));
        }
    }
    if pooled.1 > 0.0 {
        cells.push(pooled);
    }
    if cells.len() < 2 {
        return Err(Error::InvalidArgument(
            "chi-square needs at least two cells".into(),
        ));
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(ChiSquareReport {
        statistic,
        dof,
        p_value: dist.sf(statistic),
    })
}

/// Exact multinomial pmf over every count vector summing to `n`.
pub fn multinomial_pmf(n: usize, p: &[f64]) -> BTreeMap<Vec<usize>, f64> {
    fn rec(n: usize, p: &[f64], prefix: &mut Vec<usize>, out: &mut BTreeMap<Vec<usize>, f64>) {
        if prefix.len() + 1 == p.len() {
            let used: usize = prefix.iter().sum();
            let mut counts = prefix.clone();
            counts.push(n - used);
            let mut log_pmf = ln_factorial(n);
            for (&c, &pi) in counts.iter().zip(p) {
                log_pmf -= ln_factorial(c);
                if c > 0 {
                    log_pmf += c as f64 * pi.ln();
                }
            }
            out.insert(counts, log_pmf.exp());
            return;
        }
        let used: usize = prefix.iter().sum();
        for c in 0..=n - used {
            prefix.push(c);
            rec(n, p, prefix, out);
            prefix.pop();
        }
    }
    let mut out = BTreeMap::new();
    rec(n, p, &mut Vec::new(), &mut out);
    out
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Goodness of fit of [`multinomial_counts`] against the exact pmf.
pub fn multinomial_fit(n: usize, p: &[f64], draws: usize, seed: u64) -> Result<ChiSquareReport> {
    let pmf = multinomial_pmf(n, p);
    let mut tally: BTreeMap<Vec<usize>, f64> = pmf.keys().map(|k| (k.clone(), 0.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let c = multinomial_counts(n, p, &mut rng)?;
        *tally.get_mut(&c).expect("count vector sums to n") += 1.0;
    }
    let observed: Vec<f64> = tally.values().copied().collect();
    let expected: Vec<f64> = pmf.values().map(|q| q * draws as f64).collect();
    chi_square(&observed, &expected)
}

/// Uniformity of the `n`-subsets drawn from a single bucket of `m` items.
pub fn subset_uniformity_fit(
    m: usize,
    n: usize,
    draws: usize,
    seed: u64,
) -> Result<ChiSquareReport> {
    let partition = BucketPartition {
        buckets: BTreeMap::from([(1, (0..m as u32).map(QuestionId).collect())]),
    };
    let mut tally: BTreeMap<Vec<QuestionId>, f64> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let mut s = bucket_sample(&partition, &[1.0], n, &mut rng)?;
        s.sort();
        *tally.entry(s).or_insert(0.0) += 1.0;
    }
    let subsets = binomial_coefficient(m, n);
    let mut observed: Vec<f64> = tally.values().copied().collect();
    observed.resize(subsets, 0.0);
    let expected = vec![draws as f64 / subsets as f64; subsets];
    chi_square(&observed, &expected)
}

fn binomial_coefficient(m: usize, n: usize) -> usize {
    (0..n).fold(1, |acc, i| acc * (m - i) / (i + 1))
}

/// Number of `bucket_sample` calls that returned a repeated id, over a
/// three-bucket partition where one bucket is too small for its share.
pub fn duplicate_calls(calls: usize, seed: u64) -> Result<usize> {
    let partition = BucketPartition {
        buckets: BTreeMap::from([
            (1, vec![QuestionId(0)]),
            (4, (1..40).map(QuestionId).collect()),
            (7, (40..100).map(QuestionId).collect()),
        ]),
    };
    let weights = [0.8, 0.1, 0.1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..calls {
        let s = bucket_sample(&partition, &weights, 8, &mut rng)?;
        let unique: HashSet<_> = s.iter().collect();
        if unique.len() != s.len() {
            bad += 1;
        }
    }
    Ok(bad)
}

// ---------------------------------------------------------------------------
// Checks

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name: name.to_string(),
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Exact unbiasedness over `n` random instances; returns the worst gap.
pub fn unbiasedness_sweep(n: usize, seed: u64, mode: WeightMode) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let inst = random_unbiasedness_instance(&mut rng)?;
            let r = check_unbiasedness_with(
                &inst.past,
                &inst.current,
                &inst.space,
                |o| inst.g(o),
                mode,
                1e-10,
            )?;
            Ok(r.abs_diff)
        })
        .collect()
}

pub fn monte_carlo_sweep(n: usize, samples: usize, seed: u64) -> Result<Vec<MonteCarloReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let inst = random_unbiasedness_instance(&mut rng)?;
            monte_carlo_unbiasedness(
                &inst.past,
                &inst.current,
                &inst.space,
                |o| inst.g(o),
                samples,
                seed.wrapping_add(i as u64),
            )
        })
        .collect()
}

/// Variance-bound reports for each group size, `per_k` instances each.
pub fn variance_sweep(
    group_sizes: &[usize],
    per_k: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<VarianceReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &k in group_sizes {
        for _ in 0..per_k {
            let inst = random_unbiasedness_instance(&mut rng)?;
            let s = rng.random();
            out.push(check_variance_bounds(
                &inst.past,
                &inst.current,
                &inst.space,
                k,
                samples,
                s,
            )?);
        }
    }
    Ok(out)
}

/// Worst relative gradient error per objective over `n` configurations,
/// cycling through the clip × shaping grid.
pub fn gradient_sweep(kind: ObjectiveKind, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let case = random_objective_case(i % 2 == 1, (i / 2) % 2 == 0, &mut rng)?;
            case.gradient_error(kind)
        })
        .collect()
}

pub fn shaping_grid_is_monotone(beta: f64, points: usize) -> Result<bool> {
    let mut prev = shaping(0.0, beta)?;
    for i in 1..points {
        let w = 10.0 * i as f64 / (points - 1) as f64;
        let f = shaping(w, beta)?;
        if f <= prev || !(0.0..1.0).contains(&f) {
            return Ok(false);
        }
        prev = f;
    }
    Ok(true)
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, f64::max)
}

pub fn run(opts: &VerifyOptions) -> VerifyReport {
    let seed = opts.seed;
    let full = opts.tier == Tier::Full;
    let mut checks = Vec::new();
    let mode = if opts.force_unit_weight {
        WeightMode::Unit
    } else {
        WeightMode::Exact
    };

    checks.push(timed("unbiasedness (exact, 100 instances)", || {
        let gaps = unbiasedness_sweep(100, seed, mode)?;
        let worst = max(&gaps);
        Ok((
            worst <= 1e-10,
            format!("max |diff| = {worst:.3e} (tol 1e-10)"),
        ))
    }));

    checks.push(timed("correction necessity (W = 1)", || {
        let gaps = unbiasedness_sweep(100, seed ^ 0x5eed, WeightMode::Unit)?;
        let frac = gaps.iter().filter(|&&g| g > 1e-3).count() as f64 / gaps.len() as f64;
        Ok((
            frac >= 0.95,
            format!("{:.0}% of instances off by > 1e-3 (need 95%)", frac * 100.0),
        ))
    }));

    checks.push(timed("shaping values and monotonicity", || {
        let ok = shaping(0.0, 0.1)? == 0.0
            && shaping(0.1, 0.1)? == 0.5
            && (shaping(1.0, 0.1)? - 10.0 / 11.0).abs() <= f64::EPSILON
            && shaping_grid_is_monotone(0.1, 10_000)?;
        Ok((
            ok,
            "f(0)=0, f(beta)=1/2, f(1)=10/11, increasing on 1e4 points".into(),
        ))
    }));

    let n_grad = if full { 50 } else { 10 };
    for (kind, name) in [
        (ObjectiveKind::OnPolicy, "gradient: on-policy objective"),
        (
            ObjectiveKind::Experiential,
            "gradient: experiential objective",
        ),
        (ObjectiveKind::ExGrpo, "gradient: mixed objective"),
    ] {
        checks.push(timed(name, || {
            let errs = gradient_sweep(kind, n_grad, seed.wrapping_add(kind as u64 + 1))?;
            let worst = max(&errs);
            Ok((
                worst < 1e-4,
                format!("{n_grad} configs, max rel err = {worst:.2e} (tol 1e-4)"),
            ))
        }));
    }

    if full {
        checks.push(timed("unbiasedness (Monte Carlo, 1e5 samples)", || {
            let reports = monte_carlo_sweep(10, 100_000, seed)?;
            let worst = reports.iter().map(|r| r.z).fold(0.0, f64::max);
            let ok = reports.iter().all(|r| r.pass);
            Ok((ok, format!("10 instances, max z = {worst:.2} (limit 3)")))
        }));
        checks.push(timed("variance bound A' (K = 2, 4, 8)", || {
            let reports = variance_sweep(&[2, 4, 8], 5, 20_000, seed)?;
            let ok = reports.iter().all(|r| r.pass_a);
            let slack = reports
                .iter()
                .map(|r| r.empirical_var / r.bound_a_prime)
                .fold(0.0, f64::max);
            Ok((
                ok,
                format!("{} instances, max Var/A' = {slack:.3}", reports.len()),
            ))
        }));
        checks.push(timed("multinomial counts vs exact pmf", || {
            let r = multinomial_fit(10, &[0.2, 0.3, 0.5], 10_000, seed)?;
            Ok((
                r.p_value > 1e-3,
                format!(
                    "chi2 = {:.2}, dof {}, p = {:.4}",
                    r.statistic, r.dof, r.p_value
                ),
            ))
        }));
        checks.push(timed("within-bucket subset uniformity", || {
            let r = subset_uniformity_fit(5, 2, 10_000, seed)?;
            Ok((
                r.p_value > 1e-3,
                format!(
                    "chi2 = {:.2}, dof {}, p = {:.4}",
                    r.statistic, r.dof, r.p_value
                ),
            ))
        }));
        checks.push(timed("bucket sample duplicates", || {
            let bad = duplicate_calls(10_000, seed)?;
            Ok((bad == 0, format!("{bad} of 10000 calls repeated an id")))
        }));
    }

    VerifyReport {
        tier: opts.tier,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::enumerate_trajectories;

    #[test]
    fn multinomial_pmf_normalizes() {
        let pmf = multinomial_pmf(10, &[0.2, 0.3, 0.5]);
        assert_eq!(pmf.len(), 66);
        assert!((pmf.values().sum::<f64>() - 1.0).abs() < 1e-12);
        let mode = pmf[&vec![2, 3, 5]];
        assert!(pmf.values().all(|&p| p <= mode + 1e-15));
    }

    #[test]
    fn chi_square_of_exact_counts_is_zero() {
        let r = chi_square(&[10.0, 20.0, 30.0], &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 2);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert_eq!(binomial_coefficient(5, 2), 10);
    }

    #[test]
    fn instance_statistic_depends_on_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = random_unbiasedness_instance(&mut rng).unwrap();
        let seqs = enumerate_trajectories(&inst.space);
        assert!(seqs.iter().any(|s| inst.g(s) != 0.0));
    }

    #[test]
    fn tier_parsing() {
        assert_eq!("fast".parse::<Tier>().unwrap(), Tier::Fast);
        assert_eq!("full".parse::<Tier>().unwrap(), Tier::Full);
        assert!("slow".parse::<Tier>().is_err());
    }
}
