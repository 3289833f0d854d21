//! Brute-force oracles over small, fully enumerable trajectory spaces.
//!
//! Sequences here are fixed-length: the end token does not terminate
//! generation, so the `V^L` sequences of an [`EnumerationSpace`] carry the
//! whole probability mass of an autoregressive policy truncated at `L`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::group_advantages;
use crate::optimizer::shaping;
use crate::par;
use crate::policy::{
    logprob_gradient, sequence_logprobs, softmax_with_log, ClassId, Gradient, PolicyParams, Token,
};
use crate::task::{verify, Question};

/// Largest space the oracle will enumerate.
pub const ORACLE_LIMIT: u64 = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationSpace {
    pub vocab_size: usize,
    pub length: usize,
    pub question: Question,
}

impl EnumerationSpace {
    pub fn new(vocab_size: usize, length: usize, question: Question) -> Result<Self> {
        let total = (vocab_size as u64)
            .checked_pow(length as u32)
            .unwrap_or(u64::MAX);
        if vocab_size > 4 || length > 4 || total > ORACLE_LIMIT {
            return Err(Error::OracleLimit(total));
        }
        if vocab_size == 0 || length == 0 {
            return Err(Error::InvalidArgument("empty enumeration space".into()));
        }
        Ok(Self {
            vocab_size,
            length,
            question,
        })
    }

    pub fn total(&self) -> usize {
        self.vocab_size.pow(self.length as u32)
    }

    fn class(&self) -> ClassId {
        self.question.class_id
    }
}

/// Every sequence in lexicographic order.
pub fn enumerate_trajectories(space: &EnumerationSpace) -> Vec<Vec<Token>> {
    let (v, l) = (space.vocab_size, space.length);
    (0..space.total())
        .map(|mut code| {
            let mut seq = vec![0; l];
            for slot in seq.iter_mut().rev() {
                *slot = code % v;
                code /= v;
            }
            seq
        })
        .collect()
}

pub fn sequence_probability(
    params: &PolicyParams,
    class: ClassId,
    tokens: &[Token],
) -> Result<f64> {
    Ok(sequence_logprobs(params, class, tokens)?
        .iter()
        .sum::<f64>()
        .exp())
}

/// `W(o; θ, θ_past) = Π_t π_θ(o_t|·) / π_past(o_t|·)`
pub fn trajectory_weight(
    current: &PolicyParams,
    past: &PolicyParams,
    class: ClassId,
    tokens: &[Token],
) -> Result<f64> {
    let cur = sequence_logprobs(current, class, tokens)?;
    let old = sequence_logprobs(past, class, tokens)?;
    Ok(cur.iter().zip(&old).map(|(c, o)| c - o).sum::<f64>().exp())
}

fn check_space(params: &PolicyParams, space: &EnumerationSpace) -> Result<()> {
    if params.vocab().size() != space.vocab_size || params.max_len() < space.length {
        return Err(Error::InvalidArgument(format!(
            "policy (vocab {}, max_len {}) does not cover space (vocab {}, length {})",
            params.vocab().size(),
            params.max_len(),
            space.vocab_size,
            space.length
        )));
    }
    Ok(())
}

/// `(sequence, probability)` pairs with the mass checked to sum to 1.
fn weighted_sequences(
    params: &PolicyParams,
    space: &EnumerationSpace,
) -> Result<Vec<(Vec<Token>, f64)>> {
    check_space(params, space)?;
    let seqs = enumerate_trajectories(space);
    let probs = par::map_slice(&seqs, |s| sequence_probability(params, space.class(), s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mass: f64 = probs.iter().sum();
    if (mass - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "enumerated mass {mass} differs from 1"
        )));
    }
    Ok(seqs.into_iter().zip(probs).collect())
}

/// `Σ_o π(o) g(o)`
pub fn exact_expectation<G>(params: &PolicyParams, space: &EnumerationSpace, g: G) -> Result<f64>
where
    G: Fn(&[Token]) -> f64,
{
    Ok(weighted_sequences(params, space)?
        .iter()
        .map(|(s, p)| p * g(s))
        .sum())
}

/// How the replayed trajectory is reweighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightMode {
    /// Exact ratio `W`.
    Exact,
    /// Shaped ratio `f(W)`.
    Shaped { beta: f64 },
    /// `W ≡ 1`: no correction at all.
    Unit,
}

fn apply_weight(mode: WeightMode, w: f64) -> f64 {
    match mode {
        WeightMode::Exact => w,
        WeightMode::Shaped { beta } => shaping(w, beta).expect("ratio is non-negative"),
        WeightMode::Unit => 1.0,
    }
}

pub fn is_weighted_expectation_with<G>(
    past: &PolicyParams,
    current: &PolicyParams,
    space: &EnumerationSpace,
    g: G,
    mode: WeightMode,
) -> Result<f64>
where
    G: Fn(&[Token]) -> f64,
{
    check_space(current, space)?;
    let mut total = 0.0;
    for (s, p) in weighted_sequences(past, space)? {
        let w = trajectory_weight(current, past, space.class(), &s)?;
        total += p * apply_weight(mode, w) * g(&s);
    }
    Ok(total)
}

/// `Σ_o π_past(o) W(o; current, past) g(o)`
pub fn is_weighted_expectation<G>(
    past: &PolicyParams,
    current: &PolicyParams,
    space: &EnumerationSpace,
    g: G,
) -> Result<f64>
where
    G: Fn(&[Token]) -> f64,
{
    is_weighted_expectation_with(past, current, space, g, WeightMode::Exact)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnbiasednessReport {
    /// Importance-weighted expectation under the past policy.
    pub lhs: f64,
    /// On-policy expectation under the current policy.
    pub rhs: f64,
    pub abs_diff: f64,
    pub pass: bool,
}

pub fn check_unbiasedness_with<G>(
    past: &PolicyParams,
    current: &PolicyParams,
    space: &EnumerationSpace,
    g: G,
    mode: WeightMode,
    tol: f64,
) -> Result<UnbiasednessReport>
where
    G: Fn(&[Token]) -> f64,
{
    let lhs = is_weighted_expectation_with(past, current, space, &g, mode)?;
    let rhs = exact_expectation(current, space, &g)?;
    let abs_diff = (lhs - rhs).abs();
    Ok(UnbiasednessReport {
        lhs,
        rhs,
        abs_diff,
        pass: abs_diff <= tol,
    })
}

pub fn check_unbiasedness<G>(
    past: &PolicyParams,
    current: &PolicyParams,
    space: &EnumerationSpace,
    g: G,
    tol: f64,
) -> Result<UnbiasednessReport>
where
    G: Fn(&[Token]) -> f64,
{
    check_unbiasedness_with(past, current, space, g, WeightMode::Exact, tol)
}

/// Samples a fixed-length sequence (the end token does not stop it).
pub fn sample_fixed_length<R: Rng + ?Sized>(
    params: &PolicyParams,
    class: ClassId,
    length: usize,
    rng: &mut R,
) -> Result<Vec<Token>> {
    let mut seq = Vec::with_capacity(length);
    for _ in 0..length {
        let row = params.context_row(class, &seq)?;
        let (probs, _) = softmax_with_log(params.row(row));
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut tok = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                tok = i;
                break;
            }
        }
        seq.push(tok);
    }
    Ok(seq)
}

const MC_CHUNKS: usize = 64;

/// Draws `n` values of `f(rng)` in fixed chunks with independent streams;
/// the result does not depend on thread count.
fn monte_carlo<T, F>(n: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync + Send,
{
    let chunks = par::map_indexed(MC_CHUNKS, |c| -> Result<Vec<T>> {
        let lo = n * c / MC_CHUNKS;
        let hi = n * (c + 1) / MC_CHUNKS;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        (lo..hi).map(|_| f(&mut rng)).collect()
    });
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub estimate: f64,
    pub std_err: f64,
    pub exact: f64,
    /// `|estimate - exact| / std_err`
    pub z: f64,
    pub pass: bool,
}

/// Monte Carlo form of the unbiasedness identity: sample `o ~ π_past`,
/// average `W·g`, compare against the exact on-policy expectation at 3σ.
pub fn monte_carlo_unbiasedness<G>(
    past: &PolicyParams,
    current: &PolicyParams,
    space: &EnumerationSpace,
    g: G,
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloReport>
where
    G: Fn(&[Token]) -> f64 + Sync,
{
    let exact = exact_expectation(current, space, &g)?;
    let class = space.class();
    let xs = monte_carlo(n_samples, seed, |rng| {
        let s = sample_fixed_length(past, class, space.length, rng)?;
        Ok(trajectory_weight(current, past, class, &s)? * g(&s))
    })?;
    let (mean, var) = mean_var(&xs);
    let std_err = (var / n_samples as f64).sqrt();
    let diff = (mean - exact).abs();
    let z = if std_err > 0.0 {
        diff / std_err
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(MonteCarloReport {
        estimate: mean,
        std_err,
        exact,
        z,
        pass: diff <= 3.0 * std_err + 1e-12,
    })
}

/// Sample mean and (population) variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub group_size: usize,
    pub n_samples: usize,
    pub empirical_var: f64,
    /// Standard error of `empirical_var`.
    pub var_std_err: f64,
    /// Exact `max_o W(o)`.
    #[serde(rename = "M")]
    pub m: f64,
    /// Largest per-token ratio over all contexts and tokens.
    pub token_ratio_cap: f64,
    /// `token_ratio_cap^L`, the trajectory bound implied by the token cap.
    pub m_from_token_cap: f64,
    #[serde(rename = "E_U2")]
    pub e_u2: f64,
    #[serde(rename = "E_W2U2")]
    pub e_w2u2: f64,
    pub bound_a: f64,
    pub bound_a_prime: f64,
    pub bound_b: f64,
    pub bound_b_prime: f64,
    pub pass_a: bool,
    /// Only meaningful when group members are close to uncorrelated.
    pub pass_b: bool,
}

/// Largest per-token ratio `π_current / π_past` over every context used by
/// sequences of the space.
pub fn token_ratio_cap(
    current: &PolicyParams,
    past: &PolicyParams,
    space: &EnumerationSpace,
) -> Result<f64> {
    let mut cap: f64 = 0.0;
    for s in enumerate_trajectories(space) {
        for t in 0..s.len() {
            let row = current.context_row(space.class(), &s[..t])?;
            let (pc, _) = softmax_with_log(current.row(row));
            let (pp, _) = softmax_with_log(past.row(row));
            for (a, b) in pc.iter().zip(&pp) {
                cap = cap.max(a / b);
            }
        }
    }
    Ok(cap)
}

/// Binomial pmf over `0..=n`.
fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    let mut c = 1.0f64;
    for (k, o) in out.iter_mut().enumerate() {
        if k > 0 {
            c = c * (n - k + 1) as f64 / k as f64;
        }
        *o = c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
    }
    out
}

/// Variance of the experiential group term
/// `G = (1/K)(W·U(o*) + Σ_{i<K} U(o_i))` against the general bound
/// `2(M² + (K-1)²)/K² · E[U²]` and the independence bound
/// `2(M² + K - 1)/K² · E[U²]`.
///
/// `U(o, G) = Â(o, G) · ⟨Σ_t ∇ log π(o_t), d⟩` for a fixed random unit
/// direction `d`; advantages are mean-centered within the mixed group.
/// `o*` is drawn from `past`, fresh members from `current`.
pub fn check_variance_bounds(
    past: &PolicyParams,
    current: &PolicyParams,
    space: &EnumerationSpace,
    group_size: usize,
    n_samples: usize,
    seed: u64,
) -> Result<VarianceReport> {
    let k = group_size;
    if k < 2 {
        return Err(Error::GroupTooSmall(k));
    }
    let class = space.class();
    let end = current.vocab().end_token();
    let q = &space.question;

    let mut dir_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut direction = Gradient::zeros_like(current);
    for x in direction.as_mut_slice() {
        *x = StandardNormal.sample(&mut dir_rng);
    }
    let norm = direction.norm();
    direction.scale(1.0 / norm);

    let past_seqs = weighted_sequences(past, space)?;
    let cur_seqs = weighted_sequences(current, space)?;
    let score =
        |s: &[Token]| -> Result<f64> { Ok(logprob_gradient(current, class, s)?.dot(&direction)) };
    let reward = |s: &[Token]| f64::from(verify(q, s, end));

    let p_past: f64 = past_seqs.iter().map(|(s, p)| p * reward(s)).sum();
    let p_cur: f64 = cur_seqs.iter().map(|(s, p)| p * reward(s)).sum();
    let kf = k as f64;

    // Replayed slot: others are K-1 fresh successes ~ Bin(K-1, p_cur).
    let fresh_counts = binomial_pmf(k - 1, p_cur);
    let mut e_u2_replay = 0.0;
    let mut e_w2u2 = 0.0;
    let mut m: f64 = 0.0;
    for (s, p) in &past_seqs {
        let w = trajectory_weight(current, past, class, s)?;
        m = m.max(w);
        let r = reward(s);
        let sc = score(s)?;
        let a2: f64 = fresh_counts
            .iter()
            .enumerate()
            .map(|(c, pc)| {
                let a = r - (r + c as f64) / kf;
                pc * a * a
            })
            .sum();
        e_u2_replay += p * a2 * sc * sc;
        e_w2u2 += p * w * w * a2 * sc * sc;
    }
    // Fresh slot: others are one replayed ~ Bern(p_past) plus K-2 fresh.
    let rest = binomial_pmf(k - 2, p_cur);
    let mut e_u2_fresh = 0.0;
    for (s, p) in &cur_seqs {
        let r = reward(s);
        let sc = score(s)?;
        let mut a2 = 0.0;
        for (replay_r, pr) in [(0.0, 1.0 - p_past), (1.0, p_past)] {
            for (c, pc) in rest.iter().enumerate() {
                let a = r - (r + replay_r + c as f64) / kf;
                a2 += pr * pc * a * a;
            }
        }
        e_u2_fresh += p * a2 * sc * sc;
    }
    let e_u2 = e_u2_replay.max(e_u2_fresh);

    let samples = monte_carlo(n_samples, seed, |rng| -> Result<f64> {
        let replay = sample_fixed_length(past, class, space.length, rng)?;
        let fresh: Vec<Vec<Token>> = (0..k - 1)
            .map(|_| sample_fixed_length(current, class, space.length, rng))
            .collect::<Result<_>>()?;
        let rewards: Vec<u8> = std::iter::once(&replay)
            .chain(&fresh)
            .map(|s| verify(q, s, end))
            .collect();
        let adv = group_advantages(&rewards, Default::default())?;
        let w = trajectory_weight(current, past, class, &replay)?;
        let mut total = w * adv[0] * score(&replay)?;
        for (s, a) in fresh.iter().zip(&adv[1..]) {
            total += a * score(s)?;
        }
        Ok(total / kf)
    })?;
    let (mean, var) = mean_var(&samples);
    let n = samples.len() as f64;
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var_std_err = ((m4 - var * var).max(0.0) / n).sqrt();

    let k2 = kf * kf;
    let bound_a = 2.0 / k2 * (e_w2u2 + (kf - 1.0).powi(2) * e_u2);
    let bound_a_prime = 2.0 * (m * m + (kf - 1.0).powi(2)) / k2 * e_u2;
    let bound_b = 2.0 / k2 * (e_w2u2 + (kf - 1.0) * e_u2);
    let bound_b_prime = 2.0 * (m * m + kf - 1.0) / k2 * e_u2;
    let cap = token_ratio_cap(current, past, space)?;
    Ok(VarianceReport {
        group_size: k,
        n_samples,
        empirical_var: var,
        var_std_err,
        m,
        token_ratio_cap: cap,
        m_from_token_cap: cap.powi(space.length as i32),
        e_u2,
        e_w2u2,
        bound_a,
        bound_a_prime,
        bound_b,
        bound_b_prime,
        pass_a: var <= bound_a_prime + 3.0 * var_std_err,
        pass_b: var <= bound_b_prime + 3.0 * var_std_err,
    })
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    par::map_indexed(x.len(), |i| {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[i] += step;
        minus[i] -= step;
        (f(&plus) - f(&minus)) / (2.0 * step)
    })
}

/// Central-difference gradient of an objective over every logit.
pub fn finite_difference_gradient<F>(objective: F, params: &PolicyParams, step: f64) -> Gradient
where
    F: Fn(&PolicyParams) -> f64 + Sync + Send,
{
    let data = par::map_indexed(params.logits().len(), |i| {
        let mut p = params.clone();
        let orig = p.logits()[i];
        p.logits_mut()[i] = orig + step;
        let up = objective(&p);
        p.logits_mut()[i] = orig - step;
        let down = objective(&p);
        (up - down) / (2.0 * step)
    });
    Gradient::from_vec(params.vocab().size(), data)
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Vocabulary;
    use crate::task::QuestionId;

    fn q(answer: Vec<Token>) -> Question {
        Question {
            id: QuestionId(0),
            class_id: ClassId(0),
            difficulty: answer.len(),
            golden_answer: answer,
            latest_acc: None,
        }
    }

    fn uniform(v: usize, l: usize) -> PolicyParams {
        PolicyParams::new(Vocabulary::with_trailing_end(v).unwrap(), 1, l).unwrap()
    }

    #[test]
    fn enumeration_order_and_limits() {
        let s = EnumerationSpace::new(2, 2, q(vec![0])).unwrap();
        assert_eq!(
            enumerate_trajectories(&s),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]
        );
        assert_eq!(
            enumerate_trajectories(&EnumerationSpace::new(3, 1, q(vec![0])).unwrap()).len(),
            3
        );
        assert_eq!(
            enumerate_trajectories(&EnumerationSpace::new(2, 3, q(vec![0])).unwrap()).len(),
            8
        );
        assert_eq!(
            EnumerationSpace::new(4, 4, q(vec![0])).unwrap().total(),
            256
        );
        assert!(matches!(
            EnumerationSpace::new(5, 4, q(vec![0])),
            Err(Error::OracleLimit(625))
        ));
    }

    #[test]
    fn exact_expectations() {
        let s = EnumerationSpace::new(2, 2, q(vec![0])).unwrap();
        let p = uniform(2, 2);
        assert!((exact_expectation(&p, &s, |_| 1.0).unwrap() - 1.0).abs() < 1e-12);
        let ind = exact_expectation(&p, &s, |o| f64::from(o == [1, 0])).unwrap();
        assert_eq!(ind, 0.25);
        let pat = exact_expectation(&p, &s, |o| f64::from(o == [0, 0])).unwrap();
        assert_eq!(pat, 0.25);
    }

    #[test]
    fn two_outcome_importance_weighting() {
        let s = EnumerationSpace::new(2, 1, q(vec![0])).unwrap();
        let past = uniform(2, 1);
        let mut cur = uniform(2, 1);
        cur.set_row(ClassId(0), 0, None, &[0.8f64.ln(), 0.2f64.ln()])
            .unwrap();
        let g = |o: &[Token]| f64::from(o[0] == 0);
        let lhs = is_weighted_expectation(&past, &cur, &s, g).unwrap();
        assert!((lhs - 0.8).abs() < 1e-12);
        let r = check_unbiasedness(&past, &cur, &s, g, 1e-10).unwrap();
        assert!(r.pass);
        let unit = check_unbiasedness_with(&past, &cur, &s, g, WeightMode::Unit, 1e-10).unwrap();
        assert!(!unit.pass && (unit.lhs - 0.5).abs() < 1e-12);
        let shaped =
            check_unbiasedness_with(&past, &cur, &s, g, WeightMode::Shaped { beta: 0.1 }, 1e-10)
                .unwrap();
        assert!(!shaped.pass);
        let zero = check_unbiasedness(&past, &cur, &s, |_| 0.0, 1e-10).unwrap();
        assert!(zero.pass && zero.lhs == 0.0 && zero.rhs == 0.0);
    }

    #[test]
    fn identity_pair_reduces_bitwise() {
        let s = EnumerationSpace::new(3, 2, q(vec![1])).unwrap();
        let mut p = uniform(3, 2);
        for (i, x) in p.logits_mut().iter_mut().enumerate() {
            *x = (i as f64 * 0.37).sin();
        }
        let g = |o: &[Token]| o.iter().sum::<usize>() as f64;
        assert_eq!(
            is_weighted_expectation(&p, &p, &s, g).unwrap(),
            exact_expectation(&p, &s, g).unwrap()
        );
    }

    #[test]
    fn ratio_cap_powers() {
        assert_eq!(4f64.powi(2), 16.0);
        let s = EnumerationSpace::new(2, 2, q(vec![0])).unwrap();
        let p = uniform(2, 2);
        assert_eq!(token_ratio_cap(&p, &p, &s).unwrap(), 1.0);
        let r = check_variance_bounds(&p, &p, &s, 4, 2000, 1).unwrap();
        assert_eq!(r.m, 1.0);
        let expected = 2.0 * (1.0 + 9.0) / 16.0 * r.e_u2;
        assert!((r.bound_a_prime - expected).abs() < 1e-15);
    }

    #[test]
    fn finite_differences_of_simple_functions() {
        let g = central_difference(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let z = central_difference(|_| 3.0, &[1.0, 2.0, 5.0], 1e-5);
        assert!(z.iter().all(|&v| v == 0.0));
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[1.0, 1e-3]) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        let p = binomial_pmf(6, 0.3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(binomial_pmf(0, 0.3), vec![1.0]);
    }
}
