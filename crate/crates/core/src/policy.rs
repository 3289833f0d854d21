//! Tabular autoregressive softmax policy.
//!
//! Logits are indexed by a context key `(class, position, previous token)`
//! and a next-token index. The table is dense: every class owns
//! `max_len * (vocab + 1)` rows of `vocab` logits, where the extra
//! previous-token slot stands for "start of sequence".

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Question, QuestionId};

pub type Token = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    end_token: Token,
}

impl Vocabulary {
    pub fn new(size: usize, end_token: Token) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidVocabulary(format!("size {size} < 2")));
        }
        if end_token >= size {
            return Err(Error::InvalidVocabulary(format!(
                "end token {end_token} outside vocabulary of size {size}"
            )));
        }
        Ok(Self { size, end_token })
    }

    /// Vocabulary whose last index is the end token.
    pub fn with_trailing_end(size: usize) -> Result<Self> {
        Self::new(size, size.saturating_sub(1))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn end_token(&self) -> Token {
        self.end_token
    }

    /// Tokens other than the end token, in ascending order.
    pub fn answer_tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.size).filter(move |&t| t != self.end_token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyMode {
    /// `-(1/|o|) Σ_t log π(o_t | ·)`, the selection rule used by the training loop.
    MeanNll,
    /// `(1/|o|) Σ_t H(π(· | ·))`, full Shannon entropy of each step's distribution.
    MeanDistEntropy,
}

/// Parameter table `θ` plus a snapshot counter.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab: Vocabulary,
    n_classes: usize,
    max_len: usize,
    logits: Vec<f64>,
    version: u64,
}

impl PolicyParams {
    /// Uniform policy (all logits zero) at version 0.
    pub fn new(vocab: Vocabulary, n_classes: usize, max_len: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::InvalidArgument(
                "policy needs at least one class".into(),
            ));
        }
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be positive".into()));
        }
        let rows = n_classes * max_len * (vocab.size() + 1);
        Ok(Self {
            vocab,
            n_classes,
            max_len,
            logits: vec![0.0; rows * vocab.size()],
            version: 0,
        })
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn n_rows(&self) -> usize {
        self.logits.len() / self.vocab.size()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Raw mutable access. Does not bump the version; used for perturbation
    /// oracles and hand-built test policies.
    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row_index(&self, class: ClassId, position: usize, prev: Option<Token>) -> Result<usize> {
        let c = class.0 as usize;
        if c >= self.n_classes {
            return Err(Error::UnknownQuestion(class.0));
        }
        if position >= self.max_len {
            return Err(Error::SequenceComplete(position));
        }
        let v = self.vocab.size();
        let slot = match prev {
            Some(t) if t >= v => return Err(Error::TokenOutOfRange { token: t, size: v }),
            Some(t) => t,
            None => v,
        };
        Ok((c * self.max_len + position) * (v + 1) + slot)
    }

    /// Row index of the context that follows `prefix`.
    pub fn context_row(&self, class: ClassId, prefix: &[Token]) -> Result<usize> {
        self.row_index(class, prefix.len(), prefix.last().copied())
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let v = self.vocab.size();
        &self.logits[row * v..(row + 1) * v]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let v = self.vocab.size();
        &mut self.logits[row * v..(row + 1) * v]
    }

    /// Overwrites one context's logits.
    pub fn set_row(
        &mut self,
        class: ClassId,
        position: usize,
        prev: Option<Token>,
        logits: &[f64],
    ) -> Result<()> {
        if logits.len() != self.vocab.size() || logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "row must hold vocab-size finite logits".into(),
            ));
        }
        let r = self.row_index(class, position, prev)?;
        self.row_mut(r).copy_from_slice(logits);
        Ok(())
    }

    /// Gradient-ascent update `θ ← θ + lr · g`; bumps the version.
    pub fn apply_ascent(&mut self, gradient: &Gradient, learning_rate: f64) {
        assert_eq!(
            gradient.data.len(),
            self.logits.len(),
            "gradient shape mismatch"
        );
        for (p, g) in self.logits.iter_mut().zip(&gradient.data) {
            *p += learning_rate * g;
        }
        self.version += 1;
    }
}

/// Dense table with the same layout as [`PolicyParams`] logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    row_len: usize,
    data: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            row_len: params.vocab.size(),
            data: vec![0.0; params.logits.len()],
        }
    }

    pub fn from_vec(row_len: usize, data: Vec<f64>) -> Self {
        Self { row_len, data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.row_len..(row + 1) * self.row_len]
    }

    /// `self[row] += scale * values`
    pub fn add_row_scaled(&mut self, row: usize, scale: f64, values: &[f64]) {
        let dst = &mut self.data[row * self.row_len..(row + 1) * self.row_len];
        for (d, v) in dst.iter_mut().zip(values) {
            *d += scale * v;
        }
    }

    pub fn add_scaled(&mut self, scale: f64, other: &Gradient) {
        for (d, v) in self.data.iter_mut().zip(&other.data) {
            *d += scale * v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|d| *d *= s);
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }
}

/// Probabilities and log-probabilities of one logit row (max-subtracted).
pub fn softmax_with_log(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|z| z - max).collect();
    let exps: Vec<f64> = shifted.iter().map(|s| s.exp()).collect();
    let total: f64 = exps.iter().sum();
    let log_total = total.ln();
    let probs = exps.iter().map(|e| e / total).collect();
    let logs = shifted.iter().map(|s| s - log_total).collect();
    (probs, logs)
}

/// Shannon entropy of a distribution given both its probabilities and logs.
pub fn shannon_entropy(probs: &[f64], logs: &[f64]) -> f64 {
    -probs.iter().zip(logs).map(|(p, l)| p * l).sum::<f64>()
}

/// One scored step of a sequence: its context row, distribution, and the
/// log-probability of the token taken.
#[derive(Debug, Clone)]
pub struct ScoredStep {
    pub row: usize,
    pub token: Token,
    pub probs: Vec<f64>,
    pub logs: Vec<f64>,
}

impl ScoredStep {
    pub fn logprob(&self) -> f64 {
        self.logs[self.token]
    }

    pub fn entropy(&self) -> f64 {
        shannon_entropy(&self.probs, &self.logs)
    }

    /// `∇_z log π(token)` for this row: `onehot(token) - p`.
    pub fn logprob_grad(&self) -> Vec<f64> {
        let mut g: Vec<f64> = self.probs.iter().map(|p| -p).collect();
        g[self.token] += 1.0;
        g
    }

    /// `∇_z H(p)` for this row: `-p_j (log p_j + H)`.
    pub fn entropy_grad(&self) -> Vec<f64> {
        let h = self.entropy();
        self.probs
            .iter()
            .zip(&self.logs)
            .map(|(p, l)| -p * (l + h))
            .collect()
    }
}

pub fn score_steps(
    params: &PolicyParams,
    class: ClassId,
    tokens: &[Token],
) -> Result<Vec<ScoredStep>> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let v = params.vocab.size();
    tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| {
            if tok >= v {
                return Err(Error::TokenOutOfRange {
                    token: tok,
                    size: v,
                });
            }
            let row = params.context_row(class, &tokens[..t])?;
            let (probs, logs) = softmax_with_log(params.row(row));
            Ok(ScoredStep {
                row,
                token: tok,
                probs,
                logs,
            })
        })
        .collect()
}

/// A sampled response with the log-probabilities its producer assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: QuestionId,
    pub tokens: Vec<Token>,
    pub behavior_logprobs: Vec<f64>,
    /// `None` until verified.
    pub reward: Option<u8>,
    pub producer_version: u64,
    pub cached_metric: Option<f64>,
}

impl Trajectory {
    pub fn is_success(&self) -> bool {
        self.reward == Some(1)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn behavior_logprob_sum(&self) -> f64 {
        self.behavior_logprobs.iter().sum()
    }
}

pub fn token_distribution(
    params: &PolicyParams,
    class: ClassId,
    prefix: &[Token],
) -> Result<Vec<f64>> {
    let row = params.context_row(class, prefix)?;
    Ok(softmax_with_log(params.row(row)).0)
}

/// Samples one response token by token until the end token or `max_len`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    params: &PolicyParams,
    question: &Question,
    max_len: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if max_len == 0 || max_len > params.max_len {
        return Err(Error::InvalidArgument(format!(
            "max_len {max_len} outside 1..={}",
            params.max_len
        )));
    }
    let end = params.vocab.end_token();
    let mut tokens = Vec::with_capacity(max_len);
    let mut logprobs = Vec::with_capacity(max_len);
    while tokens.len() < max_len {
        let row = params.context_row(question.class_id, &tokens)?;
        let (probs, logs) = softmax_with_log(params.row(row));
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
        tokens.push(tok);
        logprobs.push(logs[tok]);
        if tok == end {
            break;
        }
    }
    Ok(Trajectory {
        question_id: question.id,
        tokens,
        behavior_logprobs: logprobs,
        reward: None,
        producer_version: params.version,
        cached_metric: None,
    })
}

pub fn sequence_logprobs(
    params: &PolicyParams,
    class: ClassId,
    tokens: &[Token],
) -> Result<Vec<f64>> {
    Ok(score_steps(params, class, tokens)?
        .iter()
        .map(ScoredStep::logprob)
        .collect())
}

pub fn trajectory_entropy(
    params: &PolicyParams,
    class: ClassId,
    tokens: &[Token],
    mode: EntropyMode,
) -> Result<f64> {
    let steps = score_steps(params, class, tokens)?;
    let n = steps.len() as f64;
    let total: f64 = match mode {
        EntropyMode::MeanNll => steps.iter().map(|s| -s.logprob()).sum(),
        EntropyMode::MeanDistEntropy => steps.iter().map(ScoredStep::entropy).sum(),
    };
    Ok(total / n)
}

pub fn trajectory_perplexity(
    params: &PolicyParams,
    class: ClassId,
    tokens: &[Token],
) -> Result<f64> {
    Ok(trajectory_entropy(params, class, tokens, EntropyMode::MeanNll)?.exp())
}

/// `Σ_t ∇_θ log π_θ(o_t | ·)` as a dense table.
pub fn logprob_gradient(
    params: &PolicyParams,
    class: ClassId,
    tokens: &[Token],
) -> Result<Gradient> {
    let mut g = Gradient::zeros_like(params);
    for step in score_steps(params, class, tokens)? {
        g.add_row_scaled(step.row, 1.0, &step.logprob_grad());
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn question(class: u32) -> Question {
        Question {
            id: QuestionId(class),
            class_id: ClassId(class),
            golden_answer: vec![0],
            difficulty: 1,
            latest_acc: None,
        }
    }

    #[test]
    fn uniform_distribution() {
        let p = PolicyParams::new(Vocabulary::with_trailing_end(4).unwrap(), 1, 3).unwrap();
        let d = token_distribution(&p, ClassId(0), &[]).unwrap();
        assert!(d.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn dominant_logit() {
        let mut p = PolicyParams::new(Vocabulary::with_trailing_end(2).unwrap(), 1, 1).unwrap();
        p.set_row(ClassId(0), 0, None, &[50.0, 0.0]).unwrap();
        let d = token_distribution(&p, ClassId(0), &[]).unwrap();
        assert!(d[0] >= 1.0 - 1e-20);
        assert!(d[1] > 0.0);
    }

    #[test]
    fn log_odds_logits() {
        let mut p = PolicyParams::new(Vocabulary::with_trailing_end(2).unwrap(), 1, 1).unwrap();
        p.set_row(ClassId(0), 0, None, &[1f64.ln(), 3f64.ln()])
            .unwrap();
        let d = token_distribution(&p, ClassId(0), &[]).unwrap();
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn distribution_errors() {
        let p = PolicyParams::new(Vocabulary::with_trailing_end(3).unwrap(), 2, 2).unwrap();
        assert_eq!(
            token_distribution(&p, ClassId(5), &[]),
            Err(Error::UnknownQuestion(5))
        );
        assert_eq!(
            token_distribution(&p, ClassId(0), &[0, 1]),
            Err(Error::SequenceComplete(2))
        );
        assert!(sequence_logprobs(&p, ClassId(0), &[7]).is_err());
        assert_eq!(
            trajectory_entropy(&p, ClassId(0), &[], EntropyMode::MeanNll),
            Err(Error::EmptySequence)
        );
    }

    #[test]
    fn vocabulary_invariants() {
        assert!(Vocabulary::new(1, 0).is_err());
        assert!(Vocabulary::new(3, 3).is_err());
        let v = Vocabulary::new(4, 1).unwrap();
        assert_eq!(v.answer_tokens().collect::<Vec<_>>(), vec![0, 2, 3]);
    }

    fn deterministic_policy() -> PolicyParams {
        // Greedy path 1, 0, end(2)
        let mut p = PolicyParams::new(Vocabulary::with_trailing_end(3).unwrap(), 1, 3).unwrap();
        let big = 800.0;
        p.set_row(ClassId(0), 0, None, &[0.0, big, 0.0]).unwrap();
        p.set_row(ClassId(0), 1, Some(1), &[big, 0.0, 0.0]).unwrap();
        p.set_row(ClassId(0), 2, Some(0), &[0.0, 0.0, big]).unwrap();
        p
    }

    #[test]
    fn deterministic_sampling() {
        let p = deterministic_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = sample_trajectory(&p, &question(0), 3, &mut rng).unwrap();
        assert_eq!(t.tokens, vec![1, 0, 2]);
        assert!(t.behavior_logprobs.iter().all(|&l| l == 0.0));
        let lp = sequence_logprobs(&p, ClassId(0), &t.tokens).unwrap();
        assert!(lp.iter().all(|&l| l == 0.0));
        for mode in [EntropyMode::MeanNll, EntropyMode::MeanDistEntropy] {
            assert_eq!(
                trajectory_entropy(&p, ClassId(0), &t.tokens, mode).unwrap(),
                0.0
            );
        }
        assert_eq!(
            trajectory_perplexity(&p, ClassId(0), &t.tokens).unwrap(),
            1.0
        );
        assert!(logprob_gradient(&p, ClassId(0), &t.tokens)
            .unwrap()
            .is_zero());
    }

    #[test]
    fn seeded_sampling_is_repeatable() {
        let mut p = PolicyParams::new(Vocabulary::with_trailing_end(4).unwrap(), 2, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for x in p.logits_mut() {
            *x = rng.random_range(-2.0..2.0);
        }
        let q = question(1);
        let a = sample_trajectory(&p, &q, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_trajectory(&p, &q, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.producer_version, 0);
        assert!(a.reward.is_none());
        // Re-scoring under the producer reproduces the stored log-probs bitwise.
        assert_eq!(
            sequence_logprobs(&p, q.class_id, &a.tokens).unwrap(),
            a.behavior_logprobs
        );
    }

    #[test]
    fn uniform_logprobs_without_end() {
        let p = PolicyParams::new(Vocabulary::new(4, 3).unwrap(), 1, 3).unwrap();
        let lp = sequence_logprobs(&p, ClassId(0), &[0, 1, 2]).unwrap();
        assert!(lp.iter().all(|&l| (l - 0.25f64.ln()).abs() < 1e-12));
        assert!((lp[0] + 1.3863).abs() < 1e-4);
        for mode in [EntropyMode::MeanNll, EntropyMode::MeanDistEntropy] {
            let h = trajectory_entropy(&p, ClassId(0), &[0, 1], mode).unwrap();
            assert!((h - 4f64.ln()).abs() < 1e-12);
        }
        let ppl = trajectory_perplexity(&p, ClassId(0), &[0, 1, 2]).unwrap();
        assert!((ppl - 4.0).abs() < 1e-12);
    }

    #[test]
    fn skewed_binary_entropy() {
        // π = (0.75, 0.25) at every context; take the 0.25 branch twice.
        let mut p = PolicyParams::new(Vocabulary::new(2, 0).unwrap(), 1, 2).unwrap();
        let row = [3f64.ln(), 0.0];
        p.set_row(ClassId(0), 0, None, &row).unwrap();
        p.set_row(ClassId(0), 1, Some(1), &row).unwrap();
        let nll = trajectory_entropy(&p, ClassId(0), &[1, 1], EntropyMode::MeanNll).unwrap();
        assert!((nll - 1.3863).abs() < 1e-4);
        let h = trajectory_entropy(&p, ClassId(0), &[1, 1], EntropyMode::MeanDistEntropy).unwrap();
        let hand = -0.75 * 0.75f64.ln() - 0.25 * 0.25f64.ln();
        assert!((h - hand).abs() < 1e-12);
        assert!((h - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn uniform_gradient_one_token() {
        let p = PolicyParams::new(Vocabulary::new(2, 1).unwrap(), 1, 1).unwrap();
        let g = logprob_gradient(&p, ClassId(0), &[0]).unwrap();
        let row = p.row_index(ClassId(0), 0, None).unwrap();
        assert_eq!(g.row(row), &[0.5, -0.5]);
        assert_eq!(g.norm(), (0.5f64).sqrt());
    }

    #[test]
    fn ascent_bumps_version() {
        let mut p = PolicyParams::new(Vocabulary::new(2, 1).unwrap(), 1, 1).unwrap();
        let g = logprob_gradient(&p, ClassId(0), &[0]).unwrap();
        p.apply_ascent(&g, 2.0);
        assert_eq!(p.version(), 1);
        let row = p.row_index(ClassId(0), 0, None).unwrap();
        assert_eq!(p.row(row), &[1.0, -1.0]);
        assert_eq!(p.logits().iter().filter(|&&x| x != 0.0).count(), 2);
    }
}
