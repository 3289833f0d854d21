//! Mixed on-/off-policy training: minibatch composition, the experiential
//! objective with importance correction and policy shaping, the delayed
//! start gate, and the full training step.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::experience::{
    bucket_sample_with_buckets, bucket_weights, partition, record_group, select_trajectory,
    ReplayBuffer, RetiredSet,
};
use crate::grpo::{
    check_fresh, entropy_terms, on_policy_objective, reduce_groups, surrogate_member, Contribution,
    GroupRollout, GroupTerms, ObjectiveOutput,
};
use crate::par;
use crate::policy::{
    sample_trajectory, score_steps, sequence_logprobs, ClassId, PolicyParams, Trajectory,
    Vocabulary,
};
use crate::task::{pass_at_1, suite_pass_at_1, verify, QuestionId, TaskSuite};

/// Where policy shaping is applied on the replayed trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ShapingGranularity {
    /// `f(W*)·Â` with `W*` the product of per-token ratios.
    #[default]
    Trajectory,
    /// `Σ_t f(w*_t)·Â`.
    Token,
}

/// Policy shaping `f(w) = w / (w + β)`.
pub fn shaping(w: f64, beta: f64) -> Result<f64> {
    if !(w >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "shaping of negative weight {w}"
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "beta must be positive, got {beta}"
        )));
    }
    Ok(w / (w + beta))
}

/// `(f(w), f'(w))` with `f'(w) = β / (w + β)²`.
fn shaping_with_slope(w: f64, beta: f64) -> (f64, f64) {
    let d = w + beta;
    (w / d, beta / (d * d))
}

/// Contribution of the replayed member of a mixed group.
fn replayed_member(
    params: &PolicyParams,
    class: ClassId,
    traj: &Trajectory,
    advantage: f64,
    cfg: &TrainConfig,
) -> Result<Contribution> {
    let steps = score_steps(params, class, &traj.tokens)?;
    if traj.behavior_logprobs.len() != steps.len() {
        return Err(Error::MalformedGroup(
            "behavior log-prob length mismatch".into(),
        ));
    }
    let mut out = Contribution::default();
    match (cfg.use_shaping, cfg.shaping_granularity) {
        (true, ShapingGranularity::Token) => {
            for (step, &b) in steps.iter().zip(&traj.behavior_logprobs) {
                let w = (step.logprob() - b).exp();
                let (f, df) = shaping_with_slope(w, cfg.beta);
                out.value += f * advantage;
                let coeff = df * w * advantage;
                let mut g = step.logprob_grad();
                g.iter_mut().for_each(|x| *x *= coeff);
                out.grad.push((step.row, g));
            }
        }
        (shaped, _) => {
            let log_w: f64 = steps
                .iter()
                .zip(&traj.behavior_logprobs)
                .map(|(s, b)| s.logprob() - b)
                .sum();
            let w = log_w.exp();
            let (coef, slope) = if shaped {
                shaping_with_slope(w, cfg.beta)
            } else {
                (w, 1.0)
            };
            out.value = coef * advantage;
            let c = slope * w * advantage;
            for step in &steps {
                let mut g = step.logprob_grad();
                g.iter_mut().for_each(|x| *x *= c);
                out.grad.push((step.row, g));
            }
        }
    }
    Ok(out)
}

/// Experiential objective over mixed groups: fresh members use the
/// standard surrogate, the replayed member contributes `f(W*)·Â`
/// (`W*·Â` without shaping). Each group is averaged with `1/K`.
pub fn experiential_objective(
    groups: &[GroupRollout],
    params: &PolicyParams,
    cfg: &TrainConfig,
) -> Result<ObjectiveOutput> {
    for g in groups {
        let slot = g.replay_slot.ok_or_else(|| {
            Error::MalformedGroup(format!("group {} has no replay slot", g.question_id))
        })?;
        if g.rewards.get(slot) != Some(&1) {
            return Err(Error::MalformedGroup(format!(
                "replayed member of group {} does not have reward 1",
                g.question_id
            )));
        }
        check_fresh(g, params)?;
    }
    let terms = par::map_slice(groups, |g| -> Result<GroupTerms> {
        let slot = g.replay_slot.expect("checked above");
        let mut surrogate = Contribution::default();
        for (i, (t, &a)) in g.trajectories.iter().zip(&g.advantages).enumerate() {
            let c = if i == slot {
                replayed_member(params, g.class_id, t, a, cfg)?
            } else {
                surrogate_member(params, g.class_id, t, a, cfg)?
            };
            surrogate.extend(c);
        }
        Ok(GroupTerms {
            surrogate: surrogate.scaled(1.0 / g.size() as f64),
            entropy: entropy_terms(params, g)?,
            n_trajectories: g.size(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(reduce_groups(params, terms, cfg.entropy_coeff))
}

/// `(1-ρ)·J_on + ρ·J_exp`. An empty experiential part contributes nothing,
/// so the value is then `(1-ρ)·J_on`.
pub fn exgrpo_objective(
    on_groups: &[GroupRollout],
    exp_groups: &[GroupRollout],
    params: &PolicyParams,
    cfg: &TrainConfig,
) -> Result<ObjectiveOutput> {
    let on = on_policy_objective(on_groups, params, cfg)?;
    let rho = cfg.rho;
    if rho == 0.0 {
        return Ok(on);
    }
    let mut out = ObjectiveOutput {
        value: (1.0 - rho) * on.value,
        gradient: on.gradient,
        surrogate: (1.0 - rho) * on.surrogate,
        mean_entropy: on.mean_entropy,
    };
    out.gradient.scale(1.0 - rho);
    if !exp_groups.is_empty() {
        let exp = experiential_objective(exp_groups, params, cfg)?;
        out.value += rho * exp.value;
        out.surrogate += rho * exp.surrogate;
        out.gradient.add_scaled(rho, &exp.gradient);
        let n_on: usize = on_groups.iter().map(GroupRollout::size).sum();
        let n_exp: usize = exp_groups.iter().map(GroupRollout::size).sum();
        out.mean_entropy = (on.mean_entropy * n_on as f64 + exp.mean_entropy * n_exp as f64)
            / (n_on + n_exp) as f64;
    }
    Ok(out)
}

/// True once any observed batch Pass@1 exceeded the threshold.
pub fn delayed_start_gate(history: &[f64], threshold: f64) -> bool {
    threshold < 0.0 || history.iter().any(|&p| p > threshold)
}

/// Latching form of [`delayed_start_gate`]. A negative threshold starts open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayedStartGate {
    threshold: f64,
    active: bool,
}

impl DelayedStartGate {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            active: threshold < 0.0,
        }
    }

    pub fn observe(&mut self, batch_pass_at_1: f64) -> bool {
        if batch_pass_at_1 > self.threshold {
            self.active = true;
        }
        self.active
    }

    pub fn is_active(&self) -> bool {
        self.active
    }
}

/// A replay pick: question plus the lowest-metric stored trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperientialSelection {
    pub question_id: QuestionId,
    pub bucket: usize,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Minibatch {
    pub on_policy: Vec<QuestionId>,
    pub experiential: Vec<ExperientialSelection>,
    /// On-policy slots had to be filled with replacement.
    pub with_replacement: bool,
}

/// Composes one batch: `min(⌊ρB⌋, |E|)` replayed questions when the gate
/// is open, the rest drawn uniformly from non-retired questions.
pub fn build_minibatch<R: Rng + ?Sized>(
    suite: &TaskSuite,
    buffer: &mut ReplayBuffer,
    retired: &RetiredSet,
    params: &PolicyParams,
    cfg: &TrainConfig,
    gate_active: bool,
    rng: &mut R,
) -> Result<Minibatch> {
    if suite.is_empty() {
        return Err(Error::InvalidArgument("empty task suite".into()));
    }
    let b = cfg.batch_size;
    let cap = (cfg.rho * b as f64).floor() as usize;
    let n_exp = if gate_active {
        cap.min(buffer.len())
    } else {
        0
    };
    let mut experiential = Vec::with_capacity(n_exp);
    if n_exp > 0 {
        let part = partition(buffer, cfg.group_size)?;
        let weights = bucket_weights(&part.nonempty(), cfg.group_size, cfg.mu, cfg.sigma)?;
        for (bucket, id) in bucket_sample_with_buckets(&part, &weights, n_exp, rng)? {
            let class = suite
                .get(id)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("buffer holds unknown question {id}"))
                })?
                .class_id;
            let entry = buffer.get_mut(id).expect("partitioned from this buffer");
            let trajectory = select_trajectory(entry, params, class, cfg.selection_metric)?;
            experiential.push(ExperientialSelection {
                question_id: id,
                bucket,
                trajectory,
            });
        }
    }
    let n_on = b - n_exp;
    let eligible: Vec<QuestionId> = suite
        .questions
        .iter()
        .map(|q| q.id)
        .filter(|&id| !retired.contains(id))
        .collect();
    let (on_policy, with_replacement) = if eligible.len() >= n_on {
        let picks = rand::seq::index::sample(rng, eligible.len(), n_on);
        (picks.into_iter().map(|i| eligible[i]).collect(), false)
    } else if eligible.is_empty() {
        (Vec::new(), n_on > 0)
    } else {
        (
            (0..n_on)
                .map(|_| *eligible.choose(rng).expect("non-empty"))
                .collect(),
            true,
        )
    };
    Ok(Minibatch {
        on_policy,
        experiential,
        with_replacement,
    })
}

/// One line of training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    /// Mean reward of this step's fresh rollouts.
    pub pass_at_1: f64,
    pub buffer_size: usize,
    pub retired_size: usize,
    pub mean_entropy: f64,
    pub objective_value: f64,
    pub n_experiential: usize,
    pub gate_active: bool,
    /// Exact expected Pass@1 of the updated policy over the whole suite.
    pub suite_pass_at_1: f64,
    pub with_replacement: bool,
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: PolicyParams,
    pub suite: TaskSuite,
    pub buffer: ReplayBuffer,
    pub retired: RetiredSet,
    pub gate: DelayedStartGate,
    pub step: u64,
    pub max_len: usize,
    rng: ChaCha8Rng,
}

impl TrainState {
    /// Uniform policy with one class per question; responses may run one
    /// token past the longest answer so every answer can be terminated.
    pub fn new(suite: TaskSuite, vocab: Vocabulary, cfg: &TrainConfig) -> Result<Self> {
        if suite.is_empty() {
            return Err(Error::InvalidArgument("empty task suite".into()));
        }
        let n_classes = suite
            .questions
            .iter()
            .map(|q| q.class_id.0 as usize + 1)
            .max()
            .unwrap_or(1);
        let max_len = cfg.max_len.unwrap_or(suite.max_difficulty() + 1);
        Ok(Self {
            params: PolicyParams::new(vocab, n_classes, max_len)?,
            buffer: ReplayBuffer::new(cfg.group_size, cfg.capacity_per_question),
            retired: RetiredSet::new(),
            gate: DelayedStartGate::new(cfg.delayed_start_threshold),
            step: 0,
            max_len,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            suite,
        })
    }
}

/// Independent per-rollout stream derived from the step seed, so parallel
/// and sequential generation agree bit for bit.
fn rollout_rng(step_seed: u64, job: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
    rng.set_stream(job as u64);
    rng
}

/// Groups produced by one step's rollout phase.
#[derive(Debug, Clone, Default)]
pub struct StepGroups {
    pub on_policy: Vec<GroupRollout>,
    pub experiential: Vec<GroupRollout>,
    pub fresh_rewards: Vec<u8>,
}

fn rollout_groups(
    state: &TrainState,
    batch: &Minibatch,
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<StepGroups> {
    let k = cfg.group_size;
    let end = state.params.vocab().end_token();
    // (question, is_experiential) per job, on-policy first.
    let mut jobs: Vec<QuestionId> = Vec::new();
    for &q in &batch.on_policy {
        jobs.extend(std::iter::repeat_n(q, k));
    }
    for sel in &batch.experiential {
        jobs.extend(std::iter::repeat_n(sel.question_id, k - 1));
    }
    let params = &state.params;
    let suite = &state.suite;
    let max_len = state.max_len;
    let fresh = par::map_indexed(jobs.len(), |j| -> Result<Trajectory> {
        let q = suite
            .get(jobs[j])
            .ok_or_else(|| Error::InvalidArgument(format!("unknown question {}", jobs[j])))?;
        let mut rng = rollout_rng(step_seed, j);
        let mut t = sample_trajectory(params, q, max_len, &mut rng)?;
        t.reward = Some(verify(q, &t.tokens, end));
        Ok(t)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let fresh_rewards = fresh.iter().map(|t| t.reward.expect("verified")).collect();
    let mut it = fresh.into_iter();
    let mut out = StepGroups {
        fresh_rewards,
        ..Default::default()
    };
    for &id in &batch.on_policy {
        let members: Vec<Trajectory> = it.by_ref().take(k).collect();
        let class = suite.get(id).expect("validated").class_id;
        out.on_policy
            .push(GroupRollout::new(id, class, members, cfg.advantage, None)?);
    }
    for sel in &batch.experiential {
        let q = suite.get(sel.question_id).expect("validated");
        let mut replayed = sel.trajectory.clone();
        replayed.reward = Some(verify(q, &replayed.tokens, end));
        if !cfg.use_is_correction {
            // Treat the replayed response as if the rollout policy produced it.
            replayed.behavior_logprobs = sequence_logprobs(params, q.class_id, &replayed.tokens)?;
        }
        let mut members = Vec::with_capacity(k);
        members.push(replayed);
        members.extend(it.by_ref().take(k - 1));
        out.experiential.push(GroupRollout::new(
            sel.question_id,
            q.class_id,
            members,
            cfg.advantage,
            Some(0),
        )?);
    }
    Ok(out)
}

/// One training step: gate check, minibatch, rollouts, verification,
/// buffer update, objective, gradient ascent.
pub fn train_step(state: &mut TrainState, cfg: &TrainConfig) -> Result<StepReport> {
    train_step_traced(state, cfg).map(|(report, _)| report)
}

/// [`train_step`] that also returns the minibatch it trained on.
pub fn train_step_traced(
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<(StepReport, Minibatch)> {
    if cfg.group_size < 2 {
        return Err(Error::GroupTooSmall(cfg.group_size));
    }
    let gate_active = state.gate.is_active();
    let batch = build_minibatch(
        &state.suite,
        &mut state.buffer,
        &state.retired,
        &state.params,
        cfg,
        gate_active,
        &mut state.rng,
    )?;
    let step_seed: u64 = state.rng.random();
    let groups = rollout_groups(state, &batch, cfg, step_seed)?;
    for g in groups.on_policy.iter().chain(&groups.experiential) {
        record_group(&mut state.buffer, &mut state.retired, g);
    }
    let objective = if gate_active {
        exgrpo_objective(&groups.on_policy, &groups.experiential, &state.params, cfg)?
    } else {
        on_policy_objective(&groups.on_policy, &state.params, cfg)?
    };
    state
        .params
        .apply_ascent(&objective.gradient, cfg.learning_rate);
    let batch_pass = pass_at_1(&groups.fresh_rewards).unwrap_or(0.0);
    state.gate.observe(batch_pass);
    let report = StepReport {
        step: state.step,
        pass_at_1: batch_pass,
        buffer_size: state.buffer.len(),
        retired_size: state.retired.len(),
        mean_entropy: objective.mean_entropy,
        objective_value: objective.value,
        n_experiential: batch.experiential.len(),
        gate_active,
        suite_pass_at_1: suite_pass_at_1(&state.params, &state.suite, state.max_len)?,
        with_replacement: batch.with_replacement,
    };
    state.step += 1;
    Ok((report, batch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shaping_values() {
        assert_eq!(shaping(0.0, 0.1).unwrap(), 0.0);
        assert_eq!(shaping(0.1, 0.1).unwrap(), 0.5);
        assert!((shaping(1.0, 0.1).unwrap() - 10.0 / 11.0).abs() < 1e-15);
        assert!(shaping(-0.1, 0.1).is_err());
        let (_, slope) = shaping_with_slope(1.0, 0.1);
        assert!((slope - 0.1 / 1.21).abs() < 1e-15);
    }

    #[test]
    fn gate_latches() {
        assert!(delayed_start_gate(&[0.1, 0.40], 0.35));
        assert!(!delayed_start_gate(&[0.1, 0.30], 0.35));
        let mut g = DelayedStartGate::new(0.35);
        assert!(!g.observe(0.35));
        assert!(g.observe(0.40));
        assert!(g.observe(0.10));
        assert!(DelayedStartGate::new(-1.0).is_active());
    }
}
