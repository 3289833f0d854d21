//! Group-relative advantages and the on-policy surrogate objective.
//!
//! Tokens are summed rather than averaged (no `1/|o|` length
//! normalization) and each group is averaged with `1/K`. The surrogate is
//! evaluated at arbitrary `θ` against the behavior log-probs stored on each
//! trajectory, so its gradient can be checked by finite differences.

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::par;
use crate::policy::{score_steps, ClassId, Gradient, PolicyParams, Trajectory};
use crate::task::QuestionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdvantageMode {
    /// Divide centered rewards by the group's population standard deviation.
    /// Off by default (Dr.GRPO).
    pub scale_by_std: bool,
}

/// `K` rollouts for one question with their rewards and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub question_id: QuestionId,
    pub class_id: ClassId,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<u8>,
    pub advantages: Vec<f64>,
    /// Index of the replayed member in a mixed group.
    pub replay_slot: Option<usize>,
}

impl GroupRollout {
    /// Builds a group from verified trajectories and computes advantages.
    pub fn new(
        question_id: QuestionId,
        class_id: ClassId,
        trajectories: Vec<Trajectory>,
        mode: AdvantageMode,
        replay_slot: Option<usize>,
    ) -> Result<Self> {
        let rewards = trajectories
            .iter()
            .map(|t| {
                t.reward
                    .ok_or_else(|| Error::MalformedGroup("unverified trajectory".into()))
            })
            .collect::<Result<Vec<u8>>>()?;
        let advantages = group_advantages(&rewards, mode)?;
        if let Some(slot) = replay_slot {
            if rewards.get(slot) != Some(&1) {
                return Err(Error::MalformedGroup(format!(
                    "replay slot {slot} must index a reward-1 member"
                )));
            }
        }
        Ok(Self {
            question_id,
            class_id,
            trajectories,
            rewards,
            advantages,
            replay_slot,
        })
    }

    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    pub fn successes(&self) -> usize {
        self.rewards.iter().filter(|&&r| r == 1).count()
    }

    /// Rollout correctness `s/K`.
    pub fn accuracy(&self) -> f64 {
        self.successes() as f64 / self.size() as f64
    }
}

pub fn group_advantages(rewards: &[u8], mode: AdvantageMode) -> Result<Vec<f64>> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::GroupTooSmall(k));
    }
    let mean = rewards.iter().map(|&r| f64::from(r)).sum::<f64>() / k as f64;
    let centered: Vec<f64> = rewards.iter().map(|&r| f64::from(r) - mean).collect();
    if !mode.scale_by_std {
        return Ok(centered);
    }
    let std = (centered.iter().map(|c| c * c).sum::<f64>() / k as f64).sqrt();
    if std > 0.0 {
        Ok(centered.iter().map(|c| c / std).collect())
    } else {
        Ok(vec![0.0; k])
    }
}

pub fn importance_ratio(current_logprob: f64, behavior_logprob: f64) -> f64 {
    (current_logprob - behavior_logprob).exp()
}

/// `min(w·A, clip(w, 1-ε, 1+ε)·A)`
pub fn clip_term(w: f64, advantage: f64, epsilon: f64) -> f64 {
    clip_term_with_slope(w, advantage, epsilon).0
}

/// Clip term and its derivative with respect to `w`.
pub(crate) fn clip_term_with_slope(w: f64, advantage: f64, epsilon: f64) -> (f64, f64) {
    let unclipped = w * advantage;
    let clipped = w.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

/// Closed band membership `α_low ≤ acc ≤ α_high` used by Masked GRPO.
pub fn masked_indicator(acc: f64, alpha_low: f64, alpha_high: f64) -> bool {
    alpha_low <= acc && acc <= alpha_high
}

/// Sparse gradient: `(row, d/d logits[row])` pairs.
pub(crate) type SparseGrad = Vec<(usize, Vec<f64>)>;

#[derive(Debug, Clone, Default)]
pub(crate) struct Contribution {
    pub value: f64,
    pub grad: SparseGrad,
}

impl Contribution {
    pub fn scaled(mut self, s: f64) -> Self {
        self.value *= s;
        for (_, g) in &mut self.grad {
            g.iter_mut().for_each(|x| *x *= s);
        }
        self
    }

    pub fn extend(&mut self, other: Contribution) {
        self.value += other.value;
        self.grad.extend(other.grad);
    }

    pub fn accumulate_into(&self, gradient: &mut Gradient, scale: f64) {
        for (row, g) in &self.grad {
            gradient.add_row_scaled(*row, scale, g);
        }
    }
}

/// Token-summed surrogate `Σ_t CLIP(w_t, A)` (or `Σ_t w_t·A` without clipping).
pub(crate) fn surrogate_member(
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
    for (step, &behavior) in steps.iter().zip(&traj.behavior_logprobs) {
        let w = importance_ratio(step.logprob(), behavior);
        let (value, slope) = if cfg.use_clip {
            clip_term_with_slope(w, advantage, cfg.epsilon)
        } else {
            (w * advantage, advantage)
        };
        out.value += value;
        let coeff = slope * w;
        if coeff != 0.0 {
            let mut g = step.logprob_grad();
            g.iter_mut().for_each(|x| *x *= coeff);
            out.grad.push((step.row, g));
        }
    }
    Ok(out)
}

/// Mean per-token distribution entropy of one trajectory and its gradient.
pub(crate) fn entropy_member(
    params: &PolicyParams,
    class: ClassId,
    traj: &Trajectory,
) -> Result<Contribution> {
    let steps = score_steps(params, class, &traj.tokens)?;
    let inv = 1.0 / steps.len() as f64;
    let mut out = Contribution::default();
    for step in &steps {
        out.value += step.entropy() * inv;
        let mut g = step.entropy_grad();
        g.iter_mut().for_each(|x| *x *= inv);
        out.grad.push((step.row, g));
    }
    Ok(out)
}

/// Value and exact gradient of an objective at the given parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    /// Surrogate plus entropy bonus.
    pub value: f64,
    pub gradient: Gradient,
    /// Surrogate part of `value`.
    pub surrogate: f64,
    /// Mean per-token policy entropy over every trajectory in the batch.
    pub mean_entropy: f64,
}

impl ObjectiveOutput {
    pub(crate) fn zero(params: &PolicyParams) -> Self {
        Self {
            value: 0.0,
            gradient: Gradient::zeros_like(params),
            surrogate: 0.0,
            mean_entropy: 0.0,
        }
    }
}

pub(crate) struct GroupTerms {
    pub surrogate: Contribution,
    pub entropy: Contribution,
    pub n_trajectories: usize,
}

/// Reduces per-group terms in group order: surrogate averaged over groups,
/// entropy averaged over trajectories and weighted by `entropy_coeff`.
pub(crate) fn reduce_groups(
    params: &PolicyParams,
    terms: Vec<GroupTerms>,
    entropy_coeff: f64,
) -> ObjectiveOutput {
    let mut out = ObjectiveOutput::zero(params);
    if terms.is_empty() {
        return out;
    }
    let inv_groups = 1.0 / terms.len() as f64;
    let n_traj: usize = terms.iter().map(|t| t.n_trajectories).sum();
    let inv_traj = 1.0 / n_traj.max(1) as f64;
    let mut entropy_sum = 0.0;
    for t in &terms {
        out.surrogate += t.surrogate.value * inv_groups;
        t.surrogate.accumulate_into(&mut out.gradient, inv_groups);
        entropy_sum += t.entropy.value;
    }
    out.mean_entropy = entropy_sum * inv_traj;
    if entropy_coeff != 0.0 {
        for t in &terms {
            t.entropy
                .accumulate_into(&mut out.gradient, entropy_coeff * inv_traj);
        }
    }
    out.value = out.surrogate + entropy_coeff * out.mean_entropy;
    out
}

pub(crate) fn check_fresh(group: &GroupRollout, params: &PolicyParams) -> Result<()> {
    if group.advantages.len() != group.size()
        || group.rewards.len() != group.size()
        || group.size() < 2
    {
        return Err(Error::MalformedGroup(format!(
            "group for question {} has inconsistent lengths",
            group.question_id
        )));
    }
    for (i, t) in group.trajectories.iter().enumerate() {
        if Some(i) != group.replay_slot && t.producer_version != params.version() {
            return Err(Error::StaleRollout {
                expected: params.version(),
                found: t.producer_version,
            });
        }
    }
    Ok(())
}

pub(crate) fn entropy_terms(params: &PolicyParams, group: &GroupRollout) -> Result<Contribution> {
    let mut c = Contribution::default();
    for t in &group.trajectories {
        c.extend(entropy_member(params, group.class_id, t)?);
    }
    Ok(c)
}

/// Dr.GRPO surrogate `mean_q (1/K) Σ_i Σ_t CLIP(w_{i,t}, Â_i)` plus the
/// entropy bonus. With `cfg.masked_band` set, groups whose rollout
/// correctness falls outside the band contribute zero surrogate.
pub fn on_policy_objective(
    groups: &[GroupRollout],
    params: &PolicyParams,
    cfg: &TrainConfig,
) -> Result<ObjectiveOutput> {
    for g in groups {
        check_fresh(g, params)?;
        if g.replay_slot.is_some() {
            return Err(Error::MalformedGroup(
                "on-policy group carries a replay slot".into(),
            ));
        }
    }
    let terms = par::map_slice(groups, |g| -> Result<GroupTerms> {
        let active = match cfg.masked_band {
            Some((lo, hi)) => masked_indicator(g.accuracy(), lo, hi),
            None => true,
        };
        let mut surrogate = Contribution::default();
        if active {
            for (t, &a) in g.trajectories.iter().zip(&g.advantages) {
                surrogate.extend(surrogate_member(params, g.class_id, t, a, cfg)?);
            }
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
