//! Training configuration and the flat `key = value` experiment format.
//!
//! ```text
//! # comments start with '#'
//! name = desk
//! steps = 600
//! seeds = 1, 2, 3
//! arms = exgrpo, on_policy, masked_grpo(0.25, 0.75), exgrpo+no_shaping
//! vocab_size = 4
//! strata = 1:50, 2:50, 3:50, 4:50
//! batch_size = 32
//! ```
//!
//! Keys mirror [`TrainConfig`] field names. Unknown or repeated keys are errors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experience::SelectionMetric;
use crate::grpo::AdvantageMode;
use crate::optimizer::ShapingGranularity;
use crate::task::{Stratum, SuiteSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Rollouts per question `K`.
    pub group_size: usize,
    pub batch_size: usize,
    /// Experiential share `ρ ∈ [0, 1)`.
    pub rho: f64,
    /// Policy-shaping constant.
    pub beta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub entropy_coeff: f64,
    /// Batch Pass@1 that opens the delayed-start gate. Negative starts open.
    pub delayed_start_threshold: f64,
    /// Per-question updates carry a `1/(B·K)` factor, hence the large default.
    pub learning_rate: f64,
    pub use_clip: bool,
    pub use_shaping: bool,
    /// When false, replayed responses are re-based onto the rollout policy
    /// before the update, so no importance correction is applied to them.
    pub use_is_correction: bool,
    pub shaping_granularity: ShapingGranularity,
    pub selection_metric: SelectionMetric,
    pub advantage: AdvantageMode,
    /// Stored successes per question; `None` is unbounded.
    pub capacity_per_question: Option<usize>,
    /// Response length cap; `None` means longest answer plus one.
    pub max_len: Option<usize>,
    /// Masked GRPO band `[α_low, α_high]` on rollout correctness.
    pub masked_band: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            batch_size: 16,
            rho: 0.5,
            beta: 0.1,
            mu: 0.5,
            sigma: 1.0,
            epsilon: 0.2,
            entropy_coeff: 0.001,
            delayed_start_threshold: 0.35,
            learning_rate: 128.0,
            use_clip: false,
            use_shaping: true,
            use_is_correction: true,
            shaping_granularity: ShapingGranularity::Trajectory,
            selection_metric: SelectionMetric::MeanNll,
            advantage: AdvantageMode::default(),
            capacity_per_question: Some(8),
            max_len: None,
            masked_band: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.group_size < 2 {
            return bad(format!("group_size {} < 2", self.group_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho {} outside [0, 1)", self.rho));
        }
        if !(self.beta > 0.0) || !(self.sigma > 0.0) {
            return bad("beta and sigma must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if self.delayed_start_threshold > 1.0 {
            return bad("delayed_start_threshold above 1 never opens".into());
        }
        if let Some((lo, hi)) = self.masked_band {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(format!(
                    "masked band ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"
                ));
            }
        }
        if self.capacity_per_question == Some(0) {
            return bad("capacity_per_question must be positive".into());
        }
        Ok(())
    }
}

/// One training arm of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Arm {
    ExGrpo { flags: Vec<AblationFlag> },
    OnPolicy,
    MaskedGrpo { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationFlag {
    NoShaping,
    NoIsCorrection,
    Clip,
    TokenShaping,
    NoDelay,
    Perplexity,
    DistEntropy,
}

impl AblationFlag {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "no_shaping" => Self::NoShaping,
            "no_is" => Self::NoIsCorrection,
            "clip" => Self::Clip,
            "token_shaping" => Self::TokenShaping,
            "no_delay" => Self::NoDelay,
            "ppl" => Self::Perplexity,
            "dist_entropy" => Self::DistEntropy,
            _ => return None,
        })
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::NoShaping => "no_shaping",
            Self::NoIsCorrection => "no_is",
            Self::Clip => "clip",
            Self::TokenShaping => "token_shaping",
            Self::NoDelay => "no_delay",
            Self::Perplexity => "ppl",
            Self::DistEntropy => "dist_entropy",
        }
    }
}

impl Arm {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("unknown arm {s:?}"));
        if s == "on_policy" {
            return Ok(Arm::OnPolicy);
        }
        if let Some(rest) = s.strip_prefix("masked_grpo(") {
            let inner = rest.strip_suffix(')').ok_or_else(bad)?;
            let (lo, hi) = inner.split_once(',').ok_or_else(bad)?;
            let low: f64 = lo.trim().parse().map_err(|_| bad())?;
            let high: f64 = hi.trim().parse().map_err(|_| bad())?;
            if !(0.0 <= low && low <= high && high <= 1.0) {
                return Err(bad());
            }
            return Ok(Arm::MaskedGrpo { low, high });
        }
        let mut parts = s.split('+');
        if parts.next() != Some("exgrpo") {
            return Err(bad());
        }
        let flags: BTreeSet<AblationFlag> = parts
            .map(|p| AblationFlag::parse(p.trim()).ok_or_else(bad))
            .collect::<Result<_>>()?;
        Ok(Arm::ExGrpo {
            flags: flags.into_iter().collect(),
        })
    }

    /// File-name friendly label, e.g. `exgrpo+no_shaping` or `masked_grpo_0.25_0.75`.
    pub fn label(&self) -> String {
        match self {
            Arm::OnPolicy => "on_policy".into(),
            Arm::MaskedGrpo { low, high } => format!("masked_grpo_{low}_{high}"),
            Arm::ExGrpo { flags } => {
                let mut s = String::from("exgrpo");
                for f in flags {
                    s.push('+');
                    s.push_str(f.as_str());
                }
                s
            }
        }
    }

    /// Specializes a base config for this arm.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Arm::OnPolicy => {
                cfg.rho = 0.0;
                cfg.masked_band = None;
            }
            Arm::MaskedGrpo { low, high } => {
                cfg.rho = 0.0;
                cfg.masked_band = Some((*low, *high));
            }
            Arm::ExGrpo { flags } => {
                cfg.masked_band = None;
                for f in flags {
                    match f {
                        AblationFlag::NoShaping => cfg.use_shaping = false,
                        AblationFlag::NoIsCorrection => cfg.use_is_correction = false,
                        AblationFlag::Clip => cfg.use_clip = true,
                        AblationFlag::TokenShaping => {
                            cfg.shaping_granularity = ShapingGranularity::Token
                        }
                        AblationFlag::NoDelay => cfg.delayed_start_threshold = -1.0,
                        AblationFlag::Perplexity => {
                            cfg.selection_metric = SelectionMetric::Perplexity
                        }
                        AblationFlag::DistEntropy => {
                            cfg.selection_metric = SelectionMetric::MeanDistEntropy
                        }
                    }
                }
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub config: TrainConfig,
    pub vocab_size: usize,
    pub suite_spec: SuiteSpec,
    /// Seed for generating the task suite (shared by every arm and seed).
    pub suite_seed: u64,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            config: TrainConfig::default(),
            vocab_size: 4,
            suite_spec: SuiteSpec::new(&[(1, 50), (2, 50), (3, 50), (4, 50)]),
            suite_seed: 0,
            steps: 600,
            seeds: vec![1, 2, 3, 4, 5],
            arms: vec![Arm::ExGrpo { flags: vec![] }, Arm::OnPolicy],
        }
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn parse_optional_usize(v: &str) -> std::result::Result<Option<usize>, String> {
    if v == "none" || v == "inf" {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

/// Splits a list on commas that are not inside parentheses.
fn split_list(v: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in v.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(v[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = v[start..].trim();
    if !last.is_empty() {
        out.push(last);
    }
    out
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = ExperimentSpec::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            spec.set(key, value)
                .map_err(|m| err(format!("field `{key}`: {m}")))?;
        }
        if spec.seeds.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "seeds must be non-empty".into(),
            });
        }
        if spec.steps == 0 {
            return Err(Error::Parse {
                line: 0,
                message: "steps must be at least 1".into(),
            });
        }
        if spec.arms.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "arms must be non-empty".into(),
            });
        }
        spec.config.validate().map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(spec)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let c = &mut self.config;
        match key {
            "name" => self.name = v.to_string(),
            "steps" => self.steps = parse_num(v)?,
            "seeds" => {
                self.seeds = split_list(v)
                    .into_iter()
                    .map(parse_num)
                    .collect::<std::result::Result<_, _>>()?
            }
            "arms" => {
                self.arms = split_list(v)
                    .into_iter()
                    .map(|a| Arm::parse(a).map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "vocab_size" => self.vocab_size = parse_num(v)?,
            "suite_seed" => self.suite_seed = parse_num(v)?,
            "alphabet" => self.suite_spec.alphabet = parse_optional_usize(v)?,
            "strata" => {
                self.suite_spec.strata = split_list(v)
                    .into_iter()
                    .map(|s| {
                        let (d, n) = s
                            .split_once(':')
                            .ok_or_else(|| format!("stratum {s:?} is not d:count"))?;
                        Ok(Stratum {
                            difficulty: parse_num(d.trim())?,
                            count: parse_num(n.trim())?,
                        })
                    })
                    .collect::<std::result::Result<_, String>>()?
            }
            "group_size" => c.group_size = parse_num(v)?,
            "batch_size" => c.batch_size = parse_num(v)?,
            "rho" => c.rho = parse_num(v)?,
            "beta" => c.beta = parse_num(v)?,
            "mu" => c.mu = parse_num(v)?,
            "sigma" => c.sigma = parse_num(v)?,
            "epsilon" => c.epsilon = parse_num(v)?,
            "entropy_coeff" => c.entropy_coeff = parse_num(v)?,
            "delayed_start_threshold" => c.delayed_start_threshold = parse_num(v)?,
            "learning_rate" => c.learning_rate = parse_num(v)?,
            "use_clip" => c.use_clip = parse_bool(v)?,
            "use_shaping" => c.use_shaping = parse_bool(v)?,
            "use_is_correction" => c.use_is_correction = parse_bool(v)?,
            "scale_by_std" => c.advantage.scale_by_std = parse_bool(v)?,
            "shaping_granularity" => {
                c.shaping_granularity = match v {
                    "trajectory" => ShapingGranularity::Trajectory,
                    "token" => ShapingGranularity::Token,
                    _ => return Err(format!("expected trajectory or token, got {v:?}")),
                }
            }
            "selection_metric" => {
                c.selection_metric = match v {
                    "mean_nll" => SelectionMetric::MeanNll,
                    "mean_dist_entropy" => SelectionMetric::MeanDistEntropy,
                    "perplexity" => SelectionMetric::Perplexity,
                    _ => {
                        return Err(format!(
                            "expected mean_nll, mean_dist_entropy or perplexity, got {v:?}"
                        ))
                    }
                }
            }
            "capacity_per_question" => c.capacity_per_question = parse_optional_usize(v)?,
            "max_len" => c.max_len = parse_optional_usize(v)?,
            "seed" => c.seed = parse_num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }
}
