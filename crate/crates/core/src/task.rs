//! Synthetic verifiable tasks and the exact-match verifier.
//!
//! A question of difficulty `d` asks for a specific `d`-token answer. Each
//! question is its own policy class, so the policy has to discover every
//! answer through rollouts; longer answers are exponentially rarer under
//! an untrained policy.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{sequence_logprobs, ClassId, PolicyParams, Token, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuestionId(pub u32);

impl std::fmt::Display for QuestionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub class_id: ClassId,
    pub golden_answer: Vec<Token>,
    pub difficulty: usize,
    /// Latest rollout correctness `k/K`, if the question has been visited.
    pub latest_acc: Option<f64>,
}

/// One difficulty stratum: `count` questions with `difficulty`-token answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub difficulty: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub strata: Vec<Stratum>,
    /// Number of distinct answer tokens; defaults to every non-end token.
    pub alphabet: Option<usize>,
}

impl SuiteSpec {
    pub fn new(strata: &[(usize, usize)]) -> Self {
        Self {
            strata: strata
                .iter()
                .map(|&(difficulty, count)| Stratum { difficulty, count })
                .collect(),
            alphabet: None,
        }
    }

    pub fn total(&self) -> usize {
        self.strata.iter().map(|s| s.count).sum()
    }

    pub fn max_difficulty(&self) -> usize {
        self.strata.iter().map(|s| s.difficulty).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub questions: Vec<Question>,
    /// `(difficulty, count)` in ascending difficulty.
    pub strata_counts: Vec<(usize, usize)>,
}

impl TaskSuite {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Looks a question up by id. Ids from `generate_suite` are dense indices.
    pub fn get(&self, id: QuestionId) -> Option<&Question> {
        match self.questions.get(id.0 as usize) {
            Some(q) if q.id == id => Some(q),
            _ => self.questions.iter().find(|q| q.id == id),
        }
    }

    pub fn max_difficulty(&self) -> usize {
        self.questions
            .iter()
            .map(|q| q.difficulty)
            .max()
            .unwrap_or(0)
    }

    /// One line per question: `id<TAB>class<TAB>difficulty<TAB>tok tok ...`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for q in &self.questions {
            let toks: Vec<String> = q.golden_answer.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                q.id.0,
                q.class_id.0,
                q.difficulty,
                toks.join(" ")
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut questions = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!(
                    "expected 4 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let num = |s: &str, what: &str| -> Result<u64> {
                s.trim()
                    .parse()
                    .map_err(|_| err(format!("bad {what}: {s:?}")))
            };
            let id = num(fields[0], "id")? as u32;
            let class = num(fields[1], "class")? as u32;
            let difficulty = num(fields[2], "difficulty")? as usize;
            let golden_answer = fields[3]
                .split_whitespace()
                .map(|t| num(t, "token").map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            if golden_answer.len() != difficulty {
                return Err(err("answer length differs from difficulty".into()));
            }
            questions.push(Question {
                id: QuestionId(id),
                class_id: ClassId(class),
                golden_answer,
                difficulty,
                latest_acc: None,
            });
        }
        let mut ids: Vec<_> = questions.iter().map(|q| q.id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parse {
                line: 0,
                message: "duplicate question id".into(),
            });
        }
        Ok(Self {
            strata_counts: strata_counts(&questions),
            questions,
        })
    }
}

fn strata_counts(questions: &[Question]) -> Vec<(usize, usize)> {
    let mut counts = std::collections::BTreeMap::new();
    for q in questions {
        *counts.entry(q.difficulty).or_insert(0usize) += 1;
    }
    counts.into_iter().collect()
}

/// Draws golden answers uniformly from the answer alphabet.
pub fn generate_suite<R: Rng + ?Sized>(
    spec: &SuiteSpec,
    vocab: Vocabulary,
    rng: &mut R,
) -> Result<TaskSuite> {
    let available: Vec<Token> = vocab.answer_tokens().collect();
    let alphabet = spec.alphabet.unwrap_or(available.len());
    if alphabet == 0 || alphabet > available.len() {
        return Err(Error::VocabularyTooSmall {
            alphabet,
            needed: alphabet.max(1),
            available: available.len(),
        });
    }
    let letters = &available[..alphabet];
    let mut questions = Vec::with_capacity(spec.total());
    for stratum in &spec.strata {
        if stratum.difficulty == 0 {
            return Err(Error::InvalidArgument(
                "difficulty must be at least 1".into(),
            ));
        }
        for _ in 0..stratum.count {
            let idx = questions.len() as u32;
            let golden_answer = (0..stratum.difficulty)
                .map(|_| *letters.choose(rng).expect("non-empty alphabet"))
                .collect();
            questions.push(Question {
                id: QuestionId(idx),
                class_id: ClassId(idx),
                golden_answer,
                difficulty: stratum.difficulty,
                latest_acc: None,
            });
        }
    }
    Ok(TaskSuite {
        strata_counts: strata_counts(&questions),
        questions,
    })
}

/// The answer segment: tokens before the first end token, or the whole output.
pub fn answer_segment(output: &[Token], end_token: Token) -> &[Token] {
    match output.iter().position(|&t| t == end_token) {
        Some(i) => &output[..i],
        None => output,
    }
}

/// Binary verifiable reward: 1 iff the answer segment equals the golden answer.
pub fn verify(question: &Question, output: &[Token], end_token: Token) -> u8 {
    u8::from(answer_segment(output, end_token) == question.golden_answer.as_slice())
}

pub fn pass_at_1(rewards: &[u8]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::InvalidArgument("pass@1 of an empty batch".into()));
    }
    Ok(rewards.iter().map(|&r| f64::from(r)).sum::<f64>() / rewards.len() as f64)
}

/// Exact probability that one rollout of length at most `max_len` is
/// verified correct: the golden answer followed by the end token, or the
/// bare golden answer when it fills the whole response.
pub fn success_probability(
    params: &PolicyParams,
    question: &Question,
    max_len: usize,
) -> Result<f64> {
    let d = question.golden_answer.len();
    if d > max_len {
        return Ok(0.0);
    }
    let mut tokens = question.golden_answer.clone();
    if d < max_len {
        tokens.push(params.vocab().end_token());
    }
    Ok(sequence_logprobs(params, question.class_id, &tokens)?
        .iter()
        .sum::<f64>()
        .exp())
}

/// Mean exact success probability over every question in the suite.
pub fn suite_pass_at_1(params: &PolicyParams, suite: &TaskSuite, max_len: usize) -> Result<f64> {
    if suite.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for q in &suite.questions {
        total += success_probability(params, q, max_len)?;
    }
    Ok(total / suite.len() as f64)
}
