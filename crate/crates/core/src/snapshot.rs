//! Line-oriented replay-buffer snapshots.
//!
//! ```text
//! exgrpo-buffer 1
//! group_size 8
//! step 120
//! capacity 8
//! retired 4 17 31
//! question 12 3/8 2
//! traj 57 1 0.6931471805599453 | 2 0 3 | -1.2 -0.4 -0.9
//! traj 88 1 - | 2 0 3 | -0.8 -0.2 -0.3
//! ```
//!
//! A `traj` line holds producer version, reward, cached metric (`-` if
//! absent), tokens and behavior log-probs. Floats use the shortest
//! representation that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experience::{BufferEntry, ReplayBuffer, RetiredSet};
use crate::policy::Trajectory;
use crate::task::QuestionId;

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "exgrpo-buffer";

#[derive(Debug, Clone, PartialEq)]
pub struct BufferSnapshot {
    pub step: u64,
    pub buffer: ReplayBuffer,
    pub retired: RetiredSet,
}

impl BufferSnapshot {
    pub fn to_text(&self) -> String {
        let k = self.buffer.group_size();
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {SNAPSHOT_FORMAT_VERSION}");
        let _ = writeln!(out, "group_size {k}");
        let _ = writeln!(out, "step {}", self.step);
        match self.buffer.capacity_per_question() {
            Some(c) => {
                let _ = writeln!(out, "capacity {c}");
            }
            None => out.push_str("capacity none\n"),
        }
        out.push_str("retired");
        for id in self.retired.iter() {
            let _ = write!(out, " {id}");
        }
        out.push('\n');
        for (id, entry) in self.buffer.iter() {
            let hits = (entry.latest_acc * k as f64).round() as i64;
            let _ = writeln!(out, "question {id} {hits}/{k} {}", entry.stored.len());
            for t in &entry.stored {
                let reward = t.reward.map_or("-".to_string(), |r| r.to_string());
                let metric = t
                    .cached_metric
                    .map_or("-".to_string(), |m| format!("{m:?}"));
                let _ = write!(out, "traj {} {reward} {metric} |", t.producer_version);
                for tok in &t.tokens {
                    let _ = write!(out, " {tok}");
                }
                out.push_str(" |");
                for lp in &t.behavior_logprobs {
                    let _ = write!(out, " {lp:?}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Parser::new(text).parse()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

struct Line<'a> {
    number: usize,
    offset: usize,
    text: &'a str,
}

struct Parser<'a> {
    lines: Vec<Line<'a>>,
    pos: usize,
    end_offset: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let mut lines = Vec::new();
        let mut offset = 0;
        for (i, raw) in text.split_inclusive('\n').enumerate() {
            let body = raw.trim_end_matches('\n').trim_end_matches('\r');
            if !body.trim().is_empty() {
                lines.push(Line {
                    number: i + 1,
                    offset,
                    text: body,
                });
            }
            offset += raw.len();
        }
        Self {
            lines,
            pos: 0,
            end_offset: text.len(),
        }
    }

    fn error_at(line: &Line<'_>, message: impl Into<String>) -> Error {
        Error::CorruptSnapshot {
            line: line.number,
            offset: line.offset,
            message: message.into(),
        }
    }

    fn next_line(&mut self, what: &str) -> Result<&Line<'a>> {
        let end = self.end_offset;
        let last = self.lines.last().map_or(1, |l| l.number + 1);
        let line = self
            .lines
            .get(self.pos)
            .ok_or_else(|| Error::CorruptSnapshot {
                line: last,
                offset: end,
                message: format!("unexpected end of snapshot, expected {what}"),
            })?;
        self.pos += 1;
        Ok(line)
    }

    /// Reads `key rest...` and returns `rest`.
    fn keyed(&mut self, key: &str) -> Result<(&Line<'a>, &'a str)> {
        let line = self.next_line(key)?;
        let text = line.text;
        match text.split_once(' ') {
            Some((k, rest)) if k == key => Ok((line, rest.trim())),
            None if text.trim() == key => Ok((line, "")),
            _ => Err(Self::error_at(line, format!("expected `{key}`"))),
        }
    }

    fn parse(mut self) -> Result<BufferSnapshot> {
        let (line, version) = self.keyed(MAGIC)?;
        if version != SNAPSHOT_FORMAT_VERSION.to_string() {
            return Err(Self::error_at(
                line,
                format!("unsupported format version {version:?}"),
            ));
        }
        let (line, k) = self.keyed("group_size")?;
        let k: usize = num(line, k, "group size")?;
        if k < 2 {
            return Err(Self::error_at(line, "group size below 2"));
        }
        let (line, step) = self.keyed("step")?;
        let step: u64 = num(line, step, "step")?;
        let (line, cap) = self.keyed("capacity")?;
        let capacity = if cap == "none" {
            None
        } else {
            Some(num(line, cap, "capacity")?)
        };
        let (line, ids) = self.keyed("retired")?;
        let mut retired = RetiredSet::new();
        for tok in ids.split_whitespace() {
            if !retired.insert(QuestionId(num(line, tok, "retired id")?)) {
                return Err(Self::error_at(line, format!("retired id {tok} repeated")));
            }
        }
        let mut buffer = ReplayBuffer::new(k, capacity);
        while self.pos < self.lines.len() {
            let (line, rest) = self.keyed("question")?;
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Self::error_at(
                    line,
                    "expected `question <id> <k>/<K> <count>`",
                ));
            }
            let id = QuestionId(num(line, fields[0], "question id")?);
            let (hits, denom) = fields[1]
                .split_once('/')
                .ok_or_else(|| Self::error_at(line, "accuracy is not k/K"))?;
            let hits: usize = num(line, hits, "success count")?;
            let denom: usize = num(line, denom, "group size")?;
            if denom != k || hits > k {
                return Err(Self::error_at(
                    line,
                    format!("accuracy {hits}/{denom} inconsistent with K={k}"),
                ));
            }
            let count: usize = num(line, fields[2], "trajectory count")?;
            if buffer.contains(id) {
                return Err(Self::error_at(line, format!("question {id} repeated")));
            }
            let mut stored = Vec::with_capacity(count);
            for _ in 0..count {
                let line = self.next_line("traj")?;
                stored.push(parse_traj(line, id)?);
            }
            buffer.insert_raw(
                id,
                BufferEntry {
                    latest_acc: hits as f64 / k as f64,
                    stored,
                },
            );
        }
        Ok(BufferSnapshot {
            step,
            buffer,
            retired,
        })
    }
}

fn num<T: std::str::FromStr>(line: &Line<'_>, s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Parser::error_at(line, format!("bad {what}: {s:?}")))
}

fn parse_traj(line: &Line<'_>, id: QuestionId) -> Result<Trajectory> {
    let body = line
        .text
        .strip_prefix("traj ")
        .ok_or_else(|| Parser::error_at(line, "expected `traj`"))?;
    let parts: Vec<&str> = body.split('|').collect();
    if parts.len() != 3 {
        return Err(Parser::error_at(
            line,
            "expected three `|`-separated sections",
        ));
    }
    let head: Vec<&str> = parts[0].split_whitespace().collect();
    if head.len() != 3 {
        return Err(Parser::error_at(
            line,
            "expected `<version> <reward> <metric>`",
        ));
    }
    let producer_version = num(line, head[0], "producer version")?;
    let reward = match head[1] {
        "-" => None,
        r => Some(num::<u8>(line, r, "reward")?),
    };
    let cached_metric = match head[2] {
        "-" => None,
        m => Some(num::<f64>(line, m, "metric")?),
    };
    let tokens = parts[1]
        .split_whitespace()
        .map(|t| num(line, t, "token"))
        .collect::<Result<Vec<usize>>>()?;
    let behavior_logprobs = parts[2]
        .split_whitespace()
        .map(|t| num(line, t, "log-prob"))
        .collect::<Result<Vec<f64>>>()?;
    if tokens.len() != behavior_logprobs.len() {
        return Err(Parser::error_at(line, "token and log-prob counts differ"));
    }
    Ok(Trajectory {
        question_id: id,
        tokens,
        behavior_logprobs,
        reward,
        producer_version,
        cached_metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(id: u32, tokens: Vec<usize>, lps: Vec<f64>) -> Trajectory {
        Trajectory {
            question_id: QuestionId(id),
            tokens,
            behavior_logprobs: lps,
            reward: Some(1),
            producer_version: 7,
            cached_metric: Some(0.1 + 0.2),
        }
    }

    fn sample() -> BufferSnapshot {
        let mut buffer = ReplayBuffer::new(8, Some(4));
        buffer.insert_raw(
            QuestionId(3),
            BufferEntry {
                latest_acc: 3.0 / 8.0,
                stored: vec![
                    traj(3, vec![1, 2, 3], vec![-0.1, -1.0 / 3.0, -2.5e-17]),
                    Trajectory {
                        cached_metric: None,
                        ..traj(3, vec![0], vec![-std::f64::consts::LN_2])
                    },
                ],
            },
        );
        let mut retired = RetiredSet::new();
        retired.insert(QuestionId(9));
        retired.insert(QuestionId(1));
        BufferSnapshot {
            step: 42,
            buffer,
            retired,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sample();
        let text = s.to_text();
        let back = BufferSnapshot::from_text(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_text(), text);
        let lp = &back.buffer.get(QuestionId(3)).unwrap().stored[0].behavior_logprobs;
        assert_eq!(lp[1].to_bits(), (-1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn empty_round_trip() {
        let s = BufferSnapshot {
            step: 0,
            buffer: ReplayBuffer::new(4, None),
            retired: RetiredSet::new(),
        };
        assert_eq!(BufferSnapshot::from_text(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn corruption_reports_line_and_offset() {
        let text = sample().to_text();
        let bad = text.replace("question 3 3/8 2", "question 3 3/7 2");
        let err = BufferSnapshot::from_text(&bad).unwrap_err();
        let expected_offset = text.find("question").unwrap();
        assert!(
            matches!(err, Error::CorruptSnapshot { line: 6, offset, .. } if offset == expected_offset)
        );

        let truncated = &text[..text.rfind("traj").unwrap()];
        assert!(matches!(
            BufferSnapshot::from_text(truncated),
            Err(Error::CorruptSnapshot { .. })
        ));
        assert!(BufferSnapshot::from_text("not a snapshot").is_err());
        assert!(BufferSnapshot::from_text(&text.replace("| 1 2 3 |", "| 1 2 |")).is_err());
    }
}
