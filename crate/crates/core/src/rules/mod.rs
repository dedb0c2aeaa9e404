//! Rule-based preference levels for chain-of-thought responses.
//!
//! | level | meaning                                   |
//! |-------|-------------------------------------------|
//! | 1     | well formed, correct answer               |
//! | 2     | well formed, wrong answer                 |
//! | 3     | well formed, answer incomplete/unjudgeable |
//! | 4     | malformed                                 |

mod format;
mod judge;

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::preference::{PairRecord, PreferencePair};

pub use format::{check_format, last_boxed, FormatCheck, Task};
pub use judge::{judge_logic, judge_math, parse_rational, Verdict};

/// Rule level in `1..=4`; smaller is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PreferenceLevel(u8);

impl PreferenceLevel {
    pub const BEST: Self = Self(1);
    pub const WORST: Self = Self(4);

    pub fn new(level: u8) -> Result<Self> {
        if !(1..=4).contains(&level) {
            return Err(domain(format!("preference level must be in 1..=4, got {level}")));
        }
        Ok(Self(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn is_better_than(self, other: Self) -> bool {
        self.0 < other.0
    }
}

impl TryFrom<u8> for PreferenceLevel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PreferenceLevel> for u8 {
    fn from(l: PreferenceLevel) -> u8 {
        l.0
    }
}

impl fmt::Display for PreferenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One corpus row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub prompt_id: String,
    pub text: String,
    #[serde(default)]
    pub gold: Option<String>,
    pub task: Task,
}

/// Level plus a short human-readable reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub level: PreferenceLevel,
    pub diagnostics: String,
}

pub fn classify(record: &ResponseRecord) -> Classification {
    let out = |level: u8, why: &str| Classification {
        level: PreferenceLevel(level),
        diagnostics: why.to_string(),
    };
    let fc = check_format(&record.text, record.task);
    let payload = match (fc.well_formed, fc.payload) {
        (true, Some(p)) => p,
        _ => return out(4, fc.problem.as_deref().unwrap_or("malformed")),
    };
    if payload.trim().is_empty() {
        return out(3, "empty answer");
    }
    let Some(gold) = record.gold.as_deref() else {
        return out(3, "missing gold answer");
    };
    let verdict = match record.task {
        Task::Logic => judge_logic(&payload, gold),
        Task::Math => judge_math(&payload, gold),
    };
    match verdict {
        Verdict::Correct => out(1, "ok"),
        Verdict::Wrong(why) => out(2, &why),
        Verdict::Incomplete(why) => out(3, &why),
    }
}

/// Pairs over a group of responses to prompt `x`, where response `i` of the
/// group has `levels[i]`. Only distinct-level pairs are emitted, winner first,
/// in lexicographic order of the unordered index pair.
pub fn pairs_from_levels(x: usize, levels: &[PreferenceLevel]) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for i in 0..levels.len() {
        for j in i + 1..levels.len() {
            let (a, b) = (levels[i], levels[j]);
            if a == b {
                continue;
            }
            let (w, l) = if a.is_better_than(b) { (i, j) } else { (j, i) };
            out.push(PreferencePair { prompt: x, y1: w, y2: l, level1: levels[w], level2: levels[l] });
        }
    }
    out
}

/// Pairs for records of one prompt; `y1`/`y2` index `records`.
pub fn build_pairs(records: &[ResponseRecord], levels: &[PreferenceLevel]) -> Result<Vec<PairRecord>> {
    if records.len() != levels.len() {
        return Err(crate::error::shape(format!(
            "{} records but {} levels",
            records.len(),
            levels.len()
        )));
    }
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    if let Some(r) = records.iter().find(|r| r.prompt_id != first.prompt_id) {
        return Err(crate::error::precondition(format!(
            "records span prompts {:?} and {:?}",
            first.prompt_id, r.prompt_id
        )));
    }
    Ok(pairs_from_levels(0, levels)
        .into_iter()
        .map(|p| PairRecord {
            prompt: first.prompt_id.clone(),
            y1: p.y1,
            y2: p.y2,
            level1: p.level1,
            level2: p.level2,
        })
        .collect())
}

/// Base temperature `beta` and Kahneman-Tversky factor `n_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KtpoConfig {
    pub beta: f64,
    pub n_factor: f64,
}

impl KtpoConfig {
    pub fn new(beta: f64, n_factor: f64) -> Result<Self> {
        let cfg = Self { beta, n_factor };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(domain(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.n_factor >= 1.0 && self.n_factor.is_finite()) {
            return Err(domain(format!("n_factor must be at least 1, got {}", self.n_factor)));
        }
        Ok(())
    }
}

/// `N·β` when the winner is level 1, else `β`.
pub fn ktpo_beta(cfg: &KtpoConfig, level_of_y1: PreferenceLevel) -> f64 {
    if level_of_y1 == PreferenceLevel::BEST {
        cfg.n_factor * cfg.beta
    } else {
        cfg.beta
    }
}

pub fn read_corpus_jsonl<R: BufRead>(input: R) -> Result<Vec<ResponseRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_corpus_jsonl<W: Write>(mut out: W, records: &[ResponseRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
