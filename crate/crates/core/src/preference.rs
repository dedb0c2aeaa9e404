//! Ground-truth and policy-implied binary preference distributions.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::distmath::{self, BinaryDist};
use crate::error::{domain, precondition, Error, Result};
use crate::policy::{Policy, RewardTable, Space};
use crate::rules::PreferenceLevel;

/// An ordered comparison `y1` vs `y2` under one prompt, with the rule levels
/// of both sides. Pairs built from rules always carry the winner as `y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: usize,
    pub y1: usize,
    pub y2: usize,
    pub level1: PreferenceLevel,
    pub level2: PreferenceLevel,
}

impl PreferencePair {
    pub fn new(
        prompt: usize,
        y1: usize,
        y2: usize,
        level1: PreferenceLevel,
        level2: PreferenceLevel,
    ) -> Result<Self> {
        if y1 == y2 {
            return Err(domain("a preference pair needs two distinct responses"));
        }
        Ok(Self { prompt, y1, y2, level1, level2 })
    }

    pub fn check(&self, space: &Space) -> Result<()> {
        space.check(self.prompt, self.y1)?;
        space.check(self.prompt, self.y2)?;
        if self.y1 == self.y2 {
            return Err(domain("a preference pair needs two distinct responses"));
        }
        Ok(())
    }

    pub fn to_record(&self, space: &Space) -> Result<PairRecord> {
        self.check(space)?;
        Ok(PairRecord {
            prompt: space.prompts()[self.prompt].clone(),
            y1: self.y1,
            y2: self.y2,
            level1: self.level1,
            level2: self.level2,
        })
    }
}

/// Line format of a pairs JSONL file. `y1`/`y2` index the prompt's responses
/// in their listed (or corpus) order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub prompt: String,
    pub y1: usize,
    pub y2: usize,
    pub level1: PreferenceLevel,
    pub level2: PreferenceLevel,
}

impl PairRecord {
    pub fn resolve(&self, space: &Space) -> Result<PreferencePair> {
        let x = space.prompt_index(&self.prompt)?;
        let pair = PreferencePair::new(x, self.y1, self.y2, self.level1, self.level2)?;
        pair.check(space)?;
        Ok(pair)
    }
}

pub fn write_pairs_jsonl<W: Write>(mut out: W, records: &[PairRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs_jsonl<R: BufRead>(input: R) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Source of the ground-truth preference `p*(z | y1, y2, x)`.
#[derive(Debug, Clone)]
pub enum PreferenceModel {
    /// Bradley-Terry comparison of scalar rewards.
    BtFromRewards(RewardTable),
    /// Certain preference for the better rule level.
    RuleDeterministic,
}

impl PreferenceModel {
    /// Smooth `p*` over the whole space; only the Bradley-Terry kind has one.
    pub fn bt_rewards(&self) -> Result<&RewardTable> {
        match self {
            Self::BtFromRewards(r) => Ok(r),
            Self::RuleDeterministic => Err(precondition(
                "exact expectations need a Bradley-Terry preference model over rewards",
            )),
        }
    }

    pub fn pstar_pair(&self, pair: &PreferencePair) -> Result<BinaryDist> {
        match self {
            Self::BtFromRewards(r) => bt_prob(r, pair.prompt, pair.y1, pair.y2),
            Self::RuleDeterministic => rule_pref(pair),
        }
    }
}

/// Bradley-Terry `p*(z=1) = σ(r(x,y1) − r(x,y2))`.
pub fn bt_prob(rewards: &RewardTable, x: usize, y1: usize, y2: usize) -> Result<BinaryDist> {
    let d = rewards.get(x, y1)? - rewards.get(x, y2)?;
    Ok(BinaryDist::new_unchecked(distmath::logistic(d)))
}

/// `β1·log(π_θ(y1|x)/π_ref(y1|x)) − β2·log(π_θ(y2|x)/π_ref(y2|x))`.
///
/// With `β1 = β2 = β` this is the DPO margin.
pub fn margin(
    theta: &Policy,
    reference: &Policy,
    beta1: f64,
    beta2: f64,
    x: usize,
    y1: usize,
    y2: usize,
) -> Result<f64> {
    theta.same_space(reference)?;
    if !(beta1 > 0.0 && beta2 > 0.0) {
        return Err(domain("margin temperatures must be positive"));
    }
    let r1 = theta.log_prob(x, y1)? - reference.log_prob(x, y1)?;
    let r2 = theta.log_prob(x, y2)? - reference.log_prob(x, y2)?;
    Ok(beta1 * r1 - beta2 * r2)
}

/// Policy-implied preference `p_θ(z=1) = σ(h̄_θ(x, y1, y2))`.
pub fn implied_pref(
    theta: &Policy,
    reference: &Policy,
    beta: f64,
    x: usize,
    y1: usize,
    y2: usize,
) -> Result<BinaryDist> {
    let h = margin(theta, reference, beta, beta, x, y1, y2)?;
    if h.is_nan() {
        return Err(domain("margin is undefined"));
    }
    Ok(BinaryDist::new_unchecked(distmath::logistic(h)))
}

/// `M = Σ_z p*(z) log p*(z)`, the negated binary entropy.
pub fn m_term(pstar: BinaryDist) -> f64 {
    -distmath::binary_entropy_raw(pstar.p1())
}

/// Deterministic preference for a rule-built pair: `y1` wins with certainty.
pub fn rule_pref(pair: &PreferencePair) -> Result<BinaryDist> {
    if !pair.level1.is_better_than(pair.level2) {
        return Err(precondition(format!(
            "rule pair must have a strictly better first level, got {} vs {}",
            pair.level1, pair.level2
        )));
    }
    Ok(BinaryDist::new_unchecked(1.0))
}
