//! Synthetic environments: a fixed map from response to level and reward.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Error, Result};
use crate::policy::{Policy, PromptDist, RewardTable, Space};
use crate::rules::PreferenceLevel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub id: String,
    pub responses: Vec<String>,
    #[serde(default)]
    pub levels: Option<Vec<PreferenceLevel>>,
    #[serde(default)]
    pub rewards: Option<Vec<f64>>,
    /// Reference (and initial) logits; uniform when absent.
    #[serde(default)]
    pub ref_logits: Option<Vec<f64>>,
    /// Relative prompt weight, 1 when absent; normalized over the prompts.
    #[serde(default)]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub prompts: Vec<PromptSpec>,
}

#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    pub space: Arc<Space>,
    pub prompts: PromptDist,
    pub levels: Vec<Vec<PreferenceLevel>>,
    pub rewards: RewardTable,
    pub reference: Policy,
}

/// Reward of a level when only levels are given: 1, 2/3, 1/3, 0.
fn level_reward(l: PreferenceLevel) -> f64 {
    f64::from(4 - l.get()) / 3.0
}

impl SyntheticEnv {
    pub fn from_spec(spec: &EnvSpec) -> Result<Self> {
        if spec.prompts.is_empty() {
            return Err(domain("environment has no prompts"));
        }
        let ids = spec.prompts.iter().map(|p| p.id.clone()).collect();
        let responses = spec.prompts.iter().map(|p| p.responses.clone()).collect();
        let space = Arc::new(Space::new(ids, responses)?);

        let mut levels = Vec::new();
        let mut rewards = Vec::new();
        let mut logits = Vec::new();
        for p in &spec.prompts {
            let n = p.responses.len();
            let check = |len: usize, what: &str| {
                if len != n {
                    Err(shape(format!("prompt {:?}: {len} {what} for {n} responses", p.id)))
                } else {
                    Ok(())
                }
            };
            let (lv, rw) = match (&p.levels, &p.rewards) {
                (Some(l), Some(r)) => {
                    check(l.len(), "levels")?;
                    check(r.len(), "rewards")?;
                    (l.clone(), r.clone())
                }
                (Some(l), None) => {
                    check(l.len(), "levels")?;
                    (l.clone(), l.iter().map(|&v| level_reward(v)).collect())
                }
                (None, Some(r)) => {
                    check(r.len(), "rewards")?;
                    let best = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lv = r
                        .iter()
                        .map(|&v| PreferenceLevel::new(if v == best { 1 } else { 2 }))
                        .collect::<Result<Vec<_>>>()?;
                    (lv, r.clone())
                }
                (None, None) => {
                    return Err(Error::Parse(format!("prompt {:?} needs levels or rewards", p.id)));
                }
            };
            levels.push(lv);
            rewards.push(rw);
            match &p.ref_logits {
                Some(l) => {
                    check(l.len(), "reference logits")?;
                    logits.push(l.clone());
                }
                None => logits.push(vec![0.0; n]),
            }
        }
        let prompts = if spec.prompts.iter().all(|p| p.weight.is_none()) {
            PromptDist::uniform(&space)
        } else {
            let w: Vec<f64> = spec.prompts.iter().map(|p| p.weight.unwrap_or(1.0)).collect();
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(domain("prompt weights must be finite and non-negative"));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(domain("prompt weights sum to zero"));
            }
            PromptDist::new(w.iter().map(|v| v / total).collect())?
        };
        Ok(Self {
            rewards: RewardTable::new(Arc::clone(&space), rewards)?,
            reference: Policy::new(Arc::clone(&space), logits)?,
            space,
            prompts,
            levels,
        })
    }

    /// One prompt with responses `correct`, `wrong-answer`, `bad-format` at
    /// levels 1, 2, 4 and a uniform reference.
    pub fn bandit() -> Self {
        let spec = EnvSpec {
            prompts: vec![PromptSpec {
                id: "q".into(),
                responses: vec!["correct".into(), "wrong-answer".into(), "bad-format".into()],
                levels: Some(
                    [1, 2, 4].iter().map(|&l| PreferenceLevel::new(l).expect("valid level")).collect(),
                ),
                rewards: None,
                ref_logits: None,
                weight: None,
            }],
        };
        Self::from_spec(&spec).expect("bundled bandit is valid")
    }

    pub fn level(&self, x: usize, y: usize) -> PreferenceLevel {
        self.levels[x][y]
    }

    /// Prompt-weighted probability mass on level-1 responses.
    pub fn level1_mass(&self, policy: &Policy) -> f64 {
        (0..self.space.num_prompts())
            .map(|x| {
                let p = policy.row_probs(x);
                let m: f64 = p
                    .iter()
                    .zip(&self.levels[x])
                    .filter(|(_, l)| **l == PreferenceLevel::BEST)
                    .map(|(v, _)| v)
                    .sum();
                self.prompts.weight(x) * m
            })
            .sum()
    }
}
