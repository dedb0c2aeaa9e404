//! Finite prompt/response spaces and tabular softmax policies.
//!
//! A [`Policy`] is a logit table with one row per prompt; the conditional
//! distribution over that prompt's responses is the softmax of its row.
//! Responses are atomic: a row entry stands for a whole response sequence.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distmath::{self, Categorical};
use crate::error::{domain, shape, Error, Result};

/// A ragged real table indexed by `(prompt, response)`.
pub type Table = Vec<Vec<f64>>;

/// Prompt identifiers and, per prompt, its response identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Space {
    prompts: Vec<String>,
    responses: Vec<Vec<String>>,
}

impl Space {
    pub fn new(prompts: Vec<String>, responses: Vec<Vec<String>>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(domain("a space needs at least one prompt"));
        }
        if prompts.len() != responses.len() {
            return Err(shape(format!(
                "{} prompts but {} response lists",
                prompts.len(),
                responses.len()
            )));
        }
        for (p, rs) in prompts.iter().zip(&responses) {
            if rs.len() < 2 {
                return Err(domain(format!("prompt {p:?} has fewer than 2 responses")));
            }
        }
        Ok(Self { prompts, responses })
    }

    /// Space with generated identifiers `x0, x1, …` and `y0, y1, …`.
    pub fn with_sizes(sizes: &[usize]) -> Result<Self> {
        let prompts = (0..sizes.len()).map(|i| format!("x{i}")).collect();
        let responses = sizes
            .iter()
            .map(|&n| (0..n).map(|j| format!("y{j}")).collect())
            .collect();
        Self::new(prompts, responses)
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn num_responses(&self, x: usize) -> usize {
        self.responses[x].len()
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn responses(&self, x: usize) -> &[String] {
        &self.responses[x]
    }

    pub fn prompt_index(&self, name: &str) -> Result<usize> {
        self.prompts
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::Lookup(format!("unknown prompt {name:?}")))
    }

    pub fn response_index(&self, x: usize, name: &str) -> Result<usize> {
        self.check_prompt(x)?;
        self.responses[x]
            .iter()
            .position(|r| r == name)
            .ok_or_else(|| Error::Lookup(format!("unknown response {name:?} for prompt {}", self.prompts[x])))
    }

    pub fn check_prompt(&self, x: usize) -> Result<()> {
        if x >= self.prompts.len() {
            return Err(Error::Lookup(format!("prompt index {x} out of range")));
        }
        Ok(())
    }

    pub fn check(&self, x: usize, y: usize) -> Result<()> {
        self.check_prompt(x)?;
        if y >= self.responses[x].len() {
            return Err(Error::Lookup(format!(
                "response index {y} out of range for prompt {}",
                self.prompts[x]
            )));
        }
        Ok(())
    }

    pub fn zeros(&self) -> Table {
        self.responses.iter().map(|rs| vec![0.0; rs.len()]).collect()
    }

    fn check_table(&self, table: &Table, what: &str) -> Result<()> {
        if table.len() != self.prompts.len()
            || table.iter().zip(&self.responses).any(|(row, rs)| row.len() != rs.len())
        {
            return Err(shape(format!("{what} table does not match the space")));
        }
        if table.iter().flatten().any(|v| !v.is_finite()) {
            return Err(domain(format!("{what} table has non-finite entries")));
        }
        Ok(())
    }
}

/// Sampling distribution over prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptDist {
    weights: Categorical,
}

impl PromptDist {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        Ok(Self { weights: Categorical::new(weights)? })
    }

    pub fn uniform(space: &Space) -> Self {
        Self { weights: Categorical::uniform(space.num_prompts()).expect("space has prompts") }
    }

    pub fn weights(&self) -> &[f64] {
        self.weights.probs()
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.weights.probs()[x]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub(crate) fn check_space(&self, space: &Space) -> Result<()> {
        if self.len() != space.num_prompts() {
            return Err(shape(format!(
                "prompt distribution has {} entries for {} prompts",
                self.len(),
                space.num_prompts()
            )));
        }
        Ok(())
    }
}

/// Tabular softmax policy `π(y|x) ∝ exp(logits[x][y])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    space: Arc<Space>,
    logits: Table,
}

impl Policy {
    pub fn new(space: Arc<Space>, logits: Table) -> Result<Self> {
        space.check_table(&logits, "logit")?;
        Ok(Self { space, logits })
    }

    pub fn uniform(space: Arc<Space>) -> Self {
        let logits = space.zeros();
        Self { space, logits }
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn logits(&self) -> &Table {
        &self.logits
    }

    pub fn into_logits(self) -> Table {
        self.logits
    }

    /// A policy over the same space with different logits.
    pub fn with_logits(&self, logits: Table) -> Result<Self> {
        Self::new(Arc::clone(&self.space), logits)
    }

    pub fn row_probs(&self, x: usize) -> Vec<f64> {
        distmath::softmax(&self.logits[x])
    }

    pub fn row_log_probs(&self, x: usize) -> Vec<f64> {
        distmath::log_softmax(&self.logits[x])
    }

    pub fn conditional(&self, x: usize) -> Result<Categorical> {
        self.space.check_prompt(x)?;
        Categorical::new(self.row_probs(x))
    }

    pub fn prob(&self, x: usize, y: usize) -> Result<f64> {
        self.space.check(x, y)?;
        Ok(self.row_probs(x)[y])
    }

    pub fn log_prob(&self, x: usize, y: usize) -> Result<f64> {
        self.space.check(x, y)?;
        Ok(self.row_log_probs(x)[y])
    }

    pub fn prob_named(&self, prompt: &str, response: &str) -> Result<f64> {
        let x = self.space.prompt_index(prompt)?;
        let y = self.space.response_index(x, response)?;
        self.prob(x, y)
    }

    pub(crate) fn same_space(&self, other: &Policy) -> Result<()> {
        if !Arc::ptr_eq(&self.space, &other.space) && *self.space != *other.space {
            return Err(shape("policies are defined over different spaces"));
        }
        Ok(())
    }

    /// Stable fingerprint of the logit bits.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for row in &self.logits {
            row.len().hash(&mut h);
            for v in row {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = TableDoc::from_table(&self.space, &self.logits);
        Ok(serde_json::to_string_pretty(&PolicyDoc { table: doc.0, logits: doc.1 })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PolicyDoc = serde_json::from_str(text)?;
        let (space, table) = doc.table.into_table(doc.logits, "logits")?;
        Self::new(Arc::new(space), table)
    }
}

/// Rewards `r(x, y)` over a space.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    space: Arc<Space>,
    r: Table,
}

impl RewardTable {
    pub fn new(space: Arc<Space>, r: Table) -> Result<Self> {
        space.check_table(&r, "reward")?;
        Ok(Self { space, r })
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn get(&self, x: usize, y: usize) -> Result<f64> {
        self.space.check(x, y)?;
        Ok(self.r[x][y])
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.r[x]
    }

    pub fn table(&self) -> &Table {
        &self.r
    }

    /// True when every prompt has at least two distinct rewards.
    pub fn is_nonconstant_per_prompt(&self) -> bool {
        self.r.iter().all(|row| row.iter().any(|v| *v != row[0]))
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = TableDoc::from_table(&self.space, &self.r);
        Ok(serde_json::to_string_pretty(&RewardDoc { table: doc.0, rewards: doc.1 })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RewardDoc = serde_json::from_str(text)?;
        let (space, table) = doc.table.into_table(doc.rewards, "rewards")?;
        Self::new(Arc::new(space), table)
    }
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    prompts: Vec<String>,
    responses: BTreeMap<String, Vec<String>>,
}

impl TableDoc {
    fn from_table(space: &Space, table: &Table) -> (Self, BTreeMap<String, Vec<f64>>) {
        let responses = space
            .prompts
            .iter()
            .cloned()
            .zip(space.responses.iter().cloned())
            .collect();
        let values = space.prompts.iter().cloned().zip(table.iter().cloned()).collect();
        (Self { prompts: space.prompts.clone(), responses }, values)
    }

    fn into_table(mut self, mut values: BTreeMap<String, Vec<f64>>, key: &str) -> Result<(Space, Table)> {
        let mut responses = Vec::with_capacity(self.prompts.len());
        let mut table = Vec::with_capacity(self.prompts.len());
        for p in &self.prompts {
            responses.push(
                self.responses
                    .remove(p)
                    .ok_or_else(|| Error::Parse(format!("no responses listed for prompt {p:?}")))?,
            );
            table.push(
                values
                    .remove(p)
                    .ok_or_else(|| Error::Parse(format!("no {key} listed for prompt {p:?}")))?,
            );
        }
        Ok((Space::new(self.prompts, responses)?, table))
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    #[serde(flatten)]
    table: TableDoc,
    logits: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RewardDoc {
    #[serde(flatten)]
    table: TableDoc,
    rewards: BTreeMap<String, Vec<f64>>,
}

/// Boltzmann-tilted reference `π̄(y|x) = π_ref(y|x) exp(r(x,y)/β) / Z(x)`.
///
/// The returned policy stores normalized log-probabilities as its logits.
pub fn target_distribution(reference: &Policy, rewards: &RewardTable, beta: f64) -> Result<Policy> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(domain(format!("beta must be positive, got {beta}")));
    }
    if *reference.space != *rewards.space {
        return Err(shape("reward table and reference policy spaces differ"));
    }
    let logits = (0..reference.space.num_prompts())
        .map(|x| {
            let tilted: Vec<f64> = reference
                .row_log_probs(x)
                .iter()
                .zip(rewards.row(x))
                .map(|(lp, r)| lp + r / beta)
                .collect();
            distmath::log_softmax(&tilted)
        })
        .collect();
    reference.with_logits(logits)
}

/// Per-prompt `D_KL(old(·|x) ‖ new(·|x))`.
pub fn kl_per_prompt(old: &Policy, new: &Policy) -> Result<Vec<f64>> {
    old.same_space(new)?;
    Ok((0..old.space.num_prompts())
        .map(|x| distmath::kl_raw(&old.row_probs(x), &new.row_probs(x)))
        .collect())
}

/// `max_x D_KL(old(·|x) ‖ new(·|x))`.
pub fn kl_max(old: &Policy, new: &Policy) -> Result<f64> {
    Ok(kl_per_prompt(old, new)?.into_iter().fold(0.0, f64::max))
}

pub fn tv_per_prompt(a: &Policy, b: &Policy) -> Result<Vec<f64>> {
    a.same_space(b)?;
    Ok((0..a.space.num_prompts())
        .map(|x| distmath::tv_raw(&a.row_probs(x), &b.row_probs(x)))
        .collect())
}

/// `max_x D_TV(a(·|x) ‖ b(·|x))`.
pub fn tv_max(a: &Policy, b: &Policy) -> Result<f64> {
    Ok(tv_per_prompt(a, b)?.into_iter().fold(0.0, f64::max))
}

/// Prompt-weighted mean Shannon entropy of the conditional rows.
pub fn entropy_mean(policy: &Policy, prompts: &PromptDist) -> Result<f64> {
    prompts.check_space(&policy.space)?;
    Ok((0..policy.space.num_prompts())
        .map(|x| prompts.weight(x) * distmath::entropy_raw(&policy.row_probs(x)))
        .sum())
}
