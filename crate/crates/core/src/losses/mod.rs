//! Preference objectives over tabular policies, with exact gradients.
//!
//! Every loss returns a [`LossValue`] whose `grad` is the derivative of
//! `value` with respect to the logit table of `theta`.

mod exact;
mod grpo;
mod pairs;
mod sampled;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::policy::{Policy, PromptDist, RewardTable, Table};
use crate::rules::KtpoConfig;

pub use exact::{
    online_dpo_loss, online_gradient_parts, pa_loss, theorem_bound, theorem_surrogate,
    BoundTerms, GradientParts,
};
pub use grpo::{group_advantages, grpo_loss, GrpoGroup};
pub use pairs::{
    dpo_loss, exact_trpa_pairs, promptwise_loss, trpa_loss, trpa_weighted_loss, LabeledPair,
    WeightedPair,
};
pub use sampled::{online_dpo_sampled, pa_sampled, trpa_sampled, SampledEstimate};

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Table,
}

impl LossValue {
    pub fn zeros(policy: &Policy) -> Self {
        Self { value: 0.0, grad: policy.space().zeros() }
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, other: &LossValue, c: f64) {
        self.value += c * other.value;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            for (u, v) in a.iter_mut().zip(b) {
                *u += c * v;
            }
        }
    }

    /// Largest absolute gradient entry.
    pub fn grad_max_norm(&self) -> f64 {
        max_abs(&self.grad)
    }
}

pub(crate) fn max_abs(t: &Table) -> f64 {
    t.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Full summation over each prompt's response pairs.
    #[default]
    Exact,
    /// Monte-Carlo pairs from rollouts.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrpaConfig {
    pub ktpo: KtpoConfig,
    pub lambda: f64,
    #[serde(default)]
    pub mode: LossMode,
}

impl TrpaConfig {
    pub fn new(ktpo: KtpoConfig, lambda: f64, mode: LossMode) -> Result<Self> {
        let cfg = Self { ktpo, lambda, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.ktpo.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(domain(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Per-row log-ratios `log π_θ − log π_ref` and probabilities of `theta`.
pub(crate) struct Rows {
    pub probs: Vec<Vec<f64>>,
    pub log_ratio: Vec<Vec<f64>>,
}

impl Rows {
    pub fn new(theta: &Policy, reference: &Policy) -> Result<Self> {
        theta.same_space(reference)?;
        let n = theta.space().num_prompts();
        let probs = (0..n).map(|x| theta.row_probs(x)).collect();
        let log_ratio = (0..n)
            .map(|x| {
                theta
                    .row_log_probs(x)
                    .iter()
                    .zip(reference.row_log_probs(x))
                    .map(|(a, b)| a - b)
                    .collect()
            })
            .collect();
        Ok(Self { probs, log_ratio })
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(domain(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

pub(crate) fn check_exact_inputs(
    theta: &Policy,
    reference: &Policy,
    prompts: &PromptDist,
    rewards: &RewardTable,
    beta: f64,
) -> Result<()> {
    check_beta(beta)?;
    theta.same_space(reference)?;
    prompts.check_space(theta.space())?;
    if **rewards.space() != **theta.space() {
        return Err(crate::error::shape("reward table and policy spaces differ"));
    }
    Ok(())
}

/// `KL(old(·|x) ‖ θ(·|x))` weighted over prompts, with its gradient in `θ`.
pub(crate) fn kl_old_theta(theta: &Policy, old: &Policy, prompts: &PromptDist) -> Result<LossValue> {
    theta.same_space(old)?;
    prompts.check_space(theta.space())?;
    let mut out = LossValue::zeros(theta);
    for x in 0..theta.space().num_prompts() {
        let w = prompts.weight(x);
        if w == 0.0 {
            continue;
        }
        let o = old.row_probs(x);
        let p = theta.row_probs(x);
        out.value += w * crate::distmath::kl_raw(&o, &p);
        for (k, g) in out.grad[x].iter_mut().enumerate() {
            *g = w * (p[k] - o[k]);
        }
    }
    Ok(out)
}
