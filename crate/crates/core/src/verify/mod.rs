//! Numeric certificates for the lemmas, the improvement bound, the binary
//! divergence landscape and the analytic gradients.

mod convergence;
mod fd;
mod landscape;
mod lemmas;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::policy::{Policy, PromptDist, RewardTable, Space};
use crate::preference::PreferenceModel;

pub use convergence::{target_convergence, ConvergenceLoss, ConvergenceOptions};
pub use fd::{fd_check, fd_relative_error, LossId, FD_STEP, FD_TOL};
pub use landscape::{landscape, write_landscape_csv, LandscapePoint};
pub use lemmas::{
    decomposition_report, gradient_decomposition, lemma_online_dpo_not_pba, lemma_pa_is_pba,
    theorem1_sweep, value_identity_report, SweepOptions, NONZERO_TOL, ZERO_TOL,
};

/// Machine-readable verdict of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub claim: String,
    pub instance: String,
    pub metrics: BTreeMap<String, f64>,
    pub pass: bool,
}

impl Report {
    pub(crate) fn new(claim: &str, instance: &str) -> Self {
        Self { claim: claim.into(), instance: instance.into(), metrics: BTreeMap::new(), pass: false }
    }

    pub(crate) fn metric(mut self, key: &str, v: f64) -> Self {
        self.metrics.insert(key.into(), v);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A finite preference problem: space, reference, rewards, prompt weights, β.
#[derive(Debug, Clone)]
pub struct Instance {
    pub label: String,
    pub reference: Policy,
    pub rewards: RewardTable,
    pub prompts: PromptDist,
    pub beta: f64,
}

impl Instance {
    /// Two prompts with three responses each, rewards in `{0, 1, 2}`, β = 1.
    pub fn canonical() -> Self {
        let space = Arc::new(Space::with_sizes(&[3, 3]).expect("valid sizes"));
        Self {
            label: "canonical".into(),
            reference: Policy::new(Arc::clone(&space), vec![vec![0.0, 0.0, 0.0], vec![0.3, -0.2, 0.1]])
                .expect("finite logits"),
            rewards: RewardTable::new(Arc::clone(&space), vec![vec![0.0, 1.0, 2.0], vec![2.0, 0.0, 1.0]])
                .expect("finite rewards"),
            prompts: PromptDist::uniform(&space),
            beta: 1.0,
        }
    }

    /// Random instance with up to `max_prompts × max_responses` entries and
    /// rewards that are non-constant within every prompt.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_prompts: usize, max_responses: usize, label: String) -> Self {
        let np = rng.gen_range(1..=max_prompts.max(1));
        let sizes: Vec<usize> = (0..np).map(|_| rng.gen_range(2..=max_responses.max(2))).collect();
        let space = Arc::new(Space::with_sizes(&sizes).expect("sizes are at least 2"));
        let table = |rng: &mut R, lo: f64, hi: f64| -> Vec<Vec<f64>> {
            sizes.iter().map(|&n| (0..n).map(|_| rng.gen_range(lo..hi)).collect()).collect()
        };
        let reference = Policy::new(Arc::clone(&space), table(rng, -1.0, 1.0)).expect("finite logits");
        let rewards = RewardTable::new(Arc::clone(&space), table(rng, -2.0, 2.0)).expect("finite rewards");
        let w: Vec<f64> = (0..np).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        let prompts = PromptDist::new(w.iter().map(|v| v / total).collect()).expect("normalized");
        let beta = rng.gen_range(0.25..2.0);
        Self { label, reference, rewards, prompts, beta }
    }

    pub fn pref(&self) -> PreferenceModel {
        PreferenceModel::BtFromRewards(self.rewards.clone())
    }

    pub fn space(&self) -> &Arc<Space> {
        self.reference.space()
    }

    pub(crate) fn random_policy<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> Policy {
        let logits = self
            .space()
            .zeros()
            .into_iter()
            .map(|row| row.iter().map(|_| rng.gen_range(-scale..scale)).collect())
            .collect();
        self.reference.with_logits(logits).expect("finite logits")
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn random_instances_are_nondegenerate_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for i in 0..50 {
            let x = Instance::random(&mut a, 3, 5, format!("r{i}"));
            let y = Instance::random(&mut b, 3, 5, format!("r{i}"));
            assert_eq!(x.rewards, y.rewards);
            assert!(x.rewards.is_nonconstant_per_prompt());
            assert!(x.space().num_prompts() <= 3);
            assert!((0..x.space().num_prompts()).all(|p| x.space().num_responses(p) <= 5));
        }
    }

    #[test]
    fn report_json_shape() {
        let r = Report::new("c", "i").metric("m", 0.5);
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["claim"], "c");
        assert_eq!(v["metrics"]["m"], 0.5);
        assert_eq!(v["pass"], false);
    }
}
