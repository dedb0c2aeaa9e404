use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distmath::{binary_entropy_raw, logistic};
use crate::error::{precondition, Result};
use crate::losses::{max_abs, online_dpo_loss, online_gradient_parts, pa_loss, theorem_bound, GradientParts};
use crate::policy::{target_distribution, Policy};

use super::{Instance, Report};

/// Numerical zero for loss values and gradients.
pub const ZERO_TOL: f64 = 1e-9;
/// Smallest gradient norm accepted as clearly nonzero.
pub const NONZERO_TOL: f64 = 1e-3;
const VALUE_TOL: f64 = 1e-12;
const POWER_TOL: f64 = 1e-4;

fn perturbed(p: &Policy, noise: f64, seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = p
        .logits()
        .iter()
        .map(|row| row.iter().map(|v| v + rng.gen_range(-noise..noise)).collect())
        .collect();
    p.with_logits(logits).expect("finite logits")
}

/// PA is minimized, with zero gradient, at the Boltzmann target.
pub fn lemma_pa_is_pba(inst: &Instance) -> Result<Report> {
    let target = target_distribution(&inst.reference, &inst.rewards, inst.beta)?;
    let pref = inst.pref();
    let at = pa_loss(&target, &inst.reference, &inst.prompts, &pref, inst.beta)?;
    let off = pa_loss(&perturbed(&target, 0.1, 0), &inst.reference, &inst.prompts, &pref, inst.beta)?;
    let mut r = Report::new("pa_is_pba", &inst.label)
        .metric("pa_value", at.value)
        .metric("pa_value_tol", VALUE_TOL)
        .metric("grad_max_norm", at.grad_max_norm())
        .metric("grad_tol", ZERO_TOL)
        .metric("perturbed_grad_max_norm", off.grad_max_norm())
        .metric("perturbed_grad_min", POWER_TOL);
    r.pass = at.value <= VALUE_TOL && at.grad_max_norm() <= ZERO_TOL && off.grad_max_norm() > POWER_TOL;
    Ok(r)
}

/// Online DPO keeps a nonzero gradient at the Boltzmann target, carried by
/// the score term; the direct term vanishes there.
pub fn lemma_online_dpo_not_pba(inst: &Instance) -> Result<Report> {
    if !inst.rewards.is_nonconstant_per_prompt() {
        return Err(precondition("rewards must vary within every prompt"));
    }
    let target = target_distribution(&inst.reference, &inst.rewards, inst.beta)?;
    let pref = inst.pref();
    let total = online_dpo_loss(&target, &inst.reference, &inst.prompts, &pref, inst.beta)?;
    let parts = online_gradient_parts(&target, &inst.reference, &inst.prompts, &pref, inst.beta)?;
    let direct = max_abs(&parts.direct);
    let mut r = Report::new("online_dpo_not_pba", &inst.label)
        .metric("loss_value", total.value)
        .metric("grad_max_norm", total.grad_max_norm())
        .metric("grad_min", NONZERO_TOL)
        .metric("score_max_norm", max_abs(&parts.score))
        .metric("direct_max_norm", direct)
        .metric("direct_tol", ZERO_TOL);
    r.pass = total.grad_max_norm() >= NONZERO_TOL && direct <= ZERO_TOL;
    Ok(r)
}

/// Score and direct parts of the Online DPO gradient at `theta`.
pub fn gradient_decomposition(theta: &Policy, inst: &Instance) -> Result<GradientParts> {
    online_gradient_parts(theta, &inst.reference, &inst.prompts, &inst.pref(), inst.beta)
}

/// Checks that the two parts add up to the full gradient.
pub fn decomposition_report(theta: &Policy, inst: &Instance) -> Result<Report> {
    let parts = gradient_decomposition(theta, inst)?;
    let total = online_dpo_loss(theta, &inst.reference, &inst.prompts, &inst.pref(), inst.beta)?;
    let mut diff: f64 = 0.0;
    for ((s, d), t) in parts.score.iter().zip(&parts.direct).zip(&total.grad) {
        for ((a, b), c) in s.iter().zip(d).zip(t) {
            diff = diff.max((a + b - c).abs());
        }
    }
    let mut r = Report::new("gradient_decomposition", &inst.label)
        .metric("sum_minus_total_max_abs", diff)
        .metric("tol", 1e-10)
        .metric("score_max_norm", max_abs(&parts.score))
        .metric("direct_max_norm", max_abs(&parts.direct));
    r.pass = diff <= 1e-10;
    Ok(r)
}

/// Checks `online_dpo − pa = E[binary_entropy(p*)]` at `theta`, the
/// expectation taken over on-policy response pairs.
pub fn value_identity_report(theta: &Policy, inst: &Instance) -> Result<Report> {
    let pref = inst.pref();
    let online = online_dpo_loss(theta, &inst.reference, &inst.prompts, &pref, inst.beta)?.value;
    let pa = pa_loss(theta, &inst.reference, &inst.prompts, &pref, inst.beta)?.value;
    let mut expected = 0.0;
    for x in 0..inst.space().num_prompts() {
        let s = theta.row_probs(x);
        let r = inst.rewards.row(x);
        let mut e = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                e += s[i] * s[j] * binary_entropy_raw(logistic(r[i] - r[j]));
            }
        }
        expected += inst.prompts.weight(x) * e;
    }
    let gap = (online - pa - expected).abs();
    let mut r = Report::new("loss_value_identity", &inst.label)
        .metric("online_dpo", online)
        .metric("pa", pa)
        .metric("expected_entropy", expected)
        .metric("abs_gap", gap)
        .metric("tol", 1e-10);
    r.pass = gap <= 1e-10;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub trials: usize,
    pub seed: u64,
    /// Random logits are drawn from `[-scale, scale]`.
    pub logit_scale: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { trials: 1000, seed: 0, logit_scale: 3.0 }
    }
}

/// Random `(old, new)` pairs against the improvement bound. Odd trials use
/// `new` close to `old`, where the square-root term is small.
pub fn theorem1_sweep(inst: &Instance, opts: SweepOptions) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pref = inst.pref();
    let bound = |new: &Policy, old: &Policy| {
        theorem_bound(new, old, &inst.reference, &inst.prompts, &pref, inst.beta)
    };
    let (mut min, mut max, mut sum, mut violations) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..opts.trials {
        let old = inst.random_policy(&mut rng, opts.logit_scale);
        let new = if t % 2 == 0 {
            inst.random_policy(&mut rng, opts.logit_scale)
        } else {
            let noise = 0.05 * opts.logit_scale.max(1.0) * rng.gen::<f64>();
            perturbed(&old, noise.max(1e-6), rng.gen())
        };
        let b = bound(&new, &old)?;
        if !(b.slack >= -ZERO_TOL) {
            violations += 1;
        }
        min = min.min(b.slack);
        max = max.max(b.slack);
        sum += b.slack;
    }
    let same = inst.random_policy(&mut rng, opts.logit_scale);
    let eq = bound(&same, &same)?;
    let mut r = Report::new("theorem1_bound", &inst.label)
        .metric("trials", opts.trials as f64)
        .metric("logit_scale", opts.logit_scale)
        .metric("violations", violations as f64)
        .metric("min_slack", if opts.trials > 0 { min } else { 0.0 })
        .metric("max_slack", if opts.trials > 0 { max } else { 0.0 })
        .metric("mean_slack", if opts.trials > 0 { sum / opts.trials as f64 } else { 0.0 })
        .metric("slack_tol", -ZERO_TOL)
        .metric("equal_policies_slack", eq.slack);
    r.pass = violations == 0 && eq.slack == 0.0;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_lemmas_pass() {
        let inst = Instance::canonical();
        let r = lemma_pa_is_pba(&inst).unwrap();
        assert!(r.pass, "{r:?}");
        let r = lemma_online_dpo_not_pba(&inst).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.metrics["score_max_norm"] > NONZERO_TOL);
    }

    #[test]
    fn constant_rewards_are_excluded() {
        let mut inst = Instance::canonical();
        inst.rewards = crate::policy::RewardTable::new(
            std::sync::Arc::clone(inst.space()),
            vec![vec![1.0; 3]; 2],
        )
        .unwrap();
        assert!(lemma_online_dpo_not_pba(&inst).is_err());
    }

    // Two responses whose reference exactly offsets the reward gap: the
    // target is uniform and the score term cancels, so the gradient is zero
    // even though rewards differ.
    #[test]
    fn uniform_two_response_target_is_stationary() {
        let space = std::sync::Arc::new(crate::policy::Space::with_sizes(&[2]).unwrap());
        let inst = Instance {
            label: "offset".into(),
            reference: Policy::new(std::sync::Arc::clone(&space), vec![vec![1.0, 0.0]]).unwrap(),
            rewards: crate::policy::RewardTable::new(std::sync::Arc::clone(&space), vec![vec![0.0, 1.0]]).unwrap(),
            prompts: crate::policy::PromptDist::uniform(&space),
            beta: 1.0,
        };
        let r = lemma_online_dpo_not_pba(&inst).unwrap();
        assert!(r.metrics["grad_max_norm"] < 1e-12, "{r:?}");
        assert!(!r.pass);
    }

    #[test]
    fn decomposition_adds_up() {
        let inst = Instance::canonical();
        let theta = perturbed(&inst.reference, 1.0, 5);
        assert!(decomposition_report(&theta, &inst).unwrap().pass);
        let target = target_distribution(&inst.reference, &inst.rewards, 1.0).unwrap();
        let pa = pa_loss(&target, &inst.reference, &inst.prompts, &inst.pref(), 1.0).unwrap();
        assert!(pa.grad_max_norm() <= ZERO_TOL);
    }

    #[test]
    fn value_identity_on_canonical() {
        let inst = Instance::canonical();
        for seed in 0..5 {
            let r = value_identity_report(&perturbed(&inst.reference, 2.0, seed), &inst).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn small_sweep_passes() {
        let r = theorem1_sweep(&Instance::canonical(), SweepOptions { trials: 50, ..Default::default() }).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.metrics["min_slack"] > 0.0);
    }
}
