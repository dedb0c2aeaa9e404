//! Exact on-policy pairwise objectives (Online DPO and PA) and the
//! improvement-bound terms.
//!
//! For a prompt with sampling distribution `s` and pair divergence
//! `f_ij = f(P_ij, h_ij)`, the objective is `Σ_ij s_i s_j f_ij`. When `s` is the
//! policy being differentiated the gradient splits into a score term,
//! `Σ_j F_kj + Σ_i F_ik − 2 s_k ΣF` with `F_ij = s_i s_j f_ij`, and a direct
//! term through the margin, `β (Σ_j D_kj − Σ_i D_ik)` with
//! `D_ij = s_i s_j (σ(h_ij) − P_ij)`.

use crate::distmath::{cross_entropy_logit, kl_between_logits, logistic};
use crate::error::Result;
use crate::policy::{kl_max, Policy, PromptDist, RewardTable, Table};
use crate::preference::PreferenceModel;

use super::{check_exact_inputs, LossValue, Rows};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Divergence {
    CrossEntropy,
    Kl,
}

/// Value of an on-policy pairwise objective and the two parts of its
/// gradient; `score + direct` is the full gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientParts {
    pub value: f64,
    pub score: Table,
    pub direct: Table,
}

/// Pairwise expectation under `sampler ⊗ sampler`, differentiating the
/// margin through `theta` (direct) and the sampling weights through
/// `sampler` (score).
fn pairwise(
    sampler: &Policy,
    theta: &Policy,
    reference: &Policy,
    prompts: &PromptDist,
    rewards: &RewardTable,
    beta: f64,
    div: Divergence,
) -> Result<GradientParts> {
    check_exact_inputs(theta, reference, prompts, rewards, beta)?;
    sampler.same_space(theta)?;
    let rows = Rows::new(theta, reference)?;
    let space = theta.space();
    let mut out = GradientParts { value: 0.0, score: space.zeros(), direct: space.zeros() };
    for x in 0..space.num_prompts() {
        let w = prompts.weight(x);
        if w == 0.0 {
            continue;
        }
        let s = sampler.row_probs(x);
        let u = &rows.log_ratio[x];
        let r = rewards.row(x);
        let m = s.len();
        let mut row_f = vec![0.0; m];
        let mut col_f = vec![0.0; m];
        let mut row_d = vec![0.0; m];
        let mut col_d = vec![0.0; m];
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                let d = r[i] - r[j];
                let h = beta * (u[i] - u[j]);
                let f = match div {
                    Divergence::CrossEntropy => cross_entropy_logit(logistic(d), h),
                    Divergence::Kl => kl_between_logits(d, h),
                };
                let q = s[i] * s[j];
                let fq = q * f;
                let dq = q * (logistic(h) - logistic(d));
                row_f[i] += fq;
                col_f[j] += fq;
                row_d[i] += dq;
                col_d[j] += dq;
                total += fq;
            }
        }
        out.value += w * total;
        for k in 0..m {
            out.score[x][k] = w * (row_f[k] + col_f[k] - 2.0 * s[k] * total);
            out.direct[x][k] = w * beta * (row_d[k] - col_d[k]);
        }
    }
    Ok(out)
}

fn combine(parts: GradientParts) -> LossValue {
    let mut grad = parts.score;
    for (g, d) in grad.iter_mut().zip(&parts.direct) {
        for (a, b) in g.iter_mut().zip(d) {
            *a += b;
        }
    }
    LossValue { value: parts.value, grad }
}

/// Exact Online DPO loss `E_x E_{y1,y2∼π_θ} H(p*, p_θ)`.
pub fn online_dpo_loss(
    theta: &Policy,
    reference: &Policy,
    prompts: &PromptDist,
    pref: &PreferenceModel,
    beta: f64,
) -> Result<LossValue> {
    let r = pref.bt_rewards()?;
    Ok(combine(pairwise(theta, theta, reference, prompts, r, beta, Divergence::CrossEntropy)?))
}

/// Exact PA loss `E_x E_{y1,y2∼π_θ} KL(p* ‖ p_θ)`.
pub fn pa_loss(
    theta: &Policy,
    reference: &Policy,
    prompts: &PromptDist,
    pref: &PreferenceModel,
    beta: f64,
) -> Result<LossValue> {
    let r = pref.bt_rewards()?;
    Ok(combine(pairwise(theta, theta, reference, prompts, r, beta, Divergence::Kl)?))
}

/// Score and direct parts of the Online DPO gradient.
pub fn online_gradient_parts(
    theta: &Policy,
    reference: &Policy,
    prompts: &PromptDist,
    pref: &PreferenceModel,
    beta: f64,
) -> Result<GradientParts> {
    pairwise(theta, theta, reference, prompts, pref.bt_rewards()?, beta, Divergence::CrossEntropy)
}

/// `L̄^{old}(new) = E_x E_{y1,y2∼old} [H(p*, p_new) + M]`.
pub fn theorem_surrogate(
    new: &Policy,
    old: &Policy,
    reference: &Policy,
    prompts: &PromptDist,
    pref: &PreferenceModel,
    beta: f64,
) -> Result<f64> {
    Ok(pairwise(old, new, reference, prompts, pref.bt_rewards()?, beta, Divergence::Kl)?.value)
}

/// Both sides of the improvement bound for one `(old, new)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    /// `L̄^{new}(new)`.
    pub lhs: f64,
    /// `L̄^{old}(new)`.
    pub surrogate: f64,
    /// Largest pair divergence `KL(p* ‖ p_new)` over the space.
    pub u_r: f64,
    /// `4 (Ū_r + 2 ln 2)`.
    pub a1: f64,
    pub kl_max: f64,
    pub rhs: f64,
    /// `rhs − lhs`; non-negative when the bound holds.
    pub slack: f64,
}

pub fn theorem_bound(
    new: &Policy,
    old: &Policy,
    reference: &Policy,
    prompts: &PromptDist,
    pref: &PreferenceModel,
    beta: f64,
) -> Result<BoundTerms> {
    let rewards = pref.bt_rewards()?;
    let lhs = pairwise(new, new, reference, prompts, rewards, beta, Divergence::Kl)?.value;
    let surrogate = pairwise(old, new, reference, prompts, rewards, beta, Divergence::Kl)?.value;
    let rows = Rows::new(new, reference)?;
    let mut u_r: f64 = 0.0;
    for x in 0..new.space().num_prompts() {
        if prompts.weight(x) == 0.0 {
            continue;
        }
        let (u, r) = (&rows.log_ratio[x], rewards.row(x));
        for i in 0..u.len() {
            for j in 0..u.len() {
                u_r = u_r.max(kl_between_logits(r[i] - r[j], beta * (u[i] - u[j])));
            }
        }
    }
    let a1 = 4.0 * (u_r + 2.0 * std::f64::consts::LN_2);
    let kl = kl_max(old, new)?;
    let rhs = surrogate + a1 * kl.sqrt();
    Ok(BoundTerms { lhs, surrogate, u_r, a1, kl_max: kl, rhs, slack: rhs - lhs })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::distmath::binary_entropy_raw;
    use crate::policy::{target_distribution, Space};

    const LN2: f64 = std::f64::consts::LN_2;

    fn canonical() -> (Policy, RewardTable, PromptDist) {
        let s = Arc::new(Space::with_sizes(&[3, 3]).unwrap());
        let reference = Policy::new(Arc::clone(&s), vec![vec![0.0; 3], vec![0.3, -0.2, 0.1]]).unwrap();
        let r = RewardTable::new(Arc::clone(&s), vec![vec![0.0, 1.0, 2.0], vec![2.0, 0.0, 1.0]]).unwrap();
        (reference, r, PromptDist::uniform(&s))
    }

    fn expected_entropy(theta: &Policy, r: &RewardTable, p: &PromptDist) -> f64 {
        (0..2)
            .map(|x| {
                let s = theta.row_probs(x);
                let row = r.row(x);
                let mut e = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        e += s[i] * s[j] * binary_entropy_raw(logistic(row[i] - row[j]));
                    }
                }
                p.weight(x) * e
            })
            .sum()
    }

    #[test]
    fn fair_coin_values() {
        let (reference, r, p) = canonical();
        let flat = RewardTable::new(Arc::clone(reference.space()), vec![vec![1.0; 3]; 2]).unwrap();
        let pref = PreferenceModel::BtFromRewards(flat);
        let od = online_dpo_loss(&reference, &reference, &p, &pref, 1.0).unwrap();
        assert!((od.value - LN2).abs() < 1e-15);
        assert!(pa_loss(&reference, &reference, &p, &pref, 1.0).unwrap().value.abs() < 1e-15);
        let _ = r;
    }

    #[test]
    fn target_is_stationary_for_pa_only() {
        let (reference, r, p) = canonical();
        let target = target_distribution(&reference, &r, 1.0).unwrap();
        let pref = PreferenceModel::BtFromRewards(r.clone());
        let pa = pa_loss(&target, &reference, &p, &pref, 1.0).unwrap();
        assert!(pa.value <= 1e-12);
        assert!(pa.grad_max_norm() <= 1e-9);
        let od = online_dpo_loss(&target, &reference, &p, &pref, 1.0).unwrap();
        assert!((od.value - expected_entropy(&target, &r, &p)).abs() < 1e-12);
        assert!(od.grad_max_norm() > 1e-3);
        let parts = online_gradient_parts(&target, &reference, &p, &pref, 1.0).unwrap();
        assert!(super::super::max_abs(&parts.direct) <= 1e-9);
    }

    #[test]
    fn decomposition_identity() {
        let (reference, r, p) = canonical();
        let theta = reference.with_logits(vec![vec![0.4, -1.0, 0.2], vec![1.5, 0.0, -0.5]]).unwrap();
        let pref = PreferenceModel::BtFromRewards(r.clone());
        let od = online_dpo_loss(&theta, &reference, &p, &pref, 0.7).unwrap().value;
        let pa = pa_loss(&theta, &reference, &p, &pref, 0.7).unwrap().value;
        assert!((od - pa - expected_entropy(&theta, &r, &p)).abs() < 1e-10);
    }

    #[test]
    fn rule_model_is_rejected_in_exact_mode() {
        let (reference, _, p) = canonical();
        assert!(pa_loss(&reference, &reference, &p, &PreferenceModel::RuleDeterministic, 1.0).is_err());
    }

    #[test]
    fn surrogate_and_bound() {
        let (reference, r, p) = canonical();
        let pref = PreferenceModel::BtFromRewards(r.clone());
        let new = reference.with_logits(vec![vec![0.4, -1.0, 0.2], vec![1.5, 0.0, -0.5]]).unwrap();
        let old = reference.with_logits(vec![vec![-0.3, 0.5, 0.0], vec![0.2, 0.9, -0.1]]).unwrap();
        let same = theorem_surrogate(&new, &new, &reference, &p, &pref, 1.0).unwrap();
        let pa = pa_loss(&new, &reference, &p, &pref, 1.0).unwrap().value;
        assert!((same - pa).abs() < 1e-12);

        let target = target_distribution(&reference, &r, 1.0).unwrap();
        assert!(theorem_surrogate(&target, &old, &reference, &p, &pref, 1.0).unwrap() < 1e-12);

        let b = theorem_bound(&new, &old, &reference, &p, &pref, 1.0).unwrap();
        assert!((b.lhs - pa).abs() < 1e-12);
        assert!(b.slack >= 0.0);
        assert!((b.a1 - 4.0 * (b.u_r + 2.0 * LN2)).abs() < 1e-15);
        let b = theorem_bound(&new, &new, &reference, &p, &pref, 1.0).unwrap();
        assert!(b.slack.abs() < 1e-12);
    }
}
