//! Group-relative clipped policy objective.

use crate::distmath::kl_raw;
use crate::error::{domain, shape, Result};
use crate::policy::Policy;

use super::{LossValue, Rows};

/// Standard deviations at or below this count as a constant group.
const STD_FLOOR: f64 = 1e-8;

/// Sampled responses to one prompt with their rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoGroup {
    pub prompt: usize,
    pub responses: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// `(r − mean) / std` with the population std; zeros for a constant group.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(domain(format!("group size must be at least 2, got {}", rewards.len())));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > STD_FLOOR) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Negated clipped surrogate plus `beta_kl · KL(π_θ ‖ π_ref)`, both averaged
/// over groups. At a clip kink the gradient takes the unclipped branch.
pub fn grpo_loss(
    theta: &Policy,
    old: &Policy,
    reference: &Policy,
    groups: &[GrpoGroup],
    eps: f64,
    beta_kl: f64,
) -> Result<LossValue> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(domain(format!("clip ratio must lie in (0, 1), got {eps}")));
    }
    if !(beta_kl >= 0.0 && beta_kl.is_finite()) {
        return Err(domain(format!("beta_kl must be non-negative, got {beta_kl}")));
    }
    if groups.is_empty() {
        return Err(domain("GRPO loss over no groups"));
    }
    theta.same_space(old)?;
    let rows = Rows::new(theta, reference)?;
    let mut out = LossValue::zeros(theta);
    let gw = 1.0 / groups.len() as f64;
    for g in groups {
        if g.responses.len() != g.rewards.len() {
            return Err(shape("group responses and rewards differ in length"));
        }
        let adv = group_advantages(&g.rewards)?;
        let x = g.prompt;
        let old_p = old.row_probs(x);
        let pi = &rows.probs[x];
        let w = gw / g.responses.len() as f64;
        for (&y, a) in g.responses.iter().zip(adv) {
            theta.space().check(x, y)?;
            let rho = pi[y] / old_p[y];
            let clipped = rho.clamp(1.0 - eps, 1.0 + eps);
            let (term, live) = if rho * a <= clipped * a {
                (rho * a, true)
            } else {
                (clipped * a, rho == clipped)
            };
            out.value -= w * term;
            if live {
                // d(ρ)/d l_k = ρ (δ_yk − π_k)
                let c = -w * a * rho;
                for (k, gk) in out.grad[x].iter_mut().enumerate() {
                    *gk -= c * pi[k];
                }
                out.grad[x][y] += c;
            }
        }
        if beta_kl > 0.0 {
            let d = &rows.log_ratio[x];
            let ref_p = reference.row_probs(x);
            out.value += gw * beta_kl * kl_raw(pi, &ref_p);
            let mean_d: f64 = pi.iter().zip(d).map(|(p, v)| p * v).sum();
            for (k, gk) in out.grad[x].iter_mut().enumerate() {
                *gk += gw * beta_kl * pi[k] * (d[k] - mean_d);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::policy::Space;

    #[test]
    fn advantages_example() {
        let a = group_advantages(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let want = [1.732_050_807_568_877_2, -0.577_350_269_189_625_8, -0.577_350_269_189_625_8, -0.577_350_269_189_625_8];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(group_advantages(&[0.3; 5]).unwrap(), vec![0.0; 5]);
        assert!(group_advantages(&[1.0]).is_err());
    }

    #[test]
    fn on_policy_surrogate_is_zero() {
        let s = Arc::new(Space::with_sizes(&[4]).unwrap());
        let p = Policy::new(Arc::clone(&s), vec![vec![0.1, 0.5, -0.2, 0.0]]).unwrap();
        let g = GrpoGroup { prompt: 0, responses: vec![0, 1, 2, 1], rewards: vec![1.0, 0.0, 0.0, 0.0] };
        let v = grpo_loss(&p, &p, &p, std::slice::from_ref(&g), 0.2, 0.0).unwrap();
        assert!(v.value.abs() < 1e-15);

        let reference = Policy::uniform(Arc::clone(&s));
        let flat = GrpoGroup { rewards: vec![2.0; 4], ..g };
        let v = grpo_loss(&p, &p, &reference, &[flat], 0.2, 0.5).unwrap();
        let kl = kl_raw(&p.row_probs(0), &reference.row_probs(0));
        assert!((v.value - 0.5 * kl).abs() < 1e-15);
    }

    #[test]
    fn clipped_samples_have_no_gradient() {
        let s = Arc::new(Space::with_sizes(&[2]).unwrap());
        let old = Policy::uniform(Arc::clone(&s));
        let theta = Policy::new(Arc::clone(&s), vec![vec![2.0, 0.0]]).unwrap();
        // ρ ≈ (1.76, 0.24) with advantages (1, −1): both samples clip.
        let g = GrpoGroup { prompt: 0, responses: vec![0, 1], rewards: vec![1.0, 0.0] };
        let v = grpo_loss(&theta, &old, &old, &[g], 0.2, 0.0).unwrap();
        assert!((v.value + 0.2).abs() < 1e-12);
        assert_eq!(v.grad_max_norm(), 0.0);
        assert!(grpo_loss(&theta, &old, &old, &[], 0.2, 0.0).is_err());
    }
}
