//! Monte-Carlo estimators of the exact pairwise objectives.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::distmath::{cross_entropy_logit, kl_between_logits, log_sigmoid, logistic};
use crate::error::{domain, shape, Result};
use crate::policy::{Policy, PromptDist};
use crate::preference::PreferenceModel;
use crate::rules::{ktpo_beta, PreferenceLevel};

use super::{check_exact_inputs, kl_old_theta, Rows, TrpaConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

fn summarize(samples: &[f64]) -> SampledEstimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    SampledEstimate { mean, std_error: (var / n).sqrt(), n: samples.len() }
}

/// Draws `n` triples `x ∼ prompts`, `y1, y2 ∼ sampler(·|x)` and averages `f`.
fn estimate<R: Rng + ?Sized>(
    sampler: &Policy,
    prompts: &PromptDist,
    n: usize,
    rng: &mut R,
    mut f: impl FnMut(usize, usize, usize) -> f64,
) -> Result<SampledEstimate> {
    if n < 2 {
        return Err(domain("need at least 2 samples"));
    }
    let px = WeightedIndex::new(prompts.weights()).map_err(|e| domain(e.to_string()))?;
    let rows = (0..sampler.space().num_prompts())
        .map(|x| WeightedIndex::new(sampler.row_probs(x)).map_err(|e| domain(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let x = px.sample(rng);
            let y1 = rows[x].sample(rng);
            let y2 = rows[x].sample(rng);
            f(x, y1, y2)
        })
        .collect();
    Ok(summarize(&samples))
}

pub fn online_dpo_sampled<R: Rng + ?Sized>(
    theta: &Policy,
    reference: &Policy,
    prompts: &PromptDist,
    pref: &PreferenceModel,
    beta: f64,
    n: usize,
    rng: &mut R,
) -> Result<SampledEstimate> {
    let r = pref.bt_rewards()?;
    check_exact_inputs(theta, reference, prompts, r, beta)?;
    let rows = Rows::new(theta, reference)?;
    estimate(theta, prompts, n, rng, |x, i, j| {
        let u = &rows.log_ratio[x];
        cross_entropy_logit(logistic(r.row(x)[i] - r.row(x)[j]), beta * (u[i] - u[j]))
    })
}

pub fn pa_sampled<R: Rng + ?Sized>(
    theta: &Policy,
    reference: &Policy,
    prompts: &PromptDist,
    pref: &PreferenceModel,
    beta: f64,
    n: usize,
    rng: &mut R,
) -> Result<SampledEstimate> {
    let r = pref.bt_rewards()?;
    check_exact_inputs(theta, reference, prompts, r, beta)?;
    let rows = Rows::new(theta, reference)?;
    estimate(theta, prompts, n, rng, |x, i, j| {
        let u = &rows.log_ratio[x];
        kl_between_logits(r.row(x)[i] - r.row(x)[j], beta * (u[i] - u[j]))
    })
}

/// Estimates the exact TRPA objective by drawing pairs from `old`; equal-level
/// draws contribute zero. The KL term is added exactly.
#[allow(clippy::too_many_arguments)]
pub fn trpa_sampled<R: Rng + ?Sized>(
    theta: &Policy,
    reference: &Policy,
    old: &Policy,
    prompts: &PromptDist,
    levels: &[Vec<PreferenceLevel>],
    cfg: &TrpaConfig,
    n: usize,
    rng: &mut R,
) -> Result<SampledEstimate> {
    cfg.validate()?;
    let space = theta.space();
    if levels.len() != space.num_prompts()
        || levels.iter().enumerate().any(|(x, l)| l.len() != space.num_responses(x))
    {
        return Err(shape("level table does not match the space"));
    }
    let rows = Rows::new(theta, reference)?;
    let kl = if cfg.lambda > 0.0 { cfg.lambda * kl_old_theta(theta, old, prompts)?.value } else { 0.0 };
    let est = estimate(old, prompts, n, rng, |x, i, j| {
        let (a, b) = (levels[x][i], levels[x][j]);
        if a == b {
            return 0.0;
        }
        let (w, l) = if a.is_better_than(b) { (i, j) } else { (j, i) };
        let beta = ktpo_beta(&cfg.ktpo, levels[x][w]);
        let u = &rows.log_ratio[x];
        -log_sigmoid(beta * (u[w] - u[l]))
    })?;
    Ok(SampledEstimate { mean: est.mean + kl, ..est })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::losses::{exact_trpa_pairs, online_dpo_loss, pa_loss, trpa_weighted_loss, LossMode};
    use crate::policy::{RewardTable, Space};
    use crate::rules::KtpoConfig;

    #[test]
    fn estimators_agree_with_exact_values() {
        let s = Arc::new(Space::with_sizes(&[3, 4]).unwrap());
        let reference = Policy::new(Arc::clone(&s), vec![vec![0.0, 0.2, -0.1], vec![0.5, 0.0, 0.0, -0.5]]).unwrap();
        let theta = reference.with_logits(vec![vec![1.0, -0.4, 0.3], vec![0.0, 0.9, -0.2, 0.1]]).unwrap();
        let r = RewardTable::new(Arc::clone(&s), vec![vec![0.0, 1.0, 2.0], vec![1.0, -1.0, 0.5, 0.0]]).unwrap();
        let prompts = PromptDist::new(vec![0.4, 0.6]).unwrap();
        let pref = PreferenceModel::BtFromRewards(r);
        let mut rng = ChaCha8Rng::seed_from_u64(7);

        let exact = online_dpo_loss(&theta, &reference, &prompts, &pref, 0.8).unwrap().value;
        let est = online_dpo_sampled(&theta, &reference, &prompts, &pref, 0.8, 20_000, &mut rng).unwrap();
        assert!((est.mean - exact).abs() <= 5.0 * est.std_error);

        let exact = pa_loss(&theta, &reference, &prompts, &pref, 0.8).unwrap().value;
        let est = pa_sampled(&theta, &reference, &prompts, &pref, 0.8, 20_000, &mut rng).unwrap();
        assert!((est.mean - exact).abs() <= 5.0 * est.std_error);

        let lv = |v: &[u8]| v.iter().map(|&n| PreferenceLevel::new(n).unwrap()).collect::<Vec<_>>();
        let levels = vec![lv(&[1, 2, 4]), lv(&[3, 1, 1, 2])];
        let cfg = TrpaConfig::new(KtpoConfig::new(0.5, 2.0).unwrap(), 0.3, LossMode::Sampled).unwrap();
        let pairs = exact_trpa_pairs(&reference, &prompts, &levels).unwrap();
        let exact = trpa_weighted_loss(&theta, &reference, &reference, &prompts, &pairs, &cfg).unwrap().value;
        let est = trpa_sampled(&theta, &reference, &reference, &prompts, &levels, &cfg, 20_000, &mut rng).unwrap();
        assert!((est.mean - exact).abs() <= 5.0 * est.std_error);
    }
}
