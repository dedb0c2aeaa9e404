//! Logistic pair losses: DPO, TRPA and the prompt-wise fallback.

use crate::distmath::{log_sigmoid, logistic};
use crate::error::{domain, shape, Result};
use crate::policy::{Policy, PromptDist};
use crate::preference::PreferencePair;
use crate::rules::{ktpo_beta, PreferenceLevel};

use super::{check_beta, kl_old_theta, LossValue, Rows, TrpaConfig};

/// A pair with a sampled outcome; `y1_wins = false` swaps the roles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPair {
    pub pair: PreferencePair,
    pub y1_wins: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPair {
    pub pair: PreferencePair,
    pub weight: f64,
}

/// Adds `−weight · log σ(βa·u_a − βb·u_b)` on row `x`.
#[allow(clippy::too_many_arguments)]
fn add_pair_term(
    rows: &Rows,
    x: usize,
    a: usize,
    b: usize,
    beta_a: f64,
    beta_b: f64,
    weight: f64,
    out: &mut LossValue,
) {
    let u = &rows.log_ratio[x];
    let pi = &rows.probs[x];
    let h = beta_a * u[a] - beta_b * u[b];
    out.value -= weight * log_sigmoid(h);
    let dh = -weight * logistic(-h);
    let shift = (beta_a - beta_b) * dh;
    for (k, g) in out.grad[x].iter_mut().enumerate() {
        *g -= shift * pi[k];
    }
    out.grad[x][a] += beta_a * dh;
    out.grad[x][b] -= beta_b * dh;
}

/// Adds `−weight · log σ(c · u_y)` on row `x`.
fn add_single_term(rows: &Rows, x: usize, y: usize, c: f64, weight: f64, out: &mut LossValue) {
    let h = c * rows.log_ratio[x][y];
    out.value -= weight * log_sigmoid(h);
    let dh = -weight * logistic(-h) * c;
    for (k, g) in out.grad[x].iter_mut().enumerate() {
        *g -= dh * rows.probs[x][k];
    }
    out.grad[x][y] += dh;
}

/// Empirical DPO loss, the mean of `−log σ(h̄(x, winner, loser))`.
pub fn dpo_loss(theta: &Policy, reference: &Policy, data: &[LabeledPair], beta: f64) -> Result<LossValue> {
    check_beta(beta)?;
    if data.is_empty() {
        return Err(domain("DPO loss over an empty dataset"));
    }
    let rows = Rows::new(theta, reference)?;
    let mut out = LossValue::zeros(theta);
    let w = 1.0 / data.len() as f64;
    for d in data {
        d.pair.check(theta.space())?;
        let (a, b) = if d.y1_wins { (d.pair.y1, d.pair.y2) } else { (d.pair.y2, d.pair.y1) };
        add_pair_term(&rows, d.pair.prompt, a, b, beta, beta, w, &mut out);
    }
    Ok(out)
}

/// TRPA objective over explicitly weighted pairs:
/// `−Σ w · log σ(β(y1)·(u1 − u2)) + λ · E_x KL(old ‖ θ)`.
pub fn trpa_weighted_loss(
    theta: &Policy,
    reference: &Policy,
    old: &Policy,
    prompts: &PromptDist,
    pairs: &[WeightedPair],
    cfg: &TrpaConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    if pairs.is_empty() && cfg.lambda == 0.0 {
        return Err(domain("no pairs and no KL term: nothing to optimize"));
    }
    let rows = Rows::new(theta, reference)?;
    let mut out = LossValue::zeros(theta);
    for wp in pairs {
        let p = &wp.pair;
        p.check(theta.space())?;
        if !(wp.weight >= 0.0 && wp.weight.is_finite()) {
            return Err(domain(format!("pair weight must be non-negative, got {}", wp.weight)));
        }
        let b = ktpo_beta(&cfg.ktpo, p.level1);
        add_pair_term(&rows, p.prompt, p.y1, p.y2, b, b, wp.weight, &mut out);
    }
    if cfg.lambda > 0.0 {
        out.add_scaled(&kl_old_theta(theta, old, prompts)?, cfg.lambda);
    }
    Ok(out)
}

/// TRPA objective with the pair term averaged uniformly over `pairs`.
pub fn trpa_loss(
    theta: &Policy,
    reference: &Policy,
    old: &Policy,
    prompts: &PromptDist,
    pairs: &[PreferencePair],
    cfg: &TrpaConfig,
) -> Result<LossValue> {
    let w = if pairs.is_empty() { 0.0 } else { 1.0 / pairs.len() as f64 };
    let weighted: Vec<_> = pairs.iter().map(|&pair| WeightedPair { pair, weight: w }).collect();
    trpa_weighted_loss(theta, reference, old, prompts, &weighted, cfg)
}

/// The exact-expectation pair set: every distinct-level pair `{i, j}` of each
/// prompt, winner first, weighted by its probability `w_x · 2·o_i·o_j` of
/// appearing in a pair drawn from `old`.
pub fn exact_trpa_pairs(
    old: &Policy,
    prompts: &PromptDist,
    levels: &[Vec<PreferenceLevel>],
) -> Result<Vec<WeightedPair>> {
    let space = old.space();
    prompts.check_space(space)?;
    if levels.len() != space.num_prompts()
        || levels.iter().enumerate().any(|(x, l)| l.len() != space.num_responses(x))
    {
        return Err(shape("level table does not match the space"));
    }
    let mut out = Vec::new();
    for (x, lv) in levels.iter().enumerate() {
        let w = prompts.weight(x);
        if w == 0.0 {
            continue;
        }
        let o = old.row_probs(x);
        for pair in crate::rules::pairs_from_levels(x, lv) {
            out.push(WeightedPair { pair, weight: w * 2.0 * o[pair.y1] * o[pair.y2] });
        }
    }
    Ok(out)
}

/// Single-sided loss for a group whose responses share one level: raise the
/// members when the level is 1, lower them otherwise.
pub fn promptwise_loss(
    theta: &Policy,
    reference: &Policy,
    x: usize,
    group: &[usize],
    level: PreferenceLevel,
    cfg: &TrpaConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    if group.is_empty() {
        return Err(domain("prompt-wise loss over an empty group"));
    }
    for &y in group {
        theta.space().check(x, y)?;
    }
    let rows = Rows::new(theta, reference)?;
    let c = if level == PreferenceLevel::BEST { ktpo_beta(&cfg.ktpo, level) } else { -cfg.ktpo.beta };
    let mut out = LossValue::zeros(theta);
    let w = 1.0 / group.len() as f64;
    for &y in group {
        add_single_term(&rows, x, y, c, w, &mut out);
    }
    Ok(out)
}
