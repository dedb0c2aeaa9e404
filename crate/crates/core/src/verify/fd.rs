//! Central finite-difference checks of the analytic gradients.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{
    dpo_loss, grpo_loss, online_dpo_loss, pa_loss, promptwise_loss, trpa_loss, GrpoGroup,
    LabeledPair, LossMode, LossValue, TrpaConfig,
};
use crate::policy::Policy;
use crate::preference::PreferencePair;
use crate::rules::{pairs_from_levels, KtpoConfig, PreferenceLevel};

use super::{Instance, Report};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-6;
const GRPO_EPS: f64 = 0.2;
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossId {
    Dpo,
    OnlineDpo,
    Pa,
    Trpa,
    Grpo,
    PromptwiseWinner,
    PromptwiseLoser,
}

impl LossId {
    pub const ALL: [LossId; 7] = [
        LossId::Dpo,
        LossId::OnlineDpo,
        LossId::Pa,
        LossId::Trpa,
        LossId::Grpo,
        LossId::PromptwiseWinner,
        LossId::PromptwiseLoser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossId::Dpo => "dpo",
            LossId::OnlineDpo => "online-dpo",
            LossId::Pa => "pa",
            LossId::Trpa => "trpa",
            LossId::Grpo => "grpo",
            LossId::PromptwiseWinner => "promptwise-winner",
            LossId::PromptwiseLoser => "promptwise-loser",
        }
    }
}

impl FromStr for LossId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossId::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Lookup(format!("unknown loss {s:?}")))
    }
}

/// `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞, 1e-8)` with central
/// differences of step [`FD_STEP`] on every logit.
pub fn fd_relative_error(theta: &Policy, f: impl Fn(&Policy) -> Result<LossValue>) -> Result<f64> {
    let analytic = f(theta)?.grad;
    let (mut diff, mut na, mut nn): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for x in 0..analytic.len() {
        for k in 0..analytic[x].len() {
            let eval = |d: f64| -> Result<f64> {
                let mut l = theta.logits().clone();
                l[x][k] += d;
                Ok(f(&theta.with_logits(l)?)?.value)
            };
            let num = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
            let a = analytic[x][k];
            diff = diff.max((a - num).abs());
            na = na.max(a.abs());
            nn = nn.max(num.abs());
        }
    }
    Ok(diff / na.max(nn).max(1e-8))
}

fn random_pair<R: Rng>(rng: &mut R, inst: &Instance) -> PreferencePair {
    let x = rng.gen_range(0..inst.space().num_prompts());
    let n = inst.space().num_responses(x);
    let mut ys: Vec<usize> = (0..n).collect();
    ys.shuffle(rng);
    let a = rng.gen_range(1..=3u8);
    let b = rng.gen_range(a + 1..=4u8);
    PreferencePair {
        prompt: x,
        y1: ys[0],
        y2: ys[1],
        level1: PreferenceLevel::new(a).expect("in range"),
        level2: PreferenceLevel::new(b).expect("in range"),
    }
}

fn level<R: Rng>(rng: &mut R, lo: u8) -> PreferenceLevel {
    PreferenceLevel::new(rng.gen_range(lo..=4)).expect("in range")
}

/// One random instance of `loss`; returns the relative gradient error.
fn check_one(loss: LossId, rng: &mut ChaCha8Rng, index: usize) -> Result<f64> {
    let inst = Instance::random(rng, 3, 5, format!("fd #{index}"));
    let theta = inst.random_policy(rng, 1.5);
    let r = &inst.reference;
    let (p, pref, beta) = (&inst.prompts, inst.pref(), inst.beta);
    match loss {
        LossId::Dpo => {
            let data: Vec<LabeledPair> = (0..rng.gen_range(1..=6))
                .map(|_| LabeledPair { pair: random_pair(rng, &inst), y1_wins: rng.gen() })
                .collect();
            fd_relative_error(&theta, |t| dpo_loss(t, r, &data, beta))
        }
        LossId::OnlineDpo => fd_relative_error(&theta, |t| online_dpo_loss(t, r, p, &pref, beta)),
        LossId::Pa => fd_relative_error(&theta, |t| pa_loss(t, r, p, &pref, beta)),
        LossId::Trpa => {
            let old = inst.random_policy(rng, 1.5);
            let mut pairs = Vec::new();
            for x in 0..inst.space().num_prompts() {
                let lv: Vec<_> = (0..inst.space().num_responses(x)).map(|_| level(rng, 1)).collect();
                pairs.extend(pairs_from_levels(x, &lv));
            }
            let cfg = TrpaConfig::new(KtpoConfig::new(beta, 3.0)?, rng.gen_range(0.1..2.0), LossMode::Exact)?;
            fd_relative_error(&theta, |t| trpa_loss(t, r, &old, p, &pairs, &cfg))
        }
        LossId::Grpo => {
            // Redraw until every ratio sits clear of the clip boundaries.
            loop {
                let old = inst.random_policy(rng, 1.5);
                let theta = old.with_logits(
                    old.logits()
                        .iter()
                        .map(|row| row.iter().map(|v| v + rng.gen_range(-0.4..0.4)).collect())
                        .collect(),
                )?;
                let groups: Vec<GrpoGroup> = (0..rng.gen_range(1..=3))
                    .map(|_| {
                        let x = rng.gen_range(0..inst.space().num_prompts());
                        let g = rng.gen_range(2..=6);
                        GrpoGroup {
                            prompt: x,
                            responses: (0..g).map(|_| rng.gen_range(0..inst.space().num_responses(x))).collect(),
                            rewards: (0..g).map(|_| rng.gen_range(0.0..1.0)).collect(),
                        }
                    })
                    .collect();
                let near_kink = groups.iter().any(|g| {
                    g.responses.iter().any(|&y| {
                        let rho = theta.prob(g.prompt, y).unwrap_or(1.0) / old.prob(g.prompt, y).unwrap_or(1.0);
                        (rho - (1.0 - GRPO_EPS)).abs() < KINK_MARGIN || (rho - (1.0 + GRPO_EPS)).abs() < KINK_MARGIN
                    })
                });
                if near_kink {
                    continue;
                }
                let beta_kl = rng.gen_range(0.0..0.5);
                return fd_relative_error(&theta, |t| grpo_loss(t, &old, r, &groups, GRPO_EPS, beta_kl));
            }
        }
        LossId::PromptwiseWinner | LossId::PromptwiseLoser => {
            let x = rng.gen_range(0..inst.space().num_prompts());
            let n = inst.space().num_responses(x);
            let group: Vec<usize> = (0..rng.gen_range(1..=8)).map(|_| rng.gen_range(0..n)).collect();
            let lv = if loss == LossId::PromptwiseWinner { PreferenceLevel::BEST } else { level(rng, 2) };
            let cfg = TrpaConfig::new(KtpoConfig::new(beta, 3.0)?, 0.0, LossMode::Sampled)?;
            fd_relative_error(&theta, |t| promptwise_loss(t, r, x, &group, lv, &cfg))
        }
    }
}

/// Finite-difference check of `loss` on `n_instances` seeded random instances.
pub fn fd_check(loss: LossId, n_instances: usize, seed: u64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    for i in 0..n_instances {
        let e = check_one(loss, &mut rng, i)?;
        if !(e <= FD_TOL) {
            failures += 1;
        }
        worst = worst.max(e);
    }
    let mut r = Report::new(&format!("fd_gradient_{}", loss.name()), &format!("{n_instances} random instances, seed {seed}"))
        .metric("instances", n_instances as f64)
        .metric("max_relative_error", worst)
        .metric("tol", FD_TOL)
        .metric("step", FD_STEP)
        .metric("failures", failures as f64);
    r.pass = failures == 0;
    Ok(r)
}
