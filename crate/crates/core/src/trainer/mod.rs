//! Online preference training on synthetic environments.
//!
//! Each step: refresh `π_old` on schedule, roll out groups from `π_old`,
//! grade them with the environment, build the algorithm's loss and take
//! plain gradient steps on the logits.

mod env;
mod report;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distmath::{logistic, softmax};
use crate::error::{domain, precondition, Error, Result};
use crate::losses::{
    dpo_loss, exact_trpa_pairs, grpo_loss, kl_old_theta, online_dpo_loss, pa_loss,
    promptwise_loss, theorem_bound, trpa_loss, trpa_weighted_loss, GrpoGroup, LabeledPair,
    LossMode, LossValue, TrpaConfig,
};
use crate::policy::{entropy_mean, Policy, PromptDist};
use crate::preference::{m_term, PreferenceModel, PreferencePair};
use crate::rules::{pairs_from_levels, PreferenceLevel};

pub use env::{EnvSpec, PromptSpec, SyntheticEnv};
pub use report::{render_svg, write_csv, CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Trpa,
    Grpo,
    OnlineDpo,
    Pa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoParams {
    pub eps: f64,
    #[serde(default)]
    pub beta_kl: f64,
}

/// Settings for the Online DPO and PA baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairwiseParams {
    pub beta: f64,
    #[serde(default)]
    pub mode: LossMode,
}

fn default_batch() -> usize {
    4
}
fn default_group() -> usize {
    8
}
fn default_one_f() -> f64 {
    1.0
}
fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub steps: usize,
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_prompts: usize,
    #[serde(default = "default_group")]
    pub rollouts_per_prompt: usize,
    #[serde(default = "default_one_f")]
    pub temperature: f64,
    #[serde(default = "default_one")]
    pub snapshot_every: usize,
    /// Gradient steps per batch of rollouts.
    #[serde(default = "default_one")]
    pub inner_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trpa: Option<TrpaConfig>,
    #[serde(default)]
    pub grpo: Option<GrpoParams>,
    #[serde(default)]
    pub pairwise: Option<PairwiseParams>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(domain(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(domain(format!("temperature must be positive, got {}", self.temperature)));
        }
        for (name, v) in [
            ("batch_prompts", self.batch_prompts),
            ("snapshot_every", self.snapshot_every),
            ("inner_steps", self.inner_steps),
        ] {
            if v == 0 {
                return Err(domain(format!("{name} must be positive")));
            }
        }
        if self.rollouts_per_prompt < 2 {
            return Err(domain("rollouts_per_prompt must be at least 2"));
        }
        match self.algorithm {
            Algorithm::Trpa => self.trpa.ok_or_else(|| missing("trpa"))?.validate(),
            Algorithm::Grpo => {
                let g = self.grpo.ok_or_else(|| missing("grpo"))?;
                if !(g.eps > 0.0 && g.eps < 1.0) || !(g.beta_kl >= 0.0) {
                    return Err(domain("grpo needs 0 < eps < 1 and beta_kl >= 0"));
                }
                Ok(())
            }
            Algorithm::OnlineDpo | Algorithm::Pa => {
                crate::losses::check_beta(self.pairwise.ok_or_else(|| missing("pairwise"))?.beta)
            }
        }
    }

    /// Temperature used by the improvement-bound monitor, if any.
    fn bound_beta(&self) -> Option<f64> {
        match self.algorithm {
            Algorithm::Trpa => self.trpa.map(|t| t.ktpo.beta),
            Algorithm::OnlineDpo | Algorithm::Pa => self.pairwise.map(|p| p.beta),
            Algorithm::Grpo => None,
        }
    }

    fn mode(&self) -> LossMode {
        match self.algorithm {
            Algorithm::Trpa => self.trpa.map_or(LossMode::Exact, |t| t.mode),
            Algorithm::OnlineDpo | Algorithm::Pa => self.pairwise.map_or(LossMode::Exact, |p| p.mode),
            Algorithm::Grpo => LossMode::Sampled,
        }
    }
}

fn missing(section: &str) -> Error {
    precondition(format!("algorithm needs a `{section}` section"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub entropy: f64,
    pub winner_logratio: f64,
    pub loser_logratio: f64,
    pub bound_slack: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    pub policy: Policy,
    /// Level-1 probability mass of the final policy.
    pub final_accuracy: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("training diverged at step {step}: non-finite loss or logits")]
    Diverged { step: usize, records: Vec<TrainRecord> },
}

/// Samples drawn for one prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RolloutGroup {
    pub prompt: usize,
    pub responses: Vec<usize>,
}

/// Draws `batch` prompts from `prompts` and `g` responses for each from
/// `softmax(logits / temperature)`.
pub fn rollout<R: Rng + ?Sized>(
    old: &Policy,
    prompts: &PromptDist,
    batch: usize,
    g: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Vec<RolloutGroup>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(domain(format!("temperature must be positive, got {temperature}")));
    }
    if g < 2 {
        return Err(domain("a rollout group needs at least 2 samples"));
    }
    let px = WeightedIndex::new(prompts.weights()).map_err(|e| domain(e.to_string()))?;
    let rows = old
        .logits()
        .iter()
        .map(|row| {
            let scaled: Vec<f64> = row.iter().map(|l| l / temperature).collect();
            WeightedIndex::new(softmax(&scaled)).map_err(|e| domain(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..batch)
        .map(|_| {
            let x = px.sample(rng);
            RolloutGroup { prompt: x, responses: (0..g).map(|_| rows[x].sample(rng)).collect() }
        })
        .collect())
}

/// Mean `log(π_θ/π_ref)` over the winner side and over the loser side.
pub fn logit_ratio_metrics(theta: &Policy, reference: &Policy, pairs: &[PreferencePair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(domain("logit-ratio metrics need at least one pair"));
    }
    let (mut w, mut l) = (0.0, 0.0);
    for p in pairs {
        w += theta.log_prob(p.prompt, p.y1)? - reference.log_prob(p.prompt, p.y1)?;
        l += theta.log_prob(p.prompt, p.y2)? - reference.log_prob(p.prompt, p.y2)?;
    }
    let n = pairs.len() as f64;
    Ok((w / n, l / n))
}

/// Distinct-level pairs inside each rollout group, over response ids.
pub fn rollout_pairs(env: &SyntheticEnv, groups: &[RolloutGroup]) -> Vec<PreferencePair> {
    groups.iter().flat_map(|g| group_pairs(env, g)).collect()
}

fn group_pairs(env: &SyntheticEnv, g: &RolloutGroup) -> Vec<PreferencePair> {
    let levels: Vec<PreferenceLevel> = g.responses.iter().map(|&y| env.level(g.prompt, y)).collect();
    pairs_from_levels(g.prompt, &levels)
        .into_iter()
        .map(|p| PreferencePair { y1: g.responses[p.y1], y2: g.responses[p.y2], ..p })
        .collect()
}

/// Loss inputs fixed for the duration of one step.
struct StepData {
    groups: Vec<RolloutGroup>,
    pairs_by_group: Vec<Vec<PreferencePair>>,
    labeled: Vec<LabeledPair>,
}

struct Trainer<'a> {
    env: &'a SyntheticEnv,
    cfg: &'a TrainConfig,
    pref: PreferenceModel,
}

impl Trainer<'_> {
    fn step_data(&self, groups: Vec<RolloutGroup>, rng: &mut ChaCha8Rng) -> StepData {
        let pairs_by_group = groups.iter().map(|g| group_pairs(self.env, g)).collect();
        let mut labeled = Vec::new();
        if matches!(self.cfg.algorithm, Algorithm::OnlineDpo | Algorithm::Pa)
            && self.cfg.mode() == LossMode::Sampled
        {
            // Preference labels drawn from the Bradley-Terry model on rewards.
            for g in &groups {
                let x = g.prompt;
                for i in 0..g.responses.len() {
                    for j in i + 1..g.responses.len() {
                        let (a, b) = (g.responses[i], g.responses[j]);
                        if a == b {
                            continue;
                        }
                        let p = logistic(self.env.rewards.row(x)[a] - self.env.rewards.row(x)[b]);
                        let pair = PreferencePair {
                            prompt: x,
                            y1: a,
                            y2: b,
                            level1: self.env.level(x, a),
                            level2: self.env.level(x, b),
                        };
                        labeled.push(LabeledPair { pair, y1_wins: rng.gen::<f64>() < p });
                    }
                }
            }
        }
        StepData { groups, pairs_by_group, labeled }
    }

    fn loss(&self, theta: &Policy, old: &Policy, data: &StepData) -> Result<LossValue> {
        let env = self.env;
        let reference = &env.reference;
        match self.cfg.algorithm {
            Algorithm::Trpa => {
                let cfg = self.cfg.trpa.expect("validated");
                if cfg.mode == LossMode::Exact {
                    let pairs = exact_trpa_pairs(old, &env.prompts, &env.levels)?;
                    return trpa_weighted_loss(theta, reference, old, &env.prompts, &pairs, &cfg);
                }
                let pair_cfg = TrpaConfig { lambda: 0.0, ..cfg };
                let mut out = LossValue::zeros(theta);
                let gw = 1.0 / data.groups.len() as f64;
                for (g, pairs) in data.groups.iter().zip(&data.pairs_by_group) {
                    let part = if pairs.is_empty() {
                        let level = env.level(g.prompt, g.responses[0]);
                        promptwise_loss(theta, reference, g.prompt, &g.responses, level, &cfg)?
                    } else {
                        trpa_loss(theta, reference, old, &env.prompts, pairs, &pair_cfg)?
                    };
                    out.add_scaled(&part, gw);
                }
                if cfg.lambda > 0.0 {
                    out.add_scaled(&kl_old_theta(theta, old, &env.prompts)?, cfg.lambda);
                }
                Ok(out)
            }
            Algorithm::Grpo => {
                let p = self.cfg.grpo.expect("validated");
                let groups: Vec<GrpoGroup> = data
                    .groups
                    .iter()
                    .map(|g| GrpoGroup {
                        prompt: g.prompt,
                        responses: g.responses.clone(),
                        rewards: g.responses.iter().map(|&y| env.rewards.row(g.prompt)[y]).collect(),
                    })
                    .collect();
                grpo_loss(theta, old, reference, &groups, p.eps, p.beta_kl)
            }
            Algorithm::OnlineDpo | Algorithm::Pa => {
                let p = self.cfg.pairwise.expect("validated");
                let is_pa = self.cfg.algorithm == Algorithm::Pa;
                if p.mode == LossMode::Exact {
                    return if is_pa {
                        pa_loss(theta, reference, &env.prompts, &self.pref, p.beta)
                    } else {
                        online_dpo_loss(theta, reference, &env.prompts, &self.pref, p.beta)
                    };
                }
                if data.labeled.is_empty() {
                    return Ok(LossValue::zeros(theta));
                }
                let mut out = dpo_loss(theta, reference, &data.labeled, p.beta)?;
                if is_pa {
                    let m: f64 = data
                        .labeled
                        .iter()
                        .map(|d| self.pref.pstar_pair(&d.pair).map(m_term))
                        .sum::<Result<f64>>()?;
                    out.value += m / data.labeled.len() as f64;
                }
                Ok(out)
            }
        }
    }
}

pub fn train(env: &SyntheticEnv, cfg: &TrainConfig) -> std::result::Result<TrainOutcome, TrainError> {
    train_with_observer(env, cfg, |_, _, _| {})
}

/// As [`train`], calling `observer(step, old, theta)` after each update.
pub fn train_with_observer(
    env: &SyntheticEnv,
    cfg: &TrainConfig,
    mut observer: impl FnMut(usize, &Policy, &Policy),
) -> std::result::Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let trainer = Trainer { env, cfg, pref: PreferenceModel::BtFromRewards(env.rewards.clone()) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = env.reference.clone();
    let mut old = theta.clone();
    let mut records = Vec::with_capacity(cfg.steps);
    let mode = cfg.mode();

    for step in 0..cfg.steps {
        if step % cfg.snapshot_every == 0 {
            old = theta.clone();
        }
        let groups = rollout(&old, &env.prompts, cfg.batch_prompts, cfg.rollouts_per_prompt, cfg.temperature, &mut rng)?;
        let data = trainer.step_data(groups, &mut rng);

        let mut first_loss = f64::NAN;
        let mut diverged = false;
        for inner in 0..cfg.inner_steps {
            let lv = trainer.loss(&theta, &old, &data)?;
            if inner == 0 {
                first_loss = lv.value;
            }
            if !lv.value.is_finite() {
                diverged = true;
                break;
            }
            let logits: Vec<Vec<f64>> = theta
                .logits()
                .iter()
                .zip(&lv.grad)
                .map(|(row, g)| row.iter().zip(g).map(|(l, d)| l - cfg.lr * d).collect())
                .collect();
            match theta.with_logits(logits) {
                Ok(next) => theta = next,
                Err(_) => {
                    diverged = true;
                    break;
                }
            }
        }

        let accuracy = match mode {
            LossMode::Exact => env.level1_mass(&theta),
            LossMode::Sampled => {
                let total: usize = data.groups.iter().map(|g| g.responses.len()).sum();
                let hits = data
                    .groups
                    .iter()
                    .flat_map(|g| g.responses.iter().map(move |&y| env.level(g.prompt, y)))
                    .filter(|l| *l == PreferenceLevel::BEST)
                    .count();
                hits as f64 / total as f64
            }
        };
        let flat: Vec<PreferencePair> = data.pairs_by_group.iter().flatten().copied().collect();
        let (winner_logratio, loser_logratio) =
            logit_ratio_metrics(&theta, &env.reference, &flat).unwrap_or((f64::NAN, f64::NAN));
        let bound_slack = match cfg.bound_beta() {
            Some(beta) if !diverged => {
                theorem_bound(&theta, &old, &env.reference, &env.prompts, &trainer.pref, beta)?.slack
            }
            _ => f64::NAN,
        };
        let record = TrainRecord {
            step,
            loss: first_loss,
            accuracy,
            entropy: entropy_mean(&theta, &env.prompts)?,
            winner_logratio,
            loser_logratio,
            bound_slack,
        };
        records.push(record);
        if diverged {
            return Err(TrainError::Diverged { step, records });
        }
        observer(step, &old, &theta);
    }

    Ok(TrainOutcome { final_accuracy: env.level1_mass(&theta), records, policy: theta })
}
