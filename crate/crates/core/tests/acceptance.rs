//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not hidden. The process exits nonzero on a failed
//! criterion only when `ACCEPTANCE_STRICT` is set, so that `cargo test` stays
//! usable while a known failure is documented.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use trpa_core::distmath::{binary_entropy, kl, tv, Categorical};
use trpa_core::rules::{classify, ktpo_beta, KtpoConfig, PreferenceLevel, ResponseRecord, Task};
use trpa_core::trainer::{logit_ratio_metrics, rollout, rollout_pairs, train, EnvSpec, SyntheticEnv, TrainConfig};
use trpa_core::verify::{
    fd_check, lemma_online_dpo_not_pba, lemma_pa_is_pba, target_convergence, theorem1_sweep, value_identity_report,
    ConvergenceLoss, ConvergenceOptions, Instance, LossId, SweepOptions,
};

const SEED: u64 = 0;
const LOGIC_GOLD: &str = "(1) Henry is a knight, (2) Jack is a knave, (3) Amelia is a knight, (4) Evelyn is a knave.";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn lemma_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    std::iter::once(Instance::canonical())
        .chain((0..20).map(|i| Instance::random(&mut rng, 3, 5, format!("random #{i}"))))
        .collect()
}

fn c1() -> Outcome {
    let insts = lemma_instances();
    let reports: Vec<_> = insts.iter().map(|i| lemma_pa_is_pba(i).unwrap()).collect();
    let worst_v = reports.iter().map(|r| r.metrics["pa_value"]).fold(0.0, f64::max);
    let worst_g = reports.iter().map(|r| r.metrics["grad_max_norm"]).fold(0.0, f64::max);
    let failed: Vec<_> = reports.iter().filter(|r| !r.pass).map(|r| r.instance.clone()).collect();
    outcome(
        failed.is_empty(),
        format!("{} instances, max pa_loss {worst_v:.1e}, max grad {worst_g:.1e}, failed {failed:?}", insts.len()),
    )
}

fn c2() -> Outcome {
    let insts = lemma_instances();
    let reports: Vec<_> = insts.iter().map(|i| lemma_online_dpo_not_pba(i).unwrap()).collect();
    let min_g = reports.iter().map(|r| r.metrics["grad_max_norm"]).fold(f64::INFINITY, f64::min);
    let max_d = reports.iter().map(|r| r.metrics["direct_max_norm"]).fold(0.0, f64::max);
    let failed: Vec<_> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} (grad {:.2e})", r.instance, r.metrics["grad_max_norm"]))
        .collect();
    outcome(
        failed.is_empty(),
        format!("{} instances, min grad {min_g:.2e}, max direct {max_d:.1e}, below threshold {failed:?}", insts.len()),
    )
}

fn c3() -> Outcome {
    let r = theorem1_sweep(&Instance::canonical(), SweepOptions { trials: 1000, seed: SEED, logit_scale: 3.0 }).unwrap();
    outcome(
        r.pass,
        format!("{} violations, min slack {:.3e}", r.metrics["violations"], r.metrics["min_slack"]),
    )
}

fn c4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut tv_bad = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(2..=8);
        let mut draw = || {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..1.0)).collect();
            let s: f64 = w.iter().sum();
            Categorical::new(w.iter().map(|v| v / s).collect()).unwrap()
        };
        let (p, q) = (draw(), draw());
        let t = tv(&p, &q).unwrap();
        if t * t > kl(&p, &q).unwrap() {
            tv_bad += 1;
        }
    }
    let ln2 = std::f64::consts::LN_2;
    let (mut h_bad, mut near_max_far_from_half) = (0, 0);
    let samples = (0..9_999).map(|_| rng.gen_range(0.0..=1.0)).chain(std::iter::once(0.5));
    let mut hmax: f64 = 0.0;
    for p in samples {
        let h = binary_entropy(p).unwrap();
        if !(0.0..=ln2).contains(&h) {
            h_bad += 1;
        }
        if h > ln2 - 1e-6 && (p - 0.5).abs() > 1e-3 {
            near_max_far_from_half += 1;
        }
        hmax = hmax.max(h);
    }
    outcome(
        tv_bad == 0 && h_bad == 0 && near_max_far_from_half == 0 && hmax == ln2,
        format!("tv^2>kl {tv_bad}, entropy out of [0, ln2] {h_bad}, near-max away from 1/2 {near_max_far_from_half}"),
    )
}

fn c5() -> Outcome {
    let reports: Vec<_> = LossId::ALL.iter().map(|&l| fd_check(l, 100, SEED).unwrap()).collect();
    let worst = reports.iter().map(|r| r.metrics["max_relative_error"]).fold(0.0, f64::max);
    let failed: Vec<_> = reports.iter().filter(|r| !r.pass).map(|r| r.claim.clone()).collect();
    outcome(failed.is_empty(), format!("7 losses x 100 instances, worst rel err {worst:.2e}, failed {failed:?}"))
}

fn c6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    for i in 0..100 {
        let inst = Instance::random(&mut rng, 3, 5, format!("identity #{i}"));
        let logits =
            inst.reference.logits().iter().map(|row| row.iter().map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let theta = inst.reference.with_logits(logits).unwrap();
        let r = value_identity_report(&theta, &inst).unwrap();
        worst = worst.max(r.metrics["abs_gap"]);
        if !r.pass {
            failed += 1;
        }
    }
    outcome(failed == 0, format!("100 instances, max gap {worst:.2e}"))
}

fn c7() -> Outcome {
    let inst = Instance::canonical();
    let opts = ConvergenceOptions { inits: 20, seed: SEED, spread: 0.5 };
    let pa = target_convergence(&inst, ConvergenceLoss::Pa, opts).unwrap();
    let od = target_convergence(&inst, ConvergenceLoss::OnlineDpo, opts).unwrap();
    outcome(
        pa.pass && od.pass,
        format!(
            "pa tv_max {:.1e}, online-dpo tv_min {:.3}, starts = reference + U(-0.5, 0.5)",
            pa.metrics["tv_max"], od.metrics["tv_min"]
        ),
    )
}

#[derive(Deserialize)]
struct Bundled {
    env: EnvSpec,
    train: TrainConfig,
}

fn c8() -> Outcome {
    let b: Bundled = serde_json::from_str(include_str!("../../cli/configs/trpa_bandit.json")).unwrap();
    let env = SyntheticEnv::from_spec(&b.env).unwrap();
    let out = train(&env, &b.train).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let groups = rollout(&out.policy, &env.prompts, 4000, 8, 1.0, &mut rng).unwrap();
    let pairs = rollout_pairs(&env, &groups);
    let (w, l) = logit_ratio_metrics(&out.policy, &env.reference, &pairs).unwrap();
    outcome(
        b.train.steps <= 2000 && out.final_accuracy >= 0.95 && w > 0.0 && l < 0.0,
        format!("{} steps, accuracy {:.4}, winner log-ratio {w:.3}, loser log-ratio {l:.3}", b.train.steps, out.final_accuracy),
    )
}

fn c9() -> Outcome {
    let cases = [
        (include_str!("fixtures/logic_base.txt"), Task::Logic, LOGIC_GOLD, 2),
        (include_str!("fixtures/logic_trpa.txt"), Task::Logic, LOGIC_GOLD, 1),
        (include_str!("fixtures/math_short.txt"), Task::Math, "204", 1),
        (include_str!("fixtures/math_long.txt"), Task::Math, "204", 1),
    ];
    let run = || -> Vec<_> {
        cases
            .iter()
            .map(|(text, task, gold, _)| {
                classify(&ResponseRecord {
                    prompt_id: "case".into(),
                    text: (*text).into(),
                    gold: Some((*gold).into()),
                    task: *task,
                })
            })
            .collect()
    };
    let first = run();
    let got: Vec<u8> = first.iter().map(|c| c.level.get()).collect();
    let want: Vec<u8> = cases.iter().map(|c| c.3).collect();
    let stable = (0..10).all(|_| run() == first);
    outcome(got == want && stable, format!("levels {got:?} (want {want:?}), stable {stable}"))
}

fn c10() -> Outcome {
    let mut checked = 0;
    let mut bad = 0;
    for n in [1.0, 2.0, 4.0] {
        for beta in [0.05, 0.1, 0.3, 1.0, 2.5] {
            let cfg = KtpoConfig::new(beta, n).unwrap();
            for l in 1..=4u8 {
                let got = ktpo_beta(&cfg, PreferenceLevel::new(l).unwrap());
                let want = if l == 1 { n * beta } else { beta };
                checked += 1;
                if got.to_bits() != want.to_bits() {
                    bad += 1;
                }
            }
        }
    }
    outcome(bad == 0, format!("{checked} cases, {bad} mismatches"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("1 lemma 2: PA minimized at the target", c1, Duration::from_secs(5)),
        ("2 lemma 1: Online DPO gradient nonzero at the target", c2, Duration::from_secs(5)),
        ("3 improvement bound sweep", c3, Duration::from_secs(60)),
        ("4 tv/kl and binary entropy properties", c4, Duration::from_secs(5)),
        ("5 finite-difference gradients", c5, Duration::from_secs(120)),
        ("6 online DPO = PA + expected entropy", c6, Duration::from_secs(60)),
        ("7 target convergence", c7, Duration::from_secs(60)),
        ("8 bandit training", c8, Duration::from_secs(30)),
        ("9 case-study classification", c9, Duration::from_secs(60)),
        ("10 KTPO temperature branch", c10, Duration::from_secs(60)),
    ];
    let mut failures = 0;
    for (name, f, budget) in criteria {
        let t = Instant::now();
        let o = f();
        let dt = t.elapsed();
        let pass = o.pass && dt <= budget;
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {name} | {} | {:.2}s (budget {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            dt.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {}/10 criteria passed", 10 - failures);
    if failures > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
