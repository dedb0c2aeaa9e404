use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trpa_core::distmath::{binary_entropy, kl, tv, Categorical};
use trpa_core::losses::pa_loss;
use trpa_core::rules::{build_pairs, classify, PreferenceLevel, ResponseRecord, Task};
use trpa_core::verify::Instance;

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn pair_of_simplices() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..8).prop_flat_map(|n| (simplex(n), simplex(n)))
}

proptest! {
    #[test]
    fn tv_squared_is_below_kl((p, q) in pair_of_simplices()) {
        let (p, q) = (Categorical::new(p).unwrap(), Categorical::new(q).unwrap());
        let t = tv(&p, &q).unwrap();
        prop_assert!(t * t <= kl(&p, &q).unwrap() + 1e-15);
    }

    #[test]
    fn binary_entropy_is_bounded(p in 0.0f64..=1.0) {
        let h = binary_entropy(p).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= std::f64::consts::LN_2 + 1e-15);
    }

    #[test]
    fn pair_count_matches_brute_force(raw in prop::collection::vec(1u8..=4, 0..12)) {
        let levels: Vec<PreferenceLevel> = raw.iter().map(|&l| PreferenceLevel::new(l).unwrap()).collect();
        let records: Vec<ResponseRecord> = (0..raw.len())
            .map(|i| ResponseRecord { prompt_id: "p".into(), text: format!("r{i}"), gold: None, task: Task::Math })
            .collect();
        let pairs = build_pairs(&records, &levels).unwrap();
        let mut brute = 0;
        for i in 0..raw.len() {
            for j in i + 1..raw.len() {
                if raw[i] != raw[j] {
                    brute += 1;
                }
            }
        }
        prop_assert_eq!(pairs.len(), brute);
        for p in &pairs {
            prop_assert!(p.level1.is_better_than(p.level2));
        }
    }

    #[test]
    fn classify_is_deterministic(text in ".{0,80}", gold in "[0-9]{1,3}") {
        let rec = ResponseRecord { prompt_id: "p".into(), text, gold: Some(gold), task: Task::Math };
        prop_assert_eq!(classify(&rec), classify(&rec));
    }
}

#[test]
fn pa_gradient_step_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut violations = 0;
    for i in 0..100 {
        let inst = Instance::random(&mut rng, 3, 5, format!("descent #{i}"));
        let theta = inst.reference.with_logits(
            inst.reference
                .logits()
                .iter()
                .map(|row| row.iter().map(|v| v + 0.5 * (v * 7.0 + i as f64).sin()).collect())
                .collect(),
        )
        .unwrap();
        let pref = inst.pref();
        let f = |t: &trpa_core::policy::Policy| pa_loss(t, &inst.reference, &inst.prompts, &pref, inst.beta).unwrap();
        let cur = f(&theta);
        let mut step = 1e-3;
        let mut ok = false;
        for _ in 0..=10 {
            let next = theta
                .with_logits(
                    theta
                        .logits()
                        .iter()
                        .zip(&cur.grad)
                        .map(|(row, g)| row.iter().zip(g).map(|(l, d)| l - step * d).collect())
                        .collect(),
                )
                .unwrap();
            if f(&next).value < cur.value {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if !ok {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}
