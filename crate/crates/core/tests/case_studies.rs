use trpa_core::rules::{check_format, classify, ResponseRecord, Task};

const LOGIC_GOLD: &str = "(1) Henry is a knight, (2) Jack is a knave, (3) Amelia is a knight, (4) Evelyn is a knave.";

fn record(text: &str, task: Task, gold: &str) -> ResponseRecord {
    ResponseRecord { prompt_id: "case".into(), text: text.into(), gold: Some(gold.into()), task }
}

fn level(text: &str, task: Task, gold: &str) -> u8 {
    classify(&record(text, task, gold)).level.get()
}

#[test]
fn base_logic_response_has_wrong_identities() {
    let text = include_str!("fixtures/logic_base.txt");
    assert!(check_format(text, Task::Logic).well_formed);
    let c = classify(&record(text, Task::Logic, LOGIC_GOLD));
    assert_eq!(c.level.get(), 2, "{}", c.diagnostics);
}

#[test]
fn trained_logic_response_is_correct() {
    assert_eq!(level(include_str!("fixtures/logic_trpa.txt"), Task::Logic, LOGIC_GOLD), 1);
}

#[test]
fn math_responses_match_gold() {
    for text in [include_str!("fixtures/math_short.txt"), include_str!("fixtures/math_long.txt")] {
        let f = check_format(text, Task::Math);
        assert_eq!(f.payload.as_deref(), Some("204"));
        assert_eq!(level(text, Task::Math, "204"), 1);
        assert_eq!(level(text, Task::Math, "205"), 2);
    }
}

#[test]
fn classification_is_bit_stable() {
    let text = include_str!("fixtures/logic_base.txt");
    let first = classify(&record(text, Task::Logic, LOGIC_GOLD));
    for _ in 0..100 {
        assert_eq!(classify(&record(text, Task::Logic, LOGIC_GOLD)), first);
    }
}

#[test]
fn stripping_the_think_tag_breaks_format() {
    let text = include_str!("fixtures/logic_trpa.txt").replacen("<think>", "", 1);
    assert_eq!(level(&text, Task::Logic, LOGIC_GOLD), 4);
}
