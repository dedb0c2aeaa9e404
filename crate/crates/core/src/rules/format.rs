//! Structural checks on chain-of-thought response text.
//!
//! Accepted shape, after chat-template control tokens (`<|...|>`) are dropped
//! and the text is trimmed:
//!
//! ```text
//! <think> reasoning </think> <answer> answer </answer>
//! ```
//!
//! Exactly one `<think>` must open the text and exactly one answer block must
//! follow; only whitespace may trail `</answer>`. The closing `</think>` may
//! be omitted when the reasoning runs straight into `<answer>`. Math
//! responses must carry a balanced `\boxed{...}` group in the answer span and
//! may give that span without answer tags, as the text following `</think>`.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";
const BOXED: &str = "\\boxed{";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Logic,
    Math,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logic" => Ok(Task::Logic),
            "math" => Ok(Task::Math),
            other => Err(format!("unknown task {other:?} (expected logic or math)")),
        }
    }
}

/// Outcome of [`check_format`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatCheck {
    pub well_formed: bool,
    /// Answer payload: the trimmed answer block for logic, the contents of
    /// the last `\boxed{}` group for math.
    pub payload: Option<String>,
    pub problem: Option<String>,
}

impl FormatCheck {
    fn fail(problem: impl Into<String>) -> Self {
        Self { well_formed: false, payload: None, problem: Some(problem.into()) }
    }

    fn pass(payload: String) -> Self {
        Self { well_formed: true, payload: Some(payload), problem: None }
    }
}

fn control_tokens() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<\|[^|<>]*\|>").expect("valid regex"))
}

pub fn check_format(text: &str, task: Task) -> FormatCheck {
    let cleaned = control_tokens().replace_all(text, "");
    let t = cleaned.trim();

    if t.matches(THINK_OPEN).count() != 1 || !t.starts_with(THINK_OPEN) {
        return FormatCheck::fail("response must open with exactly one <think>");
    }
    let n_close_think = t.matches(THINK_CLOSE).count();
    if n_close_think > 1 {
        return FormatCheck::fail("more than one </think>");
    }
    let close_think = t.find(THINK_CLOSE);
    let n_open = t.matches(ANSWER_OPEN).count();
    let n_close = t.matches(ANSWER_CLOSE).count();

    let answer_span = match (n_open, n_close) {
        (1, 1) => {
            let a_open = t.find(ANSWER_OPEN).expect("counted");
            let a_close = t.find(ANSWER_CLOSE).expect("counted");
            if a_close < a_open {
                return FormatCheck::fail("</answer> precedes <answer>");
            }
            if let Some(c) = close_think {
                if c > a_open {
                    return FormatCheck::fail("</think> inside or after the answer block");
                }
                if !t[c + THINK_CLOSE.len()..a_open].trim().is_empty() {
                    return FormatCheck::fail("text between </think> and <answer>");
                }
            }
            if !t[a_close + ANSWER_CLOSE.len()..].trim().is_empty() {
                return FormatCheck::fail("text after </answer>");
            }
            &t[a_open + ANSWER_OPEN.len()..a_close]
        }
        (0, 0) if task == Task::Math => match close_think {
            Some(c) => &t[c + THINK_CLOSE.len()..],
            None => return FormatCheck::fail("math response without </think> or answer block"),
        },
        (0, 0) => return FormatCheck::fail("missing <answer> block"),
        _ => return FormatCheck::fail("answer tags are unbalanced or repeated"),
    };

    match task {
        Task::Logic => FormatCheck::pass(answer_span.trim().to_string()),
        Task::Math => match last_boxed(answer_span) {
            Some(inner) => FormatCheck::pass(inner.trim().to_string()),
            None => FormatCheck::fail("no balanced \\boxed{} group in the answer"),
        },
    }
}

/// Contents of the last brace-balanced `\boxed{...}` group.
pub fn last_boxed(s: &str) -> Option<&str> {
    let mut found = None;
    let mut from = 0;
    while let Some(rel) = s[from..].find(BOXED) {
        let start = from + rel + BOXED.len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, c) in s[start..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                found = Some(&s[start..e]);
                from = e + 1;
            }
            None => break,
        }
    }
    found
}
