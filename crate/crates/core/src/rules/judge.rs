//! Answer judging against a gold string.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use regex::Regex;

/// Verdict on an answer payload that passed the format check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Correct,
    Wrong(String),
    Incomplete(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    Knight,
    Knave,
}

fn identity_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b([a-z][a-z'\-]*)\s+is\s+an?\s+(knight|knave)\b").expect("valid regex")
    })
}

/// `NAME is a knight/knave` assertions, keyed by lowercased name.
fn assertions(text: &str) -> BTreeMap<String, BTreeSet<Role>> {
    let mut out: BTreeMap<String, BTreeSet<Role>> = BTreeMap::new();
    for cap in identity_re().captures_iter(text) {
        let role = if cap[2].eq_ignore_ascii_case("knight") { Role::Knight } else { Role::Knave };
        out.entry(cap[1].to_lowercase()).or_default().insert(role);
    }
    out
}

pub fn judge_logic(payload: &str, gold: &str) -> Verdict {
    let gold = assertions(gold);
    if gold.is_empty() || gold.values().any(|r| r.len() != 1) {
        return Verdict::Incomplete("gold has no usable identity assignment".into());
    }
    let said = assertions(payload);
    if let Some((name, _)) = said.iter().find(|(_, roles)| roles.len() > 1) {
        return Verdict::Wrong(format!("contradictory roles for {name}"));
    }
    let mut missing = Vec::new();
    for (name, roles) in &gold {
        match said.get(name) {
            Some(r) if r == roles => {}
            Some(_) => return Verdict::Wrong(format!("wrong role for {name}")),
            None => missing.push(name.as_str()),
        }
    }
    if missing.is_empty() {
        Verdict::Correct
    } else {
        Verdict::Incomplete(format!("no identity for {}", missing.join(", ")))
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn frac_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(-)?\s*\\d?frac\s*\{\s*(-?\d+)\s*\}\s*\{\s*(-?\d+)\s*\}$").expect("valid regex")
    })
}

fn plain_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(-?)(\d*)(?:\.(\d+))?(?:\s*/\s*(-?\d+))?$").expect("valid regex"))
}

/// Exact value of an integer, decimal, `a/b` or `\frac{a}{b}` literal.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some(c) = frac_re().captures(s) {
        let num: BigInt = c[2].parse().ok()?;
        let den: BigInt = c[3].parse().ok()?;
        if den.is_zero() {
            return None;
        }
        let v = BigRational::new(num, den);
        return Some(if c.get(1).is_some() { -v } else { v });
    }
    let c = plain_re().captures(s)?;
    let int_part = &c[2];
    let frac_part = c.get(3).map_or("", |m| m.as_str());
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut v = BigRational::new(digits.parse().ok()?, num_traits::pow(BigInt::from(10), frac_part.len()));
    if let Some(d) = c.get(4) {
        if c.get(3).is_some() {
            return None;
        }
        let den: BigInt = d.as_str().parse().ok()?;
        if den.is_zero() {
            return None;
        }
        v /= BigRational::new(den, BigInt::one());
    }
    Some(if &c[1] == "-" { -v } else { v })
}

pub fn judge_math(payload: &str, gold: &str) -> Verdict {
    let (p, g) = (collapse_ws(payload), collapse_ws(gold));
    if p.is_empty() {
        return Verdict::Incomplete("empty boxed answer".into());
    }
    if p == g {
        return Verdict::Correct;
    }
    match (parse_rational(&p), parse_rational(&g)) {
        (Some(a), Some(b)) if a == b => Verdict::Correct,
        (Some(_), Some(_)) => Verdict::Wrong("value differs from gold".into()),
        (None, Some(_)) => Verdict::Incomplete("boxed answer is not a number".into()),
        _ => Verdict::Wrong("answer differs from gold".into()),
    }
}
