//! Exact primitives over finite categorical and binary distributions.
//!
//! All logarithms are natural, so every quantity here is in nats. The
//! `0 · log 0` term is taken to be `0` by continuity, and a divergence that
//! is genuinely infinite (mass on an outcome the reference assigns zero
//! probability) is reported as `f64::INFINITY` rather than an error so that
//! sweeps can record it.

use crate::error::{domain, shape, Error, Result};

/// Sum-to-one tolerance for [`Categorical`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A probability vector over a finite outcome set.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Softmax of a logit row, computed with a max shift.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|l| !l.is_finite()) {
            return Err(domain("logits must be finite and non-empty"));
        }
        Ok(Self { probs: softmax(logits) })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDistribution("zero outcomes".into()));
        }
        Ok(Self { probs: vec![1.0 / n as f64; n] })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy_raw(&self.probs)
    }
}

/// A distribution over the binary preference variable `z ∈ {0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryDist {
    p1: f64,
}

impl BinaryDist {
    pub fn new(p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) {
            return Err(domain(format!("p(z=1) = {p1} is outside [0, 1]")));
        }
        Ok(Self { p1 })
    }

    /// Caller guarantees `p1 ∈ [0, 1]`.
    pub(crate) fn new_unchecked(p1: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&p1));
        Self { p1 }
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }

    pub fn is_degenerate(&self) -> bool {
        self.p1 == 0.0 || self.p1 == 1.0
    }
}

/// Logistic function `1 / (1 + e^{-h})`.
pub fn sigmoid(h: f64) -> Result<f64> {
    if !h.is_finite() {
        return Err(domain(format!("sigmoid of non-finite input {h}")));
    }
    Ok(logistic(h))
}

/// Unchecked logistic; evaluates the branch that never overflows.
pub(crate) fn logistic(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

/// `log σ(h)`, accurate for large `|h|`.
pub fn log_sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        -(-h).exp().ln_1p()
    } else {
        h - h.exp().ln_1p()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

fn xlogx(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

pub(crate) fn entropy_raw(p: &[f64]) -> f64 {
    -p.iter().map(|&pi| xlogx(pi)).sum::<f64>()
}

pub(crate) fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can leave a tiny negative residue when p ≈ q.
    total.max(0.0)
}

pub(crate) fn tv_raw(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn check_dims(p: &Categorical, q: &Categorical) -> Result<()> {
    if p.len() != q.len() {
        return Err(shape(format!("{} outcomes vs {} outcomes", p.len(), q.len())));
    }
    Ok(())
}

/// Shannon entropy in nats.
pub fn entropy(p: &Categorical) -> f64 {
    p.entropy()
}

/// `D_KL(p ‖ q)`; `+∞` when `p` puts mass where `q` has none.
pub fn kl(p: &Categorical, q: &Categorical) -> Result<f64> {
    check_dims(p, q)?;
    Ok(kl_raw(&p.probs, &q.probs))
}

/// Total variation distance, half the L1 distance.
pub fn tv(p: &Categorical, q: &Categorical) -> Result<f64> {
    check_dims(p, q)?;
    Ok(tv_raw(&p.probs, &q.probs))
}

/// `H(p ‖ q) = -Σ p log q`; `+∞` when `p` puts mass where `q` has none.
pub fn cross_entropy(p: &Categorical, q: &Categorical) -> Result<f64> {
    check_dims(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total -= pi * qi.ln();
    }
    Ok(total)
}

/// `f(p) = -p log p - (1-p) log(1-p)`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("binary entropy of {p}")));
    }
    Ok(binary_entropy_raw(p))
}

pub(crate) fn binary_entropy_raw(p: f64) -> f64 {
    -(xlogx(p) + xlogx(1.0 - p))
}

pub fn cross_entropy_binary(pstar: BinaryDist, ptheta: BinaryDist) -> f64 {
    let term = |w: f64, q: f64| {
        if w == 0.0 {
            0.0
        } else if q == 0.0 {
            f64::INFINITY
        } else {
            -w * q.ln()
        }
    };
    term(pstar.p1(), ptheta.p1()) + term(pstar.p0(), ptheta.p0())
}

pub fn kl_binary(pstar: BinaryDist, ptheta: BinaryDist) -> f64 {
    kl_raw(&[pstar.p1(), pstar.p0()], &[ptheta.p1(), ptheta.p0()])
}

/// Binary cross-entropy against the logistic model `σ(h)`, evaluated in log space.
pub(crate) fn cross_entropy_logit(p1: f64, h: f64) -> f64 {
    let mut total = 0.0;
    if p1 > 0.0 {
        total -= p1 * log_sigmoid(h);
    }
    if p1 < 1.0 {
        total -= (1.0 - p1) * log_sigmoid(-h);
    }
    total
}

/// `KL(σ(d) ‖ σ(h))` with both sides given as logits.
pub(crate) fn kl_between_logits(d: f64, h: f64) -> f64 {
    let p1 = logistic(d);
    let v = p1 * (log_sigmoid(d) - log_sigmoid(h)) + (1.0 - p1) * (log_sigmoid(-d) - log_sigmoid(-h));
    v.max(0.0)
}
