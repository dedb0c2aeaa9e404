//! Binary cross-entropy and KL over a `(p, q)` lattice.

use std::io::Write;

use crate::distmath::{binary_entropy_raw, cross_entropy_binary, kl_binary, BinaryDist};
use crate::error::{domain, Result};

use super::Report;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapePoint {
    pub p: f64,
    pub q: f64,
    pub h: f64,
    pub kl: f64,
}

/// Evaluates both losses at the cell midpoints `(i + 0.5) / n` and checks
/// that KL vanishes exactly on the diagonal and that cross-entropy is
/// minimized over `q` at `q = p` with value `binary_entropy(p)`.
pub fn landscape(grid_n: usize) -> Result<(Vec<LandscapePoint>, Report)> {
    if grid_n < 2 {
        return Err(domain("landscape grid needs at least 2 points per axis"));
    }
    let at = |i: usize| (i as f64 + 0.5) / grid_n as f64;
    let mut points = Vec::with_capacity(grid_n * grid_n);
    let mut kl_off_diag_min = f64::INFINITY;
    let mut kl_diag_max: f64 = 0.0;
    let mut argmin_misses = 0usize;
    let mut h_diag_err: f64 = 0.0;
    for i in 0..grid_n {
        let p = at(i);
        let ps = BinaryDist::new(p)?;
        let mut best = (f64::INFINITY, 0usize);
        for j in 0..grid_n {
            let q = at(j);
            let qs = BinaryDist::new(q)?;
            let h = cross_entropy_binary(ps, qs);
            let kl = kl_binary(ps, qs);
            if i == j {
                kl_diag_max = kl_diag_max.max(kl);
                h_diag_err = h_diag_err.max((h - binary_entropy_raw(p)).abs());
            } else {
                kl_off_diag_min = kl_off_diag_min.min(kl);
            }
            if h < best.0 {
                best = (h, j);
            }
            points.push(LandscapePoint { p, q, h, kl });
        }
        if best.1 != i {
            argmin_misses += 1;
        }
    }
    let mut r = Report::new("landscape", &format!("grid {grid_n}x{grid_n}"))
        .metric("grid_n", grid_n as f64)
        .metric("kl_diag_max", kl_diag_max)
        .metric("kl_off_diag_min", kl_off_diag_min)
        .metric("h_diag_vs_entropy_max_err", h_diag_err)
        .metric("h_argmin_misses", argmin_misses as f64);
    r.pass = kl_diag_max <= 1e-15 && kl_off_diag_min > 0.0 && argmin_misses == 0 && h_diag_err <= 1e-12;
    Ok((points, r))
}

pub fn write_landscape_csv<W: Write>(mut out: W, points: &[LandscapePoint]) -> Result<()> {
    writeln!(out, "p,q,H,KL")?;
    for pt in points {
        writeln!(out, "{},{},{},{}", pt.p, pt.q, pt.h, pt.kl)?;
    }
    Ok(())
}
