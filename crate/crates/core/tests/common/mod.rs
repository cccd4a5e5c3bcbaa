//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use eyeauth::eval::{Moments, PearsonFit, PearsonKind};
use eyeauth::msloss::{LossConfig, MinedPairs};

/// (threshold, FAR, FRR) by direct counting at −∞, every distinct score, +∞.
pub fn sweep(genuine: &[f64], impostor: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.insert(0, f64::NEG_INFINITY);
    ts.push(f64::INFINITY);
    ts.into_iter()
        .map(|t| {
            let accepted_imp = impostor.iter().filter(|s| **s >= t).count();
            let rejected_gen = genuine.iter().filter(|s| **s < t).count();
            (
                t,
                accepted_imp as f64 / impostor.len() as f64,
                rejected_gen as f64 / genuine.len() as f64,
            )
        })
        .collect()
}

/// Crossing of FAR and FRR along the sweep, linearly interpolated.
pub fn sweep_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let pts = sweep(genuine, impostor);
    for w in pts.windows(2) {
        let (a, b) = (w[0].1 - w[0].2, w[1].1 - w[1].2);
        if a == 0.0 {
            return w[0].1;
        }
        if b == 0.0 {
            return w[1].1;
        }
        if a > 0.0 && b < 0.0 {
            let t = a / (a - b);
            return w[0].1 + t * (w[1].1 - w[0].1);
        }
    }
    unreachable!("sweep ends at FAR 0, FRR 1")
}

pub fn sweep_frr_at_far(genuine: &[f64], impostor: &[f64], target: f64) -> f64 {
    sweep(genuine, impostor)
        .into_iter()
        .find(|p| p.1 <= target)
        .map(|p| p.2)
        .unwrap()
}

/// Mean, variance, skewness and kurtosis of a fitted Pearson distribution
/// from the textbook formulas of each named family.
pub fn textbook_moments(fit: &PearsonFit) -> Moments {
    // (mean, variance, skewness, excess kurtosis) of the base variable
    let (m, v, g1, g2) = match fit.kind {
        PearsonKind::Normal => (0.0, 1.0, 0.0, 0.0),
        PearsonKind::StudentT { dof: n } => (0.0, n / (n - 2.0), 0.0, 6.0 / (n - 4.0)),
        PearsonKind::Beta { p: a, q: b } => {
            let s = a + b;
            (
                a / s,
                a * b / (s * s * (s + 1.0)),
                2.0 * (b - a) * (s + 1.0).sqrt() / ((s + 2.0) * (a * b).sqrt()),
                6.0 * ((a - b).powi(2) * (s + 1.0) - a * b * (s + 2.0)) / (a * b * (s + 2.0) * (s + 3.0)),
            )
        }
        PearsonKind::Gamma { shape: k } => (k, k, 2.0 / k.sqrt(), 6.0 / k),
        PearsonKind::InverseGamma { shape: a } => (
            1.0 / (a - 1.0),
            1.0 / ((a - 1.0).powi(2) * (a - 2.0)),
            4.0 * (a - 2.0).sqrt() / (a - 3.0),
            (30.0 * a - 66.0) / ((a - 3.0) * (a - 4.0)),
        ),
        PearsonKind::BetaPrime { p: a, q: b } => (
            a / (b - 1.0),
            a * (a + b - 1.0) / ((b - 2.0) * (b - 1.0).powi(2)),
            2.0 * (2.0 * a + b - 1.0) / (b - 3.0) * ((b - 2.0) / (a * (a + b - 1.0))).sqrt(),
            6.0 * (a * (a + b - 1.0) * (5.0 * b - 11.0) + (b - 1.0).powi(2) * (b - 2.0))
                / (a * (a + b - 1.0) * (b - 3.0) * (b - 4.0)),
        ),
        PearsonKind::TypeIV { m, nu } => {
            let r = 2.0 * (m - 1.0);
            let s = r * r + nu * nu;
            (
                -nu / r,
                s / (r * r * (r - 1.0)),
                -4.0 * nu / (r - 2.0) * ((r - 1.0) / s).sqrt(),
                3.0 * (r - 1.0) * ((r + 6.0) * s - 8.0 * r * r) / ((r - 2.0) * (r - 3.0) * s) - 3.0,
            )
        }
    };
    Moments {
        mean: fit.location + fit.sign * fit.scale * m,
        variance: fit.scale * fit.scale * v,
        skewness: fit.sign * g1,
        kurtosis: g2 + 3.0,
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

/// Direct evaluation of the loss formula over explicit mined sets.
pub fn brute_loss(s: &dyn Fn(usize, usize) -> f64, mined: &MinedPairs, c: &LossConfig) -> f64 {
    let m = mined.positives.len();
    let mut total = 0.0;
    for i in 0..m {
        let mut sp = 1.0;
        for &k in &mined.positives[i] {
            sp += (-c.alpha * (s(i, k) - c.lambda)).exp();
        }
        let mut sn = 1.0;
        for &k in &mined.negatives[i] {
            sn += (c.beta * (s(i, k) - c.lambda)).exp();
        }
        total += sp.ln() / c.alpha + sn.ln() / c.beta;
    }
    total / m as f64
}

