//! Method-of-moments fits within the Pearson family, and sampling from them.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal, StudentT};

use crate::error::{Error, Result};

/// Type-boundary tolerance on β1, the type III line and κ = 1.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Mean, variance, skewness and (non-excess) kurtosis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

impl Moments {
    /// Population moments (divisor n) of a sample.
    pub fn of(samples: &[f64]) -> Result<Self> {
        if samples.len() < 4 {
            return Err(Error::InfeasibleMoments(format!("{} samples (need 4)", samples.len())));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for x in samples {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        if !(m2 > 0.0) {
            return Err(Error::InfeasibleMoments("zero variance".into()));
        }
        Ok(Self {
            mean,
            variance: m2,
            skewness: m3 / m2.powf(1.5),
            kurtosis: m4 / (m2 * m2),
        })
    }

    pub fn beta1(&self) -> f64 {
        self.skewness * self.skewness
    }
}

/// Standardized shape of a Pearson distribution; the fitted variable is
/// `location + scale · sign · base` (sign only for the skewed types).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PearsonKind {
    /// Standard normal.
    Normal,
    /// Beta(p, q) on [0, 1]; type II when p = q.
    Beta { p: f64, q: f64 },
    /// Gamma(shape, 1).
    Gamma { shape: f64 },
    /// Density ∝ (1 + z²)^(−m) · exp(−ν · atan z).
    TypeIV { m: f64, nu: f64 },
    /// Inverse gamma with unit scale.
    InverseGamma { shape: f64 },
    /// Beta prime(p, q).
    BetaPrime { p: f64, q: f64 },
    /// Student t.
    StudentT { dof: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PearsonFit {
    pub moments: Moments,
    pub kind: PearsonKind,
    pub location: f64,
    pub scale: f64,
    /// ±1; −1 mirrors the base distribution.
    pub sign: f64,
}

impl PearsonFit {
    /// Roman-numeral type (0 for the normal).
    pub fn type_number(&self) -> u8 {
        match self.kind {
            PearsonKind::Normal => 0,
            PearsonKind::Beta { p, q } if p == q => 2,
            PearsonKind::Beta { .. } => 1,
            PearsonKind::Gamma { .. } => 3,
            PearsonKind::TypeIV { .. } => 4,
            PearsonKind::InverseGamma { .. } => 5,
            PearsonKind::BetaPrime { .. } => 6,
            PearsonKind::StudentT { .. } => 7,
        }
    }
}

/// Pearson's criterion κ = β1(β2+3)² / (4(4β2−3β1)(2β2−3β1−6)).
pub fn kappa(beta1: f64, beta2: f64) -> f64 {
    beta1 * (beta2 + 3.0).powi(2) / (4.0 * (4.0 * beta2 - 3.0 * beta1) * (2.0 * beta2 - 3.0 * beta1 - 6.0))
}

pub fn pearson_fit(samples: &[f64]) -> Result<PearsonFit> {
    fit_moments(Moments::of(samples)?)
}

/// Solves type parameters so the distribution's first four moments equal
/// `mo`.
pub fn fit_moments(mo: Moments) -> Result<PearsonFit> {
    let Moments {
        mean,
        variance,
        skewness,
        kurtosis: b2,
    } = mo;
    let b1 = mo.beta1();
    if !(variance > 0.0) || !variance.is_finite() || !b2.is_finite() || !skewness.is_finite() {
        return Err(Error::InfeasibleMoments("non-finite or non-positive variance".into()));
    }
    if !(b2 > b1 + 1.0) {
        return Err(Error::InfeasibleMoments(format!(
            "kurtosis {b2} must exceed skewness² + 1 = {}",
            b1 + 1.0
        )));
    }
    let sd = variance.sqrt();
    let sign = if skewness < 0.0 { -1.0 } else { 1.0 };
    let fit = |kind, location, scale, sign| PearsonFit {
        moments: mo,
        kind,
        location,
        scale,
        sign,
    };

    if b1 < BOUNDARY_TOL {
        if (b2 - 3.0).abs() < BOUNDARY_TOL {
            return Ok(fit(PearsonKind::Normal, mean, sd, 1.0));
        }
        if b2 > 3.0 {
            let dof = 4.0 + 6.0 / (b2 - 3.0);
            return Ok(fit(PearsonKind::StudentT { dof }, mean, sd * ((dof - 2.0) / dof).sqrt(), 1.0));
        }
    }

    let iii = 2.0 * b2 - 3.0 * b1 - 6.0;
    if iii.abs() < BOUNDARY_TOL {
        let shape = 4.0 / b1;
        let scale = sd * b1.sqrt() / 2.0;
        return Ok(fit(PearsonKind::Gamma { shape }, mean - sign * shape * scale, scale, sign));
    }
    if iii < 0.0 {
        // Type I (or II when symmetric): four-parameter beta.
        let r = 6.0 * (b2 - b1 - 1.0) / (6.0 + 3.0 * b1 - 2.0 * b2);
        let root = ((r + 2.0).powi(2) * b1 + 16.0 * (r + 1.0)).sqrt();
        let t = if b1 < BOUNDARY_TOL { 0.0 } else { (r + 2.0) * b1.sqrt() / root };
        let (mut p, mut q) = (r / 2.0 * (1.0 - t), r / 2.0 * (1.0 + t));
        if skewness < 0.0 {
            std::mem::swap(&mut p, &mut q);
        }
        let scale = sd / 2.0 * root;
        return Ok(fit(PearsonKind::Beta { p, q }, mean - scale * p / (p + q), scale, 1.0));
    }

    let k = kappa(b1, b2);
    if (k - 1.0).abs() < BOUNDARY_TOL {
        let g = skewness.abs();
        let u = (2.0 + (4.0 + g * g).sqrt()) / g;
        let shape = u * u + 2.0;
        let scale = sd * (shape - 1.0) * (shape - 2.0).sqrt();
        return Ok(fit(
            PearsonKind::InverseGamma { shape },
            mean - sign * scale / (shape - 1.0),
            scale,
            sign,
        ));
    }

    // Types IV and VI from the quadratic b2·y² + b1·y + b0 in y = x − mean,
    // fitted for |skewness| and mirrored afterwards.
    let d = 10.0 * b2 - 12.0 * b1 - 18.0;
    let c0 = variance * (4.0 * b2 - 3.0 * b1) / d;
    let c1 = sd * b1.sqrt() * (b2 + 3.0) / d;
    let c2 = iii / d;
    if k < 1.0 {
        let centre = -c1 / (2.0 * c2);
        let alpha = (c0 / c2 - centre * centre).sqrt();
        let m = 1.0 / (2.0 * c2);
        let nu = c1 * (2.0 * c2 - 1.0) / (2.0 * c2 * c2 * alpha);
        return Ok(fit(PearsonKind::TypeIV { m, nu }, mean + sign * centre, alpha, sign));
    }
    let disc = (c1 * c1 - 4.0 * c0 * c2).sqrt();
    let (y1, y2) = ((-c1 - disc) / (2.0 * c2), (-c1 + disc) / (2.0 * c2));
    let a_coef = (y2 + c1) / (y2 - y1);
    let b_coef = (y1 + c1) / (y1 - y2);
    let p = 1.0 - a_coef / c2;
    let q = b_coef / c2 - p;
    Ok(fit(
        PearsonKind::BetaPrime { p, q },
        mean + sign * y2,
        y2 - y1,
        sign,
    ))
}

/// Central moments (mean, μ2, μ3, μ4) of a variable from its first four raw
/// moments.
fn central_from_raw(r: [f64; 4]) -> (f64, f64, f64, f64) {
    let m = r[0];
    let mu2 = r[1] - m * m;
    let mu3 = r[2] - 3.0 * m * r[1] + 2.0 * m.powi(3);
    let mu4 = r[3] - 4.0 * m * r[2] + 6.0 * m * m * r[1] - 3.0 * m.powi(4);
    (m, mu2, mu3, mu4)
}

fn raw_products(f: impl Fn(usize) -> f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    let mut acc = 1.0;
    for (j, o) in out.iter_mut().enumerate() {
        acc *= f(j);
        *o = acc;
    }
    out
}

impl PearsonFit {
    /// Moments of the fitted distribution itself.
    pub fn moments(&self) -> Moments {
        let (m, mu2, mu3, mu4) = match self.kind {
            PearsonKind::Normal => (0.0, 1.0, 0.0, 3.0),
            PearsonKind::StudentT { dof } => {
                let v = dof / (dof - 2.0);
                (0.0, v, 0.0, (3.0 + 6.0 / (dof - 4.0)) * v * v)
            }
            PearsonKind::Beta { p, q } => {
                central_from_raw(raw_products(|j| (p + j as f64) / (p + q + j as f64)))
            }
            PearsonKind::Gamma { shape } => central_from_raw(raw_products(|j| shape + j as f64)),
            PearsonKind::InverseGamma { shape } => {
                central_from_raw(raw_products(|j| 1.0 / (shape - (j + 1) as f64)))
            }
            PearsonKind::BetaPrime { p, q } => {
                central_from_raw(raw_products(|j| (p + j as f64) / (q - (j + 1) as f64)))
            }
            PearsonKind::TypeIV { m, nu } => {
                let r = 2.0 * (m - 1.0);
                let s = r * r + nu * nu;
                let mean = -nu / r;
                let var = s / (r * r * (r - 1.0));
                let skew = -4.0 * nu / (r - 2.0) * ((r - 1.0) / s).sqrt();
                let kurt = 3.0 * (r - 1.0) * ((r + 6.0) * s - 8.0 * r * r) / ((r - 2.0) * (r - 3.0) * s);
                (mean, var, skew * var.powf(1.5), kurt * var * var)
            }
        };
        let s = self.scale;
        Moments {
            mean: self.location + self.sign * s * m,
            variance: s * s * mu2,
            skewness: self.sign * mu3 / mu2.powf(1.5),
            kurtosis: mu4 / (mu2 * mu2),
        }
    }

    /// `count` i.i.d. draws.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        let mut base: Box<dyn FnMut(&mut R) -> f64> = match self.kind {
            PearsonKind::Normal => Box::new(|rng: &mut R| rng.sample(StandardNormal)),
            PearsonKind::StudentT { dof } => {
                let d = StudentT::new(dof).expect("dof > 4");
                Box::new(move |rng: &mut R| d.sample(rng))
            }
            PearsonKind::Beta { p, q } => {
                let d = Beta::new(p, q).expect("positive shapes");
                Box::new(move |rng: &mut R| d.sample(rng))
            }
            PearsonKind::Gamma { shape } => {
                let d = Gamma::new(shape, 1.0).expect("positive shape");
                Box::new(move |rng: &mut R| d.sample(rng))
            }
            PearsonKind::InverseGamma { shape } => {
                let d = Gamma::new(shape, 1.0).expect("positive shape");
                Box::new(move |rng: &mut R| 1.0 / d.sample(rng))
            }
            PearsonKind::BetaPrime { p, q } => {
                let (g1, g2) = (Gamma::new(p, 1.0).expect("p > 0"), Gamma::new(q, 1.0).expect("q > 0"));
                Box::new(move |rng: &mut R| g1.sample(rng) / g2.sample(rng))
            }
            PearsonKind::TypeIV { m, nu } => {
                let env = AngleEnvelope::new(m, nu);
                Box::new(move |rng: &mut R| env.sample(rng).tan())
            }
        };
        (0..count)
            .map(|_| self.location + self.sign * self.scale * base(rng))
            .collect()
    }
}

/// Tangent-line envelope for the type IV density in θ = atan z, where it is
/// ∝ cos^(2m−2)θ · e^(−νθ) on (−π/2, π/2) and log-concave for m > 1.
struct AngleEnvelope {
    m: f64,
    nu: f64,
    /// Log-density offset that puts the highest tangent point at 0.
    shift: f64,
    /// Piece bounds, tangent (point, value, slope) per piece, cumulative mass.
    bounds: Vec<f64>,
    lines: Vec<(f64, f64, f64)>,
    cumulative: Vec<f64>,
}

impl AngleEnvelope {
    fn log_density(m: f64, nu: f64, t: f64) -> f64 {
        (2.0 * m - 2.0) * t.cos().ln() - nu * t
    }

    fn new(m: f64, nu: f64) -> Self {
        let c = 2.0 * m - 2.0;
        let mode = (-nu / c).atan();
        let sd = mode.cos() / c.sqrt();
        let lim = FRAC_PI_2 - 1e-9;
        let mut points: Vec<f64> = [-3.0, -1.0, 0.0, 1.0, 3.0]
            .iter()
            .map(|k| (mode + k * sd).clamp(-lim, lim))
            .collect();
        points.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        // tangent at x: value h, slope g
        let lines: Vec<(f64, f64, f64)> = points
            .iter()
            .map(|&x| (x, Self::log_density(m, nu, x), -c * x.tan() - nu))
            .collect();
        let mut bounds = vec![-FRAC_PI_2];
        for w in lines.windows(2) {
            let ((x0, h0, g0), (x1, h1, g1)) = (w[0], w[1]);
            let z = if (g0 - g1).abs() < 1e-300 {
                0.5 * (x0 + x1)
            } else {
                ((h1 - g1 * x1) - (h0 - g0 * x0)) / (g0 - g1)
            };
            bounds.push(z.clamp(x0, x1));
        }
        bounds.push(FRAC_PI_2);
        let shift = lines.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
        let lines: Vec<(f64, f64, f64)> = lines.into_iter().map(|(x, h, g)| (x, h - shift, g)).collect();
        let mut cumulative = Vec::with_capacity(lines.len());
        let mut total = 0.0;
        for (i, &(x, h, g)) in lines.iter().enumerate() {
            total += Self::piece_mass(bounds[i], bounds[i + 1], x, h, g);
            cumulative.push(total);
        }
        Self {
            m,
            nu,
            shift,
            bounds,
            lines,
            cumulative,
        }
    }

    fn piece_mass(a: f64, b: f64, x: f64, h: f64, g: f64) -> f64 {
        if g.abs() < 1e-12 {
            (b - a) * h.exp()
        } else {
            ((h + g * (b - x)).exp() - (h + g * (a - x)).exp()) / g
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cumulative.last().expect("non-empty envelope");
        loop {
            let u = rng.gen::<f64>() * total;
            let i = self.cumulative.partition_point(|c| *c < u).min(self.lines.len() - 1);
            let (a, b) = (self.bounds[i], self.bounds[i + 1]);
            let (x, h, g) = self.lines[i];
            let v: f64 = rng.gen();
            let t = if g.abs() < 1e-12 {
                a + v * (b - a)
            } else {
                // inverse CDF of exp(g·t) on [a, b]
                let ea = g * (a - x);
                let eb = g * (b - x);
                let hi = ea.max(eb);
                x + (hi + ((ea - hi).exp() + v * ((eb - hi).exp() - (ea - hi).exp())).ln()) / g
            };
            let t = t.clamp(a, b);
            if !(t.abs() < FRAC_PI_2) {
                continue;
            }
            let env = h + g * (t - x);
            let log_f = Self::log_density(self.m, self.nu, t) - self.shift;
            if rng.gen::<f64>().ln() <= log_f - env {
                return t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mo(mean: f64, variance: f64, skewness: f64, kurtosis: f64) -> Moments {
        Moments {
            mean,
            variance,
            skewness,
            kurtosis,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6 * b.abs().max(1e-6)
    }

    #[test]
    fn type_selection() {
        let cases = [
            (mo(0.0, 1.0, 0.0, 3.0), 0),
            (mo(0.0, 1.0, 0.0, 1.8), 2),
            (mo(0.0, 1.0, 0.5, 2.5), 1),
            (mo(0.0, 1.0, 0.0, 5.0), 7),
            (mo(0.0, 1.0, 1.0, 4.5), 3),
            (mo(0.0, 1.0, 0.5, 4.0), 4),
            (mo(0.0, 1.0, 1.0, 4.8), 6),
        ];
        for (m, t) in cases {
            let fit = fit_moments(m).unwrap();
            assert_eq!(fit.type_number(), t, "{m:?}");
            let got = fit.moments();
            assert!(close(got.mean + 1.0, m.mean + 1.0), "{m:?} -> {got:?}");
            assert!(close(got.variance, m.variance), "{m:?} -> {got:?}");
            assert!((got.skewness - m.skewness).abs() < 1e-6, "{m:?} -> {got:?}");
            assert!(close(got.kurtosis, m.kurtosis), "{m:?} -> {got:?}");
        }
    }

    #[test]
    fn uniform_samples_give_symmetric_beta() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64 + 0.5) / 10_000.0).collect();
        let fit = pearson_fit(&xs).unwrap();
        assert_eq!(fit.type_number(), 2);
        if let PearsonKind::Beta { p, q } = fit.kind {
            assert!((p - 1.0).abs() < 1e-3 && (q - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn infeasible_and_degenerate_inputs() {
        assert!(fit_moments(mo(0.0, 1.0, 1.0, 1.5)).is_err());
        assert!(pearson_fit(&[1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(pearson_fit(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let fit = fit_moments(mo(0.2, 0.01, 0.4, 3.6)).unwrap();
        let a = fit.sample(100, &mut ChaCha8Rng::seed_from_u64(1));
        let b = fit.sample(100, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(fit.sample(0, &mut ChaCha8Rng::seed_from_u64(1)).is_empty());
    }
}
