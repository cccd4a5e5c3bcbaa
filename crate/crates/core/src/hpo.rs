//! Hyperparameter search: a fixed start, five seeded random probes, then
//! GP-UCB suggestions. Points are scored by mean + 1.96·SD of the fold EERs
//! and the lowest valuation wins.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::config::HyperParams;
use crate::error::{Error, Result};
use crate::seed::component_rng;

pub const DIMS: usize = 6;
pub const BUDGET: usize = 31;
pub const RANDOM_PROBES: usize = 5;
pub const DEFAULT_KAPPA: f64 = 2.576;
pub const NOISE_VARIANCE: f64 = 1e-6;

pub type Point = [f64; DIMS];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSpace {
    pub lo: Point,
    pub hi: Point,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lo: [-6.0, -6.0, 1.0, 1.0, 0.0, 0.0],
            hi: [-2.0, -2.0, 100.0, 100.0, 1.0, 0.5],
        }
    }
}

impl SearchSpace {
    pub fn contains(&self, p: &Point) -> bool {
        (0..DIMS).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    pub fn to_unit(&self, p: &Point) -> Point {
        std::array::from_fn(|i| (p[i] - self.lo[i]) / (self.hi[i] - self.lo[i]))
    }

    /// Clamps to the box, so rounding never leaves it.
    pub fn from_unit(&self, u: &Point) -> Point {
        std::array::from_fn(|i| {
            (self.lo[i] + u[i].clamp(0.0, 1.0) * (self.hi[i] - self.lo[i])).clamp(self.lo[i], self.hi[i])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Fixed,
    Random,
    Ucb,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Fixed => "fixed",
            Strategy::Random => "random",
            Strategy::Ucb => "ucb",
        })
    }
}

pub fn schedule(iteration: usize) -> Result<Strategy> {
    match iteration {
        1 => Ok(Strategy::Fixed),
        2..=6 => Ok(Strategy::Random),
        7..=BUDGET => Ok(Strategy::Ucb),
        _ => Err(Error::ScheduleRange(iteration)),
    }
}

/// The random probes depend only on `seed`, so every task sees the same
/// five points.
pub fn random_points(space: &SearchSpace, seed: u64) -> Vec<Point> {
    let mut rng = component_rng(seed, "hpo/random");
    (0..RANDOM_PROBES)
        .map(|_| space.from_unit(&std::array::from_fn(|_| rng.gen::<f64>())))
        .collect()
}

/// mean + 1.96·sample SD; +∞ if any fold is non-finite.
pub fn valuation(eers: &[f64]) -> f64 {
    if eers.len() < 2 || eers.iter().any(|e| !e.is_finite()) {
        return f64::INFINITY;
    }
    let n = eers.len() as f64;
    let mean = eers.iter().sum::<f64>() / n;
    let var = eers.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    mean + 1.96 * var.sqrt()
}

fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub length: Point,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Default for Kernel {
    fn default() -> Self {
        Self {
            length: [0.3; DIMS],
            signal_var: 1.0,
            noise_var: NOISE_VARIANCE,
        }
    }
}

impl Kernel {
    pub fn eval(&self, a: &Point, b: &Point) -> f64 {
        let r2: f64 = (0..DIMS).map(|i| ((a[i] - b[i]) / self.length[i]).powi(2)).sum();
        self.signal_var * matern52(r2.sqrt())
    }
}

/// GP over unit-box points. Targets are standardized before fitting; the
/// posterior is reported in the original units.
#[derive(Debug, Clone)]
pub struct Gp {
    pub kernel: Kernel,
    x: Vec<Point>,
    y_mean: f64,
    y_scale: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

fn factor(kernel: &Kernel, x: &[Point]) -> Result<Cholesky<f64, Dyn>> {
    let n = x.len();
    let base = DMatrix::from_fn(n, n, |i, j| kernel.eval(&x[i], &x[j]));
    let mut jitter = kernel.noise_var;
    for _ in 0..6 {
        let k = &base + DMatrix::identity(n, n) * jitter;
        if let Some(c) = Cholesky::new(k) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::Covariance)
}

fn standardize(y: &[f64]) -> (f64, f64) {
    if y.is_empty() {
        return (0.0, 1.0);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Log marginal likelihood of standardized targets, without the constant.
fn standardized_lml(kernel: &Kernel, x: &[Point], z: &DVector<f64>) -> f64 {
    match factor(kernel, x) {
        Ok(c) => {
            let a = c.solve(z);
            let logdet: f64 = c.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
            -0.5 * z.dot(&a) - logdet
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

pub fn log_marginal_likelihood(kernel: &Kernel, x: &[Point], y: &[f64]) -> f64 {
    let (m, s) = standardize(y);
    let z = DVector::from_iterator(y.len(), y.iter().map(|v| (v - m) / s));
    standardized_lml(kernel, x, &z)
}

impl Gp {
    pub fn new(kernel: Kernel, x: Vec<Point>, y: &[f64]) -> Result<Self> {
        assert_eq!(x.len(), y.len());
        let (y_mean, y_scale) = standardize(y);
        let z = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));
        if x.is_empty() {
            return Ok(Self {
                kernel,
                x,
                y_mean,
                y_scale,
                chol: None,
                alpha: z,
            });
        }
        let chol = factor(&kernel, &x)?;
        let alpha = chol.solve(&z);
        Ok(Self {
            kernel,
            x,
            y_mean,
            y_scale,
            chol: Some(chol),
            alpha,
        })
    }

    /// Refits length scales and signal variance by maximizing the log
    /// marginal likelihood, then conditions on the data.
    pub fn fit(x: Vec<Point>, y: &[f64]) -> Result<Self> {
        if x.len() < 2 {
            return Self::new(Kernel::default(), x, y);
        }
        let (m, s) = standardize(y);
        let z = DVector::from_iterator(y.len(), y.iter().map(|v| (v - m) / s));
        // log length in [ln 0.01, ln 100], log signal variance in [ln 0.01, ln 1e6]
        let (len_lo, len_hi) = (0.01f64.ln(), 100f64.ln());
        let (var_lo, var_hi) = (0.01f64.ln(), 1e6f64.ln());
        let kernel_of = |v: &[f64; DIMS + 1]| Kernel {
            length: std::array::from_fn(|i| v[i].clamp(len_lo, len_hi).exp()),
            signal_var: v[DIMS].clamp(var_lo, var_hi).exp(),
            noise_var: NOISE_VARIANCE,
        };
        let lml = |v: &[f64; DIMS + 1]| standardized_lml(&kernel_of(v), &x, &z);

        // Shared length scale first. Long lengths need a large signal
        // variance to carry a trend, so the starts move both together.
        let iso = |v: &[f64; 2]| -> [f64; DIMS + 1] {
            let mut full = [v[0]; DIMS + 1];
            full[DIMS] = v[1];
            full
        };
        let neg_iso = |v: &[f64; 2]| -lml(&iso(v));
        let (iso_best, iso_f) = [(0.3f64, 1.0f64), (1.0, 1.0), (3.0, 1e2), (10.0, 1e4)]
            .into_iter()
            .map(|(l, s)| {
                nelder_mead(&neg_iso, [l.ln(), s.ln()], 0.5, &[len_lo, var_lo], &[len_hi, var_hi], 300)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty starts");

        // Per-dimension refinement, kept only if it beats the shared fit by
        // more than a BIC penalty for the extra parameters.
        let mut lo = [len_lo; DIMS + 1];
        let mut hi = [len_hi; DIMS + 1];
        lo[DIMS] = var_lo;
        hi[DIMS] = var_hi;
        let neg_ard = |v: &[f64; DIMS + 1]| -lml(v);
        let (ard, ard_f) = nelder_mead(&neg_ard, iso(&iso_best), 0.5, &lo, &hi, 800);
        let penalty = 0.5 * (DIMS - 1) as f64 * (x.len() as f64).ln();
        let chosen = if ard_f + penalty < iso_f { ard } else { iso(&iso_best) };
        Self::new(kernel_of(&chosen), x, y)
    }

    /// Posterior mean and standard deviation at a unit-box point.
    pub fn predict(&self, p: &Point) -> (f64, f64) {
        let Some(chol) = &self.chol else {
            return (self.y_mean, self.y_scale * self.kernel.signal_var.sqrt());
        };
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.kernel.eval(xi, p)));
        let mean = self.y_mean + self.y_scale * ks.dot(&self.alpha);
        let v = chol.l_dirty().solve_lower_triangular(&ks).expect("non-singular factor");
        let var = (self.kernel.signal_var - v.dot(&v)).max(0.0);
        (mean, self.y_scale * var.sqrt())
    }
}

/// Nelder–Mead on a box; vertices are projected back inside after every
/// move.
fn nelder_mead<const N: usize>(
    f: &dyn Fn(&[f64; N]) -> f64,
    start: [f64; N],
    step: f64,
    lo: &[f64; N],
    hi: &[f64; N],
    max_evals: usize,
) -> ([f64; N], f64) {
    let clamp = |p: [f64; N]| -> [f64; N] { std::array::from_fn(|i| p[i].clamp(lo[i], hi[i])) };
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    let s0 = clamp(start);
    simplex.push((s0, f(&s0)));
    for i in 0..N {
        let mut p = s0;
        p[i] = if p[i] + step <= hi[i] { p[i] + step } else { p[i] - step };
        let p = clamp(p);
        simplex.push((p, f(&p)));
    }
    let mut evals = N + 1;
    let along = |a: &[f64; N], b: &[f64; N], t: f64| clamp(std::array::from_fn(|i| a[i] + t * (b[i] - a[i])));
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[N].1 - simplex[0].1).abs() < 1e-10 {
            break;
        }
        let centroid: [f64; N] = std::array::from_fn(|i| simplex[..N].iter().map(|(p, _)| p[i]).sum::<f64>() / N as f64);
        let worst = simplex[N];
        let r = along(&centroid, &worst.0, -1.0);
        let fr = f(&r);
        evals += 1;
        if fr < simplex[0].1 {
            let e = along(&centroid, &worst.0, -2.0);
            let fe = f(&e);
            evals += 1;
            simplex[N] = if fe < fr { (e, fe) } else { (r, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (r, fr);
        } else {
            let c = along(&centroid, &worst.0, 0.5);
            let fc = f(&c);
            evals += 1;
            if fc < worst.1 {
                simplex[N] = (c, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let p = along(&best, &v.0, 0.5);
                    *v = (p, f(&p));
                }
                evals += N;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Minimizes mean − κ·sd over the unit box from random starts plus the
/// best observed points; returns a unit-box point.
pub fn ucb_suggest<R: Rng + ?Sized>(gp: &Gp, kappa: f64, rng: &mut R) -> Point {
    let acq = |p: &Point| {
        let (m, s) = gp.predict(p);
        m - kappa * s
    };
    let mut starts: Vec<Point> = (0..16).map(|_| std::array::from_fn(|_| rng.gen::<f64>())).collect();
    let mut observed: Vec<(Point, f64)> = gp.x.iter().map(|p| (*p, gp.predict(p).0)).collect();
    observed.sort_by(|a, b| a.1.total_cmp(&b.1));
    starts.extend(observed.iter().take(4).map(|(p, _)| *p));
    // Coarse screen, then local refinement of the best few.
    let mut screened: Vec<(Point, f64)> = (0..512)
        .map(|_| {
            let p: Point = std::array::from_fn(|_| rng.gen::<f64>());
            (p, acq(&p))
        })
        .collect();
    screened.sort_by(|a, b| a.1.total_cmp(&b.1));
    starts.extend(screened.iter().take(4).map(|(p, _)| *p));

    let (lo, hi) = ([0.0; DIMS], [1.0; DIMS]);
    starts
        .into_iter()
        .map(|s| nelder_mead(&acq, s, 0.1, &lo, &hi, 200))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(p, _)| p)
        .expect("non-empty starts")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub iteration: usize,
    pub strategy: Strategy,
    pub point: Point,
    /// Empty when the objective failed.
    pub fold_eers: Vec<f64>,
    pub valuation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub history: Vec<Observation>,
    pub best: Observation,
}

impl SearchResult {
    pub fn best_hparams(&self) -> HyperParams {
        HyperParams::from_array(self.best.point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub fixed: Point,
    pub budget: usize,
    pub kappa: f64,
    pub seed: u64,
}

/// Runs the schedule for `budget` iterations. The objective returns the
/// per-fold EERs of a point; an error there scores +∞ and the search goes
/// on. Iteration `i` is written to `on_observe` as soon as it is known.
pub fn run_search(
    cfg: &SearchConfig,
    mut objective: impl FnMut(&Point) -> Result<Vec<f64>>,
    mut on_observe: impl FnMut(&Observation),
) -> Result<SearchResult> {
    if cfg.budget == 0 || cfg.budget > BUDGET {
        return Err(Error::ScheduleRange(cfg.budget));
    }
    if !cfg.space.contains(&cfg.fixed) {
        return Err(Error::Config("fixed point outside the search space".into()));
    }
    let randoms = random_points(&cfg.space, cfg.seed);
    let mut history: Vec<Observation> = Vec::with_capacity(cfg.budget);
    for it in 1..=cfg.budget {
        let strategy = schedule(it)?;
        let point = match strategy {
            Strategy::Fixed => cfg.fixed,
            Strategy::Random => randoms[it - 2],
            Strategy::Ucb => {
                let finite: Vec<f64> = history.iter().map(|o| o.valuation).filter(|v| v.is_finite()).collect();
                let mut rng = component_rng(cfg.seed, &format!("hpo/ucb/{it}"));
                if finite.is_empty() {
                    cfg.space.from_unit(&std::array::from_fn(|_| rng.gen::<f64>()))
                } else {
                    // Failed points take the worst finite valuation so the GP
                    // steers away without an infinite target.
                    let worst = finite.iter().copied().fold(f64::MIN, f64::max);
                    let x: Vec<Point> = history.iter().map(|o| cfg.space.to_unit(&o.point)).collect();
                    let y: Vec<f64> = history
                        .iter()
                        .map(|o| if o.valuation.is_finite() { o.valuation } else { worst })
                        .collect();
                    let gp = Gp::fit(x, &y)?;
                    cfg.space.from_unit(&ucb_suggest(&gp, cfg.kappa, &mut rng))
                }
            }
        };
        let (fold_eers, value) = match objective(&point) {
            Ok(eers) => {
                let v = valuation(&eers);
                (eers, v)
            }
            Err(e) => {
                log::warn!("hpo iteration {it}: training failed: {e}");
                (Vec::new(), f64::INFINITY)
            }
        };
        let obs = Observation {
            iteration: it,
            strategy,
            point,
            fold_eers,
            valuation: value,
        };
        on_observe(&obs);
        history.push(obs);
    }
    // Earliest iteration wins ties.
    let best = history
        .iter()
        .reduce(|a, b| if b.valuation < a.valuation { b } else { a })
        .cloned()
        .expect("budget ≥ 1");
    Ok(SearchResult { history, best })
}

pub fn history_header(n_folds: usize) -> String {
    let mut s = String::from("iteration,strategy,log10_lr,log10_wd,alpha,beta,lambda,epsilon");
    for f in 1..=n_folds {
        let _ = write!(s, ",eer_fold{f}");
    }
    s.push_str(",valuation\n");
    s
}

pub fn history_row(o: &Observation, n_folds: usize) -> String {
    let mut s = format!("{},{}", o.iteration, o.strategy);
    for v in o.point {
        let _ = write!(s, ",{v:.10}");
    }
    for f in 0..n_folds {
        match o.fold_eers.get(f) {
            Some(e) => {
                let _ = write!(s, ",{e:.10}");
            }
            None => s.push_str(",nan"),
        }
    }
    let _ = writeln!(s, ",{:.10}", o.valuation);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        assert_eq!(schedule(1).unwrap(), Strategy::Fixed);
        assert_eq!(schedule(2).unwrap(), Strategy::Random);
        assert_eq!(schedule(6).unwrap(), Strategy::Random);
        assert_eq!(schedule(7).unwrap(), Strategy::Ucb);
        assert_eq!(schedule(31).unwrap(), Strategy::Ucb);
        assert!(matches!(schedule(0), Err(Error::ScheduleRange(0))));
        assert!(matches!(schedule(32), Err(Error::ScheduleRange(32))));
    }

    #[test]
    fn valuation_examples() {
        assert!((valuation(&[0.2; 4]) - 0.2).abs() < 1e-15);
        let v = valuation(&[0.1, 0.2, 0.3, 0.2]);
        // sample SD of {0.1,0.2,0.3,0.2} is sqrt(0.02/3)
        assert!((v - (0.2 + 1.96 * (0.02f64 / 3.0).sqrt())).abs() < 1e-12);
        assert!((valuation(&[0.3, 0.2, 0.2, 0.1]) - valuation(&[0.2, 0.1, 0.3, 0.2])).abs() < 1e-15);
        assert_eq!(valuation(&[0.1, f64::NAN, 0.1, 0.1]), f64::INFINITY);
    }

    #[test]
    fn random_points_in_bounds_and_seeded() {
        let space = SearchSpace::default();
        let a = random_points(&space, 3);
        assert_eq!(a, random_points(&space, 3));
        assert_ne!(a, random_points(&space, 4));
        assert!(a.iter().all(|p| space.contains(p)));
    }

    #[test]
    fn unit_round_trip() {
        let space = SearchSpace::default();
        let p = [-4.03, -2.32, 2.34, 48.98, 0.18, 0.24];
        let back = space.from_unit(&space.to_unit(&p));
        for i in 0..DIMS {
            assert!((back[i] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn nelder_mead_box_quadratic() {
        let f = |p: &[f64; 2]| (p[0] - 0.3).powi(2) + (p[1] - 2.0).powi(2);
        let (p, _) = nelder_mead(&f, [0.9, 0.1], 0.2, &[0.0, 0.0], &[1.0, 1.0], 500);
        assert!((p[0] - 0.3).abs() < 1e-4);
        assert!((p[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prior_without_observations() {
        let gp = Gp::new(Kernel::default(), Vec::new(), &[]).unwrap();
        assert_eq!(gp.predict(&[0.5; DIMS]), (0.0, 1.0));
    }

    #[test]
    fn budget_one_returns_fixed() {
        let cfg = SearchConfig {
            space: SearchSpace::default(),
            fixed: [-2.12, -3.17, 6.75, 60.51, 0.87, 0.01],
            budget: 1,
            kappa: DEFAULT_KAPPA,
            seed: 0,
        };
        let r = run_search(&cfg, |_| Ok(vec![0.3; 4]), |_| {}).unwrap();
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.best.point, cfg.fixed);
    }

    #[test]
    fn failures_score_infinity() {
        let cfg = SearchConfig {
            space: SearchSpace::default(),
            fixed: [-2.12, -3.17, 6.75, 60.51, 0.87, 0.01],
            budget: 8,
            kappa: DEFAULT_KAPPA,
            seed: 0,
        };
        let mut calls = 0;
        let r = run_search(
            &cfg,
            |p| {
                calls += 1;
                if calls % 2 == 0 {
                    Err(Error::NonFinite { layer: 0 })
                } else {
                    Ok(vec![p[4]; 4])
                }
            },
            |_| {},
        )
        .unwrap();
        assert_eq!(r.history.len(), 8);
        assert!(r.history[1].valuation.is_infinite());
        assert!(r.best.valuation.is_finite());
        assert!(r.history.iter().all(|o| cfg.space.contains(&o.point)));
        let row = history_row(&r.history[1], 4);
        assert!(row.contains(",nan,nan,nan,nan,inf"));
    }
}
