//! Recording similarity, ROC-derived error rates and the
//! enrollment/authentication protocol.

pub mod pearson;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::Task;
use crate::numeric::KahanSum;

pub use pearson::{fit_moments, pearson_fit, Moments, PearsonFit, PearsonKind};

/// FAR targets reported alongside the EER.
pub const FAR_TARGETS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
/// Draws per class when resampling scores.
pub const RESAMPLE_COUNT: usize = 20_000;
/// Fewest scores a class needs before it is refitted.
pub const MIN_FIT_SAMPLES: usize = 4;

/// Window embeddings of one recording, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingEmbedding {
    pub subject_id: String,
    pub round: u8,
    pub session: u8,
    pub dim: usize,
    /// `n × dim`.
    pub windows: Vec<f32>,
}

impl RecordingEmbedding {
    pub fn n_windows(&self) -> usize {
        self.windows.len() / self.dim
    }

    fn window(&self, i: usize) -> &[f32] {
        &self.windows[i * self.dim..(i + 1) * self.dim]
    }
}

fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    (aa > 0.0 && bb > 0.0).then(|| (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean cosine similarity over the first `n` aligned windows. Zero-norm
/// windows contribute 0 and are logged.
pub fn similarity(a: &RecordingEmbedding, b: &RecordingEmbedding, n: usize) -> Result<f64> {
    if n == 0 || a.n_windows() < n || b.n_windows() < n || a.dim != b.dim {
        return Err(Error::InvalidInput(format!(
            "similarity needs {n} windows of equal dimension (have {}, {})",
            a.n_windows(),
            b.n_windows()
        )));
    }
    let mut sum = 0.0;
    for i in 0..n {
        match cosine(a.window(i), b.window(i)) {
            Some(c) => sum += c,
            None => log::debug!("zero-norm embedding in window {i} of {} / {}", a.subject_id, b.subject_id),
        }
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairScores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

/// Scores every (enrollment, authentication) pair; same subject is genuine.
pub fn build_pairs(enroll: &[RecordingEmbedding], auth: &[RecordingEmbedding], n: usize) -> Result<PairScores> {
    if enroll.is_empty() || auth.is_empty() {
        return Err(Error::InvalidInput("empty enrollment or authentication set".into()));
    }
    let mut out = PairScores::default();
    for a in enroll {
        for b in auth {
            let s = similarity(a, b, n)?;
            if a.subject_id == b.subject_id {
                out.genuine.push(s);
            } else {
                out.impostor.push(s);
            }
        }
    }
    Ok(out)
}

/// Empirical ROC under "accept iff score ≥ threshold". Points are ordered
/// by increasing threshold, from −∞ (accept all) to +∞ (reject all).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
    pub genuine_n: usize,
    pub impostor_n: usize,
}

pub fn roc(genuine: &[f64], impostor: &[f64]) -> Result<RocCurve> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InvalidInput("ROC needs genuine and impostor scores".into()));
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let mut g = genuine.to_vec();
    let mut im = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let (ng, ni) = (g.len() as f64, im.len() as f64);

    let mut thresholds = vec![f64::NEG_INFINITY];
    let mut far = vec![1.0];
    let mut frr = vec![0.0];
    // rejected counts so far: scores strictly below the threshold
    let (mut gi, mut ii) = (0, 0);
    while gi < g.len() || ii < im.len() {
        let t = match (g.get(gi), im.get(ii)) {
            (Some(a), Some(b)) => a.min(*b),
            (Some(a), None) => *a,
            (None, Some(b)) => *b,
            (None, None) => unreachable!(),
        };
        thresholds.push(t);
        far.push((im.len() - ii) as f64 / ni);
        frr.push(gi as f64 / ng);
        while gi < g.len() && g[gi] <= t {
            gi += 1;
        }
        while ii < im.len() && im[ii] <= t {
            ii += 1;
        }
    }
    thresholds.push(f64::INFINITY);
    far.push(0.0);
    frr.push(1.0);
    Ok(RocCurve {
        thresholds,
        far,
        frr,
        genuine_n: g.len(),
        impostor_n: im.len(),
    })
}

/// FAR = FRR, linearly interpolated between the two curve points where
/// FAR − FRR changes sign.
pub fn eer(curve: &RocCurve) -> f64 {
    let d = |i: usize| curve.far[i] - curve.frr[i];
    let j = (0..curve.far.len())
        .find(|&i| d(i) <= 0.0)
        .expect("curve ends at FAR 0, FRR 1");
    if d(j) == 0.0 {
        return curve.far[j];
    }
    let (d0, d1) = (d(j - 1), d(j));
    let t = d0 / (d0 - d1);
    curve.far[j - 1] + t * (curve.far[j] - curve.far[j - 1])
}

/// FRR at the smallest threshold whose FAR does not exceed `target`.
pub fn frr_at_far(curve: &RocCurve, target: f64) -> f64 {
    if curve.impostor_n < (1.0 / target).ceil() as usize {
        log::debug!("FRR@FAR {target:e} from only {} impostor scores", curve.impostor_n);
    }
    let i = curve
        .far
        .iter()
        .position(|f| *f <= target)
        .expect("curve ends at FAR 0");
    curve.frr[i]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub eer: f64,
    /// FRR at each of [`FAR_TARGETS`].
    pub frr_at_far: [f64; 4],
    pub genuine_n: usize,
    pub impostor_n: usize,
    /// Whether metrics come from Pearson-resampled scores.
    pub resampled: bool,
}

pub fn metrics_from_scores(genuine: &[f64], impostor: &[f64], resampled: bool) -> Result<Metrics> {
    let curve = roc(genuine, impostor)?;
    Ok(Metrics {
        eer: eer(&curve),
        frr_at_far: FAR_TARGETS.map(|t| frr_at_far(&curve, t)),
        genuine_n: genuine.len(),
        impostor_n: impostor.len(),
        resampled,
    })
}

/// Replaces both score classes by 20,000 draws each from Pearson fits.
/// Falls back to the empirical scores (flagged `resampled = false`) when a
/// class has too few scores or cannot be fitted.
pub fn resample_scores(scores: &PairScores, seed: u64) -> (PairScores, bool) {
    if scores.genuine.len() < MIN_FIT_SAMPLES || scores.impostor.len() < MIN_FIT_SAMPLES {
        log::warn!(
            "{} genuine / {} impostor scores: too few to fit, using empirical scores",
            scores.genuine.len(),
            scores.impostor.len()
        );
        return (scores.clone(), false);
    }
    let fits = pearson_fit(&scores.genuine).and_then(|g| Ok((g, pearson_fit(&scores.impostor)?)));
    match fits {
        Ok((g, i)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let genuine = g.sample(RESAMPLE_COUNT, &mut rng);
            let impostor = i.sample(RESAMPLE_COUNT, &mut rng);
            (PairScores { genuine, impostor }, true)
        }
        Err(e) => {
            log::warn!("Pearson fit failed ({e}); using empirical scores");
            (scores.clone(), false)
        }
    }
}

/// Metrics for one authentication set: pairs from embeddings, Pearson
/// resampling (seeded), then EER and FRR@FAR.
pub fn evaluate_round(
    enroll: &[RecordingEmbedding],
    auth: &[RecordingEmbedding],
    n: usize,
    seed: u64,
) -> Result<(Metrics, PairScores)> {
    let empirical = build_pairs(enroll, auth, n)?;
    if empirical.genuine.is_empty() {
        return Err(Error::NoGenuinePairs);
    }
    let (scores, resampled) = resample_scores(&empirical, seed);
    let mut m = metrics_from_scores(&scores.genuine, &scores.impostor, resampled)?;
    m.genuine_n = empirical.genuine.len();
    m.impostor_n = empirical.impostor.len();
    Ok((m, empirical))
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub task: Task,
    pub rate_hz: f64,
    pub round: u8,
    pub n: usize,
    pub metrics: Metrics,
}

pub const METRICS_HEADER: &str =
    "task,rate,round,n,eer,frr_far_1e-1,frr_far_1e-2,frr_far_1e-3,frr_far_1e-4,genuine_n,impostor_n,resampled";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{:.10},{:.10},{:.10},{:.10},{:.10},{},{},{}",
            r.task,
            r.rate_hz,
            r.round,
            r.n,
            m.eer,
            m.frr_at_far[0],
            m.frr_at_far[1],
            m.frr_at_far[2],
            m.frr_at_far[3],
            m.genuine_n,
            m.impostor_n,
            m.resampled
        );
    }
    s
}

/// Parses [`metrics_csv`] output.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::MalformedRow {
            row: i + 2,
            reason: format!("bad {what}"),
        };
        let f = |j: usize, what: &str| rec.get(j).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| bad(what));
        let u = |j: usize, what: &str| rec.get(j).and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| bad(what));
        rows.push(MetricsRow {
            task: rec.get(0).unwrap_or("").parse()?,
            rate_hz: f(1, "rate")?,
            round: u(2, "round")? as u8,
            n: u(3, "n")?,
            metrics: Metrics {
                eer: f(4, "eer")?,
                frr_at_far: [f(5, "frr")?, f(6, "frr")?, f(7, "frr")?, f(8, "frr")?],
                genuine_n: u(9, "genuine_n")?,
                impostor_n: u(10, "impostor_n")?,
                resampled: rec.get(11) == Some("true"),
            },
        });
    }
    Ok(rows)
}

/// ROC points as `threshold,far,frr` lines.
pub fn roc_points_text(curve: &RocCurve) -> String {
    let mut s = String::from("threshold,far,frr\n");
    for i in 0..curve.far.len() {
        let _ = writeln!(s, "{},{},{}", curve.thresholds[i], curve.far[i], curve.frr[i]);
    }
    s
}

/// Histogram of scores rescaled from [−1, 1] to [0, 1], bin width 0.01.
pub fn histogram_text(scores: &PairScores) -> String {
    let bins = |v: &[f64]| {
        let mut h = vec![0usize; 100];
        for s in v {
            let x = ((s + 1.0) / 2.0).clamp(0.0, 1.0);
            h[((x * 100.0) as usize).min(99)] += 1;
        }
        h
    };
    let (g, i) = (bins(&scores.genuine), bins(&scores.impostor));
    let mut s = String::from("bin_start,genuine,impostor\n");
    for b in 0..100 {
        let _ = writeln!(s, "{:.2},{},{}", b as f64 / 100.0, g[b], i[b]);
    }
    s
}

/// Mean and sample standard deviation, as reported across folds.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut sum = KahanSum::default();
    values.iter().for_each(|v| sum.add(*v));
    let mean = sum.value() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
