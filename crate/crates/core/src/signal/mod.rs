//! Position → velocity → slow/fast channels → fixed-length windows.

mod cache;
mod decimate;
pub mod filter;

pub use cache::{read_cached, write_cached, CacheHeader};
pub use decimate::{decimate, decimation_stages, SUPPORTED_RATES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RawRecording;
use crate::numeric::KahanSum;

/// Velocities are clipped to ±this many degrees per second.
pub const VELOCITY_LIMIT: f64 = 1000.0;
/// Gain inside the tanh of the slow channels.
pub const SLOW_GAIN: f64 = 0.02;
/// Speed (deg/s) at or above which the fast channels carry the z-score.
pub const FAST_THRESHOLD: f64 = 40.0;
/// Network input length in time steps.
pub const WINDOW_STEPS: usize = 1024;
/// Number of input channels (x_slow, y_slow, x_fast, y_fast).
pub const CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySequence {
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub rate_hz: f64,
}

impl VelocitySequence {
    pub fn len(&self) -> usize {
        self.dx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dx.is_empty()
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v.clamp(-VELOCITY_LIMIT, VELOCITY_LIMIT)
    } else {
        0.0
    }
}

/// One-sample backward difference. Steps touching a missing position
/// become 0 before clipping.
pub fn differentiate(rec: &RawRecording) -> Result<VelocitySequence> {
    if rec.samples.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            available: rec.samples.len(),
        });
    }
    let n = rec.samples.len() - 1;
    let mut dx = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    for w in rec.samples.windows(2) {
        let dt = w[1].t - w[0].t;
        let diff = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (b - a) / dt,
            _ => f64::NAN,
        };
        dx.push(sanitize(diff(w[0].x, w[1].x)));
        dy.push(sanitize(diff(w[0].y, w[1].y)));
    }
    Ok(VelocitySequence {
        dx,
        dy,
        rate_hz: rec.rate_hz,
    })
}

/// Training-set velocity moments for the fast-channel z-scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean_x: f64,
    pub std_x: f64,
    pub mean_y: f64,
    pub std_y: f64,
}

impl ChannelStats {
    pub fn z_x(&self, v: f64) -> f64 {
        (v - self.mean_x) / self.std_x
    }

    pub fn z_y(&self, v: f64) -> f64 {
        (v - self.mean_y) / self.std_y
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std_x > 0.0) {
            return Err(Error::ZeroVariance("x"));
        }
        if !(self.std_y > 0.0) {
            return Err(Error::ZeroVariance("y"));
        }
        Ok(())
    }

    /// Short identifier used to tie cache files to the stats they were
    /// built with.
    pub fn id(&self) -> String {
        let bits = [self.mean_x, self.std_x, self.mean_y, self.std_y]
            .iter()
            .fold(0xcbf29ce484222325u64, |h, v| {
                v.to_bits()
                    .to_le_bytes()
                    .iter()
                    .fold(h, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x100000001b3))
            });
        format!("{bits:016x}")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("stats serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

/// Mean and population standard deviation per channel over every step of
/// every sequence. Two compensated passes, so the result does not depend
/// on how the input is chunked.
pub fn fit_stats<'a, I>(train: I) -> Result<ChannelStats>
where
    I: IntoIterator<Item = &'a VelocitySequence>,
{
    let seqs: Vec<&VelocitySequence> = train.into_iter().collect();
    let count: usize = seqs.iter().map(|s| s.len()).sum();
    if count == 0 {
        return Err(Error::InvalidInput("no training velocities".into()));
    }
    let n = count as f64;
    let mean = |pick: fn(&VelocitySequence) -> &[f64]| {
        let mut s = KahanSum::default();
        seqs.iter().flat_map(|q| pick(q)).for_each(|v| s.add(*v));
        s.value() / n
    };
    let std = |pick: fn(&VelocitySequence) -> &[f64], m: f64| {
        let mut s = KahanSum::default();
        seqs.iter()
            .flat_map(|q| pick(q))
            .for_each(|v| s.add((v - m) * (v - m)));
        (s.value() / n).sqrt()
    };
    let mean_x = mean(|q| &q.dx);
    let mean_y = mean(|q| &q.dy);
    let stats = ChannelStats {
        mean_x,
        std_x: std(|q| &q.dx, mean_x),
        mean_y,
        std_y: std(|q| &q.dy, mean_y),
    };
    stats.validate()?;
    Ok(stats)
}

/// Four-channel transformed sequence, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedSequence {
    pub data: Vec<f32>,
    pub len: usize,
    pub rate_hz: f64,
}

impl TransformedSequence {
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.len..(c + 1) * self.len]
    }
}

/// Slow channels `tanh(c·δ)`; fast channels carry the z-score of δ when the
/// speed reaches the threshold and `z(0)` otherwise.
pub fn transform(vel: &VelocitySequence, stats: &ChannelStats) -> Result<TransformedSequence> {
    stats.validate()?;
    let len = vel.len();
    let mut data = vec![0f32; CHANNELS * len];
    let (zx0, zy0) = (stats.z_x(0.0), stats.z_y(0.0));
    for i in 0..len {
        let (dx, dy) = (vel.dx[i], vel.dy[i]);
        data[i] = (SLOW_GAIN * dx).tanh() as f32;
        data[len + i] = (SLOW_GAIN * dy).tanh() as f32;
        let fast = (dx * dx + dy * dy).sqrt() >= FAST_THRESHOLD;
        let (fx, fy) = if fast {
            (stats.z_x(dx), stats.z_y(dy))
        } else {
            (zx0, zy0)
        };
        data[2 * len + i] = fx as f32;
        data[3 * len + i] = fy as f32;
    }
    Ok(TransformedSequence {
        data,
        len,
        rate_hz: vel.rate_hz,
    })
}

/// One network input: 4 × 1024, channel-major, zero beyond `valid_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedWindow {
    pub data: Vec<f32>,
    pub valid_len: usize,
}

impl TransformedWindow {
    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; CHANNELS * WINDOW_STEPS],
            valid_len: 0,
        }
    }
}

/// Steps in 1.024 s at `rate_hz`, rounded down.
pub fn window_len(rate_hz: f64) -> usize {
    // 1024/1000 written as a ratio so exact cases (1000, 31.25 Hz) stay exact.
    let steps = (1024.0 * rate_hz / 1000.0 + 1e-9).floor() as usize;
    steps.min(WINDOW_STEPS)
}

fn copy_window(seq: &TransformedSequence, start: usize, count: usize) -> TransformedWindow {
    let mut w = TransformedWindow::zeros();
    for c in 0..CHANNELS {
        let src = &seq.channel(c)[start..start + count];
        w.data[c * WINDOW_STEPS..c * WINDOW_STEPS + count].copy_from_slice(src);
    }
    w.valid_len = count;
    w
}

/// Copies `window_len(rate_hz)` steps from `start` (0-based) and zero-pads.
pub fn window_at(seq: &TransformedSequence, start: usize, rate_hz: f64) -> Result<TransformedWindow> {
    let valid = window_len(rate_hz);
    if start + valid > seq.len {
        return Err(Error::TooShort {
            needed: start + valid,
            available: seq.len,
        });
    }
    Ok(copy_window(seq, start, valid))
}

/// The first `n` non-overlapping windows. Windows that run past the end of
/// the sequence keep what is available and are zero beyond it; windows with
/// no data at all are all-zero.
pub fn windows_from(seq: &TransformedSequence, n: usize) -> Vec<TransformedWindow> {
    let valid = window_len(seq.rate_hz);
    (0..n)
        .map(|i| {
            let start = i * valid;
            if start >= seq.len {
                TransformedWindow::zeros()
            } else {
                copy_window(seq, start, valid.min(seq.len - start))
            }
        })
        .collect()
}

/// Full preprocessing of one recording into its first `n` windows.
pub fn first_n_windows(rec: &RawRecording, n: usize, stats: &ChannelStats) -> Result<Vec<TransformedWindow>> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    match differentiate(rec) {
        Ok(vel) => Ok(windows_from(&transform(&vel, stats)?, n)),
        Err(Error::TooShort { .. }) => Ok(vec![TransformedWindow::zeros(); n]),
        Err(e) => Err(e),
    }
}

pub fn preprocess(rec: &RawRecording, stats: &ChannelStats) -> Result<TransformedSequence> {
    match differentiate(rec) {
        Ok(vel) => transform(&vel, stats),
        Err(Error::TooShort { .. }) => Ok(TransformedSequence {
            data: Vec::new(),
            len: 0,
            rate_hz: rec.rate_hz,
        }),
        Err(e) => Err(e),
    }
}
