use crate::error::{Error, Result};
use crate::ingest::{RawRecording, Sample, NATIVE_RATE_HZ};

use super::filter::{cheby1_lowpass, sosfiltfilt};

pub const SUPPORTED_RATES: [f64; 5] = [500.0, 250.0, 125.0, 50.0, 31.25];

const FILTER_ORDER: usize = 8;
const RIPPLE_DB: f64 = 0.05;
/// Largest factor handled by a single filter stage.
const MAX_STAGE: usize = 13;

/// Per-stage factors for a 1000 Hz → `target` reduction.
pub fn decimation_stages(target: f64) -> Result<Vec<usize>> {
    let q = match SUPPORTED_RATES.iter().position(|r| (*r - target).abs() < 1e-9) {
        Some(0) => 2,
        Some(1) => 4,
        Some(2) => 8,
        Some(3) => 20,
        Some(4) => 32,
        _ => return Err(Error::UnsupportedRate(target)),
    };
    let stages = match q {
        20 => vec![4, 5],
        32 => vec![8, 4],
        q => vec![q],
    };
    debug_assert!(stages.iter().all(|s| *s <= MAX_STAGE));
    Ok(stages)
}

/// Linear interpolation across missing samples; edges hold the nearest
/// valid value. Returns `None` when every sample is missing.
fn fill_missing(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let valid: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let (&first, &last) = (valid.first()?, valid.last()?);
    let mut out = vec![0.0; values.len()];
    for (i, o) in out.iter_mut().enumerate() {
        *o = match values[i] {
            Some(v) => v,
            None if i < first => values[first].unwrap(),
            None if i > last => values[last].unwrap(),
            None => {
                let hi = valid.partition_point(|&j| j < i);
                let (a, b) = (valid[hi - 1], valid[hi]);
                let (va, vb) = (values[a].unwrap(), values[b].unwrap());
                va + (vb - va) * (i - a) as f64 / (b - a) as f64
            }
        };
    }
    Some(out)
}

fn decimate_channel(values: &[Option<f64>], stages: &[usize]) -> Vec<Option<f64>> {
    let q: usize = stages.iter().product();
    let n_out = values.len().div_ceil(q);
    let Some(mut signal) = fill_missing(values) else {
        return vec![None; n_out];
    };
    for &stage in stages {
        let sos = cheby1_lowpass(FILTER_ORDER, RIPPLE_DB, 0.8 / stage as f64);
        let filtered = sosfiltfilt(&sos, &signal);
        signal = filtered.into_iter().step_by(stage).collect();
    }
    debug_assert_eq!(signal.len(), n_out);
    let half = q / 2;
    signal
        .into_iter()
        .enumerate()
        .map(|(j, v)| {
            let centre = j * q;
            let lo = centre.saturating_sub(half);
            let hi = (centre + half).min(values.len() - 1);
            values[lo..=hi].iter().all(|s| s.is_some()).then_some(v)
        })
        .collect()
}

/// Anti-aliased, zero-phase downsampling of a 1000 Hz recording.
pub fn decimate(rec: &RawRecording, target_rate: f64) -> Result<RawRecording> {
    if (rec.rate_hz - NATIVE_RATE_HZ).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "decimation expects a {NATIVE_RATE_HZ} Hz recording, got {} Hz",
            rec.rate_hz
        )));
    }
    let stages = decimation_stages(target_rate)?;
    let q: usize = stages.iter().product();
    let xs: Vec<Option<f64>> = rec.samples.iter().map(|s| s.x).collect();
    let ys: Vec<Option<f64>> = rec.samples.iter().map(|s| s.y).collect();
    let dx = decimate_channel(&xs, &stages);
    let dy = decimate_channel(&ys, &stages);
    let samples = rec
        .samples
        .iter()
        .step_by(q)
        .zip(dx.into_iter().zip(dy))
        .map(|(s, (x, y))| Sample { t: s.t, x, y })
        .collect();
    Ok(RawRecording {
        key: rec.key.clone(),
        rate_hz: target_rate,
        samples,
    })
}
