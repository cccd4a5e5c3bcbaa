//! Chebyshev type I low-pass design in second-order sections and
//! forward-backward (zero-phase) filtering.

use std::f64::consts::PI;

/// One biquad `[b0, b1, b2, a0, a1, a2]` with `a0 = 1`.
pub type Section = [f64; 6];

#[derive(Debug, Clone, Copy)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    fn div(self, o: Complex) -> Complex {
        let d = o.re * o.re + o.im * o.im;
        Complex::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }

    fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// Low-pass Chebyshev type I filter of even `order` with `ripple_db`
/// passband ripple and cutoff `wn` as a fraction of Nyquist.
///
/// Analog prototype poles are prewarped and mapped through the bilinear
/// transform; each conjugate pair becomes a section with a double zero at
/// z = −1. Every section is scaled to unit gain at DC, so the cascade
/// passes constants unchanged.
pub fn cheby1_lowpass(order: usize, ripple_db: f64, wn: f64) -> Vec<Section> {
    assert!(order > 0 && order % 2 == 0, "order must be even");
    assert!(wn > 0.0 && wn < 1.0, "cutoff must lie in (0, 1)");
    let eps = (10f64.powf(0.1 * ripple_db) - 1.0).sqrt();
    let mu = (1.0 / eps).asinh() / order as f64;
    // bilinear transform with fs = 2 (frequencies normalized to Nyquist)
    let fs2 = 4.0;
    let warped = fs2 * (PI * wn / 2.0).tan();

    let mut sections = Vec::with_capacity(order / 2);
    // upper-half-plane poles; each pairs with its conjugate
    for m in (1..order).step_by(2) {
        let theta = PI * m as f64 / (2.0 * order as f64);
        // −sinh(mu + iθ) = −sinh(mu)cosθ − i cosh(mu)sinθ
        let p = Complex::new(-mu.sinh() * theta.cos(), mu.cosh() * theta.sin());
        let p = Complex::new(p.re * warped, p.im * warped);
        let z = Complex::new(fs2 + p.re, p.im).div(Complex::new(fs2 - p.re, -p.im));
        let a1 = -2.0 * z.re;
        let a2 = z.norm_sqr();
        let gain = (1.0 + a1 + a2) / 4.0;
        sections.push([gain, 2.0 * gain, gain, 1.0, a1, a2]);
    }
    sections
}

/// Steady-state direct-form-II-transposed state of each section for a unit
/// step input, scaled by the DC gain of the preceding sections.
fn sosfilt_zi(sos: &[Section]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|s| {
            let [b0, b1, b2, _, a1, a2] = *s;
            let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
            let zi = [scale * (dc - b0), scale * (b2 - a2 * dc)];
            scale *= dc;
            zi
        })
        .collect()
}

fn sosfilt(sos: &[Section], x: &mut [f64], zi: &[[f64; 2]], x0: f64) {
    for (s, z0) in sos.iter().zip(zi) {
        let [b0, b1, b2, _, a1, a2] = *s;
        let (mut z1, mut z2) = (z0[0] * x0, z0[1] * x0);
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Zero-phase filtering with odd-extension padding of
/// `3·(2·sections + 1)` samples (shortened for very short inputs).
pub fn sosfiltfilt(sos: &[Section], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 || sos.is_empty() {
        return x.to_vec();
    }
    let padlen = (3 * (2 * sos.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    let (first, last) = (x[0], x[n - 1]);
    ext.extend((1..=padlen).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=padlen).map(|i| 2.0 * last - x[n - 1 - i]));

    let zi = sosfilt_zi(sos);
    let x0 = ext[0];
    sosfilt(sos, &mut ext, &zi, x0);
    ext.reverse();
    let y0 = ext[0];
    sosfilt(sos, &mut ext, &zi, y0);
    ext.reverse();
    ext[padlen..padlen + n].to_vec()
}

/// Magnitude response of the cascade at normalized frequency `w`
/// (radians per sample).
pub fn magnitude(sos: &[Section], w: f64) -> f64 {
    let (c1, s1) = (w.cos(), -w.sin());
    let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
    sos.iter().fold(1.0, |acc, s| {
        let num = Complex::new(s[0] + s[1] * c1 + s[2] * c2, s[1] * s1 + s[2] * s2);
        let den = Complex::new(1.0 + s[4] * c1 + s[5] * c2, s[4] * s1 + s[5] * s2);
        let h = num.div(den);
        acc * h.norm_sqr().sqrt()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_dc_gain_and_stable_poles() {
        for q in [2.0, 4.0, 5.0, 8.0] {
            let sos = cheby1_lowpass(8, 0.05, 0.8 / q);
            assert_eq!(sos.len(), 4);
            assert!((magnitude(&sos, 0.0) - 1.0).abs() < 1e-12);
            for s in &sos {
                // |pole|² = a2 < 1 inside the unit circle
                assert!(s[5] < 1.0 && s[5] > 0.0);
            }
        }
    }

    #[test]
    fn passband_ripple_and_stopband() {
        let sos = cheby1_lowpass(8, 0.05, 0.1);
        let ripple = 10f64.powf(0.05 / 20.0);
        for i in 0..100 {
            let w = PI * 0.1 * i as f64 / 100.0;
            let m = magnitude(&sos, w);
            assert!(m <= ripple + 1e-9 && m >= 1.0 - 1e-9, "w={w} m={m}");
        }
        assert!(magnitude(&sos, PI * 0.2) < 1e-3);
    }

    #[test]
    fn constant_passes_through() {
        let sos = cheby1_lowpass(8, 0.05, 0.4);
        let y = sosfiltfilt(&sos, &vec![3.25; 500]);
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn empty_and_tiny_inputs() {
        let sos = cheby1_lowpass(8, 0.05, 0.4);
        assert!(sosfiltfilt(&sos, &[]).is_empty());
        assert_eq!(sosfiltfilt(&sos, &[1.5]), vec![1.5]);
        assert!(sosfiltfilt(&sos, &[1.0, 2.0, 3.0]).iter().all(|v| v.is_finite()));
    }
}
