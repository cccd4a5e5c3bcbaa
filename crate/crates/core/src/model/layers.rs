//! Batched kernels. Tensors are contiguous `batch × channels × length`.

use rayon::prelude::*;

use crate::numeric::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * *xv;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub lin: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvShape {
    pub fn lout(&self) -> usize {
        self.lin - (self.kernel - 1) * self.dilation
    }
}

/// Valid (unpadded) dilated convolution. `w` is `cout × cin × kernel`.
pub fn conv_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], s: ConvShape) -> Vec<T> {
    let lout = s.lout();
    let mut out = vec![T::zero(); s.batch * s.cout * lout];
    out.par_chunks_mut(s.cout * lout)
        .zip(x.par_chunks(s.cin * s.lin))
        .for_each(|(ob, xb)| {
            for o in 0..s.cout {
                let row = &mut ob[o * lout..(o + 1) * lout];
                row.iter_mut().for_each(|v| *v = b[o]);
                for i in 0..s.cin {
                    let xr = &xb[i * s.lin..(i + 1) * s.lin];
                    for k in 0..s.kernel {
                        let off = k * s.dilation;
                        axpy(w[(o * s.cin + i) * s.kernel + k], &xr[off..off + lout], row);
                    }
                }
            }
        });
    out
}

/// Returns (dx, dw, db) for upstream gradient `dz`.
pub fn conv_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dz: &[T],
    s: ConvShape,
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let lout = s.lout();
    let wlen = s.cout * s.cin * s.kernel;
    let per_sample: Vec<(Vec<T>, Vec<T>, Vec<T>)> = x
        .par_chunks(s.cin * s.lin)
        .zip(dz.par_chunks(s.cout * lout))
        .map(|(xb, dzb)| {
            let mut dw = vec![T::zero(); wlen];
            let mut db = vec![T::zero(); s.cout];
            let mut dx = if need_dx {
                vec![T::zero(); s.cin * s.lin]
            } else {
                Vec::new()
            };
            for o in 0..s.cout {
                let dr = &dzb[o * lout..(o + 1) * lout];
                db[o] = dr.iter().copied().sum();
                for i in 0..s.cin {
                    let xr = &xb[i * s.lin..(i + 1) * s.lin];
                    for k in 0..s.kernel {
                        let off = k * s.dilation;
                        let wi = (o * s.cin + i) * s.kernel + k;
                        dw[wi] = dot(dr, &xr[off..off + lout]);
                        if need_dx {
                            axpy(w[wi], dr, &mut dx[i * s.lin + off..i * s.lin + off + lout]);
                        }
                    }
                }
            }
            (dx, dw, db)
        })
        .collect();

    let mut dw = vec![T::zero(); wlen];
    let mut db = vec![T::zero(); s.cout];
    let mut dx = Vec::with_capacity(if need_dx { x.len() } else { 0 });
    for (sdx, sdw, sdb) in per_sample {
        dw.iter_mut().zip(&sdw).for_each(|(a, b)| *a = *a + *b);
        db.iter_mut().zip(&sdb).for_each(|(a, b)| *a = *a + *b);
        dx.extend(sdx);
    }
    (dx, dw, db)
}

pub fn relu_inplace<T: Scalar>(v: &mut [T]) {
    v.iter_mut().for_each(|x| {
        if !(*x > T::zero()) {
            *x = T::zero();
        }
    });
}

/// Batch statistics of one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BnBatchStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// Unbiased variance, used for the running estimate.
    pub var_unbiased: Vec<T>,
}

/// Train-mode batch norm over (batch, length) per channel.
pub fn bn_train<T: Scalar>(
    a: &[T],
    gamma: &[T],
    beta: &[T],
    batch: usize,
    channels: usize,
    len: usize,
) -> (Vec<T>, BnBatchStats<T>) {
    let n = (batch * len) as f64;
    let mut mean = vec![T::zero(); channels];
    let mut inv_std = vec![T::zero(); channels];
    let mut var_unbiased = vec![T::zero(); channels];
    for c in 0..channels {
        let rows = (0..batch).map(|b| &a[(b * channels + c) * len..(b * channels + c + 1) * len]);
        let m = rows.clone().flatten().map(|v| v.as_f64()).sum::<f64>() / n;
        let var = rows
            .flatten()
            .map(|v| {
                let d = v.as_f64() - m;
                d * d
            })
            .sum::<f64>()
            / n;
        mean[c] = T::of(m);
        inv_std[c] = T::of(1.0 / (var + BN_EPS).sqrt());
        var_unbiased[c] = T::of(if n > 1.0 { var * n / (n - 1.0) } else { var });
    }
    let mut y = vec![T::zero(); a.len()];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * len;
            let (m, is, g, bt) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for (yv, av) in y[base..base + len].iter_mut().zip(&a[base..base + len]) {
                *yv = g * ((*av - m) * is) + bt;
            }
        }
    }
    (
        y,
        BnBatchStats {
            mean,
            inv_std,
            var_unbiased,
        },
    )
}

/// Eval-mode batch norm using running statistics.
pub fn bn_eval<T: Scalar>(
    a: &mut [T],
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    channels: usize,
    len: usize,
) {
    let eps = T::of(BN_EPS);
    for (i, row) in a.chunks_mut(len).enumerate() {
        let c = i % channels;
        let scale = gamma[c] / (running_var[c] + eps).sqrt();
        let shift = beta[c] - running_mean[c] * scale;
        row.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
}

/// Gradient through train-mode batch norm. Returns (da, dgamma, dbeta).
pub fn bn_backward<T: Scalar>(
    a: &[T],
    dy: &[T],
    gamma: &[T],
    stats: &BnBatchStats<T>,
    batch: usize,
    channels: usize,
    len: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::of((batch * len) as f64);
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    let mut da = vec![T::zero(); a.len()];
    for c in 0..channels {
        let (m, is) = (stats.mean[c], stats.inv_std[c]);
        // Σ dy and Σ dy·x̂ over the channel
        let (mut s_dy, mut s_dyx) = (0f64, 0f64);
        for b in 0..batch {
            let base = (b * channels + c) * len;
            for (av, dv) in a[base..base + len].iter().zip(&dy[base..base + len]) {
                let xh = (*av - m) * is;
                s_dy += dv.as_f64();
                s_dyx += (*dv * xh).as_f64();
            }
        }
        dgamma[c] = T::of(s_dyx);
        dbeta[c] = T::of(s_dy);
        // dx̂ = γ·dy, so the sums scale by γ
        let g = gamma[c];
        let sum_dxh = g * T::of(s_dy);
        let sum_dxh_xh = g * T::of(s_dyx);
        for b in 0..batch {
            let base = (b * channels + c) * len;
            for ((dav, av), dv) in da[base..base + len]
                .iter_mut()
                .zip(&a[base..base + len])
                .zip(&dy[base..base + len])
            {
                let xh = (*av - m) * is;
                *dav = is / n * (n * g * *dv - sum_dxh - xh * sum_dxh_xh);
            }
        }
    }
    (da, dgamma, dbeta)
}

/// `y = W·x + b` for each row of `x`; `w` is `out × in`.
pub fn fc_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], batch: usize, fin: usize, fout: usize) -> Vec<T> {
    let mut y = vec![T::zero(); batch * fout];
    y.par_chunks_mut(fout)
        .zip(x.par_chunks(fin))
        .for_each(|(yr, xr)| {
            for (o, yv) in yr.iter_mut().enumerate() {
                *yv = b[o] + dot(&w[o * fin..(o + 1) * fin], xr);
            }
        });
    debug_assert_eq!(y.len(), batch * fout);
    y
}

/// Returns (dx, dw, db).
pub fn fc_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    batch: usize,
    fin: usize,
    fout: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); fout * fin];
    let mut db = vec![T::zero(); fout];
    let mut dx = vec![T::zero(); batch * fin];
    for bi in 0..batch {
        let xr = &x[bi * fin..(bi + 1) * fin];
        let dyr = &dy[bi * fout..(bi + 1) * fout];
        let dxr = &mut dx[bi * fin..(bi + 1) * fin];
        for o in 0..fout {
            let g = dyr[o];
            db[o] = db[o] + g;
            if g != T::zero() {
                axpy(g, xr, &mut dw[o * fin..(o + 1) * fin]);
                axpy(g, &w[o * fin..(o + 1) * fin], dxr);
            }
        }
    }
    (dx, dw, db)
}
