//! Multi-similarity loss over cosine similarities with online pair mining.

use crate::error::{Error, Result};
use crate::numeric::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::Config(format!(
                "alpha and beta must be positive (got {}, {})",
                self.alpha, self.beta
            )));
        }
        if !(self.epsilon >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config("epsilon must be ≥ 0 and lambda finite".into()));
        }
        Ok(())
    }
}

/// Row-major `m × m` cosine similarities plus the rows whose embedding had
/// zero norm (their similarity to every other row is 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub m: usize,
    pub s: Vec<f64>,
    pub zero_norm: Vec<usize>,
}

impl Similarity {
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.s[i * self.m + k]
    }
}

fn norms<T: Scalar>(e: &[T], dim: usize) -> Vec<f64> {
    e.chunks(dim)
        .map(|r| r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
        .collect()
}

pub fn cosine_matrix<T: Scalar>(embeddings: &[T], dim: usize) -> Similarity {
    let m = embeddings.len() / dim;
    let norm = norms(embeddings, dim);
    let mut s = vec![0.0; m * m];
    for i in 0..m {
        s[i * m + i] = 1.0;
        for k in i + 1..m {
            if norm[i] == 0.0 || norm[k] == 0.0 {
                continue;
            }
            let dot: f64 = embeddings[i * dim..(i + 1) * dim]
                .iter()
                .zip(&embeddings[k * dim..(k + 1) * dim])
                .map(|(a, b)| a.as_f64() * b.as_f64())
                .sum();
            let v = (dot / (norm[i] * norm[k])).clamp(-1.0, 1.0);
            s[i * m + k] = v;
            s[k * m + i] = v;
        }
    }
    Similarity {
        m,
        s,
        zero_norm: (0..m).filter(|&i| norm[i] == 0.0).collect(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MinedPairs {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl MinedPairs {
    pub fn is_empty(&self) -> bool {
        self.positives.iter().chain(&self.negatives).all(|v| v.is_empty())
    }
}

/// Hardest-pair margin mining: a negative is kept if it is more similar
/// than the least similar positive minus ε, a positive if it is less
/// similar than the most similar negative plus ε.
pub fn mine<L: PartialEq>(sim: &Similarity, labels: &[L], epsilon: f64) -> MinedPairs {
    let m = sim.m;
    let mut out = MinedPairs {
        positives: vec![Vec::new(); m],
        negatives: vec![Vec::new(); m],
    };
    for i in 0..m {
        let mut min_pos = f64::INFINITY;
        let mut max_neg = f64::NEG_INFINITY;
        for k in (0..m).filter(|&k| k != i) {
            let s = sim.get(i, k);
            if labels[k] == labels[i] {
                min_pos = min_pos.min(s);
            } else {
                max_neg = max_neg.max(s);
            }
        }
        for k in (0..m).filter(|&k| k != i) {
            let s = sim.get(i, k);
            if labels[k] == labels[i] {
                if s < max_neg + epsilon {
                    out.positives[i].push(k);
                }
            } else if s > min_pos - epsilon {
                out.negatives[i].push(k);
            }
        }
    }
    out
}

/// `log(1 + Σ exp(z))` without overflow, plus the softmax-style weights
/// `exp(z_j) / (1 + Σ exp(z))`.
fn log1p_sum_exp(z: &[f64]) -> (f64, Vec<f64>) {
    if z.is_empty() {
        return (0.0, Vec::new());
    }
    let shift = z.iter().copied().fold(0.0f64, f64::max);
    let terms: Vec<f64> = z.iter().map(|v| (v - shift).exp()).collect();
    let denom = (-shift).exp() + terms.iter().sum::<f64>();
    (shift + denom.ln(), terms.iter().map(|t| t / denom).collect())
}

/// Per-anchor loss terms and `dL/dS_ik` for every mined pair.
fn terms(sim: &Similarity, mined: &MinedPairs, cfg: &LossConfig) -> (f64, Vec<(usize, usize, f64)>) {
    let m = sim.m as f64;
    let mut total = 0.0;
    let mut ds = Vec::new();
    for i in 0..sim.m {
        let pos = &mined.positives[i];
        let neg = &mined.negatives[i];
        let zp: Vec<f64> = pos.iter().map(|&k| -cfg.alpha * (sim.get(i, k) - cfg.lambda)).collect();
        let zn: Vec<f64> = neg.iter().map(|&k| cfg.beta * (sim.get(i, k) - cfg.lambda)).collect();
        let (lp, wp) = log1p_sum_exp(&zp);
        let (ln, wn) = log1p_sum_exp(&zn);
        total += lp / cfg.alpha + ln / cfg.beta;
        ds.extend(pos.iter().zip(wp).map(|(&k, w)| (i, k, -w / m)));
        ds.extend(neg.iter().zip(wn).map(|(&k, w)| (i, k, w / m)));
    }
    (total / m, ds)
}

pub fn loss(sim: &Similarity, mined: &MinedPairs, cfg: &LossConfig) -> f64 {
    if sim.m == 0 {
        return 0.0;
    }
    terms(sim, mined, cfg).0
}

/// Loss and its gradient with respect to the embeddings (mining held
/// fixed). Each `S_ik` depends on both `e_i` and `e_k`.
pub fn loss_grad<T: Scalar>(
    sim: &Similarity,
    mined: &MinedPairs,
    cfg: &LossConfig,
    embeddings: &[T],
    dim: usize,
) -> (f64, Vec<T>) {
    if sim.m == 0 {
        return (0.0, Vec::new());
    }
    let (l, ds) = terms(sim, mined, cfg);
    let e: Vec<f64> = embeddings.iter().map(|v| v.as_f64()).collect();
    let norm = norms(embeddings, dim);
    let mut g = vec![0.0; e.len()];
    for (i, k, d) in ds {
        if norm[i] == 0.0 || norm[k] == 0.0 || d == 0.0 {
            continue;
        }
        let s = sim.get(i, k);
        let inv = 1.0 / (norm[i] * norm[k]);
        for j in 0..dim {
            let (ei, ek) = (e[i * dim + j], e[k * dim + j]);
            g[i * dim + j] += d * (ek * inv - s * ei / (norm[i] * norm[i]));
            g[k * dim + j] += d * (ei * inv - s * ek / (norm[k] * norm[k]));
        }
    }
    (l, g.into_iter().map(T::of).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LossConfig {
        LossConfig {
            alpha: 2.0,
            beta: 50.0,
            lambda: 0.5,
            epsilon: 0.1,
        }
    }

    fn sim_from(m: usize, s: Vec<f64>) -> Similarity {
        Similarity { m, s, zero_norm: vec![] }
    }

    #[test]
    fn cosine_basics() {
        let s = cosine_matrix(&[1.0f64, 2.0, 1.0, 2.0], 2);
        assert!(s.s.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let s = cosine_matrix(&[1.0f64, 0.0, 0.0, 3.0, 0.0, 0.0], 2);
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.zero_norm, vec![2]);
        assert_eq!(s.get(2, 0), 0.0);
        assert_eq!(s.get(2, 2), 1.0);
    }

    #[test]
    fn separated_scores_mine_nothing_at_zero_margin() {
        // labels a a b b; positives 0.9, negatives 0.1
        let s = vec![
            1.0, 0.9, 0.1, 0.1, //
            0.9, 1.0, 0.1, 0.1, //
            0.1, 0.1, 1.0, 0.9, //
            0.1, 0.1, 0.9, 1.0,
        ];
        let sim = sim_from(4, s);
        let labels = ["a", "a", "b", "b"];
        assert!(mine(&sim, &labels, 0.0).is_empty());
        let all = mine(&sim, &labels, 0.9);
        assert_eq!(all.positives[0], vec![1]);
        assert_eq!(all.negatives[0], vec![2, 3]);
        assert_eq!(loss(&sim, &mine(&sim, &labels, 0.0), &cfg()), 0.0);
    }

    #[test]
    fn anchor_without_negatives_mines_nothing() {
        let sim = sim_from(3, vec![1.0, 0.2, 0.3, 0.2, 1.0, 0.4, 0.3, 0.4, 1.0]);
        let mined = mine(&sim, &[1, 1, 1], 0.5);
        assert!(mined.is_empty());
    }

    #[test]
    fn similarities_at_lambda_give_log_counts() {
        let sim = sim_from(3, vec![1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0]);
        let mined = mine(&sim, &[0, 0, 1], 0.1);
        let c = cfg();
        let expected: f64 = (0..3)
            .map(|i| {
                (1.0 + mined.positives[i].len() as f64).ln() / c.alpha
                    + (1.0 + mined.negatives[i].len() as f64).ln() / c.beta
            })
            .sum::<f64>()
            / 3.0;
        assert!((loss(&sim, &mined, &c) - expected).abs() < 1e-15);
    }

    #[test]
    fn extreme_exponents_stay_finite() {
        let sim = sim_from(2, vec![1.0, -1.0, -1.0, 1.0]);
        let mined = MinedPairs {
            positives: vec![vec![1], vec![0]],
            negatives: vec![vec![], vec![]],
        };
        let c = LossConfig {
            alpha: 100.0,
            beta: 100.0,
            lambda: 1.0,
            epsilon: 0.0,
        };
        let l = loss(&sim, &mined, &c);
        assert!(l.is_finite());
        // ≈ (1/α)·α·2 = 2
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_pairs_means_zero_gradient() {
        let e = [1.0f64, 0.0, 0.0, 1.0];
        let sim = cosine_matrix(&e, 2);
        let (l, g) = loss_grad(&sim, &MinedPairs { positives: vec![vec![]; 2], negatives: vec![vec![]; 2] }, &cfg(), &e, 2);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }
}
