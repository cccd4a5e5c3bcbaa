mod common;

use common::brute_loss;
use eyeauth::msloss::{cosine_matrix, loss, loss_grad, mine, LossConfig, MinedPairs};
use proptest::prelude::*;

#[test]
fn explicit_four_by_four() {
    let s = [
        [1.0, 0.8, 0.3, -0.2],
        [0.8, 1.0, 0.6, 0.1],
        [0.3, 0.6, 1.0, 0.7],
        [-0.2, 0.1, 0.7, 1.0],
    ];
    let sim = eyeauth::msloss::Similarity {
        m: 4,
        s: s.iter().flatten().copied().collect(),
        zero_norm: vec![],
    };
    let c = LossConfig {
        alpha: 2.0,
        beta: 50.0,
        lambda: 0.5,
        epsilon: 0.1,
    };
    let mined = mine(&sim, &[0, 0, 1, 1], c.epsilon);
    let expected = brute_loss(&|i, k| s[i][k], &mined, &c);
    assert!((loss(&sim, &mined, &c) - expected).abs() < 1e-12);
}

#[test]
fn dot_product_oracle() {
    let e: Vec<f64> = (0..32).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
    let sim = cosine_matrix(&e, 8);
    for i in 0..4 {
        for k in 0..4 {
            let (a, b) = (&e[i * 8..i * 8 + 8], &e[k * 8..k * 8 + 8]);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((sim.get(i, k) - dot / (na * nb)).abs() < 1e-6);
        }
    }
}

#[test]
fn single_negative_gradient_step_lowers_similarity() {
    let e = vec![1.0f64, 0.2, 0.3, 0.9, 1.0];
    let sim = cosine_matrix(&e[..4], 2);
    let mined = MinedPairs {
        positives: vec![vec![], vec![]],
        negatives: vec![vec![1], vec![]],
    };
    let c = LossConfig {
        alpha: 2.0,
        beta: 10.0,
        lambda: 0.5,
        epsilon: 0.0,
    };
    let (_, g) = loss_grad(&sim, &mined, &c, &e[..4], 2);
    let stepped: Vec<f64> = e[..4].iter().zip(&g).map(|(v, d)| v - 0.01 * d).collect();
    assert!(cosine_matrix(&stepped, 2).get(0, 1) < sim.get(0, 1));
}

fn batch() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<u8>, LossConfig)> {
    (3usize..=12, 2usize..=8).prop_flat_map(|(m, d)| {
        (
            Just(m),
            Just(d),
            prop::collection::vec(-1.0f64..1.0, m * d),
            prop::collection::vec(0u8..3, m),
            (1.0f64..100.0, 1.0f64..100.0, 0.0f64..1.0, 0.0f64..0.5).prop_map(|(alpha, beta, lambda, epsilon)| {
                LossConfig {
                    alpha,
                    beta,
                    lambda,
                    epsilon,
                }
            }),
        )
    })
}

proptest! {
    #[test]
    fn matches_brute_force((m, d, e, labels, c) in batch()) {
        let sim = cosine_matrix(&e, d);
        let mined = mine(&sim, &labels, c.epsilon);
        for i in 0..m {
            prop_assert!(!mined.positives[i].contains(&i));
            for &k in &mined.positives[i] { prop_assert_eq!(labels[k], labels[i]); }
            for &k in &mined.negatives[i] { prop_assert_ne!(labels[k], labels[i]); }
        }
        let got = loss(&sim, &mined, &c);
        let want = brute_loss(&|i, k| sim.get(i, k), &mined, &c);
        prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-300), "{} vs {}", got, want);
    }

    #[test]
    fn gradient_matches_finite_differences((_m, d, e, labels, c) in batch()) {
        let c = LossConfig { alpha: c.alpha.min(10.0), beta: c.beta.min(10.0), ..c };
        let sim = cosine_matrix(&e, d);
        let mined = mine(&sim, &labels, c.epsilon);
        let (_, g) = loss_grad(&sim, &mined, &c, &e, d);
        let h = 1e-6;
        for j in 0..e.len() {
            let mut up = e.clone();
            up[j] += h;
            let mut down = e.clone();
            down[j] -= h;
            let fd = (loss(&cosine_matrix(&up, d), &mined, &c) - loss(&cosine_matrix(&down, d), &mined, &c)) / (2.0 * h);
            let scale = fd.abs().max(g[j].abs()).max(1e-4);
            prop_assert!((fd - g[j]).abs() / scale < 1e-5, "coord {}: fd {} vs {}", j, fd, g[j]);
        }
    }

    #[test]
    fn scale_invariance((m, d, e, labels, c) in batch(), scales in prop::collection::vec(0.1f64..10.0, 12)) {
        let scaled: Vec<f64> = e.iter().enumerate().map(|(j, v)| v * scales[j / d % m % 12]).collect();
        let (a, b) = (cosine_matrix(&e, d), cosine_matrix(&scaled, d));
        for (x, y) in a.s.iter().zip(&b.s) { prop_assert!((x - y).abs() < 1e-6); }
        let (ma, mb) = (mine(&a, &labels, c.epsilon), mine(&b, &labels, c.epsilon));
        let (la, lb) = (loss(&a, &ma, &c), loss(&b, &mb, &c));
        prop_assert!((la - lb).abs() <= 1e-6 * la.abs().max(1.0));
    }

    #[test]
    fn monotone_in_mined_similarities((m, d, e, labels, c) in batch(), which in any::<prop::sample::Index>(), bump in 0.0f64..0.2) {
        let sim = cosine_matrix(&e, d);
        let mined = mine(&sim, &labels, c.epsilon);
        let pairs: Vec<(usize, usize, bool)> = (0..m)
            .flat_map(|i| {
                mined.positives[i].iter().map(move |&k| (i, k, true))
                    .chain(mined.negatives[i].iter().map(move |&k| (i, k, false)))
            })
            .collect();
        prop_assume!(!pairs.is_empty());
        let (i, k, positive) = pairs[which.index(pairs.len())];
        let mut raised = sim.clone();
        raised.s[i * m + k] += bump;
        let (before, after) = (loss(&sim, &mined, &c), loss(&raised, &mined, &c));
        if positive { prop_assert!(after <= before + 1e-12); } else { prop_assert!(after >= before - 1e-12); }
    }

    #[test]
    fn permutation_leaves_loss_unchanged((m, d, e, labels, c) in batch(), rot in 0usize..12) {
        let r = rot % m;
        let perm: Vec<usize> = (0..m).map(|i| (i + r) % m).collect();
        let pe: Vec<f64> = perm.iter().flat_map(|&i| e[i * d..(i + 1) * d].to_vec()).collect();
        let pl: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        let (a, b) = (cosine_matrix(&e, d), cosine_matrix(&pe, d));
        let la = loss(&a, &mine(&a, &labels, c.epsilon), &c);
        let lb = loss(&b, &mine(&b, &pl, c.epsilon), &c);
        prop_assert!((la - lb).abs() <= 1e-12 * la.abs().max(1.0));
    }
}
