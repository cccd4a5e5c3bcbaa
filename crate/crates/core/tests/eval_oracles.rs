mod common;

use common::{sweep, sweep_eer, sweep_frr_at_far};
use eyeauth::eval::{
    eer, fit_moments, frr_at_far, resample_scores, roc, similarity, Moments, PairScores, RecordingEmbedding,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn fixture_curve_matches_sweep_pointwise() {
    let g = [0.9, 0.8, 0.7, 0.6, 0.2];
    let i = [0.5, 0.4, 0.3, 0.25, 0.1];
    let c = roc(&g, &i).unwrap();
    let pts = sweep(&g, &i);
    assert_eq!(c.far.len(), pts.len());
    for (k, (t, far, frr)) in pts.into_iter().enumerate() {
        assert_eq!(c.thresholds[k], t);
        assert_eq!(c.far[k], far);
        assert_eq!(c.frr[k], frr);
    }
    assert!((eer(&c) - sweep_eer(&g, &i)).abs() < 1e-9);
}

#[test]
fn resampled_frr_at_far_matches_sweep() {
    let scores = PairScores {
        genuine: (0..300).map(|k| 0.6 + 0.3 * ((k as f64) * 0.37).sin()).collect(),
        impostor: (0..900).map(|k| 0.1 + 0.25 * ((k as f64) * 0.71).cos().powi(3)).collect(),
    };
    let (r, resampled) = resample_scores(&scores, 42);
    assert!(resampled);
    assert_eq!((r.genuine.len(), r.impostor.len()), (20_000, 20_000));
    let c = roc(&r.genuine, &r.impostor).unwrap();
    // Sorted counting keeps the sweep exhaustive but affordable at 40k scores.
    let mut g = r.genuine.clone();
    let mut im = r.impostor.clone();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    for target in [1e-1, 1e-2, 1e-3, 1e-4] {
        let mut ts: Vec<f64> = g.iter().chain(&im).copied().collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts.insert(0, f64::NEG_INFINITY);
        ts.push(f64::INFINITY);
        let want = ts
            .iter()
            .find(|&&t| (im.len() - im.partition_point(|s| *s < t)) as f64 / im.len() as f64 <= target)
            .map(|&t| g.partition_point(|s| *s < t) as f64 / g.len() as f64)
            .unwrap();
        assert_eq!(frr_at_far(&c, target), want);
    }
    let (again, _) = resample_scores(&scores, 42);
    assert_eq!(again, r);
}

#[test]
fn normal_limit_sample_within_monte_carlo_bounds() {
    let fit = fit_moments(Moments {
        mean: 0.25,
        variance: 0.04,
        skewness: 0.0,
        kurtosis: 3.0,
    })
    .unwrap();
    assert_eq!(fit.type_number(), 0);
    let n = 20_000;
    let xs = fit.sample(n, &mut ChaCha8Rng::seed_from_u64(8));
    let m = Moments::of(&xs).unwrap();
    let se_mean = (0.04 / n as f64).sqrt();
    let se_var = 0.04 * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((m.mean - 0.25).abs() < 3.0 * se_mean);
    assert!((m.variance - 0.04).abs() < 3.0 * se_var);
}

fn embedding(id: &str, w: Vec<f32>) -> RecordingEmbedding {
    RecordingEmbedding {
        subject_id: id.into(),
        round: 1,
        session: 1,
        dim: 3,
        windows: w,
    }
}

proptest! {
    #[test]
    fn similarity_symmetric(a in prop::collection::vec(-5.0f32..5.0, 12), b in prop::collection::vec(-5.0f32..5.0, 12), n in 1usize..=4) {
        let (x, y) = (embedding("a", a), embedding("b", b));
        let s = similarity(&x, &y, n).unwrap();
        prop_assert!((s - similarity(&y, &x, n).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn roc_monotone_and_matches_sweep(
        g in prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 20.0), 1..40),
        i in prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 20.0), 1..40),
    ) {
        let c = roc(&g, &i).unwrap();
        for w in c.far.windows(2) { prop_assert!(w[1] <= w[0]); }
        for w in c.frr.windows(2) { prop_assert!(w[1] >= w[0]); }
        prop_assert!((eer(&c) - sweep_eer(&g, &i)).abs() < 1e-9);
        for t in [1e-1, 1e-2] {
            prop_assert_eq!(frr_at_far(&c, t), sweep_frr_at_far(&g, &i, t));
        }
    }
}
