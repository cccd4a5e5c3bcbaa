use eyeauth::hpo::{
    history_header, history_row, run_search, ucb_suggest, Gp, Kernel, Point, SearchConfig, SearchResult, SearchSpace,
    Strategy, DEFAULT_KAPPA, DIMS, NOISE_VARIANCE,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OPT: Point = [0.3, 0.65, 0.45, 0.7, 0.25, 0.55];
const FIXED: Point = [-2.12, -3.17, 6.75, 60.51, 0.87, 0.01];

fn bowl(space: &SearchSpace, p: &Point) -> f64 {
    let u = space.to_unit(p);
    (0..DIMS).map(|i| (u[i] - OPT[i]).powi(2)).sum()
}

fn bowl_search(seed: u64) -> SearchResult {
    let space = SearchSpace::default();
    let cfg = SearchConfig {
        space,
        fixed: FIXED,
        budget: 31,
        kappa: DEFAULT_KAPPA,
        seed,
    };
    run_search(&cfg, |p| Ok(vec![bowl(&space, p); 4]), |_| {}).unwrap()
}

#[test]
fn bowl_optimum_within_five_percent() {
    let space = SearchSpace::default();
    for seed in 0..4 {
        let r = bowl_search(seed);
        assert_eq!(r.history.len(), 31);
        assert!(r.history.iter().all(|o| space.contains(&o.point)));
        let strategies: Vec<Strategy> = r.history.iter().map(|o| o.strategy).collect();
        assert_eq!(strategies[0], Strategy::Fixed);
        assert!(strategies[1..6].iter().all(|s| *s == Strategy::Random));
        assert!(strategies[6..].iter().all(|s| *s == Strategy::Ucb));
        // RMS coordinate error in unit-box coordinates.
        let rms = (bowl(&space, &r.best.point) / DIMS as f64).sqrt();
        assert!(rms <= 0.05, "seed {seed}: rms {rms}");
        let min = r.history.iter().map(|o| o.valuation).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best.valuation, min);
    }
}

#[test]
fn search_is_reproducible() {
    let a = bowl_search(11);
    let b = bowl_search(11);
    assert_eq!(a.history, b.history);
    let text = |r: &SearchResult| r.history.iter().map(|o| history_row(o, 4)).collect::<String>();
    assert_eq!(text(&a), text(&b));
    // The random probes do not depend on the objective.
    let space = SearchSpace::default();
    let cfg = SearchConfig {
        space,
        fixed: FIXED,
        budget: 6,
        kappa: DEFAULT_KAPPA,
        seed: 11,
    };
    let other = run_search(&cfg, |p| Ok(vec![p[2]; 4]), |_| {}).unwrap();
    for i in 1..6 {
        assert_eq!(other.history[i].point, a.history[i].point);
    }
}

#[test]
fn history_format() {
    let r = bowl_search(2);
    assert_eq!(
        history_header(4),
        "iteration,strategy,log10_lr,log10_wd,alpha,beta,lambda,epsilon,eer_fold1,eer_fold2,eer_fold3,eer_fold4,valuation\n"
    );
    let row = history_row(&r.history[0], 4);
    let fields: Vec<&str> = row.trim_end().split(',').collect();
    assert_eq!(fields.len(), 13);
    assert_eq!(fields[0], "1");
    assert_eq!(fields[1], "fixed");
    assert_eq!(fields[2].parse::<f64>().unwrap(), -2.12);
}

#[test]
fn posterior_interpolates_observations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<Point> = (0..8).map(|_| std::array::from_fn(|_| rand::Rng::gen::<f64>(&mut rng))).collect();
    let y: Vec<f64> = x.iter().map(|p| p.iter().map(|v| v.sin()).sum()).collect();
    let gp = Gp::fit(x.clone(), &y).unwrap();
    for (p, v) in x.iter().zip(&y) {
        let (m, s) = gp.predict(p);
        assert!((m - v).abs() < 1e-3 * (1.0 + v.abs()), "{m} vs {v}");
        assert!(s < 1e-2);
    }

    let single = Gp::new(Kernel::default(), vec![[0.5; DIMS]], &[0.37]).unwrap();
    let (m, _) = single.predict(&[0.5; DIMS]);
    assert!((m - 0.37).abs() < 1e-8);
}

#[test]
fn posterior_sd_decays_to_prior() {
    // One observation at the origin: var(p) = s² − k(p)² / (s² + noise),
    // scaled by the target scale, which is 1 for a single point.
    let kernel = Kernel {
        length: [0.2; DIMS],
        signal_var: 2.0,
        noise_var: NOISE_VARIANCE,
    };
    let gp = Gp::new(kernel, vec![[0.0; DIMS]], &[1.0]).unwrap();
    for d in [0.05, 0.2, 0.5, 1.0] {
        let mut p = [0.0; DIMS];
        p[0] = d;
        let r = d / 0.2;
        let s5 = 5f64.sqrt() * r;
        let k = 2.0 * (1.0 + s5 + s5 * s5 / 3.0) * (-s5).exp();
        let expected = (2.0 - k * k / (2.0 + NOISE_VARIANCE)).sqrt();
        let (_, sd) = gp.predict(&p);
        assert!((sd - expected).abs() < 1e-9, "d {d}: {sd} vs {expected}");
    }
    let (_, far) = gp.predict(&[1.0; DIMS]);
    assert!((far - 2f64.sqrt()).abs() < 1e-6);
}

#[test]
fn ucb_suggestion_inside_unit_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<Point> = (0..10).map(|_| std::array::from_fn(|_| rand::Rng::gen::<f64>(&mut rng))).collect();
    let y: Vec<f64> = x.iter().map(|p| p.iter().sum()).collect();
    let gp = Gp::fit(x, &y).unwrap();
    for kappa in [0.0, 1.0, DEFAULT_KAPPA, 10.0] {
        let p = ucb_suggest(&gp, kappa, &mut rng);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    // Pure exploitation on an increasing trend heads for the low corner.
    let p = ucb_suggest(&gp, 0.0, &mut rng);
    assert!(p.iter().sum::<f64>() < 1.5, "{p:?}");
}
