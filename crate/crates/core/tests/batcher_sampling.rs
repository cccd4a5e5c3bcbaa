use eyeauth::batcher::random_subsequence;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn starts_are_uniform_within_three_sigma() {
    let (w, n) = (1024, 100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut counts = [0usize; 10];
    for _ in 0..n {
        let s = random_subsequence(w + 9, w, &mut rng).unwrap();
        counts[s - 1] += 1;
    }
    let p = 0.1;
    let mean = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (i, c) in counts.iter().enumerate() {
        assert!((*c as f64 - mean).abs() < 3.0 * sigma, "start {} drawn {c} times", i + 1);
    }
}
