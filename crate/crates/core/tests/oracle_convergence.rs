//! The discrete re-optimization gain approaches the continuum gain once the
//! reallocation moves workers by more than the sample spacing.

use helmsort::{oracle, validation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mean_coefficient(m: usize, ts: &[f64]) -> (f64, f64) {
    let tech = validation::mixed_tech();
    let reference = oracle::uniform_disk_density(64).unwrap();
    let mut sum = 0.0;
    let mut analytic = 0.0;
    for k in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(7 + k);
        let sample = oracle::uniform_disk(&mut rng, m);
        let rep = oracle::second_order_gain_check(&sample, tech.sigma(), tech.dsigma(), ts, &reference).unwrap();
        assert!(rep.gain.iter().all(|g| *g >= -1e-9));
        assert!(rep.max_duality_gap <= 1e-9);
        sum += rep.coefficient;
        analytic = rep.analytic;
    }
    (sum / 2.0, analytic)
}

#[test]
fn gain_coefficient_grows_toward_analytic_value() {
    let ts = [0.3, 0.5];
    let (small, analytic) = mean_coefficient(400, &ts);
    let (large, _) = mean_coefficient(1000, &ts);
    assert!((analytic - 1.0 / 16.0).abs() < 2e-3);
    assert!(small < large && large < analytic, "{small} {large} {analytic}");
    assert!((large - analytic).abs() <= 0.15 * analytic, "{large} vs {analytic}");
}

#[test]
fn small_steps_on_small_samples_keep_the_initial_matching() {
    let (c, _) = mean_coefficient(400, &validation::GAIN_TS);
    assert_eq!(c, 0.0);
}
