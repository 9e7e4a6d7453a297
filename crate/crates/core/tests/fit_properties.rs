use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use telewalk::hwr::{fit_step_timing, SwingTimingEstimator, DEFAULT_DAMPING};

const DT: f64 = 1e-3;
/// Gauss-Newton stops once a step is shorter than this.
const SOLVER_TOL: f64 = 1e-8;

/// Lift-off-to-touchdown height profile with apex `z_cl` at half period.
fn swing_height(t: f64, period: f64, z_cl: f64) -> f64 {
    z_cl * (std::f64::consts::PI * t / period).sin().powi(2)
}

fn samples_until(period: f64, z_cl: f64, s_end: f64) -> Vec<(f64, f64)> {
    let n = (s_end * period / DT).round() as usize;
    (1..=n).map(|k| k as f64 * DT).map(|t| (t, swing_height(t, period, z_cl))).collect()
}

#[test]
fn noisy_half_swing_recovers_period_in_most_trials() {
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let period = rng.gen_range(0.3..0.5);
        let z_cl = rng.gen_range(0.04..0.08);
        let noise = Normal::new(0.0, 0.01 * z_cl).unwrap();
        let samples: Vec<_> =
            samples_until(period, z_cl, 0.5).into_iter().map(|(t, z)| (t, z + noise.sample(&mut rng))).collect();
        if let Ok(fit) = fit_step_timing(&samples, 0.0, DEFAULT_DAMPING, (0.4, 0.1)) {
            if (fit.t_ssp_est - period).abs() <= 0.05 * period {
                hits += 1;
            }
        }
    }
    assert!(hits >= 95, "{hits}/100 trials within 5%");
}

#[test]
fn noiseless_fit_error_does_not_grow_with_data() {
    for &(period, z_cl, init) in &[(0.4, 0.06, (0.5, 0.1)), (0.35, 0.05, (0.3, 0.08)), (0.5, 0.08, (0.4, 0.05))] {
        let all = samples_until(period, z_cl, 0.5);
        let mut prev = f64::INFINITY;
        for end in (2 * all.len() / 5..=all.len()).step_by(5) {
            let fit = fit_step_timing(&all[..end], 0.0, DEFAULT_DAMPING, init).unwrap();
            let err = (fit.t_ssp_est - period).abs();
            assert!(err <= prev + SOLVER_TOL, "T = {period}: error {err} after {end} samples exceeds {prev}");
            prev = err;
        }
        assert!(prev < 1e-6);
    }
}

#[test]
fn streaming_estimate_approaches_truth_monotonically() {
    for &(period, z_cl, prior) in &[(0.4, 0.06, 0.5), (0.45, 0.05, 0.3), (0.32, 0.07, 0.4)] {
        let mut est = SwingTimingEstimator::new(DEFAULT_DAMPING, 0.05, prior, 0.1);
        est.begin(prior, 0.0);
        let mut prev = (prior - period).abs();
        for (t, z) in samples_until(period, z_cl, 0.5) {
            let err = (est.push(t, z) - period).abs();
            assert!(err <= prev + 1e-9, "T = {period}: error rose to {err} at t = {t}");
            prev = err;
        }
        assert!(prev < 1e-6, "final error {prev}");
        assert!((est.z_cl().unwrap() - z_cl).abs() < 1e-6);
    }
}
