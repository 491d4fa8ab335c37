mod common;

use approx::assert_relative_eq;
use common::{brute_projection, combinations, random_dataset, random_vector};
use nalgebra::{DMatrix, DVector};
use pmbvs::conditionals::{beta_posterior, log_marginal_gamma, residual, GammaTarget, GramCache};
use pmbvs::exec::Execution;
use pmbvs::model::{GammaMask, HyperParams};
use pmbvs::rng::RngHandle;
use pmbvs::sampler::{mh_run, MhStats};

#[test]
fn log_target_matches_brute_force_on_every_mask() {
    let mut rng = RngHandle::new(21, 0);
    let data = random_dataset(&mut rng, 20, 6, Some(2));
    let latent = random_vector(&mut rng, 20, 1.5);
    let u = random_vector(&mut rng, 2, 1.0);
    let hp = HyperParams {
        c: 7.0,
        pi: 0.3,
        d: 2,
        r: 2,
        ..HyperParams::default()
    };
    let r = residual(&data, &latent, &u);
    let masks = combinations(6, 2);
    assert_eq!(masks.len(), 15);
    for cols in &masks {
        let g = GammaMask::from_indices(6, cols).unwrap();
        let brute = brute_projection(&data, cols, &r).unwrap();
        let expected = -(2.0 / 2.0) * 8f64.ln() + 7.0 / 16.0 * brute + 2.0 * (0.3f64 / 0.7).ln();
        let got = log_marginal_gamma(&data, &g, &latent, &u, &hp).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-9);
    }
}

#[test]
fn beta_mean_matches_explicit_inverse() {
    let mut rng = RngHandle::new(22, 0);
    let data = random_dataset(&mut rng, 25, 5, None);
    let latent = random_vector(&mut rng, 25, 1.0);
    let u = DVector::zeros(0);
    let cols = [1, 3, 4];
    let g = GammaMask::from_indices(5, &cols).unwrap();
    let post = beta_posterior(&data, &g, &latent, &u, 50.0).unwrap();
    let xg = DMatrix::from_fn(25, 3, |i, k| data.x()[(i, cols[k])]);
    let inv = (xg.transpose() * &xg).try_inverse().unwrap();
    let mean = (&inv * xg.transpose() * &latent) * (50.0 / 51.0);
    assert_relative_eq!(post.mean, mean, epsilon = 1e-10);
    assert_relative_eq!(post.cov, inv * (50.0 / 51.0), epsilon = 1e-10);
}

#[test]
fn mh_frequencies_match_enumeration_p6() {
    let mut rng = RngHandle::new(23, 0);
    let data = random_dataset(&mut rng, 30, 6, None);
    let latent = random_vector(&mut rng, 30, 1.0);
    let c = 2.0;
    let gram = GramCache::new(&data, Execution::Sequential);
    let target = GammaTarget::new(&data, &gram, &latent, c, Execution::Sequential);
    let masks = combinations(6, 2);
    let logw: Vec<f64> = masks
        .iter()
        .map(|m| target.coefficient() * brute_projection(&data, m, &latent).unwrap())
        .collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();

    let steps = 60_000;
    let mut counts = vec![0usize; masks.len()];
    let mut gamma = GammaMask::from_indices(6, &[0, 1]).unwrap();
    let mut stats = MhStats::default();
    for _ in 0..steps {
        mh_run(&mut rng, &target, &mut gamma, 2, 1, &mut stats).unwrap();
        let idx = masks.iter().position(|m| *m == gamma.indices()).unwrap();
        counts[idx] += 1;
    }
    let tv: f64 = 0.5
        * counts
            .iter()
            .zip(&w)
            .map(|(&n, wi)| (n as f64 / steps as f64 - wi / z).abs())
            .sum::<f64>();
    assert!(tv < 0.03, "total variation {tv}");
    assert!(stats.rate() > 0.0 && stats.rate() < 1.0);
}

/// Tail moments at a sample size where the standard error of the variance
/// is under 0.1%.
#[test]
fn truncated_normal_tail_moments_at_high_precision() {
    use pmbvs::rng::{norm_cdf, norm_pdf, sample_truncated_normal, Truncation};
    let n = 10_000_000;
    for (mu, side) in [
        (-4.0, Truncation::LeftAtZero),
        (-10.0, Truncation::LeftAtZero),
        (3.0, Truncation::RightAtZero),
    ] {
        let (m0, v0) = match side {
            Truncation::LeftAtZero => {
                let lambda = norm_pdf(-mu) / norm_cdf(mu);
                (mu + lambda, 1.0 - mu * lambda - lambda * lambda)
            }
            Truncation::RightAtZero => {
                let ratio = norm_pdf(-mu) / norm_cdf(-mu);
                (mu - ratio, 1.0 + mu * ratio - ratio * ratio)
            }
        };
        let mut rng = RngHandle::new(24, 0);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = sample_truncated_normal(&mut rng, mu, side).unwrap();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(((mean - m0) / m0).abs() < 0.005, "mean {mean} vs {m0} at {mu}");
        assert!(((var - v0) / v0).abs() < 0.005, "variance {var} vs {v0} at {mu}");
    }
}
