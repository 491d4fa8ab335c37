//! Seedable random primitives used by the Gibbs sampler.
//!
//! Every chain owns an [`RngHandle`] built from `(seed, stream_id)`. The
//! handle wraps ChaCha8, whose 64-bit stream selector gives each chain an
//! independent keystream under the same seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Cholesky};

/// Means beyond this magnitude switch the truncated normal away from the
/// inverse-CDF method.
const INVERSE_CDF_LIMIT: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngHandle {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngHandle {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on the half-open interval `(0, 1]`.
    pub fn open_unit(&mut self) -> f64 {
        1.0 - self.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn standard_normal_vector(&mut self, k: usize) -> DVector<f64> {
        DVector::from_iterator(k, (0..k).map(|_| self.standard_normal()))
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Which half-line a unit-variance normal is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// Support `(0, inf)`, used when the response is 1.
    LeftAtZero,
    /// Support `(-inf, 0)`, used when the response is 0.
    RightAtZero,
}

/// Draw from `N(mean, 1)` restricted to the half-line given by `side`.
pub fn sample_truncated_normal(rng: &mut RngHandle, mean: f64, side: Truncation) -> Result<f64> {
    if !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "truncated normal mean must be finite, got {mean}"
        )));
    }
    // Reduce both sides to a standard normal restricted to (lower, inf).
    let (lower, sign) = match side {
        Truncation::LeftAtZero => (-mean, 1.0),
        Truncation::RightAtZero => (mean, -1.0),
    };
    loop {
        let z = standard_tail(rng, lower);
        let x = sign * (sign * mean + z);
        let ok = match side {
            Truncation::LeftAtZero => x > 0.0,
            Truncation::RightAtZero => x < 0.0,
        };
        if ok {
            return Ok(x);
        }
    }
}

/// Standard normal restricted to `(lower, inf)`.
fn standard_tail(rng: &mut RngHandle, lower: f64) -> f64 {
    if lower > INVERSE_CDF_LIMIT {
        // Exponential proposal with the optimal rate for this cut.
        let rate = 0.5 * (lower + (lower * lower + 4.0).sqrt());
        loop {
            let e: f64 = Exp1.sample(rng);
            let z = lower + e / rate;
            let log_accept = -0.5 * (z - rate) * (z - rate);
            if rng.open_unit().ln() <= log_accept {
                return z;
            }
        }
    } else if lower < -INVERSE_CDF_LIMIT {
        // Almost all of the mass is admissible.
        loop {
            let z = rng.standard_normal();
            if z > lower {
                return z;
            }
        }
    } else {
        let upper_mass = norm_cdf(-lower);
        loop {
            let z = -norm_quantile(rng.open_unit() * upper_mass);
            if z > lower && z.is_finite() {
                return z;
            }
        }
    }
}

/// Draw from `N(mean, cov)` as `mean + chol(cov) z`.
pub fn sample_mvn(rng: &mut RngHandle, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(Error::InvalidArgument(format!(
            "covariance is {}x{} but mean has length {}",
            cov.nrows(),
            cov.ncols(),
            mean.len()
        )));
    }
    let chol = Cholesky::new(cov)?;
    let z = rng.standard_normal_vector(mean.len());
    Ok(mean + chol.factor() * z)
}

/// Draw from `N(mean, P^{-1})` given the Cholesky factor of the precision
/// `P = R R'`, scaled by `sqrt(scale)`: `mean + sqrt(scale) R'^{-1} z`.
pub fn sample_mvn_precision(
    rng: &mut RngHandle,
    mean: &DVector<f64>,
    precision: &Cholesky,
    scale: f64,
) -> DVector<f64> {
    let z = rng.standard_normal_vector(mean.len());
    mean + precision.solve_upper(&z) * scale.sqrt()
}

/// Draw from the inverse-Wishart `IW(scale, dof)` with density proportional
/// to `|M|^{-(dof+q+1)/2} exp(-tr(scale M^{-1})/2)`.
///
/// A Wishart(scale^{-1}, dof) matrix is built with the Bartlett
/// decomposition and inverted through triangular solves.
pub fn sample_inverse_wishart(rng: &mut RngHandle, scale: &DMatrix<f64>, dof: f64) -> Result<DMatrix<f64>> {
    let q = scale.nrows();
    if scale.ncols() != q {
        return Err(Error::InvalidArgument(
            "inverse-Wishart scale must be square".into(),
        ));
    }
    if !(dof > q as f64 - 1.0) || !dof.is_finite() {
        return Err(Error::DegreesOfFreedom { dof, dim: q });
    }
    let c = Cholesky::new(scale)?;

    // Bartlett factor: A lower triangular, A_ii^2 ~ chi2(dof - i), A_ij ~ N(0,1).
    let mut a = DMatrix::<f64>::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new(dof - i as f64).map_err(|_| Error::DegreesOfFreedom { dof, dim: q })?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.standard_normal();
        }
    }

    // W = C^{-T} A A' C^{-1}, so W^{-1} = (C A^{-T})(C A^{-T})'.
    // Solve A X = C' for X = A^{-1} C' = (C A^{-T})'.
    let ct = c.factor().transpose();
    let mut x = DMatrix::<f64>::zeros(q, q);
    for col in 0..q {
        for i in 0..q {
            let mut s = ct[(i, col)];
            for k in 0..i {
                s -= a[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = s / a[(i, i)];
        }
    }
    let mut out = x.transpose() * &x;
    symmetrize(&mut out);
    Ok(out)
}

/// Draw `X` with `1/X ~ Gamma(shape, rate = scale)`.
pub fn sample_inverse_gamma(rng: &mut RngHandle, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "inverse-gamma needs positive shape and scale, got ({shape}, {scale})"
        )));
    }
    let gamma =
        Gamma::new(shape, 1.0 / scale).map_err(|e| Error::InvalidArgument(format!("inverse-gamma: {e}")))?;
    loop {
        let g: f64 = gamma.sample(rng);
        if g > 0.0 {
            let x = 1.0 / g;
            if x.is_finite() {
                return Ok(x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn half_normal_mean() {
        let mut rng = RngHandle::new(11, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(&mut rng, 0.0, Truncation::LeftAtZero).unwrap())
            .collect();
        let (m, _) = mean_var(&draws);
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((m - expected).abs() / expected < 0.01, "mean {m}");
    }

    #[test]
    fn deep_tail_draws_stay_in_support() {
        let mut rng = RngHandle::new(3, 1);
        for _ in 0..10_000 {
            assert!(sample_truncated_normal(&mut rng, -10.0, Truncation::LeftAtZero).unwrap() > 0.0);
            assert!(sample_truncated_normal(&mut rng, 12.0, Truncation::RightAtZero).unwrap() < 0.0);
            let far = sample_truncated_normal(&mut rng, -30.0, Truncation::LeftAtZero).unwrap();
            assert!(far > 0.0 && far.is_finite());
        }
    }

    #[test]
    fn right_truncation_mean_matches_closed_form() {
        // E[X | X < 0] for X ~ N(3, 1) is 3 - phi(3) / Phi(-3).
        let expected = 3.0 - norm_pdf(3.0) / norm_cdf(-3.0);
        assert!((expected - (-0.2830)).abs() < 1e-3);
        let mut rng = RngHandle::new(5, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(&mut rng, 3.0, Truncation::RightAtZero).unwrap())
            .collect();
        let (m, _) = mean_var(&draws);
        assert!(
            (m - expected).abs() / expected.abs() < 0.01,
            "mean {m} vs {expected}"
        );
    }

    #[test]
    fn non_finite_mean_is_rejected() {
        let mut rng = RngHandle::new(0, 0);
        assert!(sample_truncated_normal(&mut rng, f64::NAN, Truncation::LeftAtZero).is_err());
        assert!(sample_truncated_normal(&mut rng, f64::INFINITY, Truncation::RightAtZero).is_err());
    }

    #[test]
    fn mvn_identity_and_moments() {
        let mut rng = RngHandle::new(1, 0);
        let z = sample_mvn(&mut rng, &DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(z.len(), 3);

        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let mean = DVector::zeros(2);
        let draws: Vec<DVector<f64>> = (0..100_000)
            .map(|_| sample_mvn(&mut rng, &mean, &cov).unwrap())
            .collect();
        let a: Vec<f64> = draws.iter().map(|v| v[0]).collect();
        let b: Vec<f64> = draws.iter().map(|v| v[1]).collect();
        let (_, va) = mean_var(&a);
        let (_, vb) = mean_var(&b);
        assert!((va - 4.0).abs() / 4.0 < 0.02, "{va}");
        assert!((vb - 1.0).abs() < 0.02, "{vb}");
    }

    #[test]
    fn mvn_rejects_indefinite_covariance() {
        let mut rng = RngHandle::new(1, 0);
        // Eigenvalues 1.1 and -0.1.
        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.6, 0.5]);
        assert!(matches!(
            sample_mvn(&mut rng, &DVector::zeros(2), &cov),
            Err(Error::NotPositiveDefinite { minor: 2 })
        ));
    }

    #[test]
    fn inverse_wishart_scalar_reduces_to_inverse_gamma() {
        let mut rng = RngHandle::new(21, 0);
        let scale = DMatrix::from_element(1, 1, 4.0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_inverse_wishart(&mut rng, &scale, 10.0).unwrap()[(0, 0)])
            .collect();
        let (m, _) = mean_var(&draws);
        assert!((m - 0.5).abs() / 0.5 < 0.02, "mean {m}");
    }

    #[test]
    fn inverse_wishart_is_symmetric_and_checks_dof() {
        let mut rng = RngHandle::new(2, 0);
        let scale = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.5]);
        for _ in 0..100 {
            let m = sample_inverse_wishart(&mut rng, &scale, 6.0).unwrap();
            assert!(crate::linalg::max_asymmetry(&m) < 1e-12);
            assert!(Cholesky::new(&m).is_ok());
        }
        assert!(matches!(
            sample_inverse_wishart(&mut rng, &DMatrix::identity(3, 3), 2.0),
            Err(Error::DegreesOfFreedom { .. })
        ));
    }

    #[test]
    fn inverse_wishart_inverse_mean_matches_wishart_mean() {
        // If M ~ IW(S, v) then M^{-1} ~ W(S^{-1}, v), whose mean is v S^{-1}.
        let mut rng = RngHandle::new(8, 0);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let dof = 7.0;
        let reps = 20_000;
        let mut sum = DMatrix::<f64>::zeros(2, 2);
        let mut sum_sq = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..reps {
            let inv = Cholesky::new(&sample_inverse_wishart(&mut rng, &scale, dof).unwrap())
                .unwrap()
                .inverse();
            sum += &inv;
            sum_sq += inv.component_mul(&inv);
        }
        let mean = &sum / reps as f64;
        let expected = Cholesky::new(&scale).unwrap().inverse() * dof;
        for i in 0..2 {
            for j in 0..2 {
                let var = sum_sq[(i, j)] / reps as f64 - mean[(i, j)] * mean[(i, j)];
                let se = (var / reps as f64).sqrt();
                assert!(
                    (mean[(i, j)] - expected[(i, j)]).abs() < 3.0 * se,
                    "entry ({i},{j}): {} vs {}",
                    mean[(i, j)],
                    expected[(i, j)]
                );
            }
        }
    }

    #[test]
    fn inverse_gamma_moments_and_support() {
        let mut rng = RngHandle::new(4, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_inverse_gamma(&mut rng, 3.0, 4.0).unwrap())
            .collect();
        assert!(draws.iter().all(|&x| x > 0.0));
        let (m, _) = mean_var(&draws);
        assert!((m - 2.0).abs() / 2.0 < 0.02, "mean {m}");
        assert!(sample_inverse_gamma(&mut rng, 0.0, 1.0).is_err());
        assert!(sample_inverse_gamma(&mut rng, 1.0, -1.0).is_err());
    }

    #[test]
    fn identical_streams_reproduce() {
        let run = |stream| {
            let mut rng = RngHandle::new(99, stream);
            let mut out = vec![
                sample_truncated_normal(&mut rng, 0.3, Truncation::LeftAtZero).unwrap(),
                sample_truncated_normal(&mut rng, -6.0, Truncation::LeftAtZero).unwrap(),
                sample_inverse_gamma(&mut rng, 2.0, 3.0).unwrap(),
            ];
            out.extend(
                sample_mvn(&mut rng, &DVector::zeros(2), &DMatrix::identity(2, 2))
                    .unwrap()
                    .iter(),
            );
            out.extend(
                sample_inverse_wishart(&mut rng, &DMatrix::identity(2, 2), 4.0)
                    .unwrap()
                    .iter(),
            );
            out
        };
        assert_eq!(run(0), run(0));
        assert_ne!(run(0), run(1));
    }
}
