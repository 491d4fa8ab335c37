//! Full-conditional parameters and log densities of the probit mixed model.
//!
//! With `r = L - ZU` and `P_g` the projection onto the selected columns of
//! `X`, the beta-integrated target for the inclusion mask is, up to terms
//! shared by every mask of the same size,
//!
//! ```text
//! log f(g | L, U) = -(d/2) log(1 + c) + c / (2 (1 + c)) r' P_g r + d log(pi / (1 - pi))
//! ```
//!
//! Quadratic forms are evaluated as `|R^{-1} X_g' r|^2` with `R` the Cholesky
//! factor of `X_g' X_g`; the projection matrix is never formed.

use nalgebra::{DMatrix, DVector};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::linalg::{dot, symmetrize, Cholesky};
use crate::model::{to_matrix, CovarianceStructure, GammaMask, HyperParams};
use crate::rng::{
    sample_inverse_gamma, sample_inverse_wishart, sample_mvn_precision, sample_truncated_normal, RngHandle,
    Truncation,
};

/// Above this many features the full `X'X` is not cached.
pub const FULL_GRAM_LIMIT: usize = 2048;

/// Minimum columns per rayon task when computing `X'r`.
const COLUMNS_PER_TASK: usize = 64;

/// Conditional of the selected coefficients given `(g, L, U)`.
#[derive(Debug, Clone)]
pub struct BetaPosterior {
    pub mean: DVector<f64>,
    /// `V_g = c/(1+c) (X_g'X_g)^{-1}`.
    pub cov: DMatrix<f64>,
    pub chol_xtx: Cholesky,
    shrink: f64,
}

impl BetaPosterior {
    pub fn sample(&self, rng: &mut RngHandle) -> DVector<f64> {
        sample_mvn_precision(rng, &self.mean, &self.chol_xtx, self.shrink)
    }
}

/// Conditional of the random effects given `(beta, L, D)`.
#[derive(Debug, Clone)]
pub struct UPosterior {
    pub mean: DVector<f64>,
    /// `W = (Z'Z + D^{-1})^{-1}`.
    pub cov: DMatrix<f64>,
    pub chol_precision: Cholesky,
}

impl UPosterior {
    pub fn sample(&self, rng: &mut RngHandle) -> DVector<f64> {
        sample_mvn_precision(rng, &self.mean, &self.chol_precision, 1.0)
    }
}

fn singular(cols: &[usize]) -> Error {
    let mut columns = cols.to_vec();
    columns.sort_unstable();
    Error::SingularDesign { columns }
}

/// `c / (1 + c)`.
pub fn shrinkage(c: f64) -> f64 {
    c / (1.0 + c)
}

/// `L - ZU`; just `L` when `U` is empty.
pub fn residual(data: &DataSet, latent: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    match data.z() {
        Some(z) if !u.is_empty() => latent - z * u,
        _ => latent.clone(),
    }
}

/// `X_g beta_g`, with `beta_g` aligned to `gamma.indices()`.
pub fn fixed_predictor(data: &DataSet, gamma: &GammaMask, beta_gamma: &DVector<f64>) -> DVector<f64> {
    let mut xb = DVector::zeros(data.n());
    for (k, j) in gamma.indices().into_iter().enumerate() {
        xb.axpy(beta_gamma[k], &DVector::from_column_slice(data.column(j)), 1.0);
    }
    xb
}

/// Entries of `X'X`, either cached in full or computed on demand.
#[derive(Debug, Clone)]
pub struct GramCache {
    full: Option<DMatrix<f64>>,
}

impl GramCache {
    /// Cache the full `X'X` when `p <= FULL_GRAM_LIMIT`.
    pub fn new(data: &DataSet, exec: Execution) -> Self {
        let p = data.p();
        if p > FULL_GRAM_LIMIT {
            return GramCache { full: None };
        }
        let cols: Vec<Vec<f64>> = exec::map_range(exec, p, 8, |j| {
            let cj = data.column(j);
            (0..p).map(|i| dot(data.column(i), cj)).collect()
        });
        let mut g = DMatrix::from_fn(p, p, |i, j| cols[j][i]);
        symmetrize(&mut g);
        GramCache { full: Some(g) }
    }

    pub fn on_demand() -> Self {
        GramCache { full: None }
    }

    pub fn is_cached(&self) -> bool {
        self.full.is_some()
    }

    pub fn entry(&self, data: &DataSet, i: usize, j: usize) -> f64 {
        match &self.full {
            Some(g) => g[(i, j)],
            None => dot(data.column(i), data.column(j)),
        }
    }

    /// `X_cols' X_cols` in the given column order.
    pub fn gram(&self, data: &DataSet, cols: &[usize]) -> DMatrix<f64> {
        let d = cols.len();
        let mut g = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in 0..=a {
                let v = self.entry(data, cols[a], cols[b]);
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }

    /// Gram matrix of `cols` given the Gram matrix `base` of a column list
    /// that differs from `cols` only at the positions in `changed`.
    pub fn regram(
        &self,
        data: &DataSet,
        base: &DMatrix<f64>,
        cols: &[usize],
        changed: &[usize],
    ) -> DMatrix<f64> {
        let mut g = base.clone();
        for &a in changed {
            for b in 0..cols.len() {
                let v = self.entry(data, cols[a], cols[b]);
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }
}

/// The beta-integrated target for the inclusion mask with `(L, U)` frozen.
///
/// Holds `X'r` for every column so each proposal costs `O(d^3)` given the
/// Gram entries.
#[derive(Debug, Clone)]
pub struct GammaTarget<'a> {
    data: &'a DataSet,
    gram: &'a GramCache,
    xtr: Vec<f64>,
    c: f64,
}

impl<'a> GammaTarget<'a> {
    pub fn new(
        data: &'a DataSet,
        gram: &'a GramCache,
        residual: &DVector<f64>,
        c: f64,
        exec: Execution,
    ) -> Self {
        let r = residual.as_slice();
        let mut xtr = vec![0.0; data.p()];
        exec::fill(exec, &mut xtr, COLUMNS_PER_TASK, |j| dot(data.column(j), r));
        GammaTarget { data, gram, xtr, c }
    }

    pub fn data(&self) -> &DataSet {
        self.data
    }

    pub fn gram_cache(&self) -> &GramCache {
        self.gram
    }

    pub fn xtr(&self) -> &[f64] {
        &self.xtr
    }

    pub fn gram(&self, cols: &[usize]) -> DMatrix<f64> {
        self.gram.gram(self.data, cols)
    }

    /// `r' P r` for the columns `cols`, whose Gram matrix is `g`.
    pub fn quad_form_with_gram(&self, g: &DMatrix<f64>, cols: &[usize]) -> Result<f64> {
        let chol = Cholesky::new(g).map_err(|_| singular(cols))?;
        let b = DVector::from_iterator(cols.len(), cols.iter().map(|&j| self.xtr[j]));
        Ok(chol.inverse_quad_form(&b))
    }

    pub fn quad_form(&self, cols: &[usize]) -> Result<f64> {
        self.quad_form_with_gram(&self.gram(cols), cols)
    }

    /// Coefficient of the quadratic form in the log target, `c/(2(1+c))`.
    pub fn coefficient(&self) -> f64 {
        0.5 * shrinkage(self.c)
    }

    /// Log target given a quadratic form value and popcount.
    pub fn log_density_from(&self, quad: f64, d: usize, pi: f64) -> f64 {
        let d = d as f64;
        -0.5 * d * (1.0 + self.c).ln() + self.coefficient() * quad + d * (pi / (1.0 - pi)).ln()
    }

    /// Beta conditional for `cols` (any order); the result is aligned with
    /// `cols` as given.
    pub fn beta_posterior(&self, cols: &[usize]) -> Result<BetaPosterior> {
        let g = self.gram(cols);
        let b = DVector::from_iterator(cols.len(), cols.iter().map(|&j| self.xtr[j]));
        beta_posterior_from(&g, &b, self.c, cols)
    }
}

fn beta_posterior_from(
    g: &DMatrix<f64>,
    xtr: &DVector<f64>,
    c: f64,
    cols: &[usize],
) -> Result<BetaPosterior> {
    let chol = Cholesky::new(g).map_err(|_| singular(cols))?;
    let shrink = shrinkage(c);
    let mean = chol.solve(xtr) * shrink;
    let cov = chol.inverse() * shrink;
    Ok(BetaPosterior {
        mean,
        cov,
        chol_xtx: chol,
        shrink,
    })
}

/// Conditional of `beta_g` given `(g, L, U)`: mean `V_g X_g'(L - ZU)`,
/// covariance `V_g = c/(1+c) (X_g'X_g)^{-1}`. Aligned with `gamma.indices()`.
pub fn beta_posterior(
    data: &DataSet,
    gamma: &GammaMask,
    latent: &DVector<f64>,
    u: &DVector<f64>,
    c: f64,
) -> Result<BetaPosterior> {
    let cols = gamma.indices();
    let r = residual(data, latent, u);
    let g = GramCache::on_demand().gram(data, &cols);
    let xtr = DVector::from_iterator(
        cols.len(),
        cols.iter().map(|&j| dot(data.column(j), r.as_slice())),
    );
    beta_posterior_from(&g, &xtr, c, &cols)
}

/// Conditional of `U` given `(beta, L, D)` where `xb = X beta`: covariance
/// `W = (Z'Z + D^{-1})^{-1}`, mean `W Z'(L - X beta)`.
pub fn u_posterior(
    data: &DataSet,
    xb: &DVector<f64>,
    latent: &DVector<f64>,
    d_cov: &DMatrix<f64>,
) -> Result<UPosterior> {
    let z = data
        .z()
        .ok_or_else(|| Error::InvalidArgument("random-effect update needs Z".into()))?;
    let ztz = z.tr_mul(z);
    u_posterior_with(z, &ztz, xb, latent, d_cov)
}

pub(crate) fn u_posterior_with(
    z: &DMatrix<f64>,
    ztz: &DMatrix<f64>,
    xb: &DVector<f64>,
    latent: &DVector<f64>,
    d_cov: &DMatrix<f64>,
) -> Result<UPosterior> {
    let d_inv = Cholesky::new(d_cov)?.inverse();
    let mut precision = ztz + d_inv;
    symmetrize(&mut precision);
    let chol = Cholesky::new(&precision)?;
    let rhs = z.tr_mul(&(latent - xb));
    let mean = chol.solve(&rhs);
    let cov = chol.inverse();
    Ok(UPosterior {
        mean,
        cov,
        chol_precision: chol,
    })
}

/// Draw the latent liabilities: `L_i ~ N(X_i'beta + Z_i'U, 1)` truncated to
/// `(0, inf)` when `y_i = 1` and to `(-inf, 0)` when `y_i = 0`.
pub fn sample_latent(
    rng: &mut RngHandle,
    data: &DataSet,
    xb: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let zu = match data.z() {
        Some(z) if !u.is_empty() => Some(z * u),
        _ => None,
    };
    let mut out = DVector::zeros(data.n());
    for (i, &yi) in data.y().iter().enumerate() {
        let mean = xb[i] + zu.as_ref().map_or(0.0, |v| v[i]);
        if !mean.is_finite() {
            return Err(Error::NonFiniteMean { row: i + 1 });
        }
        let side = if yi == 1 {
            Truncation::LeftAtZero
        } else {
            Truncation::RightAtZero
        };
        out[i] = sample_truncated_normal(rng, mean, side)?;
    }
    Ok(out)
}

/// Draw the random-effect covariance from its full conditional.
///
/// General: `IW(UU' + psi, m + 1)`; block-diagonal: `A_l ~ IW(U_l U_l' +
/// psi_l, m + 1)`; diagonal: `s_l^2 ~ IG(q_l/2 + a, U_l'U_l/2 + b)`. The
/// inverse-Wishart degrees of freedom are `m + 1` regardless of block size.
pub fn update_covariance(
    rng: &mut RngHandle,
    u: &DVector<f64>,
    cov: &CovarianceStructure,
) -> Result<DMatrix<f64>> {
    let q = cov.q();
    if u.len() != q {
        return Err(Error::InvalidArgument(format!(
            "U has length {} but the covariance structure covers {q}",
            u.len()
        )));
    }
    let mut d = DMatrix::zeros(q, q);
    let mut offset = 0;
    match cov {
        CovarianceStructure::General { psi, m } => {
            let scale = u * u.transpose() + to_matrix(psi);
            d = sample_inverse_wishart(rng, &scale, m + 1.0)?;
        }
        CovarianceStructure::BlockDiagonal { psi, m } => {
            for block in psi {
                let ql = block.len();
                let ul = u.rows(offset, ql).into_owned();
                let dof = m + 1.0;
                if !(dof > ql as f64 - 1.0) {
                    return Err(Error::DegreesOfFreedom { dof, dim: ql });
                }
                let scale = &ul * ul.transpose() + to_matrix(block);
                let a = sample_inverse_wishart(rng, &scale, dof)?;
                d.view_mut((offset, offset), (ql, ql)).copy_from(&a);
                offset += ql;
            }
        }
        CovarianceStructure::Diagonal { a, b, block_sizes } => {
            for &ql in block_sizes {
                let ul = u.rows(offset, ql);
                let shape = ql as f64 / 2.0 + a;
                let scale = 0.5 * ul.norm_squared() + b;
                let s2 = sample_inverse_gamma(rng, shape, scale)?;
                for i in offset..offset + ql {
                    d[(i, i)] = s2;
                }
                offset += ql;
            }
        }
    }
    Ok(d)
}

/// `r' P_g r` for the selected columns of `gamma`.
pub fn projection_quad_form(data: &DataSet, gamma: &GammaMask, r: &DVector<f64>) -> Result<f64> {
    let cols = gamma.indices();
    let g = GramCache::on_demand().gram(data, &cols);
    let chol = Cholesky::new(&g).map_err(|_| singular(&cols))?;
    let b = DVector::from_iterator(
        cols.len(),
        cols.iter().map(|&j| dot(data.column(j), r.as_slice())),
    );
    Ok(chol.inverse_quad_form(&b))
}

/// Log of the beta-integrated mask target, up to a constant shared by all
/// masks of equal popcount.
pub fn log_marginal_gamma(
    data: &DataSet,
    gamma: &GammaMask,
    latent: &DVector<f64>,
    u: &DVector<f64>,
    hp: &HyperParams,
) -> Result<f64> {
    let r = residual(data, latent, u);
    let quad = projection_quad_form(data, gamma, &r)?;
    let d = gamma.d() as f64;
    let c = hp.c;
    Ok(-0.5 * d * (1.0 + c).ln() + 0.5 * shrinkage(c) * quad + d * (hp.pi / (1.0 - hp.pi)).ln())
}

/// Log MH acceptance probability for a popcount-preserving move from
/// `current` to `proposal`: `min(0, c/(2(1+c)) r'(P_prop - P_cur) r)`.
///
/// A singular proposal yields `-inf`; a singular current state is an error.
///
/// # Panics
///
/// When the two masks have different popcounts.
pub fn log_acceptance(
    data: &DataSet,
    current: &GammaMask,
    proposal: &GammaMask,
    latent: &DVector<f64>,
    u: &DVector<f64>,
    c: f64,
) -> Result<f64> {
    assert_eq!(
        current.d(),
        proposal.d(),
        "log_acceptance needs masks of equal popcount"
    );
    let r = residual(data, latent, u);
    let q_cur = projection_quad_form(data, current, &r)?;
    let q_prop = match projection_quad_form(data, proposal, &r) {
        Ok(v) => v,
        Err(Error::SingularDesign { .. }) => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    Ok((0.5 * shrinkage(c) * (q_prop - q_cur)).min(0.0))
}
