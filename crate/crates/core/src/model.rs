//! Model-level types: the inclusion mask, covariance priors,
//! hyperparameters and the state of the Gibbs sequence.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::rng::RngHandle;

/// Binary inclusion vector with a fixed number of ones.
///
/// Besides the bits, the mask keeps the positions of its ones and zeros in
/// two lists so a swap proposal can pick uniformly in O(r). The order of
/// those lists depends on the swap history; equality only looks at bits.
#[derive(Debug, Clone, Eq)]
pub struct GammaMask {
    bits: Vec<bool>,
    ones: Vec<usize>,
    zeros: Vec<usize>,
}

impl PartialEq for GammaMask {
    fn eq(&self, other: &Self) -> bool {
        self.bits == other.bits
    }
}

impl std::hash::Hash for GammaMask {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.bits.hash(state)
    }
}

impl GammaMask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        let ones: Vec<usize> = (0..bits.len()).filter(|&j| bits[j]).collect();
        let zeros: Vec<usize> = (0..bits.len()).filter(|&j| !bits[j]).collect();
        if ones.is_empty() {
            return Err(Error::InvalidArgument(
                "inclusion mask must select at least one column".into(),
            ));
        }
        Ok(GammaMask { bits, ones, zeros })
    }

    pub fn from_indices(p: usize, selected: &[usize]) -> Result<Self> {
        let mut bits = vec![false; p];
        for &j in selected {
            if j >= p {
                return Err(Error::InvalidArgument(format!(
                    "column {j} out of range for p = {p}"
                )));
            }
            if bits[j] {
                return Err(Error::InvalidArgument(format!("column {j} selected twice")));
            }
            bits[j] = true;
        }
        Self::new(bits)
    }

    /// Uniformly random subset of size `d`.
    pub fn random(rng: &mut RngHandle, p: usize, d: usize) -> Result<Self> {
        if d == 0 || d > p {
            return Err(Error::InvalidArgument(format!("cannot draw {d} of {p} columns")));
        }
        let mut picked = index::sample(rng, p, d).into_vec();
        picked.sort_unstable();
        Self::from_indices(p, &picked)
    }

    pub fn p(&self) -> usize {
        self.bits.len()
    }

    /// Number of selected columns.
    pub fn d(&self) -> usize {
        self.ones.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_selected(&self, j: usize) -> bool {
        self.bits[j]
    }

    /// Selected columns in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        let mut v = self.ones.clone();
        v.sort_unstable();
        v
    }

    /// Selected columns in working order (stable under swaps).
    pub fn ones(&self) -> &[usize] {
        &self.ones
    }

    pub fn zeros(&self) -> &[usize] {
        &self.zeros
    }

    /// Exchange `ones[one_pos[i]]` with `zeros[zero_pos[i]]` for every `i`.
    pub(crate) fn apply_swap(&mut self, one_pos: &[usize], zero_pos: &[usize]) {
        debug_assert_eq!(one_pos.len(), zero_pos.len());
        for (&a, &b) in one_pos.iter().zip(zero_pos) {
            let leaving = self.ones[a];
            let entering = self.zeros[b];
            self.bits[leaving] = false;
            self.bits[entering] = true;
            self.ones[a] = entering;
            self.zeros[b] = leaving;
        }
    }

    pub fn hamming(&self, other: &GammaMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }
}

/// Prior structure of the random-effect covariance `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceStructure {
    /// `D ~ IW(psi, m)` with no structure.
    General { psi: Vec<Vec<f64>>, m: f64 },
    /// `D = diag(A_1..A_K)`, each `A_l ~ IW(psi_l, m)`.
    BlockDiagonal { psi: Vec<Vec<Vec<f64>>>, m: f64 },
    /// `D = diag(s_1^2 I, .., s_K^2 I)`, each `s_l^2 ~ IG(a, b)`.
    Diagonal { a: f64, b: f64, block_sizes: Vec<usize> },
}

pub(crate) fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN))
}

pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl CovarianceStructure {
    pub fn general(psi: &DMatrix<f64>, m: f64) -> Self {
        CovarianceStructure::General {
            psi: from_matrix(psi),
            m,
        }
    }

    /// Every block gets `psi_scale * I`.
    pub fn block_diagonal(psi_scale: f64, m: f64, block_sizes: &[usize]) -> Self {
        CovarianceStructure::BlockDiagonal {
            psi: block_sizes
                .iter()
                .map(|&s| from_matrix(&(DMatrix::identity(s, s) * psi_scale)))
                .collect(),
            m,
        }
    }

    pub fn diagonal(a: f64, b: f64, block_sizes: &[usize]) -> Self {
        CovarianceStructure::Diagonal {
            a,
            b,
            block_sizes: block_sizes.to_vec(),
        }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        match self {
            CovarianceStructure::General { psi, .. } => vec![psi.len()],
            CovarianceStructure::BlockDiagonal { psi, .. } => psi.iter().map(Vec::len).collect(),
            CovarianceStructure::Diagonal { block_sizes, .. } => block_sizes.clone(),
        }
    }

    pub fn q(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperParams(msg));
        let check_psi = |psi: &[Vec<f64>], m: f64| -> Result<()> {
            let q = psi.len();
            if q == 0 || psi.iter().any(|r| r.len() != q) {
                return Err(Error::InvalidHyperParams(
                    "psi must be a non-empty square matrix".into(),
                ));
            }
            let mat = to_matrix(psi);
            if crate::linalg::max_asymmetry(&mat) > 1e-12 * mat.amax().max(1.0) {
                return Err(Error::InvalidHyperParams("psi must be symmetric".into()));
            }
            Cholesky::new(&mat)
                .map_err(|_| Error::InvalidHyperParams("psi must be positive definite".into()))?;
            if !(m > q as f64 - 1.0) {
                return Err(Error::InvalidHyperParams(format!(
                    "inverse-Wishart m = {m} must exceed q - 1 = {}",
                    q as f64 - 1.0
                )));
            }
            Ok(())
        };
        match self {
            CovarianceStructure::General { psi, m } => check_psi(psi, *m),
            CovarianceStructure::BlockDiagonal { psi, m } => {
                if psi.is_empty() {
                    return bad("block-diagonal structure needs at least one block".into());
                }
                psi.iter().try_for_each(|p| check_psi(p, *m))
            }
            CovarianceStructure::Diagonal { a, b, block_sizes } => {
                if !(*a > 0.0) || !(*b > 0.0) {
                    return bad(format!("inverse-gamma a and b must be positive, got ({a}, {b})"));
                }
                if block_sizes.is_empty() || block_sizes.contains(&0) {
                    return bad("diagonal structure needs non-empty blocks".into());
                }
                Ok(())
            }
        }
    }

    /// Starting value for `D`: every block variance set to one.
    pub fn initial(&self) -> DMatrix<f64> {
        let q = self.q();
        DMatrix::identity(q, q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Probit mixed model with random effects `ZU`.
    Mixed,
    /// Plain probit selection; `U` is held at zero.
    FixedEffectsOnly,
}

/// Sampler hyperparameters. Defaults follow the real-data application:
/// `c = 50`, `d = 30`, `r = 10`, `k = 500`, 60000 iterations with 30000
/// burn-in, and an `IG(2, 3)` prior on the random-effect variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// g-prior scale (variable selection coefficient).
    pub c: f64,
    /// Prior inclusion probability.
    pub pi: f64,
    /// Number of selected columns at every iteration.
    pub d: usize,
    /// Number of components changed per MH proposal (even).
    pub r: usize,
    /// Inner MH iterations per Gibbs iteration.
    pub k: usize,
    pub total_iters: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub mode: Mode,
    /// `None` means the default diagonal `IG(2, 3)` structure with a single
    /// block spanning all random-effect columns.
    pub cov: Option<CovarianceStructure>,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            c: 50.0,
            pi: 0.5,
            d: 30,
            r: 10,
            k: 500,
            total_iters: 60_000,
            burn_in: 30_000,
            seed: 0,
            mode: Mode::Mixed,
            cov: None,
        }
    }
}

pub const DEFAULT_IG_A: f64 = 2.0;
pub const DEFAULT_IG_B: f64 = 3.0;

impl HyperParams {
    pub fn kept(&self) -> usize {
        self.total_iters - self.burn_in
    }

    /// Checks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperParams(msg));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return bad(format!("pi must lie in (0,1), got {}", self.pi));
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.r == 0 || !self.r.is_multiple_of(2) {
            return bad(format!("r must be a positive even integer, got {}", self.r));
        }
        if self.r / 2 > self.d {
            return bad(format!("r/2 = {} exceeds d = {}", self.r / 2, self.d));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.burn_in >= self.total_iters {
            return bad(format!(
                "burn-in {} must be smaller than total iterations {}",
                self.burn_in, self.total_iters
            ));
        }
        if let Some(cov) = &self.cov {
            cov.validate()?;
        }
        Ok(())
    }

    /// Full validation against a dataset, including `d < n`.
    pub fn validate_for(&self, data: &DataSet) -> Result<()> {
        self.validate()?;
        let (n, p) = (data.n(), data.p());
        if self.d >= n {
            return Err(Error::InvalidHyperParams(format!(
                "d = {} must be smaller than n = {n}",
                self.d
            )));
        }
        if self.d > p {
            return Err(Error::InvalidHyperParams(format!(
                "d = {} exceeds the number of features p = {p}",
                self.d
            )));
        }
        // p == d leaves a single admissible mask; no swap is ever proposed.
        if p > self.d && self.r / 2 > p - self.d {
            return Err(Error::InvalidHyperParams(format!(
                "r/2 = {} exceeds p - d = {}",
                self.r / 2,
                p - self.d
            )));
        }
        if self.mode == Mode::Mixed {
            if data.z().is_none() {
                return Err(Error::InvalidHyperParams(
                    "mixed mode needs a random-effect design (group column)".into(),
                ));
            }
            let cov = self.covariance_for(data.q());
            if cov.q() != data.q() {
                return Err(Error::InvalidHyperParams(format!(
                    "covariance structure covers {} columns but Z has {}",
                    cov.q(),
                    data.q()
                )));
            }
        }
        Ok(())
    }

    /// The covariance structure in effect for `q` random-effect columns.
    pub fn covariance_for(&self, q: usize) -> CovarianceStructure {
        self.cov
            .clone()
            .unwrap_or_else(|| CovarianceStructure::diagonal(DEFAULT_IG_A, DEFAULT_IG_B, &[q]))
    }
}

/// Current values of the Gibbs sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub gamma: GammaMask,
    /// Coefficients of the selected columns, aligned with `gamma.indices()`.
    pub beta_gamma: DVector<f64>,
    /// Random-effect covariance (0 x 0 in fixed-effects-only mode).
    pub d_cov: DMatrix<f64>,
    /// Latent liabilities.
    pub latent: DVector<f64>,
    /// Random-effect coefficients (empty in fixed-effects-only mode).
    pub u: DVector<f64>,
}

impl ChainState {
    /// Full length-p coefficient vector.
    pub fn beta_full(&self) -> DVector<f64> {
        let mut beta = DVector::zeros(self.gamma.p());
        for (k, j) in self.gamma.indices().into_iter().enumerate() {
            beta[j] = self.beta_gamma[k];
        }
        beta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_keeps_popcount_through_swaps() {
        let mut m = GammaMask::from_indices(6, &[0, 3]).unwrap();
        assert_eq!(m.d(), 2);
        m.apply_swap(&[1], &[0]);
        assert_eq!(m.d(), 2);
        assert_eq!(m.bits().iter().filter(|&&b| b).count(), 2);
        assert_eq!(m.indices(), vec![0, 1]);
        assert!(GammaMask::new(vec![false; 3]).is_err());
        assert!(GammaMask::from_indices(3, &[1, 1]).is_err());
    }

    #[test]
    fn default_hyperparameters_echo_application_settings() {
        let hp = HyperParams::default();
        assert_eq!((hp.c, hp.d, hp.r, hp.k), (50.0, 30, 10, 500));
        assert_eq!((hp.total_iters, hp.burn_in), (60_000, 30_000));
        assert_eq!(hp.kept(), 30_000);
        assert_eq!(
            hp.covariance_for(3),
            CovarianceStructure::diagonal(2.0, 3.0, &[3])
        );
        hp.validate().unwrap();
    }

    #[test]
    fn hyperparameter_validation() {
        let base = HyperParams::default();
        for hp in [
            HyperParams { r: 7, ..base.clone() },
            HyperParams { r: 0, ..base.clone() },
            HyperParams {
                c: 0.0,
                ..base.clone()
            },
            HyperParams {
                pi: 1.0,
                ..base.clone()
            },
            HyperParams {
                burn_in: 60_000,
                ..base.clone()
            },
            HyperParams {
                d: 4,
                r: 10,
                ..base.clone()
            },
            HyperParams { k: 0, ..base.clone() },
        ] {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
    }

    #[test]
    fn covariance_validation() {
        assert!(CovarianceStructure::diagonal(2.0, 3.0, &[3]).validate().is_ok());
        assert!(CovarianceStructure::diagonal(0.0, 3.0, &[3]).validate().is_err());
        let psi = DMatrix::identity(3, 3);
        assert!(CovarianceStructure::general(&psi, 2.5).validate().is_ok());
        assert!(CovarianceStructure::general(&psi, 2.0).validate().is_err());
        let not_spd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(CovarianceStructure::general(&not_spd, 5.0).validate().is_err());
        let blocks = CovarianceStructure::block_diagonal(1.0, 3.0, &[2, 1]);
        assert_eq!(blocks.q(), 3);
        assert!(blocks.validate().is_ok());
    }
}
