//! The swap proposal, the inner Metropolis-Hastings loop over inclusion
//! masks, and the grouped Metropolis-within-Gibbs chain.
//!
//! One Gibbs iteration, given `(L, U)` from the previous iteration:
//!
//! 1. `gamma` from its beta-integrated target by `k` MH swap moves;
//! 2. `beta_gamma` from its Gaussian conditional under the new `gamma`;
//! 3. `D` from its conditional given `U`;
//! 4. `L` from the truncated normals given `(beta, U)`;
//! 5. `U` from its Gaussian conditional given `(beta, L, D)`.
//!
//! Steps 3 and 5 are skipped in fixed-effects-only mode, where `U = 0`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::conditionals::{
    fixed_predictor, residual, sample_latent, u_posterior_with, update_covariance, GammaTarget, GramCache,
};
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{ChainState, CovarianceStructure, GammaMask, HyperParams, Mode};
use crate::rng::RngHandle;

/// Draw the positions (into `gamma.ones()` and `gamma.zeros()`) of a swap of
/// `r/2` ones with `r/2` zeros, each set chosen uniformly without
/// replacement.
fn draw_swap(rng: &mut RngHandle, gamma: &GammaMask, r: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let half = r / 2;
    let (d, free) = (gamma.d(), gamma.p() - gamma.d());
    if r == 0 || !r.is_multiple_of(2) || half > d || half > free {
        return Err(Error::InvalidArgument(format!(
            "cannot swap r = {r} components with d = {d} ones and {free} zeros"
        )));
    }
    let ones = index::sample(rng, d, half).into_vec();
    let zeros = index::sample(rng, free, half).into_vec();
    Ok((ones, zeros))
}

/// Propose a mask with `r/2` ones switched off and `r/2` zeros switched on.
/// The kernel is symmetric and preserves the popcount.
pub fn propose_swap(rng: &mut RngHandle, gamma: &GammaMask, r: usize) -> Result<GammaMask> {
    let (ones, zeros) = draw_swap(rng, gamma, r)?;
    let mut out = gamma.clone();
    out.apply_swap(&ones, &zeros);
    Ok(out)
}

/// Proposal and acceptance counts of the inner MH loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl MhStats {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Run `k` MH iterations against a frozen target, updating `gamma` in place.
/// Returns the quadratic form `r'P r` of the final state.
///
/// Singular proposals are rejected; a singular starting state is an error.
pub fn mh_run(
    rng: &mut RngHandle,
    target: &GammaTarget<'_>,
    gamma: &mut GammaMask,
    r: usize,
    k: usize,
    stats: &mut MhStats,
) -> Result<f64> {
    let data = target.data();
    let mut g_cur = target.gram(gamma.ones());
    let mut q_cur = target.quad_form_with_gram(&g_cur, gamma.ones())?;
    if gamma.d() == gamma.p() {
        return Ok(q_cur);
    }
    let coef = target.coefficient();
    for _ in 0..k {
        let (one_pos, zero_pos) = draw_swap(rng, gamma, r)?;
        gamma.apply_swap(&one_pos, &zero_pos);
        let g_prop = target.gram_cache().regram(data, &g_cur, gamma.ones(), &one_pos);
        stats.proposals += 1;
        let accepted = match target.quad_form_with_gram(&g_prop, gamma.ones()) {
            Ok(q_prop) => {
                let log_accept = (coef * (q_prop - q_cur)).min(0.0);
                if log_accept >= 0.0 || rng.open_unit().ln() < log_accept {
                    q_cur = q_prop;
                    g_cur = g_prop;
                    true
                } else {
                    false
                }
            }
            Err(Error::SingularDesign { .. }) => false,
            Err(e) => return Err(e),
        };
        if accepted {
            stats.accepted += 1;
        } else {
            // Exchanging the same positions again restores the mask.
            gamma.apply_swap(&one_pos, &zero_pos);
        }
    }
    Ok(q_cur)
}

/// `k` MH iterations for the inclusion mask given frozen `(L, U)`, starting
/// from `gamma_init`; returns the `k`-th state.
pub fn mh_gamma_step(
    rng: &mut RngHandle,
    data: &DataSet,
    gamma_init: &GammaMask,
    latent: &DVector<f64>,
    u: &DVector<f64>,
    hp: &HyperParams,
) -> Result<GammaMask> {
    if hp.k == 0 {
        return Err(Error::InvalidHyperParams("k must be at least 1".into()));
    }
    let gram = GramCache::on_demand();
    let r = residual(data, latent, u);
    let target = GammaTarget::new(data, &gram, &r, hp.c, Execution::Sequential);
    let mut gamma = gamma_init.clone();
    let mut stats = MhStats::default();
    mh_run(rng, &target, &mut gamma, hp.r, hp.k, &mut stats)?;
    Ok(gamma)
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub trace_d: f64,
    pub beta_norm: f64,
    pub log_marginal: f64,
}

/// Summary of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub feature_names: Vec<String>,
    /// Post-burn-in count of iterations with each column selected.
    pub selection_counts: Vec<u64>,
    pub mh: MhStats,
    pub mh_accept_rate: f64,
    pub burn_in: usize,
    pub kept: usize,
    pub traces: Option<Vec<TraceRecord>>,
    pub wall_time_secs: f64,
    pub config: HyperParams,
}

impl RunReport {
    pub fn p(&self) -> usize {
        self.selection_counts.len()
    }
}

/// Posterior means over the kept iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMeans {
    /// Length-p model-averaged coefficients (zero when not selected).
    pub beta: DVector<f64>,
    pub u: DVector<f64>,
    pub d_cov: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub report: RunReport,
    pub final_state: ChainState,
    pub means: PosteriorMeans,
}

#[derive(Debug, Clone, Default)]
pub struct ChainOptions {
    pub exec: Execution,
    pub stream_id: u64,
    pub record_traces: bool,
    /// Skip the MH step and keep this mask for the whole run.
    pub frozen_gamma: Option<GammaMask>,
}

/// Run the grouped Metropolis-within-Gibbs chain. Deterministic given
/// `hp.seed`.
pub fn run_chain(data: &DataSet, hp: &HyperParams, init: Option<ChainState>) -> Result<RunReport> {
    Ok(run_chain_with(data, hp, init, &ChainOptions::default(), |_, _| {})?.report)
}

/// Run a chain with explicit options; `observe` sees the state after every
/// iteration (1-based).
pub fn run_chain_with<F>(
    data: &DataSet,
    hp: &HyperParams,
    init: Option<ChainState>,
    opts: &ChainOptions,
    mut observe: F,
) -> Result<ChainOutput>
where
    F: FnMut(usize, &ChainState),
{
    let started = Instant::now();
    let frozen = opts.frozen_gamma.is_some();
    let hp_eff = match &opts.frozen_gamma {
        Some(g) => HyperParams {
            d: g.d(),
            ..hp.clone()
        },
        None => hp.clone(),
    };
    if frozen {
        // r and k are unused with a frozen mask.
        validate_frozen(&hp_eff, data)?;
    } else {
        hp_eff.validate_for(data)?;
    }
    let hp = &hp_eff;
    let mixed = hp.mode == Mode::Mixed;
    let cov: Option<CovarianceStructure> = mixed.then(|| hp.covariance_for(data.q()));
    let z = if mixed { data.z() } else { None };
    let ztz = z.map(|z| z.tr_mul(z));

    let mut rng = RngHandle::new(hp.seed, opts.stream_id);
    let gram = GramCache::new(data, opts.exec);

    let mut state = match init {
        Some(s) => {
            check_init(&s, data, hp, mixed)?;
            s
        }
        None => initial_state(&mut rng, data, hp, cov.as_ref(), opts.frozen_gamma.as_ref())?,
    };
    if let Some(g) = &opts.frozen_gamma {
        state.gamma = g.clone();
    }

    let p = data.p();
    let mut counts = vec![0u64; p];
    let mut stats = MhStats::default();
    let mut traces = opts.record_traces.then(Vec::new);
    let mut beta_sum = DVector::<f64>::zeros(p);
    let mut u_sum = DVector::<f64>::zeros(state.u.len());
    let mut d_sum = DMatrix::<f64>::zeros(state.d_cov.nrows(), state.d_cov.ncols());

    for t in 1..=hp.total_iters {
        // 1. gamma | L, U with beta integrated out.
        let r = residual(data, &state.latent, &state.u);
        let target = GammaTarget::new(data, &gram, &r, hp.c, opts.exec);
        let quad = if frozen {
            target.quad_form(state.gamma.ones())?
        } else {
            mh_run(&mut rng, &target, &mut state.gamma, hp.r, hp.k, &mut stats)?
        };
        let gamma_stamp = t;

        // 2. beta_gamma | gamma, L, U under the gamma drawn just above.
        debug_assert_eq!(gamma_stamp, t);
        let cols = state.gamma.indices();
        let post = target.beta_posterior(&cols)?;
        state.beta_gamma = post.sample(&mut rng);
        let xb = fixed_predictor(data, &state.gamma, &state.beta_gamma);

        // 3. D | U (previous U).
        if let Some(cov) = &cov {
            state.d_cov = update_covariance(&mut rng, &state.u, cov)?;
        }

        // 4. L | beta, U (previous U).
        state.latent = sample_latent(&mut rng, data, &xb, &state.u)?;

        // 5. U | beta, L, D.
        if let (Some(z), Some(ztz)) = (z, &ztz) {
            state.u = u_posterior_with(z, ztz, &xb, &state.latent, &state.d_cov)?.sample(&mut rng);
        }

        if t > hp.burn_in {
            for (k, &j) in cols.iter().enumerate() {
                counts[j] += 1;
                beta_sum[j] += state.beta_gamma[k];
            }
            u_sum += &state.u;
            d_sum += &state.d_cov;
        }
        if let Some(tr) = traces.as_mut() {
            tr.push(TraceRecord {
                iteration: t,
                trace_d: state.d_cov.trace(),
                beta_norm: state.beta_gamma.norm(),
                log_marginal: target.log_density_from(quad, state.gamma.d(), hp.pi),
            });
        }
        observe(t, &state);
    }

    let kept = hp.kept();
    let scale = 1.0 / kept as f64;
    let report = RunReport {
        feature_names: data.feature_names().to_vec(),
        selection_counts: counts,
        mh: stats,
        mh_accept_rate: stats.rate(),
        burn_in: hp.burn_in,
        kept,
        traces,
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: hp.clone(),
    };
    Ok(ChainOutput {
        report,
        final_state: state,
        means: PosteriorMeans {
            beta: beta_sum * scale,
            u: u_sum * scale,
            d_cov: d_sum * scale,
        },
    })
}

fn validate_frozen(hp: &HyperParams, data: &DataSet) -> Result<()> {
    let probe = HyperParams {
        r: 2,
        k: 1,
        d: hp.d,
        ..hp.clone()
    };
    probe.validate()?;
    if hp.d >= data.n() {
        return Err(Error::InvalidHyperParams(format!(
            "{} columns need more than {} rows",
            hp.d,
            data.n()
        )));
    }
    if hp.mode == Mode::Mixed && data.z().is_none() {
        return Err(Error::InvalidHyperParams(
            "mixed mode needs a random-effect design (group column)".into(),
        ));
    }
    Ok(())
}

fn check_init(s: &ChainState, data: &DataSet, hp: &HyperParams, mixed: bool) -> Result<()> {
    let q = if mixed { data.q() } else { 0 };
    let ok = s.gamma.p() == data.p()
        && s.gamma.d() == hp.d
        && s.beta_gamma.len() == hp.d
        && s.latent.len() == data.n()
        && s.u.len() == q
        && s.d_cov.nrows() == q
        && s.d_cov.ncols() == q;
    if !ok {
        return Err(Error::InvalidArgument(
            "initial chain state does not match data and hyperparameters".into(),
        ));
    }
    for (i, &yi) in data.y().iter().enumerate() {
        if (s.latent[i] > 0.0) != (yi == 1) {
            return Err(Error::InvalidArgument(format!(
                "initial latent value at row {} disagrees with the response",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Random `d`-subset, `beta = 0`, `U = 0`, unit block variances, and `L`
/// drawn from the truncated normals under the zero predictor.
pub fn initial_state(
    rng: &mut RngHandle,
    data: &DataSet,
    hp: &HyperParams,
    cov: Option<&CovarianceStructure>,
    frozen: Option<&GammaMask>,
) -> Result<ChainState> {
    let gamma = match frozen {
        Some(g) => g.clone(),
        None => GammaMask::random(rng, data.p(), hp.d)?,
    };
    let q = cov.map_or(0, CovarianceStructure::q);
    let d_cov = cov.map_or_else(|| DMatrix::zeros(0, 0), CovarianceStructure::initial);
    let u = DVector::zeros(q);
    let latent = sample_latent(rng, data, &DVector::zeros(data.n()), &u)?;
    Ok(ChainState {
        beta_gamma: DVector::zeros(gamma.d()),
        gamma,
        d_cov,
        latent,
        u,
    })
}

/// Run several chains on the same data, chain `i` on RNG stream `i`. Chains
/// run concurrently under [`Execution::Parallel`]; results are identical to
/// a sequential run.
pub fn run_chains(data: &DataSet, configs: &[HyperParams], exec: Execution) -> Vec<Result<RunReport>> {
    exec::map_range(exec, configs.len(), 1, |i| {
        let opts = ChainOptions {
            exec: Execution::Sequential,
            stream_id: i as u64,
            ..ChainOptions::default()
        };
        run_chain_with(data, &configs[i], None, &opts, |_, _| {}).map(|o| o.report)
    })
}
