//! Synthetic probit mixed-model data with known ground truth.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, GroupLabels};
use crate::error::{Error, Result};
use crate::rng::{norm_cdf, RngHandle};

const DATA_STREAM: u64 = 1;
const SUPPORT_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;

pub const DEFAULT_BETA: [f64; 5] = [-1.0, -1.0, 1.0, 1.0, 2.0];
pub const X_BOUND: f64 = 5.0;

/// Named random-effect vectors for four groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    U1,
    U2,
    U3,
    U4,
    U5,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::U1, Preset::U2, Preset::U3, Preset::U4, Preset::U5];

    pub fn levels(self) -> [f64; 4] {
        match self {
            Preset::U1 => [0.0, 0.0, 0.0, 0.0],
            Preset::U2 => [-3.0, -2.0, 2.0, 3.0],
            Preset::U3 => [-5.0, -3.0, 3.0, 5.0],
            Preset::U4 => [-10.0, -5.0, 5.0, 10.0],
            Preset::U5 => [-30.0, -10.0, 10.0, 30.0],
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| format!("{p:?}").eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {name:?}, expected U1..U5")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    /// Dense coefficient vector of length `p`.
    pub true_beta: Vec<f64>,
    pub u_levels: Vec<f64>,
    pub group_sizes: Vec<usize>,
    pub seed: u64,
}

impl SimConfig {
    /// Four groups of `n/4`, the default non-zero coefficients placed on a
    /// seeded random support, and the preset's group offsets.
    pub fn preset(preset: Preset, n: usize, p: usize, seed: u64) -> Result<Self> {
        if !n.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "n = {n} is not divisible by 4 groups"
            )));
        }
        if p < DEFAULT_BETA.len() {
            return Err(Error::InvalidArgument(format!(
                "p = {p} is below the true support size"
            )));
        }
        let mut rng = RngHandle::new(seed, SUPPORT_STREAM);
        let mut support = index::sample(&mut rng, p, DEFAULT_BETA.len()).into_vec();
        support.sort_unstable();
        let mut true_beta = vec![0.0; p];
        for (&j, &b) in support.iter().zip(&DEFAULT_BETA) {
            true_beta[j] = b;
        }
        Ok(SimConfig {
            n,
            p,
            true_beta,
            u_levels: preset.levels().to_vec(),
            group_sizes: vec![n / 4; 4],
            seed,
        })
    }

    pub fn desk(preset: Preset, seed: u64) -> Result<Self> {
        Self::preset(preset, 200, 200, seed)
    }

    pub fn full_scale(preset: Preset, seed: u64) -> Result<Self> {
        Self::preset(preset, 200, 1000, seed)
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.p).filter(|&j| self.true_beta[j] != 0.0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.true_beta.len() != self.p {
            return bad(format!(
                "true_beta has {} entries for p = {}",
                self.true_beta.len(),
                self.p
            ));
        }
        if self.group_sizes.iter().sum::<usize>() != self.n {
            return bad(format!(
                "group sizes sum to {}, not n = {}",
                self.group_sizes.iter().sum::<usize>(),
                self.n
            ));
        }
        if self.group_sizes.len() != self.u_levels.len() {
            return bad(format!(
                "{} group sizes for {} random-effect levels",
                self.group_sizes.len(),
                self.u_levels.len()
            ));
        }
        if let Some(g) = self.group_sizes.iter().position(|&s| s == 0) {
            return bad(format!("group {} has size 0", g + 1));
        }
        if self
            .true_beta
            .iter()
            .chain(&self.u_levels)
            .any(|v| !v.is_finite())
        {
            return bad("non-finite coefficient".into());
        }
        Ok(())
    }
}

/// Everything needed to score a run against the generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub support: Vec<usize>,
    pub support_names: Vec<String>,
    pub beta: Vec<f64>,
    pub u_levels: Vec<(String, f64)>,
    pub group_sizes: Vec<usize>,
    pub config: SimConfig,
}

pub fn feature_name(j: usize) -> String {
    format!("f{j}")
}

pub fn group_name(g: usize) -> String {
    format!("g{}", g + 1)
}

pub fn generate(config: &SimConfig) -> Result<(DataSet, GroundTruth)> {
    config.validate()?;
    let (n, p) = (config.n, config.p);
    let mut rng = RngHandle::new(config.seed, DATA_STREAM);
    // Row-major draw order so the stream does not depend on storage layout.
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng.random_range(-X_BOUND..X_BOUND);
        }
    }
    let codes: Vec<usize> = config
        .group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
        .collect();
    let support = config.support();
    let y = (0..n)
        .map(|i| {
            let eta = support
                .iter()
                .map(|&j| x[(i, j)] * config.true_beta[j])
                .sum::<f64>()
                + config.u_levels[codes[i]];
            u8::from(rng.random::<f64>() < norm_cdf(eta))
        })
        .collect();
    let levels: Vec<String> = (0..config.group_sizes.len()).map(group_name).collect();
    let labels = codes.iter().map(|&g| levels[g].clone()).collect();
    let groups = GroupLabels::with_levels(labels, levels.clone())?;
    let names = (0..p).map(feature_name).collect();
    let data = DataSet::new(y, x, names, Some(groups))?;
    let truth = GroundTruth {
        support_names: support.iter().map(|&j| feature_name(j)).collect(),
        beta: support.iter().map(|&j| config.true_beta[j]).collect(),
        support,
        u_levels: levels.into_iter().zip(config.u_levels.iter().copied()).collect(),
        group_sizes: config.group_sizes.clone(),
        config: config.clone(),
    };
    Ok((data, truth))
}

/// Half of every group to each side, chosen at random.
pub fn split_half_by_group_indices(data: &DataSet, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let groups = data
        .groups()
        .ok_or_else(|| Error::Split("dataset has no group labels".into()))?;
    let mut rng = RngHandle::new(seed, SPLIT_STREAM);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (level, name) in groups.levels().iter().enumerate() {
        let rows: Vec<usize> = (0..data.n()).filter(|&i| groups.codes()[i] == level).collect();
        if !rows.len().is_multiple_of(2) {
            return Err(Error::Split(format!("group {name} has odd size {}", rows.len())));
        }
        let picked = index::sample(&mut rng, rows.len(), rows.len() / 2);
        let mut in_train = vec![false; rows.len()];
        for k in picked {
            in_train[k] = true;
        }
        for (k, &i) in rows.iter().enumerate() {
            if in_train[k] {
                train.push(i);
            } else {
                val.push(i);
            }
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn split_half_by_group(data: &DataSet, seed: u64) -> Result<(DataSet, DataSet)> {
    let (train, val) = split_half_by_group_indices(data, seed)?;
    Ok((data.subset_rows(&train)?, data.subset_rows(&val)?))
}
