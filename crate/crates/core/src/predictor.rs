//! Refit on a fixed feature subset and classify new observations.
//!
//! The refit runs the same Gibbs sampler with the inclusion mask frozen to
//! the chosen features plus an intercept, and reports posterior means.

use std::collections::HashMap;

use nalgebra::DMatrix;

use serde::{Deserialize, Serialize};

use crate::data::{DataSet, INTERCEPT_NAME};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{from_matrix, GammaMask, HyperParams, Mode};
use crate::rng::norm_cdf;
use crate::sampler::{run_chain_with, ChainOptions, RunReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// Selected features, without the intercept.
    pub features: Vec<String>,
    pub intercept: bool,
    /// Posterior-mean coefficients; the intercept comes first when present.
    pub beta_hat: Vec<f64>,
    /// Posterior-mean random effect per training group level.
    pub u_hat: Vec<(String, f64)>,
    /// Posterior-mean random-effect covariance.
    pub d_hat: Vec<Vec<f64>>,
    pub mode: Mode,
    pub config: HyperParams,
}

impl FittedModel {
    pub fn group_effect(&self, group: &str) -> Option<f64> {
        self.u_hat.iter().find(|(g, _)| g == group).map(|(_, u)| *u)
    }

    /// `x'beta_hat` for feature values aligned with `self.features`.
    pub fn fixed_part(&self, values: &[f64]) -> f64 {
        let (b0, rest) = if self.intercept {
            (self.beta_hat[0], &self.beta_hat[1..])
        } else {
            (0.0, &self.beta_hat[..])
        };
        b0 + rest.iter().zip(values).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Refit with `features` frozen in the model and an intercept prepended.
pub fn refit_fixed_gamma(data: &DataSet, features: &[String], hp: &HyperParams) -> Result<FittedModel> {
    Ok(refit_with_report(data, features, hp, Execution::default())?.0)
}

pub fn refit_with_report(
    data: &DataSet,
    features: &[String],
    hp: &HyperParams,
    exec: Execution,
) -> Result<(FittedModel, RunReport)> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("refit needs at least one feature".into()));
    }
    let cols = features
        .iter()
        .map(|f| {
            data.feature_index(f)
                .ok_or_else(|| Error::UnknownFeature(f.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let design = data.select_features(&cols).with_intercept()?;
    let d = design.p();
    if d >= data.n() {
        return Err(Error::InvalidArgument(format!(
            "{} features plus intercept need more than {} rows",
            features.len(),
            data.n()
        )));
    }
    let mask = GammaMask::from_indices(d, &(0..d).collect::<Vec<_>>())?;
    let opts = ChainOptions {
        exec,
        frozen_gamma: Some(mask),
        ..ChainOptions::default()
    };
    let out = run_chain_with(&design, hp, None, &opts, |_, _| {})?;
    let u_hat = match (hp.mode, design.groups()) {
        (Mode::Mixed, Some(g)) => g
            .levels()
            .iter()
            .cloned()
            .zip(out.means.u.iter().copied())
            .collect(),
        (Mode::Mixed, None) => (0..out.means.u.len())
            .map(|l| (format!("z{l}"), out.means.u[l]))
            .collect(),
        (Mode::FixedEffectsOnly, _) => Vec::new(),
    };
    let model = FittedModel {
        features: features.to_vec(),
        intercept: true,
        beta_hat: out.means.beta.iter().copied().collect(),
        u_hat,
        d_hat: from_matrix(&out.means.d_cov),
        mode: hp.mode,
        config: hp.clone(),
    };
    debug_assert_eq!(design.feature_names()[0], INTERCEPT_NAME);
    Ok((model, out.report))
}

/// Probability band inside which no class is issued.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub lo: f64,
    pub hi: f64,
}

impl Zone {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&lo) || !(hi > 0.5 && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "undetermined zone needs 0 <= lo < 0.5 < hi <= 1, got ({lo}, {hi})"
            )));
        }
        Ok(Zone { lo, hi })
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    Undetermined,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub prob_positive: f64,
    pub label: Label,
    pub used_random_effect: bool,
}

/// Label for a probability; exactly 0.5 is negative.
pub fn classify(p: f64, zone: Option<Zone>) -> Label {
    if zone.is_some_and(|z| z.contains(p)) {
        Label::Undetermined
    } else if p > 0.5 {
        Label::Positive
    } else {
        Label::Negative
    }
}

fn predict_aligned(
    model: &FittedModel,
    values: &[f64],
    group: Option<&str>,
    zone: Option<Zone>,
) -> Prediction {
    let effect = group.and_then(|g| model.group_effect(g));
    let eta = model.fixed_part(values) + effect.unwrap_or(0.0);
    let p = norm_cdf(eta);
    Prediction {
        prob_positive: p,
        label: classify(p, zone),
        used_random_effect: effect.is_some(),
    }
}

/// `Phi(x'beta_hat + U_group)` when the group is known to the model,
/// `Phi(x'beta_hat)` otherwise.
pub fn predict(
    model: &FittedModel,
    x: &HashMap<String, f64>,
    group: Option<&str>,
    zone: Option<Zone>,
) -> Result<Prediction> {
    if let Some(extra) = x.keys().find(|k| !model.features.contains(k)) {
        return Err(Error::UnknownFeature(extra.clone()));
    }
    let values = model
        .features
        .iter()
        .map(|f| x.get(f).copied().ok_or_else(|| Error::MissingFeature(f.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(predict_aligned(model, &values, group, zone))
}

/// Column index in `names` of each model feature.
fn aligned_columns(model: &FittedModel, names: &[String]) -> Result<Vec<usize>> {
    model
        .features
        .iter()
        .map(|f| {
            names
                .iter()
                .position(|n| n == f)
                .ok_or_else(|| Error::MissingFeature(f.clone()))
        })
        .collect()
}

/// Predictions for every row of `x`, whose columns are named by `names`.
/// `groups` holds one label per row; labels unknown to the model fall back
/// to the fixed part.
pub fn predict_rows(
    model: &FittedModel,
    x: &DMatrix<f64>,
    names: &[String],
    groups: Option<&[String]>,
    zone: Option<Zone>,
    exec: Execution,
) -> Result<Vec<Prediction>> {
    let cols = aligned_columns(model, names)?;
    if let Some(g) = groups {
        if g.len() != x.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} group labels for {} rows",
                g.len(),
                x.nrows()
            )));
        }
    }
    Ok(exec::map_range(exec, x.nrows(), 256, |i| {
        let values: Vec<f64> = cols.iter().map(|&j| x[(i, j)]).collect();
        predict_aligned(model, &values, groups.map(|g| g[i].as_str()), zone)
    }))
}

/// Predictions for every row of a dataset. Group labels are used only when
/// `use_random_effects` is set.
pub fn predict_dataset(
    model: &FittedModel,
    data: &DataSet,
    zone: Option<Zone>,
    use_random_effects: bool,
    exec: Execution,
) -> Result<Vec<Prediction>> {
    let groups = data.groups().filter(|_| use_random_effects).map(|g| g.labels());
    predict_rows(model, data.x(), data.feature_names(), groups, zone, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub undetermined: usize,
    pub misclassified: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub undetermined_fraction: f64,
}

/// Confusion counts from labels and truth; undetermined rows are excluded
/// from the confusion matrix.
pub fn metrics(predictions: &[Prediction], y: &[u8]) -> Metrics {
    let mut m = Metrics {
        n: y.len(),
        true_positive: 0,
        true_negative: 0,
        false_positive: 0,
        false_negative: 0,
        undetermined: 0,
        misclassified: 0,
        sensitivity: None,
        specificity: None,
        undetermined_fraction: 0.0,
    };
    for (pred, &yi) in predictions.iter().zip(y) {
        match (pred.label, yi) {
            (Label::Undetermined, _) => m.undetermined += 1,
            (Label::Positive, 1) => m.true_positive += 1,
            (Label::Positive, _) => m.false_positive += 1,
            (Label::Negative, 1) => m.false_negative += 1,
            (Label::Negative, _) => m.true_negative += 1,
        }
    }
    m.misclassified = m.false_positive + m.false_negative;
    let pos = m.true_positive + m.false_negative;
    let neg = m.true_negative + m.false_positive;
    m.sensitivity = (pos > 0).then(|| m.true_positive as f64 / pos as f64);
    m.specificity = (neg > 0).then(|| m.true_negative as f64 / neg as f64);
    m.undetermined_fraction = if m.n > 0 {
        m.undetermined as f64 / m.n as f64
    } else {
        0.0
    };
    m
}

pub fn evaluate(
    model: &FittedModel,
    data: &DataSet,
    zone: Option<Zone>,
    use_random_effects: bool,
) -> Result<Metrics> {
    let preds = predict_dataset(model, data, zone, use_random_effects, Execution::default())?;
    Ok(metrics(&preds, data.y()))
}
