//! Selection-frequency ranking and the relative weighted consistency of
//! selected subsets across runs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::RunReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub index: usize,
    pub count: u64,
    pub frequency: f64,
}

/// Features with a nonzero selection count, by count descending then column
/// index ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRanking {
    pub ranked: Vec<RankedFeature>,
    /// Number of features never selected after burn-in.
    pub zero_count: usize,
    pub kept: usize,
    pub p: usize,
}

pub fn rank_selections(report: &RunReport) -> Result<SelectionRanking> {
    rank_counts(&report.feature_names, &report.selection_counts, report.kept)
}

pub fn rank_counts(names: &[String], counts: &[u64], kept: usize) -> Result<SelectionRanking> {
    if kept == 0 {
        return Err(Error::InvalidArgument(
            "ranking needs at least one kept iteration".into(),
        ));
    }
    if names.len() != counts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} names for {} counts",
            names.len(),
            counts.len()
        )));
    }
    let mut order: Vec<usize> = (0..counts.len()).filter(|&j| counts[j] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let ranked = order
        .iter()
        .map(|&j| RankedFeature {
            feature: names[j].clone(),
            index: j,
            count: counts[j],
            frequency: counts[j] as f64 / kept as f64,
        })
        .collect::<Vec<_>>();
    Ok(SelectionRanking {
        zero_count: counts.len() - ranked.len(),
        ranked,
        kept,
        p: counts.len(),
    })
}

impl SelectionRanking {
    /// Counts in ranking order, followed by a single 0 when some feature was
    /// never selected.
    pub fn sorted_counts(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.ranked.iter().map(|r| r.count).collect();
        if self.zero_count > 0 {
            v.push(0);
        }
        v
    }

    /// Largest drop between adjacent sorted counts, as `(cut, gap)`: keeping
    /// the top `cut` features sits right above the gap. `None` when fewer
    /// than two values exist.
    pub fn max_gap(&self) -> Option<(usize, u64)> {
        let counts = self.sorted_counts();
        counts
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i + 1, w[0] - w[1]))
            // First position wins ties.
            .fold(None, |best: Option<(usize, u64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    TopK(usize),
    MinCount(u64),
}

/// Column indices chosen by `rule`, in ranking order.
pub fn select_top(ranking: &SelectionRanking, rule: SelectionRule) -> Result<Vec<usize>> {
    match rule {
        SelectionRule::TopK(k) => {
            if k == 0 {
                return Err(Error::InvalidArgument("top-k needs k >= 1".into()));
            }
            if k > ranking.ranked.len() {
                return Err(Error::InvalidArgument(format!(
                    "top-{k} requested but only {} features were ever selected",
                    ranking.ranked.len()
                )));
            }
            Ok(ranking.ranked[..k].iter().map(|r| r.index).collect())
        }
        SelectionRule::MinCount(t) => {
            if t == 0 {
                return Err(Error::InvalidArgument("min-count threshold must be >= 1".into()));
            }
            Ok(ranking
                .ranked
                .iter()
                .take_while(|r| r.count >= t)
                .map(|r| r.index)
                .collect())
        }
    }
}

/// Number of subsets containing each feature, as `(feature, runs)` sorted by
/// runs descending then feature ascending.
pub fn overlap_table(subsets: &[BTreeSet<usize>]) -> Vec<(usize, usize)> {
    let mut freq = std::collections::BTreeMap::<usize, usize>::new();
    for s in subsets {
        for &f in s {
            *freq.entry(f).or_default() += 1;
        }
    }
    let mut v: Vec<(usize, usize)> = freq.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Relative weighted consistency of feature subsets drawn from `p_total`
/// features: 0 for the overlap expected of random subsets of the same
/// sizes, 1 for identical subsets.
///
/// With `n` subsets, `F_f` the number containing feature `f`,
/// `N = sum F_f`, `D = N mod p_total`, `H = N mod n`:
///
/// ```text
///          p (N - D + sum F_f (F_f - 1)) - N^2 + D^2
/// CW_rel = -----------------------------------------
///          p (H^2 + n (N - H) - D) - N^2 + D^2
/// ```
///
/// which is `(CW - CW_min) / (CW_max - CW_min)` for the weighted consistency
/// `CW = sum_f (F_f / N) (F_f - 1) / (n - 1)`. Clamped to `[0, 1]`; 1 when
/// the normalizing range is empty.
pub fn cw_rel(subsets: &[BTreeSet<usize>], p_total: usize) -> Result<f64> {
    if subsets.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "consistency needs at least 2 subsets, got {}",
            subsets.len()
        )));
    }
    if subsets.iter().any(BTreeSet::is_empty) {
        return Err(Error::InvalidArgument("subsets must be nonempty".into()));
    }
    if let Some(&f) = subsets.iter().flatten().find(|&&f| f >= p_total) {
        return Err(Error::InvalidArgument(format!(
            "feature {f} out of range for {p_total} features"
        )));
    }
    let n = subsets.len() as i128;
    let y = p_total as i128;
    let table = overlap_table(subsets);
    let total: i128 = table.iter().map(|&(_, c)| c as i128).sum();
    let pairs: i128 = table.iter().map(|&(_, c)| (c as i128) * (c as i128 - 1)).sum();
    let d = total % y;
    let h = total % n;
    let num = y * (total - d + pairs) - total * total + d * d;
    let den = y * (h * h + n * (total - h) - d) - total * total + d * d;
    if den == 0 {
        return Ok(1.0);
    }
    Ok((num as f64 / den as f64).clamp(0.0, 1.0))
}

/// Plain weighted consistency `CW`, without normalization.
pub fn cw(subsets: &[BTreeSet<usize>]) -> f64 {
    let n = subsets.len() as f64;
    let table = overlap_table(subsets);
    let total: f64 = table.iter().map(|&(_, c)| c as f64).sum();
    table
        .iter()
        .map(|&(_, c)| (c as f64 / total) * (c as f64 - 1.0) / (n - 1.0))
        .sum()
}
