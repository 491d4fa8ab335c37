#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pmbvs::data::{DataSet, GroupLabels};
use pmbvs::rng::RngHandle;
use rand::Rng;

/// Gaussian features, balanced 0/1 response, optional round-robin groups.
pub fn random_dataset(rng: &mut RngHandle, n: usize, p: usize, groups: Option<usize>) -> DataSet {
    let x = DMatrix::from_fn(n, p, |_, _| rng.standard_normal());
    let y = (0..n).map(|i| (i % 2) as u8).collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let labels =
        groups.map(|q| GroupLabels::from_labels((0..n).map(|i| format!("g{}", i % q)).collect()).unwrap());
    DataSet::new(y, x, names, labels).unwrap()
}

pub fn random_vector(rng: &mut RngHandle, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.standard_normal())
}

/// `d` distinct sorted indices below `p`.
pub fn random_indices(rng: &mut RngHandle, p: usize, d: usize) -> Vec<usize> {
    let mut v = rand::seq::index::sample(rng, p, d).into_vec();
    v.sort_unstable();
    v
}

pub fn coin(rng: &mut RngHandle) -> bool {
    rng.random::<bool>()
}

/// `r' X_g (X_g'X_g)^{-1} X_g' r` through an explicit inverse.
pub fn brute_projection(data: &DataSet, cols: &[usize], r: &DVector<f64>) -> Option<f64> {
    let xg = DMatrix::from_fn(data.n(), cols.len(), |i, k| data.x()[(i, cols[k])]);
    let inv = (xg.transpose() * &xg).try_inverse()?;
    let proj = &xg * inv * xg.transpose();
    Some((r.transpose() * proj * r)[(0, 0)])
}

/// All `k`-subsets of `0..p` in lexicographic order.
pub fn combinations(p: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, p: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..p {
            cur.push(j);
            go(j + 1, p, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, p, k, &mut Vec::new(), &mut out);
    out
}
