//! Acceptance criteria. Each prints one PASS/FAIL line; the process fails if
//! any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::time::{Duration, Instant};

use common::{brute_projection, combinations, random_dataset, random_indices, random_vector};
use nalgebra::DVector;
use pmbvs::conditionals::{
    log_acceptance, log_marginal_gamma, projection_quad_form, residual, sample_latent, update_covariance,
    GammaTarget, GramCache,
};
use pmbvs::data::write_csv;
use pmbvs::exec::{map_range, Execution};
use pmbvs::model::{CovarianceStructure, GammaMask, HyperParams, Mode};
use pmbvs::predictor::{evaluate, refit_fixed_gamma};
use pmbvs::rng::{norm_cdf, norm_pdf, sample_truncated_normal, RngHandle, Truncation};
use pmbvs::sampler::{mh_run, propose_swap, run_chain, MhStats, RunReport};
use pmbvs::selection::{cw_rel, rank_selections, select_top, SelectionRule};
use pmbvs::simgen::{generate, split_half_by_group, Preset, SimConfig};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn check(id: &str, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let elapsed = start.elapsed();
    let in_time = elapsed < budget;
    let pass = o.pass && in_time;
    println!(
        "{} {id} {name}: {} [{:.1}s, budget {}s{}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { ", over budget" }
    );
    pass
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

/// Exact mask distribution by enumeration against MH visit frequencies.
fn ac1() -> Outcome {
    let (n, p, d, steps) = (30, 10, 2, 200_000);
    let mut rng = RngHandle::new(101, 0);
    let data = random_dataset(&mut rng, n, p, Some(3));
    let latent = random_vector(&mut rng, n, 1.0);
    let u = random_vector(&mut rng, 3, 0.5);
    let r = residual(&data, &latent, &u);
    let c = 50.0;
    let coef = c / (2.0 * (1.0 + c));
    let masks = combinations(p, d);
    let logw: Vec<f64> = masks
        .iter()
        .map(|m| coef * brute_projection(&data, m, &r).expect("full-rank pair"))
        .collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();

    let gram = GramCache::new(&data, Execution::Sequential);
    let target = GammaTarget::new(&data, &gram, &r, c, Execution::Sequential);
    let mut gamma = GammaMask::random(&mut rng, p, d).unwrap();
    let mut stats = MhStats::default();
    let mut counts = vec![0u64; masks.len()];
    for _ in 0..steps {
        mh_run(&mut rng, &target, &mut gamma, 2, 1, &mut stats).unwrap();
        counts[masks.iter().position(|m| *m == gamma.indices()).unwrap()] += 1;
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(&w)
            .map(|(&k, wi)| (k as f64 / steps as f64 - wi / z).abs())
            .sum::<f64>();
    let max_p = w.iter().cloned().fold(0.0, f64::max) / z;
    outcome(
        masks.len() == 45 && tv < 0.05,
        format!(
            "45 masks, TV = {tv:.4} (< 0.05), largest mass {max_p:.3}, acceptance {:.3}",
            stats.rate()
        ),
    )
}

fn ac2() -> Outcome {
    let draws = 100_000;
    let mut rng = RngHandle::new(102, 0);
    // Diagonal structure with two blocks.
    let u = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
    let (a, b) = (2.0, 3.0);
    let cov = CovarianceStructure::diagonal(a, b, &[2, 2]);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        let d = update_covariance(&mut rng, &u, &cov).unwrap();
        s1 += d[(0, 0)];
        s2 += d[(2, 2)];
    }
    let ig_mean = |q: f64, ss: f64| (ss / 2.0 + b) / (q / 2.0 + a - 1.0);
    let want1 = ig_mean(2.0, 5.0);
    let want2 = ig_mean(2.0, 1.25);
    let e1 = (s1 / draws as f64 - want1).abs() / want1;
    let e2 = (s2 / draws as f64 - want2).abs() / want2;

    // One-dimensional inverse-Wishart: IW(psi + u^2, m + 1) = IG((m + 1)/2, (psi + u^2)/2).
    let (psi, m, u1) = (1.0, 5.0, 1.5);
    let iw = CovarianceStructure::general(&nalgebra::DMatrix::from_element(1, 1, psi), m);
    let uq = DVector::from_element(1, u1);
    let mut s3 = 0.0;
    for _ in 0..draws {
        s3 += update_covariance(&mut rng, &uq, &iw).unwrap()[(0, 0)];
    }
    let want3 = ((psi + u1 * u1) / 2.0) / ((m + 1.0) / 2.0 - 1.0);
    let e3 = (s3 / draws as f64 - want3).abs() / want3;
    outcome(
        e1 < 0.02 && e2 < 0.02 && e3 < 0.02,
        format!(
            "diagonal block errors {:.3}% and {:.3}%, q=1 inverse-Wishart error {:.3}% (< 2%)",
            100.0 * e1,
            100.0 * e2,
            100.0 * e3
        ),
    )
}

/// Closed-form mean and variance of N(mu, 1) truncated to one side of 0.
fn truncated_moments(mu: f64, side: Truncation) -> (f64, f64) {
    match side {
        Truncation::LeftAtZero => {
            let alpha = -mu;
            let lambda = norm_pdf(alpha) / norm_cdf(-alpha);
            (mu + lambda, 1.0 + alpha * lambda - lambda * lambda)
        }
        Truncation::RightAtZero => {
            let beta = -mu;
            let ratio = norm_pdf(beta) / norm_cdf(beta);
            (mu - ratio, 1.0 - beta * ratio - ratio * ratio)
        }
    }
}

fn ac3() -> Outcome {
    let draws = 100_000;
    let mut worst: f64 = 0.0;
    let mut worst_case = String::new();
    let mut violations = 0;
    let mut ok = true;
    for (k, &mu) in [-10.0, -4.0, 0.0, 3.0].iter().enumerate() {
        for (s, side) in [Truncation::LeftAtZero, Truncation::RightAtZero]
            .into_iter()
            .enumerate()
        {
            let mut rng = RngHandle::new(103, (2 * k + s) as u64);
            let (mut sum, mut sum2) = (0.0, 0.0);
            for _ in 0..draws {
                let v = sample_truncated_normal(&mut rng, mu, side).unwrap();
                let bad = match side {
                    Truncation::LeftAtZero => v <= 0.0,
                    Truncation::RightAtZero => v > 0.0,
                };
                violations += bad as usize;
                sum += v;
                sum2 += v * v;
            }
            let mean = sum / draws as f64;
            let var = (sum2 - draws as f64 * mean * mean) / (draws as f64 - 1.0);
            let (m0, v0) = truncated_moments(mu, side);
            for (what, got, want) in [("mean", mean, m0), ("variance", var, v0)] {
                let rel = (got - want).abs() / want.abs();
                if rel >= 0.01 {
                    ok = false;
                }
                if rel > worst {
                    worst = rel;
                    worst_case = format!("{what} at mu = {mu}, {side:?}");
                }
            }
        }
    }
    outcome(
        ok && violations == 0,
        format!(
            "8 cases x 1e5 draws, worst relative error {:.3}% ({worst_case}), {violations} sign violations",
            100.0 * worst
        ),
    )
}

fn selection_config(seed: u64, mode: Mode) -> HyperParams {
    HyperParams {
        c: 50.0,
        d: 5,
        r: 2,
        k: 500,
        total_iters: 3000,
        burn_in: 1500,
        seed,
        mode,
        ..HyperParams::default()
    }
}

fn top5(report: &RunReport) -> Vec<usize> {
    select_top(&rank_selections(report).unwrap(), SelectionRule::TopK(5)).unwrap()
}

fn ac4() -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let hits = map_range(Execution::default(), seeds.len(), 1, |i| {
        let seed = seeds[i];
        let (data, truth) = generate(&SimConfig::desk(Preset::U1, 1000 + seed).unwrap()).unwrap();
        let report = run_chain(&data, &selection_config(seed, Mode::Mixed), None).unwrap();
        let top: BTreeSet<usize> = top5(&report).into_iter().collect();
        top == truth.support.iter().copied().collect()
    });
    let n_hits = hits.iter().filter(|&&h| h).count();
    outcome(
        n_hits >= 8,
        format!("true support is the top 5 in {n_hits}/10 seeds (>= 8)"),
    )
}

fn ac5() -> Outcome {
    let seeds: Vec<u64> = (0..5).collect();
    let results = map_range(Execution::default(), seeds.len(), 1, |i| {
        let seed = seeds[i];
        let (data, _) = generate(&SimConfig::desk(Preset::U5, 2000 + seed).unwrap()).unwrap();
        let (train, val) = split_half_by_group(&data, seed).unwrap();
        let misclassified = |mode: Mode| {
            let report = run_chain(&train, &selection_config(seed, mode), None).unwrap();
            let names: Vec<String> = top5(&report)
                .into_iter()
                .map(|j| train.feature_names()[j].clone())
                .collect();
            let refit_hp = HyperParams {
                total_iters: 2000,
                burn_in: 1000,
                seed,
                mode,
                ..HyperParams::default()
            };
            let model = refit_fixed_gamma(&train, &names, &refit_hp).unwrap();
            evaluate(&model, &val, None, mode == Mode::Mixed)
                .unwrap()
                .misclassified
        };
        (misclassified(Mode::Mixed), misclassified(Mode::FixedEffectsOnly))
    });
    let median = |mut v: Vec<usize>| {
        v.sort_unstable();
        v[v.len() / 2]
    };
    let mixed: Vec<usize> = results.iter().map(|r| r.0).collect();
    let fixed: Vec<usize> = results.iter().map(|r| r.1).collect();
    let better = results.iter().filter(|(m, f)| m < f).count();
    let (mm, mf) = (median(mixed.clone()), median(fixed.clone()));
    outcome(
        mm <= 25 && mf >= 30 && better >= 4,
        format!(
            "validation errors mixed {mixed:?} (median {mm} <= 25), fixed {fixed:?} (median {mf} >= 30), mixed better in {better}/5 (>= 4)"
        ),
    )
}

fn ac6() -> Outcome {
    let same: Vec<BTreeSet<usize>> = vec![[1, 5, 9].into(); 15];
    let identical = cw_rel(&same, 4000).unwrap();
    let disjoint: Vec<BTreeSet<usize>> = (0..15).map(|i| (3 * i..3 * i + 3).collect()).collect();
    let zero = cw_rel(&disjoint, 4000).unwrap();
    let mut rng = RngHandle::new(106, 0);
    let trials = 100;
    let mean = (0..trials)
        .map(|_| {
            let runs: Vec<BTreeSet<usize>> = (0..15)
                .map(|_| random_indices(&mut rng, 4000, 3).into_iter().collect())
                .collect();
            cw_rel(&runs, 4000).unwrap()
        })
        .sum::<f64>()
        / trials as f64;
    outcome(
        (identical - 1.0).abs() <= 1e-12 && zero.abs() <= 1e-12 && mean < 0.15,
        format!("identical {identical}, disjoint {zero}, random mean {mean:.5} (< 0.15)"),
    )
}

fn ac7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = generate(&SimConfig::desk(Preset::U2, 7).unwrap()).unwrap();
    let csv = dir.path().join("data.csv");
    write_csv(&data, &csv, None).unwrap();
    let run = |out: &str| {
        let out = dir.path().join(out);
        let args = [
            "pmbvs",
            "select",
            "--data",
            csv.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--num-selected",
            "5",
            "--swap",
            "2",
            "--mh-iters",
            "200",
            "--iters",
            "1500",
            "--burnin",
            "500",
            "--seed",
            "11",
        ];
        let start = Instant::now();
        let code = pmbvs::cli::run(args);
        (code, out, start.elapsed().as_secs_f64())
    };
    let (c1, out1, t1) = run("first");
    let (c2, out2, t2) = run("second");
    if c1 != 0 || c2 != 0 {
        return outcome(false, format!("select exited with {c1} and {c2}"));
    }
    let a = fs::read(out1.join("selection_counts.csv")).unwrap();
    let b = fs::read(out2.join("selection_counts.csv")).unwrap();
    let read_wall = |o: &std::path::Path| {
        pmbvs::io::read_report(&o.join("report.json"))
            .unwrap()
            .wall_time_secs
    };
    let chain = read_wall(&out1).max(read_wall(&out2));
    outcome(
        a == b && t1 + t2 < 2.0 * chain + 1.0,
        format!(
            "selection_counts.csv identical: {} ({} bytes); two runs {:.2}s vs single chain {chain:.2}s",
            a == b,
            a.len(),
            t1 + t2
        ),
    )
}

fn ac8() -> Outcome {
    let cases = 1000;
    let mut rng = RngHandle::new(108, 0);
    let (mut popcount, mut signs, mut bounds, mut consistency) = (0, 0, 0, 0);
    for _ in 0..cases {
        let p = rng.random_range(3..15);
        let d = rng.random_range(1..p);
        let n = rng.random_range(d + 2..d + 30);
        let groups = rng.random_range(1..4);
        let data = random_dataset(&mut rng, n, p, Some(groups));
        let q = data.q();
        let cur = GammaMask::from_indices(p, &random_indices(&mut rng, p, d)).unwrap();
        let r = 2 * rng.random_range(1..=d.min(p - d));
        let prop = propose_swap(&mut rng, &cur, r).unwrap();
        if prop.d() != d || prop.hamming(&cur) != r {
            popcount += 1;
        }

        let scale = rng.random_range(0.0..10.0);
        let xb = random_vector(&mut rng, n, scale);
        let u = random_vector(&mut rng, q, scale);
        let latent = sample_latent(&mut rng, &data, &xb, &u).unwrap();
        if data
            .y()
            .iter()
            .zip(latent.iter())
            .any(|(&y, &l)| (y == 1) != (l > 0.0))
        {
            signs += 1;
        }

        let res = residual(&data, &latent, &u);
        let rr = res.norm_squared();
        let quad = projection_quad_form(&data, &cur, &res).unwrap();
        if !(quad >= -1e-9 * rr && quad <= rr * (1.0 + 1e-9)) {
            bounds += 1;
        }

        let c = rng.random_range(0.1..1000.0);
        let hp = HyperParams {
            c,
            pi: rng.random_range(0.05..0.95),
            d,
            r,
            ..HyperParams::default()
        };
        let a = log_acceptance(&data, &cur, &prop, &latent, &u, c).unwrap();
        let diff = log_marginal_gamma(&data, &prop, &latent, &u, &hp).unwrap()
            - log_marginal_gamma(&data, &cur, &latent, &u, &hp).unwrap();
        if (a - diff.min(0.0)).abs() > 1e-9 * (1.0 + diff.abs()) {
            consistency += 1;
        }
    }
    outcome(
        popcount + signs + bounds + consistency == 0,
        format!(
            "{cases} cases each; failures: popcount {popcount}, latent signs {signs}, projection bounds {bounds}, acceptance consistency {consistency}"
        ),
    )
}

fn main() {
    let results = [
        check("AC1", "enumeration oracle", secs(60), ac1),
        check("AC2", "conjugacy", secs(30), ac2),
        check("AC3", "truncated-normal moments", secs(30), ac3),
        check("AC4", "support recovery", secs(600), ac4),
        check(
            "AC5",
            "mixed vs fixed under strong random effects",
            secs(1200),
            ac5,
        ),
        check("AC6", "CW_rel boundaries", secs(5), ac6),
        check("AC7", "determinism", secs(600), ac7),
        check("AC8", "structural invariants", secs(60), ac8),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
