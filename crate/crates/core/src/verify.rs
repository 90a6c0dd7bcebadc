//! Built-in oracle and property checks, small enough to run from the command line.

use rand::Rng;
use serde::Serialize;

use crate::analysis::{cross_moment_enumerate, cross_moment_exact};
use crate::bipartite_map::{assignment_weight, max_weight_assignment};
use crate::combinatorics::{binomial, factorial};
use crate::error::Result;
use crate::graph_model::{generate_pair, model_rng, ModelParams, Permutation};
use crate::pair_io::{format_pair, parse_pair};
use crate::refinement::{f_eval, solve_f_upper};
use crate::tree_counting::{normalize, path_weight_table, tree_count, tree_count_bruteforce};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn run_verify(seed: u64) -> Result<VerifyReport> {
    let checks = vec![
        counting_oracle(seed)?,
        cross_moments()?,
        root_solver()?,
        assignment_oracle(seed)?,
        pair_file_round_trip(seed)?,
        generation_determinism(seed)?,
    ];
    Ok(VerifyReport { seed, checks })
}

fn counting_oracle(seed: u64) -> Result<VerifyCheck> {
    let mut rng = model_rng(seed);
    let instances = 60;
    let mut worst = 0.0f64;
    let mut bad_family = 0;
    for t in 0..instances {
        let n = rng.gen_range(2..=8);
        let m = rng.gen_range(1..=5);
        let k = rng.gen_range(1..=3usize).min(m).min(n - 1);
        let params = ModelParams::new(
            n,
            m,
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.0..=1.0),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.0..=1.0),
        )?;
        let pair = generate_pair(&params, seed.wrapping_add(t))?;
        let norm = normalize(&pair.g1, &params)?;
        let root = rng.gen_range(0..n);
        let attrs: Vec<usize> = rand::seq::index::sample(&mut rng, m, k).into_vec();
        let fast = tree_count(&path_weight_table(&norm, root)?, &attrs)?;
        let slow = tree_count_bruteforce(&norm, root, &attrs)?;
        worst = worst.max(rel_err(fast, slow.value));
        if slow.trees as f64 != binomial(n - 1, k) * factorial(k) {
            bad_family += 1;
        }
    }
    Ok(VerifyCheck {
        name: "tree-count-oracle",
        pass: worst <= 1e-9 && bad_family == 0,
        detail: format!("{instances} instances, worst relative error {worst:.3e}, family size mismatches {bad_family}"),
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

fn cross_moments() -> Result<VerifyCheck> {
    let pairs = [(1, 1), (2, 0), (0, 2), (2, 1), (1, 2), (2, 2)];
    let mut worst = 0.0f64;
    for q in [0.1f64, 0.3, 0.5, 0.7, 0.9] {
        for rho in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
            let sigma = (q * (1.0 - q)).sqrt();
            for (a, b) in pairs {
                let closed = cross_moment_exact(q, rho, a, b)?;
                let direct = cross_moment_enumerate(q, rho, a, b)? / sigma.powi((a + b) as i32);
                worst = worst.max((closed - direct).abs());
            }
        }
    }
    Ok(VerifyCheck {
        name: "cross-moments",
        pass: worst <= 1e-12,
        detail: format!("worst absolute gap {worst:.3e}"),
    })
}

fn root_solver() -> Result<VerifyCheck> {
    let mut worst = 0.0f64;
    for e in -80..=30 {
        let y = 10f64.powf(e as f64 / 10.0);
        let x = solve_f_upper(y)?;
        worst = worst.max((f_eval(x)? - y).abs() / y.max(1.0));
    }
    let e_gap = (solve_f_upper(1.0)? - std::f64::consts::E).abs();
    Ok(VerifyCheck {
        name: "root-solver",
        pass: worst <= 1e-12 && e_gap <= 1e-9,
        detail: format!("worst scaled residual {worst:.3e}, |solve(1) - e| = {e_gap:.3e}"),
    })
}

fn brute_force_best(w: &[f64], n: usize) -> f64 {
    fn go(w: &[f64], n: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == n {
            *best = best.max(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(w, n, row + 1, used, acc + w[row * n + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(w, n, 0, &mut vec![false; n], 0.0, &mut best);
    best
}

fn assignment_oracle(seed: u64) -> Result<VerifyCheck> {
    let mut rng = model_rng(seed ^ 0xA551);
    let instances = 40;
    let mut mismatches = 0;
    for _ in 0..instances {
        let n = rng.gen_range(1..=6);
        let w: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let perm: Permutation = max_weight_assignment(&w, n)?;
        if (assignment_weight(&w, n, &perm) - brute_force_best(&w, n)).abs() > 1e-9 {
            mismatches += 1;
        }
    }
    Ok(VerifyCheck {
        name: "assignment-oracle",
        pass: mismatches == 0,
        detail: format!("{instances} instances, {mismatches} mismatches"),
    })
}

fn pair_file_round_trip(seed: u64) -> Result<VerifyCheck> {
    let params = ModelParams::new(25, 7, 0.3, 0.7, 0.4, 0.6)?;
    let pair = generate_pair(&params, seed)?;
    let text = format_pair(&pair);
    let back = parse_pair(&text)?;
    let pass = back == pair && format_pair(&back) == text;
    Ok(VerifyCheck {
        name: "pair-file-round-trip",
        pass,
        detail: format!("{} bytes", text.len()),
    })
}

fn generation_determinism(seed: u64) -> Result<VerifyCheck> {
    let params = ModelParams::new(40, 10, 0.3, 0.8, 0.3, 0.8)?;
    let a = format_pair(&generate_pair(&params, seed)?);
    let b = format_pair(&generate_pair(&params, seed)?);
    let c = format_pair(&generate_pair(&params, seed.wrapping_add(1))?);
    Ok(VerifyCheck {
        name: "generation-determinism",
        pass: a == b && a != c,
        detail: "same seed reproduces, next seed differs".to_string(),
    })
}
