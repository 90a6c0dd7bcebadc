//! Attribute-only maximum a posteriori alignment.
//!
//! With user-user edges discarded, each graph is a user-attribute incidence
//! matrix and the likelihood of a permutation factorises over matched pairs.
//! The MAP permutation therefore maximises `Σ_i w[i][π(i)]`, where `w[i][j]`
//! is the log-likelihood ratio of "`i` and `j` are the same user" against
//! "independent users", a linear assignment problem.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph_model::{AttributedGraphPair, ModelParams, Permutation};

/// Joint law of the two attribute indicators of a truly matched pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointProbabilities {
    pub q11: f64,
    pub q10: f64,
    pub q01: f64,
    pub q00: f64,
}

impl JointProbabilities {
    pub fn from_params(params: &ModelParams) -> Self {
        let (q, s) = (params.q_a, params.s_a());
        let q11 = q * s;
        let q10 = q * (1.0 - s);
        JointProbabilities {
            q11,
            q10,
            q01: q10,
            q00: 1.0 - 2.0 * q + q11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteWeights {
    n: usize,
    w: Vec<f64>,
    pub probs: JointProbabilities,
}

impl BipartiteWeights {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }
}

/// `n·log(p/q)` with the convention that a zero count contributes nothing.
fn count_term(count: usize, log_ratio: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        count as f64 * log_ratio
    }
}

/// Per-pair log-likelihood ratios.
///
/// With `N11` shared attributes, `N10`/`N01` attributes on one side only and
/// `N00` on neither side,
/// `w = N11 ln(q11/q_a²) + (N10+N01) ln(q10/(q_a(1−q_a))) + N00 ln(q00/(1−q_a)²)`.
/// When `ρ_a = 1`, `q10 = 0` and any pair with a one-sided attribute gets `−∞`.
pub fn pair_weights(pair: &AttributedGraphPair) -> Result<BipartiteWeights> {
    let params = &pair.params;
    if params.m == 0 {
        return Err(Error::param("bipartite alignment needs at least one attribute"));
    }
    let probs = JointProbabilities::from_params(params);
    if !(probs.q00 > 0.0) || probs.q10 < 0.0 {
        return Err(Error::param(format!("degenerate joint law {probs:?}")));
    }
    let q = params.q_a;
    let l11 = (probs.q11 / (q * q)).ln();
    let l10 = (probs.q10 / (q * (1.0 - q))).ln();
    let l00 = (probs.q00 / ((1.0 - q) * (1.0 - q))).ln();

    let (n, m) = (params.n, params.m);
    let deg1: Vec<usize> = (0..n).map(|i| pair.g1.attr_degree(i)).collect();
    let deg2: Vec<usize> = (0..n).map(|j| pair.g2.attr_degree(j)).collect();
    let mut w = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let n11 = pair.g1.common_attributes(i, &pair.g2, j);
            let n10 = deg1[i] - n11;
            let n01 = deg2[j] - n11;
            let n00 = m - n11 - n10 - n01;
            w.push(count_term(n11, l11) + count_term(n10 + n01, l10) + count_term(n00, l00));
        }
    }
    Ok(BipartiteWeights { n, w, probs })
}

/// Permutation maximising `Σ_i w[i][π(i)]` for a row-major `n × n` matrix.
///
/// Entries may be `−∞` to forbid a pair. Forbidden entries are replaced by
/// `−(n + 1)(max|w| + 1)`, which is below any total that avoids them, and the
/// result is rejected if the optimum still uses one. Ties resolve towards the
/// lowest column index, processing rows in order.
pub fn max_weight_assignment(w: &[f64], n: usize) -> Result<Permutation> {
    if w.len() != n * n {
        return Err(Error::DimensionMismatch(format!("{} entries for an {n}x{n} matrix", w.len())));
    }
    if let Some(pos) = w.iter().position(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::param(format!("invalid weight at ({}, {})", pos / n, pos % n)));
    }
    for i in 0..n {
        if w[i * n..(i + 1) * n].iter().all(|x| x.is_infinite()) {
            return Err(Error::Infeasible(format!("row {i} has no allowed column")));
        }
    }
    let max_abs = w
        .iter()
        .filter(|x| x.is_finite())
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    let sentinel = -((n as f64) + 1.0) * (max_abs + 1.0);
    let cost: Vec<f64> = w
        .iter()
        .map(|&x| if x.is_finite() { -x } else { -sentinel })
        .collect();

    let assignment = hungarian_min(&cost, n);
    if let Some(i) = (0..n).find(|&i| w[i * n + assignment[i]].is_infinite()) {
        return Err(Error::Infeasible(format!(
            "no perfect matching avoids forbidden pairs (row {i})"
        )));
    }
    Permutation::new(assignment)
}

/// Shortest augmenting path Hungarian method with potentials, `O(n³)`.
fn hungarian_min(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays; column 0 is the virtual source
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

pub fn assignment_weight(w: &[f64], n: usize, perm: &Permutation) -> f64 {
    (0..n).map(|i| w[i * n + perm.apply(i)]).sum()
}

pub fn align_bipartite_map(pair: &AttributedGraphPair) -> Result<Permutation> {
    let weights = pair_weights(pair)?;
    max_weight_assignment(&weights.w, weights.n)
}

/// `m (√(q11 q00) − √(q01 q10))² − ln n`; positive values predict exact recovery.
pub fn bipartite_recovery_margin(params: &ModelParams) -> Result<f64> {
    if params.m == 0 {
        return Err(Error::param("margin needs at least one attribute"));
    }
    let p = JointProbabilities::from_params(params);
    let gap = (p.q11 * p.q00).sqrt() - (p.q01 * p.q10).sqrt();
    Ok(params.m as f64 * gap * gap - (params.n as f64).ln())
}
