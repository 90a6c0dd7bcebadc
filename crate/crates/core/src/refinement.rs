//! Greedy completion of a partial alignment.
//!
//! Starting from a trusted partial mapping, an unmatched pair `(i, j)` is
//! accepted once `i` and `j` have enough matched common user neighbours (and,
//! in the attribute-rich variant, alternatively enough common attributes).
//! Thresholds come from inverting `f(x) = x ln x − x + 1` on `(1, ∞)`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::graph_model::{AttributedGraphPair, ModelParams, PartialMapping};

pub fn f_eval(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::param(format!("f is defined for finite x > 0, got {x}")));
    }
    Ok(x * x.ln() - x + 1.0)
}

/// The unique `γ > 1` with `f(γ) = y`.
///
/// Brackets the root by doubling, then bisects until the bracket collapses to
/// adjacent floats and returns whichever end has the smaller residual.
pub fn solve_f_upper(y: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::param(format!("target y = {y} must be finite and positive")));
    }
    let f = |x: f64| x * x.ln() - x + 1.0;
    let mut lo = 1.0f64;
    let mut hi = 2.0f64;
    while f(hi) < y {
        lo = hi;
        hi *= 2.0;
    }
    loop {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // f(lo) < y <= f(hi); lo may still be exactly 1.0 when y is tiny
    let best = if lo > 1.0 && (f(lo) - y).abs() < (f(hi) - y).abs() {
        lo
    } else {
        hi
    };
    Ok(best)
}

/// Threshold parameters for both refinement variants.
///
/// `gamma1` and `gamma2` solve `f(γ) = 3 ln n / ((n − 2) q_u²)` and `gamma3`
/// solves `f(γ) = 3 ln n / (m q_a²)`. A degenerate denominator (`n = 2` or
/// `m = 0`) makes the corresponding clause unreachable and the γ is `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineThresholds {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl RefineThresholds {
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let log_n = (params.n as f64).ln();
        let user_scale = (params.n - 2) as f64 * params.q_u * params.q_u;
        let attr_scale = params.m as f64 * params.q_a * params.q_a;
        let solve = |scale: f64| -> Result<f64> {
            if scale > 0.0 {
                solve_f_upper(3.0 * log_n / scale)
            } else {
                Ok(f64::INFINITY)
            }
        };
        let gamma_user = solve(user_scale)?;
        Ok(RefineThresholds {
            gamma1: gamma_user,
            gamma2: gamma_user,
            gamma3: solve(attr_scale)?,
        })
    }

    pub fn user_threshold(&self, gamma: f64, params: &ModelParams) -> f64 {
        gamma * (params.n as f64 - 2.0) * params.q_u * params.q_u
    }

    pub fn attr_threshold(&self, params: &ModelParams) -> f64 {
        if params.m == 0 {
            return f64::INFINITY;
        }
        self.gamma3 * params.m as f64 * params.q_a * params.q_a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    AttrSparse,
    AttrRich,
}

/// `AttrRich` iff `m q_a ρ_a ≥ ln n`; the boundary itself counts as rich.
pub fn select_regime(params: &ModelParams) -> Regime {
    let signal = params.m as f64 * params.q_a * params.rho_a;
    if signal >= (params.n as f64).ln() {
        Regime::AttrRich
    } else {
        Regime::AttrSparse
    }
}

/// `#{u ∈ dom π : (i,u) ∈ G₁ and (j, π(u)) ∈ G₂}`.
pub fn count_common_user_neighbors(
    pair: &AttributedGraphPair,
    mapping: &PartialMapping,
    i: usize,
    j: usize,
) -> Result<usize> {
    let n = pair.n();
    check_index("user", i, n)?;
    check_index("user", j, n)?;
    if mapping.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "mapping over {} users, pair has {n}",
            mapping.n()
        )));
    }
    Ok(pair
        .g1
        .user_neighbors(i)
        .filter_map(|u| mapping.get(u))
        .filter(|&v| pair.g2.has_user_edge(j, v))
        .count())
}

/// `#{a : (i,a) ∈ G₁ and (j,a) ∈ G₂}`.
pub fn count_common_attribute_neighbors(pair: &AttributedGraphPair, i: usize, j: usize) -> Result<usize> {
    check_index("user", i, pair.n())?;
    check_index("user", j, pair.n())?;
    Ok(pair.g1.common_attributes(i, &pair.g2, j))
}

/// Neighbour-count tables maintained during refinement.
///
/// `user_counts[i][j]` tracks `N^u_π̃(i, j)` for the current mapping and is
/// updated incrementally; `attr_counts` holds the static `N^a(i, j)` and is
/// only built for the attribute-rich variant.
#[derive(Debug, Clone)]
pub struct NeighborCounters {
    n: usize,
    user_counts: Vec<u32>,
    attr_counts: Option<Vec<u32>>,
}

impl NeighborCounters {
    fn build(pair: &AttributedGraphPair, mapping: &PartialMapping, with_attrs: bool) -> Self {
        let n = pair.n();
        let mut user_counts = vec![0u32; n * n];
        for (u, v) in mapping.pairs() {
            bump(&mut user_counts, n, pair, u, v, |_, _, _| {});
        }
        let attr_counts = with_attrs.then(|| {
            let mut t = vec![0u32; n * n];
            for i in 0..n {
                for j in 0..n {
                    t[i * n + j] = pair.g1.common_attributes(i, &pair.g2, j) as u32;
                }
            }
            t
        });
        NeighborCounters {
            n,
            user_counts,
            attr_counts,
        }
    }

    #[inline]
    pub fn user(&self, i: usize, j: usize) -> u32 {
        self.user_counts[i * self.n + j]
    }

    #[inline]
    pub fn attr(&self, i: usize, j: usize) -> Option<u32> {
        self.attr_counts.as_ref().map(|t| t[i * self.n + j])
    }
}

/// Adds one to `(u', v')` for every neighbour `u'` of `u` in G₁ and `v'` of `v` in G₂.
fn bump(
    counts: &mut [u32],
    n: usize,
    pair: &AttributedGraphPair,
    u: usize,
    v: usize,
    mut on_update: impl FnMut(usize, usize, u32),
) {
    let targets: Vec<usize> = pair.g2.user_neighbors(v).collect();
    for a in pair.g1.user_neighbors(u) {
        let row = &mut counts[a * n..(a + 1) * n];
        for &b in &targets {
            row[b] += 1;
            on_update(a, b, row[b]);
        }
    }
}

/// Acceptance rule for a candidate pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptRule {
    /// Minimum matched common user neighbours (compared with `≥`).
    pub user_threshold: f64,
    /// Minimum common attributes; `None` disables the attribute clause.
    pub attr_threshold: Option<f64>,
}

/// Incremental greedy refiner. Each [`Refiner::step`] matches one pair.
///
/// Candidate pairs are taken from a FIFO queue. The queue is seeded with every
/// pair that qualifies initially, in lexicographic `(i, j)` order; afterwards
/// a pair is appended at the moment its user count first reaches the
/// threshold. Counts only grow, so a queued pair stays qualified and is
/// skipped only once `i` or `j` has been used.
pub struct Refiner<'a> {
    pair: &'a AttributedGraphPair,
    mapping: PartialMapping,
    counters: NeighborCounters,
    rule: AcceptRule,
    queue: VecDeque<(usize, usize)>,
    extended: usize,
}

impl<'a> Refiner<'a> {
    pub fn new(pair: &'a AttributedGraphPair, seed: PartialMapping, rule: AcceptRule) -> Result<Self> {
        let n = pair.n();
        if seed.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "partial mapping over {} users, pair has {n}",
                seed.n()
            )));
        }
        if rule.user_threshold.is_nan() || rule.attr_threshold.is_some_and(f64::is_nan) {
            return Err(Error::param("threshold is NaN"));
        }
        let counters = NeighborCounters::build(pair, &seed, rule.attr_threshold.is_some());
        let mut refiner = Refiner {
            pair,
            mapping: seed,
            counters,
            rule,
            queue: VecDeque::new(),
            extended: 0,
        };
        for i in 0..n {
            if refiner.mapping.get(i).is_some() {
                continue;
            }
            for j in 0..n {
                if refiner.mapping.preimage(j).is_none() && refiner.qualifies(i, j) {
                    refiner.queue.push_back((i, j));
                }
            }
        }
        Ok(refiner)
    }

    fn attr_qualifies(&self, i: usize, j: usize) -> bool {
        match (self.rule.attr_threshold, self.counters.attr(i, j)) {
            (Some(t), Some(c)) => c as f64 >= t,
            _ => false,
        }
    }

    fn qualifies(&self, i: usize, j: usize) -> bool {
        self.counters.user(i, j) as f64 >= self.rule.user_threshold || self.attr_qualifies(i, j)
    }

    /// Matches the next qualifying pair, if any.
    pub fn step(&mut self) -> Option<(usize, usize)> {
        while let Some((i, j)) = self.queue.pop_front() {
            if self.mapping.get(i).is_some() || self.mapping.preimage(j).is_some() {
                continue;
            }
            debug_assert!(self.qualifies(i, j));
            self.mapping.insert(i, j).expect("both endpoints free");
            self.extended += 1;

            let n = self.pair.n();
            let threshold = self.rule.user_threshold;
            let mapping = &self.mapping;
            let attr_counts = self.counters.attr_counts.as_deref();
            let attr_threshold = self.rule.attr_threshold;
            let queue = &mut self.queue;
            bump(&mut self.counters.user_counts, n, self.pair, i, j, |a, b, count| {
                let crossed = count as f64 >= threshold && ((count - 1) as f64) < threshold;
                if !crossed || mapping.get(a).is_some() || mapping.preimage(b).is_some() {
                    return;
                }
                // attribute-qualified pairs were queued at construction
                let already = match (attr_threshold, attr_counts) {
                    (Some(t), Some(tab)) => tab[a * n + b] as f64 >= t,
                    _ => false,
                };
                if !already {
                    queue.push_back((a, b));
                }
            });
            return Some((i, j));
        }
        None
    }

    pub fn run(mut self) -> Refinement {
        while self.step().is_some() {}
        self.finish()
    }

    pub fn mapping(&self) -> &PartialMapping {
        &self.mapping
    }

    pub fn counters(&self) -> &NeighborCounters {
        &self.counters
    }

    pub fn finish(self) -> Refinement {
        Refinement {
            complete: self.mapping.is_complete(),
            extended: self.extended,
            mapping: self.mapping,
        }
    }
}

/// Output of a refinement run. `complete` is false when the loop stalled
/// before every user was matched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refinement {
    pub mapping: PartialMapping,
    pub complete: bool,
    pub extended: usize,
}

impl Refinement {
    /// `{"permutation": [...], "complete": bool, "extended": count}`; unmatched users are `null`.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Repr<'a> {
            permutation: &'a [Option<usize>],
            complete: bool,
            extended: usize,
        }
        Ok(serde_json::to_string_pretty(&Repr {
            permutation: self.mapping.as_options(),
            complete: self.complete,
            extended: self.extended,
        })?)
    }
}

pub fn refine_attr_sparse(
    pair: &AttributedGraphPair,
    partial: &PartialMapping,
    gamma1: f64,
) -> Result<Refinement> {
    if !(gamma1 > 1.0) {
        return Err(Error::param(format!("gamma1 = {gamma1} must exceed 1")));
    }
    let p = &pair.params;
    let rule = AcceptRule {
        user_threshold: gamma1 * (p.n as f64 - 2.0) * p.q_u * p.q_u,
        attr_threshold: None,
    };
    Ok(Refiner::new(pair, partial.clone(), rule)?.run())
}

pub fn refine_attr_rich(
    pair: &AttributedGraphPair,
    partial: &PartialMapping,
    gamma2: f64,
    gamma3: f64,
) -> Result<Refinement> {
    if !(gamma2 > 1.0 && gamma3 > 1.0) {
        return Err(Error::param(format!(
            "gamma2 = {gamma2} and gamma3 = {gamma3} must exceed 1"
        )));
    }
    let p = &pair.params;
    let attr_threshold = (p.m > 0).then(|| gamma3 * p.m as f64 * p.q_a * p.q_a);
    let rule = AcceptRule {
        user_threshold: gamma2 * (p.n as f64 - 2.0) * p.q_u * p.q_u,
        attr_threshold,
    };
    Ok(Refiner::new(pair, partial.clone(), rule)?.run())
}

/// Refines with the variant and thresholds implied by the model parameters.
pub fn refine_auto(pair: &AttributedGraphPair, partial: &PartialMapping) -> Result<(Regime, Refinement)> {
    let th = RefineThresholds::from_params(&pair.params)?;
    let regime = select_regime(&pair.params);
    let out = match regime {
        Regime::AttrSparse => refine_attr_sparse(pair, partial, th.gamma1)?,
        Regime::AttrRich => refine_attr_rich(pair, partial, th.gamma2, th.gamma3)?,
    };
    Ok((regime, out))
}
