//! The correlated attributed Erdős–Rényi pair model.
//!
//! A pair consists of two graphs on `n` users and `m` shared attributes. Every
//! user-user slot and user-attribute slot carries a pair of Bernoulli
//! indicators with common mean `q` and correlation `rho`; the second graph has
//! its users relabeled by a uniformly random permutation (the ground truth).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bitmatrix::BitMatrix;
use crate::error::{check_index, Error, Result};

/// The RNG used for all sampling. Fixtures depend on its exact stream.
pub type ModelRng = ChaCha20Rng;

pub fn model_rng(seed: u64) -> ModelRng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub m: usize,
    pub q_u: f64,
    pub rho_u: f64,
    pub q_a: f64,
    pub rho_a: f64,
}

fn check_probability(name: &str, q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} = {q} must lie in (0, 1)")))
    }
}

fn check_correlation(name: &str, rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::param(format!("{name} = {rho} must lie in [0, 1]")))
    }
}

impl ModelParams {
    pub fn new(n: usize, m: usize, q_u: f64, rho_u: f64, q_a: f64, rho_a: f64) -> Result<Self> {
        let p = ModelParams {
            n,
            m,
            q_u,
            rho_u,
            q_a,
            rho_a,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::param(format!("n = {} must be at least 2", self.n)));
        }
        check_probability("q_u", self.q_u)?;
        check_probability("q_a", self.q_a)?;
        check_correlation("rho_u", self.rho_u)?;
        check_correlation("rho_a", self.rho_a)?;
        Ok(())
    }

    pub fn sigma2_u(&self) -> f64 {
        self.q_u * (1.0 - self.q_u)
    }

    pub fn sigma2_a(&self) -> f64 {
        self.q_a * (1.0 - self.q_a)
    }

    /// Probability that a user-user edge of one graph survives in the other.
    pub fn s_u(&self) -> f64 {
        self.q_u + self.rho_u * (1.0 - self.q_u)
    }

    pub fn s_a(&self) -> f64 {
        self.q_a + self.rho_a * (1.0 - self.q_a)
    }
}

/// Joint law of a pair of Bernoulli(q) indicators with correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelatedBernoulli {
    pub p11: f64,
    pub p10: f64,
    pub p01: f64,
    pub p00: f64,
}

impl CorrelatedBernoulli {
    pub fn new(q: f64, rho: f64) -> Result<Self> {
        check_probability("q", q)?;
        check_correlation("rho", rho)?;
        let cov = rho * q * (1.0 - q);
        let p11 = q * q + cov;
        let p10 = q * (1.0 - q) * (1.0 - rho);
        Ok(CorrelatedBernoulli {
            p11,
            p10,
            p01: p10,
            p00: 1.0 - 2.0 * q + p11,
        })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (bool, bool) {
        let u: f64 = rng.gen();
        if u < self.p11 {
            (true, true)
        } else if u < self.p11 + self.p10 {
            (true, false)
        } else if u < self.p11 + self.p10 + self.p01 {
            (false, true)
        } else {
            (false, false)
        }
    }
}

/// Draws one pair of correlated edge indicators.
pub fn sample_correlated_edge<R: Rng + ?Sized>(q: f64, rho: f64, rng: &mut R) -> Result<(bool, bool)> {
    Ok(CorrelatedBernoulli::new(q, rho)?.sample(rng))
}

/// A bijection on `0..n`, stored as the image of each index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for (i, &v) in map.iter().enumerate() {
            if v >= n {
                return Err(Error::NotBijective(format!("image {v} of {i} is outside 0..{n}")));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::NotBijective(format!("image {v} appears twice")));
            }
        }
        Ok(Permutation { map })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    /// Uniform permutation by Fisher–Yates.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Permutation { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Permutation { map: inv }
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation {
            map: other.map.iter().map(|&v| self.map[v]).collect(),
        }
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Permutation::new(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Vec<usize> {
        p.map
    }
}

/// An injective partial map from users of the first graph to users of the second.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialMapping {
    forward: Vec<Option<usize>>,
    backward: Vec<Option<usize>>,
    len: usize,
}

impl PartialMapping {
    pub fn empty(n: usize) -> Self {
        PartialMapping {
            forward: vec![None; n],
            backward: vec![None; n],
            len: 0,
        }
    }

    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut map = PartialMapping::empty(n);
        for (i, j) in pairs {
            map.insert(i, j)?;
        }
        Ok(map)
    }

    pub fn from_permutation(p: &Permutation) -> Self {
        let n = p.len();
        PartialMapping {
            forward: p.as_slice().iter().map(|&j| Some(j)).collect(),
            backward: p.inverse().as_slice().iter().map(|&i| Some(i)).collect(),
            len: n,
        }
    }

    /// Restriction of `p` to the given domain.
    pub fn restrict(p: &Permutation, domain: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut map = PartialMapping::empty(p.len());
        for i in domain {
            check_index("user", i, p.len())?;
            map.insert(i, p.apply(i))?;
        }
        Ok(map)
    }

    pub fn insert(&mut self, i: usize, j: usize) -> Result<()> {
        let n = self.forward.len();
        check_index("source user", i, n)?;
        check_index("target user", j, n)?;
        if let Some(prev) = self.forward[i] {
            return Err(Error::NotInjective(format!("user {i} already mapped to {prev}")));
        }
        if let Some(prev) = self.backward[j] {
            return Err(Error::NotInjective(format!("target {j} already taken by {prev}")));
        }
        self.forward[i] = Some(j);
        self.backward[j] = Some(i);
        self.len += 1;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.forward.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_complete(&self) -> bool {
        self.len == self.forward.len()
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<usize> {
        self.forward[i]
    }

    #[inline]
    pub fn preimage(&self, j: usize) -> Option<usize> {
        self.backward[j]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.forward
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
    }

    pub fn as_options(&self) -> &[Option<usize>] {
        &self.forward
    }

    pub fn to_permutation(&self) -> Option<Permutation> {
        if !self.is_complete() {
            return None;
        }
        Some(Permutation {
            map: self.forward.iter().map(|j| j.expect("complete")).collect(),
        })
    }
}

/// Users and attributes with user-user and user-attribute adjacency.
#[derive(Clone, PartialEq, Eq)]
pub struct AttributedGraph {
    n: usize,
    m: usize,
    user_adj: BitMatrix,
    attr_adj: BitMatrix,
}

impl std::fmt::Debug for AttributedGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AttributedGraph")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("user_edges", &self.user_edge_count())
            .field("attr_edges", &self.attr_edge_count())
            .finish()
    }
}

impl AttributedGraph {
    pub fn empty(n: usize, m: usize) -> Self {
        AttributedGraph {
            n,
            m,
            user_adj: BitMatrix::new(n, n),
            attr_adj: BitMatrix::new(n, m),
        }
    }

    /// Builds a graph from edge lists, rejecting self loops, out-of-range
    /// indices and duplicates (`(i, j)` and `(j, i)` are the same user edge).
    pub fn from_edges(
        n: usize,
        m: usize,
        user_edges: &[(usize, usize)],
        attr_edges: &[(usize, usize)],
    ) -> Result<Self> {
        let mut g = AttributedGraph::empty(n, m);
        for &(i, j) in user_edges {
            check_index("user", i, n)?;
            check_index("user", j, n)?;
            if i == j {
                return Err(Error::param(format!("self loop at user {i}")));
            }
            if g.has_user_edge(i, j) {
                return Err(Error::param(format!("duplicate user edge ({i}, {j})")));
            }
            g.set_user_edge(i, j, true);
        }
        for &(i, a) in attr_edges {
            check_index("user", i, n)?;
            check_index("attribute", a, m)?;
            if g.has_attr_edge(i, a) {
                return Err(Error::param(format!("duplicate attribute edge ({i}, {a})")));
            }
            g.set_attr_edge(i, a, true);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn has_user_edge(&self, i: usize, j: usize) -> bool {
        self.user_adj.get(i, j)
    }

    #[inline]
    pub fn has_attr_edge(&self, i: usize, a: usize) -> bool {
        self.attr_adj.get(i, a)
    }

    pub(crate) fn set_user_edge(&mut self, i: usize, j: usize, value: bool) {
        if i == j {
            return;
        }
        self.user_adj.set(i, j, value);
        self.user_adj.set(j, i, value);
    }

    pub(crate) fn set_attr_edge(&mut self, i: usize, a: usize, value: bool) {
        self.attr_adj.set(i, a, value);
    }

    /// Neighbours of user `i`, ascending.
    pub fn user_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.user_adj.ones(i)
    }

    /// Attributes of user `i`, ascending.
    pub fn attributes_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.attr_adj.ones(i)
    }

    pub fn user_degree(&self, i: usize) -> usize {
        self.user_adj.row_count(i)
    }

    pub fn attr_degree(&self, i: usize) -> usize {
        self.attr_adj.row_count(i)
    }

    /// Number of attributes shared by user `i` here and user `j` in `other`.
    pub fn common_attributes(&self, i: usize, other: &AttributedGraph, j: usize) -> usize {
        self.attr_adj.and_count(i, &other.attr_adj, j)
    }

    /// User edges with `i < j`, in lexicographic order.
    pub fn user_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.user_adj.ones(i).filter(move |&j| j > i).map(move |j| (i, j)))
    }

    pub fn attr_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.attr_adj.ones(i).map(move |a| (i, a)))
    }

    pub fn user_edge_count(&self) -> usize {
        (0..self.n).map(|i| self.user_degree(i)).sum::<usize>() / 2
    }

    pub fn attr_edge_count(&self) -> usize {
        (0..self.n).map(|i| self.attr_degree(i)).sum()
    }

    /// The same graph with user `i` renamed to `perm(i)`; attributes keep their labels.
    pub fn relabel(&self, perm: &Permutation) -> Result<AttributedGraph> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} applied to graph with {} users",
                perm.len(),
                self.n
            )));
        }
        let mut g = AttributedGraph::empty(self.n, self.m);
        for (i, j) in self.user_edges() {
            g.set_user_edge(perm.apply(i), perm.apply(j), true);
        }
        for (i, a) in self.attr_edges() {
            g.set_attr_edge(perm.apply(i), a, true);
        }
        Ok(g)
    }

    /// User-only view: the same incidence with every user-user edge removed.
    pub fn without_user_edges(&self) -> AttributedGraph {
        AttributedGraph {
            n: self.n,
            m: self.m,
            user_adj: BitMatrix::new(self.n, self.n),
            attr_adj: self.attr_adj.clone(),
        }
    }

    pub(crate) fn check_invariants(&self) -> Result<()> {
        if self.user_adj.rows() != self.n
            || self.user_adj.cols() != self.n
            || self.attr_adj.rows() != self.n
            || self.attr_adj.cols() != self.m
        {
            return Err(Error::DimensionMismatch("adjacency shape".into()));
        }
        for i in 0..self.n {
            if self.user_adj.get(i, i) {
                return Err(Error::param(format!("self loop at user {i}")));
            }
            for j in self.user_adj.ones(i) {
                if !self.user_adj.get(j, i) {
                    return Err(Error::param(format!("asymmetric edge ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Two correlated graphs and the permutation relating them.
///
/// `truth.apply(i)` is the label in `g2` of user `i` of `g1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraphPair {
    pub g1: AttributedGraph,
    pub g2: AttributedGraph,
    pub truth: Permutation,
    pub params: ModelParams,
    pub seed: u64,
}

impl AttributedGraphPair {
    pub fn new(
        g1: AttributedGraph,
        g2: AttributedGraph,
        truth: Permutation,
        params: ModelParams,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        for g in [&g1, &g2] {
            if g.n() != params.n || g.m() != params.m {
                return Err(Error::DimensionMismatch(format!(
                    "graph is {}x{} but params say n={}, m={}",
                    g.n(),
                    g.m(),
                    params.n,
                    params.m
                )));
            }
            g.check_invariants()?;
        }
        if truth.len() != params.n {
            return Err(Error::DimensionMismatch(format!(
                "truth has length {} but n = {}",
                truth.len(),
                params.n
            )));
        }
        Ok(AttributedGraphPair {
            g1,
            g2,
            truth,
            params,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn m(&self) -> usize {
        self.params.m
    }
}

/// How the ground-truth permutation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruthPolicy {
    #[default]
    Uniform,
    /// Fix the truth to the identity; all statistics are then read off the diagonal.
    Identity,
}

pub fn generate_pair(params: &ModelParams, seed: u64) -> Result<AttributedGraphPair> {
    generate_pair_with(params, seed, TruthPolicy::Uniform)
}

/// Samples a pair. The stream is consumed in a fixed order: the permutation
/// shuffle, then user slots `(i, j)` with `i < j` lexicographically, then
/// attribute slots `(i, a)` row by row.
pub fn generate_pair_with(
    params: &ModelParams,
    seed: u64,
    policy: TruthPolicy,
) -> Result<AttributedGraphPair> {
    params.validate()?;
    let (n, m) = (params.n, params.m);
    let mut rng = model_rng(seed);
    let truth = match policy {
        TruthPolicy::Uniform => Permutation::random(n, &mut rng),
        TruthPolicy::Identity => Permutation::identity(n),
    };

    let user_law = CorrelatedBernoulli::new(params.q_u, params.rho_u)?;
    let attr_law = CorrelatedBernoulli::new(params.q_a, params.rho_a)?;
    let mut g1 = AttributedGraph::empty(n, m);
    let mut g2 = AttributedGraph::empty(n, m);

    for i in 0..n {
        for j in i + 1..n {
            let (b1, b2) = user_law.sample(&mut rng);
            if b1 {
                g1.set_user_edge(i, j, true);
            }
            if b2 {
                g2.set_user_edge(truth.apply(i), truth.apply(j), true);
            }
        }
    }
    for i in 0..n {
        for a in 0..m {
            let (b1, b2) = attr_law.sample(&mut rng);
            if b1 {
                g1.set_attr_edge(i, a, true);
            }
            if b2 {
                g2.set_attr_edge(truth.apply(i), a, true);
            }
        }
    }

    Ok(AttributedGraphPair {
        g1,
        g2,
        truth,
        params: *params,
        seed,
    })
}

/// Parameters of the attributed model that emulate seeded alignment.
///
/// A base graph on `total` vertices with edge probability `p` is subsampled
/// twice with rate `s`; a fraction `alpha` of the vertices are revealed seeds
/// and play the role of attributes. Edges between two seeds have no
/// counterpart in the attributed model and are dropped.
pub fn seeded_mode_params(total: usize, alpha: f64, p: f64, s: f64) -> Result<ModelParams> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("seed fraction {alpha} must lie in (0, 1)")));
    }
    check_probability("p", p)?;
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::param(format!("subsampling rate {s} must lie in (0, 1]")));
    }
    if p * s >= 1.0 {
        return Err(Error::param("p * s must be below 1"));
    }
    let m = (total as f64 * alpha).floor() as usize;
    if m == 0 {
        return Err(Error::param("seed fraction yields no seeds"));
    }
    let n = total.saturating_sub(m);
    if n < 2 {
        return Err(Error::param(format!("only {n} non-seed users remain")));
    }
    let q = p * s;
    let rho = s * (1.0 - p) / (1.0 - q);
    ModelParams::new(n, m, q, rho, q, rho)
}
