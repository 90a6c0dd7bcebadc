//! Signed counts of attributed trees and the similarity scores built from them.
//!
//! For a root user `i` and an attribute set `A` of size `k`, the trees of
//! interest hang `k` vertex-disjoint two-hop paths `i - u_t - a_t` off the
//! root, one ending at each attribute. A tree's weight is the product of the
//! centred adjacency entries along its edges, and `W_{i,A}` sums the weights of
//! all `C(n-1, k) k!` such trees. Two users are compared through the inner
//! product of their `W_{·,A}` vectors over all `k`-subsets `A`.
//!
//! Enumerating trees costs `O(n^k)` per `(i, A)`. Instead, the sum over
//! injective port assignments is written as a signed sum over set partitions
//! of `A` of unrestricted power sums, which is exact and polynomial in `n`.
//! The literal enumeration is kept in [`tree_count_bruteforce`] as an oracle.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::combinatorics::{ln_binomial, ln_factorial, ColexSubsets, SetPartitions};
use crate::error::{check_index, Error, Result};
use crate::graph_model::{AttributedGraph, AttributedGraphPair, ModelParams, PartialMapping};

/// Largest branch count accepted by the counting routines.
pub const MAX_BRANCHES: usize = 10;

/// Default fraction of the true-pair expected score used as the threshold.
pub const DEFAULT_C: f64 = 0.5;

/// Centred adjacency: `A - q` off the diagonal, zero on the user diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    m: usize,
    user: Vec<f64>,
    attr: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn user(&self, i: usize, j: usize) -> f64 {
        self.user[i * self.n + j]
    }

    #[inline]
    pub fn attr(&self, i: usize, a: usize) -> f64 {
        self.attr[i * self.m + a]
    }
}

pub fn normalize(graph: &AttributedGraph, params: &ModelParams) -> Result<NormalizedAdjacency> {
    if graph.n() != params.n || graph.m() != params.m {
        return Err(Error::DimensionMismatch(format!(
            "graph is {}x{}, params say {}x{}",
            graph.n(),
            graph.m(),
            params.n,
            params.m
        )));
    }
    let (n, m) = (graph.n(), graph.m());
    let mut user = vec![-params.q_u; n * n];
    for i in 0..n {
        user[i * n + i] = 0.0;
        for j in graph.user_neighbors(i) {
            user[i * n + j] = 1.0 - params.q_u;
        }
    }
    let mut attr = vec![-params.q_a; n * m];
    for i in 0..n {
        for a in graph.attributes_of(i) {
            attr[i * m + a] = 1.0 - params.q_a;
        }
    }
    Ok(NormalizedAdjacency { n, m, user, attr })
}

/// An attributed subgraph given by its edge lists; it need not occur in any graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttributedTree {
    pub user_edges: Vec<(usize, usize)>,
    pub attr_edges: Vec<(usize, usize)>,
}

/// Product of the centred entries over the edges of `tree`.
pub fn tree_weight(tree: &AttributedTree, norm: &NormalizedAdjacency) -> Result<f64> {
    let mut w = 1.0;
    for &(i, j) in &tree.user_edges {
        check_index("user", i, norm.n)?;
        check_index("user", j, norm.n)?;
        w *= norm.user(i, j);
    }
    for &(i, a) in &tree.attr_edges {
        check_index("user", i, norm.n)?;
        check_index("attribute", a, norm.m)?;
        w *= norm.attr(i, a);
    }
    Ok(w)
}

/// Weights of every root-port-attribute path for one root.
///
/// Entry `(a, u)` is `Ã^u[root][u] · Ã^a[u][a]`; the root's own column is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PathWeightTable {
    root: usize,
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl PathWeightTable {
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, a: usize, u: usize) -> f64 {
        self.data[a * self.n + u]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n..(a + 1) * self.n]
    }
}

pub fn path_weight_table(norm: &NormalizedAdjacency, root: usize) -> Result<PathWeightTable> {
    check_index("root user", root, norm.n)?;
    let (n, m) = (norm.n, norm.m);
    let mut data = vec![0.0; m * n];
    for u in (0..n).filter(|&u| u != root) {
        let edge = norm.user(root, u);
        for a in 0..m {
            data[a * n + u] = edge * norm.attr(u, a);
        }
    }
    Ok(PathWeightTable { root, n, m, data })
}

fn check_attribute_set(attrs: &[usize], n: usize, m: usize) -> Result<()> {
    let k = attrs.len();
    if k == 0 {
        return Err(Error::param("attribute set must be non-empty"));
    }
    if k > MAX_BRANCHES {
        return Err(Error::Guardrail(format!("k = {k} exceeds {MAX_BRANCHES}")));
    }
    for (t, &a) in attrs.iter().enumerate() {
        check_index("attribute", a, m)?;
        if attrs[..t].contains(&a) {
            return Err(Error::param(format!("attribute {a} repeated")));
        }
    }
    if k > n - 1 {
        return Err(Error::param(format!(
            "k = {k} branches need {k} distinct ports but only {} users besides the root",
            n - 1
        )));
    }
    Ok(())
}

/// `W_{root, A}` via the set-partition expansion.
///
/// `S_B = Σ_{u ≠ root} ∏_{a ∈ B} M[a][u]` is computed for every block `B ⊆ A`,
/// then combined with the Möbius coefficients of the partition lattice.
pub fn tree_count(table: &PathWeightTable, attrs: &[usize]) -> Result<f64> {
    check_attribute_set(attrs, table.n, table.m)?;
    let k = attrs.len();
    let partitions = SetPartitions::new(k);
    Ok(tree_count_with(table, attrs, &partitions))
}

fn tree_count_with(table: &PathWeightTable, attrs: &[usize], partitions: &SetPartitions) -> f64 {
    let k = attrs.len();
    let full = 1usize << k;
    let mut sums = vec![0.0; full];
    let mut prod = vec![1.0; full];
    for u in (0..table.n).filter(|&u| u != table.root) {
        for mask in 1..full {
            let low = mask.trailing_zeros() as usize;
            prod[mask] = prod[mask & (mask - 1)] * table.get(attrs[low], u);
            sums[mask] += prod[mask];
        }
    }
    partitions.evaluate(&sums)
}

/// Result of literally enumerating the tree family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForceCount {
    pub value: f64,
    pub trees: u64,
}

pub const BRUTE_FORCE_MAX_N: usize = 12;
pub const BRUTE_FORCE_MAX_K: usize = 4;

/// Enumerates every ordered choice of distinct ports and sums the tree weights.
pub fn tree_count_bruteforce(
    norm: &NormalizedAdjacency,
    root: usize,
    attrs: &[usize],
) -> Result<BruteForceCount> {
    if norm.n > BRUTE_FORCE_MAX_N || attrs.len() > BRUTE_FORCE_MAX_K {
        return Err(Error::Guardrail(format!(
            "brute force limited to n <= {BRUTE_FORCE_MAX_N}, k <= {BRUTE_FORCE_MAX_K} (got n = {}, k = {})",
            norm.n,
            attrs.len()
        )));
    }
    check_index("root user", root, norm.n)?;
    check_attribute_set(attrs, norm.n, norm.m)?;

    fn recurse(
        norm: &NormalizedAdjacency,
        root: usize,
        attrs: &[usize],
        ports: &mut Vec<usize>,
        acc: &mut BruteForceCount,
    ) -> Result<()> {
        if ports.len() == attrs.len() {
            let tree = AttributedTree {
                user_edges: ports.iter().map(|&u| (root, u)).collect(),
                attr_edges: ports.iter().zip(attrs).map(|(&u, &a)| (u, a)).collect(),
            };
            acc.value += tree_weight(&tree, norm)?;
            acc.trees += 1;
            return Ok(());
        }
        for u in 0..norm.n {
            if u == root || ports.contains(&u) {
                continue;
            }
            ports.push(u);
            recurse(norm, root, attrs, ports, acc)?;
            ports.pop();
        }
        Ok(())
    }

    let mut acc = BruteForceCount { value: 0.0, trees: 0 };
    recurse(norm, root, attrs, &mut Vec::with_capacity(attrs.len()), &mut acc)?;
    Ok(acc)
}

/// `W_{root, A}` for every `k`-subset `A`, in colex order.
pub fn feature_vector(norm: &NormalizedAdjacency, root: usize, k: usize) -> Result<Vec<f64>> {
    check_branch_count(norm.n, norm.m, k)?;
    let table = path_weight_table(norm, root)?;
    let partitions = SetPartitions::new(k);
    Ok(ColexSubsets::new(norm.m, k)
        .map(|attrs| tree_count_with(&table, &attrs, &partitions))
        .collect())
}

fn check_branch_count(n: usize, m: usize, k: usize) -> Result<()> {
    if k == 0 || k > m || k > n - 1 {
        return Err(Error::param(format!(
            "k = {k} must satisfy 1 <= k <= min(m, n-1) = {}",
            m.min(n - 1)
        )));
    }
    if k > MAX_BRANCHES {
        return Err(Error::Guardrail(format!("k = {k} exceeds {MAX_BRANCHES}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    scores: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(n: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for an {n}x{n} matrix",
                scores.len()
            )));
        }
        if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::param(format!("non-finite score at ({}, {})", pos / n, pos % n)));
        }
        Ok(SimilarityMatrix { n, scores })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}

/// How similarity scores are accumulated over attribute subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryPolicy {
    /// One subset at a time on the calling thread: `O(n² + nm)` memory.
    Streaming,
    /// Feature vectors for `batch` subsets are computed in parallel, then
    /// folded into the score rows in parallel. Adds `O(batch · n)` memory.
    Batched { batch: usize },
}

impl Default for MemoryPolicy {
    fn default() -> Self {
        MemoryPolicy::Batched { batch: 64 }
    }
}

/// Per-graph state for computing `W_{·,A}` for all roots at once.
///
/// `S_B(i) = Σ_u Ã^u[i][u]^{|B|} · ∏_{a∈B} Ã^a[u][a]`, so the user part only
/// needs elementwise powers of the centred user matrix, shared by all subsets.
struct FeatureEngine<'a> {
    norm: &'a NormalizedAdjacency,
    /// `powers[s - 1][i * n + u] = Ã^u[i][u]^s`, zero on the diagonal.
    powers: Vec<Vec<f64>>,
}

impl<'a> FeatureEngine<'a> {
    fn new(norm: &'a NormalizedAdjacency, k: usize) -> Self {
        let mut powers = Vec::with_capacity(k);
        powers.push(norm.user.clone());
        for s in 1..k {
            let next: Vec<f64> = powers[s - 1]
                .iter()
                .zip(&norm.user)
                .map(|(p, x)| p * x)
                .collect();
            powers.push(next);
        }
        FeatureEngine { norm, powers }
    }

    /// `W_{i,A}` for every root `i`.
    fn features(&self, attrs: &[usize], partitions: &SetPartitions) -> Vec<f64> {
        let n = self.norm.n;
        let k = attrs.len();
        let full = 1usize << k;
        // products[mask][u] = ∏_{t ∈ mask} Ã^a[u][attrs[t]]
        let mut products = vec![1.0; full * n];
        for mask in 1..full {
            let low = mask.trailing_zeros() as usize;
            let rest = mask & (mask - 1);
            for u in 0..n {
                products[mask * n + u] = products[rest * n + u] * self.norm.attr(u, attrs[low]);
            }
        }
        let mut sums = vec![0.0; full];
        (0..n)
            .map(|i| {
                for mask in 1..full {
                    let pow = &self.powers[mask.count_ones() as usize - 1][i * n..(i + 1) * n];
                    let prod = &products[mask * n..(mask + 1) * n];
                    sums[mask] = pow.iter().zip(prod).map(|(x, y)| x * y).sum();
                }
                partitions.evaluate(&sums)
            })
            .collect()
    }
}

/// `Φ_{ij} = Σ_{|A| = k} W_{i,A}(G₁) · W_{j,A}(G₂)` over all users `i`, `j`.
///
/// Subsets are visited in colex order and every entry is accumulated in that
/// order, so both policies produce bit-identical matrices.
pub fn similarity_matrix(
    pair: &AttributedGraphPair,
    k: usize,
    policy: MemoryPolicy,
) -> Result<SimilarityMatrix> {
    let (n, m) = (pair.n(), pair.m());
    check_branch_count(n, m, k)?;
    let norm1 = normalize(&pair.g1, &pair.params)?;
    let norm2 = normalize(&pair.g2, &pair.params)?;
    let engine1 = FeatureEngine::new(&norm1, k);
    let engine2 = FeatureEngine::new(&norm2, k);
    let partitions = SetPartitions::new(k);
    let mut scores = vec![0.0; n * n];

    match policy {
        MemoryPolicy::Streaming => {
            for attrs in ColexSubsets::new(m, k) {
                let w1 = engine1.features(&attrs, &partitions);
                let w2 = engine2.features(&attrs, &partitions);
                for (i, row) in scores.chunks_mut(n).enumerate() {
                    let x = w1[i];
                    for (s, y) in row.iter_mut().zip(&w2) {
                        *s += x * y;
                    }
                }
            }
        }
        MemoryPolicy::Batched { batch } => {
            let batch = batch.max(1);
            let subsets: Vec<Vec<usize>> = ColexSubsets::new(m, k).collect();
            for chunk in subsets.chunks(batch) {
                let feats: Vec<(Vec<f64>, Vec<f64>)> = chunk
                    .par_iter()
                    .map(|attrs| {
                        (
                            engine1.features(attrs, &partitions),
                            engine2.features(attrs, &partitions),
                        )
                    })
                    .collect();
                scores.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                    for (w1, w2) in &feats {
                        let x = w1[i];
                        for (s, y) in row.iter_mut().zip(w2) {
                            *s += x * y;
                        }
                    }
                });
            }
        }
    }
    SimilarityMatrix::from_rows(n, scores)
}

/// Acceptance threshold `τ = c · C(m,k) (ρ_u σ_u²)^k (ρ_a σ_a²)^k C(n-1,k) k!`,
/// evaluated in log space.
pub fn threshold_tau(params: &ModelParams, k: usize, c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::param(format!("c = {c} must lie in (0, 1)")));
    }
    check_branch_count(params.n, params.m, k)?;
    let user = params.rho_u * params.sigma2_u();
    let attr = params.rho_a * params.sigma2_a();
    if user == 0.0 || attr == 0.0 {
        return Ok(0.0);
    }
    let kf = k as f64;
    let log_tau = c.ln()
        + ln_binomial(params.m, k)
        + kf * user.ln()
        + kf * attr.ln()
        + ln_binomial(params.n - 1, k)
        + ln_factorial(k);
    Ok(log_tau.exp())
}

/// Partial alignment: a set of users of the first graph with their images.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartialAlignment {
    pub map: BTreeMap<usize, usize>,
    /// Users that cleared the threshold but were dropped as ambiguous.
    pub conflicts: Vec<usize>,
}

impl PartialAlignment {
    pub fn matched(&self) -> Vec<usize> {
        self.map.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn to_mapping(&self, n: usize) -> Result<PartialMapping> {
        PartialMapping::from_pairs(n, self.map.iter().map(|(&i, &j)| (i, j)))
    }

    pub fn from_mapping(mapping: &PartialMapping) -> Self {
        PartialAlignment {
            map: mapping.pairs().collect(),
            conflicts: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses the JSON form and checks it against a user count.
    pub fn from_json(text: &str, n: usize) -> Result<Self> {
        let parsed: PartialAlignment = serde_json::from_str(text)?;
        parsed.to_mapping(n)?;
        for &c in &parsed.conflicts {
            check_index("conflict user", c, n)?;
            if parsed.map.contains_key(&c) {
                return Err(Error::param(format!("user {c} is both matched and conflicted")));
            }
        }
        Ok(parsed)
    }
}

struct StringKeyed<'a>(&'a BTreeMap<usize, usize>);

impl Serialize for StringKeyed<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (i, j) in self.0 {
            map.serialize_entry(&i.to_string(), &j.to_string())?;
        }
        map.end()
    }
}

impl Serialize for PartialAlignment {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            matched: Vec<usize>,
            map: StringKeyed<'a>,
            conflicts: &'a [usize],
        }
        Repr {
            matched: self.matched(),
            map: StringKeyed(&self.map),
            conflicts: &self.conflicts,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PartialAlignment {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            matched: Vec<usize>,
            map: BTreeMap<String, String>,
            conflicts: Vec<usize>,
        }
        let repr = Repr::deserialize(deserializer)?;
        let mut map = BTreeMap::new();
        for (k, v) in &repr.map {
            let i: usize = k.parse().map_err(|_| D::Error::custom(format!("bad user key {k:?}")))?;
            let j: usize = v.parse().map_err(|_| D::Error::custom(format!("bad user value {v:?}")))?;
            map.insert(i, j);
        }
        let mut matched = repr.matched;
        matched.sort_unstable();
        if matched != map.keys().copied().collect::<Vec<_>>() {
            return Err(D::Error::custom("`matched` does not equal the keys of `map`"));
        }
        Ok(PartialAlignment {
            map,
            conflicts: repr.conflicts,
        })
    }
}

/// Keeps the pairs with `Φ_ij ≥ τ` that are mutually unique: `j` is the only
/// qualifying partner of `i` and `i` the only qualifying partner of `j`.
/// Every other user of the first graph with a qualifying partner is recorded
/// as a conflict.
pub fn align_from_scores(scores: &SimilarityMatrix, tau: f64) -> PartialAlignment {
    let n = scores.n();
    let mut row_hits = vec![(0usize, 0usize); n];
    let mut col_hits = vec![(0usize, 0usize); n];
    for i in 0..n {
        for (j, &s) in scores.row(i).iter().enumerate() {
            if s >= tau {
                row_hits[i] = (row_hits[i].0 + 1, j);
                col_hits[j] = (col_hits[j].0 + 1, i);
            }
        }
    }
    let mut out = PartialAlignment::default();
    for (i, &(count, j)) in row_hits.iter().enumerate() {
        if count == 0 {
            continue;
        }
        if count == 1 && col_hits[j] == (1, i) {
            out.map.insert(i, j);
        } else {
            out.conflicts.push(i);
        }
    }
    out
}

/// Scores every pair, thresholds at `τ(c)` and keeps the unambiguous matches.
pub fn align_by_counting(pair: &AttributedGraphPair, k: usize, c: f64) -> Result<PartialAlignment> {
    let tau = threshold_tau(&pair.params, k, c)?;
    let scores = similarity_matrix(pair, k, MemoryPolicy::default())?;
    Ok(align_from_scores(&scores, tau))
}
