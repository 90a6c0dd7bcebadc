//! End-to-end pipeline and seeded Monte Carlo experiments.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::check_conditions;
use crate::bipartite_map::align_bipartite_map;
use crate::error::{Error, Result};
use crate::graph_model::{generate_pair, AttributedGraphPair, ModelParams, PartialMapping, Permutation};
use crate::refinement::{refine_attr_rich, refine_attr_sparse, select_regime, RefineThresholds, Regime};
use crate::tree_counting::{align_by_counting, PartialAlignment, DEFAULT_C};

pub const RESULTS_SCHEMA: &str = "agrun-v1";
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PipelineMode {
    #[serde(rename = "counting-only")]
    CountingOnly,
    #[serde(rename = "counting+sparse")]
    CountingSparse,
    #[serde(rename = "counting+rich")]
    CountingRich,
    #[serde(rename = "bipartite-map")]
    BipartiteMap,
    #[default]
    #[serde(rename = "auto")]
    Auto,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 5] = [
        PipelineMode::CountingOnly,
        PipelineMode::CountingSparse,
        PipelineMode::CountingRich,
        PipelineMode::BipartiteMap,
        PipelineMode::Auto,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::CountingOnly => "counting-only",
            PipelineMode::CountingSparse => "counting+sparse",
            PipelineMode::CountingRich => "counting+rich",
            PipelineMode::BipartiteMap => "bipartite-map",
            PipelineMode::Auto => "auto",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown pipeline mode {s:?}")))
    }
}

/// The stages a pipeline run actually executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    CountingOnly,
    CountingSparse,
    CountingRich,
    BipartiteMap,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::CountingOnly => "counting-only",
            Route::CountingSparse => "attr-sparse",
            Route::CountingRich => "attr-rich",
            Route::BipartiteMap => "bipartite-map",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub k: usize,
    pub c: f64,
    pub mode: PipelineMode,
    pub epsilon: f64,
}

impl PipelineSettings {
    pub fn new(k: usize, c: f64, mode: PipelineMode) -> Self {
        PipelineSettings {
            k,
            c,
            mode,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Chooses the stages for `mode`, applying the three-regime split for `Auto`:
/// attribute-only MAP when attributes alone clear `(1+ε) ln n` and user edges
/// alone do not; otherwise counting followed by the refinement variant from
/// [`select_regime`].
pub fn dispatch(params: &ModelParams, mode: PipelineMode, epsilon: f64) -> Route {
    match mode {
        PipelineMode::CountingOnly => Route::CountingOnly,
        PipelineMode::CountingSparse => Route::CountingSparse,
        PipelineMode::CountingRich => Route::CountingRich,
        PipelineMode::BipartiteMap => Route::BipartiteMap,
        PipelineMode::Auto => {
            let cutoff = (1.0 + epsilon) * (params.n as f64).ln();
            let attr_signal = params.m as f64 * params.q_a * params.s_a();
            let user_signal = params.n as f64 * params.q_u * params.s_u();
            if attr_signal >= cutoff && user_signal < cutoff {
                Route::BipartiteMap
            } else {
                match select_regime(params) {
                    Regime::AttrSparse => Route::CountingSparse,
                    Regime::AttrRich => Route::CountingRich,
                }
            }
        }
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub counting_ms: f64,
    pub refinement_ms: f64,
    pub bipartite_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.counting_ms + self.refinement_ms + self.bipartite_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of the partial alignment that agrees with the truth; 1 when empty.
    pub precision_on_i: f64,
    /// `|I| / n`.
    pub coverage: f64,
    /// Fraction of all users mapped to their true image in the final mapping.
    pub final_accuracy: f64,
    pub exact: bool,
    pub timings: StageTimings,
}

pub fn compute_metrics(partial: &PartialAlignment, final_map: &PartialMapping, truth: &Permutation) -> Metrics {
    let n = truth.len();
    let correct_on_i = partial
        .map
        .iter()
        .filter(|(&i, &j)| i < n && truth.apply(i) == j)
        .count();
    let precision_on_i = if partial.is_empty() {
        1.0
    } else {
        correct_on_i as f64 / partial.len() as f64
    };
    let correct = (0..n.min(final_map.n()))
        .filter(|&i| final_map.get(i) == Some(truth.apply(i)))
        .count();
    Metrics {
        precision_on_i,
        coverage: partial.len() as f64 / n as f64,
        final_accuracy: correct as f64 / n as f64,
        exact: final_map.n() == n && correct == n,
        timings: StageTimings::default(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub route: Route,
    /// Counting-stage output; for the attribute-only route, the MAP permutation as a full alignment.
    pub partial: PartialAlignment,
    pub final_mapping: PartialMapping,
    /// Whether refinement matched every user (always true for the MAP route).
    pub complete: bool,
    pub metrics: Metrics,
}

pub fn run_pipeline(pair: &AttributedGraphPair, settings: &PipelineSettings) -> Result<PipelineOutcome> {
    let n = pair.n();
    let route = dispatch(&pair.params, settings.mode, settings.epsilon);
    let mut timings = StageTimings::default();

    let (partial, final_mapping) = if route == Route::BipartiteMap {
        let start = Instant::now();
        let perm = align_bipartite_map(pair)?;
        timings.bipartite_ms = elapsed_ms(start);
        let mapping = PartialMapping::from_permutation(&perm);
        (PartialAlignment::from_mapping(&mapping), mapping)
    } else {
        let start = Instant::now();
        let partial = align_by_counting(pair, settings.k, settings.c)?;
        timings.counting_ms = elapsed_ms(start);
        let seed = partial.to_mapping(n)?;
        let start = Instant::now();
        let final_mapping = match route {
            Route::CountingOnly => seed,
            Route::CountingSparse => {
                let th = RefineThresholds::from_params(&pair.params)?;
                refine_attr_sparse(pair, &seed, th.gamma1)?.mapping
            }
            Route::CountingRich => {
                let th = RefineThresholds::from_params(&pair.params)?;
                refine_attr_rich(pair, &seed, th.gamma2, th.gamma3)?.mapping
            }
            Route::BipartiteMap => unreachable!(),
        };
        if route != Route::CountingOnly {
            timings.refinement_ms = elapsed_ms(start);
        }
        (partial, final_mapping)
    };

    let mut metrics = compute_metrics(&partial, &final_mapping, &pair.truth);
    metrics.timings = timings;
    Ok(PipelineOutcome {
        route,
        complete: final_mapping.is_complete(),
        partial,
        final_mapping,
        metrics,
    })
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for trial `trial` of grid cell `cell`.
///
/// `(cell, trial)` is packed into one word, and splitmix64 is a bijection, so
/// distinct `(cell, trial)` below `2³²` give distinct seeds for a fixed base.
pub fn child_seed(base: u64, cell: usize, trial: usize) -> u64 {
    debug_assert!(cell < 1 << 32 && trial < 1 << 32);
    let packed = ((cell as u64) << 32) | trial as u64;
    splitmix64(base.wrapping_add(splitmix64(packed)))
}

/// Cartesian grid of model parameters; cells are enumerated with `n`
/// varying slowest and `rho_a` fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub q_u: Vec<f64>,
    pub rho_u: Vec<f64>,
    pub q_a: Vec<f64>,
    pub rho_a: Vec<f64>,
}

impl ParamGrid {
    pub fn single(p: &ModelParams) -> Self {
        ParamGrid {
            n: vec![p.n],
            m: vec![p.m],
            q_u: vec![p.q_u],
            rho_u: vec![p.rho_u],
            q_a: vec![p.q_a],
            rho_a: vec![p.rho_a],
        }
    }

    pub fn cells(&self) -> Result<Vec<ModelParams>> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &m in &self.m {
                for &q_u in &self.q_u {
                    for &rho_u in &self.rho_u {
                        for &q_a in &self.q_a {
                            for &rho_a in &self.rho_a {
                                out.push(ModelParams::new(n, m, q_u, rho_u, q_a, rho_a)?);
                            }
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::param("parameter grid is empty"));
        }
        Ok(out)
    }
}

fn default_c() -> f64 {
    DEFAULT_C
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: ParamGrid,
    pub k: usize,
    #[serde(default = "default_c")]
    pub c: f64,
    pub trials: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub mode: PipelineMode,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub output_csv: Option<PathBuf>,
    #[serde(default)]
    pub output_json: Option<PathBuf>,
    /// Fill the timing columns. Timings are the only non-reproducible output.
    #[serde(default = "default_true")]
    pub record_timings: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::param("trials must be at least 1"));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::param(format!("c = {} must lie in (0, 1)", self.c)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon must be positive"));
        }
        if self.k == 0 {
            return Err(Error::param("k must be at least 1"));
        }
        self.grid.cells().map(|_| ())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub cell: usize,
    pub trial: usize,
    pub params: ModelParams,
    pub seed: u64,
    pub route: Option<Route>,
    pub metrics: Metrics,
    pub conditions_passed: usize,
    pub conditions_total: usize,
    /// Stage error message when the trial could not run to completion.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellAggregate {
    pub cell: usize,
    pub params: ModelParams,
    pub trials: usize,
    pub route: Option<Route>,
    pub mean_precision: f64,
    pub mean_coverage: f64,
    pub mean_accuracy: f64,
    pub exact_frequency: f64,
    pub errors: usize,
    pub conditions_passed: usize,
    pub conditions_total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub cells: Vec<CellAggregate>,
}

fn run_trial(cfg: &ExperimentConfig, cell: usize, params: &ModelParams, trial: usize) -> TrialResult {
    let seed = child_seed(cfg.base_seed, cell, trial);
    let (passed, total) = match check_conditions(params, cfg.k, cfg.epsilon) {
        Ok(r) => (r.passed(), r.checks.len()),
        Err(_) => (0, 0),
    };
    let settings = PipelineSettings {
        k: cfg.k,
        c: cfg.c,
        mode: cfg.mode,
        epsilon: cfg.epsilon,
    };
    let outcome = generate_pair(params, seed).and_then(|pair| run_pipeline(&pair, &settings));
    let (route, mut metrics, error) = match outcome {
        Ok(out) => (Some(out.route), out.metrics, None),
        Err(e) => (
            None,
            Metrics {
                precision_on_i: 1.0,
                coverage: 0.0,
                final_accuracy: 0.0,
                exact: false,
                timings: StageTimings::default(),
            },
            Some(e.to_string()),
        ),
    };
    if !cfg.record_timings {
        metrics.timings = StageTimings::default();
    }
    TrialResult {
        cell,
        trial,
        params: *params,
        seed,
        route,
        metrics,
        conditions_passed: passed,
        conditions_total: total,
        error,
    }
}

/// Runs every `(cell, trial)` job, in parallel on the current rayon pool, and
/// returns results ordered by `(cell, trial)`. Writes the CSV and JSON outputs
/// when the config names them.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let cells = cfg.grid.cells()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();

    let mut seen = std::collections::HashSet::with_capacity(jobs.len());
    for &(c, t) in &jobs {
        if !seen.insert(child_seed(cfg.base_seed, c, t)) {
            return Err(Error::param(format!("child seed collision at cell {c}, trial {t}")));
        }
    }

    let trials: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(c, t)| run_trial(cfg, c, &cells[c], t))
        .collect();

    let aggregates = cells
        .iter()
        .enumerate()
        .map(|(c, params)| {
            let rows: Vec<&TrialResult> = trials.iter().filter(|r| r.cell == c).collect();
            let count = rows.len() as f64;
            let mean = |f: &dyn Fn(&TrialResult) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / count;
            CellAggregate {
                cell: c,
                params: *params,
                trials: rows.len(),
                route: rows.iter().find_map(|r| r.route),
                mean_precision: mean(&|r| r.metrics.precision_on_i),
                mean_coverage: mean(&|r| r.metrics.coverage),
                mean_accuracy: mean(&|r| r.metrics.final_accuracy),
                exact_frequency: mean(&|r| r.metrics.exact as u8 as f64),
                errors: rows.iter().filter(|r| r.error.is_some()).count(),
                conditions_passed: rows.first().map_or(0, |r| r.conditions_passed),
                conditions_total: rows.first().map_or(0, |r| r.conditions_total),
            }
        })
        .collect();

    let result = ExperimentResult {
        config: cfg.clone(),
        trials,
        cells: aggregates,
    };
    if let Some(path) = &cfg.output_csv {
        fs::write(path, result.to_csv()?).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = &cfg.output_json {
        fs::write(path, result.aggregates_json()?).map_err(|e| Error::io(path, e))?;
    }
    Ok(result)
}

/// One CSV row; trial rows and per-cell aggregate rows share the schema.
#[derive(Debug, Serialize)]
struct CsvRow {
    schema: &'static str,
    row_kind: &'static str,
    cell: usize,
    n: usize,
    m: usize,
    q_u: f64,
    rho_u: f64,
    q_a: f64,
    rho_a: f64,
    k: usize,
    c: f64,
    mode: &'static str,
    regime: &'static str,
    trial: Option<usize>,
    seed: Option<u64>,
    precision: f64,
    coverage: f64,
    accuracy: f64,
    /// 0/1 on trial rows, the exact-recovery frequency on aggregate rows.
    exact: f64,
    counting_ms: Option<f64>,
    refinement_ms: Option<f64>,
    bipartite_ms: Option<f64>,
    total_ms: Option<f64>,
    error: String,
}

fn round_ms(x: f64) -> f64 {
    (x * 1e3).round() / 1e3
}

impl ExperimentResult {
    pub fn to_csv(&self) -> Result<String> {
        let cfg = &self.config;
        let mut w = csv::Writer::from_writer(Vec::new());
        let timing = |t: &StageTimings| -> [Option<f64>; 4] {
            if cfg.record_timings {
                [
                    Some(round_ms(t.counting_ms)),
                    Some(round_ms(t.refinement_ms)),
                    Some(round_ms(t.bipartite_ms)),
                    Some(round_ms(t.total_ms())),
                ]
            } else {
                [None; 4]
            }
        };
        let base = |kind, cell: usize, p: &ModelParams, route: Option<Route>| CsvRow {
            schema: RESULTS_SCHEMA,
            row_kind: kind,
            cell,
            n: p.n,
            m: p.m,
            q_u: p.q_u,
            rho_u: p.rho_u,
            q_a: p.q_a,
            rho_a: p.rho_a,
            k: cfg.k,
            c: cfg.c,
            mode: cfg.mode.as_str(),
            regime: route.map_or("error", Route::as_str),
            trial: None,
            seed: None,
            precision: 0.0,
            coverage: 0.0,
            accuracy: 0.0,
            exact: 0.0,
            counting_ms: None,
            refinement_ms: None,
            bipartite_ms: None,
            total_ms: None,
            error: String::new(),
        };
        for r in &self.trials {
            let [cm, rm, bm, tm] = timing(&r.metrics.timings);
            w.serialize(CsvRow {
                trial: Some(r.trial),
                seed: Some(r.seed),
                precision: r.metrics.precision_on_i,
                coverage: r.metrics.coverage,
                accuracy: r.metrics.final_accuracy,
                exact: r.metrics.exact as u8 as f64,
                counting_ms: cm,
                refinement_ms: rm,
                bipartite_ms: bm,
                total_ms: tm,
                error: r.error.clone().unwrap_or_default(),
                ..base("trial", r.cell, &r.params, r.route)
            })?;
        }
        for a in &self.cells {
            let rows: Vec<&TrialResult> = self.trials.iter().filter(|r| r.cell == a.cell).collect();
            let mut mean_t = StageTimings::default();
            for r in &rows {
                mean_t.counting_ms += r.metrics.timings.counting_ms / rows.len() as f64;
                mean_t.refinement_ms += r.metrics.timings.refinement_ms / rows.len() as f64;
                mean_t.bipartite_ms += r.metrics.timings.bipartite_ms / rows.len() as f64;
            }
            let [cm, rm, bm, tm] = timing(&mean_t);
            w.serialize(CsvRow {
                precision: a.mean_precision,
                coverage: a.mean_coverage,
                accuracy: a.mean_accuracy,
                exact: a.exact_frequency,
                counting_ms: cm,
                refinement_ms: rm,
                bipartite_ms: bm,
                total_ms: tm,
                error: if a.errors > 0 {
                    format!("{} failed trials", a.errors)
                } else {
                    String::new()
                },
                ..base("aggregate", a.cell, &a.params, a.route)
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::param(format!("csv flush: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Per-cell means and exact-recovery frequencies.
    pub fn aggregates_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Repr<'a> {
            schema: &'static str,
            k: usize,
            c: f64,
            mode: PipelineMode,
            epsilon: f64,
            trials: usize,
            base_seed: u64,
            cells: &'a [CellAggregate],
        }
        let cfg = &self.config;
        Ok(serde_json::to_string_pretty(&Repr {
            schema: RESULTS_SCHEMA,
            k: cfg.k,
            c: cfg.c,
            mode: cfg.mode,
            epsilon: cfg.epsilon,
            trials: cfg.trials,
            base_seed: cfg.base_seed,
            cells: &self.cells,
        })?)
    }

    pub fn cell(&self, index: usize) -> Option<&CellAggregate> {
        self.cells.get(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::{generate_pair_with, TruthPolicy};
    use std::collections::BTreeMap;

    #[test]
    fn mode_names_round_trip() {
        for mode in PipelineMode::ALL {
            assert_eq!(mode.as_str().parse::<PipelineMode>().unwrap(), mode);
            let json = serde_json::to_string(&mode).unwrap();
            assert_eq!(json, format!("\"{}\"", mode.as_str()));
        }
        assert!("sparse".parse::<PipelineMode>().is_err());
    }

    #[test]
    fn metrics_exact_truth() {
        let truth = Permutation::new(vec![2, 0, 1]).unwrap();
        let full = PartialMapping::from_permutation(&truth);
        let m = compute_metrics(&PartialAlignment::from_mapping(&full), &full, &truth);
        assert!(m.exact);
        assert_eq!(m.final_accuracy, 1.0);
        assert_eq!(m.precision_on_i, 1.0);
        assert_eq!(m.coverage, 1.0);
    }

    #[test]
    fn metrics_empty_partial() {
        let truth = Permutation::identity(4);
        let m = compute_metrics(&PartialAlignment::default(), &PartialMapping::empty(4), &truth);
        assert_eq!(m.coverage, 0.0);
        assert_eq!(m.precision_on_i, 1.0);
        assert_eq!(m.final_accuracy, 0.0);
        assert!(!m.exact);
    }

    #[test]
    fn metrics_ninety_of_hundred() {
        let truth = Permutation::identity(100);
        let mut map = BTreeMap::new();
        for i in 0..90 {
            map.insert(i, i);
        }
        for i in 90..100 {
            map.insert(i, 90 + (i - 90 + 1) % 10);
        }
        let partial = PartialAlignment {
            map,
            conflicts: vec![],
        };
        let final_map = partial.to_mapping(100).unwrap();
        let m = compute_metrics(&partial, &final_map, &truth);
        assert!((m.precision_on_i - 0.9).abs() < 1e-15);
        assert_eq!(m.coverage, 1.0);
        assert!(!m.exact);
    }

    #[test]
    fn child_seeds_distinct() {
        let mut seen = std::collections::HashSet::new();
        for c in 0..50 {
            for t in 0..200 {
                assert!(seen.insert(child_seed(7, c, t)));
            }
        }
        assert_ne!(child_seed(1, 0, 0), child_seed(2, 0, 0));
    }

    #[test]
    fn auto_dispatch_regimes() {
        // attribute-dominated: user edges far too sparse
        let p3 = ModelParams::new(200, 400, 0.001, 0.5, 0.2, 0.9).unwrap();
        assert_eq!(dispatch(&p3, PipelineMode::Auto, 0.1), Route::BipartiteMap);
        let rich = ModelParams::new(100, 30, 0.5, 0.95, 0.5, 0.95).unwrap();
        assert_eq!(dispatch(&rich, PipelineMode::Auto, 0.1), Route::CountingRich);
        let sparse = ModelParams::new(100, 5, 0.5, 0.95, 0.1, 0.5).unwrap();
        assert_eq!(dispatch(&sparse, PipelineMode::Auto, 0.1), Route::CountingSparse);
        assert_eq!(dispatch(&sparse, PipelineMode::CountingOnly, 0.1), Route::CountingOnly);
    }

    #[test]
    fn counting_only_final_equals_partial() {
        let p = ModelParams::new(30, 6, 0.5, 0.6, 0.5, 0.6).unwrap();
        let pair = generate_pair(&p, 3).unwrap();
        let out = run_pipeline(&pair, &PipelineSettings::new(2, 0.5, PipelineMode::CountingOnly)).unwrap();
        assert_eq!(out.route, Route::CountingOnly);
        assert_eq!(out.final_mapping, out.partial.to_mapping(30).unwrap());
        assert_eq!(out.metrics.exact, out.partial.len() == 30 && out.metrics.precision_on_i == 1.0);
    }

    #[test]
    fn noiseless_pipeline_is_exact() {
        // m q_a = 150 common attributes on true pairs against a threshold near 120
        let p = ModelParams::new(50, 300, 0.5, 1.0, 0.5, 1.0).unwrap();
        let pair = generate_pair(&p, 11).unwrap();
        let out = run_pipeline(&pair, &PipelineSettings::new(2, 0.5, PipelineMode::Auto)).unwrap();
        assert_eq!(out.route, Route::CountingRich);
        assert!(out.metrics.exact, "{:?}", out.metrics);
        assert_eq!(out.final_mapping.to_permutation().unwrap(), pair.truth);
    }

    #[test]
    fn bipartite_route_reports_full_alignment() {
        let p = ModelParams::new(40, 200, 0.001, 0.5, 0.3, 1.0).unwrap();
        let pair = generate_pair_with(&p, 2, TruthPolicy::Uniform).unwrap();
        let out = run_pipeline(&pair, &PipelineSettings::new(3, 0.5, PipelineMode::Auto)).unwrap();
        assert_eq!(out.route, Route::BipartiteMap);
        assert!(out.complete);
        assert!(out.metrics.exact);
        assert_eq!(out.metrics.coverage, 1.0);
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            grid: ParamGrid {
                n: vec![20],
                m: vec![6],
                q_u: vec![0.5],
                rho_u: vec![0.5, 0.9],
                q_a: vec![0.5],
                rho_a: vec![0.9],
            },
            k: 2,
            c: 0.5,
            trials: 3,
            base_seed: 5,
            mode: PipelineMode::Auto,
            epsilon: 0.1,
            output_csv: None,
            output_json: None,
            record_timings: false,
        }
    }

    #[test]
    fn experiment_rows_and_determinism() {
        let cfg = small_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.trials.len(), 6);
        assert_eq!(a.cells.len(), 2);
        let order: Vec<(usize, usize)> = a.trials.iter().map(|r| (r.cell, r.trial)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        assert_eq!(a.aggregates_json().unwrap(), b.aggregates_json().unwrap());
        let csv = a.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 6 + 2);
        assert!(csv.starts_with("schema,row_kind,cell,n,m,q_u,rho_u,q_a,rho_a,k,c,mode,regime,trial,seed,"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.grid.n.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.grid.q_u = vec![1.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let text = r#"{
            "grid": {"n": [10], "m": [4], "q_u": [0.5], "rho_u": [0.8], "q_a": [0.5], "rho_a": [0.8]},
            "k": 2, "trials": 1, "base_seed": 3
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.mode, PipelineMode::Auto);
        assert_eq!(cfg.c, 0.5);
        assert!(cfg.record_timings);
        assert!(serde_json::from_str::<ExperimentConfig>(&text.replace("\"k\"", "\"kk\"")).is_err());
    }
}
