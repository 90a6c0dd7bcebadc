use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attralign::analysis::{check_conditions, empirical_moments};
use attralign::bipartite_map::{align_bipartite_map, assignment_weight, pair_weights};
use attralign::harness::{run_experiment, run_pipeline, ExperimentConfig, PipelineMode, PipelineSettings, DEFAULT_EPSILON};
use attralign::refinement::{refine_attr_rich, refine_attr_sparse, refine_auto, RefineThresholds, Regime};
use attralign::tree_counting::{align_by_counting, PartialAlignment, DEFAULT_C};
use attralign::verify::run_verify;
use attralign::{generate_pair_with, read_pair, write_pair, Error, ModelParams, TruthPolicy};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

/// Align correlated attributed graph pairs.
#[derive(Parser, Debug)]
#[command(name = "attralign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a correlated pair and write it as a pair file.
    Gen {
        #[command(flatten)]
        model: ModelArgs,
        /// Seed for the sampler.
        #[arg(long)]
        seed: u64,
        /// Use the identity as the hidden relabelling instead of a uniform permutation.
        #[arg(long)]
        identity: bool,
        /// Output pair file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Tree-counting alignment; writes the partial alignment as JSON.
    Align {
        #[arg(long)]
        pair: PathBuf,
        /// Number of attributes per counted tree.
        #[arg(long)]
        k: usize,
        /// Threshold constant in (0, 1).
        #[arg(long, default_value_t = DEFAULT_C)]
        c: f64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extend a partial alignment to a full permutation.
    Refine {
        #[arg(long)]
        pair: PathBuf,
        /// Partial alignment JSON as written by `align`.
        #[arg(long)]
        partial: PathBuf,
        #[arg(long, value_enum, default_value_t = RegimeArg::Auto)]
        regime: RegimeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline on a pair file.
    Pipeline {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_C)]
        c: f64,
        /// counting-only, counting+sparse, counting+rich, bipartite-map or auto.
        #[arg(long, default_value = "auto")]
        mode: PipelineMode,
        /// Slack in the regime cutoffs.
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum-likelihood assignment from user-attribute edges only.
    MapBipartite {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded Monte Carlo sweep from a JSON config.
    Experiment {
        /// JSON config mirroring the experiment config fields.
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Monte Carlo means of true-pair and wrong-pair scores against the closed form.
    Moments {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-size report of the recovery conditions.
    CheckConditions {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle and property checks.
    Verify {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Copy)]
struct ModelArgs {
    /// Number of users.
    #[arg(long)]
    n: usize,
    /// Number of attributes.
    #[arg(long)]
    m: usize,
    /// User-user edge probability.
    #[arg(long)]
    qu: f64,
    /// User-user edge correlation.
    #[arg(long)]
    rhou: f64,
    /// User-attribute edge probability.
    #[arg(long)]
    qa: f64,
    /// User-attribute edge correlation.
    #[arg(long)]
    rhoa: f64,
}

impl ModelArgs {
    fn params(self) -> attralign::Result<ModelParams> {
        ModelParams::new(self.n, self.m, self.qu, self.rhou, self.qa, self.rhoa)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum RegimeArg {
    Auto,
    AttrSparse,
    AttrRich,
}

fn emit(out: Option<&Path>, text: &str) -> attralign::Result<()> {
    match out {
        Some(path) => fs::write(path, format!("{text}\n")).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> attralign::Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn set_jobs(jobs: Option<usize>) -> attralign::Result<()> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::InvalidParameter("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Returns whether every check passed (only `verify` can report false).
fn run(command: Command) -> attralign::Result<bool> {
    match command {
        Command::Gen {
            model,
            seed,
            identity,
            out,
        } => {
            let policy = if identity {
                TruthPolicy::Identity
            } else {
                TruthPolicy::Uniform
            };
            let pair = generate_pair_with(&model.params()?, seed, policy)?;
            write_pair(&pair, &out)?;
        }
        Command::Align { pair, k, c, out } => {
            let pair = read_pair(&pair)?;
            let partial = align_by_counting(&pair, k, c)?;
            emit(out.as_deref(), &partial.to_json()?)?;
        }
        Command::Refine {
            pair,
            partial,
            regime,
            out,
        } => {
            let pair = read_pair(&pair)?;
            let seed = PartialAlignment::from_json(&read_text(&partial)?, pair.n())?.to_mapping(pair.n())?;
            let th = RefineThresholds::from_params(&pair.params)?;
            let (regime, result) = match regime {
                RegimeArg::Auto => refine_auto(&pair, &seed)?,
                RegimeArg::AttrSparse => (Regime::AttrSparse, refine_attr_sparse(&pair, &seed, th.gamma1)?),
                RegimeArg::AttrRich => (Regime::AttrRich, refine_attr_rich(&pair, &seed, th.gamma2, th.gamma3)?),
            };
            let mut value: serde_json::Value = serde_json::from_str(&result.to_json()?)?;
            value["regime"] = serde_json::to_value(regime)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&value)?)?;
        }
        Command::Pipeline {
            pair,
            k,
            c,
            mode,
            epsilon,
            out,
        } => {
            let pair = read_pair(&pair)?;
            let settings = PipelineSettings { k, c, mode, epsilon };
            let res = run_pipeline(&pair, &settings)?;
            let partial: serde_json::Value = serde_json::from_str(&res.partial.to_json()?)?;
            let value = json!({
                "mode": mode,
                "regime": res.route.as_str(),
                "partial": partial,
                "permutation": res.final_mapping.as_options(),
                "complete": res.complete,
                "metrics": res.metrics,
            });
            emit(out.as_deref(), &serde_json::to_string_pretty(&value)?)?;
        }
        Command::MapBipartite { pair, out } => {
            let pair = read_pair(&pair)?;
            let perm = align_bipartite_map(&pair)?;
            let w = pair_weights(&pair)?;
            let value = json!({
                "permutation": perm.as_slice(),
                "log_likelihood_ratio": assignment_weight(w.as_slice(), w.n(), &perm),
                "exact": perm == pair.truth,
            });
            emit(out.as_deref(), &serde_json::to_string_pretty(&value)?)?;
        }
        Command::Experiment { config, jobs } => {
            set_jobs(jobs)?;
            let cfg = ExperimentConfig::from_json_file(&config)?;
            let res = run_experiment(&cfg)?;
            if cfg.output_json.is_none() {
                println!("{}", res.aggregates_json()?);
            }
            if cfg.output_csv.is_none() && cfg.output_json.is_some() {
                print!("{}", res.to_csv()?);
            }
        }
        Command::Moments {
            model,
            k,
            trials,
            seed,
            jobs,
            out,
        } => {
            set_jobs(jobs)?;
            let est = empirical_moments(&model.params()?, k, trials, seed)?;
            let mut value: serde_json::Value = serde_json::from_str(&est.to_json()?)?;
            value["within_4_se"] = json!(est.within_band(4.0));
            emit(out.as_deref(), &serde_json::to_string_pretty(&value)?)?;
        }
        Command::CheckConditions {
            model,
            k,
            epsilon,
            out,
        } => {
            let report = check_conditions(&model.params()?, k, epsilon)?;
            emit(out.as_deref(), &report.to_json()?)?;
        }
        Command::Verify { seed, out } => {
            let report = run_verify(seed)?;
            for c in &report.checks {
                eprintln!("{}: {} ({})", c.name, if c.pass { "ok" } else { "FAILED" }, c.detail);
            }
            emit(out.as_deref(), &report.to_json()?)?;
            return Ok(report.all_pass());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
