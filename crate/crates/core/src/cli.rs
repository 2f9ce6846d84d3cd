//! The `tokcluster` command-line interface.
//!
//! Every command prints one JSON document on stdout and diagnostics on
//! stderr. Exit codes: 0 success, 1 usage error, 2 data error, 3 check
//! failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::clustering::{
    adjacency_cost, balanced_kmeans, hamiltonian_oracle, intra_cluster_stats, ClusterAssignment,
    DEFAULT_MAX_ITERS, DEFAULT_ORACLE_LIMIT,
};
use crate::codebook::{Codebook, CodebookFormat};
use crate::error::Error;
use crate::loss::{gradcheck, GRAD_TOLERANCE};
use crate::rearrange::{apply_permutation, build_permutation, PermutationMap};
use crate::rng::SplitMix64;
use crate::sampling::{next_token_distribution, sample_categorical, GuidanceSpace, SamplerConfig};
use crate::toytrain::{run_experiment, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "tokcluster",
    version,
    about = "Codebook clustering, rearrangement and cluster-loss tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Balanced k-means over codebook embeddings.
    Cluster {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        clusters: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-index a codebook so every cluster occupies a contiguous range.
    Rearrange {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        out_codebook: PathBuf,
        #[arg(long)]
        out_perm: PathBuf,
    },
    /// Adjacency cost and, given an assignment, cluster tightness statistics.
    Analyze {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        assignment: Option<PathBuf>,
    },
    /// Exact minimum-adjacency ordering for tiny codebooks.
    Oracle {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORACLE_LIMIT)]
        limit: usize,
    },
    /// Finite-difference check of the combined loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
    /// Run the synthetic cluster-loss experiment.
    TrainToy {
        /// Experiment config JSON; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV dump of the per-epoch loss curves.
        #[arg(long)]
        loss_curve: Option<PathBuf>,
    },
    /// Filter and draw from guided next-token logits.
    Sample {
        /// JSON file `{"cond": [...], "uncond": [...]}`; `uncond` defaults to `cond`.
        #[arg(long)]
        logits: PathBuf,
        #[arg(long = "cfg", default_value_t = 0.0)]
        cfg_scale: f64,
        #[arg(long, value_enum, default_value_t = GuidanceSpace::Logit)]
        cfg_space: GuidanceSpace,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        top_k: usize,
        #[arg(long, default_value_t = 1.0)]
        top_p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        draws: usize,
    },
}

/// A failed command: exit code, message, and optionally a report that is
/// still printed on stdout.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
    pub report: Option<Value>,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
            report: None,
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
            report: None,
        }
    }

    fn check(message: impl Into<String>, report: Value) -> Self {
        Self {
            code: EXIT_CHECK,
            message: message.into(),
            report: Some(report),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::LimitExceeded { .. } => {
                Failure::usage(e.to_string())
            }
            _ => Failure::data(e.to_string()),
        }
    }
}

type CmdResult = Result<Value, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    let (code, report) = match execute(cli.command) {
        Ok(v) => (EXIT_OK, Some(v)),
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            (f.code, f.report)
        }
    };
    if let Some(v) = report {
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&v).expect("json value")
        );
    }
    code
}

pub fn execute(command: Command) -> CmdResult {
    match command {
        Command::Cluster {
            codebook,
            clusters,
            max_iters,
            seed,
            out,
        } => cmd_cluster(&codebook, clusters, max_iters, seed, &out),
        Command::Rearrange {
            codebook,
            assignment,
            out_codebook,
            out_perm,
        } => cmd_rearrange(&codebook, &assignment, &out_codebook, &out_perm),
        Command::Analyze {
            codebook,
            assignment,
        } => cmd_analyze(&codebook, assignment.as_deref()),
        Command::Oracle { codebook, limit } => cmd_oracle(&codebook, limit),
        Command::Gradcheck { seed, instances } => cmd_gradcheck(seed, instances),
        Command::TrainToy {
            config,
            out,
            loss_curve,
        } => cmd_train_toy(config.as_deref(), &out, loss_curve.as_deref()),
        Command::Sample {
            logits,
            cfg_scale,
            cfg_space,
            temperature,
            top_k,
            top_p,
            seed,
            draws,
        } => {
            let cfg = SamplerConfig {
                cfg_scale,
                temperature,
                top_k,
                top_p,
                seed,
                cfg_space,
            };
            cmd_sample(&logits, &cfg, draws)
        }
    }
}

fn load_codebook(path: &Path) -> Result<Codebook, Failure> {
    Codebook::load(path, CodebookFormat::from_path(path)).map_err(|e| Failure::data(e.to_string()))
}

fn load_assignment(path: &Path) -> Result<ClusterAssignment, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("reading {}: {e}", path.display())))?;
    ClusterAssignment::from_json_str(&text)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::data(format!("writing {}: {e}", path.display())))
}

fn check_assignment_fits(cb: &Codebook, asg: &ClusterAssignment) -> Result<(), Failure> {
    if asg.assignment.len() != cb.len() {
        return Err(Failure::data(format!(
            "assignment covers {} embeddings, codebook has {}",
            asg.assignment.len(),
            cb.len()
        )));
    }
    if asg.centroids[0].len() != cb.dim() {
        return Err(Failure::data(format!(
            "centroid dimension {} vs codebook dimension {}",
            asg.centroids[0].len(),
            cb.dim()
        )));
    }
    Ok(())
}

pub fn cmd_cluster(
    codebook: &Path,
    clusters: usize,
    max_iters: usize,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let cb = load_codebook(codebook)?;
    let asg = balanced_kmeans(&cb, clusters, max_iters, seed)?;
    let stats = intra_cluster_stats(&cb, &asg)?;
    write_file(out, (asg.to_json_string() + "\n").as_bytes())?;
    Ok(json!({
        "n": asg.n,
        "m": asg.m,
        "iterations_run": asg.iterations_run,
        "converged": asg.converged,
        "inner_mse": stats.inner_mse,
    }))
}

pub fn cmd_rearrange(
    codebook: &Path,
    assignment: &Path,
    out_codebook: &Path,
    out_perm: &Path,
) -> CmdResult {
    let cb = load_codebook(codebook)?;
    let asg = load_assignment(assignment)?;
    check_assignment_fits(&cb, &asg)?;
    let perm = build_permutation(&asg).map_err(|e| Failure::data(e.to_string()))?;
    let before = adjacency_cost(&cb, &PermutationMap::identity(cb.len()))?;
    let after = adjacency_cost(&cb, &perm)?;
    let report = json!({
        "n": asg.n,
        "m": asg.m,
        "identity": perm.is_identity(),
        "adjacency_cost_before": before,
        "adjacency_cost_after": after,
    });
    if !perm.is_cluster_contiguous(&asg) {
        return Err(Failure::check(
            "rearranged clusters are not contiguous",
            report,
        ));
    }
    let rearranged = apply_permutation(&cb, &perm)?;
    rearranged
        .save(out_codebook, CodebookFormat::from_path(out_codebook))
        .map_err(|e| Failure::data(e.to_string()))?;
    write_file(
        out_perm,
        (perm.to_file(asg.n, asg.m).to_json_string() + "\n").as_bytes(),
    )?;
    Ok(report)
}

pub fn cmd_analyze(codebook: &Path, assignment: Option<&Path>) -> CmdResult {
    let cb = load_codebook(codebook)?;
    let mut report = json!({
        "size": cb.len(),
        "dim": cb.dim(),
        "adjacency_cost": adjacency_cost(&cb, &PermutationMap::identity(cb.len()))?,
    });
    if let Some(path) = assignment {
        let asg = load_assignment(path)?;
        check_assignment_fits(&cb, &asg)?;
        let stats = intra_cluster_stats(&cb, &asg)?;
        let obj = report.as_object_mut().expect("object");
        obj.insert("n".into(), json!(asg.n));
        obj.insert("m".into(), json!(asg.m));
        obj.insert("inner_mse".into(), json!(stats.inner_mse));
        obj.insert("mean".into(), json!(stats.mean_dist));
        obj.insert("closest".into(), json!(stats.closest_dist));
        obj.insert("largest".into(), json!(stats.largest_dist));
        obj.insert("per_cluster".into(), json!(stats.per_cluster));
    }
    Ok(report)
}

pub fn cmd_oracle(codebook: &Path, limit: usize) -> CmdResult {
    let cb = load_codebook(codebook)?;
    let perm = hamiltonian_oracle(&cb, limit)?;
    Ok(json!({
        "perm": perm.inverse(),
        "cost": adjacency_cost(&cb, &perm)?,
    }))
}

pub fn cmd_gradcheck(seed: u64, instances: usize) -> CmdResult {
    if instances == 0 {
        return Err(Failure::usage("--instances must be at least 1"));
    }
    let report = serde_json::to_value(gradcheck(seed, instances)?).expect("report serializes");
    if report["pass"] != json!(true) {
        return Err(Failure::check(
            format!("gradient check exceeded relative error {GRAD_TOLERANCE}"),
            report,
        ));
    }
    Ok(report)
}

pub fn cmd_train_toy(config: Option<&Path>, out: &Path, loss_curve: Option<&Path>) -> CmdResult {
    let cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::data(format!("reading {}: {e}", path.display())))?;
            ExperimentConfig::from_json_str(&text)
                .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    let report = run_experiment(&cfg)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(out, (text + "\n").as_bytes())?;
    if let Some(path) = loss_curve {
        write_file(path, report.loss_curve_csv().as_bytes())?;
    }
    let runs: Vec<Value> = report
        .runs
        .iter()
        .map(|r| {
            json!({
                "lambda": r.lambda,
                "final_train_loss": r.final_train_loss.total,
                "token_top1": r.heldout.token_top1,
                "token_top5": r.heldout.token_top5,
                "cluster_top1": r.heldout.cluster_top1,
                "cluster_top5": r.heldout.cluster_top5,
            })
        })
        .collect();
    Ok(json!({ "n": report.n, "m": report.m, "runs": runs, "verdict": report.verdict }))
}

#[derive(Deserialize)]
struct LogitsFile {
    cond: Vec<f64>,
    #[serde(default)]
    uncond: Option<Vec<f64>>,
}

pub fn cmd_sample(logits: &Path, cfg: &SamplerConfig, draws: usize) -> CmdResult {
    cfg.validate()?;
    let text = fs::read_to_string(logits)
        .map_err(|e| Failure::data(format!("reading {}: {e}", logits.display())))?;
    let file: LogitsFile = serde_json::from_str(&text)
        .map_err(|e| Failure::data(format!("{}: {e}", logits.display())))?;
    let uncond = file.uncond.unwrap_or_else(|| file.cond.clone());
    let dist = next_token_distribution(&file.cond, &uncond, cfg)
        .map_err(|e| Failure::data(e.to_string()))?;
    let mut rng = SplitMix64::new(cfg.seed);
    let drawn: Vec<usize> = (0..draws)
        .map(|_| sample_categorical(&dist, &mut rng))
        .collect();
    Ok(json!({ "distribution": dist.as_slice(), "draws": drawn }))
}
