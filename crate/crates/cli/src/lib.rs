//! Command-line front end for `embdistill`: synthetic data, reduction,
//! training, pruning, distillation, evaluation and benchmarking, each run
//! owning one output directory.

pub mod cli;
pub mod config;
pub mod outdir;
pub mod pipeline;
pub mod summary;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Parser;
use embdistill::dataset::{generate_synthetic, Manifest, SynthConfig};
use embdistill::retrieval::{bench_retrieval, evaluate, write_json};
use embdistill::trainer::TrainConfig;
use embdistill::EmbeddingSet;
use serde::Serialize;

use crate::cli::{Cli, Command, DataArgs, OutputArgs, Preset, SynthArgs};
use crate::config::{DataPaths, ExperimentConfig, Method, Violations};
use crate::outdir::{check_overwrite, OutputDir, DIAGNOSTIC_FILE};
use crate::summary::{Summary, SUMMARY_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const MANIFEST_FILE: &str = "data.manifest";

/// A precondition failed before any work started: occupied or locked output,
/// missing inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refusal(pub String);

impl fmt::Display for Refusal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Refusal {}

/// Exit code for an error: 1 for invalid input or refused preconditions,
/// 2 for everything that failed while working.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let invalid = err.chain().any(|e| {
        e.is::<Violations>()
            || e.is::<Refusal>()
            || matches!(e.downcast_ref::<embdistill::Error>(), Some(embdistill::Error::Config(_)))
    });
    if invalid {
        EXIT_INVALID
    } else {
        EXIT_RUNTIME
    }
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    command: &'a str,
    exit_code: i32,
    error: String,
    causes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    divergence: Option<&'a embdistill::error::DivergenceReport>,
}

fn write_diagnostic(dir: &Path, command: &str, err: &anyhow::Error) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let divergence = err.chain().find_map(|e| match e.downcast_ref::<embdistill::Error>() {
        Some(embdistill::Error::Diverged(r)) => Some(r.as_ref()),
        _ => None,
    });
    let diag = Diagnostic {
        command,
        exit_code: EXIT_RUNTIME,
        error: err.to_string(),
        causes: err.chain().skip(1).map(|e| e.to_string()).collect(),
        divergence,
    };
    let path = dir.join(DIAGNOSTIC_FILE);
    write_json(&diag, &path)?;
    Ok(path)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Output goes to stdout, problems to stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let name = command_name(&cli.command);
    let diag_dir = diagnostic_dir(&cli);
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            let code = exit_code(&err);
            eprintln!("error: {err:#}");
            if code == EXIT_RUNTIME {
                match write_diagnostic(&diag_dir, name, &err) {
                    Ok(p) => eprintln!("diagnostic written to {}", p.display()),
                    Err(e) => eprintln!("could not write diagnostic: {e:#}"),
                }
            }
            code
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Reduce(_) => "reduce",
        Command::Train(_) => "train",
        Command::Prune(_) => "prune",
        Command::Distill(_) => "distill",
        Command::Evaluate(_) => "evaluate",
        Command::Bench(_) => "bench",
        Command::Report(_) => "report",
        Command::Run(_) => "run",
    }
}

/// Where a runtime failure leaves its diagnostic: the command's output
/// directory when it has one, else the working directory.
fn diagnostic_dir(cli: &Cli) -> PathBuf {
    let parent = |p: &Path| p.parent().filter(|p| !p.as_os_str().is_empty()).map(Path::to_path_buf);
    let dir = match &cli.command {
        Command::Synth(a) => a.out.clone().or_else(|| cli.data_dir.clone()),
        Command::Reduce(a) => Some(a.output.out.clone()),
        Command::Train(a) => Some(a.output.out.clone()),
        Command::Prune(a) => Some(a.output.out.clone()),
        Command::Distill(a) => Some(a.output.out.clone()),
        Command::Evaluate(a) => a.report.as_deref().and_then(parent),
        Command::Bench(a) => a.json.as_deref().and_then(parent),
        Command::Report(a) => a.json.as_deref().and_then(parent),
        Command::Run(a) => a.out.clone().or_else(|| {
            ExperimentConfig::load(&a.config)
                .ok()
                .map(|c| config_dir(&a.config).join(c.output_dir))
        }),
    };
    dir.unwrap_or_else(|| PathBuf::from("."))
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn dispatch(cli: &Cli) -> Result<()> {
    let data_dir = cli.data_dir.as_deref();
    match &cli.command {
        Command::Synth(a) => synth(a, data_dir),
        Command::Reduce(a) => {
            let cfg = experiment(a.method.into(), a.dims.clone(), &a.data, &a.output, data_dir)?;
            run_and_print(&cfg, a.output.force)
        }
        Command::Train(a) => {
            let method = if a.random_features { Method::Baseline } else { Method::Reconfigure };
            let mut cfg = experiment(method, a.dims.clone(), &a.data, &a.output, data_dir)?;
            cfg.loss = Some(a.loss);
            cfg.train = Some(a.train.apply(TrainConfig::default()));
            run_and_print(&cfg, a.output.force)
        }
        Command::Prune(a) => {
            let mut cfg = experiment(Method::Prune, vec![a.dim], &a.data, &a.output, data_dir)?;
            cfg.loss = Some(a.loss);
            cfg.train = Some(a.train.apply(TrainConfig::default()));
            let mut p = embdistill::pruning::PruneConfig::default();
            if let Some(v) = a.max_iterations {
                p.max_iterations = v;
            }
            if let Some(v) = a.max_map_drop {
                p.max_map_drop = v;
            }
            if let Some(v) = a.min_dim {
                p.min_dim = v;
            }
            cfg.prune = Some(p);
            run_and_print(&cfg, a.output.force)
        }
        Command::Distill(a) => {
            let method = if a.loss == embdistill::trainer::LossKind::ClusterMatching {
                Method::ClusterMatch
            } else {
                Method::DistanceMatch
            };
            let mut cfg = experiment(method, a.dims.clone(), &a.data, &a.output, data_dir)?;
            cfg.loss = Some(a.loss);
            cfg.train = Some(a.train.apply(TrainConfig::default()));
            run_and_print(&cfg, a.output.force)
        }
        Command::Evaluate(a) => {
            for p in [&a.report, &a.per_query].into_iter().flatten() {
                check_overwrite(p, a.force)?;
            }
            if !a.input.is_file() {
                anyhow::bail!(Refusal(format!("input file {} does not exist", a.input.display())));
            }
            let set = EmbeddingSet::load(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
            let report = evaluate(&set, a.metric)?;
            print!("{}", report.table());
            if let Some(p) = &a.report {
                std::fs::write(p, report.to_json()? + "\n")?;
            }
            if let Some(p) = &a.per_query {
                report.write_per_query_csv(p)?;
            }
            Ok(())
        }
        Command::Bench(a) => {
            if let Some(p) = &a.json {
                check_overwrite(p, a.force)?;
            }
            let report = bench_retrieval(a.n_refs, &a.dims, a.repeats, a.seed)?;
            print!("{}", report.table());
            if let Some(p) = &a.json {
                write_json(&report, p)?;
            }
            Ok(())
        }
        Command::Report(a) => {
            if let Some(p) = &a.json {
                check_overwrite(p, a.force)?;
            }
            let parts = a
                .runs
                .iter()
                .map(|r| {
                    let p = r.join(SUMMARY_FILE);
                    if !p.is_file() {
                        anyhow::bail!(Refusal(format!("{} has no {SUMMARY_FILE}", r.display())));
                    }
                    Summary::load(&p)
                })
                .collect::<Result<Vec<_>>>()?;
            let merged = Summary::merge(&parts)?;
            println!("{}", merged.table());
            if let Some(p) = &a.json {
                std::fs::write(p, merged.to_json())?;
            }
            Ok(())
        }
        Command::Run(a) => {
            let mut cfg = ExperimentConfig::load(&a.config)?;
            let base = config_dir(&a.config);
            cfg.data = cfg.data.resolved(data_dir.unwrap_or(&base));
            cfg.output_dir = match &a.out {
                Some(o) => o.clone(),
                None => base.join(&cfg.output_dir),
            };
            run_and_print(&cfg, a.force)
        }
    }
}

fn run_and_print(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let outcome = pipeline::run_experiment(cfg, force)?;
    println!("{}", outcome.summary.table());
    println!("results in {}", outcome.dir.display());
    Ok(())
}

fn data_paths(args: &DataArgs, data_dir: Option<&Path>) -> Result<DataPaths> {
    Ok(match (&args.data, &args.train, &args.val) {
        (Some(m), _, _) => DataPaths::manifest(m),
        (None, Some(t), Some(v)) => DataPaths {
            manifest: None,
            train: Some(t.clone()),
            val: Some(v.clone()),
        },
        _ => match data_dir {
            Some(d) => DataPaths::manifest(d.join(MANIFEST_FILE)),
            None => anyhow::bail!(Violations(vec![
                "no data given: pass --data, --train and --val, or set EMBDISTILL_DATA_DIR".into()
            ])),
        },
    })
}

fn experiment(
    method: Method,
    dims: Vec<usize>,
    data: &DataArgs,
    out: &OutputArgs,
    data_dir: Option<&Path>,
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(method, dims, data_paths(data, data_dir)?, &out.out);
    cfg.seed = out.seed;
    cfg.metric = out.metric;
    cfg.per_query_csv = out.per_query;
    Ok(cfg)
}

fn synth(a: &SynthArgs, data_dir: Option<&Path>) -> Result<()> {
    let root = match (&a.out, data_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) => d.to_path_buf(),
        (None, None) => anyhow::bail!(Violations(vec![
            "no output directory: pass --out or set EMBDISTILL_DATA_DIR".into()
        ])),
    };
    let mut cfg = match a.preset {
        Preset::Separable => SynthConfig::separable(),
        Preset::Structured => SynthConfig::structured(),
        Preset::Benchmark => SynthConfig::benchmark(),
    };
    cfg.seed = a.seed;
    if let Some(v) = a.cliques {
        cfg.num_cliques = v;
    }
    if let Some(v) = a.val_cliques {
        cfg.val_cliques = v;
    }
    if let Some(v) = a.dim {
        cfg.teacher_dim = v;
        if let Some(s) = cfg.signal_dim {
            cfg.signal_dim = Some(s.min(v));
        }
    }
    cfg.validate()?;
    let out = OutputDir::claim(&root, a.force)?;
    let (train, val) = generate_synthetic(&cfg)?;
    train.save(out.path("train.embd"))?;
    val.save(out.path("val.embd"))?;
    let manifest = Manifest {
        splits: [("train", "train.embd"), ("val", "val.embd")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), out.path(v)))
            .collect(),
    };
    std::fs::write(out.path(MANIFEST_FILE), manifest.render(out.root()))?;
    write_json(&cfg, &out.path("synth.json"))?;
    let noise = val.labels().iter().filter(|l| l.is_none()).count();
    println!(
        "train: {} items in {} cliques; val: {} items in {} cliques + {noise} noise; {} dims",
        train.len(),
        train.clique_ids().len(),
        val.len(),
        val.clique_ids().len(),
        train.dim()
    );
    println!("manifest {}", out.path(MANIFEST_FILE).display());
    Ok(())
}
