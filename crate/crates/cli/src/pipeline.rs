use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use embdistill::dataset::{random_features, Manifest};
use embdistill::pruning::prune_loop;
use embdistill::reduction::{fit_grp, fit_ica, fit_pca, IcaFit, Reducer};
use embdistill::retrieval::{evaluate, write_json, RetrievalReport};
use embdistill::trainer::{
    distill, reconfigure, write_history_csv, Fitted, HeadInit, ProjectionHead, TrainData,
};
use embdistill::EmbeddingSet;

use crate::config::{DataPaths, ExperimentConfig, Method, Violations};
use crate::outdir::OutputDir;
use crate::summary::{Cell, Summary, SUMMARY_FILE};
use crate::Refusal;

pub const CONFIG_FILE: &str = "config.toml";
pub const TIMING_FILE: &str = "timing.json";

/// Seeds for the random features of the `baseline` method, kept apart from
/// the training seed.
const BASELINE_TRAIN_SALT: u64 = 0x7261_6e64_0001;
const BASELINE_VAL_SALT: u64 = 0x7261_6e64_0002;

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Loads the train and validation splits named by `paths`.
pub fn load_splits(paths: &DataPaths) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let (train, val) = match (&paths.manifest, &paths.train, &paths.val) {
        (Some(m), _, _) => {
            require_file(m)?;
            let manifest = Manifest::load(m).with_context(|| format!("reading manifest {}", m.display()))?;
            (manifest.get("train")?.to_path_buf(), manifest.get("val")?.to_path_buf())
        }
        (None, Some(t), Some(v)) => (t.clone(), v.clone()),
        _ => bail!(Violations(vec!["data: give `manifest` or both `train` and `val`".into()])),
    };
    require_file(&train)?;
    require_file(&val)?;
    let load = |p: &Path| EmbeddingSet::load(p).with_context(|| format!("loading {}", p.display()));
    Ok((load(&train)?, load(&val)?))
}

fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        bail!(Refusal(format!("input file {} does not exist", p.display())));
    }
    Ok(())
}

fn data_violations(cfg: &ExperimentConfig, train: &EmbeddingSet, val: &EmbeddingSet) -> Vec<String> {
    let mut out = Vec::new();
    if train.dim() != val.dim() {
        out.push(format!("train has {} dims but val has {}", train.dim(), val.dim()));
    }
    if cfg.method.is_reducer() {
        let limit = train.len().saturating_sub(1).min(train.dim());
        for &d in cfg.dims.iter().filter(|&&d| d > limit) {
            out.push(format!(
                "{} cannot produce {d} dims from {} items of {} dims (limit {limit})",
                cfg.method,
                train.len(),
                train.dim()
            ));
        }
    }
    out
}

struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn time<T>(&mut self, key: String, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.0.insert(key, t.elapsed().as_secs_f64());
        out
    }
}

/// Validates `cfg`, claims its output directory and runs every requested
/// size. Data paths must already be resolved.
pub fn run_experiment(cfg: &ExperimentConfig, force: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let (train_set, val_set) = load_splits(&cfg.data)?;
    let problems = data_violations(cfg, &train_set, &val_set);
    if !problems.is_empty() {
        bail!(Violations(problems));
    }

    let out = OutputDir::claim(&cfg.output_dir, force)?;
    std::fs::write(out.path(CONFIG_FILE), cfg.to_toml())?;
    let mut timer = Timer(BTreeMap::new());
    let mut cells = BTreeMap::new();
    let mut record = |d: usize, emb: &EmbeddingSet, timer: &mut Timer| -> Result<PathBuf> {
        let dir = out.subdir(&format!("d{d}"))?;
        emb.save(dir.join("embeddings.embd"))?;
        let report = timer.time(format!("d{d}.evaluate"), || Ok(evaluate(emb, cfg.metric)?))?;
        write_report(&report, &dir, cfg.per_query_csv)?;
        cells.insert(d, Cell { map: report.map, mr1: report.mr1 });
        Ok(dir)
    };

    match cfg.method {
        Method::Pca | Method::Ica | Method::Grp => {
            for &d in &cfg.dims {
                let reducer = timer.time(format!("d{d}.fit"), || fit_reducer(cfg, &train_set, d))?;
                let emb = val_set.with_vectors(reducer.transform(val_set.vectors())?)?;
                let dir = record(d, &emb, &mut timer)?;
                reducer.save(dir.join("reducer.rdcr"))?;
            }
        }
        Method::Prune => {
            let train_cfg = cfg.train_config();
            let d = cfg.dims[0];
            let head = ProjectionHead::new(train_set.dim(), d, HeadInit::KaimingUniform { seed: cfg.seed })?;
            let data = TrainData::new(&train_set, &val_set);
            let prune_cfg = cfg.prune.clone().unwrap_or_default();
            let outcome = timer.time(format!("d{d}.prune"), || Ok(prune_loop(head, &data, &train_cfg, &prune_cfg)?))?;
            let mut w = csv::Writer::from_path(out.path("prune_history.csv"))?;
            w.write_record(["iteration", "kept_dim", "val_map"])?;
            for (i, rec) in outcome.state.history.iter().enumerate() {
                w.write_record([rec.iteration.to_string(), rec.kept_dim.to_string(), rec.val_map.to_string()])?;
                let emb = outcome.embeddings(i, &val_set)?;
                let dir = record(rec.kept_dim, &emb, &mut timer)?;
                outcome.checkpoints[i].save(dir.join("checkpoint.ckpt"))?;
            }
            w.flush()?;
        }
        Method::Reconfigure | Method::Baseline | Method::DistanceMatch | Method::ClusterMatch => {
            let train_cfg = cfg.train_config();
            let (train_in, val_in) = if cfg.method == Method::Baseline {
                (
                    random_features(&train_set, train_set.dim(), cfg.seed ^ BASELINE_TRAIN_SALT)?,
                    random_features(&val_set, val_set.dim(), cfg.seed ^ BASELINE_VAL_SALT)?,
                )
            } else {
                (train_set.clone(), val_set.clone())
            };
            let teacher = train_in.vectors().clone();
            for &d in &cfg.dims {
                let data = TrainData::new(&train_in, &val_in).with_teacher(&teacher);
                let fitted: Fitted = timer.time(format!("d{d}.train"), || {
                    Ok(match cfg.method {
                        Method::DistanceMatch | Method::ClusterMatch => distill(&data, d, &train_cfg)?,
                        _ => reconfigure(&data, d, &train_cfg)?,
                    })
                })?;
                let dir = record(d, &fitted.embeddings, &mut timer)?;
                fitted.outcome.best.save(dir.join("checkpoint.ckpt"))?;
                write_history_csv(&fitted.outcome.history, dir.join("history.csv"))?;
            }
        }
    }

    let summary = Summary::single(cfg.label(), cells);
    std::fs::write(out.path(SUMMARY_FILE), summary.to_json())?;
    std::fs::write(out.path("summary.txt"), summary.table() + "\n")?;
    timer.0.insert("total".into(), start.elapsed().as_secs_f64());
    write_json(&timer.0, &out.path(TIMING_FILE))?;
    Ok(RunOutcome {
        dir: out.root().to_path_buf(),
        summary,
    })
}

fn fit_reducer(cfg: &ExperimentConfig, train: &EmbeddingSet, d: usize) -> Result<Reducer> {
    Ok(match cfg.method {
        Method::Pca => fit_pca(train.vectors(), d)?,
        Method::Grp => fit_grp(train.dim(), d, cfg.seed)?,
        Method::Ica => match fit_ica(train.vectors(), d, &cfg.ica_config())? {
            IcaFit::Converged(r) => r,
            IcaFit::NotConverged(nc) => bail!(
                "ICA at d={d} did not converge: {} iterations, final delta {:.3e} (tol {:.1e})",
                nc.iterations,
                nc.final_delta,
                nc.tol
            ),
        },
        _ => unreachable!("only reducers are fitted"),
    })
}

/// `report.json` plus the optional per-query CSV.
pub fn write_report(report: &RetrievalReport, dir: &Path, per_query: bool) -> Result<()> {
    std::fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
    if per_query {
        report.write_per_query_csv(&dir.join("per_query.csv"))?;
    }
    Ok(())
}
