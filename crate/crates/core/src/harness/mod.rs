//! Experiment runner behind the `topkd` CLI: teacher training, distillation
//! runs across seeds, parameter sweeps and logit analyses. Every command
//! writes its effective configuration and results under `output_dir`; the
//! same config and seeds always produce byte-identical files.

pub mod analysis;
pub mod config;
pub mod train;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{load_csv_with_classes, DatasetSpec, LabeledDataset};
use crate::model::{evaluate_accuracy, MlpParams};

pub use analysis::{analyze_corr, analyze_topk, CorrReport, TopkReport};
pub use config::{DatasetSource, ExperimentConfig, LrDecay, Method, OptimizerSpec};
pub use train::{EpochRecord, LossParts, RunResult};

pub const THREADS_ENV: &str = "TOPKD_THREADS";
pub const TEACHER_CHECKPOINT: &str = "teacher.json";

/// Worker pool bounded by `TOPKD_THREADS` (default: available parallelism).
pub fn worker_pool() -> anyhow::Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .with_context(|| format!("{THREADS_ENV}={v:?} is not a positive integer"))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn prepare_output_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

/// Per-epoch metrics as CSV.
pub fn metrics_csv(epochs: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_acc,val_acc,loss_total,loss_ce,loss_distill,loss_contrastive,loss_tdl,loss_kd\n");
    for e in epochs {
        let l = &e.loss;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.epoch, e.lr, e.train_acc, e.val_acc, l.total, l.ce, l.distill, l.contrastive, l.tdl, l.kd
        );
    }
    out
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeacherSummary {
    pub seed: u64,
    pub layer_dims: Vec<usize>,
    pub train_acc: f64,
    pub val_acc: f64,
    pub checkpoint: PathBuf,
}

/// Trains the teacher and writes `teacher.json`, its metrics CSV, a summary
/// and the effective config.
pub fn cmd_train_teacher(cfg: &ExperimentConfig) -> anyhow::Result<TeacherSummary> {
    let (train_ds, val) = cfg.dataset.load()?;
    cfg.teacher_optimizer().validate("teacher_optimizer")?;
    prepare_output_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("config.json"), cfg)?;
    let run = train::train_teacher(cfg, &train_ds, &val)?;
    let ckpt = cfg.output_dir.join(TEACHER_CHECKPOINT);
    run.params.save(&ckpt)?;
    write_file(
        &cfg.output_dir.join(format!("metrics_teacher_{}.csv", cfg.teacher_seed)),
        &metrics_csv(&run.epochs),
    )?;
    let summary = TeacherSummary {
        seed: cfg.teacher_seed,
        layer_dims: run.params.layer_dims.clone(),
        train_acc: evaluate_accuracy(&run.params, &train_ds)?,
        val_acc: run.final_val_acc,
        checkpoint: ckpt,
    };
    write_json(&cfg.output_dir.join("teacher_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistillSummary {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub final_val_acc: Vec<f64>,
    pub mean_val_acc: f64,
    pub std_val_acc: f64,
    pub teacher_val_acc: Option<f64>,
}

/// A teacher loaded and checked against the training data, with its logits
/// over the training set cached.
pub struct PreparedTeacher {
    pub params: MlpParams,
    pub train_logits: crate::numerics::Matrix,
    pub val_acc: f64,
}

impl PreparedTeacher {
    pub fn new(params: MlpParams, train_ds: &LabeledDataset, val: &LabeledDataset) -> anyhow::Result<Self> {
        let train_logits = train::teacher_logits(&params, train_ds)?;
        let val_acc = evaluate_accuracy(&params, val)?;
        Ok(Self {
            params,
            train_logits,
            val_acc,
        })
    }

    pub fn load(path: &Path, train_ds: &LabeledDataset, val: &LabeledDataset) -> anyhow::Result<Self> {
        let params = MlpParams::load(path).with_context(|| format!("loading teacher {}", path.display()))?;
        Self::new(params, train_ds, val)
    }
}

/// Runs every seed of `cfg.seeds` for `cfg.method`, in parallel, results in
/// seed order. Nothing is written.
pub fn run_seeds(
    cfg: &ExperimentConfig,
    train_ds: &LabeledDataset,
    val: &LabeledDataset,
    teacher: Option<&PreparedTeacher>,
    pool: &rayon::ThreadPool,
) -> anyhow::Result<Vec<RunResult>> {
    cfg.validate(train_ds.num_classes)?;
    if cfg.method.uses_teacher() {
        ensure!(teacher.is_some(), "method {} needs a teacher checkpoint", cfg.method);
    }
    let logits = teacher.map(|t| &t.train_logits);
    pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| train::train_student(cfg, cfg.method, seed, train_ds, val, logits))
            .collect()
    })
}

/// Distills one student per seed and writes per-seed metrics and checkpoints,
/// `summary.json` and the effective config. `method = scratch` never reads
/// the teacher.
pub fn cmd_distill(cfg: &ExperimentConfig, teacher_path: Option<&Path>) -> anyhow::Result<DistillSummary> {
    let (train_ds, val) = cfg.dataset.load()?;
    cfg.validate(train_ds.num_classes)?;
    let teacher = match (cfg.method.uses_teacher(), teacher_path) {
        (false, _) => None,
        (true, Some(p)) => Some(PreparedTeacher::load(p, &train_ds, &val)?),
        (true, None) => bail!("method {} needs --teacher", cfg.method),
    };
    prepare_output_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("config.json"), cfg)?;
    let pool = worker_pool()?;
    let runs = run_seeds(cfg, &train_ds, &val, teacher.as_ref(), &pool)?;
    for (seed, run) in cfg.seeds.iter().zip(&runs) {
        let tag = format!("{}_{seed}", cfg.method);
        write_file(&cfg.output_dir.join(format!("metrics_{tag}.csv")), &metrics_csv(&run.epochs))?;
        run.params.save(&cfg.output_dir.join(format!("student_{tag}.json")))?;
    }
    let accs: Vec<f64> = runs.iter().map(|r| r.final_val_acc).collect();
    let (mean, std) = mean_std(&accs);
    let summary = DistillSummary {
        method: cfg.method,
        seeds: cfg.seeds.clone(),
        final_val_acc: accs,
        mean_val_acc: mean,
        std_val_acc: std,
        teacher_val_acc: teacher.map(|t| t.val_acc),
    };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Value lists used when a sweep names only the parameter.
pub fn default_sweep_values(param: &str) -> Option<&'static str> {
    match param {
        "method" => Some("scratch,kd_kl,contrastive,topkd_no_tdl,topkd_no_tsm,topkd"),
        "k" => Some("1,3,5,10"),
        "alpha" => Some("1,2,3,4,5"),
        "beta" => Some("1,2"),
        _ => None,
    }
}

pub const SWEEP_PARAMS: [&str; 7] = ["k", "alpha", "beta", "tau", "gamma", "lambda", "method"];

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<String>,
}

impl Sweep {
    /// Parses `param=v1,v2,…`. A bare `method`, `k`, `alpha` or `beta`
    /// sweeps the preset values from [`default_sweep_values`].
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        let (param, values) = match s.split_once('=') {
            Some(pv) => pv,
            None => {
                let preset = default_sweep_values(s.trim())
                    .with_context(|| format!("sweep `{s}` needs values: <param>=<v1,v2,...>"))?;
                (s.trim(), preset)
            }
        };
        let param = param.trim().to_string();
        if !SWEEP_PARAMS.contains(&param.as_str()) {
            bail!("unknown sweep parameter `{param}` (expected one of {})", SWEEP_PARAMS.join(", "));
        }
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        ensure!(!values.is_empty(), "sweep `{param}` has no values");
        let sweep = Self { param, values };
        // Surface unparseable values before any training starts.
        let base = ExperimentConfig::default();
        for v in &sweep.values {
            sweep.apply(&base, v)?;
        }
        Ok(sweep)
    }

    /// The config with this sweep's parameter set to `value`.
    pub fn apply(&self, base: &ExperimentConfig, value: &str) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let num = || -> anyhow::Result<f64> {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .with_context(|| format!("`{value}` is not a number"))
        };
        match self.param.as_str() {
            "k" => {
                let k: usize = value.parse().with_context(|| format!("`{value}` is not a count"))?;
                cfg.scaling.k = k;
                cfg.tdl.k = k;
            }
            "alpha" => cfg.tdl.alpha = num()?,
            "beta" => cfg.tdl.beta = num()?,
            "tau" => cfg.tau = num()?,
            "gamma" => cfg.scaling.gamma = num()?,
            "lambda" => cfg.scaling.lambda = num()?,
            "method" => cfg.method = value.parse()?,
            other => bail!("unknown sweep parameter `{other}`"),
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub param_value: String,
    pub seed: u64,
    pub final_acc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummaryRow {
    pub param_value: String,
    pub runs: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub param: String,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<AblationSummaryRow>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl AblationTable {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("param_value,seed,final_acc,error\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                csv_field(&r.param_value),
                r.seed,
                opt_num(r.final_acc),
                csv_field(r.error.as_deref().unwrap_or(""))
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("param_value,runs,mean,std,error\n");
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&r.param_value),
                r.runs,
                opt_num(r.mean),
                opt_num(r.std),
                csv_field(r.error.as_deref().unwrap_or(""))
            );
        }
        out
    }
}

/// Runs one distillation per sweep value per seed and writes
/// `ablation_<param>.csv` (one row per run) and `ablation_<param>_summary.csv`
/// (mean/std per value). Values whose config is invalid (e.g. `2k > C`) are
/// reported as error rows. Without `teacher_path` the teacher is trained from
/// `cfg` first and saved alongside.
pub fn cmd_ablate(cfg: &ExperimentConfig, sweep: &Sweep, teacher_path: Option<&Path>) -> anyhow::Result<AblationTable> {
    let (train_ds, val) = cfg.dataset.load()?;
    prepare_output_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("config.json"), cfg)?;

    let configs: Vec<(String, anyhow::Result<ExperimentConfig>)> = sweep
        .values
        .iter()
        .map(|v| {
            let c = sweep.apply(cfg, v).and_then(|c| c.validate(train_ds.num_classes).map(|_| c));
            (v.clone(), c)
        })
        .collect();
    let needs_teacher = configs
        .iter()
        .any(|(_, c)| c.as_ref().is_ok_and(|c| c.method.uses_teacher()));
    let teacher = if needs_teacher {
        Some(match teacher_path {
            Some(p) => PreparedTeacher::load(p, &train_ds, &val)?,
            None => {
                let run = train::train_teacher(cfg, &train_ds, &val)?;
                run.params.save(&cfg.output_dir.join(TEACHER_CHECKPOINT))?;
                PreparedTeacher::new(run.params, &train_ds, &val)?
            }
        })
    } else {
        None
    };

    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = worker_pool()?;
    let logits = teacher.as_ref().map(|t| &t.train_logits);
    let results: Vec<Result<f64, String>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| match &configs[i].1 {
                Err(e) => Err(format!("{e:#}")),
                Ok(c) => train::train_student(c, c.method, seed, &train_ds, &val, logits)
                    .map(|r| r.final_val_acc)
                    .map_err(|e| format!("{e:#}")),
            })
            .collect()
    });

    let rows: Vec<AblationRow> = jobs
        .iter()
        .zip(results)
        .map(|(&(i, seed), res)| AblationRow {
            param_value: configs[i].0.clone(),
            seed,
            final_acc: res.as_ref().ok().copied(),
            error: res.err(),
        })
        .collect();
    let summary = configs
        .iter()
        .map(|(value, _)| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| &r.param_value == value).collect();
            let accs: Vec<f64> = mine.iter().filter_map(|r| r.final_acc).collect();
            let error = mine.iter().find_map(|r| r.error.clone());
            let (mean, std) = if accs.is_empty() { (None, None) } else {
                let (m, s) = mean_std(&accs);
                (Some(m), Some(s))
            };
            AblationSummaryRow {
                param_value: value.clone(),
                runs: accs.len(),
                mean,
                std,
                error,
            }
        })
        .collect();
    let table = AblationTable {
        param: sweep.param.clone(),
        rows,
        summary,
    };
    write_file(&cfg.output_dir.join(format!("ablation_{}.csv", sweep.param)), &table.rows_csv())?;
    write_file(
        &cfg.output_dir.join(format!("ablation_{}_summary.csv", sweep.param)),
        &table.summary_csv(),
    )?;
    Ok(table)
}

/// Evaluation data for the analysis commands:
/// `default` (validation split of the default synthetic spec), a `.csv` file,
/// or a JSON file holding either a dataset spec or a full experiment config
/// (its validation split is used).
pub fn load_eval_data(arg: &str, model: &MlpParams) -> anyhow::Result<LabeledDataset> {
    if arg == "default" {
        return Ok(crate::data::generate_hierarchical(&DatasetSpec::default())?.1);
    }
    let path = Path::new(arg);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return Ok(load_csv_with_classes(path, model.input_dim(), model.output_dim())?);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(spec) = serde_json::from_str::<DatasetSpec>(&text) {
        return Ok(crate::data::generate_hierarchical(&spec)?.1);
    }
    let cfg = ExperimentConfig::from_json(&text)
        .with_context(|| format!("{} is neither a dataset spec nor an experiment config", path.display()))?;
    Ok(cfg.dataset.load()?.1)
}

pub fn cmd_analyze_topk(teacher_path: &Path, data: &str, k: usize) -> anyhow::Result<TopkReport> {
    let teacher = MlpParams::load(teacher_path).with_context(|| format!("loading {}", teacher_path.display()))?;
    let ds = load_eval_data(data, &teacher)?;
    analyze_topk(&teacher, &ds, k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrSummary {
    pub mean_abs_diff: f64,
    pub max_abs_diff: f64,
    pub zero_variance_teacher: Vec<usize>,
    pub zero_variance_student: Vec<usize>,
    pub matrix: PathBuf,
}

pub fn corr_csv(m: &crate::numerics::Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Writes `corr_diff.csv` (normalized `|corr_T − corr_S|`) into `out_dir`.
pub fn cmd_analyze_corr(teacher_path: &Path, student_path: &Path, data: &str, out_dir: &Path) -> anyhow::Result<CorrSummary> {
    let teacher = MlpParams::load(teacher_path).with_context(|| format!("loading {}", teacher_path.display()))?;
    let student = MlpParams::load(student_path).with_context(|| format!("loading {}", student_path.display()))?;
    let ds = load_eval_data(data, &teacher)?;
    let report = analyze_corr(&teacher, &student, &ds)?;
    for (who, cols) in [("teacher", &report.zero_variance_teacher), ("student", &report.zero_variance_student)] {
        if !cols.is_empty() {
            log::warn!("{who} logits have zero variance in classes {cols:?}; their correlations are set to 0");
        }
    }
    prepare_output_dir(out_dir)?;
    let path = out_dir.join("corr_diff.csv");
    write_file(&path, &corr_csv(&report.normalized_diff))?;
    Ok(CorrSummary {
        mean_abs_diff: report.mean_abs_diff,
        max_abs_diff: report.max_abs_diff,
        zero_variance_teacher: report.zero_variance_teacher,
        zero_variance_student: report.zero_variance_student,
        matrix: path,
    })
}
