//! Fully resolved commands. A `Job` carries every setting a command needs, so
//! it can be stored in a manifest and executed again later.

use std::path::{Path, PathBuf};

use dlme::curvature::{hop12_check, mean_curvature};
use dlme::datasets::{
    csv_bytes, gen_starfruit, gen_swiss_roll, gen_twain_swiss_roll, load_csv,
    standardize_matrix, Column, CsvOptions, Dataset,
};
use dlme::eval::evaluate;
use dlme::graph::build_knn;
use dlme::network::Checkpoint;
use dlme::trainer::{embed, train_with, TrainConfig};
use dlme::verify::{run_verify, VerifyOptions, VerifyReport};
use dlme::{DlmeError, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::write_atomic;
use crate::plot::{scatter_svg, PlotStyle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    SwissRoll,
    Twain,
    Starfruit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenDataJob {
    pub kind: DataKind,
    pub n: usize,
    pub noise: f64,
    pub gap: f64,
    pub lobes: usize,
    pub eps: f64,
    pub seed: u64,
    pub out: PathBuf,
}

/// Where and how to read a table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableSpec {
    pub input: PathBuf,
    pub label: Option<String>,
    pub drop: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainJob {
    pub table: TableSpec,
    pub standardize: bool,
    pub config: TrainConfig,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalJob {
    pub table: TableSpec,
    pub folds: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvatureJob {
    pub table: TableSpec,
    pub k: usize,
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyJob {
    pub options: VerifyOptions,
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlotJob {
    pub table: TableSpec,
    pub style: PlotStyle,
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    GenData(GenDataJob),
    Train(TrainJob),
    Eval(EvalJob),
    Curvature(CurvatureJob),
    Verify(VerifyJob),
    Plot(PlotJob),
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EMBEDDING_FILE: &str = "embedding.csv";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const TRAIN_MANIFEST_FILE: &str = "manifest.json";

/// What a finished job reports back to the caller.
pub enum Outcome {
    Done,
    Verify(VerifyReport),
}

impl Job {
    pub fn command_name(&self) -> &'static str {
        match self {
            Job::GenData(_) => "gen-data",
            Job::Train(_) => "train",
            Job::Eval(_) => "eval",
            Job::Curvature(_) => "curvature",
            Job::Verify(_) => "verify",
            Job::Plot(_) => "plot",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::GenData(j) => Some(j.seed),
            Job::Train(j) => Some(j.config.seed),
            Job::Eval(j) => Some(j.seed),
            Job::Verify(j) => Some(j.options.seed),
            Job::Curvature(_) | Job::Plot(_) => None,
        }
    }

    pub fn outputs(&self) -> Vec<PathBuf> {
        match self {
            Job::Train(j) => [CHECKPOINT_FILE, EMBEDDING_FILE, LOG_FILE]
                .iter()
                .map(|f| j.out_dir.join(f))
                .collect(),
            Job::GenData(GenDataJob { out, .. })
            | Job::Eval(EvalJob { out, .. })
            | Job::Curvature(CurvatureJob { out, .. })
            | Job::Verify(VerifyJob { out, .. })
            | Job::Plot(PlotJob { out, .. }) => vec![out.clone()],
        }
    }

    /// Outputs expected to be byte-identical on a re-run. The training log
    /// records wall-clock time and is left out.
    pub fn reproducible_outputs(&self) -> Vec<PathBuf> {
        self.outputs()
            .into_iter()
            .filter(|p| p.file_name().is_none_or(|f| f != LOG_FILE))
            .collect()
    }

    pub fn manifest_path(&self) -> PathBuf {
        match self {
            Job::Train(j) => j.out_dir.join(TRAIN_MANIFEST_FILE),
            _ => {
                let out = &self.outputs()[0];
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                out.with_file_name(name)
            }
        }
    }

    /// The same job with its outputs moved into `dir` (file names kept).
    pub fn relocated(&self, dir: &Path) -> Job {
        let moved = |p: &Path| dir.join(p.file_name().unwrap_or_default());
        let mut job = self.clone();
        match &mut job {
            Job::Train(j) => j.out_dir = dir.to_path_buf(),
            Job::GenData(GenDataJob { out, .. })
            | Job::Eval(EvalJob { out, .. })
            | Job::Curvature(CurvatureJob { out, .. })
            | Job::Verify(VerifyJob { out, .. })
            | Job::Plot(PlotJob { out, .. }) => *out = moved(out),
        }
        job
    }

    pub fn execute(&self) -> Result<Outcome> {
        match self {
            Job::GenData(j) => gen_data(j).map(|_| Outcome::Done),
            Job::Train(j) => train_job(j).map(|_| Outcome::Done),
            Job::Eval(j) => eval_job(j).map(|_| Outcome::Done),
            Job::Curvature(j) => curvature_job(j).map(|_| Outcome::Done),
            Job::Verify(j) => verify_job(j).map(Outcome::Verify),
            Job::Plot(j) => plot_job(j).map(|_| Outcome::Done),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

impl TableSpec {
    pub fn load(&self) -> Result<Dataset> {
        let column = |c: &String| c.parse::<Column>().unwrap_or_else(|never| match never {});
        load_csv(
            &self.input,
            &CsvOptions {
                label: self.label.as_ref().map(column),
                drop: self.drop.iter().map(column).collect(),
            },
        )
    }

    /// Like [`TableSpec::load`] but the label column must be present.
    pub fn load_labelled(&self) -> Result<(Dataset, Vec<i64>)> {
        if self.label.is_none() {
            return Err(DlmeError::Config("a label column is required".into()));
        }
        let ds = self.load()?;
        let labels = ds.labels.clone().expect("label column was requested");
        Ok((ds, labels))
    }
}

fn gen_data(job: &GenDataJob) -> Result<()> {
    let ds = match job.kind {
        DataKind::SwissRoll => gen_swiss_roll(job.n, job.noise, job.seed)?,
        DataKind::Twain => gen_twain_swiss_roll(job.n, job.gap, job.noise, job.seed)?,
        DataKind::Starfruit => gen_starfruit(job.n, job.lobes, job.eps, job.seed)?,
    };
    let bytes = csv_bytes(&ds.x, ds.labels.as_deref(), "x", false)?;
    write_atomic(&job.out, &bytes)
}

fn train_job(job: &TrainJob) -> Result<()> {
    let cfg = &job.config;
    cfg.validate()?;
    let ds = job.table.load()?;
    cfg.validate_for(ds.n(), ds.dim())?;
    let x = if job.standardize {
        standardize_matrix(&ds.x)?
    } else {
        ds.x.clone()
    };
    std::fs::create_dir_all(&job.out_dir).map_err(|e| DlmeError::io(&job.out_dir, e))?;

    let every = (cfg.epochs / 10).max(1);
    let mut log = String::new();
    let out = train_with(&x, cfg, |e| {
        log.push_str(&serde_json::to_string(e).expect("plain struct"));
        log.push('\n');
        if e.epoch % every == 0 || e.epoch + 1 == cfg.epochs {
            eprintln!("epoch {:>4}  loss {:.6}", e.epoch, e.mean_loss);
        }
    });
    // keep the epochs that did finish, even when training diverged
    write_atomic(&job.out_dir.join(LOG_FILE), log.as_bytes())?;
    let out = out?;

    let z = embed(&out.f, &out.g, &x)?;
    if !z.is_finite() {
        return Err(DlmeError::Divergence {
            epoch: cfg.epochs,
            step: 0,
            loss: f64::NAN,
        });
    }
    let ckpt = Checkpoint::new(out.f, out.g);
    write_json(&job.out_dir.join(CHECKPOINT_FILE), &ckpt)?;
    let bytes = csv_bytes(&z, ds.labels.as_deref(), "z", true)?;
    write_atomic(&job.out_dir.join(EMBEDDING_FILE), &bytes)
}

fn eval_job(job: &EvalJob) -> Result<()> {
    let (ds, labels) = job.table.load_labelled()?;
    let report = evaluate(&ds.x, &labels, job.folds, job.seed)?;
    println!(
        "linear_acc {:.4}  cluster_acc {:.4}",
        report.linear_acc, report.cluster_acc
    );
    write_json(&job.out, &report)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub n: usize,
    pub k: usize,
    pub mean_abs_k: f64,
    pub signed_sum_k: f64,
    pub evaluated: usize,
    pub skipped_vertices: usize,
    pub skipped_boundary: usize,
    pub skipped_degenerate: usize,
    pub hop12_fraction: f64,
}

fn curvature_job(job: &CurvatureJob) -> Result<()> {
    let ds = job.table.load()?;
    let graph = build_knn(&ds.x, job.k)?;
    let summary = mean_curvature(&ds.x, &graph)?;
    let hop = hop12_check(&ds.x, &graph)?;
    let report = CurvatureReport {
        n: ds.n(),
        k: job.k,
        mean_abs_k: summary.mean_abs_k,
        signed_sum_k: summary.signed_sum_k,
        evaluated: summary.evaluated,
        skipped_vertices: summary.skipped_boundary + summary.skipped_degenerate,
        skipped_boundary: summary.skipped_boundary,
        skipped_degenerate: summary.skipped_degenerate,
        hop12_fraction: hop.fraction,
    };
    println!(
        "mean |k| {:.6e} over {} vertices ({} skipped)",
        report.mean_abs_k, report.evaluated, report.skipped_vertices
    );
    write_json(&job.out, &report)
}

fn verify_job(job: &VerifyJob) -> Result<VerifyReport> {
    let report = run_verify(&job.options)?;
    let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let c = &report.crossover;
    println!(
        "{}  push-pull      d_p = {:.9}  violations {}/{}",
        mark(c.pass),
        c.d_p,
        c.violations,
        c.grid_points
    );
    let l = &report.loss_difference;
    println!(
        "{}  loss identity  max |error| = {:.3e} over {} batches",
        mark(l.pass),
        l.max_abs_error,
        l.batches
    );
    println!("{}  alpha limit", mark(report.alpha_limit.pass));
    match &report.flattening {
        Some(f) => println!(
            "{}  flattening     mean |k| {:.4} -> {:.4}",
            mark(f.pass),
            f.input_mean_abs_k,
            f.embedding_mean_abs_k
        ),
        None => println!("SKIP  flattening"),
    }
    write_json(&job.out, &report)?;
    Ok(report)
}

fn plot_job(job: &PlotJob) -> Result<()> {
    let ds = job.table.load()?;
    if ds.dim() != 2 {
        return Err(DlmeError::Config(format!(
            "plot needs exactly two coordinate columns, found {}",
            ds.dim()
        )));
    }
    let svg = scatter_svg(&ds.x, ds.labels.as_deref(), &job.style)?;
    write_atomic(&job.out, svg.as_bytes())
}
