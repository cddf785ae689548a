//! `dlme` — train and inspect two-network manifold embeddings from the command line.

mod jobs;
mod manifest;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dlme::datasets::{csv_header, STARFRUIT_DEFAULT_EPS, STARFRUIT_DEFAULT_LOBES, TWAIN_DEFAULT_GAP, TWAIN_DEFAULT_NOISE};
use dlme::eval::DEFAULT_FOLDS;
use dlme::loss::Mode;
use dlme::network::MlpSpec;
use dlme::trainer::TrainConfig;
use dlme::verify::{FlatteningOptions, VerifyOptions, CURVATURE_K};
use dlme::{DlmeError, Result};

use jobs::{
    CurvatureJob, DataKind, EvalJob, GenDataJob, Job, Outcome, PlotJob, TableSpec, TrainJob,
    VerifyJob,
};
use manifest::RunManifest;
use plot::PlotStyle;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "dlme", version, about = "Locally flat manifold embeddings with a pair of t-kernel networks")]
#[command(after_help = "Exit status: 0 on success, 2 for configuration or usage errors, \
3 for numerical failures (divergence, failed verification, non-reproducible replay).")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic 3-D dataset as CSV (x1,x2,x3,label).
    GenData(GenDataArgs),
    /// Train the embedding networks on a CSV table.
    Train(TrainArgs),
    /// Linear-SVM and k-means accuracy of a labelled embedding.
    Eval(EvalArgs),
    /// Discrete curvature statistics of a point cloud.
    Curvature(CurvatureArgs),
    /// Numerical checks of the method's analytical properties.
    Verify(VerifyArgs),
    /// Scatter plot of a 2-D embedding as SVG.
    Plot(PlotArgs),
    /// Re-run the command recorded in a manifest and compare outputs byte for byte.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Standard deviation of the isotropic Gaussian noise.
    #[arg(long, default_value_t = TWAIN_DEFAULT_NOISE)]
    noise: f64,
    /// Radial offset between the two rolls (twain only).
    #[arg(long, default_value_t = TWAIN_DEFAULT_GAP)]
    gap: f64,
    /// Number of ridges (starfruit only).
    #[arg(long, default_value_t = STARFRUIT_DEFAULT_LOBES)]
    lobes: usize,
    /// Ridge amplitude relative to the radius (starfruit only).
    #[arg(long, default_value_t = STARFRUIT_DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    /// Input CSV (comma separated; a non-numeric first row is a header).
    #[arg(long)]
    input: PathBuf,
    /// Integer label column, by header name or 0-based index.
    #[arg(long)]
    label: Option<String>,
    /// Columns to ignore, by name or index. A column named `id` is always ignored.
    #[arg(long)]
    drop: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    table: TableArgs,
    /// JSON file with training settings; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Skip per-feature standardisation of the input.
    #[arg(long)]
    raw: bool,
    /// Directory for checkpoint.json, embedding.csv, train_log.jsonl and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    hp: HyperArgs,
}

#[derive(Args, Default)]
struct HyperArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Weight of the data-augmentation similarity term.
    #[arg(long)]
    alpha: Option<f64>,
    /// Degrees of freedom of the structure-space kernel.
    #[arg(long)]
    nu_y: Option<f64>,
    /// Degrees of freedom of the embedding-space kernel.
    #[arg(long)]
    nu_z: Option<f64>,
    #[arg(long)]
    clamp_eps: Option<f64>,
    /// Bandwidth of the Gaussian kernel used by mode a2.
    #[arg(long)]
    gaussian_sigma: Option<f64>,
    /// Neighbours used for augmentation.
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long)]
    mix_lo: Option<f64>,
    #[arg(long)]
    mix_hi: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// dlme, or an ablation: a1, a2, a3.
    #[arg(long)]
    mode: Option<Mode>,
    /// Layer widths of the first network, comma separated; -1 is the input width.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    f_spec: Option<Vec<i64>>,
    /// Layer widths of the second network, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    g_spec: Option<Vec<i64>>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "label")]
    label: String,
    #[arg(long)]
    drop: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurvatureArgs {
    #[command(flatten)]
    table: TableArgs,
    /// Neighbourhood size.
    #[arg(long, default_value_t = CURVATURE_K)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100.0)]
    nu_y: f64,
    #[arg(long, default_value_t = 10.0)]
    nu_z: f64,
    /// Random batches for the closed-form loss identity.
    #[arg(long, default_value_t = 100)]
    batches: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave out the training-based curvature experiment.
    #[arg(long)]
    skip_flattening: bool,
    /// Points in the two-roll dataset for the curvature experiment.
    #[arg(long, default_value_t = 4000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Training settings (JSON) for the curvature experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    table: TableArgs,
    #[arg(long)]
    title: Option<String>,
    #[arg(long, default_value_t = 720)]
    width: u32,
    #[arg(long, default_value_t = 560)]
    height: u32,
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Where the re-run writes its outputs (default: a temporary directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| DlmeError::io(p, e))
}

/// Pins down the columns read from a table. A header column named `label`
/// becomes the label when none is given, and an `id` column is dropped.
fn resolve_table(input: &Path, label: Option<String>, mut drop: Vec<String>, auto_label: bool) -> Result<TableSpec> {
    let input = std::fs::canonicalize(input).map_err(|e| DlmeError::io(input, e))?;
    let header = csv_header(&input)?.unwrap_or_default();
    let has = |name: &str| header.iter().any(|c| c == name);
    let label = match label {
        Some(l) => Some(l),
        None if auto_label && has("label") => Some("label".into()),
        None => None,
    };
    if has("id") && label.as_deref() != Some("id") && !drop.iter().any(|c| c == "id") {
        drop.push("id".into());
    }
    Ok(TableSpec { input, label, drop })
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| DlmeError::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| DlmeError::Config(format!("{}: {e}", p.display())))
        }
        None => Ok(TrainConfig::default()),
    }
}

impl HyperArgs {
    fn apply(self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(epochs, batch_size, lr, weight_decay, alpha, nu_y, nu_z, clamp_eps, gaussian_sigma, knn_k, seed, mode);
        if let Some(lo) = self.mix_lo {
            cfg.mix_range.lo = lo;
        }
        if let Some(hi) = self.mix_hi {
            cfg.mix_range.hi = hi;
        }
        if let Some(dims) = self.f_spec {
            cfg.f_spec = MlpSpec::new(dims);
        }
        if let Some(dims) = self.g_spec {
            cfg.g_spec = MlpSpec::new(dims);
        }
    }
}

fn resolve(cmd: Cmd) -> Result<Job> {
    Ok(match cmd {
        Cmd::GenData(a) => Job::GenData(GenDataJob {
            kind: a.kind,
            n: a.n,
            noise: a.noise,
            gap: a.gap,
            lobes: a.lobes,
            eps: a.eps,
            seed: a.seed,
            out: absolute(&a.out)?,
        }),
        Cmd::Train(a) => {
            let mut config = load_train_config(a.config.as_deref())?;
            a.hp.apply(&mut config);
            config.validate()?;
            Job::Train(TrainJob {
                table: resolve_table(&a.table.input, a.table.label, a.table.drop, true)?,
                standardize: !a.raw,
                config,
                out_dir: absolute(&a.out_dir)?,
            })
        }
        Cmd::Eval(a) => Job::Eval(EvalJob {
            table: resolve_table(&a.input, Some(a.label), a.drop, false)?,
            folds: a.folds,
            seed: a.seed,
            out: absolute(&a.out)?,
        }),
        Cmd::Curvature(a) => Job::Curvature(CurvatureJob {
            table: resolve_table(&a.table.input, a.table.label, a.table.drop, true)?,
            k: a.k,
            out: absolute(&a.out)?,
        }),
        Cmd::Verify(a) => {
            let flattening = if a.skip_flattening {
                None
            } else {
                let mut train = load_train_config(a.config.as_deref())?;
                if let Some(e) = a.epochs {
                    train.epochs = e;
                }
                Some(FlatteningOptions {
                    n: a.n,
                    data_seed: a.data_seed,
                    train,
                })
            };
            Job::Verify(VerifyJob {
                options: VerifyOptions {
                    nu_y: a.nu_y,
                    nu_z: a.nu_z,
                    batches: a.batches,
                    seed: a.seed,
                    flattening,
                },
                out: absolute(&a.out)?,
            })
        }
        Cmd::Plot(a) => Job::Plot(PlotJob {
            table: resolve_table(&a.table.input, a.table.label, a.table.drop, true)?,
            style: PlotStyle {
                width: a.width,
                height: a.height,
                radius: a.radius,
                title: a.title,
            },
            out: absolute(&a.out)?,
        }),
        Cmd::Replay(_) => unreachable!("replay is handled before resolution"),
    })
}

/// Runs a job, then records its manifest. Returns whether every check passed.
fn run_and_record(job: &Job) -> Result<bool> {
    let start = Instant::now();
    let outcome = job.execute()?;
    let manifest = RunManifest::new(job, start.elapsed().as_millis());
    manifest.save(&job.manifest_path())?;
    Ok(match outcome {
        Outcome::Done => true,
        Outcome::Verify(r) => r.pass,
    })
}

fn replay(args: ReplayArgs) -> Result<bool> {
    let manifest = RunManifest::load(&args.manifest)?;
    let tmp;
    let dir = match args.out_dir {
        Some(d) => {
            std::fs::create_dir_all(&d).map_err(|e| DlmeError::io(&d, e))?;
            absolute(&d)?
        }
        None => {
            tmp = tempfile::tempdir().map_err(|e| DlmeError::io(std::env::temp_dir(), e))?;
            tmp.path().to_path_buf()
        }
    };
    let rerun = manifest.job.relocated(&dir);
    let passed = run_and_record(&rerun)?;
    let mut identical = true;
    for (orig, new) in manifest
        .job
        .reproducible_outputs()
        .iter()
        .zip(rerun.reproducible_outputs())
    {
        let a = std::fs::read(orig).map_err(|e| DlmeError::io(orig, e))?;
        let b = std::fs::read(&new).map_err(|e| DlmeError::io(&new, e))?;
        let same = a == b;
        identical &= same;
        println!("{}  {}", if same { "same" } else { "DIFF" }, orig.display());
    }
    Ok(identical && passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Replay(a) => replay(a),
        cmd => resolve(cmd).and_then(|job| run_and_record(&job)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NUMERIC),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { EXIT_NUMERIC } else { EXIT_USAGE })
        }
    }
}
