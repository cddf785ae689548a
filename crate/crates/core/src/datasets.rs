//! Synthetic manifolds and CSV tables.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DlmeError, Result};
use crate::tensor::{squared_distance, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub x: Matrix,
    pub labels: Option<Vec<i64>>,
    /// Continuous ground-truth coordinate, for generators that have one.
    pub target: Option<Vec<f64>>,
    /// Generator parameters, recorded for provenance.
    pub params: serde_json::Value,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

pub const ROLL_T_MIN: f64 = 1.5 * PI;
pub const ROLL_T_MAX: f64 = 4.5 * PI;
pub const ROLL_HEIGHT: f64 = 20.0;
/// Number of equal-width bins of the roll parameter used as labels.
pub const ROLL_LABEL_BINS: usize = 6;

fn noise_dist(noise: f64) -> Result<Option<Normal<f64>>> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(DlmeError::Generation(format!(
            "noise must be non-negative, got {noise}"
        )));
    }
    Ok(if noise > 0.0 {
        Some(Normal::new(0.0, noise).expect("positive sigma"))
    } else {
        None
    })
}

fn roll_bin(t: f64) -> i64 {
    let u = (t - ROLL_T_MIN) / (ROLL_T_MAX - ROLL_T_MIN);
    ((u * ROLL_LABEL_BINS as f64) as i64).min(ROLL_LABEL_BINS as i64 - 1)
}

/// `(t cos t, h, t sin t)` with `t ~ U[1.5π, 4.5π]`, `h ~ U[0, 20]`, plus noise.
pub fn gen_swiss_roll(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(DlmeError::Generation(format!("swiss roll needs n >= 10, got {n}")));
    }
    let jitter = noise_dist(noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(3 * n);
    let mut labels = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random_range(ROLL_T_MIN..ROLL_T_MAX);
        let h = rng.random_range(0.0..ROLL_HEIGHT);
        let mut p = [t * t.cos(), h, t * t.sin()];
        if let Some(j) = &jitter {
            p.iter_mut().for_each(|v| *v += j.sample(&mut rng));
        }
        data.extend_from_slice(&p);
        labels.push(roll_bin(t));
        target.push(t);
    }
    Ok(Dataset {
        name: "swiss_roll".into(),
        x: Matrix::from_vec(n, 3, data)?,
        labels: Some(labels),
        target: Some(target),
        params: serde_json::json!({"n": n, "noise": noise, "seed": seed}),
    })
}

pub const TWAIN_DEFAULT_GAP: f64 = PI;
pub const TWAIN_DEFAULT_NOISE: f64 = 0.1;

/// Two interleaved swiss rolls. The second is the first rotated 180° about the
/// height axis with its radius shifted so that, along any ray from the axis,
/// its sheet sits `gap` inside the first roll's sheet (and `2π − gap` outside
/// the next inner turn). Labels: 0 for the first `n/2` rows, 1 for the rest.
pub fn gen_twain_swiss_roll(n: usize, gap: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 20 || n % 2 != 0 {
        return Err(DlmeError::Generation(format!(
            "twain swiss roll needs an even n >= 20, got {n}"
        )));
    }
    if !(gap > 0.0 && gap <= PI) {
        return Err(DlmeError::Generation(format!(
            "gap must lie in (0, π], got {gap}"
        )));
    }
    if gap <= 6.0 * noise {
        return Err(DlmeError::Generation(format!(
            "gap {gap} is too small for noise {noise}: the rolls would touch (need gap > 6·noise)"
        )));
    }
    let jitter = noise_dist(noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n / 2;
    let mut data = Vec::with_capacity(3 * n);
    let mut target = Vec::with_capacity(n);
    for roll in 0..2 {
        for _ in 0..half {
            let t = rng.random_range(ROLL_T_MIN..ROLL_T_MAX);
            let h = rng.random_range(0.0..ROLL_HEIGHT);
            let (radius, angle) = if roll == 0 {
                (t, t)
            } else {
                (t + PI - gap, t + PI)
            };
            let mut p = [radius * angle.cos(), h, radius * angle.sin()];
            if let Some(j) = &jitter {
                p.iter_mut().for_each(|v| *v += j.sample(&mut rng));
            }
            data.extend_from_slice(&p);
            target.push(t);
        }
    }
    let x = Matrix::from_vec(n, 3, data)?;
    let min_cross = min_cross_distance(&x, half);
    if !(min_cross > 0.0) {
        return Err(DlmeError::Generation(
            "the two rolls intersect; increase the gap or lower the noise".into(),
        ));
    }
    let labels = (0..n).map(|i| (i >= half) as i64).collect();
    Ok(Dataset {
        name: "twain_swiss_roll".into(),
        x,
        labels: Some(labels),
        target: Some(target),
        params: serde_json::json!({
            "n": n, "gap": gap, "noise": noise, "seed": seed, "min_cross_distance": min_cross
        }),
    })
}

/// Smallest distance between a row `< split` and a row `>= split`.
pub fn min_cross_distance(x: &Matrix, split: usize) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..split {
        for j in split..x.rows() {
            best = best.min(squared_distance(x.row(i), x.row(j)));
        }
    }
    best.sqrt()
}

pub const STARFRUIT_RADIUS: f64 = 10.0;
pub const STARFRUIT_HEIGHT: f64 = 20.0;
pub const STARFRUIT_DEFAULT_LOBES: usize = 5;
pub const STARFRUIT_DEFAULT_EPS: f64 = 0.3;

/// Star-shaped cylinder `r(φ) = R (1 + eps cos(lobes φ))` extruded over `z ∈ [0, H]`.
/// Labels give the lobe index of `φ`; the continuous target is `φ` itself.
pub fn gen_starfruit(n: usize, lobes: usize, eps: f64, seed: u64) -> Result<Dataset> {
    if lobes < 3 {
        return Err(DlmeError::Generation(format!("need at least 3 lobes, got {lobes}")));
    }
    if n == 0 {
        return Err(DlmeError::Generation("need at least one point".into()));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(DlmeError::Generation(format!("eps must lie in [0, 1), got {eps}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(3 * n);
    let mut labels = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let phi = rng.random_range(0.0..2.0 * PI);
        let z = rng.random_range(0.0..STARFRUIT_HEIGHT);
        let r = STARFRUIT_RADIUS * (1.0 + eps * (lobes as f64 * phi).cos());
        data.extend_from_slice(&[r * phi.cos(), r * phi.sin(), z]);
        // lobes are centred on the ridges at φ = 2πk/lobes
        let lobe = ((phi / (2.0 * PI) * lobes as f64 + 0.5).floor() as usize) % lobes;
        labels.push(lobe as i64);
        target.push(phi);
    }
    Ok(Dataset {
        name: "starfruit".into(),
        x: Matrix::from_vec(n, 3, data)?,
        labels: Some(labels),
        target: Some(target),
        params: serde_json::json!({"n": n, "lobes": lobes, "eps": eps, "seed": seed}),
    })
}

/// A CSV column addressed by header name or zero-based position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for Column {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_string()),
        })
    }
}

impl Column {
    fn resolve(&self, header: Option<&[String]>, width: usize) -> Result<usize> {
        let idx = match self {
            Column::Index(i) => Some(*i),
            Column::Name(name) => header.and_then(|h| h.iter().position(|c| c == name)),
        };
        match idx {
            Some(i) if i < width => Ok(i),
            _ => Err(DlmeError::Config(format!("no column {self:?} in the CSV"))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CsvOptions {
    /// Integer label column, removed from the features.
    pub label: Option<Column>,
    /// Further columns to ignore (e.g. row ids).
    pub drop: Vec<Column>,
}

/// Parsed table: optional header plus numeric rows.
struct RawTable {
    header: Option<Vec<String>>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|e| DlmeError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 1;
        if let Some(w) = width {
            if record.len() != w {
                return Err(DlmeError::Parse {
                    row: line,
                    col: record.len().min(w) + 1,
                    msg: format!("expected {w} fields, found {}", record.len()),
                });
            }
        }
        width = Some(record.len());
        let parsed: Vec<std::result::Result<f64, usize>> = record
            .iter()
            .enumerate()
            .map(|(c, cell)| cell.parse::<f64>().map_err(|_| c))
            .collect();
        if r == 0 && parsed.iter().any(|p| p.is_err()) {
            header = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (c, p) in parsed.into_iter().enumerate() {
            match p {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(DlmeError::Parse {
                        row: line,
                        col: c + 1,
                        msg: format!("not a finite number: {:?}", &record[c]),
                    })
                }
            }
        }
        rows.push(row);
    }
    Ok(RawTable { header, rows })
}

/// Header of a CSV file, if its first row is one (same rule as [`load_csv`]).
pub fn csv_header(path: &Path) -> Result<Option<Vec<String>>> {
    let file = std::fs::File::open(path).map_err(|e| DlmeError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    match reader.records().next() {
        Some(record) => {
            let record = record?;
            let is_header = record.iter().any(|c| c.parse::<f64>().is_err());
            Ok(is_header.then(|| record.iter().map(str::to_string).collect()))
        }
        None => Ok(None),
    }
}

/// Loads a numeric CSV. A first row containing any non-numeric cell is taken
/// as the header. Row and column numbers in errors are 1-based file positions.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let table = read_table(path)?;
    let width = table
        .rows
        .first()
        .map(Vec::len)
        .or(table.header.as_ref().map(Vec::len))
        .unwrap_or(0);
    if table.rows.is_empty() {
        return Err(DlmeError::Parse {
            row: 1,
            col: 1,
            msg: "no data rows".into(),
        });
    }
    let header = table.header.as_deref();
    let label_col = opts
        .label
        .as_ref()
        .map(|c| c.resolve(header, width))
        .transpose()?;
    let mut skip = vec![false; width];
    for c in &opts.drop {
        skip[c.resolve(header, width)?] = true;
    }
    if let Some(l) = label_col {
        skip[l] = true;
    }
    let keep: Vec<usize> = (0..width).filter(|&c| !skip[c]).collect();
    if keep.is_empty() {
        return Err(DlmeError::Config("no feature columns left".into()));
    }

    let first_line = if table.header.is_some() { 2 } else { 1 };
    let mut data = Vec::with_capacity(table.rows.len() * keep.len());
    let mut labels = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        data.extend(keep.iter().map(|&c| row[c]));
        if let Some(l) = label_col {
            let v = row[l];
            if v.fract() != 0.0 {
                return Err(DlmeError::Parse {
                    row: first_line + r,
                    col: l + 1,
                    msg: format!("label {v} is not an integer"),
                });
            }
            labels.push(v as i64);
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        name,
        x: Matrix::from_vec(table.rows.len(), keep.len(), data)?,
        labels: label_col.map(|_| labels),
        target: None,
        params: serde_json::json!({"path": path.display().to_string()}),
    })
}

/// Writes `x` (and labels, if any) with a header row. Columns are
/// `x1..xD[,label]`, or `id,z1..zD[,label]` when `with_id` is set.
pub fn write_csv(path: &Path, x: &Matrix, labels: Option<&[i64]>, prefix: &str, with_id: bool) -> Result<()> {
    let bytes = csv_bytes(x, labels, prefix, with_id)?;
    std::fs::write(path, bytes).map_err(|e| DlmeError::io(path, e))
}

/// CSV text with header `[id,]{prefix}1..{prefix}d[,label]`.
pub fn csv_bytes(x: &Matrix, labels: Option<&[i64]>, prefix: &str, with_id: bool) -> Result<Vec<u8>> {
    if let Some(l) = labels {
        if l.len() != x.rows() {
            return Err(DlmeError::dim(
                "write_csv",
                format!("{} labels for {} rows", l.len(), x.rows()),
            ));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = Vec::new();
    if with_id {
        header.push("id".into());
    }
    header.extend((1..=x.cols()).map(|j| format!("{prefix}{j}")));
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    let mut fields = Vec::new();
    for i in 0..x.rows() {
        fields.clear();
        if with_id {
            fields.push(i.to_string());
        }
        // `{}` on f64 prints the shortest string that parses back exactly
        fields.extend(x.row(i).iter().map(|v| format!("{v}")));
        if let Some(l) = labels {
            fields.push(l[i].to_string());
        }
        w.write_record(&fields)?;
    }
    w.into_inner()
        .map_err(|e| DlmeError::io("<memory>", e.into_error()))
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-column zero mean and unit (population) variance.
pub fn standardize_matrix(x: &Matrix) -> Result<Matrix> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(DlmeError::Contract(format!(
            "standardizing needs at least 2 rows, got {n}"
        )));
    }
    let mut out = x.clone();
    for j in 0..d {
        let mean = (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.max(VARIANCE_FLOOR).sqrt();
        for i in 0..n {
            out[(i, j)] = if var < VARIANCE_FLOOR {
                0.0
            } else {
                (x[(i, j)] - mean) / sd
            };
        }
    }
    Ok(out)
}

pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    Ok(Dataset {
        x: standardize_matrix(&ds.x)?,
        ..ds.clone()
    })
}
