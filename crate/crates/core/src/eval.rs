//! Downstream metrics on an embedding: linear-SVM accuracy under stratified
//! cross-validation and k-means clustering accuracy.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DlmeError, Result};
use crate::tensor::{squared_distance, Matrix};

pub const SVM_LAMBDA: f64 = 1e-4;
pub const SVM_EPOCHS: usize = 200;
pub const DEFAULT_FOLDS: usize = 10;
pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub linear_acc: f64,
    pub fold_acc: Vec<f64>,
    pub cluster_acc: f64,
    pub fold_count: usize,
    pub seed: u64,
    pub n: usize,
    pub classes: usize,
}

/// Maps arbitrary integer labels to `0..c` in ascending label order.
fn encode_labels(labels: &[i64]) -> (Vec<usize>, usize) {
    let ids: BTreeMap<i64, usize> = labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

/// Fold index per sample; each class is spread round-robin over the folds.
pub fn stratified_folds(labels: &[i64], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(DlmeError::Contract(format!("need at least 2 folds, got {folds}")));
    }
    let (codes, classes) = encode_labels(labels);
    let mut members = vec![Vec::new(); classes];
    for (i, &c) in codes.iter().enumerate() {
        members[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for m in &mut members {
        if m.len() < folds {
            return Err(DlmeError::Contract(format!(
                "cannot stratify: a class has {} members for {folds} folds",
                m.len()
            )));
        }
        m.shuffle(&mut rng);
        for &i in m.iter() {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    Ok(fold_of)
}

/// Binary linear SVM trained with Pegasos on `{-1, +1}` targets.
/// The last weight is the bias (a constant feature, regularised with the rest).
fn pegasos(x: &[&[f64]], y: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = x[0].len();
    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..x.len()).collect();
    let radius = 1.0 / SVM_LAMBDA.sqrt();
    let mut t = 0usize;
    for _ in 0..SVM_EPOCHS {
        order.shuffle(rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (SVM_LAMBDA * t as f64);
            let margin = y[i] * (dot(&w[..d], x[i]) + w[d]);
            let shrink = 1.0 - eta * SVM_LAMBDA;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (wv, xv) in w[..d].iter_mut().zip(x[i]) {
                    *wv += eta * y[i] * xv;
                }
                w[d] += eta * y[i];
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    w
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-vs-one linear SVM: one Pegasos machine per class pair, majority vote
/// (ties to the lower class index).
pub struct LinearSvm {
    classes: usize,
    machines: Vec<(usize, usize, Vec<f64>)>,
}

impl LinearSvm {
    pub fn fit(x: &Matrix, codes: &[usize], classes: usize, seed: u64) -> Result<Self> {
        if x.rows() != codes.len() || x.rows() == 0 {
            return Err(DlmeError::dim(
                "svm",
                format!("{} rows vs {} labels", x.rows(), codes.len()),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut machines = Vec::new();
        for a in 0..classes {
            for b in (a + 1)..classes {
                let idx: Vec<usize> = (0..codes.len())
                    .filter(|&i| codes[i] == a || codes[i] == b)
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let rows: Vec<&[f64]> = idx.iter().map(|&i| x.row(i)).collect();
                let y: Vec<f64> = idx
                    .iter()
                    .map(|&i| if codes[i] == a { 1.0 } else { -1.0 })
                    .collect();
                machines.push((a, b, pegasos(&rows, &y, &mut rng)));
            }
        }
        Ok(LinearSvm { classes, machines })
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut votes = vec![0usize; self.classes.max(1)];
        let d = row.len();
        for (a, b, w) in &self.machines {
            if dot(&w[..d], row) + w[d] >= 0.0 {
                votes[*a] += 1;
            } else {
                votes[*b] += 1;
            }
        }
        // first maximum wins ties
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        best
    }
}

/// Column means and standard deviations of the given rows.
fn fit_scaler(x: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = x.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for &i in rows {
        for ((s, v), m) in sd.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd = sd
        .into_iter()
        .map(|v| v.max(crate::datasets::VARIANCE_FLOOR).sqrt())
        .collect();
    (mean, sd)
}

fn apply_scaler(x: &Matrix, rows: &[usize], mean: &[f64], sd: &[f64]) -> Matrix {
    let mut out = x.select_rows(rows);
    for i in 0..out.rows() {
        for ((v, m), s) in out.row_mut(i).iter_mut().zip(mean).zip(sd) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Stratified k-fold accuracy of the linear SVM. Features are standardised
/// with statistics of each training split. Returns per-fold accuracies.
pub fn linear_svm_cv(z: &Matrix, labels: &[i64], folds: usize, seed: u64) -> Result<Vec<f64>> {
    if z.rows() != labels.len() {
        return Err(DlmeError::dim(
            "linear_svm_cv",
            format!("{} rows vs {} labels", z.rows(), labels.len()),
        ));
    }
    let fold_of = stratified_folds(labels, folds, seed)?;
    let (codes, classes) = encode_labels(labels);
    let mut accs = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<usize> = (0..z.rows()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..z.rows()).filter(|&i| fold_of[i] == f).collect();
        let (mean, sd) = fit_scaler(z, &train);
        let xtr = apply_scaler(z, &train, &mean, &sd);
        let xte = apply_scaler(z, &test, &mean, &sd);
        let ytr: Vec<usize> = train.iter().map(|&i| codes[i]).collect();
        let svm = LinearSvm::fit(&xtr, &ytr, classes, seed.wrapping_add(f as u64))?;
        let correct = test
            .iter()
            .enumerate()
            .filter(|&(r, &i)| svm.predict_row(xte.row(r)) == codes[i])
            .count();
        accs.push(correct as f64 / test.len() as f64);
    }
    Ok(accs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn kmeanspp(z: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = z.rows();
    let mut centroids = Matrix::zeros(k, z.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(z.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(z.row(i), z.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(z.row(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(squared_distance(z.row(i), z.row(pick)));
        }
    }
    centroids
}

fn assign(z: &Matrix, centroids: &Matrix, out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, a) in out.iter_mut().enumerate() {
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for c in 0..centroids.rows() {
            let d = squared_distance(z.row(i), centroids.row(c));
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        *a = best;
        inertia += best_d;
    }
    inertia
}

fn lloyd(z: &Matrix, mut centroids: Matrix) -> KMeansResult {
    let (n, d) = z.shape();
    let k = centroids.rows();
    let mut assignments = vec![usize::MAX; n];
    let mut next = vec![0; n];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let inertia = assign(z, &centroids, &mut next);
        history.push(inertia);
        if next == assignments {
            break;
        }
        assignments.copy_from_slice(&next);
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // an emptied cluster keeps its previous centre
            if counts[c] > 0 {
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
    }
    let inertia = *history.last().expect("at least one iteration");
    KMeansResult {
        assignments,
        centroids,
        inertia,
        history,
    }
}

/// Lloyd's algorithm from k-means++ seeds; the lowest-inertia restart wins.
pub fn kmeans(z: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 || k > z.rows() {
        return Err(DlmeError::Contract(format!(
            "k-means needs 1 <= k <= n, got k = {k} with n = {}",
            z.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(z, kmeanspp(z, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Minimum-cost perfect matching on a square cost matrix; `result[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // potentials and matching over 1-based indices; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_match = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_match[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_match[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_match[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_match[j0] = col_match[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        if col_match[j] > 0 {
            result[col_match[j] - 1] = j - 1;
        }
    }
    result
}

/// Confusion counts `[cluster][class]`, padded to a square matrix.
fn confusion(assignments: &[usize], codes: &[usize], classes: usize) -> Vec<Vec<f64>> {
    let clusters = assignments.iter().max().map_or(0, |m| m + 1);
    let size = clusters.max(classes);
    let mut m = vec![vec![0.0; size]; size];
    for (&a, &c) in assignments.iter().zip(codes) {
        m[a][c] += 1.0;
    }
    m
}

/// Best accuracy over one-to-one cluster→label maps.
pub fn cluster_accuracy(assignments: &[usize], labels: &[i64]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(DlmeError::dim(
            "cluster_accuracy",
            format!("{} assignments vs {} labels", assignments.len(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let (codes, classes) = encode_labels(labels);
    let counts = confusion(assignments, &codes, classes);
    let cost: Vec<Vec<f64>> = counts
        .iter()
        .map(|r| r.iter().map(|v| -v).collect())
        .collect();
    let matching = hungarian(&cost);
    let hits: f64 = matching.iter().enumerate().map(|(r, &c)| counts[r][c]).sum();
    Ok(hits / labels.len() as f64)
}

/// Full report: SVM cross-validation plus k-means with one cluster per class.
pub fn evaluate(z: &Matrix, labels: &[i64], folds: usize, seed: u64) -> Result<EvalReport> {
    let fold_acc = linear_svm_cv(z, labels, folds, seed)?;
    let (_, classes) = encode_labels(labels);
    let km = kmeans(z, classes, seed, KMEANS_RESTARTS)?;
    let cluster_acc = cluster_accuracy(&km.assignments, labels)?;
    Ok(EvalReport {
        linear_acc: fold_acc.iter().sum::<f64>() / fold_acc.len() as f64,
        fold_acc,
        cluster_acc,
        fold_count: folds,
        seed,
        n: z.rows(),
        classes,
    })
}
