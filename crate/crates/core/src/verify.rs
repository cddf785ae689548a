//! Self-contained numerical checks of the method's analytical claims.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::{hop12_check, mean_curvature};
use crate::datasets::{gen_twain_swiss_roll, standardize_matrix, Dataset};
use crate::error::Result;
use crate::graph::{build_knn, pair_homology};
use crate::kernels::{find_crossover, kernel_gap, matched_distance, KernelParams};
use crate::loss::{
    contrastive_loss, dlme_loss, loss_difference_closed_form, pair_loss_difference, LossConfig,
};
use crate::tensor::{Matrix, Tape};
use crate::trainer::{embed, train, TrainConfig};

pub const CROSSOVER_GRID_POINTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverReport {
    pub nu_y: f64,
    pub nu_z: f64,
    pub d_p: f64,
    pub gap_at_d_p: f64,
    pub grid_points: usize,
    pub violations: usize,
    pub pass: bool,
}

/// Grid for the push-pull check: log-spaced over `[d_p/1000, 1000·d_p]`.
pub fn crossover_grid(d_p: f64, points: usize) -> Vec<f64> {
    let (lo, hi) = ((d_p * 1e-3).ln(), (d_p * 1e3).ln());
    (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Locates the kernel crossover `d_p` and checks that the distance matched in
/// the embedding kernel, `d⁺`, moves toward zero below `d_p` and away above it:
/// `(d − d_p)(d⁺ − d) > 0` at every grid point.
pub fn check_crossover(nu_y: f64, nu_z: f64) -> Result<CrossoverReport> {
    let (py, pz) = (KernelParams::new(nu_y)?, KernelParams::new(nu_z)?);
    let d_p = find_crossover(py, pz)?;
    let gap_at_d_p = kernel_gap(d_p, py, pz)?;
    let grid = crossover_grid(d_p, CROSSOVER_GRID_POINTS);
    let mut violations = 0;
    let mut used = 0;
    for &d in &grid {
        if d == d_p {
            continue;
        }
        used += 1;
        let d_plus = matched_distance(d, py, pz)?;
        if !((d - d_p) * (d_plus - d) > 0.0) {
            violations += 1;
        }
    }
    Ok(CrossoverReport {
        nu_y,
        nu_z,
        d_p,
        gap_at_d_p,
        grid_points: used,
        violations,
        pass: violations == 0 && gap_at_d_p.abs() < 1e-12,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub batches: usize,
    pub max_abs_error: f64,
    pub pass: bool,
}

/// Random batch of embedding distances with the paired homology layout.
fn random_batch(rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
    let b = rng.random_range(2..=8);
    let dim = rng.random_range(1..=4);
    let scale = rng.random_range(0.1..5.0);
    let pts: Vec<f64> = (0..2 * b * dim).map(|_| rng.random_range(-scale..scale)).collect();
    let z = Matrix::from_vec(2 * b, dim, pts).expect("sized");
    let mut tape = Tape::new();
    let zn = tape.constant(z);
    let d = tape.pairwise_dist(zn);
    (tape.value(d).clone(), pair_homology(b))
}

/// Direct `dlme_loss − contrastive_loss` with a shared `ν` and `d_y = k*·d_z`.
pub fn direct_loss_difference(dz: &Matrix, a: &Matrix, alpha: f64, kstar: f64, nu: f64) -> Result<f64> {
    let cfg = LossConfig {
        alpha,
        nu_y: nu,
        nu_z: nu,
        ..LossConfig::default()
    };
    let mut tape = Tape::new();
    let z = tape.constant(dz.clone());
    let y = tape.constant(dz.map(|v| kstar * v));
    let dl = dlme_loss(&mut tape, y, z, a, &cfg)?;
    let cl = contrastive_loss(&mut tape, z, a, &cfg)?;
    Ok(tape.value(dl).item()? - tape.value(cl).item()?)
}

/// Closed-form loss difference against direct evaluation on random batches (`k* = 1`).
pub fn check_loss_difference(batches: usize, seed: u64) -> Result<IdentityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..batches {
        let (dz, a) = random_batch(&mut rng);
        let nu = rng.random_range(0.5..100.0);
        let alpha = rng.random_range(0.0..=1.0);
        let direct = direct_loss_difference(&dz, &a, alpha, 1.0, nu)?;
        let closed = loss_difference_closed_form(&dz, &a, alpha, 1.0, nu, LossConfig::default().clamp_eps)?;
        worst = worst.max((direct - closed).abs());
    }
    Ok(IdentityReport {
        batches,
        max_abs_error: worst,
        pass: worst <= 1e-8,
    })
}

pub const ALPHA_STEPS: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaLimitReport {
    pub nu: f64,
    pub kstar: f64,
    pub distances: Vec<f64>,
    /// `|per-pair difference|` for each distance (rows) and each α in [`ALPHA_STEPS`].
    pub magnitudes: Vec<[f64; 3]>,
    pub pass: bool,
}

/// Per-pair loss difference of a homologous pair as `α` shrinks.
pub fn check_alpha_limit(nu: f64, kstar: f64, distances: &[f64]) -> Result<AlphaLimitReport> {
    let kernel = KernelParams::new(nu)?;
    let eps = LossConfig::default().clamp_eps;
    let mut magnitudes = Vec::with_capacity(distances.len());
    let mut pass = true;
    for &d in distances {
        let mut row = [0.0; 3];
        for (slot, &alpha) in row.iter_mut().zip(&ALPHA_STEPS) {
            *slot = pair_loss_difference(d, 1.0, alpha, kstar, kernel, eps)?.abs();
        }
        pass &= row[0] > row[1] && row[1] > row[2];
        magnitudes.push(row);
    }
    Ok(AlphaLimitReport {
        nu,
        kstar,
        distances: distances.to_vec(),
        magnitudes,
        pass,
    })
}

/// Neighbourhood size used for curvature and hop checks.
pub const CURVATURE_K: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatteningReport {
    pub n: usize,
    pub input_mean_abs_k: f64,
    pub embedding_mean_abs_k: f64,
    pub input_evaluated: usize,
    pub embedding_evaluated: usize,
    /// Share of vertices whose structure-space hop-1 distances all undercut their hop-2 distances.
    pub hop12_fraction: f64,
    pub pass: bool,
}

/// Curvature of the input against that of an embedding of the same points,
/// both measured over the k-NN topology of the input.
pub fn compare_curvature(input: &Matrix, embedding: &Matrix, structure: &Matrix) -> Result<FlatteningReport> {
    let graph = build_knn(input, CURVATURE_K)?;
    let before = mean_curvature(input, &graph)?;
    let after = mean_curvature(embedding, &graph)?;
    let hop = hop12_check(structure, &build_knn(structure, CURVATURE_K)?)?;
    Ok(FlatteningReport {
        n: input.rows(),
        input_mean_abs_k: before.mean_abs_k,
        embedding_mean_abs_k: after.mean_abs_k,
        input_evaluated: before.evaluated,
        embedding_evaluated: after.evaluated,
        hop12_fraction: hop.fraction,
        pass: after.mean_abs_k < before.mean_abs_k,
    })
}

/// A trained embedding of the two-roll dataset, kept for reuse across checks.
pub struct TwainRun {
    pub data: Dataset,
    pub structure: Matrix,
    pub embedding: Matrix,
    pub history: Vec<f64>,
}

/// Trains on the two interleaved rolls (inputs standardised) and embeds them.
pub fn twain_run(n: usize, seed: u64, cfg: &TrainConfig) -> Result<TwainRun> {
    let data = gen_twain_swiss_roll(
        n,
        crate::datasets::TWAIN_DEFAULT_GAP,
        crate::datasets::TWAIN_DEFAULT_NOISE,
        seed,
    )?;
    let x = standardize_matrix(&data.x)?;
    let out = train(&x, cfg)?;
    let structure = out.f.predict(&x)?;
    let embedding = embed(&out.f, &out.g, &x)?;
    Ok(TwainRun {
        data,
        structure,
        embedding,
        history: out.history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub crossover: CrossoverReport,
    pub loss_difference: IdentityReport,
    pub alpha_limit: AlphaLimitReport,
    pub flattening: Option<FlatteningReport>,
    pub pass: bool,
}

/// Distances at which the α-limit check evaluates a homologous pair.
pub const ALPHA_LIMIT_DISTANCES: [f64; 4] = [0.25, 1.0, 4.0, 16.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatteningOptions {
    pub n: usize,
    pub data_seed: u64,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub nu_y: f64,
    pub nu_z: f64,
    pub batches: usize,
    pub seed: u64,
    /// `None` skips the (training-based) curvature experiment.
    pub flattening: Option<FlatteningOptions>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            nu_y: 100.0,
            nu_z: 10.0,
            batches: 100,
            seed: 0,
            flattening: Some(FlatteningOptions {
                n: 4000,
                data_seed: 0,
                train: TrainConfig::default(),
            }),
        }
    }
}

/// Runs every check; failures are reported in the result, not as errors.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    if !(opts.nu_y > opts.nu_z) {
        return Err(crate::DlmeError::Config(format!(
            "the push-pull check needs nu_y > nu_z, got nu_y = {} and nu_z = {}",
            opts.nu_y, opts.nu_z
        )));
    }
    let crossover = check_crossover(opts.nu_y, opts.nu_z)?;
    let loss_difference = check_loss_difference(opts.batches, opts.seed)?;
    let alpha_limit = check_alpha_limit(opts.nu_z, 1.0, &ALPHA_LIMIT_DISTANCES)?;
    let flattening = match &opts.flattening {
        Some(f) => {
            let mut cfg = f.train.clone();
            cfg.nu_y = opts.nu_y;
            cfg.nu_z = opts.nu_z;
            let run = twain_run(f.n, f.data_seed, &cfg)?;
            Some(compare_curvature(&run.data.x, &run.embedding, &run.structure)?)
        }
        None => None,
    };
    let pass = crossover.pass
        && loss_difference.pass
        && alpha_limit.pass
        && flattening.as_ref().is_none_or(|f| f.pass);
    Ok(VerifyReport {
        crossover,
        loss_difference,
        alpha_limit,
        flattening,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossover_grid_is_clean() {
        for (ny, nz) in [(100.0, 10.0), (10.0, 1.0), (2.0, 1.0)] {
            let r = check_crossover(ny, nz).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn identity_holds() {
        let r = check_loss_difference(20, 1).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn alpha_limit_is_monotone() {
        let r = check_alpha_limit(10.0, 1.0, &[0.5, 1.0, 3.0]).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn reversed_kernels_are_rejected() {
        let opts = VerifyOptions {
            nu_y: 10.0,
            nu_z: 100.0,
            flattening: None,
            ..VerifyOptions::default()
        };
        assert!(matches!(run_verify(&opts), Err(crate::DlmeError::Config(_))));
    }
}
