#![allow(dead_code)]

use dlme::graph::{build_knn, sample_pair_batch, MixRange, PairBatch};
use dlme::loss::LossConfig;
use dlme::network::MlpParams;
use dlme::trainer::build_step;
use dlme::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Small random networks and a batch of augmented pairs drawn from random data.
pub fn random_problem(seed: u64) -> (MlpParams, MlpParams, PairBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_in = rng.random_range(2..=4);
    let hidden = rng.random_range(3..=6);
    let d_y = rng.random_range(3..=5);
    let d_z = 2;
    let n = 24;
    let data = random_matrix(&mut rng, n, d_in, 1.0);
    let graph = build_knn(&data, 3).unwrap();
    let b = rng.random_range(2..=4);
    let batch = sample_pair_batch(&data, &graph, b, &mut rng, MixRange::default()).unwrap();
    let mut f = MlpParams::init(&[d_in, hidden, d_y], &mut rng);
    let mut g = MlpParams::init(&[d_y, hidden, d_z], &mut rng);
    // nonzero biases keep ReLU inputs off the kink for the finite differences
    for b in f.biases.iter_mut().chain(g.biases.iter_mut()) {
        *b = random_matrix(&mut rng, 1, b.cols(), 0.5);
    }
    (f, g, batch)
}

fn loss_at(f: &MlpParams, g: &MlpParams, batch: &PairBatch, cfg: &LossConfig) -> f64 {
    let sg = build_step(f, g, batch, cfg).unwrap();
    sg.tape.value(sg.loss).item().unwrap()
}

/// Relative error with a floor on the denominator, so that gradients that are
/// zero up to round-off do not blow the ratio up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between the taped gradient and central differences,
/// over every parameter entry of both networks. With `skip_first` the first
/// network is left out (its gradient deliberately omits detached paths).
pub fn max_gradient_error(
    f: &MlpParams,
    g: &MlpParams,
    batch: &PairBatch,
    cfg: &LossConfig,
    skip_first: bool,
) -> f64 {
    let mut sg = build_step(f, g, batch, cfg).unwrap();
    sg.tape.backward(sg.loss).unwrap();
    let analytic: Vec<Matrix> = sg
        .f_nodes
        .all()
        .into_iter()
        .chain(sg.g_nodes.all())
        .map(|id| match sg.tape.grad(id) {
            Some(gr) => gr.clone(),
            None => {
                let (r, c) = sg.tape.value(id).shape();
                Matrix::zeros(r, c)
            }
        })
        .collect();

    let mut worst: f64 = 0.0;
    let n_f = f.tensors().len();
    for (t, grad) in analytic.iter().enumerate() {
        if skip_first && t < n_f {
            continue;
        }
        for k in 0..grad.len() {
            let eval = |delta: f64| {
                let (mut f2, mut g2) = (f.clone(), g.clone());
                let target = if t < n_f {
                    f2.tensors_mut().swap_remove(t)
                } else {
                    g2.tensors_mut().swap_remove(t - n_f)
                };
                target.as_mut_slice()[k] += delta;
                loss_at(&f2, &g2, batch, cfg)
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let e = rel_err(grad.as_slice()[k], numeric);
            if e > 1e-4 && std::env::var("FD_DEBUG").is_ok() {
                eprintln!("tensor {t} entry {k}: analytic {} numeric {numeric}", grad.as_slice()[k]);
            }
            worst = worst.max(e);
        }
    }
    worst
}
