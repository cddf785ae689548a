//! The two-network training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DlmeError, Result};
use crate::graph::{build_knn, pair_batch_from_anchors, MixRange, NeighborGraph, PairBatch};
use crate::loss::{contrastive_loss, contrastive_loss_with, dlme_loss, LossConfig, Mode};
use crate::network::{MlpNodes, MlpParams, MlpSpec};
use crate::optim::AdamW;
use crate::tensor::{Matrix, NodeId, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub nu_y: f64,
    pub nu_z: f64,
    pub clamp_eps: f64,
    pub gaussian_sigma: f64,
    pub knn_k: usize,
    pub mix_range: MixRange,
    pub seed: u64,
    pub mode: Mode,
    pub f_spec: MlpSpec,
    pub g_spec: MlpSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 256,
            lr: 1e-3,
            weight_decay: 1e-6,
            alpha: 0.1,
            nu_y: 100.0,
            nu_z: 10.0,
            clamp_eps: crate::loss::DEFAULT_CLAMP_EPS,
            gaussian_sigma: 1.0,
            knn_k: 5,
            mix_range: MixRange::default(),
            seed: 0,
            mode: Mode::Dlme,
            f_spec: MlpSpec::new(vec![-1, 500, 300, 80]),
            g_spec: MlpSpec::new(vec![80, 500, 80, 2]),
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            nu_y: self.nu_y,
            nu_z: self.nu_z,
            clamp_eps: self.clamp_eps,
            mode: self.mode,
            gaussian_sigma: self.gaussian_sigma,
        }
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        self.mix_range.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DlmeError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(DlmeError::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(DlmeError::Config("batch_size must be positive".into()));
        }
        if self.knn_k == 0 {
            return Err(DlmeError::Config("knn_k must be positive".into()));
        }
        self.f_spec.validate()?;
        self.g_spec.validate()?;
        let (f_out, g_in, g_out) = (
            self.f_spec.output_dim(),
            self.g_spec.layer_dims[0],
            self.g_spec.output_dim(),
        );
        if g_in != -1 && g_in != f_out {
            return Err(DlmeError::Config(format!(
                "g takes {g_in} inputs but f produces {f_out}"
            )));
        }
        if g_out >= f_out {
            return Err(DlmeError::Config(format!(
                "embedding width {g_out} must be below structure width {f_out}"
            )));
        }
        Ok(())
    }

    /// Checks that also need the data shape.
    pub fn validate_for(&self, n: usize, d: usize) -> Result<()> {
        self.validate()?;
        if self.batch_size > n {
            return Err(DlmeError::Config(format!(
                "batch_size {} exceeds the {n} available samples",
                self.batch_size
            )));
        }
        if self.knn_k >= n {
            return Err(DlmeError::Config(format!(
                "knn_k {} must be below the sample count {n}",
                self.knn_k
            )));
        }
        self.f_spec
            .resolve(d)
            .map_err(|e| DlmeError::Config(e.to_string()))?;
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub f: MlpParams,
    pub g: MlpParams,
    /// Mean loss of each epoch.
    pub history: Vec<f64>,
}

/// The computation graph of one optimisation step.
pub struct StepGraph {
    pub tape: Tape,
    pub f_nodes: MlpNodes,
    pub g_nodes: MlpNodes,
    /// The objective that is differentiated.
    pub loss: NodeId,
    /// The similarity-matching term on its own (absent in contrastive mode).
    pub matching: Option<NodeId>,
}

/// Records the forward pass of one batch under the configured mode.
pub fn build_step(
    f: &MlpParams,
    g: &MlpParams,
    batch: &PairBatch,
    cfg: &LossConfig,
) -> Result<StepGraph> {
    let mut tape = Tape::new();
    let f_nodes = f.register(&mut tape);
    let g_nodes = g.register(&mut tape);
    let x = tape.constant(batch.views.clone());
    let y = MlpParams::forward(&mut tape, &f_nodes, x)?;
    let a = &batch.homology;

    let (loss, matching) = match cfg.mode {
        Mode::Dlme => {
            let z = MlpParams::forward(&mut tape, &g_nodes, y)?;
            let dy = tape.pairwise_dist(y);
            let dz = tape.pairwise_dist(z);
            let l = dlme_loss(&mut tape, dy, dz, a, cfg)?;
            (l, Some(l))
        }
        Mode::A1 | Mode::A2 => {
            // g sees a frozen copy of y; f learns only from the contrastive term
            let y_frozen = tape.detach(y);
            let z = MlpParams::forward(&mut tape, &g_nodes, y_frozen)?;
            let dy = tape.pairwise_dist(y);
            let dy_frozen = tape.pairwise_dist(y_frozen);
            let dz = tape.pairwise_dist(z);
            let m = dlme_loss(&mut tape, dy_frozen, dz, a, cfg)?;
            let c = contrastive_loss_with(&mut tape, dy, a, cfg.kernel_y()?, cfg.clamp_eps)?;
            (tape.add(m, c)?, Some(m))
        }
        Mode::A3 => {
            let z = MlpParams::forward(&mut tape, &g_nodes, y)?;
            let dz = tape.pairwise_dist(z);
            (contrastive_loss(&mut tape, dz, a, cfg)?, None)
        }
    };
    Ok(StepGraph {
        tape,
        f_nodes,
        g_nodes,
        loss,
        matching,
    })
}

fn shapes(p: &MlpParams) -> Vec<(usize, usize)> {
    p.tensors().iter().map(|m| m.shape()).collect()
}

/// Fresh parameters for `cfg` on data with `input_dim` columns.
pub fn init_networks(cfg: &TrainConfig, input_dim: usize, rng: &mut ChaCha8Rng) -> Result<(MlpParams, MlpParams)> {
    let f_dims = cfg.f_spec.resolve(input_dim)?;
    let g_dims = cfg.g_spec.resolve(*f_dims.last().expect("validated"))?;
    let f = MlpParams::init(&f_dims, rng);
    let g = MlpParams::init(&g_dims, rng);
    Ok((f, g))
}

pub fn train(data: &Matrix, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with(data, cfg, |_| {})
}

/// Runs training, calling `observer` after every epoch.
pub fn train_with(
    data: &Matrix,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochLog),
) -> Result<TrainOutput> {
    let (n, d) = data.shape();
    cfg.validate_for(n, d)?;
    if !data.is_finite() {
        return Err(DlmeError::Contract("training data contains non-finite values".into()));
    }
    let graph = build_knn(data, cfg.knn_k)?;
    train_on_graph(data, &graph, cfg, &mut observer)
}

fn train_on_graph(
    data: &Matrix,
    graph: &NeighborGraph,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutput> {
    let n = data.rows();
    let loss_cfg = cfg.loss_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut f, mut g) = init_networks(cfg, data.cols(), &mut rng)?;
    let mut opt_f = AdamW::new(cfg.lr, cfg.weight_decay, &shapes(&f));
    let mut opt_g = AdamW::new(cfg.lr, cfg.weight_decay, &shapes(&g));

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for (step, anchors) in order.chunks(cfg.batch_size).enumerate() {
            let batch = pair_batch_from_anchors(data, graph, anchors, &mut rng, cfg.mix_range);
            let mut sg = build_step(&f, &g, &batch, &loss_cfg)?;
            let loss = sg.tape.value(sg.loss).item()?;
            if !loss.is_finite() {
                return Err(DlmeError::Divergence { epoch, step, loss });
            }
            sg.tape.backward(sg.loss)?;

            let f_grads: Vec<Option<&Matrix>> =
                sg.f_nodes.all().into_iter().map(|id| sg.tape.grad(id)).collect();
            opt_f.step(&mut f.tensors_mut(), &f_grads)?;
            let g_grads: Vec<Option<&Matrix>> =
                sg.g_nodes.all().into_iter().map(|id| sg.tape.grad(id)).collect();
            opt_g.step(&mut g.tensors_mut(), &g_grads)?;
            if !f.is_finite() || !g.is_finite() {
                return Err(DlmeError::Divergence {
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            total += loss;
            steps += 1;
        }
        let mean_loss = total / steps as f64;
        history.push(mean_loss);
        observer(&EpochLog {
            epoch,
            mean_loss,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok(TrainOutput { f, g, history })
}

/// `g(f(x))` for every row of `data`, without augmentation.
pub fn embed(f: &MlpParams, g: &MlpParams, data: &Matrix) -> Result<Matrix> {
    g.predict(&f.predict(data)?)
}
