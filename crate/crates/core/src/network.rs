//! Fully connected ReLU networks and their checkpoint format.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DlmeError, Result};
use crate::tensor::{Matrix, NodeId, Tape};

/// Layer widths, input first. A leading `-1` stands for "whatever the data has".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MlpSpec {
    pub layer_dims: Vec<i64>,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<i64>) -> Self {
        MlpSpec { layer_dims }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = &self.layer_dims;
        if dims.len() < 2 {
            return Err(DlmeError::Config(format!(
                "network needs at least 2 layer widths, got {dims:?}"
            )));
        }
        if dims[0] != -1 && dims[0] <= 0 || dims[1..].iter().any(|&d| d <= 0) {
            return Err(DlmeError::Config(format!(
                "layer widths must be positive (or -1 for the input), got {dims:?}"
            )));
        }
        Ok(())
    }

    /// Concrete widths with the sentinel replaced by `input_dim`.
    pub fn resolve(&self, input_dim: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let first = self.layer_dims[0];
        if first != -1 && first as usize != input_dim {
            return Err(DlmeError::dim(
                "network input",
                format!("spec expects {first} features, data has {input_dim}"),
            ));
        }
        let mut dims: Vec<usize> = self.layer_dims.iter().map(|&d| d as usize).collect();
        dims[0] = input_dim;
        Ok(dims)
    }

    /// Width of the output layer.
    pub fn output_dim(&self) -> i64 {
        *self.layer_dims.last().unwrap_or(&0)
    }
}

/// Weights (`in × out`) and bias rows of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

/// Tape handles for one network's parameters.
#[derive(Clone, Debug)]
pub struct MlpNodes {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
}

impl MlpNodes {
    /// Weight and bias nodes interleaved per layer, matching [`MlpParams::tensors_mut`].
    pub fn all(&self) -> Vec<NodeId> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }
}

impl MlpParams {
    /// Kaiming-uniform weights on `[-√(6/fan_in), √(6/fan_in)]`, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(Matrix::from_vec(fan_in, fan_out, data).expect("sized above"));
            biases.push(Matrix::zeros(1, fan_out));
        }
        MlpParams { weights, biases }
    }

    pub fn init_seeded(dims: &[usize], seed: u64) -> Self {
        Self::init(dims, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, Matrix::rows)
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, Matrix::cols)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.weights.iter().map(Matrix::cols));
        d
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// All parameter tensors, weight then bias for each layer.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    /// Puts every parameter on the tape as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> MlpNodes {
        MlpNodes {
            weights: self.weights.iter().map(|w| tape.param(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.param(b.clone())).collect(),
        }
    }

    /// Affine + ReLU on hidden layers, affine only on the last.
    pub fn forward(tape: &mut Tape, nodes: &MlpNodes, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = nodes.weights.len() - 1;
        for (l, (&w, &b)) in nodes.weights.iter().zip(&nodes.biases).enumerate() {
            let a = tape.matmul(h, w)?;
            h = tape.add_row(a, b)?;
            if l < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Tape-free forward pass.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(DlmeError::dim(
                "network input",
                format!("network expects {} features, got {}", self.input_dim(), x.cols()),
            ));
        }
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(w)?;
            let bias = b.as_slice();
            for i in 0..h.rows() {
                for (v, bv) in h.row_mut(i).iter_mut().zip(bias) {
                    *v += bv;
                    if l < last {
                        *v = v.max(0.0);
                    }
                }
            }
        }
        Ok(h)
    }

    fn check_shapes(&self, what: &str) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(DlmeError::Contract(format!(
                "{what}: need matching, non-empty weight and bias lists"
            )));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if b.shape() != (1, w.cols()) || (l > 0 && self.weights[l - 1].cols() != w.rows()) {
                return Err(DlmeError::Contract(format!(
                    "{what}: layer {l} shapes do not chain"
                )));
            }
        }
        if !self.is_finite() {
            return Err(DlmeError::Contract(format!("{what}: non-finite parameter")));
        }
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "dlme-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk layout: `{"format", "version", "f": MlpParams, "g": MlpParams}` where a
/// matrix is `{"rows", "cols", "data"}` with `data` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub f: MlpParams,
    pub g: MlpParams,
}

impl Checkpoint {
    pub fn new(f: MlpParams, g: MlpParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            f,
            g,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| DlmeError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DlmeError::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(DlmeError::Contract(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.f.check_shapes("checkpoint f")?;
        ck.g.check_shapes("checkpoint g")?;
        if ck.f.output_dim() != ck.g.input_dim() {
            return Err(DlmeError::Contract(
                "checkpoint: f output does not feed g input".into(),
            ));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = MlpParams::init_seeded(&[10, 20], 3);
        assert_eq!(a, MlpParams::init_seeded(&[10, 20], 3));
        let bound = (6.0f64 / 10.0).sqrt();
        assert!(a.weights[0].as_slice().iter().all(|w| w.abs() <= bound));
        assert!(a.biases[0].as_slice().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut p = MlpParams::init_seeded(&[3, 4, 2], 0);
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.0, 5.0]]).unwrap();
        assert_eq!(p.predict(&x).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn single_layer_is_affine() {
        let mut p = MlpParams::init_seeded(&[3, 2], 1);
        p.biases[0] = Matrix::row_vector(&[0.5, -1.0]);
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.0, 5.0]]).unwrap();
        let mut expect = x.matmul(&p.weights[0]).unwrap();
        for i in 0..2 {
            expect[(i, 0)] += 0.5;
            expect[(i, 1)] -= 1.0;
        }
        let got = p.predict(&x).unwrap();
        assert!(got.max_abs_diff(&expect).unwrap() < 1e-15);

        let mut tape = Tape::new();
        let nodes = p.register(&mut tape);
        let xn = tape.constant(x);
        let out = MlpParams::forward(&mut tape, &nodes, xn).unwrap();
        assert_eq!(tape.value(out), &got);
    }

    #[test]
    fn wrong_input_width_is_dimension_error() {
        let p = MlpParams::init_seeded(&[3, 2], 1);
        assert!(matches!(
            p.predict(&Matrix::zeros(1, 4)),
            Err(DlmeError::Dimension { .. })
        ));
    }

    #[test]
    fn spec_resolution() {
        let s = MlpSpec::new(vec![-1, 500, 300, 80]);
        assert_eq!(s.resolve(64).unwrap(), vec![64, 500, 300, 80]);
        assert!(MlpSpec::new(vec![-1]).validate().is_err());
        assert!(MlpSpec::new(vec![-1, 0, 2]).validate().is_err());
        assert!(MlpSpec::new(vec![80, 2]).resolve(64).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let f = MlpParams::init_seeded(&[4, 6, 3], 1);
        let g = MlpParams::init_seeded(&[3, 5, 2], 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = Checkpoint::new(f, g);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);

        let bad = Checkpoint::new(ck.f.clone(), ck.f.clone());
        bad.save(&path).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
