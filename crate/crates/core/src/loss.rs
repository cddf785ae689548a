//! Similarity-matching losses over pairwise distance matrices.
//!
//! Both losses are minimised. The similarity-matching objective is the binary
//! cross-entropy `−mean D(p, q)` between target similarities `p` (structure
//! space) and embedding similarities `q`, so its optimum is `q = p` pair by pair.

use serde::{Deserialize, Serialize};

use crate::error::{DlmeError, Result};
use crate::kernels::KernelParams;
use crate::tensor::{Matrix, NodeId, Tape};

/// Which objective is trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Both networks trained end-to-end on the similarity-matching loss.
    #[default]
    Dlme,
    /// Matching loss does not reach `f`; `f` is trained contrastively instead.
    #[serde(alias = "ablation_a1")]
    A1,
    /// As `A1`, with Gaussian kernels in both spaces.
    #[serde(alias = "ablation_a2")]
    A2,
    /// Plain contrastive training of the composed network.
    #[serde(alias = "ablation_a3", alias = "contrastive")]
    A3,
}

impl std::str::FromStr for Mode {
    type Err = DlmeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dlme" => Ok(Mode::Dlme),
            "a1" | "ablation_a1" => Ok(Mode::A1),
            "a2" | "ablation_a2" => Ok(Mode::A2),
            "a3" | "ablation_a3" | "contrastive" => Ok(Mode::A3),
            other => Err(DlmeError::Config(format!(
                "unknown mode {other:?} (expected dlme, a1, a2 or a3)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Dlme => "dlme",
            Mode::A1 => "a1",
            Mode::A2 => "a2",
            Mode::A3 => "a3",
        })
    }
}

pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub nu_y: f64,
    pub nu_z: f64,
    pub clamp_eps: f64,
    pub mode: Mode,
    /// Bandwidth of the Gaussian kernels used in mode `A2`.
    pub gaussian_sigma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.1,
            nu_y: 100.0,
            nu_z: 10.0,
            clamp_eps: DEFAULT_CLAMP_EPS,
            mode: Mode::Dlme,
            gaussian_sigma: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DlmeError::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        for (name, nu) in [("nu_y", self.nu_y), ("nu_z", self.nu_z)] {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(DlmeError::Config(format!(
                    "{name} must be positive, got {nu}"
                )));
            }
        }
        if self.mode == Mode::Dlme && !(self.nu_y > self.nu_z) {
            return Err(DlmeError::Config(format!(
                "nu_y must exceed nu_z, got nu_y = {} and nu_z = {}",
                self.nu_y, self.nu_z
            )));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps <= 1e-3) {
            return Err(DlmeError::Config(format!(
                "clamp_eps must lie in (0, 1e-3], got {}",
                self.clamp_eps
            )));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(DlmeError::Config(format!(
                "gaussian_sigma must be positive, got {}",
                self.gaussian_sigma
            )));
        }
        Ok(())
    }

    /// Kernel applied to structure-space distances.
    pub fn kernel_y(&self) -> Result<Kernel> {
        Ok(match self.mode {
            Mode::A2 => Kernel::Gaussian(self.gaussian_sigma),
            _ => Kernel::StudentT(KernelParams::new(self.nu_y)?),
        })
    }

    /// Kernel applied to embedding-space distances.
    pub fn kernel_z(&self) -> Result<Kernel> {
        Ok(match self.mode {
            Mode::A2 => Kernel::Gaussian(self.gaussian_sigma),
            _ => Kernel::StudentT(KernelParams::new(self.nu_z)?),
        })
    }
}

/// A distance-to-similarity map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel {
    StudentT(KernelParams),
    Gaussian(f64),
}

impl Kernel {
    pub fn apply(&self, tape: &mut Tape, d: NodeId) -> Result<NodeId> {
        match *self {
            Kernel::StudentT(p) => tape.student_t(d, p),
            Kernel::Gaussian(sigma) => tape.gaussian(d, sigma),
        }
    }

    pub fn eval(&self, d: f64) -> Result<f64> {
        match *self {
            Kernel::StudentT(p) => crate::kernels::t_kernel(d, p),
            Kernel::Gaussian(sigma) => crate::kernels::gaussian_kernel(d, sigma),
        }
    }
}

fn check_pair_inputs(tape: &Tape, d: &[NodeId], homology: &Matrix) -> Result<()> {
    let n = homology.rows();
    if homology.cols() != n || n < 2 {
        return Err(DlmeError::dim(
            "loss",
            format!("homology must be square with n >= 2, got {:?}", homology.shape()),
        ));
    }
    for &id in d {
        let m = tape.value(id);
        if m.shape() != (n, n) {
            return Err(DlmeError::dim(
                "loss",
                format!("distance matrix {:?} vs homology {:?}", m.shape(), (n, n)),
            ));
        }
        if m.has_nan() {
            return Err(DlmeError::Contract("NaN in distance matrix".into()));
        }
    }
    if homology.has_nan() {
        return Err(DlmeError::Contract("NaN in homology matrix".into()));
    }
    Ok(())
}

/// `−mean_{i≠j} [p ln q + (1 − p) ln(1 − q)]` for similarity matrices on the tape.
pub fn cross_entropy(tape: &mut Tape, p: NodeId, q: NodeId) -> Result<NodeId> {
    let ln_q = tape.ln(q)?;
    let one_minus_q = tape.affine(q, -1.0, 1.0);
    let ln_1mq = tape.ln(one_minus_q)?;
    let one_minus_p = tape.affine(p, -1.0, 1.0);
    let pos = tape.mul(p, ln_q)?;
    let neg = tape.mul(one_minus_p, ln_1mq)?;
    let sum = tape.add(pos, neg)?;
    let mean = tape.mean_off_diag(sum)?;
    Ok(tape.scale(mean, -1.0))
}

/// Similarity-matching loss between structure distances `dy` and embedding
/// distances `dz`; homologous structure distances are shrunk by `alpha` first.
pub fn dlme_loss(
    tape: &mut Tape,
    dy: NodeId,
    dz: NodeId,
    homology: &Matrix,
    cfg: &LossConfig,
) -> Result<NodeId> {
    check_pair_inputs(tape, &[dy, dz], homology)?;
    let weights = homology.map(|a| 1.0 + (cfg.alpha - 1.0) * a);
    let r = tape.constant(weights);
    let rdy = tape.mul(dy, r)?;
    let (lo, hi) = (cfg.clamp_eps, 1.0 - cfg.clamp_eps);
    let p = cfg.kernel_y()?.apply(tape, rdy)?;
    let p = tape.clamp(p, lo, hi);
    let q = cfg.kernel_z()?.apply(tape, dz)?;
    let q = tape.clamp(q, lo, hi);
    cross_entropy(tape, p, q)
}

/// Contrastive loss: homologous pairs are pulled to high similarity, all others
/// pushed to low similarity, under the given kernel.
pub fn contrastive_loss_with(
    tape: &mut Tape,
    d: NodeId,
    homology: &Matrix,
    kernel: Kernel,
    clamp_eps: f64,
) -> Result<NodeId> {
    check_pair_inputs(tape, &[d], homology)?;
    let a = tape.constant(homology.clone());
    let q = kernel.apply(tape, d)?;
    let q = tape.clamp(q, clamp_eps, 1.0 - clamp_eps);
    cross_entropy(tape, a, q)
}

/// Contrastive loss on embedding distances with the embedding-space kernel.
pub fn contrastive_loss(
    tape: &mut Tape,
    dz: NodeId,
    homology: &Matrix,
    cfg: &LossConfig,
) -> Result<NodeId> {
    contrastive_loss_with(tape, dz, homology, cfg.kernel_z()?, cfg.clamp_eps)
}

/// One pair's contribution to `dlme_loss − contrastive_loss` when the structure
/// distance is `k*·d_z` and both spaces share the kernel `ν`.
pub fn pair_loss_difference(
    dz: f64,
    a: f64,
    alpha: f64,
    kstar: f64,
    kernel: KernelParams,
    clamp_eps: f64,
) -> Result<f64> {
    if !(kstar > 0.0) {
        return Err(DlmeError::Contract(format!("k* must be positive, got {kstar}")));
    }
    let r = crate::kernels::route_weight(a, alpha)?;
    let clamp = |v: f64| v.clamp(clamp_eps, 1.0 - clamp_eps);
    let p = clamp(crate::kernels::t_kernel(r * kstar * dz, kernel)?);
    let q = clamp(crate::kernels::t_kernel(dz, kernel)?);
    Ok(-(a - p) * (1.0 / q - 1.0).ln())
}

/// Closed-form `dlme_loss − contrastive_loss`, averaged over off-diagonal pairs.
pub fn loss_difference_closed_form(
    dz: &Matrix,
    homology: &Matrix,
    alpha: f64,
    kstar: f64,
    nu: f64,
    clamp_eps: f64,
) -> Result<f64> {
    let n = dz.rows();
    if dz.cols() != n || homology.shape() != (n, n) || n < 2 {
        return Err(DlmeError::dim(
            "loss_difference_closed_form",
            format!("dz {:?} and homology {:?}", dz.shape(), homology.shape()),
        ));
    }
    let kernel = KernelParams::new(nu)?;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total +=
                    pair_loss_difference(dz[(i, j)], homology[(i, j)], alpha, kstar, kernel, clamp_eps)?;
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{t_kernel, two_way_divergence};

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn two_point_value() {
        let c = cfg();
        let mut t = Tape::new();
        let zero = t.constant(Matrix::zeros(2, 2));
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let loss = dlme_loss(&mut t, zero, zero, &a, &c).unwrap();
        let p = KernelParams::new(100.0).unwrap().norm_const();
        let q = KernelParams::new(10.0).unwrap().norm_const();
        let expect = -two_way_divergence(p, q).unwrap();
        assert!((t.value(loss).item().unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn alpha_one_ignores_homology() {
        let c = LossConfig { alpha: 1.0, ..cfg() };
        let dy = Matrix::from_rows(&[[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]]).unwrap();
        let dz = dy.map(|v| 0.5 * v);
        let eval = |a: Matrix| {
            let mut t = Tape::new();
            let y = t.constant(dy.clone());
            let z = t.constant(dz.clone());
            let l = dlme_loss(&mut t, y, z, &a, &c).unwrap();
            t.value(l).item().unwrap()
        };
        let a1 = Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let a2 = Matrix::from_rows(&[[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(eval(a1), eval(a2));
    }

    #[test]
    fn nan_input_is_contract_error() {
        let mut t = Tape::new();
        let bad = t.constant(Matrix::from_rows(&[[0.0, f64::NAN], [f64::NAN, 0.0]]).unwrap());
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(
            dlme_loss(&mut t, bad, bad, &a, &cfg()),
            Err(DlmeError::Contract(_))
        ));
        assert!(matches!(
            contrastive_loss(&mut t, bad, &a, &cfg()),
            Err(DlmeError::Contract(_))
        ));
    }

    #[test]
    fn contrastive_examples() {
        let c = cfg();
        let kz = KernelParams::new(c.nu_z).unwrap();

        // far-apart negatives only: loss is tiny and positive
        let mut t = Tape::new();
        let far = t.constant(Matrix::from_rows(&[[0.0, 1e3], [1e3, 0.0]]).unwrap());
        let l = contrastive_loss(&mut t, far, &Matrix::zeros(2, 2), &c).unwrap();
        let v = t.value(l).item().unwrap();
        assert!(v > 0.0 && v < 1e-6);

        // one homologous pair at zero distance
        let mut t = Tape::new();
        let zero = t.constant(Matrix::zeros(2, 2));
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let l = contrastive_loss(&mut t, zero, &a, &c).unwrap();
        assert!((t.value(l).item().unwrap() + kz.norm_const().ln()).abs() < 1e-15);

        // pulling the pair together lowers the loss
        let at = |d: f64| {
            let mut t = Tape::new();
            let m = t.constant(Matrix::from_rows(&[[0.0, d], [d, 0.0]]).unwrap());
            let l = contrastive_loss(&mut t, m, &a, &c).unwrap();
            t.value(l).item().unwrap()
        };
        assert!(at(0.5) < at(1.0) && at(1.0) < at(2.0));
    }

    #[test]
    fn closed_form_without_homology() {
        let dz = Matrix::from_rows(&[[0.0, 1.5], [1.5, 0.0]]).unwrap();
        let a = Matrix::zeros(2, 2);
        let k = KernelParams::new(5.0).unwrap();
        let got = loss_difference_closed_form(&dz, &a, 0.3, 2.0, 5.0, 1e-7).unwrap();
        let q = t_kernel(1.5, k).unwrap();
        // A = 0 leaves p·ln(1/q − 1) with p = κ(k*·d)
        let expect = t_kernel(3.0, k).unwrap() * (1.0 / q - 1.0).ln();
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_ok());
        assert!(LossConfig { nu_y: 1.0, nu_z: 10.0, ..cfg() }.validate().is_err());
        assert!(LossConfig { alpha: 1.5, ..cfg() }.validate().is_err());
        assert!(LossConfig { clamp_eps: 0.0, ..cfg() }.validate().is_err());
        assert!(LossConfig { clamp_eps: 1e-2, ..cfg() }.validate().is_err());
        assert!("a3".parse::<Mode>().unwrap() == Mode::A3);
        assert!("bogus".parse::<Mode>().is_err());
    }
}
