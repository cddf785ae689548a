//! AdamW with decoupled weight decay.

use crate::error::{DlmeError, Result};
use crate::tensor::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    /// Fresh state for parameters with the given shapes.
    pub fn new(lr: f64, weight_decay: f64, shapes: &[(usize, usize)]) -> Self {
        let zeros: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        AdamW {
            lr,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. A missing gradient counts as zero.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Option<&Matrix>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(DlmeError::dim(
                "adamw",
                format!(
                    "{} params and {} grads for {} slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let shrink = 1.0 - self.lr * self.weight_decay;
        for (k, w) in params.iter_mut().enumerate() {
            if w.shape() != self.m[k].shape() {
                return Err(DlmeError::dim(
                    "adamw",
                    format!("param {k} is {:?}, state is {:?}", w.shape(), self.m[k].shape()),
                ));
            }
            if let Some(g) = grads[k] {
                w.expect_same_shape(g, "adamw")?;
            }
            let (m, v) = (self.m[k].as_mut_slice(), self.v[k].as_mut_slice());
            let g = grads[k].map(Matrix::as_slice);
            for (idx, wv) in w.as_mut_slice().iter_mut().enumerate() {
                let gv = g.map_or(0.0, |g| g[idx]);
                *wv *= shrink;
                m[idx] = BETA1 * m[idx] + (1.0 - BETA1) * gv;
                v[idx] = BETA2 * v[idx] + (1.0 - BETA2) * gv * gv;
                let mhat = m[idx] / bc1;
                let vhat = v[idx] / bc2;
                *wv -= self.lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_decays() {
        let w0 = Matrix::from_rows(&[[1.0, -2.0], [0.5, 4.0]]).unwrap();
        let mut w = w0.clone();
        let mut opt = AdamW::new(1e-2, 0.1, &[(2, 2)]);
        let zero = Matrix::zeros(2, 2);
        opt.step(&mut [&mut w], &[Some(&zero)]).unwrap();
        let expect = w0.map(|v| v - 1e-2 * 0.1 * v);
        assert!(w.max_abs_diff(&expect).unwrap() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut w = Matrix::row_vector(&[0.0, 0.0]);
        let g = Matrix::row_vector(&[3.0, -0.2]);
        let mut opt = AdamW::new(0.1, 0.0, &[(1, 2)]);
        opt.step(&mut [&mut w], &[Some(&g)]).unwrap();
        // bias-corrected first step is lr·g/(|g| + eps)
        assert!((w.as_slice()[0] + 0.1).abs() < 1e-8);
        assert!((w.as_slice()[1] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut w = Matrix::row_vector(&[5.0, -3.0]);
        let mut opt = AdamW::new(0.05, 0.0, &[(1, 2)]);
        for _ in 0..2000 {
            let g = w.clone();
            opt.step(&mut [&mut w], &[Some(&g)]).unwrap();
        }
        assert!(w.as_slice().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn shape_mismatch() {
        let mut w = Matrix::zeros(1, 2);
        let mut opt = AdamW::new(0.1, 0.0, &[(2, 1)]);
        assert!(opt.step(&mut [&mut w], &[None]).is_err());
    }
}
