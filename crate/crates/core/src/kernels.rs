//! Similarity kernels and the scalar identities built on them.

use serde::{Deserialize, Serialize};

use crate::error::{DlmeError, Result};

/// Student-t kernel with `nu` degrees of freedom and its normalising constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct KernelParams {
    nu: f64,
    norm_const: f64,
}

impl KernelParams {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(DlmeError::Contract(format!(
                "degrees of freedom must be positive and finite, got {nu}"
            )));
        }
        // Γ((ν+1)/2) / (√(νπ) Γ(ν/2)), in log space so huge ν stays finite.
        let log_c = libm::lgamma((nu + 1.0) / 2.0)
            - libm::lgamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln();
        Ok(KernelParams {
            nu,
            norm_const: log_c.exp(),
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `C(ν)`, the kernel value at distance zero.
    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    /// Kernel value without the `d >= 0` check.
    #[inline]
    pub fn eval_unchecked(&self, d: f64) -> f64 {
        let nu = self.nu;
        self.norm_const * (-(nu + 1.0) / 2.0 * (d * d / nu).ln_1p()).exp()
    }
}

impl TryFrom<f64> for KernelParams {
    type Error = DlmeError;

    fn try_from(nu: f64) -> Result<Self> {
        KernelParams::new(nu)
    }
}

impl From<KernelParams> for f64 {
    fn from(p: KernelParams) -> f64 {
        p.nu
    }
}

/// `κ(d, ν) = C(ν) (1 + d²/ν)^{-(ν+1)/2}`.
pub fn t_kernel(d: f64, p: KernelParams) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(DlmeError::Contract(format!(
            "t-kernel needs a non-negative distance, got {d}"
        )));
    }
    Ok(p.eval_unchecked(d))
}

/// The distance at which `κ(·, ν)` takes the value `s`.
pub fn t_kernel_inverse(s: f64, p: KernelParams) -> Result<f64> {
    if !(s > 0.0 && s <= p.norm_const) {
        return Err(DlmeError::Domain(format!(
            "kernel value {s} outside (0, {}]",
            p.norm_const
        )));
    }
    Ok(inverse_unchecked(s, p))
}

fn inverse_unchecked(s: f64, p: KernelParams) -> f64 {
    inverse_from_ln(s.ln(), p)
}

fn inverse_from_ln(ln_s: f64, p: KernelParams) -> f64 {
    let nu = p.nu;
    // (s/C)^{-2/(ν+1)} - 1, written with expm1 to keep precision near the peak
    let t = (-2.0 / (nu + 1.0) * (ln_s - p.norm_const.ln())).exp_m1();
    (nu * t.max(0.0)).sqrt()
}

/// The distance in the `pz` kernel whose similarity matches `κ(d, py)`.
///
/// When `κ(d, py)` exceeds the peak of the `pz` kernel no distance matches
/// and the closest achievable one, zero, is returned.
pub fn matched_distance(d: f64, py: KernelParams, pz: KernelParams) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(DlmeError::Contract(format!(
            "matched distance needs a non-negative distance, got {d}"
        )));
    }
    // log domain: far in the tail κ(d, ν_y) itself underflows
    let ln_s = py.norm_const.ln() - (py.nu + 1.0) / 2.0 * (d * d / py.nu).ln_1p();
    if ln_s >= pz.norm_const.ln() {
        return Ok(0.0);
    }
    Ok(inverse_from_ln(ln_s, pz))
}

/// `Φ(d) = κ(d, ν_y) − κ(d, ν_z)`.
pub fn kernel_gap(d: f64, py: KernelParams, pz: KernelParams) -> Result<f64> {
    if py.nu == pz.nu {
        return Err(DlmeError::Contract(
            "kernel gap needs distinct degrees of freedom".into(),
        ));
    }
    Ok(t_kernel(d, py)? - t_kernel(d, pz)?)
}

pub const SCAN_LO: f64 = 1e-6;
pub const SCAN_HI: f64 = 1e4;
pub const SCAN_POINTS: usize = 200;

/// Log-spaced grid over `[SCAN_LO, SCAN_HI]`.
pub fn scan_grid() -> Vec<f64> {
    let (lo, hi) = (SCAN_LO.ln(), SCAN_HI.ln());
    (0..SCAN_POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64).exp())
        .collect()
}

/// The unique positive root `d_p` of the kernel gap, for `ν_y > ν_z`.
pub fn find_crossover(py: KernelParams, pz: KernelParams) -> Result<f64> {
    if !(py.nu > pz.nu) {
        return Err(DlmeError::Contract(format!(
            "crossover needs nu_y > nu_z, got nu_y = {} and nu_z = {}",
            py.nu, pz.nu
        )));
    }
    let grid = scan_grid();
    let mut values = Vec::with_capacity(grid.len());
    for &d in &grid {
        values.push(kernel_gap(d, py, pz)?);
    }
    let changes: Vec<usize> = (1..grid.len())
        .filter(|&i| (values[i - 1] > 0.0) != (values[i] > 0.0))
        .collect();
    let &[i] = changes.as_slice() else {
        return Err(DlmeError::Bracket(format!(
            "expected one sign change of the kernel gap on [{SCAN_LO}, {SCAN_HI}], found {}",
            changes.len()
        )));
    };

    let (mut lo, mut hi) = (grid[i - 1], grid[i]);
    let lo_positive = values[i - 1] > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = kernel_gap(mid, py, pz)?;
        if v == 0.0 {
            return Ok(mid);
        }
        if (v > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (vl, vh) = (kernel_gap(lo, py, pz)?.abs(), kernel_gap(hi, py, pz)?.abs());
    Ok(if vl <= vh { lo } else { hi })
}

/// `D(p, q) = p ln q + (1 − p) ln(1 − q)`; its negation is binary cross-entropy.
pub fn two_way_divergence(p: f64, q: f64) -> Result<f64> {
    let open = |v: f64| v > 0.0 && v < 1.0;
    if !open(p) || !open(q) {
        return Err(DlmeError::Domain(format!(
            "divergence needs p, q in (0, 1), got p = {p}, q = {q}"
        )));
    }
    Ok(p * q.ln() + (1.0 - p) * (-q).ln_1p())
}

/// `R(a) = 1 + (α − 1) a`: shrinks distances between homologous views.
pub fn route_weight(a: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DlmeError::Contract(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if a != 0.0 && a != 1.0 {
        return Err(DlmeError::Contract(format!(
            "homology entries must be 0 or 1, got {a}"
        )));
    }
    // 1 + (α − 1)a, evaluated per case so R(1) is exactly α
    Ok(if a == 1.0 { alpha } else { 1.0 })
}

pub(crate) fn gaussian_density(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Normal density with standard deviation `sigma`, evaluated at distance `d`.
pub fn gaussian_kernel(d: f64, sigma: f64) -> Result<f64> {
    if !(d >= 0.0) || !(sigma > 0.0) {
        return Err(DlmeError::Contract(format!(
            "gaussian kernel needs d >= 0 and sigma > 0, got d = {d}, sigma = {sigma}"
        )));
    }
    Ok(gaussian_density(d, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn kp(nu: f64) -> KernelParams {
        KernelParams::new(nu).unwrap()
    }

    #[test]
    fn cauchy_values() {
        let p = kp(1.0);
        assert!((t_kernel(0.0, p).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!((t_kernel(1.0, p).unwrap() - 0.5 / PI).abs() < 1e-15);
    }

    #[test]
    fn norm_const_matches_independent_values() {
        // Γ-ratio values from a 30-digit evaluation.
        let cases = [
            (2.0, 0.353553390593273762200422181052),
            (10.0, 0.389108383966031050617051354100),
            (100.0, 0.397946186935893807490635251211),
        ];
        for (nu, c) in cases {
            assert!((kp(nu).norm_const() - c).abs() < 1e-13, "nu = {nu}");
        }
    }

    #[test]
    fn gaussian_limit() {
        let c = kp(1e6).norm_const();
        assert!((c - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-6);
        assert!(c < 0.399);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(KernelParams::new(0.0).is_err());
        assert!(KernelParams::new(f64::NAN).is_err());
        assert!(matches!(t_kernel(-1.0, kp(1.0)), Err(DlmeError::Contract(_))));
        assert!(matches!(
            t_kernel_inverse(0.5, kp(1.0)),
            Err(DlmeError::Domain(_))
        ));
        assert!(matches!(
            t_kernel_inverse(0.0, kp(1.0)),
            Err(DlmeError::Domain(_))
        ));
    }

    #[test]
    fn inverse_examples() {
        let p = kp(1.0);
        assert_eq!(t_kernel_inverse(p.norm_const(), p).unwrap(), 0.0);
        assert!((t_kernel_inverse(0.5 / PI, p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gap_examples() {
        let (py, pz) = (kp(100.0), kp(10.0));
        let g0 = kernel_gap(0.0, py, pz).unwrap();
        assert!((g0 - (py.norm_const() - pz.norm_const())).abs() < 1e-15);
        assert!(g0 > 0.0);
        assert!(kernel_gap(100.0, py, pz).unwrap() < 0.0);
        assert!(kernel_gap(1.0, py, py).is_err());
    }

    #[test]
    fn crossover_examples() {
        let (py, pz) = (kp(100.0), kp(10.0));
        let dp = find_crossover(py, pz).unwrap();
        assert!(kernel_gap(dp, py, pz).unwrap().abs() < 1e-12);
        assert!(kernel_gap(dp / 2.0, py, pz).unwrap() > 0.0);
        assert!(kernel_gap(2.0 * dp, py, pz).unwrap() < 0.0);

        let dp = find_crossover(kp(2.0), kp(1.0)).unwrap();
        assert!(kernel_gap(dp, kp(2.0), kp(1.0)).unwrap().abs() < 1e-12);

        assert!(matches!(
            find_crossover(pz, py),
            Err(DlmeError::Contract(_))
        ));
    }

    #[test]
    fn divergence_examples() {
        assert!((two_way_divergence(0.5, 0.5).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        // 0.3 ln 0.7 + 0.7 ln 0.3 from a 30-digit evaluation
        assert!((two_way_divergence(0.3, 0.7).unwrap() + 0.949783446209774896).abs() < 1e-15);
        let best = (1..1000)
            .map(|i| i as f64 / 1000.0)
            .max_by(|a, b| {
                two_way_divergence(0.3, *a)
                    .unwrap()
                    .total_cmp(&two_way_divergence(0.3, *b).unwrap())
            })
            .unwrap();
        assert!((best - 0.3).abs() < 1e-12);
        assert!(two_way_divergence(0.0, 0.5).is_err());
        assert!(two_way_divergence(0.5, 1.0).is_err());
    }

    #[test]
    fn route_weight_cases() {
        assert_eq!(route_weight(1.0, 0.1).unwrap(), 0.1);
        assert_eq!(route_weight(0.0, 0.1).unwrap(), 1.0);
        assert_eq!(route_weight(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(route_weight(0.0, 1.0).unwrap(), 1.0);
        assert!(route_weight(1.0, 1.5).is_err());
    }

    #[test]
    fn gaussian_examples() {
        let sigma = 0.7;
        let peak = gaussian_kernel(0.0, sigma).unwrap();
        assert!((peak - 1.0 / (sigma * (2.0 * PI).sqrt())).abs() < 1e-15);
        assert!((gaussian_kernel(1.0, 1.0).unwrap() - 0.24197072451914337).abs() < 1e-15);
        assert!(gaussian_kernel(-0.1, 1.0).is_err());
    }

    #[test]
    fn matched_distance_saturates_at_zero() {
        // C(100) > C(10): small y-distances have no exact match in the ν = 10 kernel
        assert_eq!(matched_distance(0.0, kp(100.0), kp(10.0)).unwrap(), 0.0);
        let d = matched_distance(5.0, kp(100.0), kp(10.0)).unwrap();
        let back = t_kernel(d, kp(10.0)).unwrap();
        assert!((back - t_kernel(5.0, kp(100.0)).unwrap()).abs() < 1e-15);
    }
}
