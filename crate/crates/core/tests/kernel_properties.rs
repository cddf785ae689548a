use dlme::kernels::{
    find_crossover, kernel_gap, matched_distance, scan_grid, t_kernel, t_kernel_inverse, KernelParams,
};
use dlme::verify::crossover_grid;
use proptest::prelude::*;

proptest! {
    #[test]
    fn kernel_is_strictly_decreasing(nu in 0.5f64..1000.0, d1 in 0.0f64..50.0, gap in 1e-3f64..10.0) {
        let p = KernelParams::new(nu).unwrap();
        prop_assert!(t_kernel(d1, p).unwrap() > t_kernel(d1 + gap, p).unwrap());
    }

    #[test]
    fn inverse_roundtrips(nu in 0.5f64..1000.0, d in 0.0f64..50.0) {
        let p = KernelParams::new(nu).unwrap();
        let back = t_kernel_inverse(t_kernel(d, p).unwrap(), p).unwrap();
        prop_assert!((back - d).abs() < 1e-9, "nu {nu} d {d} back {back}");
    }

    #[test]
    fn peak_is_below_the_gaussian_bound(nu in 0.01f64..1e6) {
        let c = KernelParams::new(nu).unwrap().norm_const();
        prop_assert!(c > 0.0 && c < 0.399);
    }

    #[test]
    fn crossover_sign_law(nu_z in 0.5f64..50.0, ratio in 1.5f64..50.0, i in 0usize..1000) {
        let nu_y = nu_z * ratio;
        let (py, pz) = (KernelParams::new(nu_y).unwrap(), KernelParams::new(nu_z).unwrap());
        let d_p = find_crossover(py, pz).unwrap();
        prop_assert!(kernel_gap(d_p, py, pz).unwrap().abs() < 1e-12);
        let d = crossover_grid(d_p, 1000)[i];
        prop_assume!(d != d_p);
        let d_plus = matched_distance(d, py, pz).unwrap();
        prop_assert!((d - d_p) * (d_plus - d) > 0.0, "d {d} d_p {d_p} d+ {d_plus}");
    }

    #[test]
    fn gap_changes_sign_once(nu_z in 0.5f64..50.0, ratio in 1.2f64..100.0) {
        let (py, pz) = (KernelParams::new(nu_z * ratio).unwrap(), KernelParams::new(nu_z).unwrap());
        let signs: Vec<bool> = scan_grid()
            .into_iter()
            .map(|d| kernel_gap(d, py, pz).unwrap() > 0.0)
            .collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert_eq!(changes, 1);
        prop_assert!(signs[0]);
    }
}

#[test]
fn reversed_degrees_of_freedom_are_rejected() {
    let (py, pz) = (KernelParams::new(10.0).unwrap(), KernelParams::new(100.0).unwrap());
    assert!(find_crossover(py, pz).is_err());
}
