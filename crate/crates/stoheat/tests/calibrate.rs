// Scratch calibration runs (ignored by default): discretization bias of the
// scheme's second moment against the closed form, via the deterministic
// moment closure.

use stoheat::measure::InitialMeasure;
use stoheat::moments::{kernel_k, MomentKernel};
use stoheat::quad::QuadratureSpec;
use stoheat::simulate::{discrete_second_moment, GridSpec};

#[test]
#[ignore]
fn dx_bias_of_dirac_second_moment() {
    let spec = QuadratureSpec::default();
    let m = InitialMeasure::dirac_origin();
    let mk = MomentKernel::new(1.0, 1.0).unwrap();
    let exact0 = kernel_k(&mk, 0.5, 0.0).unwrap();
    let exact5 = kernel_k(&mk, 0.5, 0.5).unwrap();
    println!("exact: x=0 {exact0:.10}  x=0.5 {exact5:.10}");
    for &dx in &[0.1f64, 0.05, 0.025, 0.0125] {
        let nx = (12.0 / dx).round() as usize;
        let nt = (0.5 / (dx * dx / 4.0)).round() as usize;
        let grid = GridSpec::new(1.0, 6.0, nx, 0.5, nt, 1.0).unwrap();
        let v = discrete_second_moment(&m, 1.0, 0.0, &grid, &[0.0, 0.5], &spec).unwrap();
        println!(
            "dx {dx:.4}: x=0 {:.8} (bias {:+.5e}, rel {:+.4})  x=0.5 {:.8} (bias {:+.5e}, rel {:+.4})",
            v[0],
            v[0] - exact0,
            (v[0] - exact0) / exact0,
            v[1],
            v[1] - exact5,
            (v[1] - exact5) / exact5
        );
    }
}
