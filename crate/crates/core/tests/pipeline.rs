//! End-to-end flows through the public API.

use std::sync::Arc;

use fairlab::energy::{el_residual, estimate_chi_c, free_energy, hls_upper_bound, HlsFamily};
use fairlab::fastdiff::{solve_stationary, GridSpec, TOperatorConfig};
use fairlab::jko1d::{run, JkoConfig, Pseudoinverse};
use fairlab::{dilate, Frame, Params, RadialDensity, RadialGrid};
use proptest::prelude::*;

#[test]
fn fixed_point_in_two_dimensions_satisfies_its_checks() {
    let params = Params::new(2, 0.5, 1.0, Frame::Rescaled).unwrap();
    let config = TOperatorConfig::with_default_grid(params, GridSpec::default()).unwrap();
    let init = RadialDensity::from_fn(config.grid().clone(), |r| (-r * r).exp()).unwrap();
    let report = solve_stationary(&init, &config).unwrap();
    assert!(report.converged && report.envelope_ok && report.delta_sandwich_ok);
    assert!(report.el_residual < 1e-6, "{}", report.el_residual);
    assert!((report.density.mass() - 1.0).abs() < 1e-9);
    assert!(report.density.is_monotone());
}

#[test]
fn critical_estimate_respects_the_sharp_constant_bound() {
    let params = Params::new(1, -0.5, 0.1, Frame::Rescaled).unwrap();
    let est = estimate_chi_c(&params, HlsFamily::Default, 20).unwrap();
    assert!(est.c_star_lower <= est.c_hls_upper);
    assert!((est.c_hls_upper - hls_upper_bound(1, -0.5)).abs() < 1e-12);
    assert!(est.chi_c >= 1.0 / est.c_hls_upper);
}

#[test]
fn sub_critical_jko_steady_state_nearly_solves_the_euler_lagrange_equation() {
    let params = Params::new(1, -0.5, 0.25, Frame::Rescaled).unwrap();
    let x0 = Pseudoinverse::gaussian(0.0, 0.7, 200).unwrap();
    let report = run(&x0, &params, 200.0, &JkoConfig::default()).unwrap();
    assert!(report.converged_to_steady && report.blow_up.is_none());
    let el = el_residual(report.steady_profile.as_ref().unwrap(), &params).unwrap();
    assert!(el.sup_residual < 1e-2, "{}", el.sup_residual);
}

fn profile(grid: Arc<RadialGrid>, width: f64) -> RadialDensity {
    RadialDensity::from_fn(grid, |r| (1.0 - (r / width).powi(2)).max(0.0).powi(2)).unwrap().normalized().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn original_free_energy_is_homogeneous_under_dilation(
        k in prop_oneof![Just(-0.5), Just(0.3), Just(0.6)],
        n in 1usize..=2,
        lambda in 0.5f64..2.0,
    ) {
        let params = Params::new(n, k, 0.7, Frame::Original).unwrap();
        let grid = Arc::new(RadialGrid::uniform(n, 1.0, 801).unwrap());
        let rho = profile(grid, 1.0);
        let f = free_energy(&rho, &params).unwrap().total;
        let scaled = free_energy(&dilate(&rho, lambda).unwrap(), &params).unwrap().total;
        prop_assert!((scaled - lambda.powf(-k) * f).abs() <= 1e-6 * f.abs().max(1.0));
    }
}
