//! Cross-module runs through the public API.

use seisgrav::gravity::{hydrostatic_pressure, solve_phi_radial};
use seisgrav::interface::{brewster_slowness, principal_r, InterfaceSides};
use seisgrav::inversion::{layer_strip, recover_order0, synthesize_layer_data, synthesize_order0, LayerStripConfig};
use seisgrav::media::{Medium, Region};

#[test]
fn uniform_ball_potential_and_pressure() {
    let ball = Medium::radial_layers(vec![Region::constant(1.0, 1.0)], &[], 1.0).unwrap();
    let g = solve_phi_radial(&ball, 1.0).unwrap();
    let p = hydrostatic_pressure(&ball, &g).unwrap();
    for r in [0.1, 0.4, 0.9] {
        assert!((g.profile(r, None).0 - (r * r / 6.0 - 0.5)).abs() < 1e-10);
        assert!((p.at(r) - (1.0 - r * r) / 6.0).abs() < 1e-10);
    }
}

#[test]
fn brewster_sample_is_invertible_away_from_the_zero() {
    let sides = InterfaceSides::new(1.0, 1.5, 2.0, 1.0);
    let b = brewster_slowness(&sides).unwrap();
    let eta = nalgebra::Vector2::new(b, 0.0);
    assert!(principal_r(&sides, 1.0, &eta).unwrap().abs() < 1e-12);
    let samples = synthesize_order0(&sides, 1.0, &[0.0, 0.5 * b]).unwrap();
    let fit = recover_order0(&sides.minus, &samples).unwrap();
    assert!((fit.plus.rho - 2.0).abs() < 1e-9 && (fit.plus.c - 1.0).abs() < 1e-9);
}

#[test]
fn three_layer_ball_strips() {
    let truth = Medium::radial_layers(
        vec![Region::constant(1.0, 1.0), Region::constant(1.5, 1.2), Region::constant(2.5, 1.6)],
        &[0.7, 0.4],
        1.0,
    )
    .unwrap();
    let cfg = LayerStripConfig::default();
    let data = synthesize_layer_data(&truth, &cfg).unwrap();
    let report = layer_strip(&data, &cfg).unwrap();
    assert_eq!(report.layers.len(), 2);
    for (got, (r, rho, c)) in report.layers.iter().zip([(0.7, 1.5, 1.2), (0.4, 2.5, 1.6)]) {
        assert!((got.radius - r).abs() < 1e-6 && (got.rho - rho).abs() < 1e-6 && (got.c - c).abs() < 1e-6);
    }
}
