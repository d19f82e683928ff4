//! Reflection and transmission symbols at a single interface, the order-J
//! transmission solve, and a layered transfer-matrix reference.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::media::Side;

/// `|ξ₃|/|ξ|` below this counts as glancing.
pub const GLANCING_TOL: f64 = 1e-3;
/// Relative slowness window for flagging a Brewster covector.
pub const BREWSTER_TOL: f64 = 1e-6;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub rho: f64,
    pub c: f64,
}

impl Material {
    pub fn new(rho: f64, c: f64) -> Self {
        Self { rho, c }
    }

    pub fn kappa(&self) -> f64 {
        self.rho * self.c * self.c
    }

    pub fn impedance(&self) -> f64 {
        self.rho * self.c
    }

    /// `c⁻²τ² - |η'|²`.
    fn radicand(&self, tau: f64, eta: &Vector2<f64>) -> f64 {
        tau * tau / (self.c * self.c) - eta.norm_squared()
    }
}

/// One-sided constant states at an interface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceSides {
    pub minus: Material,
    pub plus: Material,
}

impl InterfaceSides {
    pub fn new(rho_minus: f64, c_minus: f64, rho_plus: f64, c_plus: f64) -> Self {
        Self { minus: Material::new(rho_minus, c_minus), plus: Material::new(rho_plus, c_plus) }
    }

    pub fn side(&self, side: Side) -> &Material {
        match side {
            Side::Minus => &self.minus,
            Side::Plus => &self.plus,
        }
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Minus => "minus",
        Side::Plus => "plus",
    }
}

/// Real vertical slowness `ξ₃ = √(c⁻²τ² - |η'|²)` on one side.
pub fn vertical_slowness(m: &Material, side: Side, tau: f64, eta: &Vector2<f64>) -> Result<f64> {
    let rad = m.radicand(tau, eta);
    if rad < 0.0 {
        return Err(Error::PostCritical { side: side_name(side) });
    }
    let xi3 = rad.sqrt();
    if xi3 * m.c / tau.abs() < GLANCING_TOL {
        return Err(Error::Glancing { side: side_name(side) });
    }
    Ok(xi3)
}

/// Everything the order-0 and order-J solves need at one covector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterfaceSymbols {
    pub xi_i3: f64,
    pub xi_t3: f64,
    /// `|ξ_I| = τ/c₋`, `|ξ_T| = τ/c₊`.
    pub norm_i: f64,
    pub norm_t: f64,
    pub reflection: f64,
    pub transmission: f64,
    pub matrix: Matrix2<Complex64>,
    pub det: Complex64,
}

impl InterfaceSymbols {
    pub fn hat_i3(&self) -> f64 {
        self.xi_i3 / self.norm_i
    }

    pub fn hat_t3(&self) -> f64 {
        self.xi_t3 / self.norm_t
    }
}

pub fn symbols(sides: &InterfaceSides, tau: f64, eta: &Vector2<f64>) -> Result<InterfaceSymbols> {
    if tau == 0.0 {
        return Err(Error::ZeroFrequency);
    }
    let xi_i3 = vertical_slowness(&sides.minus, Side::Minus, tau, eta)?;
    let xi_t3 = vertical_slowness(&sides.plus, Side::Plus, tau, eta)?;
    let (m, p) = (&sides.minus, &sides.plus);
    let den = xi_i3 * p.rho + xi_t3 * m.rho;
    let reflection = (xi_i3 * p.rho - xi_t3 * m.rho) / den;
    let transmission = 2.0 * m.kappa() * xi_i3
        / (p.kappa() * (m.c / p.c) * xi_i3 + m.kappa() * (p.c / m.c) * xi_t3);
    let norm_i = tau.abs() / m.c;
    let norm_t = tau.abs() / p.c;
    let matrix = transmission_matrix(sides, xi_i3 / norm_i, xi_t3 / norm_t, norm_i, norm_t);
    let det = matrix.determinant();
    Ok(InterfaceSymbols { xi_i3, xi_t3, norm_i, norm_t, reflection, transmission, matrix, det })
}

/// `M = [[ξ̂_I3, ξ̂_T3], [iκ₋|ξ_I|, -iκ₊|ξ_T|]]`.
fn transmission_matrix(s: &InterfaceSides, hat_i3: f64, hat_t3: f64, norm_i: f64, norm_t: f64) -> Matrix2<Complex64> {
    Matrix2::new(
        Complex64::from(hat_i3),
        Complex64::from(hat_t3),
        I * (s.minus.kappa() * norm_i),
        -I * (s.plus.kappa() * norm_t),
    )
}

/// Leading reflection symbol `(ξ_I3 ρ₊ - ξ_T3 ρ₋)/(ξ_I3 ρ₊ + ξ_T3 ρ₋)`.
pub fn principal_r(sides: &InterfaceSides, tau: f64, eta: &Vector2<f64>) -> Result<f64> {
    symbols(sides, tau, eta).map(|s| s.reflection)
}

/// Leading transmission symbol `2κ₋ξ_I3 / (κ₊(c₋/c₊)ξ_I3 + κ₋(c₊/c₋)ξ_T3)`.
pub fn principal_t(sides: &InterfaceSides, tau: f64, eta: &Vector2<f64>) -> Result<f64> {
    symbols(sides, tau, eta).map(|s| s.transmission)
}

/// Right-hand side of the order-J system
/// `(ξ̂_I3 (α_I)_J - ⟨ν, h_J⟩, -iκ₋|ξ_I| (α_I)_J + V_J)`.
pub fn order_j_rhs(
    sides: &InterfaceSides,
    sym: &InterfaceSymbols,
    alpha_i: Complex64,
    nu_dot_h: Complex64,
    v_j: Complex64,
) -> Vector2<Complex64> {
    Vector2::new(
        alpha_i * sym.hat_i3() - nu_dot_h,
        -I * (sides.minus.kappa() * sym.norm_i) * alpha_i + v_j,
    )
}

/// Relative size of `|det M|` below which the system counts as degenerate.
pub const DEGENERATE_DET: f64 = 1e-12;

/// Exact 2×2 solve for `((α_R)_J, (α_T)_J)`.
pub fn solve_order_j(m: &Matrix2<Complex64>, rhs: &Vector2<Complex64>) -> Result<(Complex64, Complex64)> {
    let det = m.determinant();
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).powi(2);
    if !(det.norm() > DEGENERATE_DET * scale) {
        return Err(Error::DegenerateSystem { det: det.norm() });
    }
    let r = (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det;
    let t = (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det;
    Ok((r, t))
}

/// One-sided first-order jets on the `+` side that enter `(α_R)₋₁`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InterfaceJets {
    /// `∂_ν log c₊`.
    pub dlog_c: f64,
    /// `∂_ν log √ρ₊`.
    pub dlog_sqrt_rho: f64,
    /// `∇Φ` on the interface in the local frame (`e₃` into the `+` side).
    pub grad_phi: Vec3,
}

/// Jet-dependent part of the order −1 reflection symbol:
/// `D (α_R)₋₁ = -[½∂log c₊(1 - 3|η'|²/ξ_T3²) + ∂log√ρ₊](α_T)₀ - ρ₊(α_T)₀⟨N_T,∇Φ⟩ξ̂_T3 + R₀`.
pub fn reflect_amp_minus1(
    sides: &InterfaceSides,
    jets: &InterfaceJets,
    tau: f64,
    eta: &Vector2<f64>,
    r0: Complex64,
) -> Result<Complex64> {
    let s = symbols(sides, tau, eta)?;
    solve_order_j(&s.matrix, &Vector2::zeros())?;
    let n_t = Vec3::new(eta[0], eta[1], s.xi_t3) / s.norm_t;
    let bracket = 0.5 * jets.dlog_c * (1.0 - 3.0 * eta.norm_squared() / (s.xi_t3 * s.xi_t3)) + jets.dlog_sqrt_rho;
    let gravity = sides.plus.rho * s.transmission * n_t.dot(&jets.grad_phi) * s.hat_t3();
    Ok((Complex64::from(-bracket * s.transmission - gravity) + r0) / s.det)
}

/// Classification of a boundary covector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CovectorClass {
    HyperbolicHyperbolic,
    PostCritical(Side),
    Glancing(Side),
    Brewster,
}

/// Tangential slowness at which `σ₀(M_R)` vanishes, if one exists.
pub fn brewster_slowness(sides: &InterfaceSides) -> Option<f64> {
    let (m, p) = (&sides.minus, &sides.plus);
    let den = (p.c * m.c).powi(2) * (p.rho * p.rho - m.rho * m.rho);
    if den == 0.0 {
        return None;
    }
    let ratio = (p.impedance().powi(2) - m.impedance().powi(2)) / den;
    let slowness = ratio.sqrt();
    (ratio >= 0.0 && slowness < 1.0 / m.c.max(p.c)).then_some(slowness)
}

pub fn classify_covector(sides: &InterfaceSides, tau: f64, eta: &Vector2<f64>) -> Result<CovectorClass> {
    if tau == 0.0 {
        return Err(Error::ZeroFrequency);
    }
    for side in [Side::Minus, Side::Plus] {
        match vertical_slowness(sides.side(side), side, tau, eta) {
            Err(Error::PostCritical { .. }) => return Ok(CovectorClass::PostCritical(side)),
            Err(Error::Glancing { .. }) => return Ok(CovectorClass::Glancing(side)),
            _ => {}
        }
    }
    let slowness = eta.norm() / tau.abs();
    if let Some(b) = brewster_slowness(sides) {
        if (slowness - b).abs() <= BREWSTER_TOL * b.max(1e-300) {
            return Ok(CovectorClass::Brewster);
        }
    }
    Ok(CovectorClass::HyperbolicHyperbolic)
}

/// Homogeneous layer of a stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rho: f64,
    pub c: f64,
    pub thickness: f64,
}

/// Layers between an upper (incidence) and a lower half-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub top: Material,
    pub layers: Vec<Layer>,
    pub bottom: Material,
}

/// Complex reflection and transmission of a stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StackResponse {
    pub reflection: Complex64,
    pub transmission: Complex64,
    /// `Z_top / Z_bottom`, the flux weight of `|T|²`.
    pub flux_factor: f64,
}

/// Vertical impedance `ρ/q` with `q = √(c⁻² - p²)` (complex when evanescent).
fn vertical_impedance(rho: f64, c: f64, p: f64) -> (Complex64, Complex64) {
    let q = Complex64::from(1.0 / (c * c) - p * p).sqrt();
    (Complex64::from(rho) / q, q)
}

/// 2×2 propagator product over a layer stack.
pub fn transfer_matrix_response(stack: &LayerStack, tau: f64, eta: &Vector2<f64>) -> Result<StackResponse> {
    if tau == 0.0 {
        return Err(Error::ZeroFrequency);
    }
    if stack.layers.iter().any(|l| !(l.thickness >= 0.0 && l.rho > 0.0 && l.c > 0.0)) {
        return Err(Error::Invalid("layer parameters must be positive".into()));
    }
    let p = eta.norm() / tau.abs();
    if p * stack.top.c >= 1.0 {
        return Err(Error::PostCritical { side: "minus" });
    }
    let (z0, _) = vertical_impedance(stack.top.rho, stack.top.c, p);
    let (zb, qb) = vertical_impedance(stack.bottom.rho, stack.bottom.c, p);
    if qb.re <= 0.0 {
        return Err(Error::PostCritical { side: "plus" });
    }
    let mut t = Matrix2::<Complex64>::identity();
    for l in &stack.layers {
        let (z, q) = vertical_impedance(l.rho, l.c, p);
        let phi = q * (tau.abs() * l.thickness);
        let (cs, sn) = (phi.cos(), phi.sin());
        t *= Matrix2::new(cs, -I * z * sn, -I * sn / z, cs);
    }
    let z_top = (t[(0, 0)] * zb + t[(0, 1)]) / (t[(1, 0)] * zb + t[(1, 1)]);
    let reflection = (z_top - z0) / (z_top + z0);
    let transmission = (Complex64::from(1.0) + reflection) / (t[(0, 0)] + t[(0, 1)] / zb);
    Ok(StackResponse { reflection, transmission, flux_factor: (z0 / zb).re })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eta(p: f64) -> Vector2<f64> {
        Vector2::new(p, 0.0)
    }

    #[test]
    fn matched_media() {
        let s = InterfaceSides::new(1.3, 2.0, 1.3, 2.0);
        assert_eq!(principal_r(&s, 1.0, &eta(0.2)).unwrap(), 0.0);
        assert!((principal_t(&s, 1.0, &eta(0.2)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normal_incidence_impedance_contrast() {
        let s = InterfaceSides::new(1000.0, 1500.0, 2000.0, 3000.0);
        assert!((principal_r(&s, 1.0, &eta(0.0)).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn vertical_slowness_example() {
        let m = Material::new(1.0, 1.5);
        let v = vertical_slowness(&m, Side::Minus, 1.0, &eta(0.5)).unwrap();
        assert!((v - (1.0f64 / 2.25 - 0.25).sqrt()).abs() < 1e-15);
        assert!((v - 0.44096).abs() < 1e-5);
    }

    #[test]
    fn brewster_example() {
        let s = InterfaceSides::new(1.0, 1.5, 2.0, 1.0);
        let b = brewster_slowness(&s).unwrap();
        assert!((b - (1.75f64 / 6.75).sqrt()).abs() < 1e-15);
        assert!((b - 0.50918).abs() < 1e-5);
        assert!(principal_r(&s, 1.0, &eta(b)).unwrap().abs() < 1e-10);
        assert_eq!(classify_covector(&s, 1.0, &eta(b)).unwrap(), CovectorClass::Brewster);
        let sym = symbols(&s, 1.0, &eta(b)).unwrap();
        assert!((2.0 * sym.xi_i3 - 0.8607).abs() < 1e-4 && (sym.xi_t3 - 0.8607).abs() < 1e-4);
        assert_eq!(brewster_slowness(&InterfaceSides::new(1.0, 1.5, 1.0, 1.0)), None);
    }

    #[test]
    fn classification_order() {
        let s = InterfaceSides::new(1.0, 1.5, 2.0, 1.0);
        assert_eq!(classify_covector(&s, 1.0, &eta(1.0 / 1.5)).unwrap(), CovectorClass::Glancing(Side::Minus));
        assert_eq!(classify_covector(&s, 1.0, &eta(0.8)).unwrap(), CovectorClass::PostCritical(Side::Minus));
        let s2 = InterfaceSides::new(1.0, 1.0, 1.0, 2.0);
        assert_eq!(classify_covector(&s2, 1.0, &eta(0.6)).unwrap(), CovectorClass::PostCritical(Side::Plus));
        assert_eq!(classify_covector(&s2, 1.0, &eta(0.5)).unwrap(), CovectorClass::Glancing(Side::Plus));
        assert_eq!(classify_covector(&s2, 1.0, &eta(0.2)).unwrap(), CovectorClass::HyperbolicHyperbolic);
        assert_eq!(classify_covector(&s2, 0.0, &eta(0.2)), Err(Error::ZeroFrequency));
        assert_eq!(principal_r(&s2, 1.0, &eta(0.6)), Err(Error::PostCritical { side: "plus" }));
    }

    #[test]
    fn order_zero_solve_reproduces_symbols() {
        let s = InterfaceSides::new(1.2, 1.1, 2.5, 1.7);
        for p in [0.0, 0.2, 0.45] {
            let sym = symbols(&s, 2.0, &eta(p)).unwrap();
            let rhs = order_j_rhs(&s, &sym, Complex64::from(1.0), Complex64::from(0.0), Complex64::from(0.0));
            let (r, t) = solve_order_j(&sym.matrix, &rhs).unwrap();
            assert!((r - sym.reflection).norm() < 1e-14 && (t - sym.transmission).norm() < 1e-14);
        }
    }

    #[test]
    fn order_minus_one_homogeneous_vanishes() {
        let s = InterfaceSides::new(1.2, 1.1, 2.5, 1.7);
        let sym = symbols(&s, 1.0, &eta(0.3)).unwrap();
        let z = Complex64::from(0.0);
        let (r, t) = solve_order_j(&sym.matrix, &order_j_rhs(&s, &sym, z, z, z)).unwrap();
        assert_eq!((r, t), (z, z));
        let jets = InterfaceJets::default();
        assert_eq!(reflect_amp_minus1(&s, &jets, 1.0, &eta(0.3), z).unwrap(), z);
    }

    #[test]
    fn degenerate_matrix_rejected() {
        let m = Matrix2::new(Complex64::from(1.0), Complex64::from(2.0), Complex64::from(2.0), Complex64::from(4.0));
        assert!(matches!(solve_order_j(&m, &Vector2::zeros()), Err(Error::DegenerateSystem { .. })));
    }

    #[test]
    fn minus_one_examples() {
        let s = InterfaceSides::new(1.0, 1.0, 2.0, 1.5);
        let sym = symbols(&s, 1.0, &eta(0.0)).unwrap();
        let z = Complex64::from(0.0);
        let jets = InterfaceJets { dlog_sqrt_rho: 1.0, ..Default::default() };
        let v = reflect_amp_minus1(&s, &jets, 1.0, &eta(0.0), z).unwrap();
        assert!((v + sym.transmission / sym.det).norm() < 1e-15);
        let g0 = 0.7;
        let up = InterfaceJets { grad_phi: Vec3::new(0.0, 0.0, g0), ..Default::default() };
        let down = InterfaceJets { grad_phi: Vec3::new(0.0, 0.0, -g0), ..Default::default() };
        let a = reflect_amp_minus1(&s, &up, 1.0, &eta(0.0), z).unwrap();
        let b = reflect_amp_minus1(&s, &down, 1.0, &eta(0.0), z).unwrap();
        let expect = -s.plus.rho * sym.transmission * g0 * sym.hat_t3().powi(2) / sym.det;
        assert!((a - expect).norm() < 1e-15 && (a + b).norm() < 1e-15);
    }

    #[test]
    fn zero_thickness_layer_is_invisible() {
        let (top, bottom) = (Material::new(1.0, 1.0), Material::new(2.0, 1.4));
        let stack = LayerStack { top, layers: vec![Layer { rho: 5.0, c: 3.0, thickness: 0.0 }], bottom };
        let r = transfer_matrix_response(&stack, 1.0, &eta(0.2)).unwrap().reflection;
        let sides = InterfaceSides { minus: top, plus: bottom };
        assert!((r - principal_r(&sides, 1.0, &eta(0.2)).unwrap()).norm() < 1e-15);
    }

    #[test]
    fn quarter_wave_layer() {
        let (z1, z2, z3) = (1.0, 2.0, 1.0);
        let c2 = 1.3;
        let tau = 2.0;
        let d = std::f64::consts::FRAC_PI_2 * c2 / tau;
        let stack = LayerStack {
            top: Material::new(z1, 1.0),
            layers: vec![Layer { rho: z2 / c2, c: c2, thickness: d }],
            bottom: Material::new(z3, 1.0),
        };
        let r = transfer_matrix_response(&stack, tau, &eta(0.0)).unwrap().reflection;
        let expect = ((z2 * z2 - z1 * z3) / (z2 * z2 + z1 * z3)).abs();
        assert!((r.norm() - expect).abs() < 1e-14);
    }

    fn draw() -> impl Strategy<Value = (InterfaceSides, f64)> {
        (0.5f64..3.0, 0.5f64..3.0, 0.5f64..3.0, 0.5f64..3.0, 0.0f64..0.95).prop_map(|(a, b, c, d, f)| {
            let s = InterfaceSides::new(a, b, c, d);
            (s, f / b.max(d))
        })
    }

    proptest! {
        #[test]
        fn single_interface_matches_transfer_matrix((sides, p) in draw(), tau in 0.5f64..5.0) {
            let stack = LayerStack { top: sides.minus, layers: vec![], bottom: sides.plus };
            let resp = transfer_matrix_response(&stack, tau, &eta(p * tau)).unwrap();
            let sym = symbols(&sides, tau, &eta(p * tau)).unwrap();
            prop_assert!((resp.reflection - sym.reflection).norm() < 1e-12);
            let t_oracle = (1.0 + resp.reflection) * sides.minus.impedance() / sides.plus.impedance();
            prop_assert!((t_oracle - sym.transmission).norm() < 1e-12);
            prop_assert!(sym.reflection.abs() <= 1.0 && sym.transmission > 0.0);
        }

        #[test]
        fn lossless_stack_conserves_flux(
            (sides, p) in draw(),
            layers in prop::collection::vec((0.5f64..3.0, 0.5f64..3.0, 0.0f64..2.0), 0..4),
            tau in 0.5f64..5.0,
        ) {
            let layers = layers.into_iter().map(|(rho, c, thickness)| Layer { rho, c, thickness }).collect();
            let stack = LayerStack { top: sides.minus, layers, bottom: sides.plus };
            let r = transfer_matrix_response(&stack, tau, &eta(p * tau)).unwrap();
            let e = r.reflection.norm_sqr() + r.flux_factor * r.transmission.norm_sqr();
            prop_assert!((e - 1.0).abs() < 1e-12, "energy {e}");
        }

        #[test]
        fn minus_one_is_affine_in_jets(
            (sides, p) in draw(),
            a in prop::array::uniform5(-2.0f64..2.0),
        ) {
            let tau = 1.0;
            let e = eta(p);
            let jets = |v: [f64; 5]| InterfaceJets { dlog_c: v[0], dlog_sqrt_rho: v[1], grad_phi: Vec3::new(v[2], v[3], v[4]) };
            let z = Complex64::from(0.0);
            let f = |v: [f64; 5]| reflect_amp_minus1(&sides, &jets(v), tau, &e, z).unwrap();
            let sym = symbols(&sides, tau, &e).unwrap();
            let n_t = Vec3::new(p, 0.0, sym.xi_t3) / sym.norm_t;
            let coef = [
                -0.5 * (1.0 - 3.0 * p * p / (sym.xi_t3 * sym.xi_t3)) * sym.transmission / sym.det,
                -sym.transmission / sym.det,
                -sides.plus.rho * sym.transmission * n_t[0] * sym.hat_t3() / sym.det,
                -sides.plus.rho * sym.transmission * n_t[1] * sym.hat_t3() / sym.det,
                -sides.plus.rho * sym.transmission * n_t[2] * sym.hat_t3() / sym.det,
            ];
            let base = f(a);
            for k in 0..5 {
                let mut b = a;
                b[k] += 1.0;
                prop_assert!((f(b) - base - coef[k]).norm() < 1e-10 * (1.0 + coef[k].norm()));
            }
        }
    }
}
