//! Numerical checks of the weighted Carleman inequalities with weight
//! `ψ = exp(r^{-β})`, and a vanishing-propagation report for the `(β₋, Y)` system.
//!
//! Weighted integrals are formed in log space. The radial variable is
//! `w = 2(a^{-β} - r^{-β})`, so that `ψ² = exp(2a^{-β}) e^{-w}` on the support `a < r < b`
//! and the constant `2a^{-β}` is carried separately as [`Sides::shift`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{elliptic_residual, EllipticSystem};
use crate::math::{gauss_legendre, Mat3, Vec3};

/// Harmonic homogeneous polynomial of degree `m ≤ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Harmonic {
    Constant(f64),
    Linear(Vec3),
    /// `xᵀ M x` with `M` symmetric and trace-free.
    Quadratic(Mat3),
}

impl Harmonic {
    pub fn degree(&self) -> u32 {
        match self {
            Harmonic::Constant(_) => 0,
            Harmonic::Linear(_) => 1,
            Harmonic::Quadratic(_) => 2,
        }
    }

    /// Value, gradient and Hessian at `x`.
    pub fn jet(&self, x: &Vec3) -> (f64, Vec3, Mat3) {
        match self {
            Harmonic::Constant(c) => (*c, Vec3::zeros(), Mat3::zeros()),
            Harmonic::Linear(v) => (v.dot(x), *v, Mat3::zeros()),
            Harmonic::Quadratic(m) => ((x.transpose() * m * x)[0], m * x * 2.0, m * 2.0),
        }
    }

    /// `P(Qᵀx)`.
    pub fn rotated(&self, q: &Mat3) -> Self {
        match self {
            Harmonic::Constant(c) => Harmonic::Constant(*c),
            Harmonic::Linear(v) => Harmonic::Linear(q * v),
            Harmonic::Quadratic(m) => Harmonic::Quadratic(q * m * q.transpose()),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Harmonic::Quadratic(m) = self {
            let scale = m.norm().max(1e-300);
            if (m - m.transpose()).norm() > 1e-12 * scale || m.trace().abs() > 1e-12 * scale {
                return Err(Error::Invalid("quadratic harmonic needs a symmetric trace-free matrix".into()));
            }
        }
        Ok(())
    }
}

/// `u(x) = amplitude · P(x) · ((|x|² - a²)(b² - |x|²))^k` on `a < |x| < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub a: f64,
    pub b: f64,
    pub k: i32,
    pub p: Harmonic,
    pub amplitude: f64,
}

impl TestFunction {
    pub fn radial(a: f64, b: f64, k: i32) -> Self {
        Self { a, b, k, p: Harmonic::Constant(1.0), amplitude: 1.0 }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { amplitude: self.amplitude * s, ..*self }
    }

    fn validate(&self, r0: f64) -> Result<()> {
        if !(self.a > 0.0 && self.a < self.b && self.b <= r0) {
            return Err(Error::Invalid(format!("support ({}, {}) must satisfy 0 < a < b <= r0 = {r0}", self.a, self.b)));
        }
        if self.k < 5 {
            return Err(Error::Invalid("bump exponent k must be at least 5".into()));
        }
        self.p.validate()
    }
}

/// `f^{(n)}(s) / q^{k-4}` for `n = 0..=4`, `q = (s - a²)(b² - s)`.
fn reduced_f(k: i32, q: f64, q1: f64) -> [f64; 5] {
    let kf = k as f64;
    let q2 = -2.0;
    let p = |e: i32| q.powi(e);
    [
        p(4),
        kf * p(3) * q1,
        kf * (kf - 1.0) * p(2) * q1 * q1 + kf * p(3) * q2,
        kf * (kf - 1.0) * (kf - 2.0) * q * q1.powi(3) + 3.0 * kf * (kf - 1.0) * p(2) * q1 * q2,
        kf * (kf - 1.0) * (kf - 2.0) * (kf - 3.0) * q1.powi(4)
            + 6.0 * kf * (kf - 1.0) * (kf - 2.0) * q * q1 * q1 * q2
            + 3.0 * kf * (kf - 1.0) * p(2) * q2 * q2,
    ]
}

/// Derivative data of `u / (amplitude · q^{k-4})` at one point.
struct Reduced {
    u: f64,
    grad: Vec3,
    hess: Mat3,
    third: [[[f64; 3]; 3]; 3],
    bilap: f64,
}

fn reduced_at(tf: &TestFunction, x: &Vec3, f: &[f64; 5], s: f64) -> Reduced {
    let (p, dp, hp) = tf.p.jet(x);
    let g = f[0];
    let gi = x * (2.0 * f[1]);
    let gij = Mat3::identity() * (2.0 * f[1]) + x * x.transpose() * (4.0 * f[2]);
    let d = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let mut third = [[[0.0; 3]; 3]; 3];
    for (i, ti) in third.iter_mut().enumerate() {
        for (j, tij) in ti.iter_mut().enumerate() {
            for (k, t) in tij.iter_mut().enumerate() {
                let gijk = 4.0 * (d(i, j) * x[k] + d(i, k) * x[j] + d(j, k) * x[i]) * f[2] + 8.0 * x[i] * x[j] * x[k] * f[3];
                *t = hp[(i, j)] * gi[k] + hp[(i, k)] * gi[j] + hp[(j, k)] * gi[i]
                    + dp[i] * gij[(j, k)]
                    + dp[j] * gij[(i, k)]
                    + dp[k] * gij[(i, j)]
                    + p * gijk;
            }
        }
    }
    let am = 6.0 + 4.0 * tf.p.degree() as f64;
    Reduced {
        u: p * g,
        grad: dp * g + gi * p,
        hess: hp * g + dp * gi.transpose() + gi * dp.transpose() + gij * p,
        third,
        bilap: p * (16.0 * s * s * f[4] + (32.0 + 8.0 * am) * s * f[3] + am * (4.0 + am) * f[2]),
    }
}

/// Weight parameters: `β`, `s = s₀ + c̃β`, `r₀ < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanConfig {
    pub beta: f64,
    pub s0: f64,
    pub c_tilde: f64,
    pub r0: f64,
    /// Gauss–Legendre nodes per radial subinterval.
    pub radial_nodes: usize,
}

impl CarlemanConfig {
    pub fn new(beta: f64) -> Self {
        Self { beta, s0: 0.0, c_tilde: 0.0, r0: 0.9, radial_nodes: 16 }
    }

    pub fn s(&self) -> f64 {
        self.s0 + self.c_tilde * self.beta
    }

    fn validate(&self) -> Result<()> {
        if !(self.r0 < 1.0 && self.r0 > 0.0) {
            return Err(Error::Invalid("r0 must lie in (0, 1)".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Invalid("beta must be positive".into()));
        }
        Ok(())
    }
}

/// Both sides of an inequality; `lhs = exp(shift + log_lhs)` and likewise for `rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sides {
    pub shift: f64,
    pub log_lhs: f64,
    pub log_rhs: f64,
}

impl Sides {
    pub fn lhs(&self) -> f64 {
        (self.shift + self.log_lhs).exp()
    }

    pub fn rhs(&self) -> f64 {
        (self.shift + self.log_rhs).exp()
    }

    pub fn log_ratio(&self) -> f64 {
        self.log_lhs - self.log_rhs
    }

    pub fn ratio(&self) -> f64 {
        self.log_ratio().exp()
    }
}

/// Angular rule on the unit sphere with weights summing to `4π`.
fn sphere_rule(radial_only: bool) -> Vec<(Vec3, f64)> {
    if radial_only {
        return vec![(Vec3::z(), 4.0 * std::f64::consts::PI)];
    }
    let nphi = 24;
    let dphi = std::f64::consts::TAU / nphi as f64;
    let mut v = Vec::new();
    for (ct, w) in gauss_legendre(12, -1.0, 1.0) {
        let st = (1.0 - ct * ct).sqrt();
        for j in 0..nphi {
            let phi = dphi * j as f64;
            v.push((Vec3::new(st * phi.cos(), st * phi.sin(), ct), w * dphi));
        }
    }
    v
}

/// Radial nodes in `w` with log-weights `log(dw-weight · dr/dw)` and the point data.
struct RadialNode {
    r: f64,
    log_weight: f64,
    log_q: f64,
    q: f64,
    q1: f64,
    s: f64,
}

fn radial_nodes(tf: &TestFunction, beta: f64, nodes: usize) -> Vec<RadialNode> {
    let (a, b) = (tf.a, tf.b);
    let a_beta = (beta * a.ln()).exp();
    let w_total = 2.0 * ((-beta * a.ln()).exp() - (-beta * b.ln()).exp());
    let w_cut = w_total.min(4096.0);
    let mut edges = vec![0.0];
    let uniform = w_cut.min(64.0);
    for i in 1..=16 {
        edges.push(uniform * i as f64 / 16.0);
    }
    let mut e = uniform;
    while e < w_cut {
        e = (2.0 * e).min(w_cut);
        edges.push(e);
    }
    let mut out = Vec::new();
    for win in edges.windows(2) {
        for (w, wt) in gauss_legendre(nodes, win[0], win[1]) {
            // r = a (1 - w a^β / 2)^{-1/β}, with r - a formed without cancellation.
            let l = -(-w * a_beta / 2.0).ln_1p() / beta;
            let r = a * l.exp();
            let ra = a * l.exp_m1();
            let rb = b - r;
            if !(rb > 0.0) {
                continue;
            }
            let s = r * r;
            let q = ra * (r + a) * rb * (b + r);
            let q1 = -2.0 * s + a * a + b * b;
            let log_dr = (beta + 1.0) * r.ln() - (2.0 * beta).ln();
            out.push(RadialNode { r, log_weight: wt.ln() + log_dr - w, log_q: q.ln(), q, q1, s });
        }
    }
    out
}

/// Which inequality to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CarlemanOrder {
    /// `β² ∫ r^{-s-β-1}ψ²(|∇u|² + |u|²) ≤ c ∫ r^{-s}ψ²|Au|²` with constant coefficients `A`.
    Second { coeffs: Mat3 },
    /// `β⁴ ∫ r^{-s-6β-8}ψ²(|∇³u|² + |∇²u|² + |∇u|² + |u|²) ≤ c ∫ r^{-s}ψ²|Δ²u|²`.
    Fourth,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Both sides of the selected Carleman inequality for `u`.
pub fn carleman_sides(tf: &TestFunction, order: CarlemanOrder, cfg: &CarlemanConfig) -> Result<Sides> {
    cfg.validate()?;
    tf.validate(cfg.r0)?;
    if let CarlemanOrder::Second { coeffs } = order {
        let eig = coeffs.symmetric_eigenvalues();
        if (coeffs - coeffs.transpose()).norm() > 1e-12 * coeffs.norm() || eig.min() <= 0.0 {
            return Err(Error::Invalid("second-order operator must be symmetric and elliptic".into()));
        }
    }
    let beta = cfg.beta;
    let shift = 2.0 * (-beta * tf.a.ln()).exp();
    if tf.amplitude == 0.0 {
        return Ok(Sides { shift, log_lhs: f64::NEG_INFINITY, log_rhs: f64::NEG_INFINITY });
    }
    let s = cfg.s();
    let sphere = sphere_rule(matches!(tf.p, Harmonic::Constant(_)));
    let nodes = radial_nodes(tf, beta, cfg.radial_nodes);
    let log_amp2 = 2.0 * tf.amplitude.abs().ln();
    let terms: Vec<(f64, f64)> = nodes
        .par_iter()
        .map(|n| {
            let f = reduced_f(tf.k, n.q, n.q1);
            let (mut lhs_ang, mut rhs_ang) = (0.0, 0.0);
            for (omega, wa) in &sphere {
                let x = omega * n.r;
                let red = reduced_at(tf, &x, &f, n.s);
                match order {
                    CarlemanOrder::Second { coeffs } => {
                        lhs_ang += wa * (red.grad.norm_squared() + red.u * red.u);
                        let au = coeffs.component_mul(&red.hess).sum();
                        rhs_ang += wa * au * au;
                    }
                    CarlemanOrder::Fourth => {
                        let t3: f64 = red.third.iter().flatten().flatten().map(|v| v * v).sum();
                        lhs_ang += wa * (t3 + red.hess.norm_squared() + red.grad.norm_squared() + red.u * red.u);
                        rhs_ang += wa * red.bilap * red.bilap;
                    }
                }
            }
            let (lhs_pow, beta_pow) = match order {
                CarlemanOrder::Second { .. } => (-s - beta - 1.0, 2.0),
                CarlemanOrder::Fourth => (-s - 6.0 * beta - 8.0, 4.0),
            };
            // r² from the volume element, q^{2(k-4)} from the reduction.
            let common = n.log_weight + 2.0 * n.r.ln() + 2.0 * (tf.k - 4) as f64 * n.log_q + log_amp2;
            let l = common + lhs_pow * n.r.ln() + beta_pow * beta.ln() + lhs_ang.ln();
            let r = common - s * n.r.ln() + rhs_ang.ln();
            (l, r)
        })
        .collect();
    let (l, r): (Vec<f64>, Vec<f64>) = terms.into_iter().unzip();
    let (log_lhs, log_rhs) = (log_sum_exp(&l), log_sum_exp(&r));
    if !log_lhs.is_finite() || !log_rhs.is_finite() {
        return Err(Error::QuadratureUnderflow);
    }
    Ok(Sides { shift, log_lhs, log_rhs })
}

pub fn carleman_sides_2nd(tf: &TestFunction, coeffs: Mat3, cfg: &CarlemanConfig) -> Result<Sides> {
    carleman_sides(tf, CarlemanOrder::Second { coeffs }, cfg)
}

pub fn carleman_sides_4th(tf: &TestFunction, cfg: &CarlemanConfig) -> Result<Sides> {
    carleman_sides(tf, CarlemanOrder::Fourth, cfg)
}

/// `r^{-β} ψ(r)²`, as a logarithm.
pub fn log_weight_profile(beta: f64, r: f64) -> f64 {
    -beta * r.ln() + 2.0 * (-beta * r.ln()).exp()
}

/// One row of a β sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub sides: Sides,
    pub log_ratio: f64,
}

pub fn sweep(tf: &TestFunction, order: CarlemanOrder, base: &CarlemanConfig, betas: &[f64]) -> Result<Vec<SweepPoint>> {
    betas
        .iter()
        .map(|&beta| {
            let sides = carleman_sides(tf, order, &CarlemanConfig { beta, ..*base })?;
            Ok(SweepPoint { beta, sides, log_ratio: sides.log_ratio() })
        })
        .collect()
}

/// Smallest β on `grid` after which the ratio no longer increases.
pub fn empirical_beta0(tf: &TestFunction, order: CarlemanOrder, base: &CarlemanConfig, grid: &[f64]) -> Result<f64> {
    let pts = sweep(tf, order, base, grid)?;
    let mut beta0 = *grid.last().ok_or_else(|| Error::Invalid("empty beta grid".into()))?;
    for i in (0..pts.len()).rev() {
        if pts[i..].windows(2).all(|w| w[1].log_ratio <= w[0].log_ratio) {
            beta0 = pts[i].beta;
        } else {
            break;
        }
    }
    Ok(beta0)
}

/// Bound check on `[β₀, 4β₀]`: a constant fitted on a coarse sweep and tested on a fine one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub beta0: f64,
    /// Logarithm of the largest coarse-sweep ratio.
    pub log_fitted_constant: f64,
    pub log_fine_max: f64,
    /// `d log(ratio) / dβ` fitted over the fine sweep.
    pub trend: f64,
    pub bounded: bool,
    pub fine: Vec<SweepPoint>,
}

pub fn bound_check(tf: &TestFunction, order: CarlemanOrder, base: &CarlemanConfig, beta0: f64, coarse: usize, fine: usize) -> Result<BoundCheck> {
    let grid = |n: usize| -> Vec<f64> { (0..n).map(|i| beta0 * (1.0 + 3.0 * i as f64 / (n - 1) as f64)).collect() };
    let c = sweep(tf, order, base, &grid(coarse))?;
    let fitted = c.iter().map(|p| p.log_ratio).fold(f64::NEG_INFINITY, f64::max);
    let f = sweep(tf, order, base, &grid(fine))?;
    let fine_max = f.iter().map(|p| p.log_ratio).fold(f64::NEG_INFINITY, f64::max);
    let n = f.len() as f64;
    let (mb, ml) = (f.iter().map(|p| p.beta).sum::<f64>() / n, f.iter().map(|p| p.log_ratio).sum::<f64>() / n);
    let cov: f64 = f.iter().map(|p| (p.beta - mb) * (p.log_ratio - ml)).sum();
    let var: f64 = f.iter().map(|p| (p.beta - mb).powi(2)).sum();
    Ok(BoundCheck {
        beta0,
        log_fitted_constant: fitted,
        log_fine_max: fine_max,
        trend: cov / var,
        bounded: fine_max <= fitted + 1.05f64.ln(),
        fine: f,
    })
}

/// Outcome of the vanishing-propagation check on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationReport {
    pub seed_radius: f64,
    pub seed_sup: f64,
    pub residual_sup: f64,
    pub satisfies_system: bool,
    /// `sup |(β₋, Y)|` on the ball of twice the seed radius.
    pub doubled_sup: f64,
    /// `(β, e^{L(2r) - L(r)})` with `L = log(r^{-β}ψ²)`: the factor by which the proof
    /// suppresses contributions from the cutoff annulus.
    pub envelope: Vec<(f64, f64)>,
}

/// Check whether `(β₋, Y)` vanishing on a seed ball and solving the system stays
/// zero on the doubled ball; a nonzero residual flags a violated system.
pub fn ucp_propagation_demo(sys: &EllipticSystem, seed_radius: f64, tol: f64, betas: &[f64]) -> Result<PropagationReport> {
    let g = sys.beta_minus.grid;
    let (r1, r2) = elliptic_residual(sys)?;
    let mut seed_sup: f64 = 0.0;
    let mut doubled_sup: f64 = 0.0;
    let mut residual_sup: f64 = 0.0;
    for idx in g.interior(0) {
        let x = g.point(idx);
        let m = g.index(idx);
        let v = sys.beta_minus.data[m].abs().max(sys.y.data[m].abs());
        let rn = x.norm();
        if rn <= seed_radius {
            seed_sup = seed_sup.max(v);
        }
        if rn <= 2.0 * seed_radius {
            doubled_sup = doubled_sup.max(v);
            for r in [r1.data[m], r2.data[m]] {
                if r.is_finite() {
                    residual_sup = residual_sup.max(r.abs());
                }
            }
        }
    }
    if !seed_sup.is_finite() || !residual_sup.is_finite() {
        return Err(Error::SolveFailure("non-finite field values".into()));
    }
    let rt = seed_radius.min(0.5);
    let envelope = betas
        .iter()
        .map(|&b| (b, (log_weight_profile(b, rt) - log_weight_profile(b, rt / 2.0)).exp()))
        .collect();
    Ok(PropagationReport {
        seed_radius,
        seed_sup,
        residual_sup,
        satisfies_system: residual_sup <= tol && seed_sup <= tol,
        doubled_sup,
        envelope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, ScalarField};
    use nalgebra::Rotation3;

    fn quad() -> Harmonic {
        Harmonic::Quadratic(Mat3::new(1.0, 0.3, 0.0, 0.3, -0.5, 0.2, 0.0, 0.2, -0.5))
    }

    #[test]
    fn reduced_derivatives_match_finite_differences() {
        let tf = TestFunction { a: 0.3, b: 0.8, k: 5, p: quad(), amplitude: 1.0 };
        let u = |x: &Vec3| {
            let s = x.norm_squared();
            tf.p.jet(x).0 * ((s - 0.09) * (0.64 - s)).powi(5)
        };
        let x = Vec3::new(0.31, -0.22, 0.27);
        let s = x.norm_squared();
        let q = (s - 0.09) * (0.64 - s);
        let f = reduced_f(5, q, -2.0 * s + 0.73);
        let red = reduced_at(&tf, &x, &f, s);
        let h = 1e-4;
        let e = |i: usize| Vec3::from_fn(|r, _| if r == i { h } else { 0.0 });
        for i in 0..3 {
            let fd = (u(&(x + e(i))) - u(&(x - e(i)))) / (2.0 * h);
            assert!((fd - red.grad[i] * q).abs() < 1e-7);
        }
        let lap = |x: &Vec3| (0..3).map(|i| (u(&(x + e(i))) - 2.0 * u(x) + u(&(x - e(i)))) / (h * h)).sum::<f64>();
        assert!((lap(&x) - red.hess.trace() * q).abs() < 1e-6);
        let hb = 2e-3;
        let eb = |i: usize| Vec3::from_fn(|r, _| if r == i { hb } else { 0.0 });
        let lap_b = |x: &Vec3| (0..3).map(|i| (u(&(x + eb(i))) - 2.0 * u(x) + u(&(x - eb(i)))) / (hb * hb)).sum::<f64>();
        let bilap = (0..3).map(|i| (lap_b(&(x + eb(i))) - 2.0 * lap_b(&x) + lap_b(&(x - eb(i)))) / (hb * hb)).sum::<f64>();
        assert!((bilap - red.bilap * q).abs() < 1e-3 * (red.bilap * q).abs(), "{bilap} {}", red.bilap * q);
        let third = (red.hess[(0, 0)] * q, red.third[0][0][1] * q);
        let fd3 = {
            let d2 = |y: &Vec3| (u(&(y + e(0))) - 2.0 * u(y) + u(&(y - e(0)))) / (h * h);
            (d2(&(x + e(1))) - d2(&(x - e(1)))) / (2.0 * h)
        };
        assert!((fd3 - third.1).abs() < 1e-4 * third.1.abs().max(1.0), "{fd3} {}", third.1);
    }

    #[test]
    fn zero_function_and_quadratic_scaling() {
        let tf = TestFunction::radial(0.3, 0.8, 6);
        let cfg = CarlemanConfig::new(4.0);
        let z = carleman_sides_4th(&tf.scaled(0.0), &cfg).unwrap();
        assert_eq!((z.lhs(), z.rhs()), (0.0, 0.0));
        for order in [CarlemanOrder::Second { coeffs: Mat3::identity() }, CarlemanOrder::Fourth] {
            let a = carleman_sides(&tf, order, &cfg).unwrap();
            let b = carleman_sides(&tf.scaled(2.0), order, &cfg).unwrap();
            assert!(((b.log_lhs - a.log_lhs).exp() / 4.0 - 1.0).abs() < 1e-12);
            assert!(((b.log_rhs - a.log_rhs).exp() / 4.0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_quadrature_converges() {
        let tf = TestFunction::radial(0.3, 0.8, 6);
        for beta in [1.0, 10.0, 40.0] {
            let a = carleman_sides_2nd(&tf, Mat3::identity(), &CarlemanConfig { radial_nodes: 16, ..CarlemanConfig::new(beta) }).unwrap();
            let b = carleman_sides_2nd(&tf, Mat3::identity(), &CarlemanConfig { radial_nodes: 32, ..CarlemanConfig::new(beta) }).unwrap();
            assert!((a.ratio() / b.ratio() - 1.0).abs() < 1e-8, "beta {beta}");
        }
    }

    #[test]
    fn rotation_invariance() {
        let tf = TestFunction { a: 0.25, b: 0.7, k: 6, p: quad(), amplitude: 1.0 };
        let q = *Rotation3::from_euler_angles(0.3, -0.7, 1.1).matrix();
        let rot = TestFunction { p: tf.p.rotated(&q), ..tf };
        let cfg = CarlemanConfig::new(5.0);
        let a = carleman_sides_4th(&tf, &cfg).unwrap();
        let b = carleman_sides_4th(&rot, &cfg).unwrap();
        assert!((a.log_lhs - b.log_lhs).abs() < 1e-10 && (a.log_rhs - b.log_rhs).abs() < 1e-10);
    }

    #[test]
    fn large_beta_stays_finite() {
        let tf = TestFunction::radial(0.3, 0.8, 8);
        let s = carleman_sides_4th(&tf, &CarlemanConfig::new(200.0)).unwrap();
        assert!(s.log_ratio().is_finite() && s.shift > 1e100, "{s:?}");
    }

    #[test]
    fn weight_is_decreasing() {
        for beta in [0.5, 3.0, 40.0] {
            let v: Vec<f64> = (1..100).map(|i| log_weight_profile(beta, i as f64 / 100.0)).collect();
            assert!(v.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = CarlemanConfig::new(2.0);
        assert!(carleman_sides_4th(&TestFunction::radial(0.5, 0.95, 6), &cfg).is_err());
        assert!(carleman_sides_4th(&TestFunction::radial(0.3, 0.8, 3), &cfg).is_err());
        let bad = TestFunction { p: Harmonic::Quadratic(Mat3::identity()), ..TestFunction::radial(0.3, 0.8, 6) };
        assert!(carleman_sides_4th(&bad, &cfg).is_err());
        let a = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0));
        assert!(carleman_sides_2nd(&TestFunction::radial(0.3, 0.8, 6), a, &cfg).is_err());
    }

    fn system(n: usize, bump: Option<f64>) -> EllipticSystem {
        let g = Grid::new(n, 1.0);
        let z = ScalarField::sample(g, |_| 0.0);
        let bm = match bump {
            Some(eps) => ScalarField::sample(g, |x| {
                let r = (x - Vec3::new(0.45, 0.0, 0.0)).norm();
                if r < 0.2 { eps * (1.0 - (r / 0.2).powi(2)).powi(4) } else { 0.0 }
            }),
            None => z.clone(),
        };
        EllipticSystem {
            beta_minus: bm,
            y: z.clone(),
            beta_plus: ScalarField::sample(g, |x| 0.1 * x.x),
            g: ScalarField::sample(g, |_| 1.0),
            h: [z.clone(), z.clone(), z],
            k0: 1.0,
        }
    }

    #[test]
    fn propagation_zero_and_negative_control() {
        let betas = [1.0, 2.0, 4.0];
        let r = ucp_propagation_demo(&system(21, None), 0.3, 1e-10, &betas).unwrap();
        assert!(r.satisfies_system && r.doubled_sup == 0.0);
        assert!(r.envelope.windows(2).all(|w| w[1].1 < w[0].1));
        let r = ucp_propagation_demo(&system(21, Some(1e-3)), 0.3, 1e-10, &betas).unwrap();
        assert!(r.seed_sup <= 1e-10 && r.doubled_sup > 0.0);
        assert!(!r.satisfies_system);
    }
}
