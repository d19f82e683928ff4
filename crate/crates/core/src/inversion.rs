//! Recovery procedures: interface parameters from reflection symbols, local ray
//! transforms of tensor fields with their gauge freedom, the media-pair tensor `B`
//! and its Saint-Venant contraction, and radial layer stripping.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplitudes::RayContext;
use crate::error::{Error, Result};
use crate::gravity::{solve_phi_radial, Gravity};
use crate::grid::{saint_venant_contraction, Grid, Order, ScalarField, TensorField};
use crate::interface::{
    classify_covector, principal_r, reflect_amp_minus1, CovectorClass, InterfaceJets, InterfaceSides, Material,
};
use crate::math::{any_perpendicular, outer, sym, Mat3, Poly3, Vec3};
use crate::media::{FieldJet, Medium, Region};
use crate::ode::Tolerance;
use crate::rays::{trace, BranchPolicy, Branch, PhasePoint, Termination, TraceOptions, Wavefront};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleOrder {
    Principal,
    Minus1,
}

/// One measured value of the reflection symbol at a boundary covector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReflectionSample {
    pub tau: f64,
    pub eta: Vector2<f64>,
    pub order: SampleOrder,
    /// For order −1 this is the jet-dependent part of the symbol.
    pub value: Complex64,
    pub class: CovectorClass,
}

impl ReflectionSample {
    pub fn slowness(&self) -> f64 {
        self.eta.norm() / self.tau.abs()
    }
}

/// Principal reflection samples at tangential slownesses `p` (`η' = (pτ, 0)`).
pub fn synthesize_order0(sides: &InterfaceSides, tau: f64, slownesses: &[f64]) -> Result<Vec<ReflectionSample>> {
    slownesses
        .iter()
        .map(|&p| {
            let eta = Vector2::new(p * tau, 0.0);
            Ok(ReflectionSample {
                tau,
                eta,
                order: SampleOrder::Principal,
                value: principal_r(sides, tau, &eta)?.into(),
                class: classify_covector(sides, tau, &eta)?,
            })
        })
        .collect()
}

/// Multiply each value by `1 + rel·n`, `n ~ N(0, 1)`.
pub fn add_relative_noise<R: Rng>(samples: &mut [ReflectionSample], rel: f64, rng: &mut R) {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for s in samples {
        s.value *= 1.0 + rel * normal.sample(rng);
    }
}

/// Order −1 samples of the jet-dependent reflection part at tangential covectors `etas`.
pub fn synthesize_order1(sides: &InterfaceSides, jets: &InterfaceJets, tau: f64, etas: &[Vector2<f64>]) -> Result<Vec<ReflectionSample>> {
    etas.iter()
        .map(|eta| {
            Ok(ReflectionSample {
                tau,
                eta: *eta,
                order: SampleOrder::Minus1,
                value: reflect_amp_minus1(sides, jets, tau, eta, Complex64::from(0.0))?,
                class: classify_covector(sides, tau, eta)?,
            })
        })
        .collect()
}

/// Covectors `0, (±a,0), (0,±a), (±b,0), (0,±b)`.
pub fn order1_pattern(a: f64, b: f64) -> Vec<Vector2<f64>> {
    let mut v = vec![Vector2::zeros()];
    for m in [a, b] {
        v.extend([Vector2::new(m, 0.0), Vector2::new(-m, 0.0), Vector2::new(0.0, m), Vector2::new(0.0, -m)]);
    }
    v
}

fn usable(samples: &[ReflectionSample], order: SampleOrder) -> Result<Vec<ReflectionSample>> {
    let v: Vec<_> = samples.iter().copied().filter(|s| s.order == order).collect();
    if let Some(bad) = v.iter().find(|s| s.class != CovectorClass::HyperbolicHyperbolic) {
        return Err(Error::DegenerateSample(format!("slowness {} is {:?}", bad.slowness(), bad.class)));
    }
    Ok(v)
}

fn distinct_slownesses(samples: &[ReflectionSample]) -> usize {
    let mut p: Vec<f64> = samples.iter().map(|s| s.slowness()).collect();
    p.sort_by(f64::total_cmp);
    p.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs().max(1e-12));
    p.len()
}

/// Result of the order-0 recovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Order0Fit {
    pub plus: Material,
    /// Largest absolute sample residual.
    pub residual: f64,
    /// Condition number of the residual Jacobian in `(log ρ₊, log c₊)`.
    pub condition: f64,
    pub samples: usize,
}

fn model_r(minus: &Material, rho: f64, c: f64, s: &ReflectionSample) -> Option<f64> {
    let sides = InterfaceSides { minus: *minus, plus: Material::new(rho, c) };
    principal_r(&sides, s.tau, &s.eta).ok()
}

fn residuals(minus: &Material, rho: f64, c: f64, samples: &[ReflectionSample]) -> Option<DVector<f64>> {
    let r: Option<Vec<f64>> = samples.iter().map(|s| model_r(minus, rho, c, s).map(|m| m - s.value.re)).collect();
    r.map(DVector::from_vec)
}

fn jacobian(minus: &Material, theta: [f64; 2], samples: &[ReflectionSample]) -> Option<DMatrix<f64>> {
    let h = 1e-6;
    let mut j = DMatrix::zeros(samples.len(), 2);
    for k in 0..2 {
        let (mut a, mut b) = (theta, theta);
        a[k] += h;
        b[k] -= h;
        let ra = residuals(minus, a[0].exp(), a[1].exp(), samples)?;
        let rb = residuals(minus, b[0].exp(), b[1].exp(), samples)?;
        j.set_column(k, &((ra - rb) / (2.0 * h)));
    }
    Some(j)
}

fn condition(j: &DMatrix<f64>) -> f64 {
    let sv = j.clone().svd(false, false).singular_values;
    let (mx, mn) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), &v| (a.max(v), b.min(v)));
    mx / mn
}

/// Levenberg–Marquardt in `(log ρ₊, log c₊)`.
fn refine(minus: &Material, start: (f64, f64), samples: &[ReflectionSample]) -> Option<(f64, f64)> {
    let mut theta = [start.0.ln(), start.1.ln()];
    let mut r = residuals(minus, start.0, start.1, samples)?;
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let j = jacobian(minus, theta, samples)?;
        let jt = j.transpose();
        let g = &jt * &r;
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = &jt * &j;
            for k in 0..2 {
                a[(k, k)] *= 1.0 + lambda;
                a[(k, k)] += 1e-300;
            }
            let Some(step) = a.lu().solve(&(-&g)) else { break };
            let cand = [theta[0] + step[0], theta[1] + step[1]];
            if let Some(rc) = residuals(minus, cand[0].exp(), cand[1].exp(), samples) {
                if rc.norm_squared() <= r.norm_squared() {
                    let small = step.norm() < 1e-14;
                    theta = cand;
                    r = rc;
                    lambda = (lambda * 0.3).max(1e-12);
                    accepted = true;
                    if small {
                        return Some((theta[0].exp(), theta[1].exp()));
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    Some((theta[0].exp(), theta[1].exp()))
}

/// Recover `(ρ₊, c₊)` from principal reflection samples with `(ρ₋, c₋)` known.
///
/// The smallest-slowness sample fixes `ρ₊` as a function of `c₊` through
/// `ρ₊ = ρ₋ ξ_T3 (1+R) / (ξ_I3 (1-R))`; the largest-slowness sample then gives a
/// bracketed scalar root in `c₊`. Additional samples refine by least squares.
pub fn recover_order0(minus: &Material, samples: &[ReflectionSample]) -> Result<Order0Fit> {
    let mut v = usable(samples, SampleOrder::Principal)?;
    let n = distinct_slownesses(&v);
    if n < 2 {
        return Err(Error::InsufficientAngles { needed: 2, got: n });
    }
    v.sort_by(|a, b| a.slowness().total_cmp(&b.slowness()));
    let anchor = v[0];
    let oblique = *v.last().expect("nonempty");
    let r0 = anchor.value.re;
    if (1.0 - r0).abs() < 1e-12 {
        return Err(Error::DegenerateSample("anchor reflection is 1".into()));
    }
    let xi_i = |s: &ReflectionSample| ((s.tau / minus.c).powi(2) - s.eta.norm_squared()).sqrt();
    let rho_of = |c: f64| {
        let xt = ((anchor.tau / c).powi(2) - anchor.eta.norm_squared()).sqrt();
        minus.rho * xt * (1.0 + r0) / (xi_i(&anchor) * (1.0 - r0))
    };
    let f = |c: f64| model_r(minus, rho_of(c), c, &oblique).map(|m| m - oblique.value.re);
    let sse = |rho: f64, c: f64| residuals(minus, rho, c, &v).map(|r| r.norm_squared());

    let hi = oblique.tau.abs() / oblique.eta.norm() * (1.0 - 1e-9);
    let lo = 1e-3 * minus.c.min(hi);
    let m = 1024;
    let cs: Vec<f64> = (0..=m).map(|i| lo * (hi / lo).powf(i as f64 / m as f64)).collect();
    let fs: Vec<Option<f64>> = cs.iter().map(|&c| f(c)).collect();
    let mut candidates = Vec::new();
    for i in 0..m {
        if let (Some(a), Some(b)) = (fs[i], fs[i + 1]) {
            if a == 0.0 {
                candidates.push(cs[i]);
            } else if a * b < 0.0 {
                let mut conv = roots::SimpleConvergency { eps: 1e-15, max_iter: 300 };
                let g = |c: f64| f(c).unwrap_or(f64::NAN);
                if let Ok(c) = roots::find_root_brent(cs[i], cs[i + 1], g, &mut conv) {
                    candidates.push(c);
                }
            }
        }
    }
    if v.len() > 2 {
        // Profile minimum as a fallback start when noise removes the exact root.
        if let Some((c, _)) = cs
            .iter()
            .filter_map(|&c| sse(rho_of(c), c).map(|e| (c, e)))
            .filter(|(_, e)| e.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
        {
            candidates.push(c);
        }
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for c in candidates {
        let mut est = (rho_of(c), c);
        if !(est.0 > 0.0) {
            continue;
        }
        if v.len() > 2 {
            est = refine(minus, est, &v).unwrap_or(est);
        }
        if let Some(e) = sse(est.0, est.1) {
            if best.is_none_or(|b| e < b.2) {
                best = Some((est.0, est.1, e));
            }
        }
    }
    let (rho, c, _) = best.ok_or(Error::NoBracket)?;
    let res = residuals(minus, rho, c, &v).ok_or(Error::NoBracket)?;
    let cond = jacobian(minus, [rho.ln(), c.ln()], &v).map_or(f64::INFINITY, |j| condition(&j));
    Ok(Order0Fit { plus: Material::new(rho, c), residual: res.amax(), condition: cond, samples: v.len() })
}

/// Result of the order −1 recovery.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Order1Fit {
    pub jets: InterfaceJets,
    pub rank: usize,
    pub condition: f64,
    pub singular_values: Vec<f64>,
    pub residual: f64,
}

/// Unknown order `(∂_ν log c₊, ∂_ν log √ρ₊, ∂₁Φ, ∂₂Φ, ∂₃Φ)`.
fn jets_from(x: &[f64]) -> InterfaceJets {
    InterfaceJets { dlog_c: x[0], dlog_sqrt_rho: x[1], grad_phi: Vec3::new(x[2], x[3], x[4]) }
}

/// Real design matrix (real rows then imaginary rows) and data for the order −1 solve.
pub fn order1_design(sides: &InterfaceSides, samples: &[ReflectionSample]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = samples.len();
    let mut a = DMatrix::zeros(2 * n, 5);
    let mut b = DVector::zeros(2 * n);
    let zero = InterfaceJets::default();
    for (i, s) in samples.iter().enumerate() {
        let base = reflect_amp_minus1(sides, &zero, s.tau, &s.eta, Complex64::from(0.0))?;
        for k in 0..5 {
            let mut e = [0.0; 5];
            e[k] = 1.0;
            let col = reflect_amp_minus1(sides, &jets_from(&e), s.tau, &s.eta, Complex64::from(0.0))? - base;
            a[(i, k)] = col.re;
            a[(n + i, k)] = col.im;
        }
        let d = s.value - base;
        b[i] = d.re;
        b[n + i] = d.im;
    }
    Ok((a, b))
}

/// Least-squares recovery of the first-order `+` side jets and `∇Φ|_Γ` with known order-0 sides.
pub fn recover_order1(sides: &InterfaceSides, samples: &[ReflectionSample]) -> Result<Order1Fit> {
    let v = usable(samples, SampleOrder::Minus1)?;
    if v.len() < 5 {
        return Err(Error::InsufficientAngles { needed: 5, got: v.len() });
    }
    let (a, b) = order1_design(sides, &v)?;
    let svd = a.clone().svd(true, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| s > 1e-10 * smax).count();
    if rank < 5 {
        return Err(Error::RankDeficientDesign { rank, needed: 5 });
    }
    let x = svd.solve(&b, 1e-10 * smax).map_err(|e| Error::SolveFailure(e.into()))?;
    let residual = (&a * &x - &b).amax();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Order1Fit { jets: jets_from(x.as_slice()), rank, condition: smax / smin, singular_values: sv, residual })
}

/// Pointwise 3×3 field.
pub type TensorFn = Arc<dyn Fn(&Vec3) -> Mat3 + Send + Sync>;

/// One line integral `∫ Nᵀ B N ds` along a boundary-to-boundary geodesic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RayTransformDatum {
    pub entry: Vec3,
    pub entry_dir: Vec3,
    pub exit: Vec3,
    pub exit_dir: Vec3,
    pub length: f64,
    pub value: f64,
}

/// Geodesic ray transform of `field` for rays from boundary `starts`.
pub fn ray_transform_forward(medium: &Medium, field: &TensorFn, starts: &[PhasePoint], tol: Tolerance) -> Result<Vec<RayTransformDatum>> {
    let f = field.clone();
    let integrand: crate::rays::LineIntegrand = Arc::new(move |x: &Vec3, n: &Vec3| (n.transpose() * f(x) * n)[0]);
    starts
        .par_iter()
        .map(|start| {
            let opts = TraceOptions {
                tol,
                paraxial: true,
                wavefront: Some(Wavefront::point(start)),
                line_integrals: vec![integrand.clone()],
                ..Default::default()
            };
            let path = trace(medium, start, &opts)?;
            if path.termination != Termination::ExitedDomain {
                return Err(Error::Invalid(format!("ray ended with {:?} before exiting", path.termination)));
            }
            let floor = 1e-6 * medium.diameter();
            let mut sign = 0.0;
            for smp in path.samples.iter().filter(|s| s.s > floor) {
                let j = smp.spreading.unwrap_or(1.0);
                if sign == 0.0 {
                    sign = j.signum();
                } else if j.signum() != sign {
                    return Err(Error::CausticOnPath { s: smp.s });
                }
            }
            Ok(RayTransformDatum {
                entry: start.x,
                entry_dir: start.direction(),
                exit: path.end.point.x,
                exit_dir: path.end.point.direction(),
                length: path.end.s,
                value: path.end.integrals[0],
            })
        })
        .collect()
}

/// Random boundary chords: entry points on the outer sphere, directions within
/// `max_angle` of the inward normal.
pub fn chord_family<R: Rng>(medium: &Medium, count: usize, max_angle: f64, rng: &mut R) -> Vec<PhasePoint> {
    let radius = medium.domain_radius();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..count)
        .map(|_| {
            let u = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)).normalize();
            let x = u * (radius * (1.0 - 1e-12));
            let e1 = any_perpendicular(&u);
            let e2 = u.cross(&e1);
            let theta = max_angle * rng.random::<f64>().sqrt();
            let phi = std::f64::consts::TAU * rng.random::<f64>();
            let d = -u * theta.cos() + (e1 * phi.cos() + e2 * phi.sin()) * theta.sin();
            let region = medium.region_index(&x);
            PhasePoint::on_shell(medium, region, x, d, 1.0)
        })
        .collect()
}

/// `c·(sym ∇v - Γ·v)` for `v = (R² - |x|²) w` in the metric `c⁻² dx²`; its ray
/// transform over boundary-to-boundary geodesics vanishes.
pub fn gauge_field(medium: &Medium, w: [Poly3; 3]) -> TensorFn {
    let m = medium.clone();
    let r2 = medium.domain_radius().powi(2);
    Arc::new(move |x: &Vec3| {
        let mp = m.eval_region(m.region_index(x), x);
        let q = r2 - x.norm_squared();
        let wv = Vec3::new(w[0].eval(x), w[1].eval(x), w[2].eval(x));
        let v = wv * q;
        // (∇v)_{ij} = ∂_i v_j.
        let mut dv = Mat3::zeros();
        for j in 0..3 {
            let gw = w[j].grad_at(x);
            for i in 0..3 {
                dv[(i, j)] = -2.0 * x[i] * wv[j] + q * gw[i];
            }
        }
        let ds = -mp.grad_log_c();
        let gamma_v = outer(&v, &ds) + outer(&ds, &v) - Mat3::identity() * v.dot(&ds);
        (sym(&dv) - gamma_v) * mp.c
    })
}

/// Pointwise data of a media pair `(ρ, c, Φ)` and `(ρ̃, c, Φ̃)` sharing the speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairPoint {
    pub c: f64,
    pub grad_c: Vec3,
    pub rho: f64,
    pub rho_tilde: f64,
    /// Jets of `log √ρ` and `log √ρ̃`.
    pub beta: FieldJet,
    pub beta_tilde: FieldJet,
    pub phi: FieldJet,
    pub phi_tilde: FieldJet,
}

/// Jet of `log √ρ` from a jet of `ρ`.
pub fn log_sqrt_jet(rho: f64, grad: &Vec3, hess: &Mat3) -> FieldJet {
    FieldJet {
        value: 0.5 * rho.ln(),
        grad: grad / (2.0 * rho),
        hess: 0.5 * (hess / rho - outer(grad, grad) / (rho * rho)),
    }
}

/// The difference tensor `B = A/c - Ã/c` of a media pair, up to terms
/// independent of `ρ` and `Φ`. `ctx` supplies `N`, `∇⊗N` and `∇H/H` and is needed
/// only when `∇Φ ≠ ∇Φ̃`.
pub fn b_tensor(p: &PairPoint, ctx: Option<&RayContext>, kappa: f64, k0: f64) -> Result<Mat3> {
    let id = Mat3::identity();
    let (gb, gbt) = (p.beta.grad, p.beta_tilde.grad);
    let gbm = gb - gbt;
    let hbm = p.beta.hess - p.beta_tilde.hess;
    let dphi = p.phi.grad - p.phi_tilde.grad;
    let c = p.c;
    let glc = p.grad_c / c;
    let (ghh, v) = if dphi.norm() == 0.0 {
        (Vec3::zeros(), Vec3::zeros())
    } else {
        let ctx = ctx.ok_or_else(|| Error::MissingDerivatives("ray context required when the potentials differ".into()))?;
        let v = -gbm - ctx.grad_h_over_h + ctx.grad_n.transpose() * ctx.n - ctx.n * ctx.div_n();
        (ctx.grad_h_over_h, v)
    };
    let alpha = c * hbm.trace() - c * (gb.norm_squared() - gbt.norm_squared()) - c * k0 * (p.rho - p.rho_tilde)
        + c * (p.phi.hess.trace() - p.phi_tilde.hess.trace())
        - c * (gb.dot(&p.phi.grad) - gbt.dot(&p.phi_tilde.grad))
        + c * (ghh - glc).dot(&dphi)
        - c * (p.phi.grad.norm_squared() - p.phi_tilde.grad.norm_squared());
    Ok((outer(&gb, &gb) - outer(&gbt, &gbt)) * kappa - id * alpha
        + id * (2.0 * gbm.dot(&p.grad_c))
        + sym(&outer(&gbm, &p.grad_c)) * 4.0
        + hbm * (2.0 * c * c)
        + sym(&outer(&dphi, &v)) * (2.0 * c)
        + (p.phi.hess - p.phi_tilde.hess) * c)
}

/// Manufactured pair with `c = 1`, `Φ = Φ̃ = 0` and `log √ρ`, `log √ρ̃` polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialPair {
    pub beta: Poly3,
    pub beta_tilde: Poly3,
    pub kappa: f64,
    pub k0: f64,
}

impl PolynomialPair {
    fn jet(p: &Poly3, x: &Vec3) -> FieldJet {
        FieldJet { value: p.eval(x), grad: p.grad_at(x), hess: p.hessian_at(x) }
    }

    pub fn point(&self, x: &Vec3) -> PairPoint {
        let beta = Self::jet(&self.beta, x);
        let beta_tilde = Self::jet(&self.beta_tilde, x);
        PairPoint {
            c: 1.0,
            grad_c: Vec3::zeros(),
            rho: (2.0 * beta.value).exp(),
            rho_tilde: (2.0 * beta_tilde.value).exp(),
            beta,
            beta_tilde,
            phi: FieldJet::constant(0.0),
            phi_tilde: FieldJet::constant(0.0),
        }
    }

    pub fn b(&self, x: &Vec3) -> Mat3 {
        b_tensor(&self.point(x), None, self.kappa, self.k0).expect("equal potentials")
    }

    /// Closed form of `Σ_{ij} (WB)_{iijj}` for this pair:
    /// `2κ[S(β) - S(β̃)] - 4[Δ²β₋ - Δ(∇β₊·∇β₋) - k₀Δ(ρ - ρ̃)]`, `S(f) = |∇²f|² - (Δf)²`.
    pub fn contraction_exact(&self, x: &Vec3) -> f64 {
        let bm = self.beta.add(&self.beta_tilde.scale(-1.0));
        let bp = self.beta.add(&self.beta_tilde);
        let (gp, gm) = (bp.gradient(), bm.gradient());
        let mut dot = Poly3::zero();
        for k in 0..3 {
            dot = dot.add(&gp[k].mul(&gm[k]));
        }
        let s = |p: &Poly3| {
            let h = p.hessian_at(x);
            h.norm_squared() - h.trace().powi(2)
        };
        let lap_rho = |p: &Poly3| {
            let r = (2.0 * p.eval(x)).exp();
            r * (2.0 * p.laplacian().eval(x) + 4.0 * p.grad_at(x).norm_squared())
        };
        2.0 * self.kappa * (s(&self.beta) - s(&self.beta_tilde))
            - 4.0 * (bm.laplacian().laplacian().eval(x) - dot.laplacian().eval(x)
                - self.k0 * (lap_rho(&self.beta) - lap_rho(&self.beta_tilde)))
    }

    /// Saint-Venant contraction of `B` by finite differences.
    pub fn contraction_fd(&self, grid: Grid, order: Order) -> Result<ScalarField> {
        saint_venant_contraction(&TensorField::sample(grid, |x| self.b(x)), order)
    }
}

/// Settings for synthesizing and stripping a radial layered ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayerStripConfig {
    pub tau: f64,
    /// Tangential slownesses for order-0 data as fractions of `1/max(c₋, c₊)`.
    pub slowness_fractions: Vec<f64>,
    /// Magnitudes `a`, `b` of the order −1 covector pattern as fractions of `τ/max(c₋, c₊)`.
    pub pattern: (f64, f64),
    pub k0: f64,
    pub tol: Tolerance,
}

impl Default for LayerStripConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            slowness_fractions: vec![0.0, 0.6],
            pattern: (0.3, 0.6),
            k0: 1.0,
            tol: Tolerance { rtol: 1e-12, atol: 1e-14 },
        }
    }
}

/// A normal-incidence reflected arrival and the symbol samples measured for it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Arrival {
    pub two_way_time: f64,
    pub order0: Vec<ReflectionSample>,
    pub order1: Vec<ReflectionSample>,
}

/// Boundary data of a radial layered ball for a radial probing ray.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerData {
    pub outer_radius: f64,
    pub surface: Material,
    pub source: Vec3,
    pub direction: Vec3,
    pub arrivals: Vec<Arrival>,
}

/// `(e₁, e₂, e₃)` with `e₃` along the incident normal.
fn local_frame(e3: &Vec3) -> [Vec3; 3] {
    let e1 = any_perpendicular(e3);
    [e1, e3.cross(&e1), *e3]
}

/// Synthesize noiseless layer-stripping data from a radial model.
pub fn synthesize_layer_data(truth: &Medium, cfg: &LayerStripConfig) -> Result<LayerData> {
    let radius = truth.domain_radius();
    let direction = -Vec3::x();
    let source = Vec3::x() * radius * (1.0 - 1e-13);
    let start = PhasePoint::on_shell(truth, 0, source, direction, cfg.tau);
    let gravity = solve_phi_radial(truth, cfg.k0)?;
    let base = TraceOptions { tol: cfg.tol, ..Default::default() };
    let through = trace(truth, &start, &base)?;
    let crossings = through.interface_events().count();
    let surface = {
        let mp = truth.eval_region(0, &source);
        Material::new(mp.rho, mp.c)
    };
    let mut arrivals = Vec::new();
    for j in 0..crossings {
        let mut seq = vec![Branch::Transmit; j];
        seq.push(Branch::Reflect);
        let opts = TraceOptions { branch: BranchPolicy::Sequence(seq), ..base.clone() };
        let path = trace(truth, &start, &opts)?;
        if path.termination != Termination::ExitedDomain {
            return Err(Error::Layer { layer: j, source: Box::new(Error::Invalid("reflected ray did not return".into())) });
        }
        let ev = path.interface_events().nth(j).expect("reflection event");
        let k = ev.interface.expect("interface event");
        let from = ev.from_region;
        let other = if from == k { k + 1 } else { k };
        let x = ev.incident.x;
        let (mi, pl) = (truth.eval_region(from, &x), truth.eval_region(other, &x));
        let sides = InterfaceSides::new(mi.rho, mi.c, pl.rho, pl.c);
        let cmax = mi.c.max(pl.c);
        let ps: Vec<f64> = cfg.slowness_fractions.iter().map(|f| f / cmax).collect();
        let order0 = synthesize_order0(&sides, cfg.tau, &ps).map_err(|e| Error::Layer { layer: j, source: Box::new(e) })?;
        let frame = local_frame(&ev.incident.direction());
        let g = gravity.jet(&x, Some(other)).grad;
        let jets = InterfaceJets {
            dlog_c: frame[2].dot(&pl.grad_c) / pl.c,
            dlog_sqrt_rho: frame[2].dot(&pl.grad_rho) / (2.0 * pl.rho),
            grad_phi: Vec3::new(frame[0].dot(&g), frame[1].dot(&g), frame[2].dot(&g)),
        };
        let scale = cfg.tau / cmax;
        let etas = order1_pattern(cfg.pattern.0 * scale, cfg.pattern.1 * scale);
        let order1 = synthesize_order1(&sides, &jets, cfg.tau, &etas).map_err(|e| Error::Layer { layer: j, source: Box::new(e) })?;
        arrivals.push(Arrival { two_way_time: path.travel_time(), order0, order1 });
    }
    Ok(LayerData { outer_radius: radius, surface, source, direction, arrivals })
}

/// Recovered parameters at one interface and of the layer beneath it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerEstimate {
    pub layer: usize,
    pub radius: f64,
    pub rho: f64,
    pub c: f64,
    pub order0_residual: f64,
    pub order0_condition: f64,
    pub dlog_c: f64,
    pub dlog_sqrt_rho: f64,
    /// `∇Φ` at the reflection point recovered from order −1 data.
    pub grad_phi: Vec3,
    /// `∇Φ` there from the potential of the recovered density.
    pub grad_phi_forward: Vec3,
    pub phi_mismatch: f64,
    pub order1_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStripReport {
    pub outer_radius: f64,
    pub surface: Material,
    pub layers: Vec<LayerEstimate>,
    /// Arrivals not attributed to a new interface.
    pub unused_arrivals: usize,
}

impl LayerStripReport {
    /// Piecewise-constant medium built from the estimates.
    pub fn medium(&self) -> Result<Medium> {
        let mut regions = vec![Region::constant(self.surface.rho, self.surface.c)];
        regions.extend(self.layers.iter().map(|l| Region::constant(l.rho, l.c)));
        let radii: Vec<f64> = self.layers.iter().map(|l| l.radius).collect();
        Medium::radial_layers(regions, &radii, self.outer_radius)
    }
}

/// Outer-to-inner recovery of interface radii, layer parameters and `∇Φ` on each interface.
pub fn layer_strip(data: &LayerData, cfg: &LayerStripConfig) -> Result<LayerStripReport> {
    let mut layers: Vec<LayerEstimate> = Vec::new();
    let mut current = data.surface;
    let mut radius = data.outer_radius;
    let mut t_prev = 0.0;
    let mut used = 0;
    for (j, arr) in data.arrivals.iter().enumerate() {
        let wrap = |e: Error| Error::Layer { layer: j, source: Box::new(e) };
        let r = radius - current.c * (arr.two_way_time - t_prev) / 2.0;
        if !(r > 0.0 && r < radius) {
            break;
        }
        let fit0 = recover_order0(&current, &arr.order0).map_err(wrap)?;
        let sides = InterfaceSides { minus: current, plus: fit0.plus };
        let fit1 = recover_order1(&sides, &arr.order1).map_err(wrap)?;
        let frame = local_frame(&data.direction);
        let g = fit1.jets.grad_phi;
        layers.push(LayerEstimate {
            layer: j + 1,
            radius: r,
            rho: fit0.plus.rho,
            c: fit0.plus.c,
            order0_residual: fit0.residual,
            order0_condition: fit0.condition,
            dlog_c: fit1.jets.dlog_c,
            dlog_sqrt_rho: fit1.jets.dlog_sqrt_rho,
            grad_phi: frame[0] * g.x + frame[1] * g.y + frame[2] * g.z,
            grad_phi_forward: Vec3::zeros(),
            phi_mismatch: f64::NAN,
            order1_condition: fit1.condition,
        });
        current = fit0.plus;
        radius = r;
        t_prev = arr.two_way_time;
        used += 1;
    }
    let mut report = LayerStripReport {
        outer_radius: data.outer_radius,
        surface: data.surface,
        layers,
        unused_arrivals: data.arrivals.len() - used,
    };
    if !report.layers.is_empty() {
        let gravity = solve_phi_radial(&report.medium()?, cfg.k0)?;
        let start = data.source.normalize();
        for (i, l) in report.layers.iter_mut().enumerate() {
            let x = start * l.radius;
            let fwd = gravity.jet(&x, Some(i + 1)).grad;
            l.grad_phi_forward = fwd;
            l.phi_mismatch = (l.grad_phi - fwd).norm() / fwd.norm().max(1e-300);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplitudes::{ray_contexts, ContextSource, Family, FamilyRay};
    use crate::media::{RadialProfile, RegionField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sides() -> InterfaceSides {
        InterfaceSides::new(1.0, 1.0, 2.0, 1.5)
    }

    #[test]
    fn order0_round_trip_example() {
        let s = synthesize_order0(&sides(), 1.0, &[0.0, 0.4]).unwrap();
        let fit = recover_order0(&sides().minus, &s).unwrap();
        assert!((fit.plus.rho - 2.0).abs() < 1e-8 * 2.0 && (fit.plus.c - 1.5).abs() < 1e-8 * 1.5, "{fit:?}");
    }

    #[test]
    fn order0_matched_media() {
        let m = InterfaceSides::new(1.3, 0.8, 1.3, 0.8);
        let s = synthesize_order0(&m, 2.0, &[0.0, 0.5]).unwrap();
        let fit = recover_order0(&m.minus, &s).unwrap();
        assert!((fit.plus.rho - 1.3).abs() < 1e-8 && (fit.plus.c - 0.8).abs() < 1e-8);
    }

    #[test]
    fn order0_rejects_single_slowness_and_bad_class() {
        let s = synthesize_order0(&sides(), 1.0, &[0.3, 0.3]).unwrap();
        assert_eq!(recover_order0(&sides().minus, &s), Err(Error::InsufficientAngles { needed: 2, got: 1 }));
        let mut s = synthesize_order0(&sides(), 1.0, &[0.0, 0.3]).unwrap();
        s[1].class = CovectorClass::Brewster;
        assert!(matches!(recover_order0(&sides().minus, &s), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn order0_least_squares_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ps: Vec<f64> = (0..8).map(|i| 0.08 * i as f64).collect();
        let mut s = synthesize_order0(&sides(), 1.0, &ps).unwrap();
        add_relative_noise(&mut s, 0.01, &mut rng);
        let fit = recover_order0(&sides().minus, &s).unwrap();
        assert!((fit.plus.rho - 2.0).abs() < 0.2 && (fit.plus.c - 1.5).abs() < 0.15, "{fit:?}");
        assert!(fit.condition.is_finite());
    }

    #[test]
    fn order1_round_trip_and_zero() {
        let jets = InterfaceJets { dlog_c: 0.3, dlog_sqrt_rho: -0.2, grad_phi: Vec3::new(0.0, 0.0, 0.5) };
        let s = synthesize_order1(&sides(), &jets, 1.0, &order1_pattern(0.2, 0.4)).unwrap();
        let fit = recover_order1(&sides(), &s).unwrap();
        assert_eq!(fit.rank, 5);
        assert!((fit.jets.dlog_c - 0.3).abs() < 1e-9);
        assert!((fit.jets.dlog_sqrt_rho + 0.2).abs() < 1e-9);
        assert!((fit.jets.grad_phi - jets.grad_phi).norm() < 1e-9);
        let s = synthesize_order1(&sides(), &InterfaceJets::default(), 1.0, &order1_pattern(0.2, 0.4)).unwrap();
        let fit = recover_order1(&sides(), &s).unwrap();
        assert!(fit.jets.grad_phi.norm() < 1e-14 && fit.jets.dlog_c.abs() < 1e-14);
    }

    #[test]
    fn order1_sign_reversed_pair_isolates_tangential_gravity() {
        let a = Vector2::new(0.3, 0.0);
        let diff = |j: InterfaceJets| {
            let s = synthesize_order1(&sides(), &j, 1.0, &[a, -a]).unwrap();
            s[0].value - s[1].value
        };
        let base = InterfaceJets { dlog_c: 0.4, dlog_sqrt_rho: 0.1, grad_phi: Vec3::new(0.0, 0.7, -0.3) };
        assert!(diff(base).norm() < 1e-14);
        let with = InterfaceJets { grad_phi: Vec3::new(0.5, 0.7, -0.3), ..base };
        assert!(diff(with).norm() > 1e-3);
    }

    #[test]
    fn order1_rank_deficient_single_slowness() {
        let etas: Vec<_> = (0..6).map(|_| Vector2::new(0.3, 0.0)).collect();
        let s = synthesize_order1(&sides(), &InterfaceJets::default(), 1.0, &etas).unwrap();
        assert!(matches!(recover_order1(&sides(), &s), Err(Error::RankDeficientDesign { .. })));
    }

    fn smooth_ball() -> Medium {
        let c = RadialProfile::Polynomial(vec![1.0, 0.0, 0.3]);
        Medium::new(vec![Region { rho: RegionField::Constant(1.0), c: RegionField::Radial(c) }], vec![], 1.0).unwrap()
    }

    #[test]
    fn ray_transform_zero_and_gauge() {
        let m = smooth_ball();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let starts = chord_family(&m, 6, 1.0, &mut rng);
        let tol = Tolerance { rtol: 1e-12, atol: 1e-14 };
        let zero: TensorFn = Arc::new(|_| Mat3::zeros());
        for d in ray_transform_forward(&m, &zero, &starts, tol).unwrap() {
            assert_eq!(d.value, 0.0);
            assert!((d.exit.norm() - 1.0).abs() < 1e-9);
        }
        let w = [Poly3::from_terms([([1, 0, 0], 1.0), ([0, 1, 1], 0.5)]), Poly3::constant(0.3), Poly3::coord(2)];
        let g = gauge_field(&m, w);
        for d in ray_transform_forward(&m, &g, &starts, tol).unwrap() {
            assert!(d.value.abs() < 1e-9, "{}", d.value);
        }
    }

    #[test]
    fn equal_pair_b_vanishes() {
        let m = smooth_ball();
        let ray = FamilyRay::new(PhasePoint::on_shell(&m, 0, Vec3::new(-0.9, 0.1, 0.0), Vec3::x(), 1.0), Family::Plane);
        let ctx = ray_contexts(&m, &ray, &[0.4], ContextSource::AnalyticPlane).unwrap()[0];
        let mp = m.eval_region(0, &ctx.x);
        let b = log_sqrt_jet(mp.rho, &mp.grad_rho, &mp.hess_rho);
        let phi = FieldJet { value: 0.1, grad: Vec3::new(0.1, 0.2, 0.3), hess: Mat3::identity() };
        let p = PairPoint { c: mp.c, grad_c: mp.grad_c, rho: 1.0, rho_tilde: 1.0, beta: b, beta_tilde: b, phi, phi_tilde: phi };
        assert_eq!(b_tensor(&p, Some(&ctx), 1.0, 1.0).unwrap(), Mat3::zeros());
    }

    #[test]
    fn pair_contraction_matches_closed_form() {
        let pair = PolynomialPair {
            beta: Poly3::from_terms([([1, 0, 0], 0.2), ([0, 2, 0], 0.1), ([2, 1, 1], 0.3)]),
            beta_tilde: Poly3::from_terms([([0, 0, 1], -0.1), ([1, 1, 0], 0.2)]),
            kappa: 1.0,
            k0: 0.5,
        };
        let err = |n: usize| {
            let g = Grid::new(n, 0.5);
            let fd = pair.contraction_fd(g, Order::Fourth).unwrap();
            let c = (n - 1) / 2;
            (fd.at([c, c, c]) - pair.contraction_exact(&g.point([c, c, c]))).abs()
        };
        let (e1, e2) = (err(17), err(33));
        assert!(e2 < 1e-4 && e1 / e2 > 4.0, "{e1} {e2}");
    }

    #[test]
    fn layer_strip_two_layers() {
        let truth = Medium::radial_layers(vec![Region::constant(1.0, 1.0), Region::constant(2.0, 1.5)], &[0.5], 1.0).unwrap();
        let cfg = LayerStripConfig::default();
        let data = synthesize_layer_data(&truth, &cfg).unwrap();
        let rep = layer_strip(&data, &cfg).unwrap();
        assert_eq!(rep.layers.len(), 1);
        let l = &rep.layers[0];
        assert!((l.radius - 0.5).abs() < 1e-6 * 0.5);
        assert!((l.rho - 2.0).abs() < 1e-6 * 2.0 && (l.c - 1.5).abs() < 1e-6 * 1.5);
        assert!(l.phi_mismatch < 1e-6, "{}", l.phi_mismatch);
        assert!(l.dlog_c.abs() < 1e-9 && l.dlog_sqrt_rho.abs() < 1e-9);
    }

    #[test]
    fn layer_strip_homogeneous_ball() {
        let truth = Medium::homogeneous(1.0, 1.0, 1.0);
        let cfg = LayerStripConfig::default();
        let data = synthesize_layer_data(&truth, &cfg).unwrap();
        assert!(data.arrivals.is_empty());
        assert!(layer_strip(&data, &cfg).unwrap().layers.is_empty());
    }
}
