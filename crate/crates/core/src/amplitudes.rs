//! Leading and next-to-leading amplitude transport along rays, with the
//! gravitational source built from the tensor `A(x)` and the transverse `h₋₁`.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gravity::Gravity;
use crate::math::{any_perpendicular, outer, perp_projector, Mat3, Vec3};
use crate::media::{FieldJet, Medium, MediumPoint};
use crate::ode::{rk4_step, Tolerance};
use crate::rays::{trace, Alpha0Options, BranchPolicy, PhasePoint, RayPath, SpreadingSign, StopCondition, TraceOptions, Wavefront};

pub type CVec3 = Vector3<Complex64>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Wavefront family a ray belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Family {
    /// Plane wavefront through the start point.
    Plane,
    /// Point source at the start point; amplitudes start at `s_start > 0`.
    Point { s_start: f64 },
}

/// A ray of a wavefront family with its `α₀` initial value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyRay {
    pub start: PhasePoint,
    pub family: Family,
    pub alpha0: f64,
    pub sign: SpreadingSign,
    pub tol: Tolerance,
    pub branch: BranchPolicy,
}

impl FamilyRay {
    pub fn new(start: PhasePoint, family: Family) -> Self {
        Self {
            start,
            family,
            alpha0: 1.0,
            sign: SpreadingSign::Conservative,
            tol: Tolerance { rtol: 1e-11, atol: 1e-13 },
            branch: BranchPolicy::Transmit,
        }
    }

    /// First arclength at which amplitudes are defined.
    pub fn s_start(&self) -> f64 {
        match self.family {
            Family::Plane => 0.0,
            Family::Point { s_start } => s_start,
        }
    }
}

/// Trace `ray` with paraxial and `α₀` transport until `s_end` or exit.
pub fn trace_family(medium: &Medium, ray: &FamilyRay, s_end: f64, output_s: Vec<f64>) -> Result<RayPath> {
    let region = medium.region_index(&ray.start.x);
    let base = TraceOptions {
        tol: ray.tol,
        paraxial: true,
        branch: ray.branch.clone(),
        stop: StopCondition { max_s: s_end, ..Default::default() },
        ..Default::default()
    };
    match ray.family {
        Family::Plane => {
            let wf = Wavefront::plane(medium, region, &ray.start);
            let opts = TraceOptions {
                wavefront: Some(wf),
                alpha0: Some(Alpha0Options { initial: ray.alpha0, sign: ray.sign }),
                output_s,
                ..base
            };
            trace(medium, &ray.start, &opts)
        }
        Family::Point { s_start } => {
            if !(s_start > 0.0) {
                return Err(Error::Invalid("point-source amplitudes need s_start > 0".into()));
            }
            let wf = Wavefront::point(&ray.start);
            let lead = TraceOptions {
                stop: StopCondition { max_s: s_start, ..Default::default() },
                branch: ray.branch.clone(),
                record_steps: false,
                ..base.clone()
            };
            let first = trace(medium, &ray.start, &lead)?;
            if first.end.s < s_start {
                return Err(Error::Invalid("ray left the domain before s_start".into()));
            }
            let opts = TraceOptions {
                wavefront: Some(wf),
                alpha0: Some(Alpha0Options { initial: ray.alpha0, sign: ray.sign }),
                output_s,
                s0: s_start,
                initial_jacobian: first.end.jacobian,
                start_region: Some(first.end.region),
                ..base
            };
            trace(medium, &first.end.point, &opts)
        }
    }
}

/// `α₀` and related quantities at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Alpha0Sample {
    pub s: f64,
    pub x: Vec3,
    pub alpha0_ode: f64,
    pub alpha0_closed: f64,
    /// `H = α₀√ρ`.
    pub h: f64,
    /// `g = 1/α₀`.
    pub g: f64,
    pub div_n: f64,
    pub spreading: f64,
}

fn check_caustics(path: &RayPath) -> Result<()> {
    let mut sign = 0.0;
    for smp in path.samples.iter().chain(&path.outputs) {
        if let Some(j) = smp.spreading {
            if sign == 0.0 {
                sign = j.signum();
            } else if j.signum() != sign || j == 0.0 {
                return Err(Error::CausticOnPath { s: smp.s });
            }
        }
    }
    Ok(())
}

/// `α₀` along a family ray by ODE and by the segment-wise closed form
/// `α₀ = α₀(s̲)·√(ρc(s̲)/ρc(s))·√(J(s̲)/J(s))` with interface coefficients.
pub fn transport_alpha0(medium: &Medium, ray: &FamilyRay, s_end: f64) -> Result<(RayPath, Vec<Alpha0Sample>)> {
    let path = trace_family(medium, ray, s_end, vec![])?;
    check_caustics(&path)?;
    let mut out = Vec::with_capacity(path.samples.len());
    let mut anchor: Option<(usize, f64, f64, f64)> = None;
    let coeffs: Vec<f64> = path.interface_events().map(|e| e.coefficient.unwrap_or(f64::NAN)).collect();
    let mut event = coeffs.into_iter();
    for smp in &path.samples {
        let mp = medium.eval_region(smp.region, &smp.point.x);
        let j = smp.spreading.expect("paraxial sample");
        let (rc, a_ode) = (mp.rho * mp.c, smp.alpha0.expect("alpha0 sample"));
        let anchor_now = match anchor {
            Some(a) if a.0 == smp.segment => a,
            Some(_) => {
                let coeff = event.next().unwrap_or(f64::NAN);
                let a = (smp.segment, prev_closed(&out) * coeff, rc, j);
                anchor = Some(a);
                a
            }
            None => {
                let a = (smp.segment, ray.alpha0, rc, j);
                anchor = Some(a);
                a
            }
        };
        let (_, a0, rc0, j0) = anchor_now;
        let ratio = match ray.sign {
            SpreadingSign::Conservative => j0 / j,
            SpreadingSign::AsPrinted => j / j0,
        };
        let closed = a0 * (rc0 / rc).sqrt() * ratio.sqrt();
        out.push(Alpha0Sample {
            s: smp.s,
            x: smp.point.x,
            alpha0_ode: a_ode,
            alpha0_closed: closed,
            h: a_ode * mp.rho.sqrt(),
            g: 1.0 / a_ode,
            div_n: smp.div_n.expect("paraxial sample"),
            spreading: j,
        });
    }
    Ok((path, out))
}

fn prev_closed(out: &[Alpha0Sample]) -> f64 {
    out.last().map_or(f64::NAN, |s| s.alpha0_closed)
}

/// `∇·N` along a family ray from the paraxial propagator.
pub fn spreading_div_n(medium: &Medium, ray: &FamilyRay, s: &[f64]) -> Result<Vec<f64>> {
    let s_end = s.iter().copied().fold(0.0, f64::max);
    let path = trace_family(medium, ray, s_end, s.to_vec())?;
    check_caustics(&path)?;
    Ok(path.outputs.iter().map(|o| o.div_n.expect("paraxial")).collect())
}

/// Local wavefront data along a ray, needed by `h₋₁` and `A(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RayContext {
    pub s: f64,
    pub x: Vec3,
    pub region: usize,
    pub n: Vec3,
    pub xi_norm: f64,
    /// `(∇⊗N)_{ij} = ∂_i N_j`.
    pub grad_n: Mat3,
    pub alpha0: f64,
    pub grad_alpha0: Vec3,
    /// `∇H/H`.
    pub grad_h_over_h: Vec3,
    /// `ΔH/H`.
    pub lap_h_over_h: f64,
}

impl RayContext {
    pub fn div_n(&self) -> f64 {
        self.grad_n.trace()
    }
}

/// How wavefront derivatives along a ray are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ContextSource {
    /// Plane wavefront in a constant-speed region: `∇⊗N = 0`, `∇H/H = 0`.
    AnalyticPlane,
    /// Point source at `center` in a constant-speed region.
    AnalyticPoint { center: Vec3 },
    /// Differencing over a 3×3 transverse bundle and along the ray.
    Bundle { dgamma: f64, ds: f64 },
}

fn analytic_context(mp: &MediumPoint, sample_x: Vec3, s: f64, region: usize, xi: Vec3, alpha0: f64, src: ContextSource) -> RayContext {
    let n = xi.normalize();
    let (grad_n, ghh) = match src {
        ContextSource::AnalyticPoint { center } => {
            let d = sample_x - center;
            let r = d.norm();
            let u = d / r;
            (perp_projector(&u) / r, -u / r)
        }
        _ => (Mat3::zeros(), Vec3::zeros()),
    };
    let grad_log_sqrt_rho = mp.grad_rho / (2.0 * mp.rho);
    RayContext {
        s,
        x: sample_x,
        region,
        n,
        xi_norm: xi.norm(),
        grad_n,
        alpha0,
        grad_alpha0: (ghh - grad_log_sqrt_rho) * alpha0,
        grad_h_over_h: ghh,
        lap_h_over_h: 0.0,
    }
}

/// Ray contexts at arclengths `s` on the family ray.
pub fn ray_contexts(medium: &Medium, ray: &FamilyRay, s: &[f64], source: ContextSource) -> Result<Vec<RayContext>> {
    let s_end = s.iter().copied().fold(0.0, f64::max);
    match source {
        ContextSource::AnalyticPlane | ContextSource::AnalyticPoint { .. } => {
            let path = trace_family(medium, ray, s_end, s.to_vec())?;
            check_caustics(&path)?;
            if path.outputs.len() != s.len() {
                return Err(Error::Invalid("ray ended before the last requested sample".into()));
            }
            Ok(path
                .outputs
                .iter()
                .map(|o| {
                    let mp = medium.eval_region(o.region, &o.point.x);
                    analytic_context(&mp, o.point.x, o.s, o.region, o.point.xi, o.alpha0.expect("alpha0"), source)
                })
                .collect())
        }
        ContextSource::Bundle { dgamma, ds } => bundle_contexts(medium, ray, s, dgamma, ds),
    }
}

/// Member `(i, j)` of the transverse bundle around `ray`.
fn bundle_member(medium: &Medium, ray: &FamilyRay, g1: f64, g2: f64) -> FamilyRay {
    let n = ray.start.direction();
    let e1 = any_perpendicular(&n);
    let e2 = n.cross(&e1);
    let region = medium.region_index(&ray.start.x);
    let start = match ray.family {
        Family::Plane => {
            let x = ray.start.x + e1 * g1 + e2 * g2;
            PhasePoint::on_shell(medium, region, x, n, ray.start.tau)
        }
        Family::Point { .. } => PhasePoint::on_shell(medium, region, ray.start.x, n + e1 * g1 + e2 * g2, ray.start.tau),
    };
    // Constant H on the initial wavefront.
    let rho0 = medium.eval_region(region, &ray.start.x).rho;
    let rho = medium.eval_region(region, &start.x).rho;
    FamilyRay { start: PhasePoint { t: ray.start.t, ..start }, alpha0: ray.alpha0 * (rho0 / rho).sqrt(), ..ray.clone() }
}

fn bundle_contexts(medium: &Medium, ray: &FamilyRay, s: &[f64], dg: f64, ds: f64) -> Result<Vec<RayContext>> {
    let mut grid: Vec<f64> = s.iter().flat_map(|&v| [v - ds, v, v + ds]).collect();
    grid.sort_by(f64::total_cmp);
    let s_end = grid.last().copied().unwrap_or(0.0);
    if grid.first().is_some_and(|&v| v < ray.s_start()) {
        return Err(Error::Invalid("bundle samples start before the family is defined".into()));
    }
    let offsets: Vec<(i32, i32)> = (-1..=1).flat_map(|i| (-1..=1).map(move |j| (i, j))).collect();
    let traced: Vec<Result<RayPath>> = offsets
        .par_iter()
        .map(|&(i, j)| {
            let member = bundle_member(medium, ray, i as f64 * dg, j as f64 * dg);
            trace_family(medium, &member, s_end, grid.clone())
        })
        .collect();
    let mut paths = Vec::with_capacity(9);
    for p in traced {
        let p = p?;
        check_caustics(&p)?;
        if p.outputs.len() != grid.len() {
            return Err(Error::Invalid("bundle ray ended before the last requested sample".into()));
        }
        paths.push(p);
    }
    let at = |i: i32, j: i32, m: usize| &paths[((i + 1) * 3 + (j + 1)) as usize].outputs[m];
    let mut out = Vec::with_capacity(s.len());
    for (k, &sk) in s.iter().enumerate() {
        let m = 3 * k + 1;
        let log_h = |i: i32, j: i32, dm: isize| {
            let o = at(i, j, (m as isize + dm) as usize);
            let rho = medium.eval_region(o.region, &o.point.x).rho;
            (o.alpha0.expect("alpha0") * rho.sqrt()).abs().ln()
        };
        let pos = |i: i32, j: i32, dm: isize| at(i, j, (m as isize + dm) as usize).point.x;
        let nrm = |i: i32, j: i32, dm: isize| at(i, j, (m as isize + dm) as usize).point.direction();
        // Coordinates (γ₁, γ₂, s): first and second differences.
        let d1 = |f: &dyn Fn(i32, i32, isize) -> Vec3| -> [Vec3; 3] {
            [
                (f(1, 0, 0) - f(-1, 0, 0)) / (2.0 * dg),
                (f(0, 1, 0) - f(0, -1, 0)) / (2.0 * dg),
                (f(0, 0, 1) - f(0, 0, -1)) / (2.0 * ds),
            ]
        };
        let xa = d1(&pos);
        let na = d1(&nrm);
        let fs = [
            (log_h(1, 0, 0) - log_h(-1, 0, 0)) / (2.0 * dg),
            (log_h(0, 1, 0) - log_h(0, -1, 0)) / (2.0 * dg),
            (log_h(0, 0, 1) - log_h(0, 0, -1)) / (2.0 * ds),
        ];
        let second = |f: &dyn Fn(i32, i32, isize) -> f64| -> Matrix3<f64> {
            let c = f(0, 0, 0);
            let mut h = Matrix3::zeros();
            h[(0, 0)] = (f(1, 0, 0) - 2.0 * c + f(-1, 0, 0)) / (dg * dg);
            h[(1, 1)] = (f(0, 1, 0) - 2.0 * c + f(0, -1, 0)) / (dg * dg);
            h[(2, 2)] = (f(0, 0, 1) - 2.0 * c + f(0, 0, -1)) / (ds * ds);
            h[(0, 1)] = (f(1, 1, 0) - f(1, -1, 0) - f(-1, 1, 0) + f(-1, -1, 0)) / (4.0 * dg * dg);
            h[(1, 0)] = h[(0, 1)];
            // Mixed (γ, s) derivatives from the central transverse members offset in s.
            h[(0, 2)] = (f(1, 0, 1) - f(1, 0, -1) - f(-1, 0, 1) + f(-1, 0, -1)) / (4.0 * dg * ds);
            h[(2, 0)] = h[(0, 2)];
            h[(1, 2)] = (f(0, 1, 1) - f(0, 1, -1) - f(0, -1, 1) + f(0, -1, -1)) / (4.0 * dg * ds);
            h[(2, 1)] = h[(1, 2)];
            h
        };
        let q = Matrix3::from_columns(&xa);
        let q_inv = q.try_inverse().ok_or(Error::CausticOnPath { s: sk })?;
        let q_inv_t = q_inv.transpose();
        let grad = q_inv_t * Vec3::from(fs);
        let f_ab = second(&log_h);
        let mut x_ab_dot_grad = Matrix3::zeros();
        for axis in 0..3 {
            let comp = |i: i32, j: i32, dm: isize| pos(i, j, dm)[axis];
            x_ab_dot_grad += second(&comp) * grad[axis];
        }
        let hess = q_inv_t * (f_ab - x_ab_dot_grad) * q_inv;
        let dn = Matrix3::from_rows(&[na[0].transpose(), na[1].transpose(), na[2].transpose()]);
        let grad_n = q_inv_t * dn;
        let c = at(0, 0, m);
        let mp = medium.eval_region(c.region, &c.point.x);
        let alpha0 = c.alpha0.expect("alpha0");
        let glsr = mp.grad_rho / (2.0 * mp.rho);
        out.push(RayContext {
            s: sk,
            x: c.point.x,
            region: c.region,
            n: c.point.direction(),
            xi_norm: c.point.xi.norm(),
            grad_n,
            alpha0,
            grad_alpha0: (grad - glsr) * alpha0,
            grad_h_over_h: grad,
            lap_h_over_h: hess.trace() + grad.norm_squared(),
        });
    }
    Ok(out)
}

/// Transverse order −1 amplitude vector
/// `h₋₁ = -i/(c²|ξ|) · P_⊥[c²∇α₀ + (2c²∇log√(ρc²) - c²∇log c + ∇Φ)α₀]`.
pub fn h_minus1(ctx: &RayContext, mp: &MediumPoint, grad_phi: &Vec3) -> Result<CVec3> {
    if !(ctx.xi_norm > 0.0) {
        return Err(Error::ZeroCovector);
    }
    let c2 = mp.c * mp.c;
    let grad_log_sqrt_kappa = 0.5 * (mp.grad_rho / mp.rho + 2.0 * mp.grad_c / mp.c);
    let v = ctx.grad_alpha0 * c2 + (grad_log_sqrt_kappa * (2.0 * c2) - mp.grad_log_c() * c2 + grad_phi) * ctx.alpha0;
    let p = perp_projector(&ctx.n) * v;
    let scale = -I / (c2 * ctx.xi_norm);
    Ok(p.map(|r| scale * r))
}

/// Pieces of `A(x)`, kept apart so individual blocks can be inspected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TensorA {
    pub density: Mat3,
    pub potential: Mat3,
    pub self_gravitation: Mat3,
    pub remainder: Mat3,
}

impl TensorA {
    pub fn total(&self) -> Mat3 {
        self.density + self.potential + self.self_gravitation + self.remainder
    }

    /// `N·A·N`.
    pub fn nan(&self, n: &Vec3) -> f64 {
        (n.transpose() * self.total() * n)[0]
    }
}

/// Terms of `A` that involve neither `ρ` nor `Φ`: `-c²(ΔH/H) I`.
pub fn tensor_a_remainder(ctx: &RayContext, mp: &MediumPoint) -> Mat3 {
    Mat3::identity() * (-mp.c * mp.c * ctx.lap_h_over_h)
}

/// Assemble `A(x)` from the medium, the potential jet and the ray context.
pub fn tensor_a(ctx: &RayContext, mp: &MediumPoint, phi: &FieldJet, k0: f64, selfgrav: bool) -> Result<TensorA> {
    let finite = mp.rho.is_finite()
        && mp.c.is_finite()
        && mp.hess_rho.iter().all(|v| v.is_finite())
        && mp.hess_c.iter().all(|v| v.is_finite())
        && phi.hess.iter().all(|v| v.is_finite())
        && phi.grad.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::MissingDerivatives(format!("non-finite jets at {:?}", ctx.x.as_slice())));
    }
    let id = Mat3::identity();
    let c2 = mp.c * mp.c;
    let grad_c2 = mp.grad_c * (2.0 * mp.c);
    let gb = mp.grad_rho / (2.0 * mp.rho);
    let hb = 0.5 * (mp.hess_rho / mp.rho - outer(&mp.grad_rho, &mp.grad_rho) / (mp.rho * mp.rho));
    let density = hb * c2 + outer(&gb, &grad_c2) * 2.0 - id * (c2 * hb.trace() - c2 * gb.norm_squared() + gb.dot(&grad_c2));
    let gp = phi.grad;
    let n = ctx.n;
    let bracket = (ctx.grad_h_over_h - mp.grad_log_c()).dot(&gp) - gb.dot(&gp) + phi.hess.trace() - gp.norm_squared() / c2;
    let potential = -outer(&gb, &gp) - outer(&ctx.grad_h_over_h, &gp) + outer(&(ctx.grad_n * gp), &n)
        - outer(&gp, &n) * ctx.div_n()
        + phi.hess
        + id * bracket;
    let self_gravitation = if selfgrav { id * (-k0 * mp.rho) } else { Mat3::zeros() };
    Ok(TensorA { density, potential, self_gravitation, remainder: tensor_a_remainder(ctx, mp) })
}

/// `α₋₁` along a family ray by `g`-weighted quadrature and by direct ODE integration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaMinus1Trace {
    pub s: Vec<f64>,
    pub alpha0: Vec<f64>,
    /// `N·A·N` at each grid node.
    pub nan: Vec<f64>,
    /// Values at even grid nodes (`s[0], s[2], ...`).
    pub quadrature: Vec<Complex64>,
    pub ode: Vec<Complex64>,
}

impl AlphaMinus1Trace {
    pub fn exit_quadrature(&self) -> Complex64 {
        *self.quadrature.last().expect("nonempty")
    }
    pub fn exit_alpha0(&self) -> f64 {
        *self.alpha0.last().expect("nonempty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaMinus1Options {
    pub s_end: f64,
    /// Number of grid intervals (rounded up to even).
    pub intervals: usize,
    pub initial: Complex64,
    pub selfgrav: bool,
    pub source: ContextSource,
}

/// `g α₋₁(s) = ∫ gG + g α₋₁(s̲)` with `gG = -i N·A·N / (2c²|ξ|)`.
pub fn transport_alpha_minus1(
    medium: &Medium,
    gravity: &dyn Gravity,
    ray: &FamilyRay,
    opts: &AlphaMinus1Options,
) -> Result<AlphaMinus1Trace> {
    let n = opts.intervals.max(2).div_ceil(2) * 2;
    let s0 = ray.s_start();
    let hs = (opts.s_end - s0) / n as f64;
    let grid: Vec<f64> = (0..=n).map(|i| s0 + hs * i as f64).collect();
    let ctxs = ray_contexts(medium, ray, &grid, opts.source)?;
    let mut gg = Vec::with_capacity(grid.len());
    let mut nan = Vec::with_capacity(grid.len());
    let mut decay = Vec::with_capacity(grid.len());
    for ctx in &ctxs {
        let mp = medium.eval_region(ctx.region, &ctx.x);
        let phi = gravity.jet(&ctx.x, Some(ctx.region));
        let a = tensor_a(ctx, &mp, &phi, gravity.k0(), opts.selfgrav)?;
        let x = a.nan(&ctx.n);
        nan.push(x);
        gg.push(-I * x / (2.0 * mp.c * mp.c * ctx.xi_norm));
        decay.push(0.5 * ctx.n.dot(&(mp.grad_rho / mp.rho + mp.grad_c / mp.c)) + 0.5 * ctx.div_n());
    }
    let alpha0: Vec<f64> = ctxs.iter().map(|c| c.alpha0).collect();

    let mut quadrature = vec![opts.initial];
    let mut acc = opts.initial / alpha0[0];
    for k in (0..n).step_by(2) {
        acc += (gg[k] + gg[k + 1] * 4.0 + gg[k + 2]) * (hs / 3.0);
        quadrature.push(acc * alpha0[k + 2]);
    }

    // y' = -q y + α₀ gG, RK4 with step 2Δ on the same nodes.
    let mut ode = vec![opts.initial];
    let mut y = opts.initial;
    for k in (0..n).step_by(2) {
        let node = |sv: f64| -> (f64, Complex64) {
            let idx = k + (sv / hs).round() as usize;
            (decay[idx], gg[idx] * alpha0[idx])
        };
        let f_s = |sv: f64, v: &[f64], d: &mut [f64]| {
            let (q, src) = node(sv);
            let z = Complex64::new(v[0], v[1]);
            let dz = -z * q + src;
            d[0] = dz.re;
            d[1] = dz.im;
        };
        let v = rk4_step(&f_s, 0.0, &[y.re, y.im], 2.0 * hs);
        y = Complex64::new(v[0], v[1]);
        ode.push(y);
    }
    Ok(AlphaMinus1Trace { s: grid, alpha0, nan, quadrature, ode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gravity::{solve_phi_radial, PolynomialGravity, ZeroGravity};
    use crate::math::Poly3;
    use crate::media::{RadialProfile, Region, RegionField};
    use proptest::prelude::*;

    fn plane_ray(m: &Medium, x: Vec3, dir: Vec3) -> FamilyRay {
        FamilyRay::new(PhasePoint::on_shell(m, m.region_index(&x), x, dir, 1.0), Family::Plane)
    }

    #[test]
    fn homogeneous_plane_alpha0_constant() {
        let m = Medium::homogeneous(1.0, 1.0, 2.0);
        let (_, s) = transport_alpha0(&m, &plane_ray(&m, Vec3::new(-1.0, 0.0, 0.0), Vec3::x()), 2.0).unwrap();
        for v in &s {
            assert!((v.alpha0_ode - 1.0).abs() < 1e-12 && v.div_n.abs() < 1e-12);
        }
    }

    #[test]
    fn impedance_ramp_halves_alpha0() {
        // ρc rises from 1 to 4 along x on [0, 1] with c constant.
        let rho = Poly3::from_terms([([0, 0, 0], 1.0), ([1, 0, 0], 3.0)]);
        let m = Medium::new(vec![Region { rho: RegionField::polynomial(rho), c: RegionField::Constant(1.0) }], vec![], 3.0).unwrap();
        let (_, s) = transport_alpha0(&m, &plane_ray(&m, Vec3::zeros(), Vec3::x()), 1.0).unwrap();
        let last = s.last().unwrap();
        assert!((last.alpha0_ode - 0.5).abs() < 1e-9 && (last.alpha0_closed - 0.5).abs() < 1e-12);
    }

    #[test]
    fn point_source_div_n() {
        let m = Medium::homogeneous(1.0, 1.3, 3.0);
        let ray = FamilyRay::new(PhasePoint::on_shell(&m, 0, Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0), 1.0), Family::Point { s_start: 0.1 });
        let s = [0.2, 0.5, 1.0, 2.0];
        let d = spreading_div_n(&m, &ray, &s).unwrap();
        for (dv, r) in d.iter().zip(s) {
            assert!((dv - 2.0 / r).abs() < 1e-8, "{dv} vs {}", 2.0 / r);
        }
        let (_, a) = transport_alpha0(&m, &ray, 2.0).unwrap();
        let last = a.last().unwrap();
        assert!((last.alpha0_ode - 0.1 / 2.0).abs() < 1e-8);
        let fwd = FamilyRay { sign: SpreadingSign::AsPrinted, ..ray };
        let (_, b) = transport_alpha0(&m, &fwd, 2.0).unwrap();
        assert!((b.last().unwrap().alpha0_ode - 2.0 / 0.1).abs() < 1e-6);
    }

    #[test]
    fn bundle_matches_point_source_closed_form() {
        let m = Medium::homogeneous(1.0, 1.0, 3.0);
        let ray = FamilyRay::new(PhasePoint::on_shell(&m, 0, Vec3::zeros(), Vec3::new(0.3, 1.0, 0.2), 1.0), Family::Point { s_start: 0.1 });
        let s = [0.5, 1.0, 1.5];
        let b = ray_contexts(&m, &ray, &s, ContextSource::Bundle { dgamma: 1e-3, ds: 1e-3 }).unwrap();
        let a = ray_contexts(&m, &ray, &s, ContextSource::AnalyticPoint { center: Vec3::zeros() }).unwrap();
        for (x, y) in b.iter().zip(&a) {
            assert!((x.grad_h_over_h - y.grad_h_over_h).norm() < 1e-2 * y.grad_h_over_h.norm());
            assert!((x.grad_n - y.grad_n).norm() < 1e-2 * y.grad_n.norm());
            assert!(x.lap_h_over_h.abs() < 1e-2 / (x.s * x.s));
            assert!((x.div_n() - 2.0 / x.s).abs() < 1e-2 * 2.0 / x.s);
        }
    }

    #[test]
    fn h_minus1_examples() {
        let m = Medium::homogeneous(1.2, 1.5, 2.0);
        let ray = plane_ray(&m, Vec3::new(-1.0, 0.0, 0.0), Vec3::x());
        let ctx = ray_contexts(&m, &ray, &[0.5], ContextSource::AnalyticPlane).unwrap()[0];
        let mp = m.eval_region(0, &ctx.x);
        assert_eq!(h_minus1(&ctx, &mp, &Vec3::zeros()).unwrap().norm(), 0.0);
        let g0 = 0.8;
        let h = h_minus1(&ctx, &mp, &Vec3::new(0.0, 0.0, g0)).unwrap();
        assert!(h[0].norm() < 1e-15 && h[1].norm() < 1e-15);
        let expect = -I * g0 * ctx.alpha0 / (1.5 * 1.5 * ctx.xi_norm);
        assert!((h[2] - expect).norm() < 1e-15);
    }

    #[test]
    fn tensor_a_examples() {
        let m = Medium::homogeneous(1.7, 1.2, 2.0);
        let ray = plane_ray(&m, Vec3::new(-1.0, 0.2, 0.1), Vec3::x());
        let ctx = ray_contexts(&m, &ray, &[0.5], ContextSource::AnalyticPlane).unwrap()[0];
        let mp = m.eval_region(0, &ctx.x);
        let zero = FieldJet::constant(0.0);
        let off = tensor_a(&ctx, &mp, &zero, 1.0, false).unwrap();
        let on = tensor_a(&ctx, &mp, &zero, 1.0, true).unwrap();
        assert_eq!(on.total() - off.total(), Mat3::identity() * -1.7);
        assert_eq!(on.nan(&ctx.n) - off.nan(&ctx.n), -1.7);
        assert_eq!(off.total(), off.remainder);
        assert_eq!(off.nan(&ctx.n), 0.0);

        let g = PolynomialGravity::new(Poly3::from_terms([([0, 0, 2], 0.5)]), 1.0);
        let phi = g.jet(&ctx.x, None);
        let a = tensor_a(&ctx, &mp, &phi, 1.0, false).unwrap();
        let x3 = ctx.x.z;
        let mut expect = Mat3::identity() * (1.0 - x3 * x3 / (1.2 * 1.2));
        expect[(2, 2)] += 1.0;
        // -divN ∇Φ⊗N and the ∇H/H blocks vanish for a plane wave in a constant medium.
        assert!((a.potential - expect).norm() < 1e-14);
    }

    #[test]
    fn alpha_minus1_homogeneous_and_linear_growth() {
        let m = Medium::homogeneous(2.0, 1.5, 2.0);
        let ray = plane_ray(&m, Vec3::new(-1.5, 0.0, 0.0), Vec3::x());
        let init = Complex64::new(0.3, -0.1);
        let opts = AlphaMinus1Options { s_end: 3.0, intervals: 40, initial: init, selfgrav: false, source: ContextSource::AnalyticPlane };
        let t = transport_alpha_minus1(&m, &ZeroGravity, &ray, &opts).unwrap();
        for (q, a) in t.quadrature.iter().zip(t.alpha0.iter().step_by(2)) {
            assert!((q - init * *a).norm() < 1e-12);
        }
        let k0 = 1.0;
        let g = PolynomialGravity::new(Poly3::zero(), k0);
        let on = AlphaMinus1Options { selfgrav: true, initial: Complex64::from(0.0), ..opts };
        let t = transport_alpha_minus1(&m, &g, &ray, &on).unwrap();
        let xi = 1.0 / 1.5;
        let slope = k0 * 2.0 / (2.0 * 1.5 * 1.5 * xi);
        for (k, q) in t.quadrature.iter().enumerate() {
            let s = t.s[2 * k];
            assert!((q - I * slope * s).norm() < 1e-12);
            assert!((t.ode[k] - q).norm() < 1e-12);
        }
        let ray2 = FamilyRay { start: PhasePoint { xi: ray.start.xi * 2.0, tau: 2.0, ..ray.start }, ..ray.clone() };
        let t2 = transport_alpha_minus1(&m, &g, &ray2, &on).unwrap();
        assert!((t2.exit_quadrature() * 2.0 - t.exit_quadrature()).norm() < 1e-12);
    }

    fn bumped(amp: f64) -> Medium {
        let rho = RadialProfile::Sum(vec![RadialProfile::constant(1.0), RadialProfile::Bump { a: 0.2, b: 0.6, amplitude: amp }]);
        Medium::new(vec![Region { rho: RegionField::Radial(rho), c: RegionField::Constant(1.0) }], vec![], 1.0).unwrap()
    }

    #[test]
    fn quadrature_and_ode_agree_in_varying_density() {
        let m = bumped(0.3);
        let g = solve_phi_radial(&m, 1.0).unwrap();
        let ray = plane_ray(&m, Vec3::new(-0.9, 0.25, 0.1), Vec3::x());
        let opts = AlphaMinus1Options { s_end: 1.7, intervals: 400, initial: Complex64::from(0.0), selfgrav: true, source: ContextSource::AnalyticPlane };
        let t = transport_alpha_minus1(&m, &g, &ray, &opts).unwrap();
        let scale = t.exit_quadrature().norm();
        assert!(scale > 0.0);
        for (q, o) in t.quadrature.iter().zip(&t.ode) {
            assert!((q - o).norm() < 1e-6 * scale);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn h_minus1_is_transverse(
            a in -0.3f64..0.3, b in -0.3f64..0.3, gz in -1.0f64..1.0, dir in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let d = Vec3::from(dir);
            prop_assume!(d.norm() > 0.2);
            let rho = Poly3::from_terms([([0, 0, 0], 1.5), ([1, 0, 0], a), ([0, 1, 1], b)]);
            let c = Poly3::from_terms([([0, 0, 0], 1.2), ([0, 0, 1], b), ([2, 0, 0], a)]);
            let m = Medium::new(vec![Region { rho: RegionField::polynomial(rho), c: RegionField::polynomial(c) }], vec![], 1.0).unwrap();
            let ray = plane_ray(&m, Vec3::new(0.1, -0.1, 0.05), d);
            let ctx = ray_contexts(&m, &ray, &[0.2], ContextSource::Bundle { dgamma: 1e-3, ds: 1e-3 }).unwrap()[0];
            let mp = m.eval_region(0, &ctx.x);
            let h = h_minus1(&ctx, &mp, &Vec3::new(0.1, 0.2, gz)).unwrap();
            let dot = (0..3).map(|i| h[i] * ctx.n[i]).sum::<Complex64>().norm();
            prop_assert!(dot <= 1e-10 * h.norm().max(1e-300));
        }
    }
}
