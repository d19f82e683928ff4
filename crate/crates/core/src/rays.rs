//! Bicharacteristics of `τ² = c²|ξ|²` in arclength, with interface events,
//! paraxial (dynamic) ray tracing and two-point shooting.

use std::sync::Arc;

use nalgebra::{Matrix3, Matrix6, Vector2, Vector6};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interface::{self, CovectorClass, InterfaceSides, Material};
use crate::math::{any_perpendicular, outer, perp_projector, Mat3, Vec3};
use crate::media::{Medium, Side};
use crate::ode::{dp45_step, next_step, Tolerance};

pub use crate::interface::classify_covector;

/// `|ξ·ν|/|ξ|` below this aborts the branch.
pub const GLANCING_RAY_TOL: f64 = 1e-3;
/// Event location tolerance in arclength.
pub const EVENT_TOL: f64 = 1e-10;

/// `(t, x, τ, ξ)` on the characteristic set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhasePoint {
    pub t: f64,
    pub x: Vec3,
    pub tau: f64,
    pub xi: Vec3,
}

impl PhasePoint {
    /// On-shell point with `ξ = τ/c(x) · dir/|dir|` in `region`.
    pub fn on_shell(medium: &Medium, region: usize, x: Vec3, dir: Vec3, tau: f64) -> Self {
        let c = medium.eval_region(region, &x).c;
        Self { t: 0.0, x, tau, xi: dir.normalize() * (tau / c) }
    }

    /// `|τ² - c²|ξ|²| / τ²`.
    pub fn shell_residual(&self, c: f64) -> f64 {
        (self.tau * self.tau - c * c * self.xi.norm_squared()).abs() / (self.tau * self.tau)
    }

    pub fn direction(&self) -> Vec3 {
        self.xi.normalize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Transmit,
    Reflect,
}

/// Which continuation to follow at each interface event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum BranchPolicy {
    Transmit,
    Reflect,
    /// Per-event choices in order; transmit once exhausted.
    Sequence(Vec<Branch>),
}

impl BranchPolicy {
    fn choose(&self, event_index: usize) -> Branch {
        match self {
            Self::Transmit => Branch::Transmit,
            Self::Reflect => Branch::Reflect,
            Self::Sequence(v) => v.get(event_index).copied().unwrap_or(Branch::Transmit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Reflection,
    Transmission,
    /// Transmitted side glancing or post-critical; only the reflection continues.
    Glancing,
    /// Covector at the Brewster slowness (`σ₀(M_R) = 0`).
    Brewster,
    Exit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayEvent {
    pub kind: EventKind,
    pub interface: Option<usize>,
    pub s: f64,
    pub incident: PhasePoint,
    pub reflected: Option<PhasePoint>,
    pub transmitted: Option<PhasePoint>,
    pub branch: Option<Branch>,
    pub from_region: usize,
    pub to_region: usize,
    pub class: Option<CovectorClass>,
    /// Leading reflection/transmission symbol of the followed branch.
    pub coefficient: Option<f64>,
}

/// Plane `(x - point)·normal = 0`; crossing it in either direction stops the ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopPlane {
    pub point: Vec3,
    pub normal: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StopCondition {
    pub max_s: f64,
    pub max_t: Option<f64>,
    pub planes: Vec<StopPlane>,
    pub max_events: usize,
}

impl Default for StopCondition {
    fn default() -> Self {
        Self { max_s: f64::INFINITY, max_t: None, planes: vec![], max_events: 64 }
    }
}

/// Two initial paraxial perturbations `(δx, δξ)` spanning the wavefront family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Wavefront {
    pub da: Vector6<f64>,
    pub db: Vector6<f64>,
}

impl Wavefront {
    /// Plane wavefront through the start point, kept on-shell.
    pub fn plane(medium: &Medium, region: usize, start: &PhasePoint) -> Self {
        let n = start.direction();
        let e1 = any_perpendicular(&n);
        let e2 = n.cross(&e1);
        let g = medium.eval_region(region, &start.x).grad_log_c();
        let k = start.xi.norm();
        let col = |e: Vec3| {
            let dxi = -n * (k * g.dot(&e));
            Vector6::new(e.x, e.y, e.z, dxi.x, dxi.y, dxi.z)
        };
        Self { da: col(e1), db: col(e2) }
    }

    /// Point source at the start point.
    pub fn point(start: &PhasePoint) -> Self {
        let n = start.direction();
        let e1 = any_perpendicular(&n);
        let e2 = n.cross(&e1);
        let k = start.xi.norm();
        let col = |e: Vec3| Vector6::new(0.0, 0.0, 0.0, k * e.x, k * e.y, k * e.z);
        Self { da: col(e1), db: col(e2) }
    }
}

/// Sign of the divergence term in the `α₀` transport ODE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpreadingSign {
    /// `dα₀/ds = -[d/ds log√(ρc) + ½∇·N] α₀`, consistent with `α₀ ∝ J^{-1/2}`.
    Conservative,
    /// `dα₀/ds = -[d/ds log√(ρc) - ½∇·N] α₀`.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Alpha0Options {
    pub initial: f64,
    pub sign: SpreadingSign,
}

/// Scalar integrand `f(x, N)` accumulated along the ray in arclength.
pub type LineIntegrand = Arc<dyn Fn(&Vec3, &Vec3) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct TraceOptions {
    pub tol: Tolerance,
    /// Largest step as a fraction of the domain diameter.
    pub max_step_fraction: f64,
    pub stop: StopCondition,
    pub branch: BranchPolicy,
    /// Arclengths at which exact states are reported (ascending).
    pub output_s: Vec<f64>,
    pub paraxial: bool,
    pub wavefront: Option<Wavefront>,
    pub alpha0: Option<Alpha0Options>,
    pub line_integrals: Vec<LineIntegrand>,
    pub record_steps: bool,
    /// Arclength of the start point.
    pub s0: f64,
    /// Paraxial propagator at the start point (identity if absent).
    pub initial_jacobian: Option<Matrix6<f64>>,
    /// Region of the start point; required when it lies on an interface.
    pub start_region: Option<usize>,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            tol: Tolerance::default(),
            max_step_fraction: 0.05,
            stop: StopCondition::default(),
            branch: BranchPolicy::Transmit,
            output_s: vec![],
            paraxial: false,
            wavefront: None,
            alpha0: None,
            line_integrals: vec![],
            record_steps: true,
            s0: 0.0,
            initial_jacobian: None,
            start_region: None,
        }
    }
}

impl std::fmt::Debug for TraceOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TraceOptions")
            .field("tol", &self.tol)
            .field("stop", &self.stop)
            .field("branch", &self.branch)
            .field("paraxial", &self.paraxial)
            .field("line_integrals", &self.line_integrals.len())
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaySample {
    pub s: f64,
    pub segment: usize,
    pub region: usize,
    pub point: PhasePoint,
    pub jacobian: Option<Matrix6<f64>>,
    /// `J = det[δx_a, δx_b, N]`.
    pub spreading: Option<f64>,
    pub div_n: Option<f64>,
    pub alpha0: Option<f64>,
    pub integrals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    MaxS,
    MaxT,
    ExitedDomain,
    StopPlane(usize),
    MaxEvents,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayPath {
    pub samples: Vec<RaySample>,
    pub outputs: Vec<RaySample>,
    pub events: Vec<RayEvent>,
    pub end: RaySample,
    pub termination: Termination,
    pub wavefront: Option<Wavefront>,
}

impl RayPath {
    pub fn travel_time(&self) -> f64 {
        self.end.point.t
    }

    pub fn interface_events(&self) -> impl Iterator<Item = &RayEvent> {
        self.events.iter().filter(|e| e.interface.is_some())
    }
}

pub fn travel_time(path: &RayPath) -> f64 {
    path.travel_time()
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    paraxial: bool,
    alpha: bool,
    integrals: usize,
}

impl Layout {
    const M: usize = 7;
    fn alpha(&self) -> usize {
        Self::M + if self.paraxial { 36 } else { 0 }
    }
    fn integrals(&self) -> usize {
        self.alpha() + usize::from(self.alpha)
    }
    fn len(&self) -> usize {
        self.integrals() + self.integrals
    }
}

fn x_of(y: &[f64]) -> Vec3 {
    Vec3::new(y[0], y[1], y[2])
}

fn xi_of(y: &[f64]) -> Vec3 {
    Vec3::new(y[3], y[4], y[5])
}

fn m_of(y: &[f64]) -> Matrix6<f64> {
    Matrix6::from_column_slice(&y[Layout::M..Layout::M + 36])
}

/// Linearisation of the ray equations at `(x, ξ)`.
fn ray_linearisation(grad_log_c: &Vec3, hess_log_c: &Mat3, xi: &Vec3) -> Matrix6<f64> {
    let k = xi.norm();
    let n = xi / k;
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&(perp_projector(&n) / k));
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-hess_log_c * k));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-outer(grad_log_c, &n)));
    a
}

fn det3(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    a.cross(b).dot(c)
}

/// `(J, dJ/ds)` of a wavefront family from the propagator.
pub fn spreading_and_rate(m: &Matrix6<f64>, wf: &Wavefront, xi: &Vec3, grad_log_c: &Vec3) -> (f64, f64) {
    let k = xi.norm();
    let n = xi / k;
    let p = perp_projector(&n);
    let (da, db) = (m * wf.da, m * wf.db);
    let xa = Vec3::new(da[0], da[1], da[2]);
    let xb = Vec3::new(db[0], db[1], db[2]);
    let va = p * Vec3::new(da[3], da[4], da[5]) / k;
    let vb = p * Vec3::new(db[3], db[4], db[5]) / k;
    let ndot = -(p * grad_log_c);
    let j = det3(&xa, &xb, &n);
    let dj = det3(&va, &xb, &n) + det3(&xa, &vb, &n) + det3(&xa, &xb, &ndot);
    (j, dj)
}

struct Tracer<'a> {
    medium: &'a Medium,
    opts: &'a TraceOptions,
    layout: Layout,
    tau: f64,
}

impl Tracer<'_> {
    fn rhs(&self, region: usize, y: &[f64], dy: &mut [f64]) {
        let x = x_of(y);
        let xi = xi_of(y);
        let mp = self.medium.eval_region(region, &x);
        let k = xi.norm();
        let n = xi / k;
        let g = mp.grad_log_c();
        dy[0..3].copy_from_slice(n.as_slice());
        dy[3..6].copy_from_slice((-g * k).as_slice());
        dy[6] = 1.0 / mp.c;
        let l = self.layout;
        if l.paraxial {
            let a = ray_linearisation(&g, &mp.hess_log_c(), &xi);
            let dm = a * m_of(y);
            dy[Layout::M..Layout::M + 36].copy_from_slice(dm.as_slice());
        }
        if let (true, Some(opt)) = (l.alpha, self.opts.alpha0) {
            let wf = self.opts.wavefront.as_ref().expect("alpha0 needs a wavefront");
            let (j, dj) = spreading_and_rate(&m_of(y), wf, &xi, &g);
            let div_n = dj / j;
            let dlog = 0.5 * n.dot(&(mp.grad_rho / mp.rho + g));
            let sgn = match opt.sign {
                SpreadingSign::Conservative => 1.0,
                SpreadingSign::AsPrinted => -1.0,
            };
            let a0 = y[l.alpha()];
            dy[l.alpha()] = -(dlog + sgn * 0.5 * div_n) * a0;
        }
        for (i, f) in self.opts.line_integrals.iter().enumerate() {
            dy[l.integrals() + i] = f(&x, &n);
        }
    }

    fn sample(&self, s: f64, segment: usize, region: usize, y: &[f64]) -> RaySample {
        let x = x_of(y);
        let xi = xi_of(y);
        let jacobian = self.layout.paraxial.then(|| m_of(y));
        let (spreading, div_n) = match (jacobian.as_ref(), self.opts.wavefront.as_ref()) {
            (Some(m), Some(wf)) => {
                let g = self.medium.eval_region(region, &x).grad_log_c();
                let (j, dj) = spreading_and_rate(m, wf, &xi, &g);
                (Some(j), Some(dj / j))
            }
            _ => (None, None),
        };
        let l = self.layout;
        RaySample {
            s,
            segment,
            region,
            point: PhasePoint { t: y[6], x, tau: self.tau, xi },
            jacobian,
            spreading,
            div_n,
            alpha0: l.alpha.then(|| y[l.alpha()]),
            integrals: y[l.integrals()..l.len()].to_vec(),
        }
    }
}

/// Snell continuation of `ξ` at `x` on `interface` from `c_in` into `c_out`.
fn snell_map(
    medium: &Medium,
    interface: usize,
    region_in: usize,
    region_out: usize,
    x: &Vec3,
    xi: &Vec3,
    branch: Branch,
) -> Option<Vec3> {
    let nu = medium.interfaces()[interface].surface.normal(x);
    let xn = xi.dot(&nu);
    let eta = xi - nu * xn;
    match branch {
        Branch::Reflect => Some(eta - nu * xn),
        Branch::Transmit => {
            let c_in = medium.eval_region(region_in, x).c;
            let c_out = medium.eval_region(region_out, x).c;
            let tau = c_in * xi.norm();
            let rad = tau * tau / (c_out * c_out) - eta.norm_squared();
            if rad < 0.0 {
                return None;
            }
            Some(eta + nu * (xn.signum() * rad.sqrt()))
        }
    }
}

/// Reflected and (when it exists) transmitted covectors at an interface point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnellResult {
    pub reflected: PhasePoint,
    pub transmitted: Option<PhasePoint>,
    pub class: CovectorClass,
    pub sides: InterfaceSides,
    /// `|ξ·ν|/|ξ|` of the incident covector.
    pub cosine: f64,
}

/// Reflect/refract `state` at interface `interface`, coming from `region_in`.
pub fn snell_refract(medium: &Medium, interface: usize, region_in: usize, state: &PhasePoint) -> Result<SnellResult> {
    let region_out = other_region(interface, region_in)?;
    let x = state.x;
    let nu = medium.interfaces()[interface].surface.normal(&x);
    let k = state.xi.norm();
    if k == 0.0 {
        return Err(Error::ZeroCovector);
    }
    let cosine = state.xi.dot(&nu).abs() / k;
    if cosine < GLANCING_RAY_TOL {
        return Err(Error::GlancingRay { interface, cosine });
    }
    let pin = medium.eval_region(region_in, &x);
    let pout = medium.eval_region(region_out, &x);
    let sides = InterfaceSides { minus: Material::new(pin.rho, pin.c), plus: Material::new(pout.rho, pout.c) };
    let tau = pin.c * k;
    let eta = state.xi - nu * state.xi.dot(&nu);
    let class = interface::classify_covector(&sides, tau, &Vector2::new(eta.norm(), 0.0))?;
    let reflected = PhasePoint {
        xi: snell_map(medium, interface, region_in, region_out, &x, &state.xi, Branch::Reflect).expect("reflection"),
        ..*state
    };
    let transmitted = match class {
        CovectorClass::PostCritical(Side::Plus) | CovectorClass::Glancing(Side::Plus) => None,
        _ => snell_map(medium, interface, region_in, region_out, &x, &state.xi, Branch::Transmit)
            .map(|xi| PhasePoint { xi, ..*state }),
    };
    Ok(SnellResult { reflected, transmitted, class, sides, cosine })
}

fn other_region(interface: usize, region: usize) -> Result<usize> {
    if region == interface {
        Ok(interface + 1)
    } else if region == interface + 1 {
        Ok(interface)
    } else {
        Err(Error::Invalid(format!("region {region} does not touch interface {interface}")))
    }
}

/// Paraxial map across an event: `δ⁺ = E δ⁻`.
#[allow(clippy::too_many_arguments)]
fn event_map(
    medium: &Medium,
    interface: usize,
    region_in: usize,
    region_out_field: usize,
    x: &Vec3,
    xi_in: &Vec3,
    xi_out: &Vec3,
    branch: Branch,
) -> Matrix6<f64> {
    let other = other_region(interface, region_in).expect("adjacent");
    let g = medium.interfaces()[interface].surface.grad_psi(x);
    let xdot_in = xi_in.normalize();
    let xdot_out = xi_out.normalize();
    let xidot_in = -medium.eval_region(region_in, x).grad_log_c() * xi_in.norm();
    let xidot_out = -medium.eval_region(region_out_field, x).grad_log_c() * xi_out.norm();
    let w = -g / g.dot(&xdot_in);
    let map = |xx: &Vec3, k: &Vec3| snell_map(medium, interface, region_in, other, xx, k, branch).expect("continuation");
    let hx = 1e-6 * medium.diameter();
    let hk = 1e-6 * xi_in.norm();
    let mut dx = Matrix3::<f64>::zeros();
    let mut dk = Matrix3::<f64>::zeros();
    for a in 0..3 {
        let mut e = Vec3::zeros();
        e[a] = 1.0;
        let col_x = (map(&(x + e * hx), xi_in) - map(&(x - e * hx), xi_in)) / (2.0 * hx);
        let col_k = (map(x, &(xi_in + e * hk)) - map(x, &(xi_in - e * hk))) / (2.0 * hk);
        dx.set_column(a, &col_x);
        dk.set_column(a, &col_k);
    }
    let id = Mat3::identity();
    let mut e = Matrix6::zeros();
    e.fixed_view_mut::<3, 3>(0, 0).copy_from(&(id + outer(&(xdot_in - xdot_out), &w)));
    let lower_left = dx * (id + outer(&xdot_in, &w)) + dk * outer(&xidot_in, &w) - outer(&xidot_out, &w);
    e.fixed_view_mut::<3, 3>(3, 0).copy_from(&lower_left);
    e.fixed_view_mut::<3, 3>(3, 3).copy_from(&dk);
    e
}

/// Trace one ray from `start` until a stop condition.
pub fn trace(medium: &Medium, start: &PhasePoint, opts: &TraceOptions) -> Result<RayPath> {
    if start.xi.norm() == 0.0 {
        return Err(Error::ZeroCovector);
    }
    if start.tau == 0.0 {
        return Err(Error::ZeroFrequency);
    }
    if !medium.in_domain(&start.x) {
        return Err(Error::OutOfDomain);
    }
    if opts.alpha0.is_some() && (!opts.paraxial || opts.wavefront.is_none()) {
        return Err(Error::Invalid("alpha0 transport needs paraxial tracing and a wavefront".into()));
    }
    let mut region = match (opts.start_region, medium.interface_at(&start.x)) {
        (Some(r), _) => r,
        (None, Some(k)) => return Err(Error::OnInterfaceWithoutSide { interface: k }),
        (None, None) => medium.region_index(&start.x),
    };
    let layout = Layout { paraxial: opts.paraxial, alpha: opts.alpha0.is_some(), integrals: opts.line_integrals.len() };
    let tracer = Tracer { medium, opts, layout, tau: start.tau };
    let diam = medium.diameter();
    let h_max = opts.max_step_fraction * diam;
    let surf_tol = 1e-9 * diam;

    let mut y = vec![0.0; layout.len()];
    y[0..3].copy_from_slice(start.x.as_slice());
    y[3..6].copy_from_slice(start.xi.as_slice());
    y[6] = start.t;
    if layout.paraxial {
        let m0 = opts.initial_jacobian.unwrap_or_else(Matrix6::identity);
        y[Layout::M..Layout::M + 36].copy_from_slice(m0.as_slice());
    }
    if let Some(a) = opts.alpha0 {
        y[layout.alpha()] = a.initial;
    }

    let mut s = opts.s0;
    let mut segment = 0;
    let mut samples = Vec::new();
    let mut outputs = Vec::new();
    let mut events = Vec::new();
    let s_first = s;
    let mut targets = opts.output_s.iter().copied().filter(move |&t| t >= s_first).peekable();
    if opts.record_steps {
        samples.push(tracer.sample(s, segment, region, &y));
    }
    while targets.peek() == Some(&s) {
        outputs.push(tracer.sample(s, segment, region, &y));
        targets.next();
    }
    // Surfaces the current point sits on; their crossing is ignored for one step.
    let mut skip_iface: Option<usize> = medium.interface_at(&start.x);
    let mut skip_exit = (start.x.norm() - medium.domain_radius()).abs() < surf_tol;
    let mut h = 1e-3 * diam;
    let mut steps = 0usize;
    let termination;

    loop {
        steps += 1;
        if steps > 2_000_000 {
            return Err(Error::StepFailure("step budget exhausted".into()));
        }
        let mut limit = h.min(h_max).min(opts.stop.max_s - s);
        let next_target = targets.peek().copied();
        if let Some(tg) = next_target {
            limit = limit.min(tg - s);
        }
        if limit <= 0.0 {
            termination = Termination::MaxS;
            break;
        }
        let f = |_: f64, yy: &[f64], dy: &mut [f64]| tracer.rhs(region, yy, dy);
        let (y1, err) = dp45_step(&f, s, &y, limit, opts.tol);
        if !(err <= 1.0) {
            h = next_step(limit, if err.is_finite() { err } else { 1e6 });
            if h < 1e-14 * diam {
                return Err(Error::StepFailure(format!("step size underflow at s = {s}")));
            }
            continue;
        }

        // Earliest event inside (0, limit].
        let x0 = x_of(&y);
        let x1 = x_of(&y1);
        let mut crossings: Vec<(Crossing, Box<dyn Fn(&Vec3) -> f64 + '_>)> = Vec::new();
        for (k, iface) in medium.interfaces().iter().enumerate() {
            if skip_iface == Some(k) {
                continue;
            }
            let psi = move |x: &Vec3| iface.surface.psi(x);
            if psi(&x0).signum() != psi(&x1).signum() {
                crossings.push((Crossing::Interface(k), Box::new(psi)));
            }
        }
        let rd = medium.domain_radius();
        if !skip_exit && x1.norm() > rd && x0.norm() <= rd {
            crossings.push((Crossing::Exit, Box::new(move |x: &Vec3| x.norm() - rd)));
        }
        for (i, p) in opts.stop.planes.iter().enumerate() {
            let g = move |x: &Vec3| (x - p.point).dot(&p.normal);
            if g(&x0).signum() != g(&x1).signum() && g(&x0) != 0.0 {
                crossings.push((Crossing::Plane(i), Box::new(g)));
            }
        }
        let mut first: Option<(f64, Crossing)> = None;
        for (kind, g) in &crossings {
            let theta = locate(&f, s, &y, limit, opts.tol, g.as_ref())?;
            // A stop plane through a boundary point wins over the exit it coincides with.
            let key = |t: f64, k: Crossing| if matches!(k, Crossing::Plane(_)) { t - surf_tol } else { t };
            if first.is_none_or(|(t, k)| key(theta, *kind) < key(t, k)) {
                first = Some((theta, *kind));
            }
        }
        skip_iface = None;
        skip_exit = false;

        let Some((theta, kind)) = first else {
            s += limit;
            y = y1;
            h = next_step(limit, err);
            if opts.record_steps {
                samples.push(tracer.sample(s, segment, region, &y));
            }
            if next_target == Some(s) {
                outputs.push(tracer.sample(s, segment, region, &y));
                targets.next();
            }
            if opts.stop.max_t.is_some_and(|mt| y[6] >= mt) {
                termination = Termination::MaxT;
                break;
            }
            if s >= opts.stop.max_s {
                termination = Termination::MaxS;
                break;
            }
            continue;
        };

        let ye = dp45_step(&f, s, &y, theta, opts.tol).0;
        s += theta;
        y = ye;
        let here = tracer.sample(s, segment, region, &y);
        if opts.record_steps {
            samples.push(here.clone());
        }
        match kind {
            Crossing::Exit => {
                events.push(RayEvent {
                    kind: EventKind::Exit,
                    interface: None,
                    s,
                    incident: here.point,
                    reflected: None,
                    transmitted: None,
                    branch: None,
                    from_region: region,
                    to_region: region,
                    class: None,
                    coefficient: None,
                });
                termination = Termination::ExitedDomain;
                break;
            }
            Crossing::Plane(i) => {
                termination = Termination::StopPlane(i);
                break;
            }
            Crossing::Interface(k) => {
                if events.iter().filter(|e: &&RayEvent| e.interface.is_some()).count() >= opts.stop.max_events {
                    termination = Termination::MaxEvents;
                    break;
                }
                let incident = here.point;
                let snell = snell_refract(medium, k, region, &incident)?;
                let wanted = opts.branch.choose(events.iter().filter(|e: &&RayEvent| e.interface.is_some()).count());
                let (branch, out) = match (wanted, snell.transmitted) {
                    (Branch::Transmit, Some(t)) => (Branch::Transmit, t),
                    _ => (Branch::Reflect, snell.reflected),
                };
                let to_region = match branch {
                    Branch::Transmit => other_region(k, region)?,
                    Branch::Reflect => region,
                };
                let nu = medium.interfaces()[k].surface.normal(&incident.x);
                let eta = (incident.xi - nu * incident.xi.dot(&nu)).norm();
                let sym = interface::symbols(&snell.sides, incident.tau, &Vector2::new(eta, 0.0));
                let coefficient = sym.ok().map(|s| match branch {
                    Branch::Transmit => s.transmission,
                    Branch::Reflect => s.reflection,
                });
                let kind = match (snell.class, branch, wanted) {
                    (CovectorClass::Brewster, _, _) => EventKind::Brewster,
                    (_, Branch::Reflect, Branch::Transmit) => EventKind::Glancing,
                    (_, Branch::Reflect, _) => EventKind::Reflection,
                    (_, Branch::Transmit, _) => EventKind::Transmission,
                };
                if layout.paraxial {
                    let e = event_map(medium, k, region, to_region, &incident.x, &incident.xi, &out.xi, branch);
                    let m = e * m_of(&y);
                    y[Layout::M..Layout::M + 36].copy_from_slice(m.as_slice());
                }
                if layout.alpha {
                    y[layout.alpha()] *= coefficient.unwrap_or(f64::NAN);
                }
                y[3..6].copy_from_slice(out.xi.as_slice());
                events.push(RayEvent {
                    kind,
                    interface: Some(k),
                    s,
                    incident,
                    reflected: Some(snell.reflected),
                    transmitted: snell.transmitted,
                    branch: Some(branch),
                    from_region: region,
                    to_region,
                    class: Some(snell.class),
                    coefficient,
                });
                region = to_region;
                segment += 1;
                skip_iface = Some(k);
                h = 1e-3 * diam;
                if opts.record_steps {
                    samples.push(tracer.sample(s, segment, region, &y));
                }
                if next_target == Some(s) {
                    outputs.push(tracer.sample(s, segment, region, &y));
                    targets.next();
                }
            }
        }
    }
    let end = tracer.sample(s, segment, region, &y);
    Ok(RayPath { samples, outputs, events, end, termination, wavefront: opts.wavefront })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Crossing {
    Interface(usize),
    Exit,
    Plane(usize),
}

/// Root of `g(x(s + θ))` in `(0, h]` by Brent on single-step re-integration.
fn locate<F>(f: &F, s: f64, y: &[f64], h: f64, tol: Tolerance, g: &dyn Fn(&Vec3) -> f64) -> Result<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let at = |theta: f64| {
        if theta == 0.0 {
            return g(&x_of(y));
        }
        g(&x_of(&dp45_step(f, s, y, theta, tol).0))
    };
    let mut conv = roots::SimpleConvergency { eps: 1e-13, max_iter: 200 };
    let theta = roots::find_root_brent(0.0, h, at, &mut conv)
        .map_err(|e| Error::StepFailure(format!("event location failed: {e:?}")))?;
    Ok(theta)
}

/// Trace a batch of rays in parallel; results keep the input order.
pub fn trace_many(medium: &Medium, starts: &[PhasePoint], opts: &TraceOptions) -> Vec<Result<RayPath>> {
    starts.par_iter().map(|p| trace(medium, p, opts)).collect()
}

/// Travel-time distance in the metric `c⁻²dx²` along the transmitted ray from `x` to `y`.
pub fn geodesic_distance(medium: &Medium, x: &Vec3, y: &Vec3, tol: Tolerance) -> Result<f64> {
    Ok(connecting_ray(medium, x, y, tol)?.travel_time())
}

/// Transmitted ray from `x` hitting `y`, found by Gauss–Newton shooting.
pub fn connecting_ray(medium: &Medium, x: &Vec3, y: &Vec3, tol: Tolerance) -> Result<RayPath> {
    let d = y - x;
    let dist = d.norm();
    if dist == 0.0 {
        return Err(Error::Invalid("coincident endpoints".into()));
    }
    let d = d / dist;
    let e1 = any_perpendicular(&d);
    let e2 = d.cross(&e1);
    let region = medium.interface_at(x).map_or_else(|| medium.region_index(x), |_| usize::MAX);
    if region == usize::MAX {
        return Err(Error::Invalid("shooting from an interface point".into()));
    }
    let opts = TraceOptions {
        tol,
        stop: StopCondition { planes: vec![StopPlane { point: *y, normal: d }], ..Default::default() },
        record_steps: false,
        ..Default::default()
    };
    let shoot = |a: f64, b: f64| -> Result<(Vector2<f64>, RayPath)> {
        let start = PhasePoint::on_shell(medium, region, *x, d + e1 * a + e2 * b, 1.0);
        let path = trace(medium, &start, &opts)?;
        if path.termination != Termination::StopPlane(0) {
            return Err(Error::NoConnectingRay { miss: f64::INFINITY });
        }
        let off = path.end.point.x - y;
        Ok((Vector2::new(off.dot(&e1), off.dot(&e2)), path))
    };
    // Coarse scan of aim offsets for a start that reaches the target plane.
    let (mut a, mut b) = (0.0, 0.0);
    let mut best = f64::INFINITY;
    for i in -6..=6 {
        for j in -6..=6 {
            let (ta, tb) = (i as f64 * 0.25, j as f64 * 0.25);
            if let Ok((miss, _)) = shoot(ta, tb) {
                if miss.norm() < best {
                    best = miss.norm();
                    (a, b) = (ta, tb);
                }
            }
        }
    }
    if !best.is_finite() {
        return Err(Error::NoConnectingRay { miss: best });
    }
    for _ in 0..60 {
        let (miss, path) = shoot(a, b)?;
        if miss.norm() < 1e-10 * dist.max(1.0) {
            return Ok(path);
        }
        let hstep = 1e-6;
        let mut jac = nalgebra::Matrix2::<f64>::zeros();
        for (col, (da, db)) in [(hstep, 0.0), (0.0, hstep)].into_iter().enumerate() {
            let p = shoot(a + da, b + db)?.0;
            let m = shoot(a - da, b - db)?.0;
            jac.set_column(col, &((p - m) / (2.0 * hstep)));
        }
        let step = jac.lu().solve(&(-miss)).ok_or(Error::NoConnectingRay { miss: miss.norm() })?;
        // Backtrack until the shot lands and the miss shrinks.
        let mut lambda = 1.0;
        loop {
            let (na, nb) = (a + lambda * step[0], b + lambda * step[1]);
            match shoot(na, nb) {
                Ok((m2, _)) if m2.norm() < miss.norm() => {
                    (a, b) = (na, nb);
                    best = m2.norm();
                    break;
                }
                _ if lambda > 1e-4 => lambda *= 0.5,
                _ => return Err(Error::NoConnectingRay { miss: miss.norm() }),
            }
        }
    }
    Err(Error::NoConnectingRay { miss: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{RadialProfile, Region, RegionField, Surface, Interface};
    use proptest::prelude::*;

    fn plane_medium(c_minus: f64, c_plus: f64) -> Medium {
        // `-` side is z > 0 (normal +z), `+` side z < 0.
        Medium::new(
            vec![Region::constant(1.0, c_minus), Region::constant(1.5, c_plus)],
            vec![Interface { surface: Surface::Plane { point: Vec3::zeros(), normal: Vec3::z() } }],
            10.0,
        )
        .unwrap()
    }

    fn linear_ball() -> Medium {
        Medium::new(
            vec![Region { rho: RegionField::Constant(1.0), c: RegionField::Radial(RadialProfile::Polynomial(vec![2.0, -1.0])) }],
            vec![],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn straight_line_in_constant_medium() {
        let m = Medium::homogeneous(1.0, 1.0, 5.0);
        let start = PhasePoint::on_shell(&m, 0, Vec3::zeros(), Vec3::new(1.0, 2.0, -0.5), 3.0);
        let path = trace(&m, &start, &TraceOptions::default()).unwrap();
        assert_eq!(path.termination, Termination::ExitedDomain);
        assert!((path.end.point.x.norm() - 5.0).abs() < 1e-10);
        let dir = start.direction();
        assert!((path.end.point.x - dir * 5.0).norm() < 1e-9);
        assert!((path.travel_time() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn snell_angle_example() {
        let m = plane_medium(1.0, 2.0);
        let th = 20f64.to_radians();
        let dir = Vec3::new(th.sin(), 0.0, -th.cos());
        let start = PhasePoint::on_shell(&m, 0, Vec3::new(-1.0, 0.0, 1.0), dir, 1.0);
        let opts = TraceOptions { stop: StopCondition { max_s: 4.0, ..Default::default() }, ..Default::default() };
        let path = trace(&m, &start, &opts).unwrap();
        let ev = &path.events[0];
        assert_eq!(ev.kind, EventKind::Transmission);
        let t = ev.transmitted.unwrap().xi;
        let angle = (t.x.abs() / t.norm()).asin().to_degrees();
        assert!((angle - (2.0 * th.sin()).asin().to_degrees()).abs() < 1e-9);
        assert!((angle - 43.160).abs() < 1e-3);
        assert!((t.x - ev.incident.xi.x).abs() < 1e-12 && (t.y - ev.incident.xi.y).abs() < 1e-12);
    }

    #[test]
    fn critical_incidence_raises_glancing_flag() {
        let m = plane_medium(1.0, 2.0);
        let th = 30f64.to_radians();
        let dir = Vec3::new(th.sin(), 0.0, -th.cos());
        let start = PhasePoint::on_shell(&m, 0, Vec3::new(-1.0, 0.0, 1.0), dir, 1.0);
        let opts = TraceOptions { stop: StopCondition { max_s: 4.0, ..Default::default() }, ..Default::default() };
        let path = trace(&m, &start, &opts).unwrap();
        let ev = &path.events[0];
        assert_eq!(ev.kind, EventKind::Glancing);
        assert!(matches!(ev.class, Some(CovectorClass::Glancing(Side::Plus)) | Some(CovectorClass::PostCritical(Side::Plus))));
        assert_eq!(ev.branch, Some(Branch::Reflect));
    }

    #[test]
    fn snell_normal_and_matched() {
        let m = plane_medium(1.0, 2.0);
        let p = PhasePoint { t: 0.0, x: Vec3::zeros(), tau: 1.0, xi: Vec3::new(0.0, 0.0, -1.0) };
        let r = snell_refract(&m, 0, 0, &p).unwrap();
        assert_eq!(r.reflected.xi, Vec3::new(0.0, 0.0, 1.0));
        assert!((r.transmitted.unwrap().xi - Vec3::new(0.0, 0.0, -0.5)).norm() < 1e-15);
        let same = plane_medium(1.3, 1.3);
        let q = PhasePoint { t: 0.0, x: Vec3::zeros(), tau: 1.3 * 1.0, xi: Vec3::new(0.6, 0.0, -0.8) };
        assert!((snell_refract(&same, 0, 0, &q).unwrap().transmitted.unwrap().xi - q.xi).norm() < 1e-15);
        let graze = PhasePoint { xi: Vec3::new(1.0, 0.0, -1e-4), ..q };
        assert!(matches!(snell_refract(&same, 0, 0, &graze), Err(Error::GlancingRay { .. })));
    }

    #[test]
    fn diametral_chord_travel_time() {
        let m = linear_ball();
        let x = Vec3::new(-1.0, 0.0, 0.0);
        let start = PhasePoint::on_shell(&m, 0, x, Vec3::x(), 1.0);
        let path = trace(&m, &start, &TraceOptions::default()).unwrap();
        assert!((path.end.point.x - Vec3::x()).norm() < 1e-9);
        assert!((path.travel_time() - 2.0 * 2f64.ln()).abs() < 1e-9);
        let d = geodesic_distance(&m, &x, &Vec3::x(), Tolerance::default()).unwrap();
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn constant_medium_distance() {
        let m = Medium::homogeneous(1.0, 2.5, 4.0);
        let (x, y) = (Vec3::new(0.1, -0.3, 0.2), Vec3::new(1.0, 1.2, -0.7));
        let d = geodesic_distance(&m, &x, &y, Tolerance::default()).unwrap();
        assert!((d - (y - x).norm() / 2.5).abs() < 1e-10);
    }

    #[test]
    fn tolerance_self_consistency() {
        let m = linear_ball();
        let (x, y) = (Vec3::new(-0.6, -0.5, 0.1), Vec3::new(0.7, 0.2, -0.3));
        let a = geodesic_distance(&m, &x, &y, Tolerance { rtol: 1e-8, atol: 1e-10 }).unwrap();
        let b = geodesic_distance(&m, &x, &y, Tolerance { rtol: 1e-10, atol: 1e-12 }).unwrap();
        assert!((a - b).abs() < 1e-7);
        assert!(a < (y - x).norm() / m.eval(&((x + y) / 2.0), None).unwrap().c * 1.2);
    }

    fn sphere_medium() -> Medium {
        Medium::radial_layers(
            vec![
                Region { rho: RegionField::Constant(1.0), c: RegionField::Radial(RadialProfile::Polynomial(vec![1.6, 0.0, -0.4])) },
                Region { rho: RegionField::Constant(2.0), c: RegionField::Radial(RadialProfile::Polynomial(vec![1.0, 0.0, -0.2])) },
            ],
            &[0.6],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn time_reversal_through_interfaces() {
        let m = sphere_medium();
        let start = PhasePoint::on_shell(&m, 0, Vec3::new(-0.95, 0.1, 0.05), Vec3::new(1.0, 0.15, 0.05), 1.0);
        let path = trace(&m, &start, &TraceOptions::default()).unwrap();
        assert_eq!(path.interface_events().count(), 2);
        let end = path.end.point;
        let back = PhasePoint { t: 0.0, xi: -end.xi, ..end };
        let opts = TraceOptions { start_region: Some(path.end.region), ..Default::default() };
        let rev = trace(&m, &back, &TraceOptions { stop: StopCondition { max_s: path.end.s, ..Default::default() }, ..opts }).unwrap();
        assert!((rev.end.point.x - start.x).norm() < 1e-8, "{}", (rev.end.point.x - start.x).norm());
    }

    #[test]
    fn hamiltonian_and_tangential_conservation() {
        let m = sphere_medium();
        let start = PhasePoint::on_shell(&m, 0, Vec3::new(-0.95, 0.2, 0.0), Vec3::new(1.0, -0.1, 0.2), 2.0);
        let path = trace(&m, &start, &TraceOptions::default()).unwrap();
        for s in &path.samples {
            let c = m.eval_region(s.region, &s.point.x).c;
            assert!(s.point.shell_residual(c) < 1e-8);
        }
        for e in path.interface_events() {
            let nu = m.interfaces()[e.interface.unwrap()].surface.normal(&e.incident.x);
            let tan = |v: &Vec3| v - nu * v.dot(&nu);
            let out = e.transmitted.unwrap();
            assert!((tan(&out.xi) - tan(&e.incident.xi)).norm() < 1e-12);
        }
        // dt/ds = 1/c by differencing consecutive samples.
        for w in path.samples.windows(2) {
            if w[0].segment != w[1].segment || w[1].s - w[0].s < 1e-6 {
                continue;
            }
            let mid = (w[0].point.x + w[1].point.x) / 2.0;
            let c = m.eval_region(w[0].region, &mid).c;
            let rate = (w[1].point.t - w[0].point.t) / (w[1].s - w[0].s);
            assert!((rate * c - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn reflection_branch_policy() {
        let m = sphere_medium();
        let start = PhasePoint::on_shell(&m, 0, Vec3::new(-0.95, 0.1, 0.0), Vec3::x(), 1.0);
        let opts = TraceOptions { branch: BranchPolicy::Reflect, ..Default::default() };
        let path = trace(&m, &start, &opts).unwrap();
        assert_eq!(path.events[0].kind, EventKind::Reflection);
        assert_eq!(path.end.region, 0);
        assert!((path.events[0].coefficient.unwrap()).abs() > 0.0);
    }

    #[test]
    fn paraxial_spreading_matches_bundle() {
        let m = sphere_medium();
        let start = PhasePoint::on_shell(&m, 0, Vec3::new(-0.95, 0.12, 0.03), Vec3::new(1.0, 0.05, 0.0), 1.0);
        let wf = Wavefront::plane(&m, 0, &start);
        let s_out = 1.5;
        let opts = TraceOptions { paraxial: true, wavefront: Some(wf), output_s: vec![s_out], ..Default::default() };
        let path = trace(&m, &start, &opts).unwrap();
        let j = path.outputs[0].spreading.unwrap();
        let eps = 1e-5;
        let pos = |v: &Vector6<f64>| {
            let dx = Vec3::new(v[0], v[1], v[2]) * eps;
            let dxi = Vec3::new(v[3], v[4], v[5]) * eps;
            let p = PhasePoint { x: start.x + dx, xi: start.xi + dxi, ..start };
            let o = TraceOptions { output_s: vec![s_out], ..Default::default() };
            trace(&m, &p, &o).unwrap().outputs[0].point.x
        };
        let neg = |v: &Vector6<f64>| pos(&-v);
        let xa = (pos(&wf.da) - neg(&wf.da)) / (2.0 * eps);
        let xb = (pos(&wf.db) - neg(&wf.db)) / (2.0 * eps);
        let n = path.outputs[0].point.direction();
        let j_fd = det3(&xa, &xb, &n);
        assert!(((j - j_fd) / j_fd).abs() < 1e-2, "{j} vs {j_fd}");
        assert!(j > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn on_shell_along_smooth_rays(dir in prop::array::uniform3(-1.0f64..1.0), tau in 0.5f64..4.0) {
            let d = Vec3::from(dir);
            prop_assume!(d.norm() > 0.1);
            let m = linear_ball();
            let start = PhasePoint::on_shell(&m, 0, Vec3::new(0.1, -0.2, 0.05), d, tau);
            let path = trace(&m, &start, &TraceOptions::default()).unwrap();
            for s in &path.samples {
                let c = m.eval_region(0, &s.point.x).c;
                prop_assert!(s.point.shell_residual(c) < 1e-8);
            }
        }
    }
}
