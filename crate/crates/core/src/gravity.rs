//! Reference gravitational potential `ΔΦ = k₀ρ`, hydrostatic pressure and the
//! self-gravitation symbol.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{gauss_legendre, integrate, outer, Mat3, Poly3, Vec3};
use crate::media::{FieldJet, Medium, PolyField, Surface};

/// Evaluator for a potential and its first two derivatives.
///
/// `region` selects the one-sided limit of `∇²Φ` on an interface; `None` uses
/// the region containing `x`.
pub trait Gravity: Send + Sync {
    fn jet(&self, x: &Vec3, region: Option<usize>) -> FieldJet;
    fn k0(&self) -> f64;

    fn phi(&self, x: &Vec3) -> f64 {
        self.jet(x, None).value
    }
    fn grad(&self, x: &Vec3) -> Vec3 {
        self.jet(x, None).grad
    }
    fn hess(&self, x: &Vec3) -> Mat3 {
        self.jet(x, None).hess
    }
}

/// No gravity.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroGravity;

impl Gravity for ZeroGravity {
    fn jet(&self, _: &Vec3, _: Option<usize>) -> FieldJet {
        FieldJet::constant(0.0)
    }
    fn k0(&self) -> f64 {
        0.0
    }
}

/// Prescribed polynomial potential (not tied to a density).
#[derive(Debug, Clone)]
pub struct PolynomialGravity {
    field: PolyField,
    k0: f64,
}

impl PolynomialGravity {
    pub fn new(p: Poly3, k0: f64) -> Self {
        Self { field: PolyField::new(p), k0 }
    }
}

impl Gravity for PolynomialGravity {
    fn jet(&self, x: &Vec3, _: Option<usize>) -> FieldJet {
        self.field.jet(x)
    }
    fn k0(&self) -> f64 {
        self.k0
    }
}

const NODES_PER_REGION: usize = 256;
const LOCAL_GL: usize = 12;
const QUAD_TOL: f64 = 1e-13;

/// Cumulative integral table `F(r_i) = ∫_{r_0}^{r_i} g` with exact local completion.
#[derive(Debug, Clone)]
struct Cumulative {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl Cumulative {
    fn at(&self, r: f64, g: &dyn Fn(f64) -> f64) -> f64 {
        let n = self.nodes.len();
        let i = self.nodes.partition_point(|&v| v <= r).clamp(1, n) - 1;
        let r0 = self.nodes[i];
        let local: f64 = gauss_legendre(LOCAL_GL, r0, r).iter().map(|&(s, w)| w * g(s)).sum();
        self.values[i] + local
    }

    fn total(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }
}

/// Radial density extracted from a radial medium.
#[derive(Debug, Clone)]
struct RadialDensity {
    medium: Medium,
    /// `[0, r_inner..., R]` ascending.
    breaks: Vec<f64>,
}

impl RadialDensity {
    fn new(medium: &Medium) -> Result<Self> {
        let mut breaks = medium.radial_breaks()?;
        breaks.reverse();
        Ok(Self { medium: medium.clone(), breaks })
    }

    fn outer(&self) -> f64 {
        *self.breaks.last().expect("nonempty")
    }

    /// Region index for an ascending-break interval containing `r`.
    fn region(&self, r: f64) -> usize {
        let nreg = self.breaks.len() - 1;
        let j = self.breaks.partition_point(|&b| b <= r).clamp(1, nreg) - 1;
        nreg - 1 - j
    }

    fn rho(&self, r: f64) -> f64 {
        if r > self.outer() {
            return 0.0;
        }
        self.medium.radial_values(self.region(r), r).0
    }

    fn rho_in(&self, region: usize, r: f64) -> f64 {
        self.medium.radial_values(region, r).0
    }

    /// Integration nodes, refined per region so breaks are nodes.
    fn nodes(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        for w in self.breaks.windows(2) {
            for k in 1..=NODES_PER_REGION {
                out.push(w[0] + (w[1] - w[0]) * k as f64 / NODES_PER_REGION as f64);
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        for w in self.breaks.windows(2) {
            for k in 0..=64 {
                let r = w[0] + (w[1] - w[0]) * k as f64 / 64.0;
                let v = self.rho(r.min(w[1]));
                if !v.is_finite() {
                    return Err(Error::NonIntegrableDensity(format!("rho({r}) = {v}")));
                }
            }
        }
        Ok(())
    }
}

/// Potential and pressure of a radially symmetric density.
#[derive(Debug, Clone)]
pub struct RadialGravity {
    density: RadialDensity,
    k0: f64,
    mass: Cumulative,
    shell: Cumulative,
}

/// `ρ(r)` within one interval; interfaces are nodes so the piece never straddles a jump.
fn piece<'a>(d: &'a RadialDensity, lo: f64, hi: f64) -> impl Fn(f64) -> f64 + 'a {
    let region = d.region(0.5 * (lo + hi));
    move |s| d.rho_in(region, s)
}

impl RadialGravity {
    fn m(&self, r: f64) -> f64 {
        let r = r.min(self.density.outer());
        let (lo, hi) = self.bracket(r);
        let f = piece(&self.density, lo, hi);
        self.mass.at(r, &|s| s * s * f(s))
    }

    /// `∫_0^r s ρ(s) ds`.
    fn q0(&self, r: f64) -> f64 {
        let r = r.min(self.density.outer());
        let (lo, hi) = self.bracket(r);
        let f = piece(&self.density, lo, hi);
        self.shell.at(r, &|s| s * f(s))
    }

    fn bracket(&self, r: f64) -> (f64, f64) {
        let nodes = &self.mass.nodes;
        let n = nodes.len();
        let i = nodes.partition_point(|&v| v <= r).clamp(1, n - 1);
        (nodes[i - 1], nodes[i])
    }

    pub fn outer_radius(&self) -> f64 {
        self.density.outer()
    }

    pub fn total_mass(&self) -> f64 {
        4.0 * std::f64::consts::PI * self.mass.total()
    }

    /// `(Φ, Φ', Φ'')` at radius `r`, with `Φ''` from region `region` (or the containing one).
    pub fn profile(&self, r: f64, region: Option<usize>) -> (f64, f64, f64) {
        let k0 = self.k0;
        let big_r = self.density.outer();
        if r > big_r {
            let m = self.mass.total();
            return (-k0 * m / r, k0 * m / (r * r), -2.0 * k0 * m / r.powi(3));
        }
        let rho = match region {
            Some(k) => self.density.rho_in(k, r),
            None => self.density.rho(r),
        };
        if r < 1e-8 * big_r {
            let rho0 = self.density.rho(0.0);
            let q = self.shell.total() - self.q0(r);
            return (-k0 * rho0 * r * r / 3.0 - k0 * q, k0 * rho0 * r / 3.0, k0 * rho0 / 3.0);
        }
        let m = self.m(r);
        let q = self.shell.total() - self.q0(r);
        (-k0 * m / r - k0 * q, k0 * m / (r * r), k0 * (rho - 2.0 * m / r.powi(3)))
    }
}

impl Gravity for RadialGravity {
    fn jet(&self, x: &Vec3, region: Option<usize>) -> FieldJet {
        let r = x.norm();
        let (f, d1, d2) = self.profile(r, region);
        if r < 1e-8 * self.density.outer() {
            return FieldJet { value: f, grad: x * (d1 / r.max(1e-300)), hess: Mat3::identity() * d2 };
        }
        FieldJet::radial(x, &Vec3::zeros(), (f, d1, d2))
    }
    fn k0(&self) -> f64 {
        self.k0
    }
}

/// Radial Newtonian potential `Φ = -k₀ m(r)/r - k₀ ∫_r^R s ρ(s) ds`.
pub fn solve_phi_radial(medium: &Medium, k0: f64) -> Result<RadialGravity> {
    let density = RadialDensity::new(medium)?;
    density.validate()?;
    let nodes = density.nodes();
    let mass = build_piecewise(&density, nodes.clone(), 2);
    let shell = build_piecewise(&density, nodes, 1);
    Ok(RadialGravity { density, k0, mass, shell })
}

/// Cumulative `∫ s^power ρ(s)` with each interval integrated inside a single region.
fn build_piecewise(d: &RadialDensity, nodes: Vec<f64>, power: i32) -> Cumulative {
    let mut values = vec![0.0; nodes.len()];
    for i in 1..nodes.len() {
        let f = piece(d, nodes[i - 1], nodes[i]);
        values[i] = values[i - 1] + integrate(|s| s.powi(power) * f(s), nodes[i - 1], nodes[i], QUAD_TOL);
    }
    Cumulative { nodes, values }
}

/// Hydrostatic pressure profile `p⁰(r) = ∫_r^∞ ρ Φ'`.
#[derive(Debug, Clone)]
pub struct HydrostaticPressure {
    gravity: RadialGravity,
    table: Cumulative,
}

impl HydrostaticPressure {
    pub fn at(&self, r: f64) -> f64 {
        if r >= self.gravity.outer_radius() {
            return 0.0;
        }
        let (lo, hi) = self.gravity.bracket(r);
        let f = piece(&self.gravity.density, lo, hi);
        let g = &self.gravity;
        self.table.total() - self.table.at(r, &|s| f(s) * g.profile(s, None).1)
    }

    /// `dp⁰/dr = -ρ Φ'`.
    pub fn derivative(&self, r: f64) -> f64 {
        -self.gravity.density.rho(r) * self.gravity.profile(r, None).1
    }
}

pub fn hydrostatic_pressure(medium: &Medium, gravity: &RadialGravity) -> Result<HydrostaticPressure> {
    medium.radii()?;
    let nodes = gravity.mass.nodes.clone();
    let mut values = vec![0.0; nodes.len()];
    for i in 1..nodes.len() {
        let f = piece(&gravity.density, nodes[i - 1], nodes[i]);
        values[i] = values[i - 1]
            + integrate(|s| f(s) * gravity.profile(s, None).1, nodes[i - 1], nodes[i], 1e-12);
    }
    let table = Cumulative { nodes, values };
    Ok(HydrostaticPressure { gravity: gravity.clone(), table })
}

/// Self-gravitation principal symbol `b₀(ξ) = -k₀ ξ⊗ξ / |ξ|²`.
pub fn selfgrav_symbol_b0(xi: &Vec3, k0: f64) -> Result<Mat3> {
    let n2 = xi.norm_squared();
    if !(n2 > 0.0) {
        return Err(Error::ZeroCovector);
    }
    Ok(outer(xi, xi) * (-k0 / n2))
}

/// Cubic grid `[-half_extent, half_extent]³` with `cells` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub half_extent: f64,
    pub cells: usize,
}

impl GridSpec {
    pub fn h(&self) -> f64 {
        2.0 * self.half_extent / self.cells as f64
    }
}

/// Potential on a uniform node grid with trilinear evaluation.
#[derive(Debug, Clone)]
pub struct GridGravity {
    spec: GridSpec,
    k0: f64,
    phi: Vec<f64>,
    grad: Vec<[f64; 3]>,
    hess: Vec<[f64; 6]>,
    pub iterations: usize,
    pub residual: f64,
}

impl GridGravity {
    fn n(&self) -> usize {
        self.spec.cells + 1
    }

    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n() + j) * self.n() + k
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    /// Node coordinate along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.spec.half_extent + i as f64 * self.spec.h()
    }

    pub fn node_phi(&self, i: usize, j: usize, k: usize) -> f64 {
        self.phi[self.idx(i, j, k)]
    }

    /// Trilinear weights of `x`, or `None` outside the grid.
    fn stencil(&self, x: &Vec3) -> Option<[(usize, f64); 8]> {
        let h = self.spec.h();
        let m = self.spec.cells;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = (x[a] + self.spec.half_extent) / h;
            if !(0.0..=m as f64).contains(&u) {
                return None;
            }
            let b = (u.floor() as usize).min(m - 1);
            base[a] = b;
            frac[a] = u - b as f64;
        }
        let mut out = [(0, 0.0); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (di, dj, dk) = (c >> 2 & 1, c >> 1 & 1, c & 1);
            let w = [di, dj, dk]
                .iter()
                .zip(frac)
                .map(|(&d, f)| if d == 1 { f } else { 1.0 - f })
                .product();
            *slot = (self.idx(base[0] + di, base[1] + dj, base[2] + dk), w);
        }
        Some(out)
    }
}

impl Gravity for GridGravity {
    fn jet(&self, x: &Vec3, _: Option<usize>) -> FieldJet {
        let Some(st) = self.stencil(x) else {
            return FieldJet { value: f64::NAN, grad: Vec3::repeat(f64::NAN), hess: Mat3::repeat(f64::NAN) };
        };
        let mut value = 0.0;
        let mut g = [0.0; 3];
        let mut hh = [0.0; 6];
        for (i, w) in st {
            value += w * self.phi[i];
            for a in 0..3 {
                g[a] += w * self.grad[i][a];
            }
            for a in 0..6 {
                hh[a] += w * self.hess[i][a];
            }
        }
        let hess = Mat3::new(hh[0], hh[3], hh[4], hh[3], hh[1], hh[5], hh[4], hh[5], hh[2]);
        FieldJet { value, grad: Vec3::from(g), hess }
    }
    fn k0(&self) -> f64 {
        self.k0
    }
}

/// Source value at a node. Near a density jump this is `Σ_a n_a² ∫ ρ(x + t e_a) hat_h(t) dt`,
/// the average the 7-point stencil applies to `∂_a²Φ`, which keeps the scheme second order
/// across the jump.
fn stencil_density(medium: &Medium, center: &Vec3, h: f64) -> f64 {
    let region_at = |x: &Vec3| -> Option<usize> { medium.in_domain(x).then(|| medium.region_index(x)) };
    let rho_at = |x: &Vec3| -> f64 { region_at(x).map_or(0.0, |r| medium.eval_region(r, x).rho) };
    let boundary = Surface::Sphere { center: Vec3::zeros(), radius: medium.domain_radius() };
    let surfaces: Vec<&Surface> = std::iter::once(&boundary).chain(medium.interfaces().iter().map(|i| &i.surface)).collect();
    let (d, surf) = surfaces
        .iter()
        .map(|s| (signed_distance(s, center), *s))
        .min_by(|p, q| p.0.abs().total_cmp(&q.0.abs()))
        .unwrap();
    if d.abs() >= h * 3f64.sqrt() {
        return rho_at(center);
    }
    let n = surf.normal(center);
    let gl = gauss_legendre(8, 0.0, 1.0);
    let mut acc = 0.0;
    for axis in 0..3 {
        if n[axis] == 0.0 {
            continue;
        }
        let e = Vec3::from_fn(|r, _| if r == axis { 1.0 } else { 0.0 });
        let at = |t: f64| center + e * t;
        // Breakpoints: 0 plus every region change along the segment, located by bisection.
        const SCAN: usize = 64;
        let mut cuts = vec![-h, 0.0, h];
        for k in 0..SCAN {
            let (mut lo, mut hi) = (-h + 2.0 * h * k as f64 / SCAN as f64, -h + 2.0 * h * (k + 1) as f64 / SCAN as f64);
            let rl = region_at(&at(lo));
            if rl == region_at(&at(hi)) {
                continue;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if region_at(&at(mid)) == rl {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            cuts.push(0.5 * (lo + hi));
        }
        cuts.sort_by(f64::total_cmp);
        let mut line = 0.0;
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            for &(u, wt) in &gl {
                let t = w[0] + u * len;
                line += wt * len * rho_at(&at(t)) * (h - t.abs()) / (h * h);
            }
        }
        acc += n[axis] * n[axis] * line;
    }
    acc
}

fn signed_distance(s: &Surface, x: &Vec3) -> f64 {
    match s {
        Surface::Ellipsoid { .. } => s.psi(x) / s.grad_psi(x).norm().max(1e-300),
        _ => s.psi(x),
    }
}

fn feature_size(s: &Surface) -> f64 {
    match s {
        Surface::Sphere { radius, .. } => *radius,
        Surface::Ellipsoid { axes, .. } => axes.min(),
        Surface::Plane { .. } => f64::INFINITY,
    }
}

/// Free-space multipole potential `-(k₀/4π)[M/r + x·p/r³ + (3xᵀQx - r² trQ)/(2r⁵)]`.
fn multipole(x: &Vec3, mass: f64, dipole: &Vec3, quad: &Mat3, k0: f64) -> f64 {
    let r = x.norm();
    let r2 = r * r;
    let q = 3.0 * (x.transpose() * quad * x)[0] - r2 * quad.trace();
    -k0 / (4.0 * std::f64::consts::PI) * (mass / r + x.dot(dipole) / (r2 * r) + q / (2.0 * r2 * r2 * r))
}

/// Second-order 7-point Poisson solve with multipole Dirichlet boundary values.
pub fn solve_phi_grid(medium: &Medium, spec: GridSpec, k0: f64) -> Result<GridGravity> {
    let h = spec.h();
    let m = spec.cells;
    if m < 4 {
        return Err(Error::GridTooCoarse(format!("{m} cells")));
    }
    if medium.domain_radius() > spec.half_extent - h {
        return Err(Error::Invalid("density support must lie strictly inside the grid".into()));
    }
    for (k, i) in medium.interfaces().iter().enumerate() {
        let size = feature_size(&i.surface);
        if size < 4.0 * h {
            return Err(Error::GridTooCoarse(format!("interface {k}: feature {size} below 4 cells of {h}")));
        }
    }
    if medium.domain_radius() < 4.0 * h {
        return Err(Error::GridTooCoarse(format!("domain radius below 4 cells of {h}")));
    }
    let n = m + 1;
    let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
    let coord = |i: usize| -spec.half_extent + i as f64 * h;

    let mut rho = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let x = Vec3::new(coord(i), coord(j), coord(k));
                if x.norm() <= medium.domain_radius() + h {
                    rho[idx(i, j, k)] = stencil_density(medium, &x, h);
                }
            }
        }
    }
    let cell = h * h * h;
    let (mut mass, mut dipole, mut quad) = (0.0, Vec3::zeros(), Mat3::zeros());
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let r = rho[idx(i, j, k)];
                if r != 0.0 {
                    let x = Vec3::new(coord(i), coord(j), coord(k));
                    mass += r * cell;
                    dipole += x * (r * cell);
                    quad += outer(&x, &x) * (r * cell);
                }
            }
        }
    }

    let mut phi = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if [i, j, k].iter().any(|&a| a == 0 || a == m) {
                    let x = Vec3::new(coord(i), coord(j), coord(k));
                    phi[idx(i, j, k)] = multipole(&x, mass, &dipole, &quad, k0);
                }
            }
        }
    }

    // CG on A u = b with A = -Δ_h restricted to interior nodes.
    let interior = |i: usize| i > 0 && i < m;
    let inv_h2 = 1.0 / (h * h);
    let apply = |u: &[f64], out: &mut [f64]| {
        for i in 1..m {
            for j in 1..m {
                for k in 1..m {
                    let c = idx(i, j, k);
                    let mut s = 6.0 * u[c];
                    for (a, b, d) in [(i - 1, j, k), (i + 1, j, k), (i, j - 1, k), (i, j + 1, k), (i, j, k - 1), (i, j, k + 1)] {
                        if interior(a) && interior(b) && interior(d) {
                            s -= u[idx(a, b, d)];
                        }
                    }
                    out[c] = s * inv_h2;
                }
            }
        }
    };
    let mut b = vec![0.0; n * n * n];
    for i in 1..m {
        for j in 1..m {
            for k in 1..m {
                let c = idx(i, j, k);
                let mut s = -k0 * rho[c];
                for (a, bb, d) in [(i - 1, j, k), (i + 1, j, k), (i, j - 1, k), (i, j + 1, k), (i, j, k - 1), (i, j, k + 1)] {
                    if !(interior(a) && interior(bb) && interior(d)) {
                        s += phi[idx(a, bb, d)] * inv_h2;
                    }
                }
                b[c] = s;
            }
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut u = vec![0.0; n * n * n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n * n * n];
    let bnorm = dot(&b, &b).sqrt().max(1e-300);
    let mut rr = dot(&r, &r);
    let max_iter = 20 * m * m;
    let mut iterations = 0;
    while rr.sqrt() > 1e-11 * bnorm {
        if iterations >= max_iter {
            return Err(Error::SolveFailure(format!("CG stalled at residual {}", rr.sqrt() / bnorm)));
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for c in 0..u.len() {
            u[c] += alpha * p[c];
            r[c] -= alpha * ap[c];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for c in 0..p.len() {
            p[c] = r[c] + beta * p[c];
        }
        iterations += 1;
    }
    for i in 1..m {
        for j in 1..m {
            for k in 1..m {
                phi[idx(i, j, k)] = u[idx(i, j, k)];
            }
        }
    }

    // Node derivatives: central differences, one-sided at the box faces.
    let d1 = |f: &dyn Fn(isize) -> f64, i: usize| -> f64 {
        if i == 0 {
            (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
        } else if i == m {
            (3.0 * f(0) - 4.0 * f(-1) + f(-2)) / (2.0 * h)
        } else {
            (f(1) - f(-1)) / (2.0 * h)
        }
    };
    let at = |p: &[usize; 3]| phi[idx(p[0], p[1], p[2])];
    let shift = |p: [usize; 3], a: usize, s: isize| {
        let mut q = p;
        q[a] = (q[a] as isize + s) as usize;
        q
    };
    let mut grad = vec![[0.0; 3]; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p = [i, j, k];
                for a in 0..3 {
                    grad[idx(i, j, k)][a] = d1(&|s| at(&shift(p, a, s)), p[a]);
                }
            }
        }
    }
    let mut hess = vec![[0.0; 6]; n * n * n];
    let pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p = [i, j, k];
                for (slot, &(a, b)) in pairs.iter().enumerate() {
                    hess[idx(i, j, k)][slot] = d1(&|s| grad[{ let q = shift(p, a, s); idx(q[0], q[1], q[2]) }][b], p[a]);
                }
            }
        }
    }
    // Interior diagonal entries use the 3-point second difference.
    for i in 1..m {
        for j in 1..m {
            for k in 1..m {
                let p = [i, j, k];
                let c = idx(i, j, k);
                for a in 0..3 {
                    hess[c][a] = (at(&shift(p, a, 1)) - 2.0 * at(&p) + at(&shift(p, a, -1))) * inv_h2;
                }
            }
        }
    }
    let residual = rr.sqrt() / bnorm;
    Ok(GridGravity { spec, k0, phi, grad, hess, iterations, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{RadialProfile, Region, RegionField};
    use proptest::prelude::*;

    fn uniform_ball() -> Medium {
        Medium::homogeneous(1.0, 1.0, 1.0)
    }

    fn shells(rho_outer: f64, rho_inner: f64) -> Medium {
        Medium::radial_layers(vec![Region::constant(rho_outer, 1.0), Region::constant(rho_inner, 1.5)], &[0.5], 1.0)
            .unwrap()
    }

    #[test]
    fn uniform_ball_potential() {
        let g = solve_phi_radial(&uniform_ball(), 1.0).unwrap();
        for &r in &[0.0, 1e-9, 0.1, 0.37, 0.5, 0.99, 1.0] {
            let (phi, d1, d2) = g.profile(r, None);
            assert!((phi - (r * r / 6.0 - 0.5)).abs() < 1e-12, "r={r} phi={phi}");
            assert!((d1 - r / 3.0).abs() < 1e-12);
            assert!((d2 - 1.0 / 3.0).abs() < 1e-9);
        }
        for &r in &[1.0 + 1e-12, 1.5, 3.0] {
            assert!((g.profile(r, None).0 + 1.0 / (3.0 * r)).abs() < 1e-12);
        }
        let lap = g.hess(&Vec3::new(0.2, -0.3, 0.4)).trace();
        assert!((lap - 1.0).abs() < 1e-10);
    }

    #[test]
    fn vacuum_is_zero() {
        let g = solve_phi_radial(&Medium::homogeneous(0.0, 1.0, 1.0), 1.0).unwrap();
        let x = Vec3::new(0.3, 0.1, -0.2);
        assert_eq!(g.phi(&x), 0.0);
        assert_eq!(g.grad(&x).norm(), 0.0);
        let p = hydrostatic_pressure(&Medium::homogeneous(0.0, 1.0, 1.0), &g).unwrap();
        assert_eq!(p.at(0.4), 0.0);
    }

    #[test]
    fn two_shells_superpose() {
        // ρ = 1 on r<1 plus 2 extra on r<0.5.
        let g = solve_phi_radial(&shells(1.0, 3.0), 1.0).unwrap();
        let ball = |rho: f64, a: f64, r: f64| {
            if r <= a {
                rho * (r * r / 6.0 - a * a / 2.0)
            } else {
                -rho * a.powi(3) / (3.0 * r)
            }
        };
        for &r in &[0.1, 0.49, 0.5, 0.51, 0.8, 1.0, 2.0] {
            let expect = ball(1.0, 1.0, r) + ball(2.0, 0.5, r);
            assert!((g.profile(r, None).0 - expect).abs() < 1e-12, "r={r}");
        }
    }

    #[test]
    fn normal_second_derivative_jumps_by_k0_rho_jump() {
        let k0 = 1.7;
        let g = solve_phi_radial(&shells(1.0, 3.0), k0).unwrap();
        let (_, d1m, d2m) = g.profile(0.5, Some(0));
        let (_, d1p, d2p) = g.profile(0.5, Some(1));
        assert!((d1m - d1p).abs() < 1e-15);
        assert!(((d2p - d2m) - k0 * 2.0).abs() < 1e-12);
        let (a, b) = (g.profile(0.5 - 1e-9, None).0, g.profile(0.5 + 1e-9, None).0);
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn uniform_ball_pressure() {
        let m = uniform_ball();
        let g = solve_phi_radial(&m, 1.0).unwrap();
        let p = hydrostatic_pressure(&m, &g).unwrap();
        for &r in &[0.0, 0.25, 0.6, 0.999] {
            assert!((p.at(r) - (1.0 - r * r) / 6.0).abs() < 1e-12, "r={r}");
        }
        assert_eq!(p.at(1.5), 0.0);
    }

    #[test]
    fn pressure_balance_and_monotone() {
        let m = Medium::new(
            vec![Region {
                rho: RegionField::Radial(RadialProfile::Polynomial(vec![3.0, 0.0, -2.0])),
                c: RegionField::Constant(1.0),
            }],
            vec![],
            1.0,
        )
        .unwrap();
        let g = solve_phi_radial(&m, 1.0).unwrap();
        let p = hydrostatic_pressure(&m, &g).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..50 {
            let r = i as f64 / 50.0;
            let v = p.at(r);
            assert!(v < prev);
            prev = v;
            let h = 1e-5;
            let fd = (p.at(r + h) - p.at(r - h)) / (2.0 * h);
            assert!((fd - p.derivative(r)).abs() < 1e-8);
        }
    }

    #[test]
    fn b0_symbol() {
        let b = selfgrav_symbol_b0(&Vec3::z(), 1.0).unwrap();
        let mut e = Mat3::zeros();
        e[(2, 2)] = -1.0;
        assert_eq!(b, e);
        assert_eq!(selfgrav_symbol_b0(&Vec3::zeros(), 1.0), Err(Error::ZeroCovector));
    }

    #[test]
    fn grid_rejects_coarse() {
        let m = shells(1.0, 2.0);
        let err = solve_phi_grid(&m, GridSpec { half_extent: 2.0, cells: 16 }, 1.0).unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse(_)));
    }

    #[test]
    fn grid_symmetric_density_has_no_central_force() {
        let g = solve_phi_grid(&uniform_ball(), GridSpec { half_extent: 2.0, cells: 16 }, 1.0).unwrap();
        assert!(g.grad(&Vec3::zeros()).norm() < 1e-10);
    }

    #[test]
    fn grid_matches_radial_at_second_order() {
        let exact = solve_phi_radial(&uniform_ball(), 1.0).unwrap();
        let mut errs = Vec::new();
        for cells in [16, 32] {
            let g = solve_phi_grid(&uniform_ball(), GridSpec { half_extent: 2.0, cells }, 1.0).unwrap();
            let mut e: f64 = 0.0;
            for i in 0..=cells {
                let x = Vec3::new(g.coord(i), 0.3 * g.coord(i) , 0.0);
                if x.norm() < 1.9 {
                    e = e.max((g.phi(&x) - exact.phi(&x)).abs());
                }
            }
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 2.5, "{errs:?}");
    }

    proptest! {
        #[test]
        fn potential_is_linear_in_density(a in 0.1f64..3.0, b in 0.1f64..3.0, r in 0.0f64..2.0) {
            let ga = solve_phi_radial(&shells(a, a), 1.0).unwrap();
            let gb = solve_phi_radial(&shells(b, 2.0 * b), 1.0).unwrap();
            let gab = solve_phi_radial(&shells(a + b, a + 2.0 * b), 1.0).unwrap();
            let x = Vec3::new(r, 0.0, 0.0);
            prop_assert!((gab.phi(&x) - ga.phi(&x) - gb.phi(&x)).abs() < 1e-12);
        }

        #[test]
        fn b0_projection_and_homogeneity(xi in prop::array::uniform3(-2.0f64..2.0), k0 in 0.1f64..5.0) {
            let xi = Vec3::from(xi);
            prop_assume!(xi.norm() > 1e-3);
            let b = selfgrav_symbol_b0(&xi, k0).unwrap();
            let n = xi.normalize();
            prop_assert!(((n.transpose() * b * n)[0] + k0).abs() < 1e-12);
            prop_assert!((selfgrav_symbol_b0(&(2.0 * xi), k0).unwrap() - b).norm() < 1e-12);
        }
    }
}
