//! Piecewise-smooth acoustic media: per-region closed-form fields, interfaces,
//! one-sided evaluation and the radial foliation check.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{any_perpendicular, outer, Mat3, Poly3, Vec3};

/// Radial profile `f(r)` with analytic first and second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum RadialProfile {
    /// `Σ a_k r^k`.
    Polynomial(Vec<f64>),
    /// Natural cubic spline through knots.
    Spline(CubicSpline),
    /// `amplitude · ((r - a)(b - r))^3 / ((b - a)/2)^6` on `(a, b)`, zero elsewhere (C²).
    Bump { a: f64, b: f64, amplitude: f64 },
    Sum(Vec<RadialProfile>),
    Reciprocal(Box<RadialProfile>),
    Exp(Box<RadialProfile>),
}

impl RadialProfile {
    pub fn constant(v: f64) -> Self {
        Self::Polynomial(vec![v])
    }

    /// `(f, f', f'')` at radius `r`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        match self {
            Self::Polynomial(a) => {
                let (mut f, mut d1, mut d2) = (0.0, 0.0, 0.0);
                for &c in a.iter().rev() {
                    d2 = d2 * r + 2.0 * d1;
                    d1 = d1 * r + f;
                    f = f * r + c;
                }
                (f, d1, d2)
            }
            Self::Spline(s) => s.eval(r),
            Self::Bump { a, b, amplitude } => {
                if r <= *a || r >= *b {
                    return (0.0, 0.0, 0.0);
                }
                let norm = amplitude / (0.5 * (b - a)).powi(6);
                let q = (r - a) * (b - r);
                let dq = a + b - 2.0 * r;
                let f = q.powi(3);
                let d1 = 3.0 * q * q * dq;
                let d2 = 6.0 * q * dq * dq - 6.0 * q * q;
                (norm * f, norm * d1, norm * d2)
            }
            Self::Sum(parts) => parts.iter().fold((0.0, 0.0, 0.0), |acc, p| {
                let v = p.eval(r);
                (acc.0 + v.0, acc.1 + v.1, acc.2 + v.2)
            }),
            Self::Reciprocal(g) => {
                let (g0, g1, g2) = g.eval(r);
                (1.0 / g0, -g1 / (g0 * g0), (2.0 * g1 * g1 - g0 * g2) / g0.powi(3))
            }
            Self::Exp(g) => {
                let (g0, g1, g2) = g.eval(r);
                let e = g0.exp();
                (e, g1 * e, (g2 + g1 * g1) * e)
            }
        }
    }
}

/// Natural cubic spline with exact piecewise derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("spline needs >= 2 increasing knots".into()));
        }
        let mut second = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                let h0 = knots[i + 1] - knots[i];
                let h1 = knots[i + 2] - knots[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((values[i + 2] - values[i + 1]) / h1 - (values[i + 1] - values[i]) / h0);
            }
            for i in 1..m {
                let lower = knots[i + 1] - knots[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            let mut sol = vec![0.0; m];
            for i in (0..m).rev() {
                let next = if i + 1 < m { upper[i] * sol[i + 1] } else { 0.0 };
                sol[i] = (rhs[i] - next) / diag[i];
            }
            second[1..(m + 1)].copy_from_slice(&sol);
        }
        Ok(Self { knots, values, second })
    }

    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        let n = self.knots.len();
        let i = match self.knots.partition_point(|&k| k <= r) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let h = x1 - x0;
        let a = (x1 - r) / h;
        let b = (r - x0) / h;
        let f = a * y0 + b * y1 + ((a.powi(3) - a) * m0 + (b.powi(3) - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let d2 = a * m0 + b * m1;
        (f, d1, d2)
    }
}

/// Value, gradient and Hessian of a scalar field at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldJet {
    pub value: f64,
    pub grad: Vec3,
    pub hess: Mat3,
}

impl FieldJet {
    pub fn constant(v: f64) -> Self {
        Self { value: v, grad: Vec3::zeros(), hess: Mat3::zeros() }
    }

    /// Jet of `f(|x - center|)` from the radial derivatives.
    pub fn radial(x: &Vec3, center: &Vec3, (f, d1, d2): (f64, f64, f64)) -> Self {
        let d = x - center;
        let r = d.norm();
        if r < 1e-300 {
            return Self { value: f, grad: Vec3::zeros(), hess: Mat3::identity() * d2 };
        }
        let u = d / r;
        let uu = outer(&u, &u);
        Self {
            value: f,
            grad: u * d1,
            hess: uu * d2 + (Mat3::identity() - uu) * (d1 / r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyField {
    p: Poly3,
    grad: [Poly3; 3],
    hess: [[Poly3; 3]; 3],
}

impl PolyField {
    pub fn new(p: Poly3) -> Self {
        let grad = p.gradient();
        let hess = [0, 1, 2].map(|i| [0, 1, 2].map(|j| grad[i].deriv(j)));
        Self { p, grad, hess }
    }

    pub fn poly(&self) -> &Poly3 {
        &self.p
    }

    pub fn jet(&self, x: &Vec3) -> FieldJet {
        FieldJet {
            value: self.p.eval(x),
            grad: Vec3::from_fn(|i, _| self.grad[i].eval(x)),
            hess: Mat3::from_fn(|i, j| self.hess[i][j].eval(x)),
        }
    }
}

/// A closed-form scalar field on one region.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionField {
    Constant(f64),
    Polynomial(PolyField),
    /// Radial about the origin.
    Radial(RadialProfile),
}

impl RegionField {
    pub fn polynomial(p: Poly3) -> Self {
        Self::Polynomial(PolyField::new(p))
    }

    pub fn jet(&self, x: &Vec3) -> FieldJet {
        match self {
            Self::Constant(v) => FieldJet::constant(*v),
            Self::Polynomial(p) => p.jet(x),
            Self::Radial(profile) => FieldJet::radial(x, &Vec3::zeros(), profile.eval(x.norm())),
        }
    }

    /// Radial profile `(f, f', f'')` if the field is radially symmetric.
    pub fn radial_eval(&self, r: f64) -> Option<(f64, f64, f64)> {
        match self {
            Self::Constant(v) => Some((*v, 0.0, 0.0)),
            Self::Radial(p) => Some(p.eval(r)),
            Self::Polynomial(_) => None,
        }
    }
}

/// Level-set surface; `psi < 0` on the `+` side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Surface {
    /// `psi = |x - center| - radius`; `+` side inside.
    Sphere { center: Vec3, radius: f64 },
    /// `psi = (x - point)·normal`; `+` side opposite the normal.
    Plane { point: Vec3, normal: Vec3 },
    /// `psi = Σ ((x - center)_i / axes_i)^2 - 1`.
    Ellipsoid { center: Vec3, axes: Vec3 },
}

impl Surface {
    pub fn psi(&self, x: &Vec3) -> f64 {
        match self {
            Self::Sphere { center, radius } => (x - center).norm() - radius,
            Self::Plane { point, normal } => (x - point).dot(normal),
            Self::Ellipsoid { center, axes } => {
                (x - center).component_div(axes).norm_squared() - 1.0
            }
        }
    }

    pub fn grad_psi(&self, x: &Vec3) -> Vec3 {
        match self {
            Self::Sphere { center, .. } => (x - center).normalize(),
            Self::Plane { normal, .. } => *normal,
            Self::Ellipsoid { center, axes } => {
                2.0 * (x - center).component_div(&axes.component_mul(axes))
            }
        }
    }

    /// Unit normal pointing from the `+` side to the `-` side.
    pub fn normal(&self, x: &Vec3) -> Vec3 {
        self.grad_psi(x).normalize()
    }

    fn is_centered_sphere(&self) -> bool {
        matches!(self, Self::Sphere { center, .. } if center.norm() == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interface {
    pub surface: Surface,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub rho: RegionField,
    pub c: RegionField,
}

impl Region {
    pub fn constant(rho: f64, c: f64) -> Self {
        Self { rho: RegionField::Constant(rho), c: RegionField::Constant(c) }
    }
}

/// Side of an interface: `Minus` is the incoming side, `Plus` the far side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Minus,
    Plus,
}

/// Material state at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MediumPoint {
    pub region: usize,
    pub rho: f64,
    pub c: f64,
    pub kappa: f64,
    pub grad_rho: Vec3,
    pub grad_c: Vec3,
    pub hess_rho: Mat3,
    pub hess_c: Mat3,
}

impl MediumPoint {
    fn from_jets(region: usize, rho: FieldJet, c: FieldJet) -> Self {
        Self {
            region,
            rho: rho.value,
            c: c.value,
            kappa: rho.value * c.value * c.value,
            grad_rho: rho.grad,
            grad_c: c.grad,
            hess_rho: rho.hess,
            hess_c: c.hess,
        }
    }

    pub fn grad_log_c(&self) -> Vec3 {
        self.grad_c / self.c
    }

    /// `∇² log c`.
    pub fn hess_log_c(&self) -> Mat3 {
        self.hess_c / self.c - outer(&self.grad_c, &self.grad_c) / (self.c * self.c)
    }
}

/// Piecewise-smooth medium. Interfaces are nested and ordered outermost first;
/// region `k` lies on the `-` side of interface `k` and the `+` side of `k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    regions: Vec<Region>,
    interfaces: Vec<Interface>,
    domain_radius: f64,
}

impl Medium {
    pub fn new(regions: Vec<Region>, interfaces: Vec<Interface>, domain_radius: f64) -> Result<Self> {
        if regions.len() != interfaces.len() + 1 {
            return Err(Error::Invalid(format!(
                "{} regions for {} interfaces",
                regions.len(),
                interfaces.len()
            )));
        }
        if !(domain_radius > 0.0) {
            return Err(Error::Invalid("domain radius must be positive".into()));
        }
        Ok(Self { regions, interfaces, domain_radius })
    }

    /// Homogeneous ball.
    pub fn homogeneous(rho: f64, c: f64, radius: f64) -> Self {
        Self::new(vec![Region::constant(rho, c)], vec![], radius).expect("valid")
    }

    /// Radial ball with concentric spherical interfaces at `radii` (descending).
    pub fn radial_layers(regions: Vec<Region>, radii: &[f64], outer_radius: f64) -> Result<Self> {
        if radii.windows(2).any(|w| w[1] >= w[0]) || radii.iter().any(|&r| r <= 0.0 || r >= outer_radius) {
            return Err(Error::Invalid("interface radii must be descending inside the ball".into()));
        }
        let interfaces = radii
            .iter()
            .map(|&radius| Interface { surface: Surface::Sphere { center: Vec3::zeros(), radius } })
            .collect();
        Self::new(regions, interfaces, outer_radius)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn interfaces(&self) -> &[Interface] {
        &self.interfaces
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.domain_radius
    }

    /// Tolerance on `|psi|` for a point to count as on an interface.
    pub fn on_interface_tol(&self) -> f64 {
        1e-12 * self.diameter()
    }

    pub fn in_domain(&self, x: &Vec3) -> bool {
        x.norm() <= self.domain_radius * (1.0 + 1e-12)
    }

    /// Region containing `x` (no domain check, no on-interface handling).
    pub fn region_index(&self, x: &Vec3) -> usize {
        self.interfaces.iter().filter(|i| i.surface.psi(x) < 0.0).count()
    }

    /// Interface whose level set passes through `x` within tolerance.
    pub fn interface_at(&self, x: &Vec3) -> Option<usize> {
        let tol = self.on_interface_tol();
        self.interfaces.iter().position(|i| i.surface.psi(x).abs() < tol)
    }

    /// Fields of region `region` evaluated at `x`, extended smoothly beyond the region.
    pub fn eval_region(&self, region: usize, x: &Vec3) -> MediumPoint {
        let r = &self.regions[region];
        MediumPoint::from_jets(region, r.rho.jet(x), r.c.jet(x))
    }

    /// One-sided material state at `x`.
    pub fn eval(&self, x: &Vec3, side: Option<Side>) -> Result<MediumPoint> {
        if !self.in_domain(x) {
            return Err(Error::OutOfDomain);
        }
        let region = match (self.interface_at(x), side) {
            (Some(k), Some(Side::Minus)) => k,
            (Some(k), Some(Side::Plus)) => k + 1,
            (Some(k), None) => return Err(Error::OnInterfaceWithoutSide { interface: k }),
            (None, _) => self.region_index(x),
        };
        Ok(self.eval_region(region, x))
    }

    pub fn is_radial(&self) -> bool {
        self.interfaces.iter().all(|i| i.surface.is_centered_sphere())
            && self.regions.iter().all(|r| r.rho.radial_eval(0.5).is_some() && r.c.radial_eval(0.5).is_some())
    }

    /// Interface radii (outermost first) of a radial medium.
    pub fn radii(&self) -> Result<Vec<f64>> {
        if !self.is_radial() {
            return Err(Error::NotRadial);
        }
        Ok(self
            .interfaces
            .iter()
            .map(|i| match i.surface {
                Surface::Sphere { radius, .. } => radius,
                _ => unreachable!(),
            })
            .collect())
    }

    /// Region boundaries `[R, r_0, r_1, ..., 0]` of a radial medium.
    pub fn radial_breaks(&self) -> Result<Vec<f64>> {
        let mut b = vec![self.domain_radius];
        b.extend(self.radii()?);
        b.push(0.0);
        Ok(b)
    }

    /// `(ρ, c)` radial profiles of `region` at radius `r`.
    pub fn radial_values(&self, region: usize, r: f64) -> (f64, f64) {
        let reg = &self.regions[region];
        let rho = reg.rho.radial_eval(r).map(|v| v.0).unwrap_or(f64::NAN);
        let c = reg.c.radial_eval(r).map(|v| v.0).unwrap_or(f64::NAN);
        (rho, c)
    }

    /// Copy of the medium with the density of `region` replaced.
    pub fn with_density(&self, region: usize, rho: RegionField) -> Self {
        let mut m = self.clone();
        m.regions[region].rho = rho;
        m
    }
}

/// Local orthonormal frame at an interface point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterfaceFrame {
    pub interface: usize,
    /// Unit normal pointing out of the `+` side.
    pub nu: Vec3,
    pub t1: Vec3,
    pub t2: Vec3,
    pub minus: MediumPoint,
    pub plus: MediumPoint,
}

pub fn interface_frame(medium: &Medium, x: &Vec3) -> Result<InterfaceFrame> {
    let (k, psi) = medium
        .interfaces
        .iter()
        .enumerate()
        .map(|(k, i)| (k, i.surface.psi(x)))
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .ok_or(Error::NotOnInterface { interface: 0, psi: f64::INFINITY })?;
    if psi.abs() >= medium.on_interface_tol() {
        return Err(Error::NotOnInterface { interface: k, psi });
    }
    Ok(frame_unchecked(medium, k, x))
}

/// Frame of interface `k` at `x` without the on-surface check (used during event location).
pub fn frame_unchecked(medium: &Medium, k: usize, x: &Vec3) -> InterfaceFrame {
    let nu = medium.interfaces[k].surface.normal(x);
    let t1 = any_perpendicular(&nu);
    let t2 = nu.cross(&t1);
    InterfaceFrame {
        interface: k,
        nu,
        t1,
        t2,
        minus: medium.eval_region(k, x),
        plus: medium.eval_region(k + 1, x),
    }
}

/// Foliation function `κ_f = R - |x|` of a radial ball, level range `[0, R]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoliationChart {
    pub outer_radius: f64,
}

impl FoliationChart {
    pub fn value(&self, x: &Vec3) -> f64 {
        self.outer_radius - x.norm()
    }

    pub fn level_range(&self) -> (f64, f64) {
        (0.0, self.outer_radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FoliationViolation {
    /// `d/dr (r / c) <= 0` at radius `r`.
    Herglotz { region: usize, r: f64, derivative: f64 },
    /// Speed just inside an interface exceeds the speed just outside.
    InterfaceSpeed { interface: usize, radius: f64, c_inner: f64, c_outer: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoliationReport {
    pub satisfied: bool,
    pub violations: Vec<FoliationViolation>,
}

/// Herglotz and interface-speed checks of a radial medium.
pub fn check_foliation_radial(medium: &Medium) -> Result<FoliationReport> {
    const SAMPLES: usize = 2000;
    let breaks = medium.radial_breaks()?;
    let mut violations = Vec::new();
    for region in 0..medium.regions.len() {
        let (hi, lo) = (breaks[region], breaks[region + 1]);
        let field = &medium.regions[region].c;
        for i in 0..SAMPLES {
            let r = lo + (hi - lo) * (i as f64 + 0.5) / SAMPLES as f64;
            let (c, dc, _) = field.radial_eval(r).expect("radial");
            let derivative = (c - r * dc) / (c * c);
            if !(derivative > 0.0) {
                violations.push(FoliationViolation::Herglotz { region, r, derivative });
            }
        }
    }
    for (k, radius) in medium.radii()?.into_iter().enumerate() {
        let c_outer = medium.regions[k].c.radial_eval(radius).expect("radial").0;
        let c_inner = medium.regions[k + 1].c.radial_eval(radius).expect("radial").0;
        if c_inner > c_outer {
            violations.push(FoliationViolation::InterfaceSpeed { interface: k, radius, c_inner, c_outer });
        }
    }
    Ok(FoliationReport { satisfied: violations.is_empty(), violations })
}
