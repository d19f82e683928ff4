//! Scenario files (TOML) and their conversion into core model types.

use std::path::Path;

use serde::Deserialize;

use seisgrav::gravity::GridSpec;
use seisgrav::interface::{InterfaceJets, InterfaceSides, Material};
use seisgrav::inversion::LayerStripConfig;
use seisgrav::media::{Medium, RadialProfile, Region, RegionField};
use seisgrav::ucp::{CarlemanConfig, Harmonic, TestFunction};
use seisgrav::{Mat3, Vec3};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub medium: Option<MediumSpec>,
    #[serde(default)]
    pub gravity: GravitySpec,
    pub rays: Option<RaySpec>,
    pub interface: Option<InterfaceSpec>,
    pub layers: Option<LayerStripConfig>,
    pub carleman: Option<CarlemanSpec>,
}

/// A constant or the coefficients of a polynomial in `r`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Polynomial(Vec<f64>),
}

impl Profile {
    fn field(&self) -> RegionField {
        match self {
            Profile::Constant(v) => RegionField::Constant(*v),
            Profile::Polynomial(c) => RegionField::Radial(RadialProfile::Polynomial(c.clone())),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub rho: Profile,
    pub c: Profile,
}

/// Radially layered ball; `layers` run from the surface inward, `radii` descend.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub outer_radius: f64,
    #[serde(default)]
    pub radii: Vec<f64>,
    pub layers: Vec<LayerSpec>,
}

impl MediumSpec {
    pub fn build(&self) -> Result<Medium, CliError> {
        if self.layers.len() != self.radii.len() + 1 {
            return Err(CliError::Schema(format!(
                "medium: {} layers need {} interface radii, got {}",
                self.layers.len(),
                self.layers.len().saturating_sub(1),
                self.radii.len()
            )));
        }
        let regions = self.layers.iter().map(|l| Region { rho: l.rho.field(), c: l.c.field() }).collect();
        Ok(Medium::radial_layers(regions, &self.radii, self.outer_radius)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Radial,
    Grid,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GravitySpec {
    pub k0: f64,
    pub solver: Solver,
    pub cells: usize,
    pub half_extent: f64,
    /// Radial sample count for profiles.
    pub samples: usize,
}

impl Default for GravitySpec {
    fn default() -> Self {
        Self { k0: 1.0, solver: Solver::Radial, cells: 32, half_extent: 2.0, samples: 201 }
    }
}

impl GravitySpec {
    pub fn grid(&self) -> GridSpec {
        GridSpec { half_extent: self.half_extent, cells: self.cells }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    #[default]
    Plane,
    Point,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaySource {
    pub x: [f64; 3],
    pub dir: [f64; 3],
}

/// A fan of directions in the x-y plane around `+x`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayFan {
    pub x: [f64; 3],
    pub count: usize,
    /// Half-opening angle in degrees.
    pub spread: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaySpec {
    pub s_end: f64,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default)]
    pub family: FamilyKind,
    #[serde(default = "default_s_start")]
    pub s_start: f64,
    #[serde(default)]
    pub sources: Vec<RaySource>,
    pub fan: Option<RayFan>,
}

fn one() -> f64 {
    1.0
}

fn default_s_start() -> f64 {
    0.05
}

impl RaySpec {
    /// Start points and directions, explicit sources first.
    pub fn starts(&self) -> Vec<(Vec3, Vec3)> {
        let mut v: Vec<(Vec3, Vec3)> = self.sources.iter().map(|s| (Vec3::from(s.x), Vec3::from(s.dir))).collect();
        if let Some(f) = &self.fan {
            for i in 0..f.count {
                let t = if f.count == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (f.count - 1) as f64 };
                let a = (t * f.spread).to_radians();
                v.push((Vec3::from(f.x), Vec3::new(a.cos(), a.sin(), 0.0)));
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub rho: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JetSpec {
    pub dlog_c: f64,
    pub dlog_sqrt_rho: f64,
    pub grad_phi: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceSpec {
    pub minus: MaterialSpec,
    pub plus: MaterialSpec,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default)]
    pub slownesses: Vec<f64>,
    #[serde(default)]
    pub noise: f64,
    /// Magnitudes of the order −1 covector pattern.
    pub pattern: Option<[f64; 2]>,
    pub jets: Option<JetSpec>,
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
}

fn default_curve_points() -> usize {
    401
}

impl InterfaceSpec {
    pub fn sides(&self) -> InterfaceSides {
        InterfaceSides { minus: Material::new(self.minus.rho, self.minus.c), plus: Material::new(self.plus.rho, self.plus.c) }
    }

    pub fn jets(&self) -> Option<InterfaceJets> {
        self.jets.map(|j| InterfaceJets { dlog_c: j.dlog_c, dlog_sqrt_rho: j.dlog_sqrt_rho, grad_phi: Vec3::from(j.grad_phi) })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub a: f64,
    pub b: f64,
    pub k: i32,
    /// `{ Constant = 1.0 }`, `{ Linear = [x, y, z] }` or `{ Quadratic = [9 entries, column-major] }`.
    #[serde(default = "unit_harmonic")]
    pub p: Harmonic,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn unit_harmonic() -> Harmonic {
    Harmonic::Constant(1.0)
}

impl FunctionSpec {
    pub fn build(&self) -> TestFunction {
        TestFunction { a: self.a, b: self.b, k: self.k, p: self.p, amplitude: self.amplitude }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarlemanSpec {
    #[serde(default)]
    pub s0: f64,
    #[serde(default)]
    pub c_tilde: f64,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_nodes")]
    pub radial_nodes: usize,
    /// Grid searched for β₀ when `beta0` is not given.
    #[serde(default = "default_beta_grid")]
    pub beta_grid: Vec<f64>,
    pub beta0: Option<f64>,
    #[serde(default = "default_coarse")]
    pub coarse: usize,
    #[serde(default = "default_fine")]
    pub fine: usize,
    /// Row-major coefficients of the second-order operator.
    #[serde(default = "identity_rows")]
    pub coeffs: [[f64; 3]; 3],
    pub functions: Vec<FunctionSpec>,
}

fn default_r0() -> f64 {
    0.9
}

fn default_nodes() -> usize {
    16
}

fn default_beta_grid() -> Vec<f64> {
    (1..=20).map(|i| 0.5 * i as f64).collect()
}

fn default_coarse() -> usize {
    5
}

fn default_fine() -> usize {
    13
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl CarlemanSpec {
    pub fn config(&self) -> CarlemanConfig {
        CarlemanConfig { beta: 1.0, s0: self.s0, c_tilde: self.c_tilde, r0: self.r0, radial_nodes: self.radial_nodes }
    }

    pub fn coeffs(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.coeffs[i][j])
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), CliError> {
        if let Some(m) = &self.medium {
            if m.layers.len() != m.radii.len() + 1 {
                return Err(CliError::Schema(format!("medium: {} layers but {} interface radii", m.layers.len(), m.radii.len())));
            }
        }
        if let Some(i) = &self.interface {
            if i.curve_points < 2 {
                return Err(CliError::Schema("interface.curve_points must be at least 2".into()));
            }
        }
        if let Some(c) = &self.carleman {
            if c.coarse < 2 || c.fine < 2 {
                return Err(CliError::Schema("carleman.coarse and carleman.fine must be at least 2".into()));
            }
        }
        Ok(())
    }

    pub fn medium(&self) -> Result<Medium, CliError> {
        self.medium.as_ref().ok_or_else(|| CliError::Missing("medium"))?.build()
    }

    pub fn rays(&self) -> Result<&RaySpec, CliError> {
        self.rays.as_ref().ok_or(CliError::Missing("rays"))
    }

    pub fn interface(&self) -> Result<&InterfaceSpec, CliError> {
        self.interface.as_ref().ok_or(CliError::Missing("interface"))
    }

    pub fn carleman(&self) -> Result<&CarlemanSpec, CliError> {
        self.carleman.as_ref().ok_or(CliError::Missing("carleman"))
    }

    pub fn layer_config(&self) -> LayerStripConfig {
        self.layers.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_layered_ball() {
        let s = Scenario::parse(
            r#"
            name = "ball"
            [medium]
            outer_radius = 1.0
            radii = [0.5]
            layers = [{ rho = 1.0, c = 1.0 }, { rho = [2.0, 0.0, -0.5], c = 1.5 }]
            [gravity]
            k0 = 2.0
            "#,
        )
        .unwrap();
        let m = s.medium().unwrap();
        assert_eq!(m.regions().len(), 2);
        assert_eq!(s.gravity.k0, 2.0);
        assert_eq!(s.gravity.solver, Solver::Radial);
    }

    #[test]
    fn rejects_layer_count_mismatch_and_unknown_keys() {
        let bad = "name = \"x\"\n[medium]\nouter_radius = 1.0\nlayers = [{ rho = 1.0, c = 1.0 }, { rho = 1.0, c = 1.0 }]\n";
        assert!(matches!(Scenario::parse(bad), Err(CliError::Schema(_))));
        assert!(matches!(Scenario::parse("name = \"x\"\nbogus = 1\n"), Err(CliError::Parse(_))));
    }

    #[test]
    fn fan_spreads_symmetrically() {
        let r = RaySpec {
            s_end: 1.0,
            tau: 1.0,
            family: FamilyKind::Plane,
            s_start: 0.05,
            sources: vec![],
            fan: Some(RayFan { x: [0.0; 3], count: 3, spread: 30.0 }),
        };
        let s = r.starts();
        assert_eq!(s.len(), 3);
        assert!((s[0].1.y + s[2].1.y).abs() < 1e-15 && s[1].1 == Vec3::x());
    }
}
