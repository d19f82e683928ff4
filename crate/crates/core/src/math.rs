//! Small shared numerics: vector aliases, multivariate polynomials, quadrature rules.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Symmetric part of a square matrix.
pub fn sym(m: &Mat3) -> Mat3 {
    0.5 * (m + m.transpose())
}

/// `u ⊗ v` with entries `u_i v_j`.
pub fn outer(u: &Vec3, v: &Vec3) -> Mat3 {
    u * v.transpose()
}

/// Projector onto the plane orthogonal to the unit vector `n`.
pub fn perp_projector(n: &Vec3) -> Mat3 {
    Mat3::identity() - outer(n, n)
}

/// Unit vector orthogonal to `n` built from the coordinate axis least aligned with it.
pub fn any_perpendicular(n: &Vec3) -> Vec3 {
    let a = n.abs();
    let axis = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    axis.cross(n).normalize()
}

/// Gauss–Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("positive order"));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect()
}

/// Adaptive integral of `f` over `[a, b]` to the given absolute tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    quadrature::integrate(f, a, b, abs_tol).integral
}

/// Sparse polynomial in three variables with exact differentiation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Poly3 {
    terms: BTreeMap<[u32; 3], f64>,
}

impl Poly3 {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::from_terms([([0, 0, 0], c)])
    }

    /// The coordinate function `x_axis`.
    pub fn coord(axis: usize) -> Self {
        let mut e = [0; 3];
        e[axis] = 1;
        Self::from_terms([(e, 1.0)])
    }

    pub fn from_terms<I: IntoIterator<Item = ([u32; 3], f64)>>(terms: I) -> Self {
        let mut p = Self::zero();
        for (e, c) in terms {
            p.add_term(e, c);
        }
        p
    }

    pub fn add_term(&mut self, e: [u32; 3], c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(e).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&e);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32; 3], &f64)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    /// Random polynomial of total degree `deg` with coefficients in `[-1, 1]`.
    pub fn random<R: Rng>(rng: &mut R, deg: u32) -> Self {
        let mut p = Self::zero();
        for i in 0..=deg {
            for j in 0..=(deg - i) {
                for k in 0..=(deg - i - j) {
                    p.add_term([i, j, k], rng.random_range(-1.0..1.0));
                }
            }
        }
        p
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * x.x.powi(e[0] as i32) * x.y.powi(e[1] as i32) * x.z.powi(e[2] as i32))
            .sum()
    }

    pub fn deriv(&self, axis: usize) -> Self {
        let mut p = Self::zero();
        for (e, c) in &self.terms {
            if e[axis] > 0 {
                let mut f = *e;
                f[axis] -= 1;
                p.add_term(f, c * e[axis] as f64);
            }
        }
        p
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut p = Self::zero();
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                p.add_term([a[0] + b[0], a[1] + b[1], a[2] + b[2]], ca * cb);
            }
        }
        p
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut p = self.clone();
        for (e, c) in &other.terms {
            p.add_term(*e, *c);
        }
        p
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_terms(self.terms.iter().map(|(e, c)| (*e, c * s)))
    }

    pub fn gradient(&self) -> [Poly3; 3] {
        [self.deriv(0), self.deriv(1), self.deriv(2)]
    }

    pub fn laplacian(&self) -> Self {
        (0..3).fold(Self::zero(), |acc, a| acc.add(&self.deriv(a).deriv(a)))
    }

    pub fn grad_at(&self, x: &Vec3) -> Vec3 {
        Vec3::new(
            self.deriv(0).eval(x),
            self.deriv(1).eval(x),
            self.deriv(2).eval(x),
        )
    }

    pub fn hessian_at(&self, x: &Vec3) -> Mat3 {
        let mut h = Mat3::zeros();
        for i in 0..3 {
            let di = self.deriv(i);
            for j in i..3 {
                let v = di.deriv(j).eval(x);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_derivatives_match_hand_computation() {
        // p = x^3 y + 2 z^2
        let p = Poly3::from_terms([([3, 1, 0], 1.0), ([0, 0, 2], 2.0)]);
        let x = Vec3::new(0.5, -1.5, 2.0);
        assert!((p.eval(&x) - (0.125 * -1.5 + 8.0)).abs() < 1e-14);
        let g = p.grad_at(&x);
        assert!((g.x - 3.0 * 0.25 * -1.5).abs() < 1e-14);
        assert!((g.y - 0.125).abs() < 1e-14);
        assert!((g.z - 8.0).abs() < 1e-14);
        let h = p.hessian_at(&x);
        assert!((h[(0, 0)] - 6.0 * 0.5 * -1.5).abs() < 1e-14);
        assert!((h[(0, 1)] - 0.75).abs() < 1e-14);
        assert!((h[(2, 2)] - 4.0).abs() < 1e-14);
        assert!((p.laplacian().eval(&x) - (-4.5 + 4.0)).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_is_exact_for_low_degree() {
        let s: f64 = gauss_legendre(4, 1.0, 3.0).iter().map(|(x, w)| w * x.powi(7)).sum();
        assert!((s - (3f64.powi(8) - 1.0) / 8.0).abs() < 1e-10);
    }

    #[test]
    fn perpendicular_is_unit_and_orthogonal() {
        for n in [Vec3::x(), Vec3::new(1.0, 2.0, -0.5).normalize()] {
            let t = any_perpendicular(&n);
            assert!((t.norm() - 1.0).abs() < 1e-14);
            assert!(t.dot(&n).abs() < 1e-14);
        }
    }
}
