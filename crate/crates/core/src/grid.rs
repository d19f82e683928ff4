//! Uniform Cartesian grids with finite-difference stencils, the Saint-Venant
//! operator and the residual of the coupled `(β₋, Y)` elliptic system.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Uniform grid of `n³` nodes on `[-half, half]³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub n: usize,
    pub half: f64,
}

impl Grid {
    pub fn new(n: usize, half: f64) -> Self {
        Self { n, half }
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half + self.h() * i as f64
    }

    pub fn point(&self, [i, j, k]: [usize; 3]) -> Vec3 {
        Vec3::new(self.coord(i), self.coord(j), self.coord(k))
    }

    pub fn index(&self, [i, j, k]: [usize; 3]) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Nodes at least `margin` nodes away from the boundary.
    pub fn interior(&self, margin: usize) -> Vec<[usize; 3]> {
        let r = margin..self.n.saturating_sub(margin);
        let mut v = Vec::new();
        for i in r.clone() {
            for j in r.clone() {
                for k in r.clone() {
                    v.push([i, j, k]);
                }
            }
        }
        v
    }

    fn require(&self, ghost: usize) -> Result<()> {
        if self.n < 2 * ghost + 3 {
            return Err(Error::GridTooCoarse(format!("{} nodes per axis, need at least {}", self.n, 2 * ghost + 3)));
        }
        Ok(())
    }
}

/// Scalar samples on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn sample<F: Fn(&Vec3) -> f64 + Sync>(grid: Grid, f: F) -> Self {
        let data = (0..grid.len())
            .into_par_iter()
            .map(|m| {
                let (i, r) = (m / (grid.n * grid.n), m % (grid.n * grid.n));
                f(&grid.point([i, r / grid.n, r % grid.n]))
            })
            .collect();
        Self { grid, data }
    }

    pub fn at(&self, idx: [usize; 3]) -> f64 {
        self.data[self.grid.index(idx)]
    }

    fn shifted(&self, idx: [usize; 3], axis: usize, d: isize) -> f64 {
        let mut q = idx;
        q[axis] = (q[axis] as isize + d) as usize;
        self.at(q)
    }

    fn shifted2(&self, idx: [usize; 3], a: usize, da: isize, b: usize, db: isize) -> f64 {
        let mut q = idx;
        q[a] = (q[a] as isize + da) as usize;
        q[b] = (q[b] as isize + db) as usize;
        self.at(q)
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self { grid: self.grid, data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect() }
    }
}

/// Finite-difference accuracy order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Order {
    Second,
    Fourth,
}

impl Order {
    pub fn ghost(self) -> usize {
        match self {
            Order::Second => 1,
            Order::Fourth => 2,
        }
    }
}

pub fn d1(f: &ScalarField, idx: [usize; 3], axis: usize, order: Order) -> f64 {
    let h = f.grid.h();
    let s = |d| f.shifted(idx, axis, d);
    match order {
        Order::Second => (s(1) - s(-1)) / (2.0 * h),
        Order::Fourth => (s(-2) - 8.0 * s(-1) + 8.0 * s(1) - s(2)) / (12.0 * h),
    }
}

pub fn d2(f: &ScalarField, idx: [usize; 3], a: usize, b: usize, order: Order) -> f64 {
    let h = f.grid.h();
    if a == b {
        let s = |d| f.shifted(idx, a, d);
        return match order {
            Order::Second => (s(1) - 2.0 * s(0) + s(-1)) / (h * h),
            Order::Fourth => (-s(2) + 16.0 * s(1) - 30.0 * s(0) + 16.0 * s(-1) - s(-2)) / (12.0 * h * h),
        };
    }
    let w: &[(isize, f64)] = match order {
        Order::Second => &[(-1, -0.5), (1, 0.5)],
        Order::Fourth => &[(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)],
    };
    let mut acc = 0.0;
    for &(da, wa) in w {
        for &(db, wb) in w {
            acc += wa * wb * f.shifted2(idx, a, da, b, db);
        }
    }
    acc / (h * h)
}

pub fn laplacian_at(f: &ScalarField, idx: [usize; 3], order: Order) -> f64 {
    (0..3).map(|a| d2(f, idx, a, a, order)).sum()
}

pub fn gradient_at(f: &ScalarField, idx: [usize; 3], order: Order) -> Vec3 {
    Vec3::new(d1(f, idx, 0, order), d1(f, idx, 1, order), d1(f, idx, 2, order))
}

/// Apply a pointwise stencil on nodes with `margin` ghost layers; other nodes are NaN.
fn apply(f: &ScalarField, margin: usize, op: impl Fn(&ScalarField, [usize; 3]) -> f64 + Sync) -> ScalarField {
    let g = f.grid;
    let data = (0..g.len())
        .into_par_iter()
        .map(|m| {
            let idx = [m / (g.n * g.n), (m / g.n) % g.n, m % g.n];
            if idx.iter().all(|&c| c >= margin && c + margin < g.n) {
                op(f, idx)
            } else {
                f64::NAN
            }
        })
        .collect();
    ScalarField { grid: g, data }
}

pub fn laplacian(f: &ScalarField, margin: usize, order: Order) -> ScalarField {
    apply(f, margin, |f, i| laplacian_at(f, i, order))
}

/// Symmetric 2-tensor samples on a grid, one scalar field per component.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub grid: Grid,
    pub comp: [[ScalarField; 3]; 3],
}

impl TensorField {
    pub fn sample<F: Fn(&Vec3) -> Mat3 + Sync>(grid: Grid, f: F) -> Self {
        let vals: Vec<Mat3> = (0..grid.len())
            .into_par_iter()
            .map(|m| f(&grid.point([m / (grid.n * grid.n), (m / grid.n) % grid.n, m % grid.n])))
            .collect();
        let comp = std::array::from_fn(|i| {
            std::array::from_fn(|j| ScalarField { grid, data: vals.iter().map(|v| v[(i, j)]).collect() })
        });
        Self { grid, comp }
    }
}

/// Saint-Venant operator at one node:
/// `(WB)_{ijkl} = B_{ij,kl} + B_{kl,ij} - B_{il,jk} - B_{jk,il}`.
pub fn saint_venant_at(b: &TensorField, idx: [usize; 3], order: Order) -> [[[[f64; 3]; 3]; 3]; 3] {
    let mut dd = [[[[0.0; 3]; 3]; 3]; 3];
    for (i, row) in dd.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            for k in 0..3 {
                for l in k..3 {
                    let v = d2(&b.comp[i][j], idx, k, l, order);
                    cell[k][l] = v;
                    cell[l][k] = v;
                }
            }
        }
    }
    let mut w = [[[[0.0; 3]; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    w[i][j][k][l] = dd[i][j][k][l] + dd[k][l][i][j] - dd[i][l][j][k] - dd[j][k][i][l];
                }
            }
        }
    }
    w
}

/// Largest `|WB|` entry over nodes with enough ghost layers.
pub fn saint_venant_max(b: &TensorField, order: Order) -> Result<f64> {
    b.grid.require(order.ghost())?;
    Ok(b.grid
        .interior(order.ghost())
        .par_iter()
        .map(|&idx| {
            let w = saint_venant_at(b, idx, order);
            w.iter().flatten().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
        })
        .reduce(|| 0.0, f64::max))
}

/// `Σ_{ij} (WB)_{iijj} = 2Δ tr B - 2 div div B` at every interior node.
pub fn saint_venant_contraction(b: &TensorField, order: Order) -> Result<ScalarField> {
    b.grid.require(order.ghost())?;
    let m = order.ghost();
    let probe = &b.comp[0][0];
    Ok(apply(probe, m, |_, idx| {
        let w = saint_venant_at(b, idx, order);
        (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| w[i][i][j][j]).sum()
    }))
}

/// Inputs of the `(β₋, Y)` system on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticSystem {
    pub beta_minus: ScalarField,
    pub y: ScalarField,
    pub beta_plus: ScalarField,
    /// `g = ρ̃`.
    pub g: ScalarField,
    /// `h = ∇Φ + ∇Φ̃`.
    pub h: [ScalarField; 3],
    pub k0: f64,
}

/// Residuals of
/// `Δ²β₋ + Δ(∇β₊·∇β₋) + k₀Δ(g(e^{2β₋}-1)) - Δ(h·∇Y)` and `Δ²Y - k₀Δ(g(e^{2β₋}-1))`
/// with second-order stencils; valid on nodes two layers in from the boundary.
pub fn elliptic_residual(sys: &EllipticSystem) -> Result<(ScalarField, ScalarField)> {
    let g = sys.beta_minus.grid;
    g.require(2)?;
    let o = Order::Second;
    let grad_dot = |a: &ScalarField, b: &ScalarField| {
        apply(a, 1, |a, i| gradient_at(a, i, o).dot(&gradient_at(b, i, o)))
    };
    let mass = sys.beta_minus.zip(&sys.g, |bm, g| g * (2.0 * bm).exp_m1());
    let h_dot_grad_y = apply(&sys.y, 1, |y, i| {
        let gy = gradient_at(y, i, o);
        (0..3).map(|a| sys.h[a].at(i) * gy[a]).sum()
    });
    let lap = |f: &ScalarField| laplacian(f, 1, o);
    let lap2 = |f: &ScalarField| laplacian(&lap(f), 2, o);
    let bi_b = lap2(&sys.beta_minus);
    let coupling = laplacian(&grad_dot(&sys.beta_plus, &sys.beta_minus), 2, o);
    let src = laplacian(&mass, 2, o);
    let hy = laplacian(&h_dot_grad_y, 2, o);
    let bi_y = lap2(&sys.y);
    let k0 = sys.k0;
    let r1 = ScalarField {
        grid: g,
        data: (0..g.len()).map(|m| bi_b.data[m] + coupling.data[m] + k0 * src.data[m] - hy.data[m]).collect(),
    };
    let r2 = ScalarField { grid: g, data: (0..g.len()).map(|m| bi_y.data[m] - k0 * src.data[m]).collect() };
    Ok((r1, r2))
}

/// Largest finite absolute value.
pub fn max_abs(f: &ScalarField) -> f64 {
    f.data.iter().filter(|v| v.is_finite()).fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Poly3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stencils_exact_on_low_degree() {
        let g = Grid::new(11, 1.0);
        let p = Poly3::from_terms([([3, 1, 0], 1.0), ([0, 2, 2], -0.5), ([1, 1, 1], 2.0)]);
        let f = ScalarField::sample(g, |x| p.eval(x));
        let idx = [4, 6, 5];
        let x = g.point(idx);
        let hess = p.hessian_at(&x);
        for a in 0..3 {
            for b in 0..3 {
                assert!((d2(&f, idx, a, b, Order::Fourth) - hess[(a, b)]).abs() < 1e-10);
            }
            assert!((d1(&f, idx, a, Order::Fourth) - p.grad_at(&x)[a]).abs() < 1e-11);
        }
    }

    #[test]
    fn saint_venant_annihilates_hessian_and_constants() {
        let g = Grid::new(9, 1.0);
        let f = Poly3::from_terms([([3, 1, 0], 1.0)]);
        let b = TensorField::sample(g, |x| f.hessian_at(x));
        assert!(saint_venant_max(&b, Order::Fourth).unwrap() < 1e-9);
        let c = Mat3::new(1.0, 2.0, 0.5, 2.0, -1.0, 0.3, 0.5, 0.3, 4.0);
        let b = TensorField::sample(g, |_| c);
        assert!(saint_venant_max(&b, Order::Fourth).unwrap() < 1e-9);
    }

    #[test]
    fn saint_venant_annihilates_symmetric_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<Poly3> = (0..3).map(|_| Poly3::random(&mut rng, 4)).collect();
        let g = Grid::new(9, 0.8);
        let b = TensorField::sample(g, |x| {
            let j = Mat3::from_rows(&[v[0].grad_at(x).transpose(), v[1].grad_at(x).transpose(), v[2].grad_at(x).transpose()]);
            (j + j.transpose()) * 0.5
        });
        assert!(saint_venant_max(&b, Order::Fourth).unwrap() < 1e-8);
    }

    #[test]
    fn contraction_identity() {
        // B = φ I gives Σ W_{iijj} = 4Δφ.
        let p = Poly3::from_terms([([2, 1, 1], 1.0), ([0, 0, 4], 0.25)]);
        let g = Grid::new(9, 1.0);
        let b = TensorField::sample(g, |x| Mat3::identity() * p.eval(x));
        let c = saint_venant_contraction(&b, Order::Fourth).unwrap();
        let lap = p.laplacian();
        for idx in g.interior(2) {
            assert!((c.at(idx) - 4.0 * lap.eval(&g.point(idx))).abs() < 1e-9);
        }
    }

    #[test]
    fn elliptic_residual_zero_and_coarse() {
        let g = Grid::new(9, 1.0);
        let z = ScalarField::sample(g, |_| 0.0);
        let sys = EllipticSystem {
            beta_minus: z.clone(),
            y: z.clone(),
            beta_plus: ScalarField::sample(g, |x| x.x),
            g: ScalarField::sample(g, |_| 1.0),
            h: [z.clone(), z.clone(), z.clone()],
            k0: 1.0,
        };
        let (r1, r2) = elliptic_residual(&sys).unwrap();
        assert_eq!(max_abs(&r1), 0.0);
        assert_eq!(max_abs(&r2), 0.0);
        let tiny = Grid::new(5, 1.0);
        let z = ScalarField::sample(tiny, |_| 0.0);
        let sys = EllipticSystem { beta_minus: z.clone(), y: z.clone(), beta_plus: z.clone(), g: z.clone(), h: [z.clone(), z.clone(), z], k0: 1.0 };
        assert!(matches!(elliptic_residual(&sys), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn elliptic_residual_second_order() {
        // Richardson sequence at the origin for smooth manufactured fields.
        let at_origin = |n: usize| {
            let g = Grid::new(n, 0.5);
            let sys = EllipticSystem {
                beta_minus: ScalarField::sample(g, |x| 0.3 * (x.x + 0.5 * x.y).sin() * (x.z).cos()),
                y: ScalarField::sample(g, |x| 0.2 * (x.x * x.y + x.z).cos()),
                beta_plus: ScalarField::sample(g, |x| 0.1 * x.norm_squared() + x.y),
                g: ScalarField::sample(g, |x| 1.0 + 0.2 * x.x),
                h: [
                    ScalarField::sample(g, |x| x.x),
                    ScalarField::sample(g, |x| -0.5 * x.y),
                    ScalarField::sample(g, |x| 0.3 * x.z + 0.1),
                ],
                k0: 0.7,
            };
            let (r1, r2) = elliptic_residual(&sys).unwrap();
            let c = (n - 1) / 2;
            (r1.at([c, c, c]), r2.at([c, c, c]))
        };
        let v: Vec<(f64, f64)> = [17, 33, 65].iter().map(|&n| at_origin(n)).collect();
        let rate1 = ((v[0].0 - v[1].0) / (v[1].0 - v[2].0)).abs().log2();
        let rate2 = ((v[0].1 - v[1].1) / (v[1].1 - v[2].1)).abs().log2();
        assert!((rate1 - 2.0).abs() < 0.2 && (rate2 - 2.0).abs() < 0.2, "{rate1} {rate2}");
    }
}
