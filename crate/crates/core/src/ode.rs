//! Dormand–Prince 5(4) stepping on flat `f64` state vectors.

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12 }
    }
}

/// One Dormand–Prince step of size `h`; returns the 5th-order solution and the
/// scaled RMS error estimate (accept when `<= 1`).
pub fn dp45_step<F>(f: &F, s: f64, y: &[f64], h: f64, tol: Tolerance) -> (Vec<f64>, f64)
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    f(s, y, &mut k[0]);
    for stage in 1..7 {
        for i in 0..n {
            let mut acc = y[i];
            for (j, kj) in k.iter().enumerate().take(stage) {
                acc += h * A[stage][j] * kj[i];
            }
            tmp[i] = acc;
        }
        f(s + C[stage] * h, &tmp, &mut k[stage]);
    }
    let mut y5 = vec![0.0; n];
    let mut err = 0.0;
    for i in 0..n {
        let mut d5 = 0.0;
        let mut d4 = 0.0;
        for j in 0..7 {
            d5 += B5[j] * k[j][i];
            d4 += B4[j] * k[j][i];
        }
        y5[i] = y[i] + h * d5;
        let scale = tol.atol + tol.rtol * y[i].abs().max(y5[i].abs());
        let e = h * (d5 - d4) / scale;
        err += e * e;
    }
    (y5, (err / n as f64).sqrt())
}

/// Next step size from the current error estimate.
pub fn next_step(h: f64, err: f64) -> f64 {
    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
    h * factor
}

/// Classical RK4 step.
pub fn rk4_step<F>(f: &F, s: f64, y: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    f(s, y, &mut k1);
    let mid: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k1[i]).collect();
    f(s + 0.5 * h, &mid, &mut k2);
    let mid: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k2[i]).collect();
    f(s + 0.5 * h, &mid, &mut k3);
    let end: Vec<f64> = (0..n).map(|i| y[i] + h * k3[i]).collect();
    f(s + h, &end, &mut k4);
    (0..n).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_fifth_order() {
        let f = |_: f64, y: &[f64], d: &mut [f64]| d[0] = -y[0];
        let tol = Tolerance::default();
        let errs: Vec<f64> = [0.2, 0.1]
            .iter()
            .map(|&h| {
                let mut y = vec![1.0];
                let mut s = 0.0;
                while s < 1.0 - 1e-12 {
                    y = dp45_step(&f, s, &y, h, tol).0;
                    s += h;
                }
                (y[0] - (-1.0f64).exp()).abs()
            })
            .collect();
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 4.5, "rate {rate}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let f = |s: f64, _: &[f64], d: &mut [f64]| d[0] = s.cos();
        let e = |h: f64| {
            let mut y = vec![0.0];
            let mut s = 0.0;
            for _ in 0..(1.0 / h).round() as usize {
                y = rk4_step(&f, s, &y, h);
                s += h;
            }
            (y[0] - 1f64.sin()).abs()
        };
        assert!((e(0.1) / e(0.05)).log2() > 3.8);
    }
}
