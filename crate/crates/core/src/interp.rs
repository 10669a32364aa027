//! Piecewise quintic Hermite interpolation of tabulated radial profiles.
//!
//! Each node carries value, first and second derivative, so the interpolant
//! is C² and its derivatives are the exact derivatives of the same piecewise
//! polynomial. Gradients and Hessians built from it are therefore mutually
//! consistent, which the phase-space flows rely on.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuinticHermite<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub dy: Vec<T>,
    pub d2y: Vec<T>,
}

impl<T: Real> QuinticHermite<T> {
    pub fn new(x: Vec<T>, y: Vec<T>, dy: Vec<T>, d2y: Vec<T>) -> Self {
        assert!(x.len() >= 2, "need at least two nodes");
        assert!(x.len() == y.len() && y.len() == dy.len() && dy.len() == d2y.len());
        debug_assert!(x.windows(2).all(|w| w[1] > w[0]), "abscissae must increase");
        Self { x, y, dy, d2y }
    }

    pub fn x_min(&self) -> T {
        self.x[0]
    }

    pub fn x_max(&self) -> T {
        self.x[self.x.len() - 1]
    }

    fn interval(&self, t: T) -> usize {
        let n = self.x.len();
        let i = self.x.partition_point(|xi| *xi <= t);
        i.clamp(1, n - 1) - 1
    }

    /// Value and first two derivatives at `t` (clamped to the table range).
    pub fn eval3(&self, t: T) -> (T, T, T) {
        let t = t.max(self.x_min()).min(self.x_max());
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let u = (t - self.x[i]) / h;
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (m0, m1) = (self.dy[i] * h, self.dy[i + 1] * h);
        let (c0, c1) = (self.d2y[i] * h * h, self.d2y[i + 1] * h * h);

        let u2 = u * u;
        let u3 = u2 * u;
        let u4 = u3 * u;
        let u5 = u4 * u;
        let l = T::lit;

        // Quintic Hermite basis and its derivatives in u.
        let h0 = l(1.0) - l(10.0) * u3 + l(15.0) * u4 - l(6.0) * u5;
        let h1 = u - l(6.0) * u3 + l(8.0) * u4 - l(3.0) * u5;
        let h2 = l(0.5) * u2 - l(1.5) * u3 + l(1.5) * u4 - l(0.5) * u5;
        let h3 = l(0.5) * u3 - u4 + l(0.5) * u5;
        let h4 = -l(4.0) * u3 + l(7.0) * u4 - l(3.0) * u5;
        let h5 = l(10.0) * u3 - l(15.0) * u4 + l(6.0) * u5;

        let d0 = -l(30.0) * u2 + l(60.0) * u3 - l(30.0) * u4;
        let d1 = l(1.0) - l(18.0) * u2 + l(32.0) * u3 - l(15.0) * u4;
        let d2 = u - l(4.5) * u2 + l(6.0) * u3 - l(2.5) * u4;
        let d3 = l(1.5) * u2 - l(4.0) * u3 + l(2.5) * u4;
        let d4 = -l(12.0) * u2 + l(28.0) * u3 - l(15.0) * u4;
        let d5 = -d0;

        let s0 = -l(60.0) * u + l(180.0) * u2 - l(120.0) * u3;
        let s1 = -l(36.0) * u + l(96.0) * u2 - l(60.0) * u3;
        let s2 = l(1.0) - l(9.0) * u + l(18.0) * u2 - l(10.0) * u3;
        let s3 = l(3.0) * u - l(12.0) * u2 + l(10.0) * u3;
        let s4 = -l(24.0) * u + l(84.0) * u2 - l(60.0) * u3;
        let s5 = -s0;

        let val = y0 * h0 + m0 * h1 + c0 * h2 + c1 * h3 + m1 * h4 + y1 * h5;
        let der = (y0 * d0 + m0 * d1 + c0 * d2 + c1 * d3 + m1 * d4 + y1 * d5) / h;
        let sec = (y0 * s0 + m0 * s1 + c0 * s2 + c1 * s3 + m1 * s4 + y1 * s5) / (h * h);
        (val, der, sec)
    }

    pub fn eval(&self, t: T) -> T {
        self.eval3(t).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_quintics_exactly() {
        let p = |x: f64| 1.0 - 2.0 * x + 0.5 * x.powi(3) - 0.1 * x.powi(5);
        let dp = |x: f64| -2.0 + 1.5 * x * x - 0.5 * x.powi(4);
        let d2p = |x: f64| 3.0 * x - 2.0 * x.powi(3);
        let xs: Vec<f64> = vec![0.0, 0.3, 1.1, 1.5, 2.0];
        let it = QuinticHermite::new(
            xs.clone(),
            xs.iter().map(|x| p(*x)).collect(),
            xs.iter().map(|x| dp(*x)).collect(),
            xs.iter().map(|x| d2p(*x)).collect(),
        );
        for k in 0..=40 {
            let t = 2.0 * k as f64 / 40.0;
            let (v, d, s) = it.eval3(t);
            assert!((v - p(t)).abs() < 1e-13);
            assert!((d - dp(t)).abs() < 1e-12);
            assert!((s - d2p(t)).abs() < 1e-11);
        }
    }

    #[test]
    fn derivatives_match_finite_differences_of_value() {
        let xs: Vec<f64> = (0..20).map(|i| (i as f64 * 0.17).powf(1.3)).collect();
        let it = QuinticHermite::new(
            xs.clone(),
            xs.iter().map(|x| x.sin()).collect(),
            xs.iter().map(|x| x.cos()).collect(),
            xs.iter().map(|x| -x.sin()).collect(),
        );
        let h = 1e-5;
        for t in [0.05, 0.6, 1.37, 2.2] {
            let fd = (it.eval(t + h) - it.eval(t - h)) / (2.0 * h);
            assert!((fd - it.eval3(t).1).abs() < 1e-8);
        }
    }
}
