//! Adaptive Dormand-Prince 5(4) integration of autonomous systems.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct StepControl<T> {
    pub atol: T,
    pub rtol: T,
    /// Smallest admissible `|h|` relative to the span of the integration.
    pub min_step_ratio: T,
    pub max_steps: usize,
}

impl<T: Real> StepControl<T> {
    pub fn with_tol(tol: T) -> Self {
        Self {
            atol: tol,
            rtol: tol,
            min_step_ratio: T::lit(1e-13),
            max_steps: 1_000_000,
        }
    }
}

// Butcher tableau (nodes are implicit: the system is autonomous).
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights equal the last row of A; error = fifth - fourth.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(y)` from `t = 0` and returns the state at each
/// checkpoint. Checkpoints must be monotone in one direction from 0; the
/// integrator lands on each exactly.
pub fn integrate<T: Real, const N: usize>(
    f: impl Fn(&[T; N]) -> [T; N],
    y0: [T; N],
    checkpoints: &[T],
    ctl: &StepControl<T>,
) -> Result<Vec<[T; N]>> {
    let mut out = Vec::with_capacity(checkpoints.len());
    let Some(&last) = checkpoints.last() else {
        return Ok(out);
    };
    let span = last.abs();
    let dir = if last < T::zero() { -T::one() } else { T::one() };
    let min_step = span * ctl.min_step_ratio;
    let mut y = y0;
    let mut t = T::zero();
    let mut k1 = f(&y);
    let mut h = initial_step(&y, &k1, ctl, span) * dir;
    let mut steps = 0usize;

    for &target in checkpoints {
        debug_assert!((target - t) * dir >= T::zero(), "checkpoints must be monotone");
        while (target - t) * dir > T::zero() {
            steps += 1;
            if steps > ctl.max_steps {
                return Err(Error::StepUnderflow {
                    at: t.to_f64_lossy(),
                    step: h.to_f64_lossy(),
                });
            }
            let remaining = target - t;
            let landing = h.abs() >= remaining.abs();
            let step = if landing { remaining } else { h };

            let mut k = [[T::zero(); N]; 7];
            k[0] = k1;
            for s in 1..7 {
                let mut ys = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        let c = step * T::lit(a);
                        for i in 0..N {
                            ys[i] = ys[i] + c * kj[i];
                        }
                    }
                }
                k[s] = f(&ys);
            }
            // y_new is the stage-6 input (FSAL): recompute it explicitly.
            let mut ynew = y;
            for (j, kj) in k.iter().enumerate().take(6) {
                let a = A[6][j];
                if a != 0.0 {
                    let c = step * T::lit(a);
                    for i in 0..N {
                        ynew[i] = ynew[i] + c * kj[i];
                    }
                }
            }
            let mut err = T::zero();
            for i in 0..N {
                let mut e = T::zero();
                for (s, ks) in k.iter().enumerate() {
                    if E[s] != 0.0 {
                        e = e + T::lit(E[s]) * ks[i];
                    }
                }
                let sc = ctl.atol + ctl.rtol * y[i].abs().max(ynew[i].abs());
                err = err.max((step * e).abs() / sc);
            }

            if err <= T::one() {
                t = if landing { target } else { t + step };
                y = ynew;
                k1 = k[6];
            }
            let factor = if err == T::zero() {
                T::lit(5.0)
            } else {
                (T::lit(0.9) * err.powf(T::lit(-0.2))).max(T::lit(0.2)).min(T::lit(5.0))
            };
            if err <= T::one() && landing {
                // Keep the proposed step when the accepted one was truncated.
                h = h.abs().max(step.abs() * factor) * dir;
            } else {
                h = step * factor;
            }
            if h.abs() < min_step {
                return Err(Error::StepUnderflow {
                    at: t.to_f64_lossy(),
                    step: h.to_f64_lossy(),
                });
            }
        }
        out.push(y);
    }
    Ok(out)
}

fn initial_step<T: Real, const N: usize>(y: &[T; N], dy: &[T; N], ctl: &StepControl<T>, span: T) -> T {
    let mut d0 = T::zero();
    let mut d1 = T::zero();
    for i in 0..N {
        let sc = ctl.atol + ctl.rtol * y[i].abs();
        d0 = d0.max(y[i].abs() / sc);
        d1 = d1.max(dy[i].abs() / sc);
    }
    let guess = if d1 <= T::lit(1e-10) || d0 <= T::lit(1e-10) {
        T::lit(1e-2) * span
    } else {
        T::lit(0.01) * d0 / d1
    };
    guess.min(span).max(span * T::lit(1e-8))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_is_accurate() {
        let f = |y: &[f64; 2]| [y[1], -y[0]];
        let ctl = StepControl::with_tol(1e-12);
        let ts: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let ys = integrate(f, [1.0, 0.0], &ts, &ctl).unwrap();
        for (t, y) in ts.iter().zip(&ys) {
            assert!((y[0] - t.cos()).abs() < 1e-10);
            assert!((y[1] + t.sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_integration_and_empty_checkpoints() {
        let f = |y: &[f64; 1]| [y[0]];
        let ctl = StepControl::with_tol(1e-12);
        let y = integrate(f, [1.0], &[-2.0], &ctl).unwrap();
        assert!((y[0][0] - (-2f64).exp()).abs() < 1e-11);
        assert!(integrate(f, [1.0], &[], &ctl).unwrap().is_empty());
        let same = integrate(f, [1.0], &[0.0], &ctl).unwrap();
        assert_eq!(same[0][0], 1.0);
    }

    #[test]
    fn blow_up_reports_step_underflow() {
        let f = |y: &[f64; 1]| [y[0] * y[0]];
        let ctl = StepControl::with_tol(1e-10);
        let r = integrate(f, [1.0], &[2.0], &ctl);
        assert!(matches!(r, Err(Error::StepUnderflow { .. })));
    }
}
