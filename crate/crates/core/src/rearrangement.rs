//! Distribution functions, decreasing rearrangements and equimeasurability.
//!
//! Everything works on values sampled on a common quadrature cloud. The
//! rearranged distance is computed through the layer-cake formula: the
//! superlevel sets of two radially decreasing rearrangements are nested
//! balls, so `‖f* - g*‖₁ = ∫₀^∞ |λ_f(s) - λ_g(s)| ds`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Increasing levels starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid<T> {
    pub levels: Vec<T>,
}

impl<T: Real> LevelGrid<T> {
    /// `0` followed by `count` geometrically spaced levels from `smallest`
    /// to `top`, dense near zero.
    pub fn geometric(top: T, smallest: T, count: usize) -> Result<Self> {
        if !(top > T::zero()) || !(smallest > T::zero()) || smallest > top || count < 2 {
            return Err(Error::InvalidSpec(format!(
                "level grid needs 0 < smallest <= top and count >= 2 (got {}, {}, {count})",
                smallest.to_f64_lossy(),
                top.to_f64_lossy()
            )));
        }
        let ratio = (top / smallest).ln();
        let mut levels = vec![T::zero()];
        for k in 0..count {
            let t = T::from_count(k) / T::from_count(count - 1);
            levels.push(smallest * (ratio * t).exp());
        }
        *levels.last_mut().unwrap() = top;
        Ok(Self { levels })
    }

    /// Geometric grid covering `[0, 1.01·max]` of the given value sets.
    pub fn covering(values: &[&[T]], count: usize) -> Result<Self> {
        let top = values
            .iter()
            .flat_map(|v| v.iter())
            .fold(T::zero(), |a, b| a.max(*b));
        let top = top * T::lit(1.01);
        Self::geometric(top, top * T::lit(1e-6), count)
    }

    /// Inserts the midpoint of every interval.
    pub fn doubled(&self) -> Self {
        let mut levels = Vec::with_capacity(2 * self.levels.len());
        for w in self.levels.windows(2) {
            levels.push(w[0]);
            levels.push(T::lit(0.5) * (w[0] + w[1]));
        }
        levels.extend(self.levels.last());
        Self { levels }
    }

    pub fn top(&self) -> T {
        self.levels.last().copied().unwrap_or(T::zero())
    }
}

/// `λ(s) = |{f > s}|` on a level grid, with the radii of the balls of equal
/// 6D volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionProfile<T> {
    pub levels: Vec<T>,
    pub measures: Vec<T>,
    pub radii: Vec<T>,
}

impl<T: Real> DistributionProfile<T> {
    /// Two whitespace-separated columns `s λ(s)`.
    pub fn to_columns(&self) -> String {
        let mut out = String::from("# level measure\n");
        for (s, m) in self.levels.iter().zip(&self.measures) {
            let _ = writeln!(out, "{:.16e} {:.16e}", s.to_f64_lossy(), m.to_f64_lossy());
        }
        out
    }
}

/// Radius of the 6D ball of volume `vol`: `|B_r| = π³ r⁶ / 6`.
pub fn ball_radius<T: Real>(vol: T) -> T {
    let pi = T::PI();
    (T::lit(6.0) * vol / (pi * pi * pi)).powf(T::one() / T::lit(6.0))
}

/// Sorted view of `(value, weight)` answering `Σ w 1[f > s]` in `O(log n)`.
struct LevelIndex<T> {
    /// Values in decreasing order.
    values: Vec<T>,
    /// `cum[k] = Σ_{j<k} w_j` in the same order.
    cum: Vec<T>,
}

impl<T: Real> LevelIndex<T> {
    fn new(values: &[T], weights: &[T]) -> Self {
        let mut pairs: Vec<(T, T)> = values.iter().copied().zip(weights.iter().copied()).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut cum = Vec::with_capacity(pairs.len() + 1);
        cum.push(T::zero());
        let mut acc = T::zero();
        for (_, w) in &pairs {
            acc = acc + *w;
            cum.push(acc);
        }
        Self {
            values: pairs.into_iter().map(|p| p.0).collect(),
            cum,
        }
    }

    fn measure_above(&self, s: T) -> T {
        let k = self.values.partition_point(|v| *v > s);
        self.cum[k]
    }
}

/// How `|{f > s}|` is read off sampled values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LevelKernel {
    /// `Σ w 1[f > s]`.
    Sharp,
    /// `Σ w S((f - s)/δ)` with a C² step `S` of half-width
    /// `δ = relative_width · s`. For each `s` this is a Casimir, so it is
    /// still exactly equal for equimeasurable functions, and its integrand
    /// is smooth enough for the cloud to integrate.
    Smooth { relative_width: f64 },
}

/// Quintic step: 0 below -1, 1 above 1, C² in between.
fn smooth_step<T: Real>(t: T) -> T {
    if t <= -T::one() {
        return T::zero();
    }
    if t >= T::one() {
        return T::one();
    }
    let u = T::lit(0.5) * (t + T::one());
    u * u * u * (T::lit(10.0) + u * (T::lit(-15.0) + T::lit(6.0) * u))
}

pub fn distribution<T: Real>(values: &[T], weights: &[T], grid: &LevelGrid<T>) -> DistributionProfile<T> {
    distribution_with(values, weights, grid, LevelKernel::Sharp)
}

pub fn distribution_with<T: Real>(values: &[T], weights: &[T], grid: &LevelGrid<T>, kernel: LevelKernel) -> DistributionProfile<T> {
    let measures: Vec<T> = match kernel {
        LevelKernel::Sharp => {
            let idx = LevelIndex::new(values, weights);
            grid.levels.iter().map(|s| idx.measure_above(*s)).collect()
        }
        LevelKernel::Smooth { relative_width } => {
            let floor = grid
                .levels
                .iter()
                .copied()
                .filter(|s| *s > T::zero())
                .fold(T::infinity(), |a, b| a.min(b));
            grid.levels
                .par_iter()
                .map(|s| {
                    let delta = T::lit(relative_width) * s.max(floor);
                    values
                        .iter()
                        .zip(weights)
                        .fold(T::zero(), |a, (f, w)| a + *w * smooth_step((*f - *s) / delta))
                })
                .collect()
        }
    };
    DistributionProfile {
        levels: grid.levels.clone(),
        radii: measures.iter().map(|m| ball_radius(*m)).collect(),
        measures,
    }
}

fn check_cover<T: Real>(a: &[T], b: &[T], grid: &LevelGrid<T>) -> Result<()> {
    let needed = a.iter().chain(b).fold(T::zero(), |m, v| m.max(*v));
    if needed > grid.top() || grid.levels.first().map_or(true, |s| *s > T::zero()) {
        return Err(Error::LevelGrid {
            needed: needed.to_f64_lossy(),
            top: grid.top().to_f64_lossy(),
        });
    }
    Ok(())
}

/// `‖fa* - fb*‖₁ = ∫₀^∞ |λ_a - λ_b| ds`, trapezoidal on the level grid.
pub fn rearranged_l1_distance<T: Real>(fa: &[T], fb: &[T], weights: &[T], grid: &LevelGrid<T>) -> Result<T> {
    rearranged_l1_distance_with(fa, fb, weights, grid, LevelKernel::Sharp)
}

pub fn rearranged_l1_distance_with<T: Real>(
    fa: &[T],
    fb: &[T],
    weights: &[T],
    grid: &LevelGrid<T>,
    kernel: LevelKernel,
) -> Result<T> {
    check_cover(fa, fb, grid)?;
    let la = distribution_with(fa, weights, grid, kernel).measures;
    let lb = distribution_with(fb, weights, grid, kernel).measures;
    let mut acc = T::zero();
    for k in 1..grid.levels.len() {
        let h = grid.levels[k] - grid.levels[k - 1];
        let d0 = (la[k - 1] - lb[k - 1]).abs();
        let d1 = (la[k] - lb[k]).abs();
        acc = acc + T::lit(0.5) * h * (d0 + d1);
    }
    Ok(acc)
}

/// Exact layer-cake integral of the two step functions `λ_a`, `λ_b`.
pub fn rearranged_l1_exact<T: Real>(fa: &[T], fb: &[T], weights: &[T]) -> T {
    let ia = LevelIndex::new(fa, weights);
    let ib = LevelIndex::new(fb, weights);
    let mut breaks: Vec<T> = fa.iter().chain(fb).copied().filter(|v| *v > T::zero()).collect();
    breaks.push(T::zero());
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    breaks.dedup();
    let mut acc = T::zero();
    for w in breaks.windows(2) {
        // λ is constant on [w0, w1): evaluate at the left end.
        let d = (ia.measure_above(w[0]) - ib.measure_above(w[0])).abs();
        acc = acc + (w[1] - w[0]) * d;
    }
    acc
}

/// `max_s |λ_a(s) - λ_b(s)|` over the grid.
pub fn equimeasurability_defect<T: Real>(fa: &[T], fb: &[T], weights: &[T], grid: &LevelGrid<T>) -> T {
    equimeasurability_defect_with(fa, fb, weights, grid, LevelKernel::Sharp)
}

pub fn equimeasurability_defect_with<T: Real>(fa: &[T], fb: &[T], weights: &[T], grid: &LevelGrid<T>, kernel: LevelKernel) -> T {
    let la = distribution_with(fa, weights, grid, kernel).measures;
    let lb = distribution_with(fb, weights, grid, kernel).measures;
    la.iter()
        .zip(&lb)
        .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{PhaseCloudSpec, QuadratureCloud};
    use crate::radial_steady::{build_polytrope, PolytropeSpec};
    use proptest::prelude::*;

    #[test]
    fn indicator_of_a_ball() {
        let c = QuadratureCloud::<f64>::phase_with_bound(
            1.0,
            &PhaseCloudSpec {
                radial_panels: 1,
                radial_order: 8,
                ..Default::default()
            },
            |r| (1.0 - r * r).max(0.0).sqrt(),
        );
        let ones = vec![1.0; c.len()];
        let grid = LevelGrid::geometric(2.0, 1e-3, 40).unwrap();
        let p = distribution(&ones, &c.weights, &grid);
        let vol = std::f64::consts::PI.powi(3) / 6.0;
        for (s, m) in p.levels.iter().zip(&p.measures) {
            let want = if *s < 1.0 { c.volume() } else { 0.0 };
            assert_eq!(*m, want);
        }
        assert!((p.radii[0] - 1.0).abs() < 1e-3 * vol);
        assert!(p.to_columns().lines().count() == grid.levels.len() + 1);
    }

    #[test]
    fn doubled_density_differs_by_its_mass() {
        let s = build_polytrope(&PolytropeSpec::<f64>::default()).unwrap();
        let c = QuadratureCloud::phase(&s, &PhaseCloudSpec::default());
        let f: Vec<f64> = c.nodes.iter().map(|z| s.eval_f(z)).collect();
        let g: Vec<f64> = f.iter().map(|x| 2.0 * x).collect();
        let exact = rearranged_l1_exact(&f, &g, &c.weights);
        assert!((exact - 1.0).abs() < 1e-8, "{exact}");
        let grid = LevelGrid::covering(&[&f, &g], 4000).unwrap();
        let d = rearranged_l1_distance(&f, &g, &c.weights, &grid).unwrap();
        assert!((d - 1.0).abs() < 1e-2, "{d}");
        let fine = rearranged_l1_distance(&f, &g, &c.weights, &grid.doubled()).unwrap();
        assert!((fine - 1.0).abs() <= (d - 1.0).abs() + 1e-3);
        assert_eq!(rearranged_l1_distance(&f, &f, &c.weights, &grid).unwrap(), 0.0);
        assert_eq!(equimeasurability_defect(&f, &f, &c.weights, &grid), 0.0);
    }

    #[test]
    fn grid_must_cover_the_values() {
        let grid = LevelGrid::geometric(1.0, 1e-3, 10).unwrap();
        let r = rearranged_l1_distance(&[2.0], &[0.5], &[1.0], &grid);
        assert!(matches!(r, Err(Error::LevelGrid { .. })));
        assert!(LevelGrid::<f64>::geometric(1.0, 2.0, 10).is_err());
    }

    /// `|{e < c}| = ∫ 4πr² · (4π/3)(2(c - φ(r)))_+^{3/2} dr` by composite
    /// Simpson on a uniform grid.
    fn level_measure_oracle(s: &crate::radial_steady::SteadyState<f64>, level: f64) -> f64 {
        let cut = s.e0 - (level / s.amplitude).powf(1.0 / s.spec.mu);
        let n = 20_000;
        let h = s.r_support / n as f64;
        let g = |r: f64| {
            let u2 = 2.0 * (cut - s.eval_phi(r));
            if u2 <= 0.0 {
                0.0
            } else {
                16.0 / 3.0 * std::f64::consts::PI.powi(2) * r * r * u2.powf(1.5)
            }
        };
        let mut acc = g(0.0) + g(s.r_support);
        for i in 1..n {
            acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn polytrope_profile_matches_radial_oracle() {
        let s = build_polytrope(&PolytropeSpec::<f64>::default()).unwrap();
        let c = QuadratureCloud::phase(&s, &PhaseCloudSpec::default());
        let f: Vec<f64> = c.nodes.iter().map(|z| s.eval_f(z)).collect();
        let fmax = s.amplitude * (s.e0 - s.eval_phi(0.0)).powf(s.spec.mu);
        let grid = LevelGrid::geometric(fmax * 1.01, fmax * 1e-3, 12).unwrap();
        let p = distribution(&f, &c.weights, &grid);
        for (lev, m) in p.levels.iter().zip(&p.measures).skip(1) {
            let want = level_measure_oracle(&s, *lev);
            if want > 1e-3 * p.measures[1] {
                // Indicator integration on a product rule converges slowly.
                // Indicators integrate poorly on a product rule.
                assert!((m - want).abs() < 0.2 * want, "level {lev}: {m} vs {want}");
            }
            assert!((s.level_measure(*lev) - want).abs() < 1e-6 * want.max(1e-12));
        }
    }

    #[test]
    fn smoothed_profile_matches_convolved_oracle() {
        let s = build_polytrope(&PolytropeSpec::<f64>::default()).unwrap();
        let c = QuadratureCloud::phase(&s, &PhaseCloudSpec::default());
        let f: Vec<f64> = c.nodes.iter().map(|z| s.eval_f(z)).collect();
        let fmax = s.amplitude * (s.e0 - s.eval_phi(0.0)).powf(s.spec.mu);
        let grid = LevelGrid::geometric(fmax * 0.5, fmax * 1e-3, 8).unwrap();
        let rel = 0.5;
        let p = distribution_with(&f, &c.weights, &grid, LevelKernel::Smooth { relative_width: rel });
        let gl = crate::quad::GaussLegendre::new(40);
        for (lev, m) in p.levels.iter().zip(&p.measures).skip(1) {
            // ∫ S((f-s)/δ) = ∫ λ(t) S'((t-s)/δ)/δ dt with S' = (15/16)(1-u²)².
            let d = rel * lev;
            let want = gl.integrate(-1.0, 1.0, |u| {
                level_measure_oracle(&s, lev + d * u) * 15.0 / 16.0 * (1.0 - u * u).powi(2)
            });
            assert!((m - want).abs() < 0.08 * want, "level {lev}: {m} vs {want}");
        }
    }

    proptest! {
        #[test]
        fn profiles_are_monotone(values in prop::collection::vec(0.0f64..5.0, 1..60)) {
            let weights: Vec<f64> = (0..values.len()).map(|i| 1.0 + (i % 3) as f64).collect();
            let grid = LevelGrid::geometric(6.0, 1e-3, 30).unwrap();
            let p = distribution(&values, &weights, &grid);
            for w in p.measures.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            for w in p.radii.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            // Layer cake: ∫λ = Σ w f.
            let mass: f64 = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
            let zeros = vec![0.0; values.len()];
            let exact = rearranged_l1_exact(&values, &zeros, &weights);
            prop_assert!((exact - mass).abs() < 1e-9 * (1.0 + mass));
        }

        #[test]
        fn permutations_are_equimeasurable(values in prop::collection::vec(0.0f64..5.0, 2..40), shift in 1usize..39) {
            let n = values.len();
            let perm: Vec<f64> = (0..n).map(|i| values[(i + shift) % n]).collect();
            let weights = vec![0.5; n];
            let grid = LevelGrid::geometric(6.0, 1e-3, 30).unwrap();
            prop_assert_eq!(equimeasurability_defect(&values, &perm, &weights, &grid), 0.0);
            prop_assert_eq!(rearranged_l1_exact(&values, &perm, &weights), 0.0);
        }
    }
}
