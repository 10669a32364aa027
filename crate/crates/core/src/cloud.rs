//! Deterministic phase-space quadrature clouds.
//!
//! Two layouts are provided:
//!
//! * [`PhaseCloudSpec`]: product Gauss rule in `(r, x̂, t, v̂)` with
//!   `x = r x̂`, `v = t V(r) v̂`. `V(r)` is the escape speed of the steady
//!   state, optionally widened by a margin so that displaced supports are
//!   still covered. Radii use geometrically graded panels because polytropes
//!   of large index are strongly concentrated.
//! * [`BoxCloudSpec`]: tensor Gauss-Legendre rule on an axis-aligned box,
//!   used for norms of fields supported on such a box.

use serde::{Deserialize, Serialize};

use crate::quad::{composite, GaussLegendre};
use crate::radial_steady::SteadyState;
use crate::scalar::{Phase, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseCloudSpec {
    /// Number of geometric radial panels (each half as wide as the next).
    pub radial_panels: usize,
    /// Gauss order per radial panel.
    pub radial_order: usize,
    /// Gauss order in `cos θ` on the position sphere (azimuth uses twice
    /// as many).
    pub angular_order: usize,
    /// Same for the velocity sphere.
    pub velocity_angular_order: usize,
    /// Gauss order in the normalised speed `t`.
    pub speed_order: usize,
    /// Extra spatial reach as a fraction of the support radius.
    pub margin_x: f64,
    /// Extra speed as a fraction of the central escape speed.
    pub margin_v: f64,
}

impl Default for PhaseCloudSpec {
    fn default() -> Self {
        Self {
            radial_panels: 8,
            radial_order: 6,
            angular_order: 3,
            velocity_angular_order: 3,
            speed_order: 6,
            margin_x: 0.0,
            margin_v: 0.0,
        }
    }
}

impl PhaseCloudSpec {
    /// Multiplies every per-axis order by `factor` (rounded, at least 1).
    pub fn refined(&self, factor: f64) -> Self {
        let scale = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        Self {
            radial_panels: self.radial_panels,
            radial_order: scale(self.radial_order),
            angular_order: scale(self.angular_order),
            velocity_angular_order: scale(self.velocity_angular_order),
            speed_order: scale(self.speed_order),
            ..*self
        }
    }

    /// Layout used for stationarity residuals: the velocity sphere carries
    /// most of the angular content of the test functions.
    pub fn stationarity() -> Self {
        Self {
            radial_order: 4,
            angular_order: 4,
            velocity_angular_order: 6,
            speed_order: 8,
            ..Self::default()
        }
    }

    pub fn with_margin(&self, margin_x: f64, margin_v: f64) -> Self {
        Self {
            margin_x,
            margin_v,
            ..*self
        }
    }

    pub fn node_count(&self) -> usize {
        let sx = 2 * self.angular_order * self.angular_order;
        let sv = 2 * self.velocity_angular_order * self.velocity_angular_order;
        self.radial_panels * self.radial_order * sx * sv * self.speed_order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCloudSpec {
    pub half_widths: [f64; 6],
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CloudProvenance {
    Phase(PhaseCloudSpec),
    Box(BoxCloudSpec),
    Custom(String),
}

#[derive(Debug, Clone)]
pub struct QuadratureCloud<T> {
    pub nodes: Vec<Phase<T>>,
    pub weights: Vec<T>,
    pub provenance: CloudProvenance,
}

/// Gauss product rule on the unit sphere: `(direction, weight)`.
fn sphere_rule<T: Real>(order: usize) -> Vec<([T; 3], T)> {
    let gl = GaussLegendre::new(order);
    let n_az = 2 * order;
    let two_pi = T::lit(2.0) * T::PI();
    let daz = two_pi / T::from_count(n_az);
    let mut out = Vec::with_capacity(order * n_az);
    for (c, w) in gl.nodes.iter().zip(&gl.weights) {
        let ct = T::lit(*c);
        let st = (T::one() - ct * ct).max(T::zero()).sqrt();
        for k in 0..n_az {
            // Half-step azimuthal offset keeps nodes off the coordinate planes.
            let az = daz * (T::from_count(k) + T::lit(0.5));
            out.push(([st * az.cos(), st * az.sin(), ct], T::lit(*w) * daz));
        }
    }
    out
}

/// Spatial rule on a ball: Gauss panels between `breaks` in the radius times
/// a sphere rule. Returns `(point, weight)`.
pub fn ball_rule<T: Real>(breaks: &[T], radial_order: usize, angular_order: usize) -> Vec<([T; 3], T)> {
    let radial = composite(breaks, &GaussLegendre::new(radial_order));
    let sphere = sphere_rule::<T>(angular_order);
    let mut out = Vec::with_capacity(radial.len() * sphere.len());
    for (r, wr) in &radial {
        for (d, wa) in &sphere {
            out.push(([*r * d[0], *r * d[1], *r * d[2]], *wr * *r * *r * *wa));
        }
    }
    out
}

impl<T: Real> QuadratureCloud<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_i g(z_i)` with a fixed summation order.
    pub fn integrate(&self, g: impl Fn(&Phase<T>) -> T) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (z, w)| acc + *w * g(z))
    }

    pub fn volume(&self) -> T {
        self.weights.iter().copied().fold(T::zero(), |a, b| a + b)
    }

    /// Product rule adapted to the support of `state`.
    pub fn phase(state: &SteadyState<T>, spec: &PhaseCloudSpec) -> Self {
        let r_out = state.r_support * T::lit(1.0 + spec.margin_x);
        let v_extra = state.escape_speed(T::zero()) * T::lit(spec.margin_v);
        Self::phase_with_bound(r_out, spec, |r| {
            let v = state.escape_speed(r);
            (v * v + v_extra * v_extra).sqrt()
        })
        .with_provenance(CloudProvenance::Phase(*spec))
    }

    /// Product rule on `{|x| <= r_out, |v| <= vmax(|x|)}`.
    pub fn phase_with_bound(
        r_out: T,
        spec: &PhaseCloudSpec,
        vmax: impl Fn(T) -> T,
    ) -> Self {
        let mut breaks = vec![T::zero()];
        for p in (0..spec.radial_panels).rev() {
            breaks.push(r_out / T::lit(2f64.powi(p as i32)));
        }
        let radial = composite(&breaks, &GaussLegendre::new(spec.radial_order));
        let speed = GaussLegendre::new(spec.speed_order).on_interval(T::zero(), T::one());
        let sphere = sphere_rule::<T>(spec.angular_order);
        let vsphere = sphere_rule::<T>(spec.velocity_angular_order);

        let cap = radial.len() * sphere.len() * vsphere.len() * speed.len();
        let mut nodes = Vec::with_capacity(cap);
        let mut weights = Vec::with_capacity(cap);
        for (r, wr) in &radial {
            let vm = vmax(*r);
            if vm <= T::zero() {
                continue;
            }
            let wr = *wr * *r * *r;
            for (xh, wx) in &sphere {
                let x = [*r * xh[0], *r * xh[1], *r * xh[2]];
                for (t, wt) in &speed {
                    let u = *t * vm;
                    let wu = *wt * vm * u * u;
                    for (vh, wv) in &vsphere {
                        nodes.push([x[0], x[1], x[2], u * vh[0], u * vh[1], u * vh[2]]);
                        weights.push(wr * *wx * wu * *wv);
                    }
                }
            }
        }
        Self {
            nodes,
            weights,
            provenance: CloudProvenance::Custom("phase_with_bound".into()),
        }
    }

    /// Tensor Gauss-Legendre rule on `Π [-h_i, h_i]`.
    pub fn tensor_box(spec: &BoxCloudSpec) -> Self {
        let gl = GaussLegendre::new(spec.order);
        let axes: Vec<Vec<(T, T)>> = spec
            .half_widths
            .iter()
            .map(|h| gl.on_interval(T::lit(-*h), T::lit(*h)))
            .collect();
        let n = spec.order;
        let total = n.pow(6);
        let mut nodes = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut idx = [0usize; 6];
        for _ in 0..total {
            let mut z = [T::zero(); 6];
            let mut w = T::one();
            for d in 0..6 {
                let (x, wx) = axes[d][idx[d]];
                z[d] = x;
                w = w * wx;
            }
            nodes.push(z);
            weights.push(w);
            for d in (0..6).rev() {
                idx[d] += 1;
                if idx[d] < n {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self {
            nodes,
            weights,
            provenance: CloudProvenance::Box(spec.clone()),
        }
    }

    /// Drops nodes where `keep` is false.
    pub fn pruned(mut self, keep: impl Fn(&Phase<T>) -> bool) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut weights = Vec::with_capacity(self.nodes.len());
        for (z, w) in self.nodes.iter().zip(&self.weights) {
            if keep(z) {
                nodes.push(*z);
                weights.push(*w);
            }
        }
        self.nodes = nodes;
        self.weights = weights;
        self
    }

    pub fn with_provenance(mut self, p: CloudProvenance) -> Self {
        self.provenance = p;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_steady::{build_polytrope, PolytropeSpec};

    #[test]
    fn ball_rule_integrates_polynomials_exactly() {
        let rule = ball_rule(&[0.0, 0.4, 1.5], 4, 5);
        let pi = std::f64::consts::PI;
        let vol: f64 = rule.iter().map(|(_, w)| w).sum();
        assert!((vol - 4.0 / 3.0 * pi * 1.5f64.powi(3)).abs() < 1e-12);
        // ∫ x² = (1/3) ∫ r² = 4π R⁵ / 15.
        let x2: f64 = rule.iter().map(|(p, w)| w * p[0] * p[0]).sum();
        assert!((x2 - 4.0 * pi * 1.5f64.powi(5) / 15.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_rule_integrates_low_harmonics() {
        let rule = sphere_rule::<f64>(5);
        let area: f64 = rule.iter().map(|(_, w)| w).sum();
        assert!((area - 4.0 * std::f64::consts::PI).abs() < 1e-13);
        let x2: f64 = rule.iter().map(|(d, w)| w * d[0] * d[0]).sum();
        assert!((x2 - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-13);
        let x4z2: f64 = rule.iter().map(|(d, w)| w * d[0].powi(4) * d[2].powi(2)).sum();
        // ∫ x⁴ z² dΩ = 4π·3/105
        assert!((x4z2 - 4.0 * std::f64::consts::PI * 3.0 / 105.0).abs() < 1e-13);
    }

    #[test]
    fn ball_volume_is_reproduced() {
        // 6-ball of radius 1: |B| = π³/6.
        let spec = PhaseCloudSpec {
            radial_panels: 1,
            radial_order: 8,
            angular_order: 2,
            speed_order: 4,
            ..Default::default()
        };
        let c = QuadratureCloud::<f64>::phase_with_bound(1.0, &spec, |r| (1.0 - r * r).max(0.0).sqrt());
        let vol = c.volume();
        let exact = std::f64::consts::PI.powi(3) / 6.0;
        assert!((vol - exact).abs() < 1e-3 * exact, "{vol} vs {exact}");
    }

    #[test]
    fn fitted_cloud_integrates_mass_and_kinetic_energy() {
        let s = build_polytrope(&PolytropeSpec::<f64>::default()).unwrap();
        let c = QuadratureCloud::phase(&s, &PhaseCloudSpec::default());
        assert_eq!(c.len(), PhaseCloudSpec::default().node_count());
        let m = c.integrate(|z| s.eval_f(z));
        assert!((m - 1.0).abs() < 1e-9, "mass {m}");
        let k = c.integrate(|z| 0.5 * (z[3] * z[3] + z[4] * z[4] + z[5] * z[5]) * s.eval_f(z));
        assert!((k - s.kinetic_energy()).abs() < 1e-9 * k);
    }

    #[test]
    fn tensor_box_volume() {
        let spec = BoxCloudSpec {
            half_widths: [0.5, 1.0, 1.0, 2.0, 1.0, 1.0],
            order: 3,
        };
        let c = QuadratureCloud::<f64>::tensor_box(&spec);
        assert_eq!(c.len(), 729);
        assert!((c.volume() - 2f64.powi(6) * 0.5 * 2.0).abs() < 1e-12);
    }
}
