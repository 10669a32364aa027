//! Isotropic polytropic steady states `f(x, v) = A (e0 - e)_+^mu` with
//! `e = |v|²/2 + phi(|x|)` and `Δphi = rho` (kernel `-1/(4π|x|)`).
//!
//! Construction solves the Lane-Emden equation of index `n = mu + 3/2` once
//! in dimensionless form, locates its first zero by bisection on the last
//! integration step, and then fixes the physical scales (central depth,
//! length, amplitude) through the homology invariance of the equation so
//! that the total mass equals the requested target exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::QuinticHermite;
use crate::linalg::Mat;
use crate::quad::{beta, GaussLegendre};
use crate::scalar::{dot, Phase, Real};

pub const PROFILE_FORMAT_VERSION: u32 = 1;

/// Admissible open interval for the polytropic exponent.
pub const MU_MIN: f64 = 2.0 - 1.0 / 3.0;
pub const MU_MAX: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct RadialGrid<T> {
    /// Number of radial intervals across the support.
    pub nodes: usize,
    /// Largest dimensionless radius searched for the vacuum boundary.
    pub max_xi: T,
}

impl<T: Real> Default for RadialGrid<T> {
    fn default() -> Self {
        Self {
            nodes: 4000,
            max_xi: T::lit(400.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct PolytropeSpec<T> {
    pub mu: T,
    /// `A` in `F(e) = A (e0 - e)_+^mu`. When absent the amplitude is chosen
    /// so that the spatial support has radius `support_radius`.
    pub amplitude: Option<T>,
    pub support_radius: T,
    pub target_mass: T,
    pub grid: RadialGrid<T>,
}

impl<T: Real> Default for PolytropeSpec<T> {
    fn default() -> Self {
        Self {
            mu: T::lit(3.0),
            amplitude: None,
            support_radius: T::one(),
            target_mass: T::one(),
            grid: RadialGrid::default(),
        }
    }
}

impl<T: Real> PolytropeSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let mu = self.mu.to_f64_lossy();
        if !(mu > MU_MIN && mu < MU_MAX) {
            return Err(Error::InvalidSpec(format!(
                "mu = {mu} outside ({MU_MIN:.6}, {MU_MAX})"
            )));
        }
        if let Some(a) = self.amplitude {
            if a.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::InvalidSpec("amplitude must be positive".into()));
            }
        } else if self.support_radius.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater)
        {
            return Err(Error::InvalidSpec("support radius must be positive".into()));
        }
        if self.target_mass.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidSpec("target mass must be positive".into()));
        }
        if self.grid.nodes < 16 {
            return Err(Error::InvalidSpec("radial grid needs at least 16 nodes".into()));
        }
        Ok(())
    }

    /// Lane-Emden index `mu + 3/2`.
    pub fn index(&self) -> T {
        self.mu + T::lit(1.5)
    }
}

/// `c_mu = 4π √2 B(3/2, mu + 1)`: `∫ (E - |v|²/2)_+^mu dv = c_mu E^(mu+3/2)`.
pub fn shell_constant(mu: f64) -> f64 {
    4.0 * std::f64::consts::PI * 2f64.sqrt() * beta(1.5, mu + 1.0)
}

/// `∫ |v|²/2 (E - |v|²/2)_+^mu dv = k_mu E^(mu+5/2)`.
pub fn kinetic_shell_constant(mu: f64) -> f64 {
    4.0 * std::f64::consts::PI * 2f64.sqrt() * beta(2.5, mu + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct SteadyState<T> {
    pub format_version: u32,
    pub spec: PolytropeSpec<T>,
    pub amplitude: T,
    /// Tabulated potential on `[0, r_support]`; Keplerian outside.
    pub phi_profile: QuinticHermite<T>,
    /// Spatial density at the same radii.
    pub rho_profile: Vec<T>,
    pub e0: T,
    pub r_support: T,
    /// Radius of a phase-space ball containing the support of `f`.
    pub rho_phase: T,
    pub mass: T,
    /// Dimensionless first zero and surface slope of the Lane-Emden solution.
    pub xi1: T,
    pub surface_slope: T,
}

/// RK4 step for `θ'' = -θ_+^n - 2θ'/ξ`.
fn lane_emden_step<T: Real>(n: T, xi: T, th: T, dth: T, h: T) -> (T, T) {
    let rhs = |x: T, t: T, d: T| -> (T, T) {
        let src = t.max(T::zero()).powf(n);
        if x == T::zero() {
            (d, -src / T::lit(3.0))
        } else {
            (d, -src - T::lit(2.0) * d / x)
        }
    };
    let half = T::lit(0.5);
    let (k1a, k1b) = rhs(xi, th, dth);
    let (k2a, k2b) = rhs(xi + half * h, th + half * h * k1a, dth + half * h * k1b);
    let (k3a, k3b) = rhs(xi + half * h, th + half * h * k2a, dth + half * h * k2b);
    let (k4a, k4b) = rhs(xi + h, th + h * k3a, dth + h * k3b);
    let sixth = T::one() / T::lit(6.0);
    (
        th + h * sixth * (k1a + T::lit(2.0) * k2a + T::lit(2.0) * k3a + k4a),
        dth + h * sixth * (k1b + T::lit(2.0) * k2b + T::lit(2.0) * k3b + k4b),
    )
}

/// First zero of the Lane-Emden solution, found by marching with step `h`
/// and bisecting the length of the final step.
fn lane_emden_zero<T: Real>(n: T, h: T, max_xi: T) -> Result<(T, T)> {
    let (mut xi, mut th, mut dth) = (T::zero(), T::one(), T::zero());
    while xi < max_xi {
        let (nt, nd) = lane_emden_step(n, xi, th, dth, h);
        if nt <= T::zero() {
            let (mut lo, mut hi) = (T::zero(), h);
            for _ in 0..200 {
                let mid = (lo + hi) * T::lit(0.5);
                let (t, _) = lane_emden_step(n, xi, th, dth, mid);
                if t > T::zero() {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= T::epsilon() * (xi + h) {
                    break;
                }
            }
            let (_, d) = lane_emden_step(n, xi, th, dth, hi);
            return Ok((xi + hi, d));
        }
        xi = xi + h;
        th = nt;
        dth = nd;
    }
    Err(Error::NonConvergent(format!(
        "no vacuum boundary below xi = {}",
        max_xi
    )))
}

/// Tabulates `θ, θ'` on `nodes` equal intervals of `[0, xi1]`.
fn lane_emden_table<T: Real>(n: T, xi1: T, nodes: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let h = xi1 / T::from_count(nodes);
    let mut xs = Vec::with_capacity(nodes + 1);
    let mut th = Vec::with_capacity(nodes + 1);
    let mut dth = Vec::with_capacity(nodes + 1);
    let (mut t, mut d) = (T::one(), T::zero());
    for k in 0..=nodes {
        let x = h * T::from_count(k);
        xs.push(x);
        th.push(t);
        dth.push(d);
        if k < nodes {
            let (nt, nd) = lane_emden_step(n, x, t, d, h);
            t = nt;
            d = nd;
        }
    }
    (xs, th, dth)
}

/// Builds the polytrope described by `spec`.
pub fn build_polytrope<T: Real>(spec: &PolytropeSpec<T>) -> Result<SteadyState<T>> {
    spec.validate()?;
    let n = spec.index();
    let mu = spec.mu;
    let nodes = spec.grid.nodes;

    // Locate the boundary on a coarse march, then re-integrate so that the
    // last node lands on it.
    let (xi_probe, _) = lane_emden_zero(n, T::lit(1e-3).max(spec.grid.max_xi / T::lit(1e6)), spec.grid.max_xi)?;
    let (xi1, slope) = {
        let (mut xi1, mut slope) = (xi_probe, T::zero());
        for _ in 0..3 {
            let h = xi1 / T::from_count(nodes);
            let (z, d) = lane_emden_zero(n, h, spec.grid.max_xi)?;
            xi1 = z;
            slope = d;
        }
        (xi1, slope)
    };
    let (xs, th, dth) = lane_emden_table(n, xi1, nodes);
    let omega = xi1 * xi1 * slope.abs();

    let c_mu = T::lit(shell_constant(mu.to_f64_lossy()));
    let four_pi = T::lit(4.0) * T::PI();
    let mass = spec.target_mass;

    // Homology scaling: a = length per unit xi, psi_c = central depth e0 - phi(0).
    let (a, psi_c, amp) = match spec.amplitude {
        None => {
            let a = spec.support_radius / xi1;
            let psi_c = mass / (four_pi * a * omega);
            let amp = T::one() / (c_mu * a * a * psi_c.powf(n - T::one()));
            (a, psi_c, amp)
        }
        Some(amp) => {
            let base = mass * (c_mu * amp).sqrt() / (four_pi * omega);
            let psi_c = base.powf(T::lit(2.0) / (T::lit(3.0) - n));
            let a = (T::one() / (c_mu * amp * psi_c.powf(n - T::one()))).sqrt();
            (a, psi_c, amp)
        }
    };
    let r_support = a * xi1;
    let e0 = -mass / (four_pi * r_support);

    let mut r = Vec::with_capacity(xs.len());
    let mut phi = Vec::with_capacity(xs.len());
    let mut dphi = Vec::with_capacity(xs.len());
    let mut d2phi = Vec::with_capacity(xs.len());
    let mut rho = Vec::with_capacity(xs.len());
    let last = xs.len() - 1;
    for k in 0..xs.len() {
        let rk = a * xs[k];
        let theta = if k == last { T::zero() } else { th[k].max(T::zero()) };
        let psi = psi_c * theta;
        let rho_k = c_mu * amp * psi.powf(n);
        let dphi_k = -psi_c * dth[k] / a;
        let d2 = if k == 0 {
            rho_k / T::lit(3.0)
        } else {
            rho_k - T::lit(2.0) * dphi_k / rk
        };
        r.push(rk);
        phi.push(e0 - psi);
        dphi.push(dphi_k);
        d2phi.push(d2);
        rho.push(rho_k);
    }
    // Match the exterior Kepler potential exactly at the surface.
    dphi[last] = mass / (four_pi * r_support * r_support);
    d2phi[last] = -T::lit(2.0) * dphi[last] / r_support;

    let rho_phase = r
        .iter()
        .zip(&phi)
        .map(|(rk, pk)| (*rk * *rk + T::lit(2.0) * (e0 - *pk).max(T::zero())).sqrt())
        .fold(T::zero(), |m, x| m.max(x));

    Ok(SteadyState {
        format_version: PROFILE_FORMAT_VERSION,
        spec: *spec,
        amplitude: amp,
        phi_profile: QuinticHermite::new(r, phi, dphi, d2phi),
        rho_profile: rho,
        e0,
        r_support,
        rho_phase,
        mass,
        xi1,
        surface_slope: slope,
    })
}

impl<T: Real> SteadyState<T> {
    pub fn mu(&self) -> T {
        self.spec.mu
    }

    /// Potential, its radial derivative and second radial derivative.
    pub fn phi3(&self, r: T) -> (T, T, T) {
        let r = r.abs();
        if r <= self.r_support {
            self.phi_profile.eval3(r)
        } else {
            let k = self.mass / (T::lit(4.0) * T::PI());
            (-k / r, k / (r * r), -T::lit(2.0) * k / (r * r * r))
        }
    }

    pub fn eval_phi(&self, r: T) -> T {
        self.phi3(r).0
    }

    pub fn central_depth(&self) -> T {
        self.e0 - self.eval_phi(T::zero())
    }

    pub fn eval_e(&self, z: &Phase<T>) -> T {
        let r = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
        let v2 = z[3] * z[3] + z[4] * z[4] + z[5] * z[5];
        T::lit(0.5) * v2 + self.eval_phi(r)
    }

    /// `F(e)`.
    pub fn profile(&self, e: T) -> T {
        if e >= self.e0 {
            T::zero()
        } else {
            self.amplitude * (self.e0 - e).powf(self.spec.mu)
        }
    }

    /// `F'(e)` and `F''(e)`.
    pub fn profile_derivs(&self, e: T) -> (T, T) {
        if e >= self.e0 {
            return (T::zero(), T::zero());
        }
        let mu = self.spec.mu;
        let d = self.e0 - e;
        let f1 = -mu * self.amplitude * d.powf(mu - T::one());
        let f2 = mu * (mu - T::one()) * self.amplitude * d.powf(mu - T::lit(2.0));
        (f1, f2)
    }

    pub fn eval_f(&self, z: &Phase<T>) -> T {
        self.profile(self.eval_e(z))
    }

    /// Microscopic energy with its gradient and Hessian.
    pub fn e_derivs(&self, z: &Phase<T>) -> (T, Phase<T>, Mat<T, 6>) {
        let r = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
        let (phi, dphi, d2phi) = self.phi3(r);
        let v2 = z[3] * z[3] + z[4] * z[4] + z[5] * z[5];
        let e = T::lit(0.5) * v2 + phi;
        let mut g = [T::zero(); 6];
        let mut h = [[T::zero(); 6]; 6];
        let tiny = self.r_support * T::lit(1e-9);
        if r > tiny {
            let over_r = dphi / r;
            for i in 0..3 {
                let xi = z[i] / r;
                g[i] = dphi * xi;
                for j in 0..3 {
                    let xj = z[j] / r;
                    let delta = if i == j { T::one() } else { T::zero() };
                    h[i][j] = d2phi * xi * xj + over_r * (delta - xi * xj);
                }
            }
        } else {
            // phi'(r)/r -> phi''(0) at the centre.
            for i in 0..3 {
                g[i] = d2phi * z[i];
                h[i][i] = d2phi;
            }
        }
        for i in 3..6 {
            g[i] = z[i];
            h[i][i] = T::one();
        }
        (e, g, h)
    }

    /// `∇f = F'(e) ∇e`.
    pub fn grad_f(&self, z: &Phase<T>) -> Phase<T> {
        let (e, ge, _) = self.e_derivs(z);
        let (f1, _) = self.profile_derivs(e);
        ge.map(|x| f1 * x)
    }

    /// `∇²f = F''(e) ∇e ∇eᵀ + F'(e) ∇²e`.
    pub fn hessian_f(&self, z: &Phase<T>) -> Mat<T, 6> {
        let (e, ge, he) = self.e_derivs(z);
        let (f1, f2) = self.profile_derivs(e);
        let mut h = [[T::zero(); 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                h[i][j] = f2 * ge[i] * ge[j] + f1 * he[i][j];
            }
        }
        h
    }

    /// Largest speed present at radius `r`.
    pub fn escape_speed(&self, r: T) -> T {
        (T::lit(2.0) * (self.e0 - self.eval_phi(r)).max(T::zero())).sqrt()
    }

    /// Spatial density `rho(r) = c_mu A (e0 - phi)_+^(mu+3/2)`.
    pub fn density(&self, r: T) -> T {
        let psi = (self.e0 - self.eval_phi(r)).max(T::zero());
        T::lit(shell_constant(self.mu().to_f64_lossy())) * self.amplitude * psi.powf(self.spec.index())
    }

    /// Radial integral `∫_0^R g(r) 4π r² dr` by Gauss-Legendre per table interval.
    fn radial_integral(&self, g: impl Fn(T) -> T) -> T {
        let gl = GaussLegendre::new(6);
        let four_pi = T::lit(4.0) * T::PI();
        self.phi_profile
            .x
            .windows(2)
            .map(|w| gl.integrate(w[0], w[1], |r| four_pi * r * r * g(r)))
            .sum()
    }

    /// Mass obtained by integrating the tabulated density.
    pub fn tabulated_mass(&self) -> T {
        self.radial_integral(|r| self.density(r))
    }

    pub fn kinetic_energy(&self) -> T {
        let k = T::lit(kinetic_shell_constant(self.mu().to_f64_lossy()));
        let p = self.spec.mu + T::lit(2.5);
        self.radial_integral(|r| {
            let psi = (self.e0 - self.eval_phi(r)).max(T::zero());
            k * self.amplitude * psi.powf(p)
        })
    }

    /// `½ ∫ phi rho dx = -½ ∫ |∇phi|² dx` (negative).
    pub fn potential_energy(&self) -> T {
        T::lit(0.5) * self.radial_integral(|r| self.eval_phi(r) * self.density(r))
    }

    pub fn total_energy(&self) -> T {
        self.kinetic_energy() + self.potential_energy()
    }

    /// `2 E_kin + E_pot`, zero for an exact steady state.
    pub fn virial_residual(&self) -> T {
        T::lit(2.0) * self.kinetic_energy() + self.potential_energy()
    }

    /// Phase-space volume `|{f > s}|` by radial quadrature.
    pub fn level_measure(&self, s: T) -> T {
        if s <= T::zero() {
            return self.radial_integral(|r| {
                let u = self.escape_speed(r);
                T::lit(4.0) / T::lit(3.0) * T::PI() * u * u * u
            });
        }
        let de = (s / self.amplitude).powf(T::one() / self.spec.mu);
        let cut = self.e0 - de;
        self.radial_integral(|r| {
            let u2 = T::lit(2.0) * (cut - self.eval_phi(r));
            if u2 <= T::zero() {
                T::zero()
            } else {
                let u = u2.sqrt();
                T::lit(4.0) / T::lit(3.0) * T::PI() * u * u * u
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()>
    where
        T: Serialize,
    {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        let text = std::fs::read_to_string(path)?;
        let state: Self = serde_json::from_str(&text)?;
        if state.format_version != PROFILE_FORMAT_VERSION {
            return Err(Error::FormatVersion(state.format_version));
        }
        Ok(state)
    }

    /// Barycentre of `f` in `x`; zero by radial symmetry.
    pub fn barycenter_x(&self) -> [T; 3] {
        [T::zero(); 3]
    }

    /// Largest `|v|²/2 + |x|²`-radius check helper.
    pub fn in_phase_support(&self, z: &Phase<T>) -> bool {
        dot(z, z) <= self.rho_phase * self.rho_phase
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_state() -> SteadyState<f64> {
        build_polytrope(&PolytropeSpec::default()).unwrap()
    }

    #[test]
    fn rejects_inadmissible_mu() {
        for mu in [1.5, 3.5, 4.0] {
            let spec = PolytropeSpec::<f64> {
                mu,
                ..Default::default()
            };
            assert!(matches!(build_polytrope(&spec), Err(Error::InvalidSpec(_))));
        }
    }

    #[test]
    fn shell_constant_matches_direct_integral() {
        // ∫_0^{√2} (1 - u²/2)^3 4π u² du
        let gl = GaussLegendre::new(40);
        let direct = gl.integrate(0.0, 2f64.sqrt(), |u| {
            4.0 * std::f64::consts::PI * u * u * (1.0 - 0.5 * u * u).powi(3)
        });
        assert!((direct - shell_constant(3.0)).abs() < 1e-13);
    }

    #[test]
    fn mass_and_boundary_invariants() {
        let s = default_state();
        assert!((s.mass - 1.0).abs() < 1e-12);
        assert!((s.tabulated_mass() - 1.0).abs() < 1e-8, "{}", s.tabulated_mass());
        assert!(s.e0 < 0.0);
        assert!((s.r_support - 1.0).abs() < 1e-14);
        let rho_last = *s.rho_profile.last().unwrap();
        assert_eq!(rho_last, 0.0);
        assert!(s.rho_profile.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.phi_profile.y.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn far_field_is_monopole() {
        let s = default_state();
        let r = 10.0 * s.r_support;
        let expect = -s.mass / (4.0 * std::f64::consts::PI * r);
        assert!((s.eval_phi(r) - expect).abs() < 1e-6);
        // continuity across the surface
        let (a, b, _) = s.phi3(s.r_support * (1.0 - 1e-12));
        let (c, d, _) = s.phi3(s.r_support * (1.0 + 1e-12));
        assert!((a - c).abs() < 1e-10 && (b - d).abs() < 1e-8);
    }

    #[test]
    fn density_and_energy_at_the_centre() {
        let s = default_state();
        let z0 = [0.0; 6];
        assert_eq!(s.eval_e(&z0), s.eval_phi(0.0));
        let f0 = s.eval_f(&z0);
        assert!(f0 > 0.0);
        assert!((f0 - s.amplitude * (s.e0 - s.eval_phi(0.0)).powi(3)).abs() < 1e-12 * f0);
        let far = [2.0, 0.0, 0.0, 5.0, 0.0, 0.0];
        assert_eq!(s.eval_f(&far), 0.0);
    }

    #[test]
    fn profile_is_strictly_decreasing_below_cutoff() {
        let s = default_state();
        let lo = s.eval_phi(0.0);
        for k in 0..200 {
            let e = lo + (s.e0 - lo) * (k as f64 + 0.5) / 200.0;
            assert!(s.profile_derivs(e).0 < 0.0);
        }
    }

    #[test]
    fn virial_balance() {
        let s = default_state();
        let w = s.potential_energy();
        assert!(w < 0.0);
        assert!(s.virial_residual().abs() < 1e-8 * w.abs(), "{}", s.virial_residual());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = default_state();
        let z = [0.12, -0.05, 0.08, 0.3, 0.2, -0.4];
        let g = s.grad_f(&z);
        let h = s.hessian_f(&z);
        let step = 1e-6;
        for i in 0..6 {
            let mut zp = z;
            let mut zm = z;
            zp[i] += step;
            zm[i] -= step;
            let fd = (s.eval_f(&zp) - s.eval_f(&zm)) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "i={i}");
            let gp = s.grad_f(&zp);
            let gm = s.grad_f(&zm);
            for j in 0..6 {
                let fdh = (gp[j] - gm[j]) / (2.0 * step);
                assert!((fdh - h[i][j]).abs() < 1e-5 * (1.0 + h[i][j].abs()), "i={i} j={j}");
            }
        }
    }

    #[test]
    fn profile_file_round_trip_is_bit_exact() {
        let s = default_state();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("profile.json");
        s.save(&p).unwrap();
        let back = SteadyState::<f64>::load(&p).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn works_in_single_precision() {
        let spec = PolytropeSpec::<f32> {
            grid: RadialGrid {
                nodes: 400,
                max_xi: 400.0,
            },
            ..Default::default()
        };
        let s = build_polytrope(&spec).unwrap();
        assert!((s.mass - 1.0).abs() < 1e-5);
        assert!(s.e0 < 0.0);
    }
}
