//! Energy, its variations along Hamiltonian flows, and related functionals.
//!
//! Transported states are held in the forward representation: particle `i`
//! starts at a cloud node `z_i`, carries mass `m_i = w_i f̄(z_i)` and sits at
//! its image `Z_i = Φ_s(z_i)`. The potential energy is split as
//!
//! `½∫∫K ρ_s ρ_s = ½∫φ̄ ρ̄ + ∫φ̄ (ρ_s - ρ̄) + ½∫∫K (ρ_s - ρ̄)(ρ_s - ρ̄)`
//!
//! where `φ̄` is the exact radial potential of the steady state. The first two
//! terms are single sums over the fine ("bulk") cloud; only the last, which is
//! quadratic in the displacement, needs a softened pair sum, and it runs over
//! a coarser "pair" cloud with sources `+m_j` at `X_j` and `-m_j` at `x_j`.
//! Every discrete variation below is the exact `s`-derivative of the
//! discrete energy, so finite differences of one reproduce the other.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{BoxCloudSpec, QuadratureCloud};
use crate::error::{Error, Result};
use crate::gravity::{field, kernel, kernel_grad, PairMethod, Sources, Vec3};
use crate::hamiltonian_fields::{
    box_step, poisson_bracket, sample_hamiltonian, sup_estimate, AtomFamily, Hamiltonian, HamiltonianField, SmoothCutoff,
};
use crate::linalg::mat_vec;
use crate::quad::GaussLegendre;
use crate::radial_steady::SteadyState;
use crate::scalar::{apply_j, dot, Phase, Real};
use crate::transport::forward_images;

/// Pair-sum regularisation and evaluation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSettings {
    /// Plummer softening length.
    pub softening: f64,
    pub method: PairMethod,
}

impl Default for PairSettings {
    fn default() -> Self {
        Self {
            softening: 0.02,
            method: PairMethod::Direct,
        }
    }
}

/// Cloud nodes carrying mass, with their current images.
#[derive(Debug, Clone)]
pub struct Particles<T> {
    pub origins: Arc<Vec<Phase<T>>>,
    pub weights: Arc<Vec<T>>,
    pub masses: Arc<Vec<T>>,
    pub images: Vec<Phase<T>>,
}

impl<T: Real> Particles<T> {
    /// Nodes of `cloud` inside the support of `f̄`, at rest.
    pub fn from_cloud(state: &SteadyState<T>, cloud: &QuadratureCloud<T>) -> Self {
        let mut origins = Vec::new();
        let mut weights = Vec::new();
        let mut masses = Vec::new();
        for (z, w) in cloud.nodes.iter().zip(&cloud.weights) {
            let f = state.eval_f(z);
            if f > T::zero() {
                origins.push(*z);
                weights.push(*w);
                masses.push(*w * f);
            }
        }
        Self {
            images: origins.clone(),
            origins: Arc::new(origins),
            weights: Arc::new(weights),
            masses: Arc::new(masses),
        }
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn total_mass(&self) -> T {
        self.masses.iter().fold(T::zero(), |a, m| a + *m)
    }

    fn with_images(&self, images: Vec<Phase<T>>) -> Self {
        Self {
            origins: self.origins.clone(),
            weights: self.weights.clone(),
            masses: self.masses.clone(),
            images,
        }
    }
}

fn pos<T: Real>(z: &Phase<T>) -> Vec3<T> {
    [z[0], z[1], z[2]]
}

/// A steady state transported by a measure-preserving map, in forward form.
#[derive(Debug, Clone)]
pub struct Transported<T> {
    pub base: Arc<SteadyState<T>>,
    pub bulk: Particles<T>,
    pub pairs: Particles<T>,
    pub pair: PairSettings,
}

impl<T: Real> Transported<T> {
    /// `f̄` itself.
    pub fn steady(base: Arc<SteadyState<T>>, bulk: &QuadratureCloud<T>, pairs: &QuadratureCloud<T>, pair: PairSettings) -> Self {
        Self {
            bulk: Particles::from_cloud(&base, bulk),
            pairs: Particles::from_cloud(&base, pairs),
            base,
            pair,
        }
    }

    /// `f̄ ∘ T⁻¹` for a volume-preserving map `T` applied to the origins.
    pub fn mapped(&self, map: impl Fn(&Phase<T>) -> Phase<T> + Sync) -> Self {
        let bulk = self.bulk.origins.par_iter().map(&map).collect();
        let pairs = self.pairs.origins.par_iter().map(&map).collect();
        Self {
            base: self.base.clone(),
            bulk: self.bulk.with_images(bulk),
            pairs: self.pairs.with_images(pairs),
            pair: self.pair,
        }
    }

    /// `f̄_s = f̄ ∘ Φ_{-s}` for each `s` in `times` (monotone from 0).
    pub fn along_flow<H: Hamiltonian<T> + ?Sized>(&self, h: &H, times: &[T], tol: T) -> Result<Vec<Self>> {
        let bulk = forward_images(h, &self.bulk.origins, times, tol)?;
        let pairs = forward_images(h, &self.pairs.origins, times, tol)?;
        Ok(bulk
            .into_iter()
            .zip(pairs)
            .map(|(b, p)| Self {
                base: self.base.clone(),
                bulk: self.bulk.with_images(b),
                pairs: self.pairs.with_images(p),
                pair: self.pair,
            })
            .collect())
    }

    pub fn at_time<H: Hamiltonian<T> + ?Sized>(&self, h: &H, s: T, tol: T) -> Result<Self> {
        Ok(self.along_flow(h, &[s], tol)?.remove(0))
    }

    fn delta_sources(&self) -> Sources<T> {
        let mut src = Sources::default();
        for ((x, z), m) in self.pairs.origins.iter().zip(&self.pairs.images).zip(self.pairs.masses.iter()) {
            src.push(pos(z), *m);
            src.push(pos(x), -*m);
        }
        src
    }

    /// `δφ = K_ε * (ρ_s - ρ̄)` with its gradient at each image `X_i`, and
    /// the potential at each origin `x_i`. The pair `i` itself is left out
    /// of both: a particle does not feel its own hole.
    fn delta_field(&self, eps: T, with_origins: bool) -> (Vec<(T, Vec3<T>)>, Vec<T>) {
        let p = &self.pairs;
        let n = p.len();
        if p.images.iter().zip(p.origins.iter()).all(|(a, b)| a == b) {
            let o = if with_origins { vec![T::zero(); n] } else { Vec::new() };
            return (vec![(T::zero(), [T::zero(); 3]); n], o);
        }
        let mut targets: Vec<Vec3<T>> = p.images.iter().map(pos).collect();
        if with_origins {
            targets.extend(p.origins.iter().map(pos));
        }
        let raw = field(&self.delta_sources(), &targets, eps, self.pair.method);
        let k0 = kernel_grad(&[T::zero(); 3], eps).0;
        let mut at_images = Vec::with_capacity(n);
        let mut at_origins = Vec::new();
        for i in 0..n {
            let m = p.masses[i];
            let (xi, zi) = (pos(&p.origins[i]), pos(&p.images[i]));
            let d = [zi[0] - xi[0], zi[1] - xi[1], zi[2] - xi[2]];
            let (kd, gd) = kernel_grad(&d, eps);
            let (v, g) = raw[i];
            at_images.push((v - m * k0 + m * kd, [g[0] + m * gd[0], g[1] + m * gd[1], g[2] + m * gd[2]]));
            if with_origins {
                // K is even, so K(x_i - X_i) = K(d).
                at_origins.push(raw[n + i].0 - m * kd + m * k0);
            }
        }
        (at_images, at_origins)
    }

    fn eps(&self) -> T {
        T::lit(self.pair.softening)
    }

    /// `∫ x f`: first spatial moment (not normalised by the mass).
    pub fn barycenter(&self) -> [T; 3] {
        let mut b = [T::zero(); 3];
        for (z, m) in self.bulk.images.iter().zip(self.bulk.masses.iter()) {
            for i in 0..3 {
                b[i] = b[i] + *m * z[i];
            }
        }
        b
    }

    /// Barycentre shift relative to the untransported particles; removes the
    /// cloud's own quadrature bias.
    pub fn barycenter_shift(&self) -> [T; 3] {
        let mut b = [T::zero(); 3];
        for ((z, x), m) in self.bulk.images.iter().zip(self.bulk.origins.iter()).zip(self.bulk.masses.iter()) {
            for i in 0..3 {
                b[i] = b[i] + *m * (z[i] - x[i]);
            }
        }
        b
    }

    /// `Σ w_i G(f̄(z_i))`: exact Casimir of the transported state.
    pub fn casimir(&self, g: impl Fn(T) -> T) -> T {
        self.bulk
            .masses
            .iter()
            .zip(self.bulk.weights.iter())
            .fold(T::zero(), |a, (m, w)| a + *w * g(*m / *w))
    }

    /// Distance of the potential to `φ̄` without translation: `sup |δφ|` and
    /// `‖∇δφ‖_{L²}` on a spatial `(point, weight)` rule, with `δρ` from the
    /// bulk particles. The barycentre is matched, so `z = 0` stands in for the
    /// infimum over translations and both numbers bound it from above.
    pub fn closeness(&self, rule: &[(Vec3<T>, T)], eps: T) -> Closeness<T> {
        let b = &self.bulk;
        let mut src = Sources::default();
        for ((x, z), m) in b.origins.iter().zip(&b.images).zip(b.masses.iter()) {
            if x != z {
                src.push(pos(z), *m);
                src.push(pos(x), -*m);
            }
        }
        if src.points.is_empty() {
            return Closeness {
                potential_sup: T::zero(),
                grad_l2: T::zero(),
            };
        }
        let points: Vec<Vec3<T>> = rule.iter().map(|(p, _)| *p).collect();
        let vals = field(&src, &points, eps, self.pair.method);
        let (sup, sq) = vals
            .iter()
            .zip(rule)
            .fold((T::zero(), T::zero()), |(s, q), ((v, g), (_, w))| (s.max(v.abs()), q + *w * dot(g, g)));
        Closeness {
            potential_sup: sup,
            grad_l2: sq.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Closeness<T> {
    pub potential_sup: T,
    pub grad_l2: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown<T> {
    pub kinetic: T,
    /// `½∫∫K ρρ`, negative.
    pub potential: T,
    pub total: T,
    /// Part of `potential` carried by the softened pair sum.
    pub pair_part: T,
}

/// `ℋ(f) = ½∫|v|² f + ½∫∫K ρρ` of a transported state.
pub fn energy<T: Real>(f: &Transported<T>) -> EnergyBreakdown<T> {
    let per: Vec<(T, T)> = f
        .bulk
        .images
        .par_iter()
        .zip(f.bulk.origins.par_iter())
        .map(|(z, x)| {
            let v2 = z[3] * z[3] + z[4] * z[4] + z[5] * z[5];
            let px = f.base.eval_phi(crate::scalar::norm(&pos(x)));
            let pz = f.base.eval_phi(crate::scalar::norm(&pos(z)));
            (T::lit(0.5) * v2, T::lit(0.5) * px + (pz - px))
        })
        .collect();
    let mut kinetic = T::zero();
    let mut background = T::zero();
    for ((k, p), m) in per.iter().zip(f.bulk.masses.iter()) {
        kinetic = kinetic + *m * *k;
        background = background + *m * *p;
    }
    let pair_part = pair_energy(f, f.eps());
    let potential = background + pair_part;
    EnergyBreakdown {
        kinetic,
        potential,
        total: kinetic + potential,
        pair_part,
    }
}

/// `½ Σ_{i≠j} m_i m_j [K(X_i-X_j) - K(X_i-x_j) - K(x_i-X_j) + K(x_i-x_j)]`.
fn pair_energy<T: Real>(f: &Transported<T>, eps: T) -> T {
    let p = &f.pairs;
    let (at_images, at_origins) = f.delta_field(eps, true);
    let mut acc = T::zero();
    for i in 0..p.len() {
        acc = acc + p.masses[i] * (at_images[i].0 - at_origins[i]);
    }
    T::lit(0.5) * acc
}

/// Sensitivity of the pair term to the softening length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SofteningProbe {
    pub at_eps: f64,
    pub at_half_eps: f64,
    /// Richardson estimate assuming an `O(ε²)` bias.
    pub extrapolated: f64,
    /// `|at_eps - at_half_eps|` relative to the total potential energy.
    pub sensitivity: f64,
}

pub fn softening_probe<T: Real>(f: &Transported<T>) -> SofteningProbe {
    let e = f.eps();
    let a = pair_energy(f, e).to_f64_lossy();
    let b = pair_energy(f, e * T::lit(0.5)).to_f64_lossy();
    let pot = energy(f).potential.to_f64_lossy().abs().max(f64::MIN_POSITIVE);
    SofteningProbe {
        at_eps: a,
        at_half_eps: b,
        extrapolated: b + (b - a) / 3.0,
        sensitivity: (a - b).abs() / pot,
    }
}

/// Fails when the softening bias exceeds `threshold` of the potential energy.
pub fn check_softening<T: Real>(f: &Transported<T>, threshold: f64) -> Result<SofteningProbe> {
    let p = softening_probe(f);
    if p.sensitivity > threshold {
        return Err(Error::CloudTooCoarse(p.sensitivity));
    }
    Ok(p)
}

/// `B(f, ψ) = -∫ v·∇ₓψ f + ∫ ∇φ_f·∇_vψ f`, the weak form of stationarity.
/// Equals `d/ds ℋ(f ∘ Φ^ψ_{-s})` at `s = 0`.
pub fn stationarity_form<T: Real, H: Hamiltonian<T> + ?Sized>(f: &Transported<T>, psi: &H) -> T {
    let df = pair_gradients(f);
    stationarity_form_with(f, psi, df.as_deref())
}

/// `∇δφ` at the pair images, or `None` when nothing has moved.
fn pair_gradients<T: Real>(f: &Transported<T>) -> Option<Vec<(T, Vec3<T>)>> {
    if f.pairs.images.iter().zip(f.pairs.origins.iter()).all(|(a, b)| a == b) {
        return None;
    }
    Some(f.delta_field(f.eps(), false).0)
}

fn stationarity_form_with<T: Real, H: Hamiltonian<T> + ?Sized>(f: &Transported<T>, psi: &H, df: Option<&[(T, Vec3<T>)]>) -> T {
    let bulk: Vec<T> = f
        .bulk
        .images
        .par_iter()
        .map(|z| {
            let g = psi.gradient(z);
            if g.iter().all(|x| *x == T::zero()) {
                return T::zero();
            }
            let (_, ge, _) = f.base.e_derivs(z);
            dot(&ge, &apply_j(&g))
        })
        .collect();
    let mut acc = T::zero();
    for (b, m) in bulk.iter().zip(f.bulk.masses.iter()) {
        acc = acc + *m * *b;
    }
    if let Some(df) = df {
        for ((z, (_, gd)), m) in f.pairs.images.iter().zip(df).zip(f.pairs.masses.iter()) {
            let g = psi.gradient(z);
            acc = acc + *m * (gd[0] * g[3] + gd[1] * g[4] + gd[2] * g[5]);
        }
    }
    acc
}

/// `d/ds ℋ(f̄_s)` at the state `f = f̄_s` for the flow of `h`.
pub fn first_variation<T: Real, H: Hamiltonian<T> + ?Sized>(f: &Transported<T>, h: &H) -> T {
    stationarity_form(f, h)
}

/// `d²/ds² ℋ(f̄_s)` at `f = f̄_s`: the exact `s`-derivative of
/// [`first_variation`] along the flow of `h`.
pub fn second_variation<T: Real, H: Hamiltonian<T> + ?Sized>(f: &Transported<T>, h: &H) -> T {
    // Bulk: d/ds Σ m ∇e(Z)·J∇H(Z) = Σ m [(J∇H)ᵀ ∇²e (J∇H) + ∇eᵀ J ∇²H J∇H].
    let bulk: Vec<T> = f
        .bulk
        .images
        .par_iter()
        .map(|z| {
            let (_, g, hh) = h.jet(z);
            if g.iter().all(|x| *x == T::zero()) {
                return T::zero();
            }
            let (_, ge, he) = f.base.e_derivs(z);
            let zd = apply_j(&g);
            let a = dot(&zd, &mat_vec(&he, &zd));
            let b = dot(&ge, &apply_j(&mat_vec(&hh, &zd)));
            a + b
        })
        .collect();
    let mut acc = T::zero();
    for (b, m) in bulk.iter().zip(f.bulk.masses.iter()) {
        acc = acc + *m * *b;
    }

    // Pairs: d/ds Σ_i m_i ∇δφ(X_i)·∇_vH(Z_i).
    let p = &f.pairs;
    let eps = f.eps();
    let jets: Vec<(Phase<T>, [[T; 6]; 6])> = p.images.par_iter().map(|z| {
        let (_, g, hh) = h.jet(z);
        (g, hh)
    }).collect();
    let xdot: Vec<Vec3<T>> = jets.iter().map(|(g, _)| [g[3], g[4], g[5]]).collect();
    let targets: Vec<Vec3<T>> = p.images.iter().map(pos).collect();
    let (df, _) = f.delta_field(eps, false);
    let n = p.len();
    let terms: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = targets[i];
            let vi = xdot[i];
            if vi.iter().all(|x| *x == T::zero()) {
                return T::zero();
            }
            // d/ds ∇δφ(X_i) = Σ_j m_j [∇²K(X_i-X_j)(Ẋ_i-Ẋ_j) - ∇²K(X_i-x_j) Ẋ_i]
            let mut dgrad = [T::zero(); 3];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mj = p.masses[j];
                let xj = targets[j];
                let oj = pos(&p.origins[j]);
                let (_, _, k1) = kernel(&[xi[0] - xj[0], xi[1] - xj[1], xi[2] - xj[2]], eps);
                let (_, _, k2) = kernel(&[xi[0] - oj[0], xi[1] - oj[1], xi[2] - oj[2]], eps);
                let dv = [vi[0] - xdot[j][0], vi[1] - xdot[j][1], vi[2] - xdot[j][2]];
                for a in 0..3 {
                    let mut s = T::zero();
                    for b in 0..3 {
                        s = s + k1[a][b] * dv[b] - k2[a][b] * vi[b];
                    }
                    dgrad[a] = dgrad[a] + mj * s;
                }
            }
            let (g, hh) = &jets[i];
            let zd = apply_j(g);
            let w = mat_vec(hh, &zd);
            let gd = df[i].1;
            dot(&dgrad, &vi) + gd[0] * w[3] + gd[1] * w[4] + gd[2] * w[5]
        })
        .collect();
    for (t, m) in terms.iter().zip(p.masses.iter()) {
        acc = acc + *m * *t;
    }
    acc
}

/// Second variation in bracket-weighted form,
/// `∫ v·∇ₓH g_s - ∫∫ ∇K(x-y)·[∇_vH(z) - ∇_wH(z')] f_s(z) g_s(z')`,
/// with `g = {H, f̄}` evaluated at the backward points (the cloud origins).
/// Agrees with [`second_variation`] up to quadrature error.
pub fn second_variation_bracket<T: Real, H: Hamiltonian<T> + ?Sized>(f: &Transported<T>, h: &H) -> T {
    let base = &f.base;
    let bulk: Vec<T> = f
        .bulk
        .images
        .par_iter()
        .zip(f.bulk.origins.par_iter())
        .map(|(z, x)| {
            let g = h.gradient(z);
            if g.iter().all(|t| *t == T::zero()) {
                return T::zero();
            }
            let gx = poisson_bracket(h, base, x);
            let (_, ge, _) = base.e_derivs(z);
            // v·∇ₓH - ∇_vH·∇φ̄
            gx * (z[3] * g[0] + z[4] * g[1] + z[5] * g[2] - (ge[0] * g[3] + ge[1] * g[4] + ge[2] * g[5]))
        })
        .collect();
    let mut acc = T::zero();
    for (b, w) in bulk.iter().zip(f.bulk.weights.iter()) {
        acc = acc + *w * *b;
    }
    // Pair parts: -Σ m ∇_vH·∇φ^g - Σ q ∇_vH·∇δφ on the pair cloud.
    let p = &f.pairs;
    let eps = f.eps();
    let mut gsrc = Sources::default();
    let q: Vec<T> = p
        .origins
        .iter()
        .zip(p.weights.iter())
        .map(|(x, w)| *w * poisson_bracket(h, base, x))
        .collect();
    for (z, qi) in p.images.iter().zip(&q) {
        gsrc.push(pos(z), *qi);
    }
    let targets: Vec<Vec3<T>> = p.images.iter().map(pos).collect();
    let phig = field(&gsrc, &targets, eps, f.pair.method);
    let (df, _) = f.delta_field(eps, false);
    for i in 0..p.len() {
        let g = h.gradient(&p.images[i]);
        let gv = [g[3], g[4], g[5]];
        acc = acc - p.masses[i] * dot(&gv, &phig[i].1) - q[i] * dot(&gv, &df[i].1);
    }
    acc
}

/// Outcome of the Taylor identities for `s ↦ ℋ(f̄_s)` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorReport {
    pub delta_energy: f64,
    pub first_variation_0: f64,
    pub first_variation_1: f64,
    pub second_variation_0: f64,
    /// `(s_k, D²(s_k))` at the Gauss nodes.
    pub samples: Vec<(f64, f64)>,
    /// `|Δℋ - ½∫(1-2s)(D²(s)-D²(0))ds|`; small only if `f̄_1` is stationary.
    pub symmetric_residual: f64,
    /// `|Δℋ - D¹(0) - ∫(1-s)D²(s)ds|`; at integrator precision always.
    pub identity_residual: f64,
    /// `|Δℋ - D¹(0) - ½D²(0)|`, the cubic Taylor remainder.
    pub cubic_remainder: f64,
    /// `max_k |D²(s_k) - D²(0)|`.
    pub max_deviation: f64,
}

/// Gauss nodes on `[0, 1]` used for the `s`-integrals.
pub fn s_nodes(order: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(order).on_interval(0.0, 1.0)
}

/// Evaluates both Taylor identities with 8-point Gauss quadrature in `s`.
pub fn taylor_residual<T: Real, H: Hamiltonian<T> + ?Sized>(f0: &Transported<T>, h: &H, tol: T) -> Result<TaylorReport> {
    let nodes = s_nodes(8);
    let mut times: Vec<T> = nodes.iter().map(|(s, _)| T::lit(*s)).collect();
    times.push(T::one());
    let states = f0.along_flow(h, &times, tol)?;
    let e0 = energy(f0).total.to_f64_lossy();
    let e1 = energy(&states[8]).total.to_f64_lossy();
    let d1_0 = first_variation(f0, h).to_f64_lossy();
    let d1_1 = first_variation(&states[8], h).to_f64_lossy();
    let d2_0 = second_variation(f0, h).to_f64_lossy();
    let mut samples = Vec::with_capacity(8);
    let (mut sym, mut uns, mut dev) = (0.0, 0.0, 0.0f64);
    for ((s, w), st) in nodes.iter().zip(&states) {
        let d2 = second_variation(st, h).to_f64_lossy();
        samples.push((*s, d2));
        sym += w * 0.5 * (1.0 - 2.0 * s) * (d2 - d2_0);
        uns += w * (1.0 - s) * d2;
        dev = dev.max((d2 - d2_0).abs());
    }
    let de = e1 - e0;
    Ok(TaylorReport {
        delta_energy: de,
        first_variation_0: d1_0,
        first_variation_1: d1_1,
        second_variation_0: d2_0,
        samples,
        symmetric_residual: (de - sym).abs(),
        identity_residual: (de - d1_0 - uns).abs(),
        cubic_remainder: (de - d1_0 - 0.5 * d2_0).abs(),
        max_deviation: dev,
    })
}

/// A C¹ test function with its (estimated) C¹ norm `sup|ψ| + sup|∇ψ|`.
#[derive(Debug, Clone)]
pub struct TestFunction<T> {
    pub field: HamiltonianField<T>,
    pub c1_norm: T,
}

/// Seeded trigonometric test functions (four modes, lowest wavenumbers) on
/// a box slightly larger than the support. They are not cut off: only their
/// values near the support matter, and the C¹ norm is taken over the box.
pub fn random_test_functions<T: Real>(state: &SteadyState<T>, count: usize, seed: u64) -> Vec<TestFunction<T>> {
    let ax = 1.05 * state.r_support.to_f64_lossy();
    let av = 1.05 * state.escape_speed(T::zero()).to_f64_lossy();
    let family = AtomFamily {
        n_modes: 4,
        max_wavenumber: 1,
        amplitude: 1.0,
        half_widths: [ax, ax, ax, av, av, av],
        bump_power: 0,
    };
    let order = 5;
    let grid = QuadratureCloud::tensor_box(&BoxCloudSpec {
        half_widths: family.half_widths,
        order,
    });
    let step: [T; 6] = box_step(&family.half_widths, order);
    (0..count)
        .map(|i| {
            let sub = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
            let mut atoms = sample_hamiltonian(&family, sub);
            atoms.bump = false;
            let field = HamiltonianField::Atoms(atoms);
            let (v, _) = sup_estimate(&grid, step, |z| field.value(z).abs());
            let (g, _) = sup_estimate(&grid, step, |z| crate::scalar::norm(&field.gradient(z)));
            TestFunction { field, c1_norm: v + g }
        })
        .collect()
}

/// `max_ψ |B(f, ψ)| / ‖ψ‖_{C¹}`.
pub fn stationarity_residual<T: Real>(f: &Transported<T>, tests: &[TestFunction<T>]) -> Result<T> {
    if tests.is_empty() {
        return Err(Error::EmptyTests);
    }
    let df = pair_gradients(f);
    let mut worst = T::zero();
    for t in tests {
        if t.c1_norm == T::zero() {
            continue;
        }
        let r = stationarity_form_with(f, &t.field, df.as_deref()).abs() / t.c1_norm;
        worst = worst.max(r);
    }
    Ok(worst)
}

/// `Σ w |fa - fb|` over values sampled on a common cloud.
pub fn l1_distance<T: Real>(fa: &[T], fb: &[T], weights: &[T]) -> T {
    fa.iter()
        .zip(fb)
        .zip(weights)
        .fold(T::zero(), |a, ((x, y), w)| a + *w * (*x - *y).abs())
}

/// `‖f_s - f̄‖_{L¹}` for an equimeasurable `f_s`, using only values on a
/// cloud fitted to `supp f̄`: with equal masses the distance is
/// `2∫(f̄ - f_s)_+`, and the integrand vanishes off the support of `f̄`.
pub fn l1_to_base<T: Real>(fs: &[T], base: &[T], weights: &[T]) -> T {
    let two = T::lit(2.0);
    fs.iter()
        .zip(base)
        .zip(weights)
        .fold(T::zero(), |a, ((x, y), w)| a + two * *w * (*y - *x).max(T::zero()))
}

/// `Σ w f(z) x` from values on a cloud.
pub fn barycenter_x<T: Real>(values: &[T], cloud: &QuadratureCloud<T>) -> [T; 3] {
    let mut b = [T::zero(); 3];
    for ((f, z), w) in values.iter().zip(&cloud.nodes).zip(&cloud.weights) {
        for i in 0..3 {
            b[i] = b[i] + *w * *f * z[i];
        }
    }
    b
}

/// `Σ w G(f(z))` from values on a cloud.
pub fn casimir<T: Real>(values: &[T], weights: &[T], g: impl Fn(T) -> T) -> T {
    values.iter().zip(weights).fold(T::zero(), |a, (f, w)| a + *w * g(*f))
}

/// Settings of the barycentre fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecenterSettings {
    /// Target `|Bar_x| / mass`.
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for RecenterSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 30,
            damping: 1.0,
        }
    }
}

/// Adds `p·v c(|z|)` to `h` so that `Bar_x(f̄_1)` equals `Bar_x(f̄)`; `p` is
/// found by the damped fixed point `p ← p - d·Bar_x / mass` using the
/// particles of `f` (normally the pair cloud).
pub fn recenter_hamiltonian<T: Real>(
    h: &HamiltonianField<T>,
    f: &Transported<T>,
    flow_tol: T,
    settings: &RecenterSettings,
) -> Result<(HamiltonianField<T>, [T; 3])> {
    let cutoff = SmoothCutoff::for_state(&f.base);
    let mass = f.bulk.total_mass();
    let mut p = [T::zero(); 3];
    for _ in 0..settings.max_iter {
        let candidate = h.clone().plus(HamiltonianField::Translation { p, cutoff });
        let moved = f.at_time(&candidate, T::one(), flow_tol)?;
        let bar = moved.barycenter_shift();
        let err = crate::scalar::norm(&bar) / mass;
        if err.to_f64_lossy() <= settings.tol {
            return Ok((candidate, p));
        }
        for i in 0..3 {
            p[i] = p[i] - T::lit(settings.damping) * bar[i] / mass;
        }
    }
    Err(Error::Recenter(settings.max_iter))
}
