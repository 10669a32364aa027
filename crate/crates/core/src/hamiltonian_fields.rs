//! Compactly supported perturbation Hamiltonians on phase space.
//!
//! The workhorse is [`AtomField`]: a finite trigonometric sum multiplied by a
//! separable flat-top bump `B(z) = Π_i β(z_i / a_i)`, `β(t) = (1 - t⁸)^p`.
//! `β` vanishes to order `p` at `|t| = 1`, so the field is of class
//! `C^(p-1)` and its derivatives up to order `p` are square integrable.
//! Because both factors are separable per axis, all Sobolev seminorms are
//! sums of products of one-dimensional Gram integrals, which is how
//! [`spectral_norms`] evaluates them exactly (up to floating point).

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::QuadratureCloud;
use crate::error::{Error, Result};
use crate::linalg::{sym_norm, Mat};
use crate::quad::GaussLegendre;
use crate::radial_steady::SteadyState;
use crate::scalar::{apply_j, dot, norm, Phase, Real};

/// Scalar field on phase space with analytic first and second derivatives.
pub trait Hamiltonian<T: Real>: Send + Sync {
    fn jet(&self, z: &Phase<T>) -> (T, Phase<T>, Mat<T, 6>);

    fn value(&self, z: &Phase<T>) -> T {
        self.jet(z).0
    }

    fn gradient(&self, z: &Phase<T>) -> Phase<T> {
        self.jet(z).1
    }

    fn hessian(&self, z: &Phase<T>) -> Mat<T, 6> {
        self.jet(z).2
    }
}

fn zero_jet<T: Real>() -> (T, Phase<T>, Mat<T, 6>) {
    (T::zero(), [T::zero(); 6], [[T::zero(); 6]; 6])
}

/// `β(t) = (1 - t⁸)^p` on `|t| < 1` and its first two derivatives in `t`.
fn bump3<T: Real>(t: T, p: u32) -> (T, T, T) {
    if t.abs() >= T::one() {
        return (T::zero(), T::zero(), T::zero());
    }
    let pf = T::from_count(p as usize);
    let t2 = t * t;
    let t6 = t2 * t2 * t2;
    let t7 = t6 * t;
    let q = T::one() - t6 * t2;
    let qp2 = if p >= 2 { q.powi(p as i32 - 2) } else { T::zero() };
    let qp1 = if p >= 1 { q.powi(p as i32 - 1) } else { T::zero() };
    let val = q.powi(p as i32);
    let d1 = -T::lit(8.0) * pf * t7 * qp1;
    let d2 = -T::lit(56.0) * pf * t6 * qp1 + T::lit(64.0) * pf * (pf - T::one()) * t7 * t7 * qp2;
    (val, d1, d2)
}

/// One trigonometric mode `c cos(k·z + θ)` with `k_i = π n_i / a_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode<T> {
    pub wave: [i32; 6],
    pub coefficient: T,
    pub phase: T,
}

/// Trigonometric modes on a box, multiplied by the separable bump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomField<T> {
    pub modes: Vec<Mode<T>>,
    pub half_widths: [T; 6],
    pub bump_power: u32,
    /// `false` only on the periodic test path (no bump, no compact support).
    pub bump: bool,
}

impl<T: Real> AtomField<T> {
    pub fn wavevector(&self, m: &Mode<T>) -> [T; 6] {
        let mut k = [T::zero(); 6];
        for i in 0..6 {
            k[i] = T::PI() * T::lit(m.wave[i] as f64) / self.half_widths[i];
        }
        k
    }

    /// Single unit-coefficient mode without the bump.
    pub fn pure_mode(wave: [i32; 6], half_widths: [T; 6]) -> Self {
        Self {
            modes: vec![Mode {
                wave,
                coefficient: T::one(),
                phase: T::zero(),
            }],
            half_widths,
            bump_power: 0,
            bump: false,
        }
    }

    pub fn scaled(&self, lambda: T) -> Self {
        let mut out = self.clone();
        for m in &mut out.modes {
            m.coefficient = m.coefficient * lambda;
        }
        out
    }

    /// Audit dump: one line per mode.
    pub fn coefficient_table(&self) -> String {
        let mut s = String::from("n1,n2,n3,n4,n5,n6,coefficient,phase\n");
        for m in &self.modes {
            let w = m.wave;
            s.push_str(&format!(
                "{},{},{},{},{},{},{:.16e},{:.16e}\n",
                w[0],
                w[1],
                w[2],
                w[3],
                w[4],
                w[5],
                m.coefficient.to_f64_lossy(),
                m.phase.to_f64_lossy()
            ));
        }
        s
    }
}

impl<T: Real> Hamiltonian<T> for AtomField<T> {
    fn jet(&self, z: &Phase<T>) -> (T, Phase<T>, Mat<T, 6>) {
        let mut b = [(T::one(), T::zero(), T::zero()); 6];
        if self.bump {
            for i in 0..6 {
                let (v, d1, d2) = bump3(z[i] / self.half_widths[i], self.bump_power);
                let ia = T::one() / self.half_widths[i];
                b[i] = (v, d1 * ia, d2 * ia * ia);
            }
            if b.iter().any(|x| x.0 == T::zero() && x.1 == T::zero() && x.2 == T::zero()) {
                return zero_jet();
            }
        }

        // Trigonometric sum S with gradient and Hessian.
        let mut s = T::zero();
        let mut gs = [T::zero(); 6];
        let mut hs = [[T::zero(); 6]; 6];
        for m in &self.modes {
            let k = self.wavevector(m);
            let arg = dot(&k, &[z[0], z[1], z[2], z[3], z[4], z[5]]) + m.phase;
            let (sn, cs) = arg.sin_cos();
            let c = m.coefficient;
            s = s + c * cs;
            for i in 0..6 {
                gs[i] = gs[i] - c * sn * k[i];
                for j in i..6 {
                    hs[i][j] = hs[i][j] - c * cs * k[i] * k[j];
                }
            }
        }
        for i in 0..6 {
            for j in 0..i {
                hs[i][j] = hs[j][i];
            }
        }
        if !self.bump {
            return (s, gs, hs);
        }

        // Bump B = Π β_i with gradient and Hessian, no division by β_i.
        let mut bv = T::one();
        for x in &b {
            bv = bv * x.0;
        }
        let mut gb = [T::zero(); 6];
        let mut hb = [[T::zero(); 6]; 6];
        for i in 0..6 {
            let mut p = b[i].1;
            for (l, x) in b.iter().enumerate() {
                if l != i {
                    p = p * x.0;
                }
            }
            gb[i] = p;
            for j in i..6 {
                let mut q = if i == j { b[i].2 } else { b[i].1 * b[j].1 };
                for (l, x) in b.iter().enumerate() {
                    if l != i && l != j {
                        q = q * x.0;
                    }
                }
                hb[i][j] = q;
                hb[j][i] = q;
            }
        }

        let val = bv * s;
        let mut g = [T::zero(); 6];
        let mut h = [[T::zero(); 6]; 6];
        for i in 0..6 {
            g[i] = gb[i] * s + bv * gs[i];
            for j in 0..6 {
                h[i][j] = hb[i][j] * s + gb[i] * gs[j] + gs[i] * gb[j] + bv * hs[i][j];
            }
        }
        (val, g, h)
    }

    fn gradient(&self, z: &Phase<T>) -> Phase<T> {
        let mut b = [(T::one(), T::zero()); 6];
        if self.bump {
            for i in 0..6 {
                let (v, d1, _) = bump3(z[i] / self.half_widths[i], self.bump_power);
                b[i] = (v, d1 / self.half_widths[i]);
            }
            if b.iter().any(|x| x.0 == T::zero() && x.1 == T::zero()) {
                return [T::zero(); 6];
            }
        }
        let mut s = T::zero();
        let mut gs = [T::zero(); 6];
        for m in &self.modes {
            let k = self.wavevector(m);
            let (sn, cs) = (dot(&k, z) + m.phase).sin_cos();
            s = s + m.coefficient * cs;
            let c = m.coefficient * sn;
            for i in 0..6 {
                gs[i] = gs[i] - c * k[i];
            }
        }
        if !self.bump {
            return gs;
        }
        let bv = b.iter().fold(T::one(), |a, x| a * x.0);
        let mut g = [T::zero(); 6];
        for i in 0..6 {
            let mut p = b[i].1;
            for (l, x) in b.iter().enumerate() {
                if l != i {
                    p = p * x.0;
                }
            }
            g[i] = p * s + bv * gs[i];
        }
        g
    }
}

/// Parameters of the seeded atom family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomFamily {
    pub n_modes: usize,
    pub max_wavenumber: u32,
    pub amplitude: f64,
    pub half_widths: [f64; 6],
    pub bump_power: u32,
}

impl AtomFamily {
    /// Box fitted to the mass of `state`: 1.2 times the radius containing
    /// 99% of the mass in `x`, 1.1 times the central escape speed in `v`,
    /// shrunk if necessary so that the box lies inside `B_{2ρ}`.
    pub fn fitted<T: Real>(state: &SteadyState<T>, n_modes: usize, max_wavenumber: u32, amplitude: f64) -> Self {
        let r99 = mass_radius(state, 0.99);
        let vesc = state.escape_speed(T::zero()).to_f64_lossy();
        let (mut ax, mut av) = (1.2 * r99, 1.1 * vesc);
        let limit = 0.98 * 2.0 * state.rho_phase.to_f64_lossy();
        let diag = (3.0 * ax * ax + 3.0 * av * av).sqrt();
        if diag > limit {
            ax *= limit / diag;
            av *= limit / diag;
        }
        Self {
            n_modes,
            max_wavenumber,
            amplitude,
            half_widths: [ax, ax, ax, av, av, av],
            bump_power: 24,
        }
    }
}

impl AtomFamily {
    /// Box of spatial half-width `x_fraction` times the support radius; the
    /// velocity half-width is the largest that keeps the box inside
    /// `B_{2ρ}`, capped at 1.1 times the central escape speed. Smoother
    /// than [`AtomFamily::fitted`], whose box follows the mass.
    pub fn spanning<T: Real>(
        state: &SteadyState<T>,
        n_modes: usize,
        max_wavenumber: u32,
        amplitude: f64,
        x_fraction: f64,
        bump_power: u32,
    ) -> Result<Self> {
        let limit = 0.98 * 2.0 * state.rho_phase.to_f64_lossy();
        let ax = x_fraction * state.r_support.to_f64_lossy();
        let room = limit * limit / 3.0 - ax * ax;
        if !(ax > 0.0) || room <= 0.0 {
            return Err(Error::InvalidSpec(format!("spatial half-width {ax} leaves no room inside B_2rho")));
        }
        let av = room.sqrt().min(1.1 * state.escape_speed(T::zero()).to_f64_lossy());
        Ok(Self {
            n_modes,
            max_wavenumber,
            amplitude,
            half_widths: [ax, ax, ax, av, av, av],
            bump_power,
        })
    }
}

/// Radius enclosing the fraction `q` of the mass.
pub fn mass_radius<T: Real>(state: &SteadyState<T>, q: f64) -> f64 {
    let enclosed = |r: f64| {
        let (_, d, _) = state.phi3(T::lit(r));
        4.0 * std::f64::consts::PI * r * r * d.to_f64_lossy() / state.mass.to_f64_lossy()
    };
    let (mut lo, mut hi) = (0.0, state.r_support.to_f64_lossy());
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if enclosed(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Seeded member of `family`; deterministic in `seed`.
pub fn sample_hamiltonian<T: Real>(family: &AtomFamily, seed: u64) -> AtomField<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = family.max_wavenumber as i32;
    let scale = family.amplitude / (family.n_modes.max(1) as f64).sqrt();
    let modes = (0..family.n_modes)
        .map(|_| {
            let mut wave = [0i32; 6];
            for n in &mut wave {
                *n = rng.gen_range(-w..=w);
            }
            let c: f64 = rng.gen_range(-1.0..=1.0);
            let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Mode {
                wave,
                coefficient: T::lit(c * scale),
                phase: T::lit(th),
            }
        })
        .collect();
    AtomField {
        modes,
        half_widths: family.half_widths.map(T::lit),
        bump_power: family.bump_power,
        bump: true,
    }
}

/// `χ(e) = c (e_cut - e)_+⁴`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile<T> {
    pub coefficient: T,
    pub e_cut: T,
}

impl<T: Real> EnergyProfile<T> {
    pub fn eval3(&self, e: T) -> (T, T, T) {
        let d = self.e_cut - e;
        if d <= T::zero() {
            return (T::zero(), T::zero(), T::zero());
        }
        let c = self.coefficient;
        let d2 = d * d;
        (c * d2 * d2, -T::lit(4.0) * c * d2 * d, T::lit(12.0) * c * d2)
    }
}

/// `H = χ(e(z))` for the microscopic energy of a steady state.
#[derive(Debug, Clone)]
pub struct EnergyField<T> {
    pub state: Arc<SteadyState<T>>,
    pub chi: EnergyProfile<T>,
}

impl<T: Real> Hamiltonian<T> for EnergyField<T> {
    fn jet(&self, z: &Phase<T>) -> (T, Phase<T>, Mat<T, 6>) {
        let (e, ge, he) = self.state.e_derivs(z);
        let (c0, c1, c2) = self.chi.eval3(e);
        if c0 == T::zero() && c1 == T::zero() {
            return zero_jet();
        }
        let mut h = [[T::zero(); 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                h[i][j] = c2 * ge[i] * ge[j] + c1 * he[i][j];
            }
        }
        (c0, ge.map(|g| c1 * g), h)
    }
}

/// Builds `H = χ(e)`; `χ` must vanish for `e` above `e0 + margin` with a
/// negative cut so that the support is bounded.
pub fn invariant_hamiltonian<T: Real>(state: Arc<SteadyState<T>>, chi: EnergyProfile<T>) -> Result<HamiltonianField<T>> {
    if chi.e_cut >= T::zero() {
        return Err(Error::Hypothesis(format!(
            "energy cut {} must be negative for compact support",
            chi.e_cut
        )));
    }
    Ok(HamiltonianField::Energy(EnergyField { state, chi }))
}

/// Radial cutoff in `|z|`: 1 below `inner`, 0 above `outer`, quintic
/// smoothstep in between (class C²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothCutoff<T> {
    pub inner: T,
    pub outer: T,
}

impl<T: Real> SmoothCutoff<T> {
    /// Cutoff suited to a steady state: flat on `B_{1.25ρ}`, zero outside `B_{1.9ρ}`.
    pub fn for_state(state: &SteadyState<T>) -> Self {
        Self {
            inner: T::lit(1.25) * state.rho_phase,
            outer: T::lit(1.9) * state.rho_phase,
        }
    }

    fn profile(&self, r: T) -> (T, T, T) {
        if r <= self.inner {
            return (T::one(), T::zero(), T::zero());
        }
        if r >= self.outer {
            return (T::zero(), T::zero(), T::zero());
        }
        let w = self.outer - self.inner;
        let u = (r - self.inner) / w;
        let l = T::lit;
        let u2 = u * u;
        let s = l(10.0) * u2 * u - l(15.0) * u2 * u2 + l(6.0) * u2 * u2 * u;
        let ds = (l(30.0) * u2 - l(60.0) * u2 * u + l(30.0) * u2 * u2) / w;
        let d2s = (l(60.0) * u - l(180.0) * u2 + l(120.0) * u2 * u) / (w * w);
        (T::one() - s, -ds, -d2s)
    }

    /// Value, gradient and Hessian of `z ↦ c(|z|)`.
    pub fn jet(&self, z: &Phase<T>) -> (T, Phase<T>, Mat<T, 6>) {
        let r = norm(z);
        let (c, dc, d2c) = self.profile(r);
        let mut g = [T::zero(); 6];
        let mut h = [[T::zero(); 6]; 6];
        if dc != T::zero() || d2c != T::zero() {
            for i in 0..6 {
                let ui = z[i] / r;
                g[i] = dc * ui;
                for j in 0..6 {
                    let uj = z[j] / r;
                    let delta = if i == j { T::one() } else { T::zero() };
                    h[i][j] = d2c * ui * uj + dc * (delta - ui * uj) / r;
                }
            }
        }
        (c, g, h)
    }
}

/// Product of a smooth field `q` with a cutoff: jets combined by Leibniz.
fn times_cutoff<T: Real>(q: (T, Phase<T>, Mat<T, 6>), c: (T, Phase<T>, Mat<T, 6>)) -> (T, Phase<T>, Mat<T, 6>) {
    let (q0, q1, q2) = q;
    let (c0, c1, c2) = c;
    let mut g = [T::zero(); 6];
    let mut h = [[T::zero(); 6]; 6];
    for i in 0..6 {
        g[i] = q1[i] * c0 + q0 * c1[i];
        for j in 0..6 {
            h[i][j] = q2[i][j] * c0 + q1[i] * c1[j] + c1[i] * q1[j] + q0 * c2[i][j];
        }
    }
    (q0 * c0, g, h)
}

/// Closed sum type of every field kind used by the toolkit.
#[derive(Debug, Clone)]
pub enum HamiltonianField<T> {
    Zero,
    Atoms(AtomField<T>),
    Energy(EnergyField<T>),
    /// `½|z|² c(|z|)`.
    Quadratic(SmoothCutoff<T>),
    /// `p·v c(|z|)`: generates translations in `x` by `p` per unit time
    /// wherever the cutoff is flat.
    Translation { p: [T; 3], cutoff: SmoothCutoff<T> },
    Sum(Vec<HamiltonianField<T>>),
    Scaled(T, Box<HamiltonianField<T>>),
}

impl<T: Real> HamiltonianField<T> {
    pub fn scaled(self, lambda: T) -> Self {
        match self {
            HamiltonianField::Atoms(a) => HamiltonianField::Atoms(a.scaled(lambda)),
            HamiltonianField::Scaled(c, inner) => HamiltonianField::Scaled(c * lambda, inner),
            HamiltonianField::Zero => HamiltonianField::Zero,
            other => HamiltonianField::Scaled(lambda, Box::new(other)),
        }
    }

    pub fn plus(self, other: HamiltonianField<T>) -> Self {
        match (self, other) {
            (HamiltonianField::Zero, b) => b,
            (a, HamiltonianField::Zero) => a,
            (HamiltonianField::Sum(mut v), b) => {
                v.push(b);
                HamiltonianField::Sum(v)
            }
            (a, b) => HamiltonianField::Sum(vec![a, b]),
        }
    }

    /// Atom fields contained in the expression with their accumulated scale.
    fn atoms(&self, scale: f64, out: &mut Vec<(f64, AtomField<T>)>) -> Result<()> {
        match self {
            HamiltonianField::Zero => Ok(()),
            HamiltonianField::Atoms(a) => {
                out.push((scale, a.clone()));
                Ok(())
            }
            HamiltonianField::Scaled(c, inner) => inner.atoms(scale * c.to_f64_lossy(), out),
            HamiltonianField::Sum(v) => v.iter().try_for_each(|h| h.atoms(scale, out)),
            HamiltonianField::Energy(_) => Err(Error::NoSpectrum("energy field")),
            HamiltonianField::Quadratic(_) => Err(Error::NoSpectrum("quadratic field")),
            HamiltonianField::Translation { .. } => Err(Error::NoSpectrum("translation field")),
        }
    }
}

impl<T: Real> Hamiltonian<T> for HamiltonianField<T> {
    fn jet(&self, z: &Phase<T>) -> (T, Phase<T>, Mat<T, 6>) {
        match self {
            HamiltonianField::Zero => zero_jet(),
            HamiltonianField::Atoms(a) => a.jet(z),
            HamiltonianField::Energy(e) => e.jet(z),
            HamiltonianField::Quadratic(c) => {
                let mut h = [[T::zero(); 6]; 6];
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = T::one();
                }
                times_cutoff((T::lit(0.5) * dot(z, z), *z, h), c.jet(z))
            }
            HamiltonianField::Translation { p, cutoff } => {
                let g = [T::zero(), T::zero(), T::zero(), p[0], p[1], p[2]];
                let q0 = p[0] * z[3] + p[1] * z[4] + p[2] * z[5];
                times_cutoff((q0, g, [[T::zero(); 6]; 6]), cutoff.jet(z))
            }
            HamiltonianField::Sum(v) => {
                let mut acc = zero_jet();
                for h in v {
                    let (a, b, c) = h.jet(z);
                    acc.0 = acc.0 + a;
                    for i in 0..6 {
                        acc.1[i] = acc.1[i] + b[i];
                        for j in 0..6 {
                            acc.2[i][j] = acc.2[i][j] + c[i][j];
                        }
                    }
                }
                acc
            }
            HamiltonianField::Scaled(c, inner) => {
                let (a, b, h) = inner.jet(z);
                (*c * a, b.map(|x| *c * x), h.map(|r| r.map(|x| *c * x)))
            }
        }
    }

    fn gradient(&self, z: &Phase<T>) -> Phase<T> {
        match self {
            HamiltonianField::Atoms(a) => a.gradient(z),
            HamiltonianField::Sum(v) => {
                let mut acc = [T::zero(); 6];
                for h in v {
                    let g = h.gradient(z);
                    for i in 0..6 {
                        acc[i] = acc[i] + g[i];
                    }
                }
                acc
            }
            HamiltonianField::Scaled(c, inner) => inner.gradient(z).map(|x| *c * x),
            _ => self.jet(z).1,
        }
    }
}

/// `{H, f̄}(z) = ∇f̄ · J∇H`.
pub fn poisson_bracket<T: Real, H: Hamiltonian<T> + ?Sized>(h: &H, state: &SteadyState<T>, z: &Phase<T>) -> T {
    let gf = state.grad_f(z);
    if gf.iter().all(|x| *x == T::zero()) {
        return T::zero();
    }
    dot(&gf, &apply_j(&h.gradient(z)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNorms<T> {
    pub l1: T,
    pub l2: T,
    pub linf: T,
    pub hess_linf: T,
    /// Increase of the two sup norms achieved by local refinement.
    pub linf_refine_delta: T,
    pub hess_refine_delta: T,
}

impl<T: Real> GradNorms<T> {
    pub fn scaled(&self, lambda: T) -> Self {
        let l = lambda.abs();
        Self {
            l1: l * self.l1,
            l2: l * self.l2,
            linf: l * self.linf,
            hess_linf: l * self.hess_linf,
            linf_refine_delta: l * self.linf_refine_delta,
            hess_refine_delta: l * self.hess_refine_delta,
        }
    }
}

/// Golden-section search for the maximiser of `g` on `[a, b]`.
fn golden_max<T: Real>(a: T, b: T, iters: usize, g: impl Fn(T) -> T) -> (T, T) {
    let r = T::lit(0.618_033_988_749_894_8);
    let (mut a, mut b) = (a, b);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..iters {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    if gc > gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

/// Maximum of `g` over the cloud nodes, refined by coordinate-wise golden
/// section searches of half-width `step` around the best few nodes.
/// Returns the estimate and the gain over the best node.
pub fn sup_estimate<T: Real>(cloud: &QuadratureCloud<T>, step: [T; 6], g: impl Fn(&Phase<T>) -> T + Sync) -> (T, T) {
    let vals: Vec<T> = cloud.nodes.par_iter().map(&g).collect();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|a, b| vals[*b].partial_cmp(&vals[*a]).unwrap_or(std::cmp::Ordering::Equal));
    let sampled = order.first().map(|i| vals[*i]).unwrap_or(T::zero());
    let mut best = sampled;
    for &i in order.iter().take(4) {
        let mut z = cloud.nodes[i];
        let mut here = vals[i];
        for _sweep in 0..2 {
            for d in 0..6 {
                let z0 = z;
                let (t, m) = golden_max(z0[d] - step[d], z0[d] + step[d], 30, |t| {
                    let mut y = z0;
                    y[d] = t;
                    g(&y)
                });
                if m > here {
                    here = m;
                    z[d] = t;
                }
            }
        }
        best = best.max(here);
    }
    (best, best - sampled)
}

/// L¹, L², L∞ norms of `∇H` and L∞ norm of `∇²H` on `cloud`.
pub fn grad_norms<T: Real, H: Hamiltonian<T> + ?Sized>(h: &H, cloud: &QuadratureCloud<T>, step: [T; 6]) -> GradNorms<T> {
    let grads: Vec<T> = cloud.nodes.par_iter().map(|z| norm(&h.gradient(z))).collect();
    let (mut l1, mut l2) = (T::zero(), T::zero());
    for (g, w) in grads.iter().zip(&cloud.weights) {
        l1 = l1 + *w * *g;
        l2 = l2 + *w * *g * *g;
    }
    let (linf, d1) = sup_estimate(cloud, step, |z| norm(&h.gradient(z)));
    let (hinf, d2) = sup_estimate(cloud, step, |z| sym_norm(&h.hessian(z)));
    GradNorms {
        l1,
        l2: l2.sqrt(),
        linf,
        hess_linf: hinf,
        linf_refine_delta: d1,
        hess_refine_delta: d2,
    }
}

/// Gauss spacing scale of a box cloud, for [`sup_estimate`].
pub fn box_step<T: Real>(half_widths: &[f64; 6], order: usize) -> [T; 6] {
    half_widths.map(|h| T::lit(2.0 * h / order as f64))
}

// ---------------------------------------------------------------------------
// Spectral seminorms.

/// One complex separable atom `A Π_i β(z_i/a_i) e^{i κ_i z_i}`.
struct ComplexAtom {
    amp: Complex64,
    kappa: [f64; 6],
    half: [f64; 6],
    power: Option<u32>,
}

fn complex_atoms<T: Real>(list: &[(f64, AtomField<T>)]) -> Vec<ComplexAtom> {
    let mut out = Vec::new();
    for (scale, a) in list {
        let half = a.half_widths.map(|x| x.to_f64_lossy());
        let power = a.bump.then_some(a.bump_power);
        for m in &a.modes {
            let c = scale * m.coefficient.to_f64_lossy();
            if c == 0.0 {
                continue;
            }
            let th = m.phase.to_f64_lossy();
            let k = a.wavevector(m).map(|x| x.to_f64_lossy());
            let half_amp = 0.5 * c;
            out.push(ComplexAtom {
                amp: Complex64::from_polar(half_amp, th),
                kappa: k,
                half,
                power,
            });
            out.push(ComplexAtom {
                amp: Complex64::from_polar(half_amp, -th),
                kappa: k.map(|x| -x),
                half,
                power,
            });
        }
    }
    out
}

/// Truncated power series product.
fn series_mul(a: &[f64], b: &[f64], deg: usize) -> Vec<f64> {
    let mut c = vec![0.0; deg + 1];
    for (i, x) in a.iter().enumerate().take(deg + 1) {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate().take(deg + 1 - i) {
            c[i + j] += x * y;
        }
    }
    c
}

/// Derivatives `β^{(j)}(z)`, `j <= deg`, of `z ↦ (1 - (z/a)⁸)^p`, via the
/// Taylor series of the polynomial at `z`.
fn bump_derivatives(z: f64, a: f64, p: u32, deg: usize) -> Vec<f64> {
    let t = z / a;
    // (t + h/a)^8 expanded in h.
    let binom8 = [1.0, 8.0, 28.0, 56.0, 70.0, 56.0, 28.0, 8.0, 1.0];
    let mut q = vec![0.0; 9];
    for j in 0..=8 {
        q[j] = -binom8[j] * t.powi(8 - j as i32) / a.powi(j as i32);
    }
    q[0] += 1.0;
    q.truncate(deg + 1);
    let mut result = vec![0.0; deg + 1];
    result[0] = 1.0;
    let mut base = q;
    let mut e = p;
    while e > 0 {
        if e & 1 == 1 {
            result = series_mul(&result, &base, deg);
        }
        e >>= 1;
        if e > 0 {
            base = series_mul(&base, &base, deg);
        }
    }
    let mut fact = 1.0;
    for (j, r) in result.iter_mut().enumerate() {
        if j > 0 {
            fact *= j as f64;
        }
        *r *= fact;
    }
    result
}

fn binomial_row(m: usize) -> Vec<f64> {
    let mut row = vec![1.0; m + 1];
    for j in 1..m {
        row[j] = row[j - 1] * (m - j + 1) as f64 / j as f64;
    }
    row
}

/// `D^m [β(z/a) e^{iκz}]` at `z` for `m = 0..=deg`.
fn atom_derivatives(z: f64, kappa: f64, a: f64, p: Option<u32>, deg: usize) -> Vec<Complex64> {
    let beta = match p {
        Some(p) => bump_derivatives(z, a, p, deg),
        None => {
            let mut v = vec![0.0; deg + 1];
            v[0] = 1.0;
            v
        }
    };
    let ik = Complex64::new(0.0, kappa);
    let mut ikp = vec![Complex64::new(1.0, 0.0); deg + 1];
    for j in 1..=deg {
        ikp[j] = ikp[j - 1] * ik;
    }
    let e = Complex64::from_polar(1.0, kappa * z);
    (0..=deg)
        .map(|m| {
            let row = binomial_row(m);
            let s: Complex64 = (0..=m).map(|j| ikp[m - j] * (row[j] * beta[j])).sum();
            s * e
        })
        .collect()
}

/// Per-dimension Gram tables `G_m(c, d) = ∫ D^m u_c conj(D^m u_d)` for
/// `m = 0..=deg`, indexed `[dim][c][d][m]`.
fn gram_tables(atoms: &[ComplexAtom], deg: usize) -> Vec<Vec<Vec<Vec<Complex64>>>> {
    let n = atoms.len();
    (0..6)
        .into_par_iter()
        .map(|dim| {
            let mut tab = vec![vec![vec![Complex64::new(0.0, 0.0); deg + 1]; n]; n];
            for c in 0..n {
                for d in c..n {
                    let (ac, ad) = (&atoms[c], &atoms[d]);
                    let row = gram_1d(
                        (ac.kappa[dim], ac.half[dim], ac.power),
                        (ad.kappa[dim], ad.half[dim], ad.power),
                        deg,
                    );
                    for m in 0..=deg {
                        tab[c][d][m] = row[m];
                        tab[d][c][m] = row[m].conj();
                    }
                }
            }
            tab
        })
        .collect()
}

fn gram_1d(c: (f64, f64, Option<u32>), d: (f64, f64, Option<u32>), deg: usize) -> Vec<Complex64> {
    let (kc, ac, pc) = c;
    let (kd, ad, pd) = d;
    if pc.is_none() && pd.is_none() {
        // Periodic path: orthogonal exponentials on a shared box.
        let a = ac.min(ad);
        if (kc - kd).abs() > 1e-12 * (1.0 + kc.abs()) {
            return vec![Complex64::new(0.0, 0.0); deg + 1];
        }
        return (0..=deg)
            .map(|m| Complex64::new(2.0 * a * kc.abs().powi(2 * m as i32), 0.0))
            .collect();
    }
    let a = match (pc, pd) {
        (Some(_), Some(_)) => ac.min(ad),
        (Some(_), None) => ac,
        (None, Some(_)) => ad,
        (None, None) => unreachable!(),
    };
    let p = pc.unwrap_or(0).max(pd.unwrap_or(0)) as usize;
    let per_panel = (4 * p + 100).max(200);
    let gl = GaussLegendre::new(per_panel);
    let mut acc = vec![Complex64::new(0.0, 0.0); deg + 1];
    for (lo, hi) in [(-a, 0.0), (0.0, a)] {
        for (z, w) in gl.on_interval(lo, hi) {
            let uc = atom_derivatives(z, kc, ac, pc, deg);
            let ud = atom_derivatives(z, kd, ad, pd, deg);
            for m in 0..=deg {
                acc[m] += uc[m] * ud[m].conj() * w;
            }
        }
    }
    acc
}

fn max_order<T: Real>(list: &[(f64, AtomField<T>)]) -> usize {
    list.iter()
        .filter(|(_, a)| a.bump)
        .map(|(_, a)| a.bump_power as usize)
        .min()
        .unwrap_or(usize::MAX)
}

/// `‖∇^s H‖_{L²}` for `s = 0..=max_s`, computed from the per-axis Gram
/// integrals: `Σ_{|α|=s} s!/α! ‖∂^α H‖² = s! [x^s] Π_i Σ_m G_m^{(i)} x^m / m!`.
pub fn spectral_norms<T: Real>(h: &HamiltonianField<T>, max_s: usize) -> Result<Vec<T>> {
    let mut list = Vec::new();
    h.atoms(1.0, &mut list)?;
    let limit = max_order(&list);
    if max_s > limit {
        return Err(Error::SpectralOrder {
            order: max_s,
            max: limit,
        });
    }
    let atoms = complex_atoms(&list);
    if atoms.is_empty() {
        return Ok(vec![T::zero(); max_s + 1]);
    }
    let tabs = gram_tables(&atoms, max_s);
    let mut inv_fact = vec![1.0; max_s + 1];
    let mut fact = vec![1.0; max_s + 1];
    for m in 1..=max_s {
        inv_fact[m] = inv_fact[m - 1] / m as f64;
        fact[m] = fact[m - 1] * m as f64;
    }
    let n = atoms.len();
    let mut total = vec![0.0; max_s + 1];
    for c in 0..n {
        for d in 0..n {
            let mut poly = vec![Complex64::new(0.0, 0.0); max_s + 1];
            poly[0] = Complex64::new(1.0, 0.0);
            for tab in &tabs {
                let g = &tab[c][d];
                let mut next = vec![Complex64::new(0.0, 0.0); max_s + 1];
                for (i, pi) in poly.iter().enumerate() {
                    for m in 0..=max_s - i {
                        next[i + m] += pi * g[m] * inv_fact[m];
                    }
                }
                poly = next;
            }
            let w = atoms[c].amp * atoms[d].amp.conj();
            for s in 0..=max_s {
                total[s] += (w * poly[s]).re * fact[s];
            }
        }
    }
    Ok(total.into_iter().map(|x| T::lit(x.max(0.0).sqrt())).collect())
}

/// `‖∇^s H‖_{L²}`.
pub fn spectral_norm<T: Real>(h: &HamiltonianField<T>, s: usize) -> Result<T> {
    Ok(spectral_norms(h, s)?[s])
}

/// `‖H‖_{W^{r,2}} = (Σ_{j<=r} ‖∇^j H‖²)^{1/2}`.
pub fn sobolev_norm<T: Real>(h: &HamiltonianField<T>, r: usize) -> Result<T> {
    let v = spectral_norms(h, r)?;
    Ok(v.iter().fold(T::zero(), |a, x| a + *x * *x).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AkCertificate {
    pub l1_grad: f64,
    pub l1_bracket: f64,
    /// `l1_grad / l1_bracket`; infinite when the bracket vanishes.
    pub ratio: f64,
    pub k_threshold: f64,
    pub member: bool,
    /// Bracket below the noise floor: the field is numerically in `Inv_f̄`
    /// and the ratio carries no information.
    pub near_invariant: bool,
}

/// Relative size of the bracket below which it is treated as noise.
pub const BRACKET_NOISE: f64 = 1e-8;

/// Tests `‖∇H‖_{L¹} <= k ‖{H, f̄}‖_{L¹}`. `grad_cloud` must cover the support
/// of `H`, `state_cloud` that of `f̄`.
pub fn ak_certificate<T: Real, H: Hamiltonian<T> + ?Sized>(
    h: &H,
    state: &SteadyState<T>,
    k: f64,
    grad_cloud: &QuadratureCloud<T>,
    state_cloud: &QuadratureCloud<T>,
) -> Result<AkCertificate> {
    let l1_grad = grad_cloud
        .nodes
        .par_iter()
        .map(|z| norm(&h.gradient(z)))
        .collect::<Vec<T>>()
        .iter()
        .zip(&grad_cloud.weights)
        .fold(T::zero(), |a, (g, w)| a + *g * *w)
        .to_f64_lossy();
    if l1_grad == 0.0 {
        return Err(Error::Hypothesis("certificate requires a nonzero field".into()));
    }
    let pairs: Vec<(T, T)> = state_cloud
        .nodes
        .par_iter()
        .map(|z| {
            let gf = state.grad_f(z);
            let gh = h.gradient(z);
            (dot(&gf, &apply_j(&gh)).abs(), norm(&gf) * norm(&gh))
        })
        .collect();
    let (mut br, mut scale) = (0.0, 0.0);
    for ((b, s), w) in pairs.iter().zip(&state_cloud.weights) {
        br += (*b * *w).to_f64_lossy();
        scale += (*s * *w).to_f64_lossy();
    }
    let near_invariant = br <= BRACKET_NOISE * scale;
    let ratio = if br > 0.0 { l1_grad / br } else { f64::INFINITY };
    Ok(AkCertificate {
        l1_grad,
        l1_bracket: br,
        ratio,
        k_threshold: k,
        member: !near_invariant && ratio <= k,
        near_invariant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{BoxCloudSpec, PhaseCloudSpec};
    use crate::radial_steady::{build_polytrope, PolytropeSpec};

    fn state() -> Arc<SteadyState<f64>> {
        Arc::new(build_polytrope(&PolytropeSpec::default()).unwrap())
    }

    fn random_points(n: usize, scale: [f64; 6], seed: u64) -> Vec<Phase<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut z = [0.0; 6];
                for i in 0..6 {
                    z[i] = rng.gen_range(-1.0..1.0) * scale[i];
                }
                z
            })
            .collect()
    }

    fn check_jet_consistency<H: Hamiltonian<f64>>(h: &H, pts: &[Phase<f64>]) {
        let eps = 1e-5;
        for z in pts {
            let (_, g, hs) = h.jet(z);
            let gscale = 1.0 + norm(&g);
            let hscale = 1.0 + sym_norm(&hs);
            for i in 0..6 {
                let mut zp = *z;
                let mut zm = *z;
                zp[i] += eps;
                zm[i] -= eps;
                let fd = (h.value(&zp) - h.value(&zm)) / (2.0 * eps);
                assert!((fd - g[i]).abs() < 1e-6 * gscale, "grad {i}: {fd} vs {}", g[i]);
                let gp = h.gradient(&zp);
                let gm = h.gradient(&zm);
                for j in 0..6 {
                    let fd2 = (gp[j] - gm[j]) / (2.0 * eps);
                    assert!((fd2 - hs[j][i]).abs() < 1e-5 * hscale, "hess {j}{i}: {fd2} vs {}", hs[j][i]);
                }
            }
        }
    }

    #[test]
    fn bump_series_matches_closed_form_derivatives() {
        for z in [-0.31, -0.1, 0.0, 0.2, 0.33] {
            let d = bump_derivatives(z, 0.35, 24, 4);
            let (v, d1, d2) = bump3(z / 0.35, 24);
            assert!((d[0] - v).abs() < 1e-14);
            assert!((d[1] - d1 / 0.35).abs() < 1e-10 * (1.0 + d1.abs()));
            assert!((d[2] - d2 / 0.35 / 0.35).abs() < 1e-9 * (1.0 + d2.abs()));
        }
    }

    #[test]
    fn atom_jets_are_consistent() {
        let s = state();
        let fam = AtomFamily::fitted(&*s, 8, 2, 1.0);
        let h: AtomField<f64> = sample_hamiltonian(&fam, 1);
        let pts = random_points(40, fam.half_widths.map(|a| 0.9 * a), 7);
        check_jet_consistency(&h, &pts);
    }

    #[test]
    fn other_field_jets_are_consistent() {
        let s = state();
        let chi = EnergyProfile {
            coefficient: 3.0,
            e_cut: s.e0 + 0.01,
        };
        let e = invariant_hamiltonian(s.clone(), chi).unwrap();
        let pts = random_points(30, [0.4, 0.4, 0.4, 1.5, 1.5, 1.5], 3);
        check_jet_consistency(&e, &pts);
        let cut = SmoothCutoff::for_state(&s);
        let far = random_points(30, [1.8; 6], 4);
        check_jet_consistency(&HamiltonianField::Quadratic(cut), &far);
        check_jet_consistency(
            &HamiltonianField::Translation {
                p: [0.3, -0.2, 0.1],
                cutoff: cut,
            },
            &far,
        );
    }

    #[test]
    fn support_lies_in_twice_phase_radius() {
        let s = state();
        let fam = AtomFamily::fitted(&*s, 8, 2, 1.0);
        let a = fam.half_widths;
        let diag = (a.iter().map(|x| x * x).sum::<f64>()).sqrt();
        assert!(diag < 2.0 * s.rho_phase);
        let h: AtomField<f64> = sample_hamiltonian(&fam, 5);
        let outside = [a[0] * 1.0001, 0.0, 0.0, 0.1, 0.0, 0.0];
        assert_eq!(h.value(&outside), 0.0);
        assert_eq!(h.gradient(&outside), [0.0; 6]);
    }

    #[test]
    fn sampling_is_deterministic_and_linear() {
        let fam = AtomFamily {
            n_modes: 8,
            max_wavenumber: 2,
            amplitude: 1.0,
            half_widths: [0.3, 0.3, 0.3, 1.5, 1.5, 1.5],
            bump_power: 24,
        };
        let a: AtomField<f64> = sample_hamiltonian(&fam, 1);
        let b: AtomField<f64> = sample_hamiltonian(&fam, 1);
        assert_eq!(a, b);
        let c: AtomField<f64> = sample_hamiltonian(&fam, 2);
        assert_ne!(a, c);
        let zero: AtomField<f64> = sample_hamiltonian(&AtomFamily { amplitude: 0.0, ..fam }, 1);
        for z in random_points(20, [0.3, 0.3, 0.3, 1.5, 1.5, 1.5], 9) {
            assert_eq!(zero.value(&z), 0.0);
        }
    }

    #[test]
    fn bracket_is_antisymmetric_and_vanishes_for_energy_fields() {
        let s = state();
        let fam = AtomFamily::fitted(&*s, 8, 2, 1.0);
        let h = HamiltonianField::Atoms(sample_hamiltonian(&fam, 3));
        let chi = EnergyProfile {
            coefficient: 2.0,
            e_cut: s.e0 + 0.02,
        };
        let inv = invariant_hamiltonian(s.clone(), chi).unwrap();
        for z in random_points(50, [0.3, 0.3, 0.3, 1.4, 1.4, 1.4], 11) {
            let b = poisson_bracket(&h, &s, &z);
            let rev = dot(&h.gradient(&z), &apply_j(&s.grad_f(&z)));
            assert!((b + rev).abs() <= 1e-12 * (1.0 + b.abs()));
            let bi = poisson_bracket(&inv, &s, &z);
            let scale = norm(&s.grad_f(&z)) * norm(&inv.gradient(&z));
            assert!(bi.abs() <= 1e-12 * (1.0 + scale));
        }
        let outside = [0.0, 0.0, 1.2, 0.0, 0.0, 0.0];
        assert_eq!(poisson_bracket(&h, &s, &outside), 0.0);
    }

    #[test]
    fn bracket_matches_transport_derivative() {
        // d/ds f̄(Φ_{-s} z) at s=0 equals -{H, f̄}; Φ_{-s} z ≈ z - s J∇H(z).
        let s = state();
        let fam = AtomFamily::fitted(&*s, 8, 2, 1.0);
        let h = HamiltonianField::Atoms(sample_hamiltonian(&fam, 2));
        let eps = 1e-6;
        for z in random_points(30, [0.2, 0.2, 0.2, 1.0, 1.0, 1.0], 5) {
            let jg = apply_j(&h.gradient(&z));
            let mut zp = z;
            let mut zm = z;
            for i in 0..6 {
                zp[i] -= eps * jg[i];
                zm[i] += eps * jg[i];
            }
            let fd = (s.eval_f(&zp) - s.eval_f(&zm)) / (2.0 * eps);
            let b = poisson_bracket(&h, &s, &z);
            assert!((fd + b).abs() < 1e-6 * (1.0 + b.abs()), "{fd} vs {}", -b);
        }
    }

    #[test]
    fn pure_mode_scales_by_wavenumber_power() {
        let a = [1.0, 0.5, 2.0, 1.0, 1.0, 1.5];
        let wave = [1, 0, -2, 0, 1, 0];
        let field = AtomField::<f64>::pure_mode(wave, a);
        let k = field.wavevector(&field.modes[0]);
        let kn = norm(&k);
        let h = HamiltonianField::Atoms(field);
        let norms = spectral_norms(&h, 8).unwrap();
        let vol: f64 = a.iter().map(|x| 2.0 * x).product();
        assert!((norms[0] - (0.5 * vol).sqrt()).abs() < 1e-12 * norms[0]);
        for (s, v) in norms.iter().enumerate() {
            let want = kn.powi(s as i32) * norms[0];
            assert!((v - want).abs() < 1e-11 * want, "s={s}: {v} vs {want}");
        }
    }

    #[test]
    fn spectral_order_beyond_smoothness_is_rejected() {
        let fam = AtomFamily {
            n_modes: 2,
            max_wavenumber: 1,
            amplitude: 1.0,
            half_widths: [0.3, 0.3, 0.3, 1.5, 1.5, 1.5],
            bump_power: 24,
        };
        let h = HamiltonianField::Atoms(sample_hamiltonian::<f64>(&fam, 1));
        assert!(matches!(spectral_norm(&h, 25), Err(Error::SpectralOrder { .. })));
        assert!(spectral_norm(&h, 24).is_ok());
        let t = HamiltonianField::Translation {
            p: [1.0, 0.0, 0.0],
            cutoff: SmoothCutoff { inner: 1.0, outer: 2.0 },
        };
        assert!(matches!(spectral_norm(&t, 1), Err(Error::NoSpectrum(_))));
    }

    #[test]
    fn spectral_norms_match_direct_quadrature() {
        // Low bump power keeps a tensor Gauss rule exact enough in 6D.
        let fam = AtomFamily {
            n_modes: 3,
            max_wavenumber: 1,
            amplitude: 1.0,
            half_widths: [0.5, 0.6, 0.7, 1.0, 0.9, 0.8],
            bump_power: 1,
        };
        let field: AtomField<f64> = sample_hamiltonian(&fam, 4);
        let h = HamiltonianField::Atoms(field.clone());
        let spec = BoxCloudSpec {
            half_widths: fam.half_widths,
            order: 16,
        };
        let cloud = QuadratureCloud::<f64>::tensor_box(&spec);
        let vals: Vec<(f64, f64)> = cloud
            .nodes
            .par_iter()
            .map(|z| {
                let (v, g, _) = field.jet(z);
                (v * v, dot(&g, &g))
            })
            .collect();
        let l2: f64 = vals.iter().zip(&cloud.weights).map(|((a, _), w)| a * w).sum::<f64>().sqrt();
        let h1: f64 = vals.iter().zip(&cloud.weights).map(|((_, b), w)| b * w).sum::<f64>().sqrt();
        let norms = spectral_norms(&h, 1).unwrap();
        assert!((norms[0] - l2).abs() < 1e-8 * l2, "{} vs {l2}", norms[0]);
        assert!((norms[1] - h1).abs() < 1e-8 * h1, "{} vs {h1}", norms[1]);
    }

    #[test]
    fn norms_scale_linearly() {
        let s = state();
        let fam = AtomFamily::fitted(&*s, 6, 2, 1.0);
        let h: AtomField<f64> = sample_hamiltonian(&fam, 1);
        let spec = BoxCloudSpec {
            half_widths: fam.half_widths,
            order: 4,
        };
        let cloud = QuadratureCloud::<f64>::tensor_box(&spec);
        let step = box_step(&fam.half_widths, 4);
        let n1 = grad_norms(&h, &cloud, step);
        let hs = h.scaled(-2.5);
        let n2 = grad_norms(&hs, &cloud, step);
        for (a, b) in [(n1.l1, n2.l1), (n1.l2, n2.l2), (n1.linf, n2.linf), (n1.hess_linf, n2.hess_linf)] {
            assert!((2.5 * a - b).abs() <= 1e-12 * b);
        }
        let f = HamiltonianField::Atoms(h.clone());
        let sp1 = spectral_norms(&f, 6).unwrap();
        let sp2 = spectral_norms(&f.clone().scaled(-2.5), 6).unwrap();
        for (a, b) in sp1.iter().zip(&sp2) {
            assert!((2.5 * a - b).abs() <= 1e-12 * b);
        }
        let zero = grad_norms(&HamiltonianField::<f64>::Zero, &cloud, step);
        assert_eq!(zero.l1 + zero.l2 + zero.linf + zero.hess_linf, 0.0);
    }

    #[test]
    fn certificate_separates_invariant_and_generic_fields() {
        let s = state();
        let fam = AtomFamily::fitted(&*s, 8, 2, 1.0);
        let grid = BoxCloudSpec {
            half_widths: fam.half_widths,
            order: 4,
        };
        let box_cloud = QuadratureCloud::<f64>::tensor_box(&grid);
        let phase = QuadratureCloud::phase(&s, &PhaseCloudSpec::default());
        let h = HamiltonianField::Atoms(sample_hamiltonian(&fam, 1));
        let c1 = ak_certificate(&h, &s, 50.0, &box_cloud, &phase).unwrap();
        let c2 = ak_certificate(&h.clone().scaled(0.1), &s, 50.0, &box_cloud, &phase).unwrap();
        assert!(c1.ratio.is_finite() && !c1.near_invariant);
        assert!((c1.ratio - c2.ratio).abs() < 1e-12 * c1.ratio);

        let chi = EnergyProfile {
            coefficient: 1.0,
            e_cut: s.e0 + 0.01,
        };
        let inv = invariant_hamiltonian(s.clone(), chi).unwrap();
        let margin = QuadratureCloud::phase(&s, &PhaseCloudSpec::default().with_margin(0.3, 0.1));
        let c3 = ak_certificate(&inv, &s, 1e12, &margin, &phase).unwrap();
        assert!(c3.near_invariant && !c3.member);
    }
}
