//! Numerical checks of each inequality in the local stability argument, run
//! on concrete pairs `(f̄, H)`: energy lower bound, bracket comparison,
//! second-variation deviation, interpolation, Nash and Sobolev, the exponent
//! bookkeeping, and the uniqueness scan.
//!
//! Everything here is `f64`: the lab sits on top of the generic kernels and
//! only feeds reports.

use std::sync::Arc;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{ball_rule, BoxCloudSpec, PhaseCloudSpec, QuadratureCloud};
use crate::error::{Error, Result};
use crate::functionals::{
    energy, first_variation, l1_distance, random_test_functions, recenter_hamiltonian, second_variation,
    stationarity_residual, EnergyBreakdown, PairSettings, RecenterSettings, TestFunction, Transported,
};
use crate::hamiltonian_fields::{
    ak_certificate, box_step, grad_norms, poisson_bracket, sample_hamiltonian, sobolev_norm, spectral_norms, sup_estimate,
    AkCertificate, AtomFamily, AtomField, GradNorms, Hamiltonian, HamiltonianField,
};
use crate::radial_steady::{build_polytrope, PolytropeSpec, SteadyState};
use crate::rearrangement::{equimeasurability_defect_with, rearranged_l1_distance_with, LevelGrid, LevelKernel};
use crate::scalar::{norm, Phase};
use crate::linalg::det;
use crate::transport::{backward_values, flow, flow_jacobian, gronwall_margin, PerturbedState};

/// Phase-space dimension.
pub const DIM: i64 = 6;

/// Seeded atom family used by the lab, relative to the steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySpec {
    pub n_modes: usize,
    pub max_wavenumber: u32,
    pub amplitude: f64,
    /// Spatial half-width of the box over the support radius.
    pub x_fraction: f64,
    pub bump_power: u32,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            n_modes: 8,
            max_wavenumber: 1,
            amplitude: 0.005,
            x_fraction: 1.0,
            bump_power: 8,
        }
    }
}

/// Spatial rule and threshold for the distance of `φ_f` to `φ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloseSettings {
    /// Bound on `sup |δφ| + ‖∇δφ‖_{L²}`; only reported against.
    pub threshold: f64,
    pub radial_order: usize,
    pub angular_order: usize,
    /// Outer radius of the gradient integral over the support radius.
    pub outer_radius: f64,
    /// Plummer length of `δφ`, over the support radius. Point particles give
    /// a grainy `∇δφ` unless this is comparable to the cloud spacing.
    pub smoothing: f64,
}

impl Default for CloseSettings {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            radial_order: 8,
            angular_order: 7,
            outer_radius: 4.0,
            smoothing: 0.2,
        }
    }
}

impl CloseSettings {
    /// Panels off the cloud's radial nodes, out to `outer_radius`.
    pub fn rule(&self, support: f64) -> Vec<([f64; 3], f64)> {
        let outer = self.outer_radius * support;
        let mut breaks: Vec<f64> = [0.0, 0.37, 0.81, 1.3].iter().map(|b| b * support).filter(|b| *b < outer).collect();
        let mut r = *breaks.last().unwrap_or(&0.0);
        while r < outer {
            r = (1.6 * r).min(outer);
            breaks.push(r);
        }
        ball_rule(&breaks, self.radial_order, self.angular_order)
    }
}

impl FamilySpec {
    pub fn build(&self, state: &SteadyState<f64>) -> Result<AtomFamily> {
        AtomFamily::spanning(
            state,
            self.n_modes,
            self.max_wavenumber,
            self.amplitude,
            self.x_fraction,
            self.bump_power,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub steady: PolytropeSpec<f64>,
    /// Cloud for the energy and its variations.
    pub bulk_cloud: PhaseCloudSpec,
    /// Coarser cloud for the softened pair sums and for recentering.
    pub pair_cloud: PhaseCloudSpec,
    /// Cloud with a margin around the support, for L¹ distances and
    /// distribution functions of transported states.
    pub margin_cloud: PhaseCloudSpec,
    /// Cloud for the stationarity residual of `f̄` itself.
    pub stationarity_cloud: PhaseCloudSpec,
    pub pair: PairSettings,
    pub family: FamilySpec,
    pub flow_tol: f64,
    pub recenter: RecenterSettings,
    /// Gauss order of the tensor grid on the family box used for norms.
    pub norm_box_order: usize,
    /// Times at which the second variation is sampled; the last must be 1.
    pub s_grid: Vec<f64>,
    pub test_functions: usize,
    pub test_seed: u64,
    pub level_count: usize,
    pub level_width: f64,
    pub interp_pairs: Vec<(usize, usize)>,
    pub sobolev_order: usize,
    pub close: CloseSettings,
}

impl Default for LabConfig {
    fn default() -> Self {
        let bulk = PhaseCloudSpec {
            radial_order: 4,
            velocity_angular_order: 6,
            ..PhaseCloudSpec::default()
        };
        Self {
            steady: PolytropeSpec::default(),
            bulk_cloud: bulk,
            pair_cloud: PhaseCloudSpec {
                radial_order: 3,
                angular_order: 2,
                velocity_angular_order: 2,
                speed_order: 3,
                ..PhaseCloudSpec::default()
            },
            margin_cloud: bulk.with_margin(0.1, 0.05),
            stationarity_cloud: PhaseCloudSpec::stationarity(),
            pair: PairSettings::default(),
            family: FamilySpec::default(),
            flow_tol: 1e-10,
            recenter: RecenterSettings::default(),
            norm_box_order: 6,
            s_grid: vec![0.25, 0.5, 0.75, 1.0],
            test_functions: 20,
            test_seed: 1,
            level_count: 200,
            level_width: 0.1,
            interp_pairs: vec![(1, 2), (1, 4), (2, 4), (1, 8), (2, 8), (3, 8), (4, 8)],
            sobolev_order: 4,
            close: CloseSettings::default(),
        }
    }
}

impl LabConfig {
    /// Same configuration with the bulk, margin and stationarity clouds refined by
    /// `factor` per axis.
    pub fn with_resolution(&self, factor: f64) -> Self {
        Self {
            bulk_cloud: self.bulk_cloud.refined(factor),
            margin_cloud: self.margin_cloud.refined(factor),
            stationarity_cloud: self.stationarity_cloud.refined(factor),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.steady.validate()?;
        let increasing = self.s_grid.windows(2).all(|w| w[0] < w[1]);
        if self.s_grid.is_empty() || !increasing || self.s_grid[0] <= 0.0 || self.s_grid.last() != Some(&1.0) {
            return Err(Error::InvalidSpec("s_grid must increase from above 0 to exactly 1".into()));
        }
        if !(self.flow_tol > 0.0) {
            return Err(Error::InvalidSpec("flow_tol must be positive".into()));
        }
        if self.level_count < 2 || !(self.level_width > 0.0) {
            return Err(Error::InvalidSpec("level grid needs count >= 2 and a positive width".into()));
        }
        let c = &self.close;
        if c.radial_order == 0 || c.angular_order == 0 || !(c.outer_radius >= 1.0) || !(c.threshold > 0.0) || !(c.smoothing > 0.0) {
            return Err(Error::InvalidSpec("close rule needs positive orders, threshold, smoothing and outer_radius >= 1".into()));
        }
        Ok(())
    }
}

/// Steady state, clouds and cached base quantities shared by all scenarios.
pub struct Lab {
    pub config: LabConfig,
    pub state: Arc<SteadyState<f64>>,
    pub family: AtomFamily,
    pub bulk_cloud: QuadratureCloud<f64>,
    pub margin: QuadratureCloud<f64>,
    pub norm_box: QuadratureCloud<f64>,
    pub base: Transported<f64>,
    /// Pair cloud on both sides; used for recentering.
    pub small: Transported<f64>,
    pub base_energy: EnergyBreakdown<f64>,
    /// `f̄` on the margin cloud.
    pub margin_base: Vec<f64>,
    pub tests: Vec<TestFunction<f64>>,
    pub equimeasurability_floor: EquimeasurabilityFloor,
    /// Spatial rule for `‖∇δφ‖_{L²}`.
    pub ball: Vec<([f64; 3], f64)>,
}

impl Lab {
    pub fn new(config: LabConfig) -> Result<Self> {
        config.validate()?;
        let state = Arc::new(build_polytrope(&config.steady)?);
        let family = config.family.build(&state)?;
        let bulk_cloud = QuadratureCloud::phase(&state, &config.bulk_cloud);
        let pair_cloud = QuadratureCloud::phase(&state, &config.pair_cloud);
        let margin = QuadratureCloud::phase(&state, &config.margin_cloud);
        let norm_box = QuadratureCloud::tensor_box(&BoxCloudSpec {
            half_widths: family.half_widths,
            order: config.norm_box_order,
        });
        let base = Transported::steady(state.clone(), &bulk_cloud, &pair_cloud, config.pair);
        let small = Transported::steady(state.clone(), &pair_cloud, &pair_cloud, config.pair);
        let base_energy = energy(&base);
        let margin_base: Vec<f64> = margin.nodes.par_iter().map(|z| state.eval_f(z)).collect();
        let tests = random_test_functions(&state, config.test_functions, config.test_seed);
        let ball = config.close.rule(state.r_support);
        let mut lab = Self {
            config,
            state,
            family,
            bulk_cloud,
            margin,
            norm_box,
            base,
            small,
            base_energy,
            margin_base,
            tests,
            equimeasurability_floor: EquimeasurabilityFloor::default(),
            ball,
        };
        lab.equimeasurability_floor = lab.reference_floor()?;
        Ok(lab)
    }

    fn kernel(&self) -> LevelKernel {
        LevelKernel::Smooth {
            relative_width: self.config.level_width,
        }
    }

    pub fn atoms(&self, seed: u64) -> AtomField<f64> {
        sample_hamiltonian(&self.family, seed)
    }

    fn norm_step(&self) -> [f64; 6] {
        box_step(&self.family.half_widths, self.config.norm_box_order)
    }

    /// `λ H_seed`, recentered so that the barycentre does not move.
    pub fn prepare(&self, seed: u64, lambda: f64) -> Result<Prepared> {
        self.prepare_atoms(seed, lambda, self.atoms(seed).scaled(lambda))
    }

    pub fn prepare_atoms(&self, seed: u64, lambda: f64, atoms: AtomField<f64>) -> Result<Prepared> {
        let raw = HamiltonianField::Atoms(atoms.clone());
        let (field, shift) = recenter_hamiltonian(&raw, &self.small, self.config.flow_tol, &self.config.recenter)?;
        let norms = grad_norms(&field, &self.norm_box, self.norm_step());
        Ok(Prepared {
            seed,
            lambda,
            atoms,
            field,
            shift,
            norms,
        })
    }

    /// Flows the bulk particles over the s grid and evaluates `f̄_1` on the
    /// margin cloud.
    pub fn trajectory(&self, field: &HamiltonianField<f64>) -> Result<Trajectory> {
        let times = self.config.s_grid.clone();
        let states = self.base.along_flow(field, &times, self.config.flow_tol)?;
        let p = PerturbedState::new(self.state.clone(), Arc::new(field.clone()), 1.0, self.config.flow_tol);
        let margin_values = backward_values(&p, &self.margin)?;
        Ok(Trajectory {
            times,
            states,
            margin_values,
        })
    }

    /// `ϵ_disc = |D¹_disc(0)| + 10·tol·(|K| + |W|)`: the first variation of
    /// the discrete energy at `f̄` (zero in the continuum) plus the
    /// integrator's share.
    pub fn discretization_floor(&self, field: &HamiltonianField<f64>) -> f64 {
        let e = &self.base_energy;
        first_variation(&self.base, field).abs() + 10.0 * self.config.flow_tol * (e.kinetic.abs() + e.potential.abs())
    }

    /// Pair-sum response to exactly `f̄`-preserving maps whose rms spatial
    /// displacement on the pair particles matches that of `moved`: a rigid
    /// joint rotation of `x` and `v` about the third axis, and the shear that
    /// rotates by an angle proportional to `L_z` (the time-one flow of a
    /// function of `L_z`). Their true pair change is zero, so what remains is
    /// quadrature noise; the larger of the two is returned.
    pub fn pair_noise(&self, moved: &Transported<f64>) -> f64 {
        let p = &moved.pairs;
        let lz = |x: &Phase<f64>| x[0] * x[4] - x[1] * x[3];
        let (mut disp, mut rad, mut shear) = (0.0, 0.0, 0.0);
        for ((z, x), m) in p.images.iter().zip(p.origins.iter()).zip(p.masses.iter()) {
            disp += m * (0..3).map(|k| (z[k] - x[k]).powi(2)).sum::<f64>();
            let r2 = x[0] * x[0] + x[1] * x[1];
            rad += m * r2;
            shear += m * lz(x).powi(2) * r2;
        }
        if rad <= 0.0 || shear <= 0.0 || disp == 0.0 {
            return 0.0;
        }
        let rotate = |z: &Phase<f64>, th: f64| {
            let (s, c) = th.sin_cos();
            let mut y = *z;
            y[0] = c * z[0] - s * z[1];
            y[1] = s * z[0] + c * z[1];
            y[3] = c * z[3] - s * z[4];
            y[4] = s * z[3] + c * z[4];
            y
        };
        let th = (disp / rad).sqrt();
        let a = (disp / shear).sqrt();
        let rigid = energy(&self.base.mapped(move |z: &Phase<f64>| rotate(z, th))).pair_part;
        let sheared = energy(&self.base.mapped(move |z: &Phase<f64>| rotate(z, a * lz(z)))).pair_part;
        rigid.abs().max(sheared.abs())
    }

    /// Defects of exactly measure-preserving reference maps (translations in
    /// `x`, rotations in an `x-v` plane) on the margin cloud, doubled.
    fn reference_floor(&self) -> Result<EquimeasurabilityFloor> {
        let w = &self.margin.weights;
        let mut out = EquimeasurabilityFloor::default();
        let mut maps: Vec<Box<dyn Fn(&Phase<f64>) -> Phase<f64> + Sync>> = Vec::new();
        for d in [0.005, 0.01, 0.02] {
            maps.push(Box::new(move |z: &Phase<f64>| {
                let mut y = *z;
                y[0] -= d;
                y
            }));
        }
        for th in [0.005f64, 0.01, 0.02] {
            let (s, c) = th.sin_cos();
            maps.push(Box::new(move |z: &Phase<f64>| {
                let mut y = *z;
                y[0] = c * z[0] + s * z[3];
                y[3] = -s * z[0] + c * z[3];
                y
            }));
        }
        for inverse in &maps {
            let moved: Vec<f64> = self.margin.nodes.par_iter().map(|z| self.state.eval_f(&inverse(z))).collect();
            let grid = LevelGrid::covering(&[&self.margin_base, &moved], self.config.level_count)?;
            let defect = equimeasurability_defect_with(&self.margin_base, &moved, w, &grid, self.kernel());
            let rl1 = rearranged_l1_distance_with(&self.margin_base, &moved, w, &grid, self.kernel())?;
            out.defect = out.defect.max(2.0 * defect);
            out.rearranged_l1 = out.rearranged_l1.max(2.0 * rl1);
        }
        Ok(out)
    }

    /// Every chain quantity for one `(seed, λ)`.
    pub fn evaluate(&self, seed: u64, lambda: f64) -> Result<ChainReport> {
        let prep = self.prepare(seed, lambda)?;
        let traj = self.trajectory(&prep.field)?;
        let lower_bound = check_lower_bound(self, &prep.field, &traj);
        let bracket_cmp = check_bracket_comparison(self, &prep.field, &prep.norms, &traj);
        let second_var_dev = check_second_variation_deviation(self, &prep.field, &prep.norms, &traj);
        let u = HamiltonianField::Atoms(prep.atoms.clone());
        let interp = self
            .config
            .interp_pairs
            .iter()
            .map(|(l, m)| check_interpolation(&u, *l, *m))
            .collect::<Result<Vec<_>>>()?;
        let nash = check_nash(&prep.atoms, &self.norm_box);
        let radius = 2.0 * self.state.rho_phase;
        let sobolev = check_sobolev(
            &prep.atoms,
            self.config.sobolev_order,
            radius,
            &BoxCloudSpec {
                half_widths: self.family.half_widths,
                order: self.config.norm_box_order,
            },
        )?;
        let stationarity = stationarity_residual(traj.last(), &self.tests)?;
        let c = traj.last().closeness(&self.ball, self.config.close.smoothing * self.state.r_support);
        let close = CloseRecord {
            potential_sup: c.potential_sup,
            grad_l2: c.grad_l2,
            within: c.potential_sup + c.grad_l2 <= self.config.close.threshold,
        };
        let equimeasurability = check_equimeasurability(self, &traj.margin_values)?;
        Ok(ChainReport {
            seed,
            lambda,
            shift: prep.shift,
            norms: prep.norms,
            lower_bound,
            bracket_cmp,
            second_var_dev,
            interp,
            nash,
            sobolev,
            stationarity,
            close,
            equimeasurability,
        })
    }
}

/// A recentered field together with its norms.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub lambda: f64,
    pub atoms: AtomField<f64>,
    pub field: HamiltonianField<f64>,
    pub shift: [f64; 3],
    /// Norms of `field` on the family box.
    pub norms: GradNorms<f64>,
}

/// Transported states along the s grid, and `f̄_1` on the margin cloud.
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Transported<f64>>,
    pub margin_values: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &Transported<f64> {
        self.states.last().expect("s grid is never empty")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EquimeasurabilityFloor {
    pub defect: f64,
    pub rearranged_l1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equimeasurability {
    pub defect: f64,
    pub rearranged_l1: f64,
    pub floor: EquimeasurabilityFloor,
}

impl Equimeasurability {
    pub fn within_floor(&self) -> bool {
        self.defect <= self.floor.defect && self.rearranged_l1 <= self.floor.rearranged_l1
    }
}

pub fn check_equimeasurability(lab: &Lab, values: &[f64]) -> Result<Equimeasurability> {
    let w = &lab.margin.weights;
    let grid = LevelGrid::covering(&[&lab.margin_base, values], lab.config.level_count)?;
    Ok(Equimeasurability {
        defect: equimeasurability_defect_with(&lab.margin_base, values, w, &grid, lab.kernel()),
        rearranged_l1: rearranged_l1_distance_with(&lab.margin_base, values, w, &grid, lab.kernel())?,
        floor: lab.equimeasurability_floor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub delta_energy: f64,
    pub l1: f64,
    pub l1_squared: f64,
    /// `Δℋ / ‖f̄_1 - f̄‖²`; `None` when `|Δℋ| < 10 ϵ_disc` or the distance
    /// is at the integrator floor.
    pub ratio: Option<f64>,
    pub eps_disc: f64,
    pub first_variation_0: f64,
    /// See [`Lab::pair_noise`].
    pub pair_noise: f64,
    /// `Δℋ >= -(ϵ_disc + pair_noise)`.
    pub holds: bool,
}

pub fn check_lower_bound(lab: &Lab, field: &HamiltonianField<f64>, traj: &Trajectory) -> LowerBound {
    let delta_energy = energy(traj.last()).total - lab.base_energy.total;
    let l1 = l1_distance(&lab.margin_base, &traj.margin_values, &lab.margin.weights);
    let first_variation_0 = first_variation(&lab.base, field);
    let e = &lab.base_energy;
    let eps_disc = first_variation_0.abs() + 10.0 * lab.config.flow_tol * (e.kinetic.abs() + e.potential.abs());
    let pair_noise = lab.pair_noise(traj.last());
    let l1_squared = l1 * l1;
    let l1_floor = 1e3 * lab.config.flow_tol * lab.state.mass;
    let ratio = (delta_energy.abs() >= 10.0 * eps_disc && l1 > l1_floor).then(|| delta_energy / l1_squared);
    LowerBound {
        delta_energy,
        l1,
        l1_squared,
        ratio,
        eps_disc,
        first_variation_0,
        pair_noise,
        holds: delta_energy >= -(eps_disc + pair_noise),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyReport {
    /// Mass from integrating the tabulated density.
    pub mass: f64,
    /// `|2K + W| / |W|`.
    pub virial_relative: f64,
    /// Stationarity residual of `f̄` on the stationarity cloud.
    pub residual: f64,
    /// The same on that cloud with every order halved.
    pub coarse_residual: f64,
    pub nodes: usize,
}

/// Construction checks for `f̄` alone; needs no [`Lab`].
pub fn check_steady(config: &LabConfig) -> Result<(Arc<SteadyState<f64>>, SteadyReport)> {
    config.validate()?;
    let state = Arc::new(build_polytrope(&config.steady)?);
    let tests = random_test_functions(&state, config.test_functions, config.test_seed);
    let pairs = QuadratureCloud::phase(&state, &config.pair_cloud);
    let residual_on = |spec: &PhaseCloudSpec| -> Result<(f64, usize)> {
        let cloud = QuadratureCloud::phase(&state, spec);
        let f = Transported::steady(state.clone(), &cloud, &pairs, config.pair);
        Ok((stationarity_residual(&f, &tests)?, cloud.len()))
    };
    let (residual, nodes) = residual_on(&config.stationarity_cloud)?;
    let (coarse_residual, _) = residual_on(&config.stationarity_cloud.refined(0.5))?;
    let report = SteadyReport {
        mass: state.tabulated_mass(),
        virial_relative: (state.virial_residual() / state.potential_energy()).abs(),
        residual,
        coarse_residual,
        nodes,
    };
    Ok((state, report))
}

/// Settings for the flow-integrity and first-variation checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrityConfig {
    /// Family fields are multiplied by this before the flow-integrity
    /// checks, so the maps move points by a visible amount. The finite
    /// differences use the field as drawn: scaled up, the energy curve is
    /// pre-asymptotic at these steps.
    pub field_scale: f64,
    pub points: usize,
    pub point_seed: u64,
    pub tol: f64,
    pub times: Vec<f64>,
    /// Centre and steps of the central differences of `s ↦ ℋ(f̄_s)`.
    pub fd_center: f64,
    pub fd_steps: Vec<f64>,
}

impl Default for IntegrityConfig {
    fn default() -> Self {
        Self {
            field_scale: 20.0,
            points: 8,
            point_seed: 7,
            tol: 1e-11,
            times: vec![0.5, 1.0, -1.0],
            fd_center: 0.5,
            fd_steps: vec![0.1, 0.05, 0.025],
        }
    }
}

impl IntegrityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.field_scale > 0.0) {
            return Err(Error::InvalidSpec("integrity tol and field_scale must be positive".into()));
        }
        if self.fd_steps.len() < 2 || self.fd_steps.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidSpec("need at least two positive fd_steps".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowIntegrity {
    pub seed: u64,
    /// `max |det ∇Φ_1 - 1|` over the sample points.
    pub det_error: f64,
    /// `max |Φ_{-1}(Φ_1(z)) - z|_∞`.
    pub roundtrip: f64,
    /// Smallest Gronwall margin over points and times.
    pub gronwall_margin: f64,
    pub hess_linf: f64,
}

/// Points inside the support, drawn from the margin cloud.
pub fn support_points(lab: &Lab, count: usize, seed: u64) -> Vec<Phase<f64>> {
    use rand::{Rng, SeedableRng};
    let inside: Vec<usize> = (0..lab.margin.len()).filter(|i| lab.margin_base[*i] > 0.0).collect();
    if inside.is_empty() {
        return Vec::new();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| lab.margin.nodes[inside[rng.gen_range(0..inside.len())]]).collect()
}

pub fn check_flow_integrity(lab: &Lab, seed: u64, cfg: &IntegrityConfig) -> Result<FlowIntegrity> {
    let h = HamiltonianField::Atoms(lab.atoms(seed).scaled(cfg.field_scale));
    let hess_linf = grad_norms(&h, &lab.norm_box, lab.norm_step()).hess_linf;
    let pts = support_points(lab, cfg.points, cfg.point_seed.wrapping_add(seed));
    let per: Vec<Result<(f64, f64, f64)>> = pts
        .par_iter()
        .map(|z| {
            let (z1, m) = flow_jacobian(&h, z, 1.0, cfg.tol)?;
            let back = flow(&h, &z1, -1.0, cfg.tol)?;
            let rt = (0..6).fold(0.0f64, |a, i| a.max((back[i] - z[i]).abs()));
            let mut margin = f64::INFINITY;
            for t in &cfg.times {
                margin = margin.min(gronwall_margin(&h, z, *t, cfg.tol, hess_linf)?);
            }
            Ok(((det(&m) - 1.0).abs(), rt, margin))
        })
        .collect();
    let mut out = FlowIntegrity {
        seed,
        det_error: 0.0,
        roundtrip: 0.0,
        gronwall_margin: f64::INFINITY,
        hess_linf,
    };
    for r in per {
        let (d, rt, m) = r?;
        out.det_error = out.det_error.max(d);
        out.roundtrip = out.roundtrip.max(rt);
        out.gronwall_margin = out.gronwall_margin.min(m);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstVariationCheck {
    pub seed: u64,
    /// `D¹_disc(0)` on the bulk cloud for the unscaled family field.
    pub first_variation_0: f64,
    /// `1e-4 ‖∇H‖_∞ (|K| + |W|)`.
    pub bound: f64,
    /// `|(ℋ(s+h) - ℋ(s-h))/2h - D¹(s)|` for each step, on the pair cloud,
    /// for the same unscaled field.
    pub fd_errors: Vec<f64>,
    /// `log2` ratio of the two finest errors (steps halving).
    pub fd_order: f64,
}

pub fn check_first_variation(lab: &Lab, seed: u64, cfg: &IntegrityConfig) -> Result<FirstVariationCheck> {
    let h = HamiltonianField::Atoms(lab.atoms(seed));
    let first_variation_0 = first_variation(&lab.base, &h);
    let linf = grad_norms(&h, &lab.norm_box, lab.norm_step()).linf;
    let e = &lab.base_energy;
    let bound = 1e-4 * linf * (e.kinetic.abs() + e.potential.abs());

    let s0 = cfg.fd_center;
    let mut times = vec![s0];
    for d in &cfg.fd_steps {
        times.push(s0 + d);
        times.push(s0 - d);
    }
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..times.len()).collect();
        idx.sort_by(|a, b| times[*a].total_cmp(&times[*b]));
        idx
    };
    let sorted: Vec<f64> = order.iter().map(|i| times[*i]).collect();
    let states = lab.small.along_flow(&h, &sorted, cfg.tol)?;
    let at = |t: usize| &states[order.iter().position(|i| *i == t).unwrap_or(0)];
    let d1 = first_variation(at(0), &h);
    let fd_errors: Vec<f64> = cfg
        .fd_steps
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let ep = energy(at(1 + 2 * k)).total;
            let em = energy(at(2 + 2 * k)).total;
            ((ep - em) / (2.0 * d) - d1).abs()
        })
        .collect();
    let n = fd_errors.len();
    let ratio = cfg.fd_steps[n - 2] / cfg.fd_steps[n - 1];
    let fd_order = (fd_errors[n - 2] / fd_errors[n - 1]).ln() / ratio.ln();
    Ok(FirstVariationCheck {
        seed,
        first_variation_0,
        bound,
        fd_errors,
        fd_order,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BracketComparison {
    pub l1_dist: f64,
    /// `‖{H, f̄}‖_{L¹}` on the margin cloud.
    pub g_l1: f64,
    /// `l1_dist - g_l1`.
    pub gap: f64,
    /// `‖∇H‖_∞(‖∇H‖_∞ + ‖∇²H‖_∞ e^{‖∇²H‖_∞})`.
    pub bound: f64,
    /// `|gap| / bound`, the constant this scenario needs.
    pub constant: Option<f64>,
}

pub fn bracket_bound(norms: &GradNorms<f64>) -> f64 {
    norms.linf * (norms.linf + norms.hess_linf * norms.hess_linf.exp())
}

pub fn check_bracket_comparison(
    lab: &Lab,
    field: &HamiltonianField<f64>,
    norms: &GradNorms<f64>,
    traj: &Trajectory,
) -> BracketComparison {
    let l1_dist = l1_distance(&lab.margin_base, &traj.margin_values, &lab.margin.weights);
    let g: Vec<f64> = lab
        .margin
        .nodes
        .par_iter()
        .map(|z| poisson_bracket(field, &lab.state, z).abs())
        .collect();
    let g_l1 = g.iter().zip(&lab.margin.weights).fold(0.0, |a, (g, w)| a + g * w);
    let gap = l1_dist - g_l1;
    let bound = bracket_bound(norms);
    BracketComparison {
        l1_dist,
        g_l1,
        gap,
        bound,
        constant: (bound > 0.0).then(|| gap.abs() / bound),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondVariationDeviation {
    pub second_variation_0: f64,
    /// `(s, |D²(s) - D²(0)|)`.
    pub samples: Vec<(f64, f64)>,
    pub max_deviation: f64,
    /// `‖∇H‖²_∞(‖∇H‖_∞ + ‖∇²H‖_∞)`, the shape of the two cubic bounds.
    pub t_bound: f64,
    pub constant: Option<f64>,
    /// `|Δℋ - D¹(0) - ½D²(0)|`.
    pub cubic_remainder: f64,
}

pub fn cubic_bound(norms: &GradNorms<f64>) -> f64 {
    norms.linf * norms.linf * (norms.linf + norms.hess_linf)
}

pub fn check_second_variation_deviation(
    lab: &Lab,
    field: &HamiltonianField<f64>,
    norms: &GradNorms<f64>,
    traj: &Trajectory,
) -> SecondVariationDeviation {
    let d2_0 = second_variation(&lab.base, field);
    let samples: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(s, st)| (*s, (second_variation(st, field) - d2_0).abs()))
        .collect();
    let max_deviation = samples.iter().fold(0.0f64, |m, (_, d)| m.max(*d));
    let t_bound = cubic_bound(norms);
    let de = energy(traj.last()).total - lab.base_energy.total;
    let d1 = first_variation(&lab.base, field);
    SecondVariationDeviation {
        second_variation_0: d2_0,
        samples,
        max_deviation,
        t_bound,
        constant: (t_bound > 0.0).then(|| max_deviation / t_bound),
        cubic_remainder: (de - d1 - 0.5 * d2_0).abs(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationRecord {
    pub ell: usize,
    pub m: usize,
    /// `‖∇^ℓ u‖`.
    pub lhs: f64,
    /// `‖u‖^{1-ℓ/m} ‖∇^m u‖^{ℓ/m}`.
    pub rhs: f64,
    pub margin: f64,
    /// Both sides agree to `1e-10` relative.
    pub equality: bool,
}

/// Spectral check of `‖∇^ℓ u‖ <= ‖u‖^{1-ℓ/m} ‖∇^m u‖^{ℓ/m}`. Fails when
/// `m` exceeds the smoothness the field's bump can represent.
pub fn check_interpolation(u: &HamiltonianField<f64>, ell: usize, m: usize) -> Result<InterpolationRecord> {
    if ell < 1 || ell > m {
        return Err(Error::Hypothesis(format!("interpolation needs 1 <= l <= m (got {ell}, {m})")));
    }
    let norms = spectral_norms(u, m)?;
    let t = ell as f64 / m as f64;
    let lhs = norms[ell];
    let rhs = norms[0].powf(1.0 - t) * norms[m].powf(t);
    let margin = rhs - lhs;
    Ok(InterpolationRecord {
        ell,
        m,
        lhs,
        rhs,
        margin,
        equality: margin.abs() <= 1e-10 * rhs.abs().max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NashRecord {
    pub l1: f64,
    pub l2: f64,
    pub grad_l2: f64,
    /// `‖u‖₂^{1+2/n}`.
    pub lhs: f64,
    /// `‖u‖₁^{2/n} ‖∇u‖₂`.
    pub rhs: f64,
    /// `lhs / rhs`; `None` for `u = 0`.
    pub constant: Option<f64>,
}

/// Both sides of the Nash inequality in dimension 6, with norms taken on
/// `cloud`, which must cover the support of `u`.
pub fn check_nash<H: Hamiltonian<f64> + ?Sized>(u: &H, cloud: &QuadratureCloud<f64>) -> NashRecord {
    let per: Vec<(f64, f64)> = cloud
        .nodes
        .par_iter()
        .map(|z| {
            let (v, g) = (u.value(z), u.gradient(z));
            (v, norm(&g))
        })
        .collect();
    let (mut l1, mut l2, mut g2) = (0.0, 0.0, 0.0);
    for ((v, g), w) in per.iter().zip(&cloud.weights) {
        l1 += w * v.abs();
        l2 += w * v * v;
        g2 += w * g * g;
    }
    let (l2, grad_l2) = (l2.sqrt(), g2.sqrt());
    let n = DIM as f64;
    let lhs = l2.powf(1.0 + 2.0 / n);
    let rhs = l1.powf(2.0 / n) * grad_l2;
    NashRecord {
        l1,
        l2,
        grad_l2,
        lhs,
        rhs,
        constant: (rhs > 0.0).then(|| lhs / rhs),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevRecord {
    pub order: usize,
    pub radius: f64,
    /// `‖u‖_{L∞(B_R)}`.
    pub lhs: f64,
    /// `‖∇^s u‖_{L²(B_R)}`.
    pub rhs: f64,
    pub constant: Option<f64>,
}

/// `|∇^s u|²` for a bump-free trigonometric sum, from
/// `Σ_{j,l} c_j c_l (k_j·k_l)^s cos^{(s)}(a_j) cos^{(s)}(a_l)`.
fn pointwise_derivative_sq(u: &AtomField<f64>, s: usize, z: &Phase<f64>) -> f64 {
    let shift = s as f64 * std::f64::consts::FRAC_PI_2;
    let terms: Vec<([f64; 6], f64)> = u
        .modes
        .iter()
        .map(|m| {
            let k = u.wavevector(m);
            let a = (0..6).map(|i| k[i] * z[i]).sum::<f64>() + m.phase;
            (k, m.coefficient * (a + shift).cos())
        })
        .collect();
    let mut acc = 0.0;
    for (kj, tj) in &terms {
        for (kl, tl) in &terms {
            let kk: f64 = (0..6).map(|i| kj[i] * kl[i]).sum();
            acc += tj * tl * kk.powi(s as i32);
        }
    }
    acc
}

/// Both sides of `‖u‖_{L∞(B_R)} <= C ‖∇^s u‖_{L²(B_R)}` for `s > 3`. With the
/// bump on, the ball must contain the box and the right side is the
/// spectral norm; without it, the right side is integrated on the part of
/// the `grid` box inside the ball.
pub fn check_sobolev(u: &AtomField<f64>, order: usize, radius: f64, grid: &BoxCloudSpec) -> Result<SobolevRecord> {
    if 2 * order as i64 <= DIM {
        return Err(Error::Hypothesis(format!("Sobolev embedding needs s > n/2 (got s = {order})")));
    }
    let cloud = QuadratureCloud::tensor_box(grid).pruned(|z| norm(z) <= radius);
    let step: [f64; 6] = box_step(&grid.half_widths, grid.order);
    let rhs = if u.bump {
        let diag = u.half_widths.iter().map(|a| a * a).sum::<f64>().sqrt();
        if diag > radius {
            return Err(Error::Hypothesis(format!("ball radius {radius} does not contain the field's box")));
        }
        sobolev_norm_at(u, order)?
    } else {
        let vals: Vec<f64> = cloud.nodes.par_iter().map(|z| pointwise_derivative_sq(u, order, z)).collect();
        vals.iter().zip(&cloud.weights).fold(0.0, |a, (v, w)| a + v * w).sqrt()
    };
    let (lhs, _) = sup_estimate(&cloud, step, |z| if norm(z) <= radius { u.value(z).abs() } else { 0.0 });
    Ok(SobolevRecord {
        order,
        radius,
        lhs,
        rhs,
        constant: (rhs > 0.0).then(|| lhs / rhs),
    })
}

fn sobolev_norm_at(u: &AtomField<f64>, order: usize) -> Result<f64> {
    Ok(spectral_norms(&HamiltonianField::Atoms(u.clone()), order)?[order])
}

/// Exponents of the final interpolation argument, as exact rationals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainExponents {
    pub r: i64,
    pub n: i64,
    pub s: i64,
    /// `(r-s-2)/(r-1)`.
    pub a1: Ratio<i64>,
    /// `(s+1)/(r-1)`.
    pub a2: Ratio<i64>,
    /// `1 + 2/n`.
    pub nash: Ratio<i64>,
    /// `3(r-s-2)/(n(r-1)) + (r-2)/(r-1)`, the power of `‖∇H‖`.
    pub h_exponent: Ratio<i64>,
    /// `(1 + 3(s+1)/n)/(r-1)`, the power of `ε`.
    pub eps_exponent: Ratio<i64>,
    /// `eps_exponent + h_exponent - nash`.
    pub final_exponent: Ratio<i64>,
    /// `h_exponent >= nash`.
    pub h_dominates: bool,
}

pub fn exponent_calculator(r: i64, n: i64, s: i64) -> Result<ChainExponents> {
    if r < 22 {
        return Err(Error::Hypothesis(format!("needs r >= 22 (got {r})")));
    }
    if n != DIM {
        return Err(Error::Hypothesis(format!("needs n = 6 (got {n})")));
    }
    if 2 * s <= n || s > r - 2 {
        return Err(Error::Hypothesis(format!("needs n/2 < s <= r-2 (got s = {s})")));
    }
    let q = |a: i64, b: i64| Ratio::new(a, b);
    let a1 = q(r - s - 2, r - 1);
    let a2 = q(s + 1, r - 1);
    let nash = Ratio::from_integer(1) + q(2, n);
    let h_exponent = q(3 * (r - s - 2), n * (r - 1)) + q(r - 2, r - 1);
    let eps_exponent = (Ratio::from_integer(1) + q(3 * (s + 1), n)) / Ratio::from_integer(r - 1);
    Ok(ChainExponents {
        r,
        n,
        s,
        a1,
        a2,
        nash,
        h_exponent,
        eps_exponent,
        final_exponent: eps_exponent + h_exponent - nash,
        h_dominates: h_exponent >= nash,
    })
}

/// One row of the lab report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub seed: u64,
    pub lambda: f64,
    /// Translation momentum added by recentering.
    pub shift: [f64; 3],
    pub norms: GradNorms<f64>,
    pub lower_bound: LowerBound,
    pub bracket_cmp: BracketComparison,
    pub second_var_dev: SecondVariationDeviation,
    pub interp: Vec<InterpolationRecord>,
    pub nash: NashRecord,
    pub sobolev: SobolevRecord,
    /// Stationarity residual of `f̄_1`.
    pub stationarity: f64,
    pub close: CloseRecord,
    pub equimeasurability: Equimeasurability,
}

/// Distance of the potential of `f̄_1` to `φ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloseRecord {
    pub potential_sup: f64,
    pub grad_l2: f64,
    /// Whether the sum is within the configured threshold.
    pub within: bool,
}

pub const CHAIN_CSV_SCHEMA: &str = "chain-v1";

pub const CHAIN_CSV_HEADER: [&str; 29] = [
    "seed",
    "lambda",
    "grad_l1",
    "grad_linf",
    "hess_linf",
    "delta_energy",
    "l1",
    "l1_squared",
    "lower_ratio",
    "eps_disc",
    "pair_noise",
    "lower_holds",
    "g_l1",
    "gap",
    "bracket_bound",
    "bracket_constant",
    "d2_0",
    "max_deviation",
    "t_bound",
    "deviation_constant",
    "cubic_remainder",
    "interp_min_margin",
    "nash_constant",
    "sobolev_constant",
    "stationarity",
    "equi_defect",
    "rearranged_l1",
    "close_potential_sup",
    "close_grad_l2",
];

/// 17 significant digits, so values round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), fmt_f64)
}

impl ChainReport {
    pub fn interp_min_margin(&self) -> Option<f64> {
        self.interp.iter().map(|r| r.margin).reduce(f64::min)
    }

    pub fn csv_row(&self) -> Vec<String> {
        let lb = &self.lower_bound;
        let bc = &self.bracket_cmp;
        let sv = &self.second_var_dev;
        vec![
            self.seed.to_string(),
            fmt_f64(self.lambda),
            fmt_f64(self.norms.l1),
            fmt_f64(self.norms.linf),
            fmt_f64(self.norms.hess_linf),
            fmt_f64(lb.delta_energy),
            fmt_f64(lb.l1),
            fmt_f64(lb.l1_squared),
            fmt_opt(lb.ratio),
            fmt_f64(lb.eps_disc),
            fmt_f64(lb.pair_noise),
            lb.holds.to_string(),
            fmt_f64(bc.g_l1),
            fmt_f64(bc.gap),
            fmt_f64(bc.bound),
            fmt_opt(bc.constant),
            fmt_f64(sv.second_variation_0),
            fmt_f64(sv.max_deviation),
            fmt_f64(sv.t_bound),
            fmt_opt(sv.constant),
            fmt_f64(sv.cubic_remainder),
            fmt_opt(self.interp_min_margin()),
            fmt_opt(self.nash.constant),
            fmt_opt(self.sobolev.constant),
            fmt_f64(self.stationarity),
            fmt_f64(self.equimeasurability.defect),
            fmt_f64(self.equimeasurability.rearranged_l1),
            fmt_f64(self.close.potential_sup),
            fmt_f64(self.close.grad_l2),
        ]
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<f64> {
    pooled_exponent(&[points.to_vec()])
}

/// Common slope of several log-log series, each with its own intercept.
pub fn pooled_exponent(groups: &[Vec<(f64, f64)>]) -> Result<f64> {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for g in groups {
        if g.iter().any(|(x, y)| !(*x > 0.0) || !(*y > 0.0)) {
            return Err(Error::Hypothesis("log-log fit needs positive data".into()));
        }
        let logs: Vec<(f64, f64)> = g.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
        let k = logs.len() as f64;
        let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
        let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
        for (x, y) in &logs {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
        }
    }
    if sxx == 0.0 {
        return Err(Error::Hypothesis("log-log fit needs at least two distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSlopes {
    pub seed: u64,
    pub l1: f64,
    pub energy: f64,
    pub gap: f64,
    pub deviation: f64,
}

/// λ-scaling exponents and fitted constants over a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub l1_slope: f64,
    pub energy_slope: f64,
    pub gap_slope: f64,
    pub deviation_slope: f64,
    pub cubic_slope: f64,
    pub per_seed: Vec<SeedSlopes>,
    /// Largest relative change of `Δℋ/‖f̄_1 - f̄‖²` between the two smallest
    /// λ, over seeds.
    pub ratio_spread: f64,
    pub ratios_positive: bool,
    pub lower_bound_holds: bool,
    /// Fitted constants: the largest value any scenario needs.
    pub bracket_constant: f64,
    pub deviation_constant: f64,
    pub nash_constant: f64,
    pub sobolev_constant: f64,
}

fn series(reports: &[&ChainReport], f: impl Fn(&ChainReport) -> f64) -> Vec<(f64, f64)> {
    reports.iter().map(|r| (r.lambda, f(r))).collect()
}

pub fn summarize(reports: &[ChainReport]) -> Result<SweepSummary> {
    let mut seeds: Vec<u64> = reports.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let groups: Vec<Vec<&ChainReport>> = seeds
        .iter()
        .map(|s| reports.iter().filter(|r| r.seed == *s).collect())
        .collect();
    type Pick = fn(&ChainReport) -> f64;
    let picks: [Pick; 5] = [
        |r| r.lower_bound.l1,
        |r| r.lower_bound.delta_energy,
        |r| r.bracket_cmp.gap.abs(),
        |r| r.second_var_dev.max_deviation,
        |r| r.second_var_dev.cubic_remainder,
    ];
    let mut pooled = [0.0; 5];
    for (slot, pick) in pooled.iter_mut().zip(picks) {
        let data: Vec<Vec<(f64, f64)>> = groups.iter().map(|g| series(g, pick)).collect();
        *slot = pooled_exponent(&data)?;
    }
    let per_seed = seeds
        .iter()
        .zip(&groups)
        .map(|(seed, g)| {
            Ok(SeedSlopes {
                seed: *seed,
                l1: fit_exponent(&series(g, picks[0]))?,
                energy: fit_exponent(&series(g, picks[1]))?,
                gap: fit_exponent(&series(g, picks[2]))?,
                deviation: fit_exponent(&series(g, picks[3]))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ratio_spread = 0.0f64;
    let mut ratios_positive = true;
    for g in &groups {
        let mut by_lambda: Vec<(f64, Option<f64>)> = g.iter().map(|r| (r.lambda, r.lower_bound.ratio)).collect();
        by_lambda.sort_by(|a, b| a.0.total_cmp(&b.0));
        ratios_positive &= by_lambda.iter().all(|(_, q)| q.map_or(false, |q| q > 0.0));
        match (by_lambda.first(), by_lambda.get(1)) {
            (Some((_, Some(a))), Some((_, Some(b)))) => {
                ratio_spread = ratio_spread.max((a - b).abs() / (0.5 * (a + b)).abs());
            }
            _ => ratio_spread = f64::INFINITY,
        }
    }
    let max_of = |f: fn(&ChainReport) -> Option<f64>| reports.iter().filter_map(f).fold(0.0f64, f64::max);
    Ok(SweepSummary {
        l1_slope: pooled[0],
        energy_slope: pooled[1],
        gap_slope: pooled[2],
        deviation_slope: pooled[3],
        cubic_slope: pooled[4],
        per_seed,
        ratio_spread,
        ratios_positive,
        lower_bound_holds: reports.iter().all(|r| r.lower_bound.holds),
        bracket_constant: max_of(|r| r.bracket_cmp.constant),
        deviation_constant: max_of(|r| r.second_var_dev.constant),
        nash_constant: max_of(|r| r.nash.constant),
        sobolev_constant: max_of(|r| r.sobolev.constant),
    })
}

/// Runs [`Lab::evaluate`] over every `(seed, λ)` and summarises.
pub fn scaling_sweep(lab: &Lab, seeds: &[u64], lambdas: &[f64]) -> Result<(Vec<ChainReport>, SweepSummary)> {
    let mut reports = Vec::with_capacity(seeds.len() * lambdas.len());
    for seed in seeds {
        for lambda in lambdas {
            reports.push(lab.evaluate(*seed, *lambda)?);
        }
    }
    let summary = summarize(&reports)?;
    Ok((reports, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Number of `A_k` members to scan.
    pub seeds: usize,
    pub first_seed: u64,
    /// Candidates tried before giving up on finding `seeds` members.
    pub max_attempts: usize,
    pub eps: Vec<f64>,
    pub k: f64,
    /// `H` is scaled so that `‖H‖_{W^{budget_order,2}} = ε`.
    pub budget_order: usize,
    /// A residual below `impostor_factor` times the floor is flagged.
    pub impostor_factor: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            first_seed: 1,
            max_attempts: 50,
            eps: vec![0.1, 0.05, 0.02],
            k: 50.0,
            budget_order: 2,
            impostor_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub seed: u64,
    pub eps: f64,
    pub lambda: f64,
    pub ak_ratio: f64,
    pub residual: f64,
    pub residual_over_floor: f64,
    pub grad_l1: f64,
    pub grad_linf: f64,
    pub hess_linf: f64,
    /// Bracketed right side of the gradient bound (without `C k`).
    pub chain_rhs: f64,
    /// `grad_l1 / (k chain_rhs)`.
    pub c_needed: f64,
    pub impostor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    /// Stationarity residual of `f̄` itself on the bulk cloud.
    pub floor: f64,
    pub members: Vec<u64>,
    pub rejected: Vec<(u64, AkCertificate)>,
    pub rows: Vec<ScanRow>,
    /// Smallest `C` for which every row satisfies the gradient bound.
    pub fitted_c: f64,
    pub impostors: usize,
}

pub const SCAN_CSV_SCHEMA: &str = "scan-v1";

pub const SCAN_CSV_HEADER: [&str; 12] = [
    "seed",
    "eps",
    "lambda",
    "ak_ratio",
    "residual",
    "residual_over_floor",
    "grad_l1",
    "grad_linf",
    "hess_linf",
    "chain_rhs",
    "c_needed",
    "impostor",
];

impl ScanRow {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            fmt_f64(self.eps),
            fmt_f64(self.lambda),
            fmt_f64(self.ak_ratio),
            fmt_f64(self.residual),
            fmt_f64(self.residual_over_floor),
            fmt_f64(self.grad_l1),
            fmt_f64(self.grad_linf),
            fmt_f64(self.hess_linf),
            fmt_f64(self.chain_rhs),
            fmt_f64(self.c_needed),
            self.impostor.to_string(),
        ]
    }
}

/// `‖∇H‖_∞(‖∇H‖_∞ + ‖∇²H‖_∞)^{1/2} + ‖∇H‖²_∞ + ‖∇H‖_∞‖∇²H‖_∞ e^{‖∇²H‖_∞}`.
pub fn chain_rhs(norms: &GradNorms<f64>) -> f64 {
    let (g, h) = (norms.linf, norms.hess_linf);
    g * (g + h).sqrt() + g * g + g * h * h.exp()
}

/// Seeds, in order from `first_seed`, whose fields are certified `A_k`
/// members; rejected candidates are returned with their certificates.
pub fn select_members(lab: &Lab, scan: &ScanConfig) -> Result<(Vec<u64>, Vec<(u64, AkCertificate)>)> {
    let mut members = Vec::new();
    let mut rejected = Vec::new();
    let mut seed = scan.first_seed;
    for _ in 0..scan.max_attempts {
        if members.len() >= scan.seeds {
            break;
        }
        let h = HamiltonianField::Atoms(lab.atoms(seed));
        let cert = ak_certificate(&h, &lab.state, scan.k, &lab.norm_box, &lab.bulk_cloud)?;
        if cert.member {
            members.push(seed);
        } else {
            rejected.push((seed, cert));
        }
        seed += 1;
    }
    Ok((members, rejected))
}

/// Scales members of the family to each budget `ε`, recenters, transports
/// `f̄` and measures how far `f̄_1` is from stationary.
pub fn uniqueness_scan(lab: &Lab, scan: &ScanConfig) -> Result<ScanReport> {
    if scan.seeds == 0 {
        return Ok(ScanReport {
            floor: 0.0,
            members: Vec::new(),
            rejected: Vec::new(),
            rows: Vec::new(),
            fitted_c: 0.0,
            impostors: 0,
        });
    }
    let floor = stationarity_residual(&lab.base, &lab.tests)?;
    let (members, rejected) = select_members(lab, scan)?;
    let mut rows = Vec::new();
    for seed in &members {
        let atoms = lab.atoms(*seed);
        let unit = HamiltonianField::Atoms(atoms.clone());
        let budget = sobolev_norm(&unit, scan.budget_order)?;
        let cert = ak_certificate(&unit, &lab.state, scan.k, &lab.norm_box, &lab.bulk_cloud)?;
        for eps in &scan.eps {
            let lambda = eps / budget;
            let prep = lab.prepare_atoms(*seed, lambda, atoms.scaled(lambda))?;
            let moved = lab.base.at_time(&prep.field, 1.0, lab.config.flow_tol)?;
            let residual = stationarity_residual(&moved, &lab.tests)?;
            let rhs = chain_rhs(&prep.norms);
            let over = residual / floor;
            rows.push(ScanRow {
                seed: *seed,
                eps: *eps,
                lambda,
                ak_ratio: cert.ratio,
                residual,
                residual_over_floor: over,
                grad_l1: prep.norms.l1,
                grad_linf: prep.norms.linf,
                hess_linf: prep.norms.hess_linf,
                chain_rhs: rhs,
                c_needed: prep.norms.l1 / (scan.k * rhs),
                impostor: over < scan.impostor_factor,
            });
        }
    }
    Ok(ScanReport {
        floor,
        fitted_c: rows.iter().map(|r| r.c_needed).fold(0.0, f64::max),
        impostors: rows.iter().filter(|r| r.impostor).count(),
        members,
        rejected,
        rows,
    })
}
