//! Hamiltonian flows, their Jacobians, and pushforwards of steady states.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::cloud::QuadratureCloud;
use crate::error::{Error, Result};
use crate::hamiltonian_fields::{Hamiltonian, HamiltonianField};
use crate::linalg::{identity, op_norm, Mat};
use crate::ode::{integrate, StepControl};
use crate::radial_steady::SteadyState;
use crate::scalar::{apply_j, Phase, Real};

fn is_critical<T: Real, H: Hamiltonian<T> + ?Sized>(h: &H, z: &Phase<T>) -> bool {
    h.gradient(z).iter().all(|g| *g == T::zero())
}

/// `Φ_s(z0)` at every time in `times` (monotone from 0, one sign).
pub fn flow_checkpoints<T: Real, H: Hamiltonian<T> + ?Sized>(h: &H, z0: &Phase<T>, times: &[T], tol: T) -> Result<Vec<Phase<T>>> {
    if tol <= T::zero() {
        return Err(Error::Hypothesis("flow tolerance must be positive".into()));
    }
    // Critical points of H are fixed points of its flow.
    if is_critical(h, z0) {
        return Ok(vec![*z0; times.len()]);
    }
    integrate(|z| apply_j(&h.gradient(z)), *z0, times, &StepControl::with_tol(tol))
}

/// Solution of `ż = J∇H(z)`, `z(0) = z0`, at time `s`.
pub fn flow<T: Real, H: Hamiltonian<T> + ?Sized>(h: &H, z0: &Phase<T>, s: T, tol: T) -> Result<Phase<T>> {
    Ok(flow_checkpoints(h, z0, &[s], tol)?[0])
}

/// `Φ_s(z0)` and `∇Φ_s(z0)`, integrating `Ṁ = J∇²H(Φ) M` alongside the flow.
pub fn flow_jacobian<T: Real, H: Hamiltonian<T> + ?Sized>(h: &H, z0: &Phase<T>, s: T, tol: T) -> Result<(Phase<T>, Mat<T, 6>)> {
    if tol <= T::zero() {
        return Err(Error::Hypothesis("flow tolerance must be positive".into()));
    }
    let (_, g, hess) = h.jet(z0);
    if g.iter().all(|x| *x == T::zero()) && hess.iter().flatten().all(|x| *x == T::zero()) {
        return Ok((*z0, identity()));
    }
    let mut y0 = [T::zero(); 42];
    y0[..6].copy_from_slice(z0);
    for i in 0..6 {
        y0[6 + 7 * i] = T::one();
    }
    let rhs = |y: &[T; 42]| {
        let z = [y[0], y[1], y[2], y[3], y[4], y[5]];
        let (_, g, hs) = h.jet(&z);
        let mut out = [T::zero(); 42];
        out[..6].copy_from_slice(&apply_j(&g));
        // (J ∇²H) row i: rows 3..6 of ∇²H for i < 3, minus rows 0..3 otherwise.
        for i in 0..6 {
            let (row, sign) = if i < 3 { (i + 3, T::one()) } else { (i - 3, -T::one()) };
            for j in 0..6 {
                let mut acc = T::zero();
                for k in 0..6 {
                    acc = acc + hs[row][k] * y[6 + 6 * k + j];
                }
                out[6 + 6 * i + j] = sign * acc;
            }
        }
        out
    };
    let y = integrate(rhs, y0, &[s], &StepControl::with_tol(tol))?[0];
    let mut m = [[T::zero(); 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            m[i][j] = y[6 + 6 * i + j];
        }
    }
    Ok(([y[0], y[1], y[2], y[3], y[4], y[5]], m))
}

/// `e^{s‖∇²H‖_∞} - |∇Φ_s(z0)|`, nonnegative by Gronwall. `hess_sup` is the
/// sup of the Hessian operator norm over the region the orbit visits.
pub fn gronwall_margin<T: Real, H: Hamiltonian<T> + ?Sized>(h: &H, z0: &Phase<T>, s: T, tol: T, hess_sup: T) -> Result<T> {
    let (_, m) = flow_jacobian(h, z0, s, tol)?;
    Ok((s.abs() * hess_sup).exp() - op_norm(&m))
}

/// `f̄_s = f̄ ∘ Φ_{-s}` for a prescribed field.
#[derive(Debug, Clone)]
pub struct PerturbedState<T> {
    pub base: Arc<SteadyState<T>>,
    pub field: Arc<HamiltonianField<T>>,
    pub time: T,
    pub tol: T,
}

impl<T: Real> PerturbedState<T> {
    pub fn new(base: Arc<SteadyState<T>>, field: Arc<HamiltonianField<T>>, time: T, tol: T) -> Self {
        Self { base, field, time, tol }
    }

    /// Same state with the field scaled by `time` and run for unit time;
    /// equal to `self` up to integrator error.
    pub fn reparameterized(&self) -> Self {
        Self {
            base: self.base.clone(),
            field: Arc::new((*self.field).clone().scaled(self.time)),
            time: T::one(),
            tol: self.tol,
        }
    }

    pub fn eval(&self, z: &Phase<T>) -> Result<T> {
        pushforward_eval(self, z)
    }
}

/// `f̄(Φ_{-s} z)`; exactly `f̄(z)` at `s = 0`.
pub fn pushforward_eval<T: Real>(p: &PerturbedState<T>, z: &Phase<T>) -> Result<T> {
    if p.time == T::zero() {
        return Ok(p.base.eval_f(z));
    }
    let back = flow(&*p.field, z, -p.time, p.tol)?;
    Ok(p.base.eval_f(&back))
}

/// Both representations of a pushforward on one cloud.
#[derive(Debug, Clone)]
pub struct Pushforward<T> {
    /// `f̄_s(z_i)` by backward flow.
    pub values: Vec<T>,
    /// `Φ_s(z_i)`.
    pub images: Vec<Phase<T>>,
    /// `w_i f̄(z_i)`, the mass carried by each image.
    pub masses: Vec<T>,
}

pub fn pushforward_cloud<T: Real>(p: &PerturbedState<T>, cloud: &QuadratureCloud<T>) -> Result<Pushforward<T>> {
    let values = backward_values(p, cloud)?;
    let images = forward_images(&*p.field, &cloud.nodes, &[p.time], p.tol)?
        .pop()
        .unwrap_or_default();
    let masses = cloud
        .nodes
        .iter()
        .zip(&cloud.weights)
        .map(|(z, w)| *w * p.base.eval_f(z))
        .collect();
    Ok(Pushforward { values, images, masses })
}

/// `f̄_s(z_i)` for every node.
pub fn backward_values<T: Real>(p: &PerturbedState<T>, cloud: &QuadratureCloud<T>) -> Result<Vec<T>> {
    cloud.nodes.par_iter().map(|z| pushforward_eval(p, z)).collect()
}

/// Images of `nodes` at each time; result indexed `[time][node]`.
pub fn forward_images<T: Real, H: Hamiltonian<T> + ?Sized>(h: &H, nodes: &[Phase<T>], times: &[T], tol: T) -> Result<Vec<Vec<Phase<T>>>> {
    let per_node: Vec<Vec<Phase<T>>> = nodes
        .par_iter()
        .map(|z| {
            if times.iter().all(|t| *t == T::zero()) {
                Ok(vec![*z; times.len()])
            } else {
                flow_checkpoints(h, z, times, tol)
            }
        })
        .collect::<Result<_>>()?;
    Ok((0..times.len())
        .map(|k| per_node.iter().map(|v| v[k]).collect())
        .collect())
}

const IMAGE_MAGIC: &[u8; 4] = b"VPFI";
pub const IMAGE_FORMAT_VERSION: u32 = 1;

/// Writes forward images as a little-endian columnar file:
/// magic `VPFI`, `u32` version, `u64` count `n`, then seven columns of `n`
/// `f64` values each (`x1 x2 x3 v1 v2 v3 mass`).
pub fn write_images<T: Real>(path: &Path, images: &[Phase<T>], masses: &[T]) -> Result<()> {
    assert_eq!(images.len(), masses.len());
    let mut buf = Vec::with_capacity(16 + 56 * images.len());
    buf.extend_from_slice(IMAGE_MAGIC);
    buf.extend_from_slice(&IMAGE_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(images.len() as u64).to_le_bytes());
    for c in 0..6 {
        for z in images {
            buf.extend_from_slice(&z[c].to_f64_lossy().to_le_bytes());
        }
    }
    for m in masses {
        buf.extend_from_slice(&m.to_f64_lossy().to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_images(path: &Path) -> Result<(Vec<Phase<f64>>, Vec<f64>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = || Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, "malformed image file"));
    if buf.len() < 16 || &buf[..4] != IMAGE_MAGIC {
        return Err(bad());
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().map_err(|_| bad())?);
    if version != IMAGE_FORMAT_VERSION {
        return Err(Error::FormatVersion(version));
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().map_err(|_| bad())?) as usize;
    if buf.len() != 16 + 56 * n {
        return Err(bad());
    }
    let col = |c: usize, i: usize| {
        let o = 16 + 8 * (c * n + i);
        f64::from_le_bytes(buf[o..o + 8].try_into().expect("eight bytes"))
    };
    let images = (0..n)
        .map(|i| [col(0, i), col(1, i), col(2, i), col(3, i), col(4, i), col(5, i)])
        .collect();
    let masses = (0..n).map(|i| col(6, i)).collect();
    Ok((images, masses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{BoxCloudSpec, PhaseCloudSpec};
    use crate::hamiltonian_fields::{box_step, grad_norms, sample_hamiltonian, AtomFamily, SmoothCutoff};
    use crate::linalg::det;
    use crate::radial_steady::{build_polytrope, PolytropeSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state() -> Arc<SteadyState<f64>> {
        Arc::new(build_polytrope(&PolytropeSpec::default()).unwrap())
    }

    fn atoms(s: &SteadyState<f64>, seed: u64) -> HamiltonianField<f64> {
        let fam = AtomFamily::fitted(s, 8, 2, 0.05);
        HamiltonianField::Atoms(sample_hamiltonian(&fam, seed))
    }

    fn core_points(n: usize, seed: u64) -> Vec<Phase<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut z = [0.0; 6];
                for (i, x) in z.iter_mut().enumerate() {
                    let a = if i < 3 { 0.2 } else { 1.0 };
                    *x = rng.gen_range(-a..a);
                }
                z
            })
            .collect()
    }

    #[test]
    fn quadratic_field_rotates_phase_space() {
        let h = HamiltonianField::Quadratic(SmoothCutoff { inner: 10.0, outer: 20.0 });
        let z0 = [0.3, -0.2, 0.5, 1.0, 0.1, -0.7];
        let z = flow(&h, &z0, std::f64::consts::FRAC_PI_2, 1e-12).unwrap();
        let want = [z0[3], z0[4], z0[5], -z0[0], -z0[1], -z0[2]];
        for i in 0..6 {
            assert!((z[i] - want[i]).abs() < 1e-10, "{z:?}");
        }
    }

    #[test]
    fn zero_field_is_identity() {
        let h = HamiltonianField::<f64>::Zero;
        let z0 = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(flow(&h, &z0, 1.0, 1e-10).unwrap(), z0);
        let (z, m) = flow_jacobian(&h, &z0, 1.0, 1e-10).unwrap();
        assert_eq!(z, z0);
        assert_eq!(m, identity::<f64, 6>());
    }

    #[test]
    fn flows_are_reversible_and_form_a_group() {
        let s = state();
        let h = atoms(&s, 1);
        let tol = 1e-11;
        for z0 in core_points(20, 1) {
            let z1 = flow(&h, &z0, 1.0, tol).unwrap();
            let back = flow(&h, &z1, -1.0, tol).unwrap();
            let two = flow(&h, &flow(&h, &z0, 0.4, tol).unwrap(), 0.6, tol).unwrap();
            for i in 0..6 {
                assert!((back[i] - z0[i]).abs() <= 10.0 * tol, "{back:?} vs {z0:?}");
                assert!((two[i] - z1[i]).abs() <= 10.0 * tol);
            }
        }
    }

    #[test]
    fn jacobian_is_volume_preserving_and_matches_differences() {
        let s = state();
        let h = atoms(&s, 2);
        for z0 in core_points(5, 2) {
            let (z1, m) = flow_jacobian(&h, &z0, 1.0, 1e-12).unwrap();
            assert!((det(&m) - 1.0).abs() < 1e-9);
            let plain = flow(&h, &z0, 1.0, 1e-12).unwrap();
            for i in 0..6 {
                assert!((plain[i] - z1[i]).abs() < 1e-10);
            }
            let eps = 1e-5;
            for j in 0..6 {
                let mut zp = z0;
                let mut zm = z0;
                zp[j] += eps;
                zm[j] -= eps;
                let fp = flow(&h, &zp, 1.0, 1e-13).unwrap();
                let fm = flow(&h, &zm, 1.0, 1e-13).unwrap();
                for i in 0..6 {
                    let fd = (fp[i] - fm[i]) / (2.0 * eps);
                    assert!((fd - m[i][j]).abs() < 1e-6, "{i}{j}: {fd} vs {}", m[i][j]);
                }
            }
            assert!(op_norm(&m) >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn gronwall_bound_holds() {
        let s = state();
        let fam = AtomFamily::fitted(&s, 8, 2, 0.3);
        let h = HamiltonianField::Atoms(sample_hamiltonian(&fam, 4));
        let grid = QuadratureCloud::tensor_box(&BoxCloudSpec {
            half_widths: fam.half_widths,
            order: 5,
        });
        let hess = grad_norms(&h, &grid, box_step(&fam.half_widths, 5)).hess_linf;
        for z0 in core_points(10, 4) {
            for t in [0.5, 1.0, -1.0] {
                let margin = gronwall_margin(&h, &z0, t, 1e-11, hess).unwrap();
                assert!(margin >= 0.0, "{margin}");
            }
        }
    }

    #[test]
    fn reparameterization_agrees() {
        let s = state();
        let h = Arc::new(atoms(&s, 3));
        let p = PerturbedState::new(s.clone(), h, 0.7, 1e-12);
        let q = p.reparameterized();
        for z in core_points(10, 3) {
            let a = p.eval(&z).unwrap();
            let b = q.eval(&z).unwrap();
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn zero_time_pushforward_is_exact() {
        let s = state();
        let h = Arc::new(atoms(&s, 1));
        let p = PerturbedState::new(s.clone(), h, 0.0, 1e-10);
        let spec = PhaseCloudSpec {
            radial_panels: 4,
            radial_order: 2,
            angular_order: 2,
            velocity_angular_order: 2,
            speed_order: 2,
            ..Default::default()
        };
        let cloud = QuadratureCloud::phase(&s, &spec);
        let pf = pushforward_cloud(&p, &cloud).unwrap();
        for (i, z) in cloud.nodes.iter().enumerate() {
            assert_eq!(pf.values[i], s.eval_f(z));
            assert_eq!(pf.images[i], *z);
        }
    }

    #[test]
    fn image_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.bin");
        let imgs = core_points(7, 5);
        let masses: Vec<f64> = (0..7).map(|i| i as f64 * 0.25).collect();
        write_images(&path, &imgs, &masses).unwrap();
        let (a, b) = read_images(&path).unwrap();
        assert_eq!(a, imgs);
        assert_eq!(b, masses);
    }
}
