//! Runs the bundled default suite and prints one verdict line per acceptance
//! criterion. Slow: the suite is run twice (the second run checks that the
//! CSV reports are byte-identical).

use std::path::Path;
use std::sync::Arc;

use num_rational::Ratio;
use vpstab::cloud::{BoxCloudSpec, QuadratureCloud};
use vpstab::functionals::l1_distance;
use vpstab::hamiltonian_fields::{invariant_hamiltonian, sample_hamiltonian, AtomFamily, AtomField, EnergyProfile, HamiltonianField};
use vpstab::inequality_lab::{check_interpolation, check_nash, exponent_calculator, Lab};
use vpstab::transport::{backward_values, PerturbedState};
use vpstab_cli::{run_batch, ScenarioFile, ScenarioReport};

struct Verdicts(Vec<(usize, bool)>);

impl Verdicts {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n:>2} {}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.0.push((n, pass));
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn steady_criterion(v: &mut Verdicts, rep: &ScenarioReport) {
    let s = rep.steady.expect("steady check ran");
    let pass = within(s.mass, 1.0, 1e-8) && s.virial_relative <= 1e-2 && s.residual <= 1e-5 && s.residual < s.coarse_residual;
    v.record(
        1,
        pass,
        format!(
            "mass {:.12}, virial |2K+W|/|W| {:.2e}, stationarity residual {:.3e} on {} nodes (half resolution {:.3e})",
            s.mass, s.virial_relative, s.residual, s.nodes, s.coarse_residual
        ),
    );
}

fn flow_criterion(v: &mut Verdicts, rep: &ScenarioReport, tol: f64) {
    let det = rep.flow.iter().fold(0.0f64, |a, r| a.max(r.det_error));
    let rt = rep.flow.iter().fold(0.0f64, |a, r| a.max(r.roundtrip));
    let gm = rep.flow.iter().fold(f64::INFINITY, |a, r| a.min(r.gronwall_margin));
    let pass = rep.flow.len() == 10 && det <= 1e-8 && rt <= 10.0 * tol && gm >= 0.0;
    v.record(
        2,
        pass,
        format!(
            "{} fields: max |det-1| {det:.2e}, max round trip {rt:.2e} (limit {:.0e}), min Gronwall margin {gm:.3e}",
            rep.flow.len(),
            10.0 * tol
        ),
    );
}

/// L¹ change of `f̄` under the flow of `χ(e)`, against twice the same
/// quantity at a 100x looser integrator tolerance.
fn invariance_criterion(v: &mut Verdicts, lab: &Lab) {
    let chi = EnergyProfile {
        coefficient: 0.5,
        e_cut: lab.state.e0 + 0.01,
    };
    let h = Arc::new(invariant_hamiltonian(lab.state.clone(), chi).unwrap());
    let l1_at = |tol: f64| {
        let p = PerturbedState::new(lab.state.clone(), h.clone(), 1.0, tol);
        let vals = backward_values(&p, &lab.margin).unwrap();
        l1_distance(&lab.margin_base, &vals, &lab.margin.weights)
    };
    let tol = lab.config.flow_tol;
    let l1 = l1_at(tol);
    let floor = 2.0 * l1_at(100.0 * tol);
    let limit = 1e-4 * lab.state.mass;
    v.record(
        3,
        l1 <= floor && floor < limit,
        format!("L1 change {l1:.3e}, floor {floor:.3e} (2x L1 at tol {:.0e}), limit {limit:.0e}", 100.0 * tol),
    );
}

fn equimeasurability_criterion(v: &mut Verdicts, rep: &ScenarioReport) {
    let worst_d = rep.chain.iter().fold(0.0f64, |a, r| a.max(r.equimeasurability.defect / r.equimeasurability.floor.defect));
    let worst_r = rep
        .chain
        .iter()
        .fold(0.0f64, |a, r| a.max(r.equimeasurability.rearranged_l1 / r.equimeasurability.floor.rearranged_l1));
    let pass = !rep.chain.is_empty() && rep.chain.iter().all(|r| r.equimeasurability.within_floor());
    let floor = rep.chain.first().map(|r| r.equimeasurability.floor);
    v.record(
        4,
        pass,
        format!("{} transported states: max defect/floor {worst_d:.3e}, max rearranged L1/floor {worst_r:.3e}, floor {floor:?}", rep.chain.len()),
    );
}

fn first_variation_criterion(v: &mut Verdicts, rep: &ScenarioReport) {
    let fv = &rep.first_variation;
    let worst = fv.iter().fold(0.0f64, |a, r| a.max(r.first_variation_0.abs() / r.bound));
    let order = fv.iter().fold(f64::INFINITY, |a, r| a.min(r.fd_order));
    let pass = fv.len() == 10 && worst <= 1.0 && order >= 1.8;
    v.record(
        5,
        pass,
        format!("{} fields: max |D1(0)| / (1e-4 |grad H|_inf H-scale) {worst:.3e}, min difference order {order:.3}", fv.len()),
    );
}

fn scaling_criteria(v: &mut Verdicts, rep: &ScenarioReport) {
    let Some(s) = &rep.sweep else {
        v.record(6, false, "no sweep summary".into());
        v.record(7, false, "no sweep summary".into());
        return;
    };
    let pass6 = rep.chain.len() == 20
        && within(s.l1_slope, 1.0, 0.1)
        && within(s.energy_slope, 2.0, 0.1)
        && within(s.gap_slope, 2.0, 0.15)
        && s.deviation_slope >= 2.7;
    v.record(
        6,
        pass6,
        format!(
            "{} scenarios: slopes L1 {:.4}, dH {:.4}, |gap| {:.4}, D2 deviation {:.4}",
            rep.chain.len(),
            s.l1_slope,
            s.energy_slope,
            s.gap_slope,
            s.deviation_slope
        ),
    );
    for p in &s.per_seed {
        println!(
            "    seed {}: L1 {:.4} dH {:.4} |gap| {:.4} deviation {:.4}",
            p.seed, p.l1, p.energy, p.gap, p.deviation
        );
    }
    let ratios: Vec<f64> = rep.chain.iter().filter_map(|r| r.lower_bound.ratio).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    let min_margin = rep
        .chain
        .iter()
        .fold(f64::INFINITY, |a, r| a.min(r.lower_bound.delta_energy + r.lower_bound.eps_disc));
    // Strict form: the pair-noise allowance in `holds` is not used here.
    let pass7 = min_margin >= 0.0 && s.ratios_positive && ratios.len() == rep.chain.len() && s.ratio_spread < 0.25;
    v.record(
        7,
        pass7,
        format!(
            "min dH + eps_disc {min_margin:.3e}, ratio dH/L1^2 in [{lo:.4}, {hi:.4}], spread over the two smallest lambda {:.3e}",
            s.ratio_spread
        ),
    );
}

fn functional_criterion(v: &mut Verdicts, rep: &ScenarioReport, lab: &Lab) {
    let mut worst = f64::INFINITY;
    let mut checked = 0;
    let mut note = |m: f64, rhs: f64| {
        worst = worst.min(m / rhs);
        checked += 1;
    };
    for r in &rep.chain {
        for i in &r.interp {
            note(i.margin, i.rhs);
        }
    }
    let bumped = AtomFamily {
        n_modes: 6,
        max_wavenumber: 2,
        amplitude: 1.0,
        half_widths: lab.family.half_widths,
        bump_power: 24,
    };
    for seed in 1..=5 {
        let u = HamiltonianField::Atoms(sample_hamiltonian(&bumped, seed));
        for (l, m) in [(1, 2), (2, 8), (5, 21)] {
            let rec = check_interpolation(&u, l, m).unwrap();
            note(rec.margin, rec.rhs);
        }
    }
    let interp_ok = worst >= -1e-12;

    let mode = HamiltonianField::Atoms(AtomField::pure_mode([1, 0, 2, 0, -1, 1], lab.family.half_widths));
    let mut eq_err = 0.0f64;
    for (l, m) in [(1, 2), (1, 5), (3, 7), (5, 21)] {
        let rec = check_interpolation(&mode, l, m).unwrap();
        eq_err = eq_err.max((rec.lhs - rec.rhs).abs() / rec.rhs);
    }
    let eq_ok = eq_err <= 1e-10;

    let cloud = QuadratureCloud::tensor_box(&BoxCloudSpec {
        half_widths: lab.family.half_widths,
        order: 5,
    });
    let mut nash_spread = 0.0f64;
    for seed in 1..=5 {
        let u = lab.atoms(seed);
        let c = check_nash(&u, &cloud).constant.unwrap();
        for s in [1e-3, 0.5, 37.5] {
            let cs = check_nash(&u.scaled(s), &cloud).constant.unwrap();
            nash_spread = nash_spread.max((cs - c).abs() / c);
        }
    }
    let nash_ok = nash_spread <= 1e-12;
    let sob = rep.chain.iter().filter_map(|r| r.sobolev.constant).fold(0.0f64, f64::max);
    v.record(
        8,
        interp_ok && eq_ok && nash_ok,
        format!(
            "{checked} interpolation checks, min margin/rhs {worst:.3e}; single-mode equality error {eq_err:.1e}; \
             Nash constant spread under scaling {nash_spread:.1e}; max Sobolev ratio {sob:.3e}"
        ),
    );
}

fn exponent_criterion(v: &mut Verdicts) {
    let e = exponent_calculator(22, 6, 4).unwrap();
    let base_ok = e.h_exponent == Ratio::new(4, 3) && e.final_exponent == Ratio::new(1, 6);
    let mut sweep_ok = true;
    for r in 22..=40 {
        let x = exponent_calculator(r, 6, 4).unwrap();
        sweep_ok &= x.h_exponent == Ratio::new(3 * r - 10, 2 * (r - 1)) && x.h_dominates;
    }
    v.record(
        9,
        base_ok && sweep_ok,
        format!(
            "(22,6,4): exponent of |grad H| {}, final exponent {}; (3r-10)/(2(r-1)) >= 4/3 for r in 22..=40: {sweep_ok}",
            e.h_exponent, e.final_exponent
        ),
    );
}

fn scan_criterion(v: &mut Verdicts, rep: &ScenarioReport, k: f64) {
    let Some(s) = &rep.scan else {
        v.record(10, false, "no scan report".into());
        return;
    };
    println!("    seed  eps     lambda      A_k ratio  residual    residual/floor");
    for r in &s.rows {
        println!(
            "    {:>4}  {:<6}  {:.4e}  {:>9.3}  {:.4e}  {:.3e}",
            r.seed, r.eps, r.lambda, r.ak_ratio, r.residual, r.residual_over_floor
        );
    }
    let min_over = s.rows.iter().fold(f64::INFINITY, |a, r| a.min(r.residual_over_floor));
    let pass = s.members.len() == 5
        && s.rows.len() == 15
        && s.rows.iter().all(|r| r.ak_ratio <= k && r.residual_over_floor > 10.0)
        && s.impostors == 0;
    v.record(
        10,
        pass,
        format!(
            "{} rows over members {:?} (k = {k}), baseline floor {:.3e}, min residual/floor {min_over:.3e}, impostors {}",
            s.rows.len(),
            s.members,
            s.floor,
            s.impostors
        ),
    );
}

#[test]
fn acceptance() {
    let file = ScenarioFile::bundled();
    let sc = &file.scenarios[0];
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());

    let first = run_batch(&file.scenarios, &a, threads).unwrap();
    let rep = &first.reports[0];
    for f in &rep.failures {
        println!("    scenario note: {f}");
    }
    let lab = Lab::new(sc.lab.clone()).unwrap();

    let mut v = Verdicts(Vec::new());
    steady_criterion(&mut v, rep);
    flow_criterion(&mut v, rep, sc.integrity.tol);
    invariance_criterion(&mut v, &lab);
    equimeasurability_criterion(&mut v, rep);
    first_variation_criterion(&mut v, rep);
    scaling_criteria(&mut v, rep);
    functional_criterion(&mut v, rep, &lab);
    exponent_criterion(&mut v);
    scan_criterion(&mut v, rep, sc.scan.k);

    run_batch(&file.scenarios, &b, threads + 1).unwrap();
    let (xa, xb) = (csv_files(&a.join(&sc.name)), csv_files(&b.join(&sc.name)));
    let names: Vec<&str> = xa.iter().map(|x| x.0.as_str()).collect();
    v.record(11, !xa.is_empty() && xa == xb, format!("second run with {} threads, CSV files compared byte for byte: {names:?}", threads + 1));

    v.0.sort_by_key(|x| x.0);
    let failed: Vec<usize> = v.0.iter().filter(|x| !x.1).map(|x| x.0).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
