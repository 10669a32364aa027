use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vpstab::inequality_lab::{
    check_first_variation, check_flow_integrity, check_steady, summarize, uniqueness_scan, ChainReport, FirstVariationCheck,
    FlowIntegrity, Lab, ScanReport, SteadyReport, SweepSummary,
};

use crate::config::{Check, Scenario};
use crate::error::{CliError, Result};
use crate::report;

pub const REPORT_SCHEMA: &str = "report-v1";

/// Everything one scenario produced; serialized as `report.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub schema: String,
    pub name: String,
    pub steady: Option<SteadyReport>,
    pub flow: Vec<FlowIntegrity>,
    pub first_variation: Vec<FirstVariationCheck>,
    pub chain: Vec<ChainReport>,
    pub sweep: Option<SweepSummary>,
    pub scan: Option<ScanReport>,
    /// Errors and failed verdicts, in check order.
    pub failures: Vec<String>,
}

/// A file to write, relative to the output root.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub index: usize,
    pub report: ScenarioReport,
    pub artifacts: Vec<Artifact>,
}

struct Collector {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
    failures: Vec<String>,
}

impl Collector {
    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.artifacts.push(Artifact {
            path: self.dir.join(name),
            bytes,
        });
    }

    fn table(&mut self, name: &str, t: &report::CsvTable) {
        match t.to_bytes() {
            Ok(b) => self.file(name, b),
            Err(e) => self.failures.push(format!("{name}: {e}")),
        }
    }

    fn fail(&mut self, check: Check, msg: impl std::fmt::Display) {
        self.failures.push(format!("{check}: {msg}"));
    }
}

/// Runs every enabled check; numerical errors become failures of this
/// scenario rather than aborting it.
pub fn run_scenario(index: usize, sc: &Scenario) -> ScenarioOutcome {
    let mut c = Collector {
        dir: sc.output_dir(),
        artifacts: Vec::new(),
        failures: Vec::new(),
    };
    let mut rep = ScenarioReport {
        schema: REPORT_SCHEMA.into(),
        name: sc.name.clone(),
        ..ScenarioReport::default()
    };

    if sc.has(Check::Steady) {
        match check_steady(&sc.lab) {
            Ok((state, r)) => {
                if (r.mass - sc.lab.steady.target_mass).abs() > 1e-8 {
                    c.fail(Check::Steady, format!("mass {} differs from the target", r.mass));
                }
                if r.virial_relative > 1e-2 {
                    c.fail(Check::Steady, format!("virial residual {:.3e}", r.virial_relative));
                }
                if r.residual > 1e-5 || r.residual >= r.coarse_residual {
                    c.fail(Check::Steady, format!("stationarity residual {:.3e} (coarse {:.3e})", r.residual, r.coarse_residual));
                }
                c.table("steady.csv", &report::steady_table(&r));
                c.file("profile.dat", report::radial_profiles(&state, 200).into_bytes());
                c.file("distribution.dat", report::distribution_profile(&state, sc.lab.level_count).into_bytes());
                match serde_json::to_vec_pretty(&*state) {
                    Ok(b) => c.file("steady.json", b),
                    Err(e) => c.fail(Check::Steady, e),
                }
                rep.steady = Some(r);
            }
            Err(e) => c.fail(Check::Steady, e),
        }
    }

    let needs_lab = [Check::Flow, Check::FirstVariation, Check::Chain, Check::Scan].iter().any(|k| sc.has(*k));
    let lab = if needs_lab {
        match Lab::new(sc.lab.clone()) {
            Ok(l) => Some(l),
            Err(e) => {
                c.failures.push(format!("lab: {e}"));
                None
            }
        }
    } else {
        None
    };

    if let Some(lab) = &lab {
        if sc.has(Check::Flow) {
            for seed in &sc.flow_seeds {
                match check_flow_integrity(lab, *seed, &sc.integrity) {
                    Ok(r) => {
                        if r.det_error > 1e-8 || r.roundtrip > 10.0 * sc.integrity.tol || r.gronwall_margin < 0.0 {
                            c.fail(Check::Flow, format!("seed {seed}: {r:?}"));
                        }
                        rep.flow.push(r);
                    }
                    Err(e) => c.fail(Check::Flow, format!("seed {seed}: {e}")),
                }
            }
            c.table("flow.csv", &report::flow_table(&rep.flow));
        }
        if sc.has(Check::FirstVariation) {
            for seed in &sc.flow_seeds {
                match check_first_variation(lab, *seed, &sc.integrity) {
                    Ok(r) => {
                        if r.first_variation_0.abs() > r.bound || !(r.fd_order >= 1.8) {
                            c.fail(Check::FirstVariation, format!("seed {seed}: D1 {:.3e} bound {:.3e} order {:.3}", r.first_variation_0, r.bound, r.fd_order));
                        }
                        rep.first_variation.push(r);
                    }
                    Err(e) => c.fail(Check::FirstVariation, format!("seed {seed}: {e}")),
                }
            }
            c.table("first_variation.csv", &report::first_variation_table(&rep.first_variation));
        }
        if sc.has(Check::Chain) {
            for seed in &sc.seeds {
                for lambda in &sc.lambdas {
                    match lab.evaluate(*seed, *lambda) {
                        Ok(r) => {
                            if !r.lower_bound.holds {
                                c.fail(Check::Chain, format!("seed {seed} λ {lambda}: lower bound fails, ΔH {:.3e}", r.lower_bound.delta_energy));
                            }
                            if !r.equimeasurability.within_floor() {
                                c.fail(Check::Chain, format!("seed {seed} λ {lambda}: equimeasurability above floor"));
                            }
                            if r.interp.iter().any(|i| i.margin < -1e-12 * i.rhs) {
                                c.fail(Check::Chain, format!("seed {seed} λ {lambda}: negative interpolation margin"));
                            }
                            rep.chain.push(r);
                        }
                        Err(e) => c.fail(Check::Chain, format!("seed {seed} λ {lambda}: {e}")),
                    }
                }
            }
            c.table("chain.csv", &report::chain_table(&rep.chain));
            if sc.lambdas.len() >= 2 && !rep.chain.is_empty() {
                match summarize(&rep.chain) {
                    Ok(s) => rep.sweep = Some(s),
                    Err(e) => c.fail(Check::Chain, format!("sweep fit: {e}")),
                }
                for (name, text) in report::sweep_curves(&rep.chain) {
                    c.file(&format!("sweep_{name}.dat"), text.into_bytes());
                }
            }
        }
        if sc.has(Check::Scan) {
            match uniqueness_scan(lab, &sc.scan) {
                Ok(s) => {
                    if s.members.len() < sc.scan.seeds {
                        c.fail(Check::Scan, format!("only {} of {} seeds found in A_k", s.members.len(), sc.scan.seeds));
                    }
                    if s.impostors > 0 {
                        c.fail(Check::Scan, format!("{} near-stationary rows", s.impostors));
                    }
                    c.table("scan.csv", &report::scan_table(&s));
                    rep.scan = Some(s);
                }
                Err(e) => c.fail(Check::Scan, e),
            }
        }
    }

    rep.failures = std::mem::take(&mut c.failures);
    match serde_json::to_vec_pretty(&rep) {
        Ok(b) => c.file("report.json", b),
        Err(e) => rep.failures.push(format!("report.json: {e}")),
    }
    c.file("summary.txt", human_summary(&rep).into_bytes());
    ScenarioOutcome {
        index,
        report: rep,
        artifacts: c.artifacts,
    }
}

pub fn human_summary(rep: &ScenarioReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario {}", rep.name);
    if let Some(r) = &rep.steady {
        let _ = writeln!(
            s,
            "steady: mass {:.12} virial {:.3e} stationarity {:.3e} (half resolution {:.3e}, {} nodes)",
            r.mass, r.virial_relative, r.residual, r.coarse_residual, r.nodes
        );
    }
    if !rep.flow.is_empty() {
        let det = rep.flow.iter().fold(0.0f64, |a, r| a.max(r.det_error));
        let rt = rep.flow.iter().fold(0.0f64, |a, r| a.max(r.roundtrip));
        let gm = rep.flow.iter().fold(f64::INFINITY, |a, r| a.min(r.gronwall_margin));
        let _ = writeln!(s, "flow: {} fields, max |det-1| {det:.3e}, max round trip {rt:.3e}, min Gronwall margin {gm:.3e}", rep.flow.len());
    }
    if !rep.first_variation.is_empty() {
        let worst = rep.first_variation.iter().fold(0.0f64, |a, r| a.max(r.first_variation_0.abs() / r.bound));
        let order = rep.first_variation.iter().fold(f64::INFINITY, |a, r| a.min(r.fd_order));
        let _ = writeln!(s, "first variation: max |D1|/bound {worst:.3e}, min difference order {order:.3}");
    }
    if let Some(w) = &rep.sweep {
        let _ = writeln!(
            s,
            "sweep: {} rows, slopes L1 {:.3} dH {:.3} gap {:.3} deviation {:.3}, ratio spread {:.3e}",
            rep.chain.len(),
            w.l1_slope,
            w.energy_slope,
            w.gap_slope,
            w.deviation_slope,
            w.ratio_spread
        );
    } else if !rep.chain.is_empty() {
        let _ = writeln!(s, "chain: {} rows", rep.chain.len());
    }
    if !rep.chain.is_empty() {
        let sup = rep.chain.iter().fold(0.0f64, |a, r| a.max(r.close.potential_sup));
        let grad = rep.chain.iter().fold(0.0f64, |a, r| a.max(r.close.grad_l2));
        let within = rep.chain.iter().filter(|r| r.close.within).count();
        let _ = writeln!(s, "closeness: max sup|dphi| {sup:.3e}, max |grad dphi|_2 {grad:.3e}, {within}/{} within threshold", rep.chain.len());
    }
    if let Some(sc) = &rep.scan {
        let min_over = sc.rows.iter().fold(f64::INFINITY, |a, r| a.min(r.residual_over_floor));
        let _ = writeln!(
            s,
            "scan: {} rows over {} members, floor {:.3e}, min residual/floor {min_over:.3e}, impostors {}",
            sc.rows.len(),
            sc.members.len(),
            sc.floor,
            sc.impostors
        );
    }
    if rep.failures.is_empty() {
        s.push_str("status: ok\n");
    } else {
        let _ = writeln!(s, "status: {} failure(s)", rep.failures.len());
        for f in &rep.failures {
            let _ = writeln!(s, "  {f}");
        }
    }
    s
}

#[derive(Debug)]
pub struct BatchOutcome {
    pub reports: Vec<ScenarioReport>,
    pub written: Vec<PathBuf>,
}

impl BatchOutcome {
    pub fn failed(&self) -> usize {
        self.reports.iter().filter(|r| !r.failures.is_empty()).count()
    }
}

fn write_artifact(root: &Path, a: &Artifact) -> Result<PathBuf> {
    let path = root.join(&a.path);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.into(), source })?;
    }
    std::fs::write(&path, &a.bytes).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Runs scenarios on a pool of `threads` workers; a single writer thread
/// owns the output directory. Ends with `index.txt`: one line per scenario
/// with its status and the SHA-256 of each CSV it wrote.
pub fn run_batch(scenarios: &[Scenario], out: &Path, threads: usize) -> Result<BatchOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    let (tx, rx) = mpsc::channel::<Artifact>();
    let root = out.to_path_buf();
    let writer = std::thread::spawn(move || -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for a in rx {
            written.push(write_artifact(&root, &a)?);
        }
        Ok(written)
    });

    let (otx, orx) = mpsc::channel::<(usize, ScenarioReport, Vec<(PathBuf, String)>)>();
    pool.scope(|s| {
        for (i, sc) in scenarios.iter().enumerate() {
            let tx = tx.clone();
            let otx = otx.clone();
            s.spawn(move |_| {
                let o = run_scenario(i, sc);
                let mut digests = Vec::new();
                for a in o.artifacts {
                    if a.path.extension().is_some_and(|e| e == "csv") {
                        digests.push((a.path.clone(), hex(&Sha256::digest(&a.bytes))));
                    }
                    // A closed channel means the writer already failed; its
                    // error is reported below.
                    let _ = tx.send(a);
                }
                let _ = otx.send((o.index, o.report, digests));
            });
        }
    });
    drop(otx);
    let mut done: Vec<_> = orx.into_iter().collect();
    done.sort_by_key(|d| d.0);

    let mut index = String::new();
    for (_, rep, digests) in &done {
        let status = if rep.failures.is_empty() { "ok".to_string() } else { format!("{} failure(s)", rep.failures.len()) };
        let _ = writeln!(index, "{}: {status}", rep.name);
        for (p, h) in digests {
            let _ = writeln!(index, "  {} sha256:{h}", p.display());
        }
    }
    let _ = tx.send(Artifact {
        path: "index.txt".into(),
        bytes: index.into_bytes(),
    });
    drop(tx);
    let written = writer.join().map_err(|_| CliError::Pool("writer thread panicked".into()))??;
    Ok(BatchOutcome {
        reports: done.into_iter().map(|d| d.1).collect(),
        written,
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
