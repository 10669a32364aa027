//! CSV tables with a versioned schema row, two-column plot data, and merging.
//!
//! Float rule: CSV cells use `{:.16e}` (17 significant digits), so every
//! value round-trips and identical runs give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use vpstab::inequality_lab::{
    fmt_f64, ChainReport, FirstVariationCheck, FlowIntegrity, ScanReport, SteadyReport, CHAIN_CSV_HEADER, CHAIN_CSV_SCHEMA,
    SCAN_CSV_HEADER, SCAN_CSV_SCHEMA,
};
use vpstab::radial_steady::SteadyState;

use crate::error::{CliError, Result};

pub const STEADY_CSV_SCHEMA: &str = "steady-v1";
pub const FLOW_CSV_SCHEMA: &str = "flow-v1";
pub const FIRST_VARIATION_CSV_SCHEMA: &str = "first-variation-v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvTable {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        Self {
            schema: schema.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        w.write_record(["schema", self.schema.as_str()])?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::Pool(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
        let mut records = r.records();
        let bad = |found: &str| CliError::Schema {
            path: path.into(),
            expected: "a `schema,<name>` first row".into(),
            found: found.into(),
        };
        let first = records.next().transpose()?.ok_or_else(|| bad("empty file"))?;
        if first.len() != 2 || &first[0] != "schema" {
            return Err(bad(&first.iter().collect::<Vec<_>>().join(",")));
        }
        let header: Vec<String> = records.next().transpose()?.ok_or_else(|| bad("no header row"))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in records {
            rows.push(rec?.iter().map(String::from).collect());
        }
        Ok(Self {
            schema: first[1].to_string(),
            header,
            rows,
        })
    }
}

/// Concatenates tables that share schema and header.
pub fn merge(paths: &[impl AsRef<Path>]) -> Result<CsvTable> {
    let mut out: Option<CsvTable> = None;
    for p in paths {
        let p = p.as_ref();
        let t = CsvTable::read(p)?;
        match &mut out {
            None => out = Some(t),
            Some(acc) => {
                if acc.schema != t.schema || acc.header != t.header {
                    return Err(CliError::Schema {
                        path: p.into(),
                        expected: format!("{} [{}]", acc.schema, acc.header.join(",")),
                        found: format!("{} [{}]", t.schema, t.header.join(",")),
                    });
                }
                acc.rows.extend(t.rows);
            }
        }
    }
    out.ok_or_else(|| CliError::Config {
        origin: "report-merge".into(),
        message: "no input files".into(),
    })
}

pub fn steady_table(r: &SteadyReport) -> CsvTable {
    let mut t = CsvTable::new(STEADY_CSV_SCHEMA, &["mass", "virial_relative", "residual", "coarse_residual", "nodes"]);
    t.rows.push(vec![
        fmt_f64(r.mass),
        fmt_f64(r.virial_relative),
        fmt_f64(r.residual),
        fmt_f64(r.coarse_residual),
        r.nodes.to_string(),
    ]);
    t
}

pub fn flow_table(rows: &[FlowIntegrity]) -> CsvTable {
    let mut t = CsvTable::new(FLOW_CSV_SCHEMA, &["seed", "det_error", "roundtrip", "gronwall_margin", "hess_linf"]);
    for r in rows {
        t.rows.push(vec![
            r.seed.to_string(),
            fmt_f64(r.det_error),
            fmt_f64(r.roundtrip),
            fmt_f64(r.gronwall_margin),
            fmt_f64(r.hess_linf),
        ]);
    }
    t
}

pub fn first_variation_table(rows: &[FirstVariationCheck]) -> CsvTable {
    let mut t = CsvTable::new(FIRST_VARIATION_CSV_SCHEMA, &["seed", "first_variation_0", "bound", "fd_finest_error", "fd_order"]);
    for r in rows {
        t.rows.push(vec![
            r.seed.to_string(),
            fmt_f64(r.first_variation_0),
            fmt_f64(r.bound),
            fmt_f64(r.fd_errors.last().copied().unwrap_or(f64::NAN)),
            fmt_f64(r.fd_order),
        ]);
    }
    t
}

pub fn chain_table(rows: &[ChainReport]) -> CsvTable {
    let mut t = CsvTable::new(CHAIN_CSV_SCHEMA, &CHAIN_CSV_HEADER);
    t.rows.extend(rows.iter().map(ChainReport::csv_row));
    t
}

pub fn scan_table(scan: &ScanReport) -> CsvTable {
    let mut t = CsvTable::new(SCAN_CSV_SCHEMA, &SCAN_CSV_HEADER);
    t.rows.extend(scan.rows.iter().map(|r| r.csv_row()));
    t
}

/// Blocks of `x y` lines separated by blank lines, one block per label.
pub fn two_column(blocks: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut s = String::new();
    for (i, (label, pts)) in blocks.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# {label}");
        for (x, y) in pts {
            let _ = writeln!(s, "{} {}", fmt_f64(*x), fmt_f64(*y));
        }
    }
    s
}

/// `r, ρ(r)` and `r, φ(r)` on the support.
pub fn radial_profiles(state: &SteadyState<f64>, points: usize) -> String {
    let rs: Vec<f64> = (0..=points).map(|i| state.r_support * i as f64 / points as f64).collect();
    two_column(&[
        ("density".into(), rs.iter().map(|r| (*r, state.density(*r))).collect()),
        ("potential".into(), rs.iter().map(|r| (*r, state.eval_phi(*r))).collect()),
    ])
}

/// Distribution function `s ↦ |{f̄ > s}|`.
pub fn distribution_profile(state: &SteadyState<f64>, points: usize) -> String {
    let top = state.eval_f(&[0.0; 6]);
    let pts = (0..points)
        .map(|i| {
            let s = top * i as f64 / points as f64;
            (s, state.level_measure(s))
        })
        .collect();
    two_column(&[("level measure".into(), pts)])
}

/// One block per seed of `λ ↦ quantity` for each sweep curve.
pub fn sweep_curves(rows: &[ChainReport]) -> Vec<(&'static str, String)> {
    let quantities: [(&str, fn(&ChainReport) -> f64); 4] = [
        ("delta_energy", |r| r.lower_bound.delta_energy),
        ("l1", |r| r.lower_bound.l1),
        ("gap", |r| r.bracket_cmp.gap.abs()),
        ("max_deviation", |r| r.second_var_dev.max_deviation),
    ];
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.dedup();
    quantities
        .iter()
        .map(|(name, get)| {
            let blocks: Vec<(String, Vec<(f64, f64)>)> = seeds
                .iter()
                .map(|s| {
                    let pts = rows.iter().filter(|r| r.seed == *s).map(|r| (r.lambda, get(r))).collect();
                    (format!("seed {s}"), pts)
                })
                .collect();
            (*name, two_column(&blocks))
        })
        .collect()
}
