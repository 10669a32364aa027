use std::path::Path;
use std::process::Command;

use vpstab_cli::config::{Check, ScenarioFile};
use vpstab_cli::report::CsvTable;
use vpstab_cli::{run_batch, ScenarioReport};

const SMALL: &str = r#"
[[scenario]]
name = "small"
seeds = [1]
lambdas = [0.5, 0.25]
flow_seeds = [1, 2]

[scenario.lab]
norm_box_order = 4
test_functions = 4
level_count = 60

[scenario.lab.bulk_cloud]
radial_order = 3
angular_order = 2
velocity_angular_order = 3
speed_order = 4

[scenario.lab.margin_cloud]
radial_order = 3
angular_order = 2
velocity_angular_order = 3
speed_order = 4
margin_x = 0.1
margin_v = 0.05

[scenario.lab.stationarity_cloud]
radial_order = 3
angular_order = 2
velocity_angular_order = 4
speed_order = 4

[scenario.integrity]
points = 2

[scenario.scan]
seeds = 1
eps = [0.1]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vpstab"))
}

fn small_file(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, format!("{SMALL}{extra}")).unwrap();
    p
}

fn report(dir: &Path, name: &str) -> ScenarioReport {
    serde_json::from_slice(&std::fs::read(dir.join(name).join("report.json")).unwrap()).unwrap()
}

#[test]
fn config_round_trip_is_idempotent() {
    for file in [ScenarioFile::bundled(), ScenarioFile::parse(SMALL, "small").unwrap()] {
        let text = file.to_toml().unwrap();
        let again = ScenarioFile::parse(&text, "round trip").unwrap();
        assert_eq!(again, file);
        assert_eq!(again.to_toml().unwrap(), text);
    }
}

#[test]
fn empty_check_list_is_a_valid_empty_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_file(dir.path(), "");
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--check", "", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rep = report(&out, "small");
    assert!(rep.steady.is_none() && rep.flow.is_empty() && rep.chain.is_empty() && rep.scan.is_none());
    assert!(rep.failures.is_empty());
    assert!(std::fs::read_to_string(out.join("index.txt")).unwrap().contains("small: ok"));
}

#[test]
fn malformed_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[[scenario]]\nname = \"x\"\nlambdas = [0.1,\n").unwrap();
    let o = bin().arg("run").arg("--config").arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));

    let o = bin().args(["run", "--check", "nope", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["verify", "--resolution-scale", "-1", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["scan", "--seed-override", "1,x", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn build_steady_writes_a_unit_mass_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = bin().arg("build-steady").env("VPSTAB_OUT_DIR", &out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let t = CsvTable::read(&out.join("default").join("steady.csv")).unwrap();
    assert_eq!(t.schema, "steady-v1");
    let mass: f64 = t.rows[0][0].parse().unwrap();
    assert!((mass - 1.0).abs() < 1e-8, "{mass}");
    let profile = std::fs::read_to_string(out.join("default").join("profile.dat")).unwrap();
    assert!(profile.starts_with("# density\n"));
    let state = vpstab::SteadyState64::load(&out.join("default").join("steady.json")).unwrap();
    assert!((state.mass - 1.0).abs() < 1e-8);
}

#[test]
fn flow_test_of_the_zero_field_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_file(dir.path(), "\n[scenario.lab.family]\namplitude = 0.0\n");
    let out = dir.path().join("out");
    let status = bin()
        .args(["flow-test", "--seed-override", "4,5,6", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rep = report(&out, "small");
    assert_eq!(rep.flow.iter().map(|r| r.seed).collect::<Vec<_>>(), [4, 5, 6]);
    for r in &rep.flow {
        assert_eq!((r.det_error, r.roundtrip, r.hess_linf), (0.0, 0.0, 0.0));
        assert_eq!(r.gronwall_margin, 0.0);
    }
}

#[test]
fn merge_checks_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "schema,flow-v1\nseed,x\n1,2\n").unwrap();
    std::fs::write(&b, "schema,chain-v1\nseed,x\n3,4\n").unwrap();
    let merged = dir.path().join("m.csv");
    let ok = bin().arg("report-merge").arg("--output").arg(&merged).args([&a, &a]).status().unwrap();
    assert_eq!(ok.code(), Some(0));
    assert_eq!(CsvTable::read(&merged).unwrap().rows.len(), 2);
    let bad = bin().arg("report-merge").arg("--output").arg(&merged).args([&a, &b]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("schema"));
}

/// Every check on a small scenario; a second run with another thread count
/// must give the same CSV bytes.
#[test]
fn full_small_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let file = ScenarioFile::parse(SMALL, "small").unwrap();
    assert_eq!(file.scenarios[0].checks, Check::ALL.to_vec());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let first = run_batch(&file.scenarios, &a, 1).unwrap();
    run_batch(&file.scenarios, &b, 2).unwrap();
    let rep = &first.reports[0];
    assert!(rep.steady.is_some() && rep.sweep.is_some() && rep.scan.is_some());
    assert_eq!(rep.chain.len(), 2);
    for name in ["steady.csv", "flow.csv", "first_variation.csv", "chain.csv", "scan.csv"] {
        let x = std::fs::read(a.join("small").join(name)).unwrap();
        let y = std::fs::read(b.join("small").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    assert_eq!(std::fs::read(a.join("index.txt")).unwrap(), std::fs::read(b.join("index.txt")).unwrap());
    let chain = CsvTable::read(&a.join("small").join("chain.csv")).unwrap();
    assert_eq!(chain.schema, "chain-v1");
    assert!(a.join("small").join("sweep_delta_energy.dat").exists());
}

#[test]
fn batch_continues_past_a_failing_scenario() {
    let dir = tempfile::tempdir().unwrap();
    // The scan may try fewer seeds than it needs, so the first scenario
    // fails; the second still runs.
    let text = format!("{SMALL}\n[[scenario]]\nname = \"other\"\nchecks = []\n")
        .replace("name = \"small\"", "name = \"small\"\nchecks = [\"scan\"]")
        .replace("seeds = 1\neps = [0.1]", "seeds = 3\nmax_attempts = 1\neps = [0.1]");
    let cfg = dir.path().join("two.toml");
    std::fs::write(&cfg, text).unwrap();
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!report(dir.path(), "small").failures.is_empty());
    assert!(report(dir.path(), "other").failures.is_empty());
}
