use std::path::{Path, PathBuf};

use isoaffine_cli::commands::{affine, evolve, verify};
use isoaffine_cli::ledger::{read_ledger, Record};
use isoaffine_cli::report::{report, rows, to_csv};
use isoaffine_cli::{CliError, Scenario};
use serde_json::{json, Value};

fn scenario_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn smoke() -> Scenario {
    Scenario::load(&scenario_file("smoke.toml")).unwrap()
}

#[test]
fn bundled_scenarios_parse() {
    let r = Scenario::load(&scenario_file("reference.toml")).unwrap();
    assert_eq!(r, Scenario::reference());
    let s = smoke();
    assert_eq!(s.evolver.n, 25);
    assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
}

fn field_of(err: CliError) -> String {
    match err {
        CliError::ConfigInvalid { field, .. } => field,
        other => panic!("expected ConfigInvalid, got {other}"),
    }
}

#[test]
fn missing_sigma_choice_names_the_field() {
    let text = std::fs::read_to_string(scenario_file("smoke.toml")).unwrap().replace("sigma_choice = 1.0", "");
    assert_eq!(field_of(Scenario::from_toml(&text).unwrap_err()), "sigma_choice");
}

#[test]
fn invalid_values_name_the_field() {
    let base = std::fs::read_to_string(scenario_file("smoke.toml")).unwrap();
    let cases = [
        ("sigma_choice = 1.0", "sigma_choice = 1.6", "exponents.sigma_choice"),
        ("n = 25", "n = 24", "evolver.n"),
        ("tbar = 0.5", "tbar = -0.5", "affine.tbar"),
        ("alpha = 2.0", "alpha = 0.0", "affine.alpha"),
        ("name = \"smoke\"", "name = \"a/b\"", "name"),
        ("seed = 7", "seed = 7\nbogus = 1", "bogus"),
    ];
    for (from, to, field) in cases {
        let text = base.replace(from, to);
        assert_eq!(field_of(Scenario::from_toml(&text).unwrap_err()), field, "{to}");
    }
}

#[test]
fn verify_is_byte_identical_across_runs() {
    let mut s = smoke();
    s.seed = 42;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = verify(&s, a.path()).unwrap().files;
    let fb = verify(&s, b.path()).unwrap().files;
    assert_eq!(fa.len(), 2);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let recs = read_ledger(&fa[1]).unwrap();
    let summary = recs.iter().find(|r| r.kind == "identity_summary").unwrap();
    assert_eq!(summary.data["all_pass"], json!(true));
}

fn kinds(recs: &[Record]) -> Vec<&str> {
    recs.iter().map(|r| r.kind.as_str()).collect()
}

fn finite(v: &Value) -> bool {
    v.as_f64().is_some_and(f64::is_finite)
}

#[test]
fn affine_ledger_schema() {
    let s = smoke();
    let dir = tempfile::tempdir().unwrap();
    let files = affine(&s, dir.path()).unwrap().files;
    let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
    assert_eq!(names, ["affine.jsonl", "trajectory.csv", "frames.csv"]);
    assert!(files.iter().all(|f| f.starts_with(dir.path().join("smoke"))));

    let recs = read_ledger(&files[0]).unwrap();
    assert_eq!(kinds(&recs), ["scenario", "affine_summary", "frame_bounds", "eulerian"]);
    assert!(recs.iter().all(|r| r.scenario == "smoke" && r.seed == 7));
    let back: Scenario = serde_json::from_value(recs[0].data.clone()).unwrap();
    assert_eq!(back, s);
    let sum = &recs[1].data;
    for key in ["max_energy_drift", "det_ratio_variation", "m_decay_exponent", "mu1", "invariant_drift_closed"] {
        assert!(finite(&sum[key]), "{key}: {}", sum[key]);
    }
    assert!(sum["max_energy_drift"].as_f64().unwrap() < 1e-8);

    let traj = std::fs::read_to_string(&files[1]).unwrap();
    let header = traj.lines().next().unwrap();
    assert!(header.starts_with("t,"));
    let width = header.split(',').count();
    assert!(traj.lines().skip(1).all(|l| l.split(',').count() == width));
    let frames = std::fs::read_to_string(&files[2]).unwrap();
    assert_eq!(frames.lines().count(), 1 + s.diagnostics.frames);
}

#[test]
fn evolve_smoke_writes_ledger_and_tables() {
    let s = smoke();
    let dir = tempfile::tempdir().unwrap();
    let files = evolve(&s, dir.path()).unwrap().files;
    let recs = read_ledger(&files[0]).unwrap();
    let k = kinds(&recs);
    assert_eq!(k[..2], ["scenario", "run_header"]);
    assert!(k.contains(&"snapshot") && k.contains(&"run_summary") && k.contains(&"lagrangian") && k.contains(&"eulerian"));
    let summary = &recs.iter().find(|r| r.kind == "run_summary").unwrap().data;
    assert_eq!(summary["status"]["status"], json!("Completed"));
    let lag = &recs.iter().find(|r| r.kind == "lagrangian").unwrap().data;
    assert!(lag["mass_drift"].as_f64().unwrap() < 1e-6, "{lag}");

    let snaps = recs.iter().filter(|r| r.kind == "snapshot").count();
    let table = std::fs::read_to_string(&files[1]).unwrap();
    assert_eq!(table.lines().count(), 1 + snaps);
    let slice = std::fs::read_to_string(&files[2]).unwrap();
    assert_eq!(slice.lines().count(), 1 + 25 * 25);
}

fn write_ledger(dir: &Path, name: &str, lines: &[Value]) -> PathBuf {
    let path = dir.join(name);
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn report_groups_by_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let rec = |scenario: &str, kind: &str, data: Value| json!({"scenario": scenario, "seed": 3, "kind": kind, "data": data});
    write_ledger(
        dir.path(),
        "b.jsonl",
        &[rec("beta", "run_summary", json!({"status": "Completed", "boundedness": {"max_ratio": 1.5}}))],
    );
    write_ledger(
        dir.path(),
        "a.jsonl",
        &[
            rec("alpha", "snapshot", json!({"tau": 0.0})),
            rec("alpha", "snapshot", json!({"tau": 0.1})),
            rec("alpha", "affine_summary", json!({"mu1": 0.25, "det_ratio_window": [100.0, 1000.0], "mu1_check": null})),
        ],
    );
    std::fs::write(dir.path().join("notes.txt"), "not a ledger").unwrap();
    let r = report(&[dir.path().to_path_buf()]).unwrap();
    let flat: Vec<String> = r.iter().map(|x| format!("{} {} {}={}", x.scenario, x.kind, x.metric, x.value)).collect();
    assert_eq!(
        flat,
        [
            "alpha affine_summary det_ratio_window.0=100.0",
            "alpha affine_summary det_ratio_window.1=1000.0",
            "alpha affine_summary mu1=0.25",
            "alpha affine_summary mu1_check=nan",
            "alpha affine_summary records=1",
            "alpha snapshot records=2",
            "beta run_summary boundedness.max_ratio=1.5",
            "beta run_summary status=Completed",
            "beta run_summary records=1",
        ]
    );
    let csv = to_csv(&r);
    assert!(csv.starts_with("scenario,seed,kind,metric,value\n"));
    assert_eq!(csv.lines().count(), 1 + r.len());
}

#[test]
fn report_rejects_corrupt_and_empty_ledgers() {
    let dir = tempfile::tempdir().unwrap();
    let good = json!({"scenario": "s", "seed": 1, "kind": "run_summary", "data": {}});
    let path = write_ledger(dir.path(), "bad.jsonl", &[good, json!({"scenario": "s"})]);
    match report(&[path]).unwrap_err() {
        CliError::LedgerCorrupt { line, .. } => assert_eq!(line, 2),
        other => panic!("{other}"),
    }

    let empty = tempfile::tempdir().unwrap();
    write_ledger(empty.path(), "e.jsonl", &[]);
    assert!(matches!(report(&[empty.path().to_path_buf()]).unwrap_err(), CliError::EmptyLedgerSet));
    assert!(rows(&[]).is_empty());
}

#[test]
fn report_reads_real_ledgers() {
    let s = smoke();
    let dir = tempfile::tempdir().unwrap();
    verify(&s, dir.path()).unwrap();
    let r = report(&[dir.path().to_path_buf()]).unwrap();
    assert!(r.iter().any(|x| x.kind == "identity_summary" && x.metric == "all_pass" && x.value == "true"));
    assert!(r.iter().any(|x| x.kind == "identity_check" && x.metric == "records"));
}
