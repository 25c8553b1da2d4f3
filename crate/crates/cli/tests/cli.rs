use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const DEMO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/heralded_demo.json");

fn pathbell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathbell"))
        .args(args)
        .env_remove("PATHBELL_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    let value: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&value).unwrap()
}

fn assert_valid(schema_name: &str, doc: &Value) {
    let v = schema(schema_name);
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:?}");
}

fn csv_columns(kind: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/csv.schema.json");
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["properties"][kind]["const"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect::<Vec<_>>()
        .join(",")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Demo configuration with a few edits applied.
fn demo_with(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut cfg = read_json(Path::new(DEMO));
    edit(&mut cfg);
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn reported_max(o: &Output) -> f64 {
    let line = stdout(o);
    let rest = line.strip_prefix("max S = ").unwrap();
    rest.split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn sweep_reports_slice_maxima() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("surface.csv");
    let out_s = out.to_str().unwrap();
    for (state, want) in [("ideal", 2.8284), ("werner:0.3", 0.8485), ("werner:0.8", 2.2627)] {
        let o = pathbell(&[
            "sweep", "--fixed-theta", "3pi/4", "--fixed-delta", "7pi/8", "--grid", "256", "--state", state, "--out", out_s,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!((reported_max(&o) - want).abs() < 2e-3, "{state}: {}", stdout(&o));
    }
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), csv_columns("surface"));
    assert_eq!(lines.count(), 256 * 256);
}

#[test]
fn sweep_angle_units_agree() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str], name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["sweep", "--grid", "16", "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = pathbell(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    let radians = run(&["--fixed-theta", "2.356194490192345", "--fixed-delta", "7pi/8"], "a.csv");
    let degrees = run(&["--degrees", "--fixed-theta", "135", "--fixed-delta", "157.5"], "b.csv");
    let hwp = run(&["--hwp", "--fixed-theta", "3pi/8", "--fixed-delta", "7pi/16"], "c.csv");
    assert_eq!(radians, degrees);
    assert_eq!(radians, hwp);
}

#[test]
fn sweep_flag_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let out_s = out.to_str().unwrap();
    for args in [
        vec!["sweep", "--out", out_s, "--state", "werner:1.5"],
        vec!["sweep", "--out", out_s, "--state", "thermal:0.5"],
        vec!["sweep", "--out", out_s, "--fixed-theta", "abc"],
        vec!["sweep", "--out", out_s, "--grid", "0"],
        vec!["sweep", "--grid", "16"],
        vec!["frobnicate"],
    ] {
        assert_eq!(code(&pathbell(&args)), 2, "{args:?}");
    }
    let o = pathbell(&["sweep", "--grid", "8", "--out", "/nonexistent-dir/s.csv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn purity_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("purity.csv");
    let out_s = out.to_str().unwrap();

    let o = pathbell(&["purity", "--model", "depolarizing", "--grid", "0:1:0.01", "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l == "threshold 0.707107"), "{}", stdout(&o));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), csv_columns("purity"));
    assert_eq!(lines.count(), 101);

    let o = pathbell(&["purity", "--model", "multiphoton", "--grid", "0:1:0.05", "--out", out_s]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "threshold 0.853553"), "{text}");
    assert!(text.contains("README"));

    let o = pathbell(&["purity", "--model", "multiphoton", "--unnormalized", "--grid", "0.5:1:0.1", "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn purity_flag_errors() {
    let o = pathbell(&["purity", "--model", "depolarizing", "--grid", "0:2:0.1", "--out", "x.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--grid"), "{}", stderr(&o));
    let o = pathbell(&["purity", "--model", "depolarizing", "--unnormalized", "--out", "x.csv"]);
    assert_eq!(code(&o), 2);
    let o = pathbell(&["purity", "--model", "depolarizing", "--grid", "0:1:0.5", "--out", "/nonexistent-dir/p.csv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn max_s_examples() {
    for (state, want, tol) in [("ideal", 2.828427, 1e-6), ("werner:0.7071", 2.0, 1e-4), ("multiphoton:1.0", 2.828427, 1e-6)] {
        let o = pathbell(&["max-s", "--state", state]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_valid("max_s.schema.json", &v);
        let s = v["s_value"].as_f64().unwrap();
        assert!((s - want).abs() < tol, "{state}: {s}");
    }
    assert_eq!(code(&pathbell(&["max-s", "--state", "werner"])), 2);
}

#[test]
fn thread_override_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_pathbell"))
        .args(["max-s"])
        .env("PATHBELL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn demo_config_matches_its_schema() {
    assert_valid("config.schema.json", &read_json(Path::new(DEMO)));
    let two = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/two_detector_demo.json");
    assert_valid("config.schema.json", &read_json(Path::new(two)));
    let mut bad = read_json(Path::new(DEMO));
    bad["source"]["colour"] = Value::from("blue");
    assert!(!schema("config.schema.json").is_valid(&bad));
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_with(dir.path(), |c| c["plan"]["trials"] = Value::from(3));
    let sim = dir.path().join("sim");
    let o = pathbell(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", sim.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let manifest = read_json(&sim.join("manifest.json"));
    assert_valid("manifest.schema.json", &manifest);
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 3 * 4);
    assert_eq!(fs::read_dir(&sim).unwrap().count(), 2 * 12 + 1);
    for f in files {
        let meta = read_json(&sim.join(f["meta"].as_str().unwrap()));
        assert_valid("meta.schema.json", &meta);
        assert_eq!(meta["seed"], f["seed"]);
        assert!(sim.join(f["tags"].as_str().unwrap()).is_file());
    }

    let csv = dir.path().join("probs.csv");
    let pattern = format!("{}/*", sim.display());
    let o = pathbell(&["analyze", "--tags", &pattern, "--mode", "heralded", "--window", "1000", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), csv_columns("probabilities"));
    assert_eq!(lines.count(), 4);

    let summary = read_json(&dir.path().join("probs.summary.json"));
    assert_valid("summary.schema.json", &summary);
    assert_eq!(summary["trials"], 3);
    // two distinct θ and two distinct δ give 2·2 ordered combinations
    assert_eq!(summary["combinations"].as_array().unwrap().len(), 4);
    let best = &summary["combinations"][summary["best"].as_u64().unwrap() as usize];
    let s = best["s_mean"].as_f64().unwrap();
    assert!((s - 2.828).abs() < 0.1, "{s}");

    // the wrong mode is refused
    let o = pathbell(&["analyze", "--tags", &pattern, "--mode", "two-detector", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn two_detector_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_with(dir.path(), |c| {
        c["plan"]["mode"] = Value::from("two_detector");
        c["plan"]["trials"] = Value::from(5);
        let dets = c["detectors"].as_array_mut().unwrap();
        dets.truncate(2);
        for d in dets {
            d["dark_rate"] = Value::from(1.0);
        }
    });
    let sim = dir.path().join("sim");
    let o = pathbell(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", sim.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = read_json(&sim.join("manifest.json"));
    assert_eq!(manifest["files"].as_array().unwrap().len(), 5 * 4 * 2);
    assert!(sim.join("tt.perp.t0004.tags").is_file());

    let csv = dir.path().join("td.csv");
    let pattern = format!("{}/*.tags", sim.display());
    let o = pathbell(&["analyze", "--tags", &pattern, "--mode", "two-detector", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read_json(&dir.path().join("td.summary.json"));
    assert_valid("summary.schema.json", &summary);
    let best = &summary["combinations"][summary["best"].as_u64().unwrap() as usize];
    assert!((best["s_mean"].as_f64().unwrap() - 2.828).abs() < 0.1);
}

#[test]
fn simulate_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let edits: [fn(&mut Value); 5] = [
        |c| c["source"]["duration_s"] = Value::from(0.0),
        |c| c["source"]["colour"] = Value::from("blue"),
        |c| c["version"] = Value::from("pathbell-config/0"),
        |c| {
            c["detectors"].as_array_mut().unwrap().pop();
        },
        |c| c["plan"]["settings"][1]["id"] = Value::from("tt"),
    ];
    for (i, edit) in edits.into_iter().enumerate() {
        let cfg = demo_with(dir.path(), edit);
        let out = dir.path().join(format!("out{i}"));
        let o = pathbell(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "edit {i}: {}", stderr(&o));
        assert!(!out.exists());
    }
    let o = pathbell(&["simulate", "--config", "/nonexistent.json", "--out-dir", "x"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_failures_remove_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_with(dir.path(), |c| c["plan"]["trials"] = Value::from(2));

    // a directory squatting on a later output name makes the write fail midway
    let out = dir.path().join("out");
    fs::create_dir_all(out.join("tpdp.t0001.tags")).unwrap();
    let o = pathbell(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let left: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left, vec!["tpdp.t0001.tags"]);

    // an output directory that cannot be created
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = pathbell(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn analyze_errors() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let csv_s = csv.to_str().unwrap();

    let empty = format!("{}/*.tags", dir.path().display());
    let o = pathbell(&["analyze", "--tags", &empty, "--mode", "heralded", "--out", csv_s]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no counts"), "{}", stderr(&o));

    // malformed tag file: the error names the file and the line
    let cfg = demo_with(dir.path(), |c| {
        c["plan"]["trials"] = Value::from(1);
        c["source"]["duration_s"] = Value::from(0.01);
    });
    let sim = dir.path().join("sim");
    assert_eq!(code(&pathbell(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", sim.to_str().unwrap()])), 0);
    let victim = sim.join("tdp.t0000.tags");
    let mut text = fs::read_to_string(&victim).unwrap();
    text.push_str("9,99999999999\n");
    fs::write(&victim, text).unwrap();
    let pattern = format!("{}/*.tags", sim.display());
    let o = pathbell(&["analyze", "--tags", &pattern, "--mode", "heralded", "--out", csv_s]);
    assert_eq!(code(&o), 1);
    let msg = stderr(&o);
    assert!(msg.contains("tdp.t0000.tags") && msg.contains("line "), "{msg}");

    // missing sidecar
    fs::remove_file(sim.join("tdp.t0000.meta.json")).unwrap();
    let o = pathbell(&["analyze", "--tags", &pattern, "--mode", "heralded", "--out", csv_s]);
    assert_eq!(code(&o), 1);

    let o = pathbell(&["analyze", "--tags", &pattern, "--mode", "heralded", "--window", "0", "--out", csv_s]);
    assert_eq!(code(&o), 2);
    let o = pathbell(&["analyze", "--tags", &pattern, "--mode", "sideways", "--out", csv_s]);
    assert_eq!(code(&o), 2);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_with(dir.path(), |c| c["plan"]["trials"] = Value::from(2));
    let mut outputs = Vec::new();
    for run in 0..2 {
        let sim = dir.path().join(format!("sim{run}"));
        let csv = dir.path().join(format!("p{run}.csv"));
        assert_eq!(code(&pathbell(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", sim.to_str().unwrap()])), 0);
        let pattern = format!("{}/*.tags", sim.display());
        assert_eq!(code(&pathbell(&["analyze", "--tags", &pattern, "--mode", "heralded", "--out", csv.to_str().unwrap()])), 0);
        let mut names: Vec<_> = fs::read_dir(&sim).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        let mut blob: Vec<Vec<u8>> = names.iter().map(|p| fs::read(p).unwrap()).collect();
        blob.push(fs::read(&csv).unwrap());
        blob.push(fs::read(dir.path().join(format!("p{run}.summary.json"))).unwrap());
        outputs.push(blob);
    }
    assert_eq!(outputs[0], outputs[1]);
}
