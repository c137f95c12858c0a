use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_iolwsim"));
    c.env_remove("IOLWSIM_SEED");
    c
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> PathBuf {
    root().join("scenarios").join(name)
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn first_event_seed(dir: &Path) -> u64 {
    let text = fs::read_to_string(dir.join("trace.jsonl")).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["type"], "run_start");
    first["seed"].as_u64().unwrap()
}

#[test]
fn simulate_jamming_checks_out() {
    let o = run(bin().arg("simulate").arg(scenario("table1_jamming.json")).arg("--check"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("check: ok"));
}

#[test]
fn malformed_json_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\n  \"name\": \"x\",\n  \"horizon_cycles\": ,\n}").unwrap();
    let o = run(bin().arg("simulate").arg(&path));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json:3:"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("extra.json");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(scenario("table1_jamming.json")).unwrap()).unwrap();
    v["surprise"] = Value::Bool(true);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let o = run(bin().arg("simulate").arg(&path));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("surprise"));
}

#[test]
fn missing_file_exits_1() {
    let o = run(bin().arg("simulate").arg("/nonexistent/scenario.json"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn check_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let sidecar = dir.path().join("wrong.json");
    fs::write(
        &sidecar,
        r#"{"outcomes": [{"attack": 0, "kind": "jamming", "safety_impact": true, "impact": ["Integrity"]}]}"#,
    )
    .unwrap();
    let o = run(bin()
        .arg("simulate")
        .arg(scenario("table1_jamming.json"))
        .arg("--check")
        .arg("--expected")
        .arg(&sidecar));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("table1_jamming.json");
    let out = |name: &str| dir.path().join(name);
    // Scenario seed.
    assert!(run(bin().arg("simulate").arg(&s).arg("--out").arg(out("a"))).status.success());
    assert_eq!(first_event_seed(&out("a")), 2);
    // Environment beats the scenario.
    assert!(run(bin().env("IOLWSIM_SEED", "77").arg("simulate").arg(&s).arg("--out").arg(out("b")))
        .status
        .success());
    assert_eq!(first_event_seed(&out("b")), 77);
    // Flag beats the environment.
    assert!(run(bin()
        .env("IOLWSIM_SEED", "77")
        .arg("simulate")
        .arg(&s)
        .arg("--seed")
        .arg("42")
        .arg("--out")
        .arg(out("c")))
    .status
    .success());
    assert_eq!(first_event_seed(&out("c")), 42);
}

#[test]
fn same_seed_same_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("table1_replay.json");
    for run_dir in ["x", "y"] {
        let o = run(bin().arg("simulate").arg(&s).arg("--seed").arg("42").arg("--out").arg(dir.path().join(run_dir)));
        assert!(o.status.success());
    }
    for f in ["trace.jsonl", "summary.csv", "outcomes.json", "reports.json"] {
        let a = fs::read(dir.path().join("x").join(f)).unwrap();
        let b = fs::read(dir.path().join("y").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
        assert!(!a.is_empty(), "{f}");
    }
}

#[test]
fn attack_subcommand() {
    let o = run(bin().arg("attack").arg(scenario("table1_leaked_key.json")).arg("--attack").arg("0").arg("--check"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(bin().arg("attack").arg(scenario("table1_leaked_key.json")).arg("--attack").arg("3"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn advantage_values() {
    let o = run(bin().args(["advantage", "--tau", "32", "--qdec", "3"]));
    assert!(stdout(&o).contains("6.985e-10"), "{}", stdout(&o));
    let o = run(bin().args(["advantage", "--tau", "64", "--qdec", "3"]));
    assert!(stdout(&o).contains("1.626e-19"), "{}", stdout(&o));
    let o = run(bin().args(["advantage", "--tau", "16", "--fips"]));
    let text = stdout(&o);
    let minute = text.lines().find(|l| l.starts_with("per-minute")).unwrap();
    assert!(minute.contains("FAIL"), "{text}");
    let o = run(bin().args(["advantage", "--table"]));
    assert!(stdout(&o).contains("does not follow"));
    let o = run(bin().args(["advantage", "--tau", "0"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bep_command() {
    let o = run(bin().args(["bep", "--mode", "preserving", "--blocks", "2000", "--json"]));
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["parameters"]["max_plaintext_flips"], 1);
    assert_eq!(v[0]["passed"], true);
    let o = run(bin().args(["bep", "--blocks", "0"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_schema_is_current_and_accepts_bundled_scenarios() {
    let o = run(bin().arg("schema"));
    let generated: Value = serde_json::from_slice(&o.stdout).unwrap();
    let shipped: Value =
        serde_json::from_str(&fs::read_to_string(root().join("docs/scenario.schema.json")).unwrap()).unwrap();
    assert_eq!(generated, shipped, "regenerate docs/scenario.schema.json with `iolwsim schema`");
    let compiled = jsonschema::JSONSchema::compile(&shipped).unwrap();
    let mut count = 0;
    for entry in fs::read_dir(root().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if !name.ends_with(".json") || name.ends_with(".expected.json") {
            continue;
        }
        let v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert!(compiled.is_valid(&v), "{name} does not validate");
        count += 1;
    }
    assert!(count >= 6);
    let mut bad: Value =
        serde_json::from_str(&fs::read_to_string(scenario("table1_flooding.json")).unwrap()).unwrap();
    bad["events"][0]["args"]["extra"] = Value::from(1);
    assert!(!compiled.is_valid(&bad));
}

#[test]
fn report_formats() {
    for format in ["table", "csv", "json"] {
        let o = run(bin().args(["report", "--episodes", "2000", "--blocks", "1000", "--format", format]));
        assert!(o.status.success(), "{format}: {}", stderr(&o));
    }
    let o = run(bin()
        .args(["report", "--episodes", "2000", "--blocks", "1000", "--format", "csv", "--scenario"])
        .arg(scenario("table1_jamming.json")));
    assert!(stdout(&o).contains("jamming,A,false,A,false,true"), "{}", stdout(&o));
}
