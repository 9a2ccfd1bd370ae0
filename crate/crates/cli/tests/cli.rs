use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pym(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pym")).current_dir(dir).args(args).output().expect("pym runs")
}

fn config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn neck_row_at_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pym(tmp.path(), &["neck", "--p-grid", "2:2.02:0.01", "--eps", "0", "--out", "n"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(tmp.path().join("n/neck_constants.csv")).unwrap();
    let head = rdr.headers().unwrap().clone();
    assert_eq!(&head, vec!["p", "eps", "r", "R", "name", "value", "config_sha256", "seed"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let at = |name: &str| rows.iter().find(|r| &r[0] == "2" && &r[4] == name).map(|r| r[5].to_string());
    assert_eq!(at("delta_minus").as_deref(), Some("0"));
    assert_eq!(at("delta_plus").as_deref(), Some("2"));
    assert_eq!(at("sigma_minus").as_deref(), Some("-2"));
    assert_eq!(at("sigma_plus").as_deref(), Some("4"));
    assert_eq!(rows.iter().filter(|r| &r[4] == "gamma").count(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        "c.json",
        r#"{"version": 1, "verify": {"fuzz": {"samples": 2000}, "kato_yau_resolutions": [], "hardy_samples": 20, "hardy_h": 0.125}}"#,
    );
    for dir in ["a", "b"] {
        let out = pym(tmp.path(), &["--config", &cfg, "--seed", "11", "--out", dir, "verify"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = pym(tmp.path(), &["--seed", "11", "--out", &format!("{dir}/bubble"), "bubble", "--k", "1..3", "--no-index"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(read_dir_sorted(&a.join("bubble")), read_dir_sorted(&b.join("bubble")));
    let files = |d: &Path| read_dir_sorted(d).into_iter().filter(|(n, _)| n.ends_with(".json")).collect::<Vec<_>>();
    assert_eq!(files(&a), files(&b));
    // a different seed changes the hash-independent payload but not the config hash
    let out = pym(tmp.path(), &["--config", &cfg, "--seed", "12", "--out", "c", "verify"]);
    assert!(out.status.success());
    let card = |d: &str| -> serde_json::Value { serde_json::from_slice(&fs::read(tmp.path().join(d).join("scorecard.json")).unwrap()).unwrap() };
    assert_eq!(card("a")["seed"], 11);
    assert_eq!(card("c")["seed"], 12);
}

#[test]
fn bad_configs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"version": 1, "flow": {"p": 3.5}}"#, "flow"),
        (r#"{"version": 1, "neck": {"p_grid": "2:2.1:0.01", "epsilon": [0]}}"#, "neck"),
        (r#"{"version": 2}"#, "lorentz"),
        (r#"{"version": 1, "bubble": {"k": "5..2"}}"#, "bubble"),
        (r#"{"version": 1"#, "verify"),
    ];
    for (i, (json, cmd)) in cases.iter().enumerate() {
        let cfg = config(tmp.path(), &format!("bad{i}.json"), json);
        let out = pym(tmp.path(), &["--config", &cfg, "--out", "o", cmd]);
        assert_eq!(out.status.code(), Some(2), "{json}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("invalid config"));
    }
    let out = Command::new(env!("CARGO_BIN_EXE_pym"))
        .current_dir(tmp.path())
        .env("PYM_WORKERS", "zero")
        .args(["--out", "o", "neck"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = pym(tmp.path(), &["--out", "o", "run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flow_snapshot_feeds_spectrum() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        "flow.json",
        r#"{"version": 1, "flow": {"field": {"kind": "bpst", "lambda": 0.5, "radius": 1.0, "h": 0.125}, "p": 2.2, "perturbation": 0.01, "options": {"steps": 3}}}"#,
    );
    let out = pym(tmp.path(), &["--config", &cfg, "--out", "f", "flow"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(tmp.path().join("f/flow.csv")).unwrap();
    assert!(log.starts_with("step,energy,residual_norm,step_size,config_sha256,seed\n"));
    assert!(log.lines().count() >= 2);
    let snap = tmp.path().join("f/field.pym");
    assert!(fs::read(&snap).unwrap().starts_with(b"PYMFIELD"));
    let spec = format!(
        r#"{{"version": 1, "spectrum": {{"field": {{"kind": "snapshot", "path": {:?}}}, "p": 2.2, "solve": {{"k": 4}}}}}}"#,
        snap.to_string_lossy()
    );
    let cfg = config(tmp.path(), "spec.json", &spec);
    let out = pym(tmp.path(), &["--config", &cfg, "--out", "s", "spectrum"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("s/spectrum.json")).unwrap()).unwrap();
    assert_eq!(v["command"], "spectrum");
    assert_eq!(v["result"]["report"]["eigenvalues"].as_array().unwrap().len(), 4);
    let bad = config(tmp.path(), "missing.json", r#"{"version": 1, "spectrum": {"field": {"kind": "snapshot", "path": "nope.pym"}}}"#);
    assert_eq!(pym(tmp.path(), &["--config", &bad, "--out", "s2", "spectrum"]).status.code(), Some(2));
}
