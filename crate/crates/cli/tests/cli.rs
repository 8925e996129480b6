use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vessel-repair"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Intact and broken synthetic trees in `dir`.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let (vol, broken) = (dir.join("tree.nrrd"), dir.join("broken.nrrd"));
    let out = run(&[
        "synth", "--seed", "3", "--fractures", "2", "--output", s(&vol), "--truth", s(&dir.join("gt.json")),
        "--broken", s(&broken), "--cut-log", s(&dir.join("cuts.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&dir.join("gt.json"))["betti"], serde_json::json!([1, 0, 0]));
    assert_eq!(json(&dir.join("cuts.json"))["cuts"].as_array().unwrap().len(), 2);
    (vol, broken)
}

#[test]
fn repair_writes_all_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, broken) = fixture(d);
    let (fixed, report) = (d.join("fixed.nrrd"), d.join("r.json"));
    let out = run(&[
        "repair", "--input", s(&broken), "--output", s(&fixed), "--report", s(&report),
        "--graph-json", s(&d.join("g.json")), "--dump-meshes", s(&d.join("meshes")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&report);
    let n = r["connections"].as_array().unwrap().len();
    assert_eq!(n, 2);
    assert_eq!(r["components_after"], 1);
    assert!(r.get("timings").is_none());
    assert!(json(&d.join("g.json"))["components"].is_array());
    assert_eq!(std::fs::read_dir(d.join("meshes")).unwrap().count(), n);

    let (fixed2, report2) = (d.join("fixed2.nrrd"), d.join("r2.json"));
    let out = run(&["repair", "--input", s(&broken), "--output", s(&fixed2), "--report", s(&report2)]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&fixed).unwrap(), std::fs::read(&fixed2).unwrap());
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(&report2).unwrap());

    let out = run(&["repair", "--input", s(&broken), "--output", s(&fixed2), "--report", s(&report2), "--timings"]);
    assert!(out.status.success());
    assert!(json(&report2)["timings"]["total_s"].is_number());
}

#[test]
fn zero_epsilon_connects_nothing_and_flags_beat_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, broken) = fixture(d);
    let report = d.join("r.json");
    let out = run(&["repair", "--input", s(&broken), "--output", s(&d.join("o.nrrd")), "--report", s(&report), "--epsilon", "0"]);
    assert!(out.status.success());
    assert_eq!(json(&report)["connections"].as_array().unwrap().len(), 0);

    let config = d.join("c.json");
    std::fs::write(&config, r#"{"epsilon": 0.0}"#).unwrap();
    let o = d.join("o.nrrd");
    let base = ["repair", "--input", s(&broken), "--output", s(&o), "--report", s(&report), "--config", s(&config)];
    assert!(run(&base).status.success());
    assert_eq!(json(&report)["connections"].as_array().unwrap().len(), 0);
    assert_eq!(json(&report)["parameters"]["epsilon"], 0.0);
    let mut with_flag = base.to_vec();
    with_flag.extend(["--epsilon", "1.41421356"]);
    assert!(run(&with_flag).status.success());
    assert_eq!(json(&report)["connections"].as_array().unwrap().len(), 2);
}

#[test]
fn identical_volumes_have_perfect_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (vol, broken) = fixture(dir.path());
    let out = run(&["metrics", "--pred", s(&vol), "--gt", s(&vol)]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["dsc"], 1.0);
    assert_eq!(r["betti_error"], 0);
    let file = dir.path().join("m.json");
    assert!(run(&["metrics", "--pred", s(&broken), "--gt", s(&vol), "--output", s(&file)]).status.success());
    assert_eq!(json(&file)["betti_error"], 2);
}

#[test]
fn skeleton_and_edge_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (vol, _) = fixture(d);
    let out = run(&["skeleton", "--input", s(&vol), "--output", s(&d.join("s.nrrd")), "--graph-json", s(&d.join("g.json"))]);
    assert!(out.status.success());
    let g = json(&d.join("g.json"));
    assert_eq!(g["components"].as_array().unwrap().len(), 1);
    let out = run(&["--encoding", "gzip", "edge", "--input", s(&vol), "--output", s(&d.join("e.nrrd")), "--shape", "cube26"]);
    assert!(out.status.success());
    let head = std::fs::read(d.join("e.nrrd")).unwrap();
    assert!(String::from_utf8_lossy(&head[..200.min(head.len())]).contains("encoding: gzip"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&["repair", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    let missing = run(&["repair", "--input", s(&d.join("nope.nrrd")), "--output", s(&d.join("o.nrrd"))]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.nrrd"));

    std::fs::write(d.join("junk.nrrd"), b"not a volume").unwrap();
    let junk = run(&["edge", "--input", s(&d.join("junk.nrrd")), "--output", s(&d.join("o.nrrd"))]);
    assert_eq!(junk.status.code(), Some(2));

    let (vol, _) = fixture(d);
    std::fs::write(d.join("bad.json"), "{ epsilon: ").unwrap();
    let bad = run(&["repair", "--input", s(&vol), "--output", s(&d.join("o.nrrd")), "--config", s(&d.join("bad.json"))]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("malformed config"));
    let neg = run(&["repair", "--input", s(&vol), "--output", s(&d.join("o.nrrd")), "--window", "1"]);
    assert_eq!(neg.status.code(), Some(1), "{}", String::from_utf8_lossy(&neg.stderr));
}

#[test]
fn help_lists_every_parameter_with_its_default() {
    let out = run(&["repair", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--epsilon", "--d-max", "--window", "--kappa-min", "--x-min-ratio", "--sigma", "--delta",
        "--surface-samples", "--surface-max-iter", "--seal-voxels",
    ] {
        let line = help.lines().skip_while(|l| !l.contains(flag)).take(3).collect::<Vec<_>>().join(" ");
        assert!(line.contains("default"), "{flag}: {line}");
    }
    assert!(help.contains("[default: 1.4142135623730951]"));
    let synth = String::from_utf8(run(&["synth", "--help"]).stdout).unwrap();
    assert!(synth.contains("--seed") && synth.contains("[default: 0]"));
    let metrics = String::from_utf8(run(&["metrics", "--help"]).stdout).unwrap();
    assert!(metrics.contains("--nsd-tolerance") && metrics.contains("default: smallest spacing"));
}
