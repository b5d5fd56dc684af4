use std::fs;
use std::path::Path;
use std::process::Command;

use lab::{run, Check, Scenario, ScenarioConfig};

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lab"))
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn json_and_key_value_configs_agree() {
    let json = r#"{ "scenario": "ergodic-gap", "surface": { "preset": "torus", "l": 4.0 },
                   "seed": 3, "eps": 0.4, "horizons": [100, 1000] }"#;
    let kv = "scenario = ergodic-gap\npreset = torus\nl = 4  # band width\nseed = 3\neps = 0.4\nhorizons = 100, 1000\n";
    let a = ScenarioConfig::parse(json).unwrap();
    let b = ScenarioConfig::parse(kv).unwrap();
    assert_eq!(a.seed, b.seed);
    assert_eq!(a.eps, b.eps);
    assert_eq!(a.horizons, b.horizons);
    assert_eq!(a.surface.build().unwrap(), b.surface.build().unwrap());
}

#[test]
fn config_errors() {
    let cases = [
        "scenario = nope\npreset = torus",
        "scenario = ergodic-gap\npreset = ended-torus",
        "scenario = nonwandering\npreset = torus\nl = 4",
        "scenario = ergodic-gap\npreset = torus\ntheta = 2.0",
        "scenario = ergodic-gap\npreset = torus\nsamples = 0",
        "scenario = ergodic-gap\npreset = torus\nhorizons = -1",
        "scenario = ergodic-gap\npreset = torus\nbogus = 1",
        r#"{ "scenario": "ergodic-gap", "surface": { "preset": "torus" }, "eta": 5 }"#,
    ];
    for c in cases {
        assert!(ScenarioConfig::parse(c).is_err(), "{c}");
    }
    assert!(ScenarioConfig::parse("scenario = prohorov-bound\npreset = torus\nd = 0.1").is_ok());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = lab()
        .args(["run", "nonwandering", "--out"])
        .arg(dir.path().join("ok"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    for f in ["summary.json", "classification.csv", "plotdata/boundary_distances.json"] {
        assert!(dir.path().join("ok").join(f).exists(), "{f}");
    }

    let strict = write(dir.path(), "strict.cfg", "scenario = nonwandering\npreset = ended-torus\ntolerance = 0\n");
    let fail = lab()
        .args(["run", "nonwandering", "--config"])
        .arg(&strict)
        .arg("--out")
        .arg(dir.path().join("fail"))
        .output()
        .unwrap();
    assert_eq!(fail.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&fail.stdout).contains("FAIL"));

    let bad = write(dir.path(), "bad.cfg", "scenario = nonwandering\npreset = torus\n");
    let code = |args: &[&str], cfg: &Path| lab().args(args).arg(cfg).output().unwrap().status.code();
    assert_eq!(code(&["run", "nonwandering", "--config"], &bad), Some(2));
    assert_eq!(lab().args(["run", "nope"]).output().unwrap().status.code(), Some(2));

    let surface = write(dir.path(), "surface.cfg", "preset = funnels\nl = 2\nh = 1\n");
    assert_eq!(code(&["validate"], &surface), Some(0));
    let broken = write(dir.path(), "broken.cfg", "preset = funnels\nl = -2\nh = 1\n");
    assert_eq!(code(&["validate"], &broken), Some(2));
}

#[test]
fn summaries_do_not_depend_on_worker_count() {
    let mut cfg = ScenarioConfig::preset(Scenario::ErgodicGap);
    cfg.samples = Some(12);
    cfg.horizons = Some(vec![100.0, 300.0]);
    cfg.seed = 11;
    let one = run(&cfg, Some(1)).unwrap();
    let four = run(&cfg, Some(4)).unwrap();
    assert_eq!(one.summary_json(), four.summary_json());
    assert_eq!(one.table("occupancy").unwrap().rows.len(), 24);
    cfg.seed = 12;
    assert_ne!(run(&cfg, Some(1)).unwrap().summary_json(), one.summary_json());

    let cfg = ScenarioConfig::preset(Scenario::Nonwandering);
    assert_eq!(run(&cfg, Some(1)).unwrap().summary_json(), run(&cfg, Some(3)).unwrap().summary_json());
}

#[test]
fn saturated_prohorov_bound() {
    let mut cfg = ScenarioConfig::preset(Scenario::ProhorovBound);
    cfg.d = Some(0.1);
    cfg.horizons = Some(vec![1e3]);
    cfg.n_delta = Some(64);
    let r = run(&cfg, None).unwrap();
    assert!(r.passed());
    assert_eq!(r.results["bound"], 0.1);
    let a = &r.assertions[0];
    assert!(matches!(a.check, Check::AtLeast { limit } if limit < 0.1 && limit > 0.08));
}

#[test]
fn every_assertion_names_a_criterion() {
    let r = run(&ScenarioConfig::preset(Scenario::Nonwandering), None).unwrap();
    assert!(r.assertions.iter().all(|a| (1..=9).contains(&a.criterion)));
    let json: serde_json::Value = serde_json::from_str(&r.summary_json()).unwrap();
    assert_eq!(json["assertions"].as_array().unwrap().len(), r.assertions.len());
}
