use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airway-refine"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY_TRAIN: &str = r#"{
    "epochs": 1, "patch_dims": [16, 16, 16], "steps_per_epoch": 2, "checkpoint_every": 1,
    "generator": { "levels": 3, "base_channels": 4 },
    "discriminator": { "kind": "patch", "channels": [4, 1], "strides": [2, 1] }
}"#;

/// synth + corrupt into `dir/data`.
fn dataset(dir: &Path, seed: &str) {
    let o = bin(&["synth", "--count", "3", "--dims", "32,32,32", "--depth", "2", "--seed", seed, "--out", "raw"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    fs::write(dir.join("c.json"), r#"{"breakage_count": 1}"#).unwrap();
    let o = bin(&["corrupt", "--in", "raw", "--spec", "c.json", "--seed", seed, "--out", "data"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d, "5");
    for f in ["manifest.json", "case_0002.prelim.vol", "case_0002.prelim.vol.json", "run_manifest.json"] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }
    fs::write(d.join("t.json"), TINY_TRAIN).unwrap();
    let o = bin(&["train", "--data", "data", "--config", "t.json", "--seed", "1", "--out", "run"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let resolved = fs::read_to_string(d.join("run/config.resolved.json")).unwrap();
    assert!(resolved.contains("\"seed\": 1") && resolved.contains("\"disc_dilate_radius\": 2"));

    let o = bin(&["refine", "--data", "data", "--ckpt", "run/ckpt_final.bin", "--out", "refined"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = bin(
        &["refine", "--ct", "data/case_0000.vol", "--mask", "data/case_0000.prelim.vol", "--ckpt", "run/ckpt_final.bin", "--out", "one.vol", "--stitch-mode", "binary-vote", "--no-lcc"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(d.join("one.vol.manifest.json").exists());

    let o = bin(&["eval", "--pred", "refined", "--gt", "data", "--out", "ev/refined.csv"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(d.join("ev/refined.csv")).unwrap();
    assert!(csv.starts_with("# schema=1\ncase,iou,dice,dlr,dbr,precision,leakage,amr\n"));
    assert_eq!(csv.lines().count(), 5);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ev/refined.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cases"], 3);
    assert!(summary["dice"]["mean"].is_number() && summary["dice"]["std"].is_number());

    let o = bin(&["report", "--eval", "ev/refined.csv", "--log", "run/log.csv", "--out", "rep"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["refined.svg", "run_loss.svg", "summary.csv", "summary.md", "run_manifest.json"] {
        assert!(d.join("rep").join(f).exists(), "{f}");
    }
    let svg = fs::read_to_string(d.join("rep/refined.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("case_0001"));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 1);
    assert!(manifest["inputs"].as_array().unwrap().iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn eval_of_identical_masks_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = bin(&["synth", "--count", "1", "--dims", "32,32,32", "--depth", "1", "--seed", "2", "--out", "raw"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = "raw/case_0000.mask.vol";
    let o = bin(&["eval", "--pred", m, "--gt", m], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().nth(2), Some("case_0000,1.0,1.0,1.0,1.0,1.0,0.0,0.0"));
}

#[test]
fn stochastic_commands_are_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    dataset(a.path(), "9");
    dataset(b.path(), "9");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.path().join("data/manifest.json")).unwrap()).unwrap();
    for case in m["cases"].as_array().unwrap() {
        for key in ["image", "mask", "prelim"] {
            let f = case[key].as_str().unwrap();
            assert!(fs::read(a.path().join("data").join(f)).unwrap() == fs::read(b.path().join("data").join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn failures_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let usage = bin(&["synth", "--count", "1", "--seed", "1", "--out", "x", "--bogus"], d);
    let no_seed = bin(&["synth", "--count", "1", "--out", "x"], d);
    let missing = bin(&["eval", "--pred", "nope.vol", "--gt", "nope.vol"], d);
    fs::write(d.join("bad.csv"), "case,iou\n").unwrap();
    let schema = bin(&["report", "--eval", "bad.csv", "--out", "rep"], d);
    fs::write(d.join("ckpt.bin"), "not a checkpoint").unwrap();
    let bad_ckpt = bin(&["refine", "--ct", "a.vol", "--mask", "b.vol", "--ckpt", "ckpt.bin", "--out", "o.vol"], d);
    let overlap = bin(&["refine", "--ct", "a.vol", "--mask", "b.vol", "--ckpt", "ckpt.bin", "--out", "o.vol", "--overlap", "0.25"], d);
    let unknown_op = bin(&["gradcheck", "--op", "nonexistent"], d);

    assert_eq!(code(&usage), 2);
    assert_eq!(code(&no_seed), 2);
    assert_eq!(code(&missing), 3);
    assert_eq!(code(&schema), 4);
    assert_eq!(code(&bad_ckpt), 4);
    assert_eq!(code(&overlap), 5);
    assert_eq!(code(&unknown_op), 5);
    for o in [&usage, &missing, &schema, &bad_ckpt, &overlap] {
        let e = stderr(o);
        assert_eq!(e.lines().count(), 1, "{e}");
        assert!(e.starts_with("error kind=") && e.contains(&format!("code={} msg=\"", code(o))), "{e}");
    }
}

#[test]
fn gradcheck_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["gradcheck", "--op", "tanh", "--op", "soft_cl_dice", "--out", "g.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.lines().any(|l| l.starts_with("tanh") && l.ends_with("ok")));
    assert!(fs::read_to_string(dir.path().join("g.csv")).unwrap().starts_with("# schema=1\nname,kind,max_rel_error"));
}

#[test]
fn train_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d, "4");
    fs::write(d.join("t.json"), TINY_TRAIN).unwrap();
    let o = bin(
        &["train", "--data", "data", "--config", "t.json", "--seed", "3", "--out", "run", "--disc", "vit", "--disc-dilate-radius", "1", "--steps-per-epoch", "1"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run/config.resolved.json")).unwrap()).unwrap();
    assert_eq!(cfg["discriminator"]["kind"], "vit");
    assert_eq!(cfg["discriminator"]["input_dims"], serde_json::json!([16, 16, 16]));
    assert_eq!(cfg["disc_dilate_radius"], 1);
    assert_eq!(cfg["steps_per_epoch"], 1);

    fs::write(d.join("r.json"), r#"{"disc_dilate_radius": 3}"#).unwrap();
    let o = bin(&["train", "--data", "data", "--config", "r.json", "--seed", "3", "--out", "run2"], d);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}
