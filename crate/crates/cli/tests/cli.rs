use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use avel_core::crossmod::{load_avdln, pair_distance, LocalizationResult};
use avel_core::data::read_corpus;
use serde_json::Value;

fn avel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avel")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = avel(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    avel(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &[&str] = &["--visual-channels", "6", "--regions", "4", "--audio-dim", "6", "--event-cells", "1"];

fn synth(dir: &Path, videos: &str, extra: &[&str]) -> Value {
    let mut args = vec!["synth", "--out", p(dir), "--videos", videos];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args)
}

const TINY_MODEL: &[&str] = &["--hidden", "8", "--att-dim", "6", "--att-hidden", "4", "--joint-dim", "8"];

#[test]
fn synth_writes_files_and_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let s = synth(&a, "200", &["--classes", "5", "--seed", "7"]);
    assert_eq!(s["videos"], 200);
    assert_eq!(s["classes"], 6);
    synth(&b, "200", &["--classes", "5", "--seed", "7"]);
    let avef = fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "avef").count();
    assert_eq!(avef, 200);
    for e in fs::read_dir(&a).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    assert_eq!(ok(&["validate", p(&a)])["ok"], true);
}

#[test]
fn eval_reproduces_best_validation_accuracy() {
    let d = tempfile::tempdir().unwrap();
    let (c, m) = (d.path().join("c"), d.path().join("m"));
    synth(&c, "60", &[]);
    let mut args = vec!["train", "--data", p(&c), "--out", p(&m), "--variant", "A+V-att", "--epochs", "3"];
    args.extend_from_slice(TINY_MODEL);
    let t = ok(&args);
    let ckpt = m.join("model.ckpt");
    let e = ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&c)]);
    assert_eq!(e["subset"], "val");
    assert_eq!(e["accuracy"], t["best_val_accuracy"]);
    let test = ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&c), "--subset", "test"]);
    assert_eq!(test["accuracy"], t["test_accuracy"]);

    // Training is deterministic under the seed, also with a different pool size.
    let m2 = d.path().join("m2");
    args[4] = p(&m2);
    let out = Command::new(env!("CARGO_BIN_EXE_avel")).args(&args).env("AVEL_THREADS", "1").output().unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(m2.join("model.ckpt")).unwrap());

    let v = ok(&[
        "validate",
        p(&ckpt),
        p(&m.join("report.json")),
        p(&m.join("report.csv")),
        p(&m.join("split.json")),
    ]);
    assert_eq!(v["ok"], true, "{v}");
}

#[test]
fn weak_training_is_scored_per_segment() {
    let d = tempfile::tempdir().unwrap();
    let (c, m) = (d.path().join("c"), d.path().join("m"));
    synth(&c, "40", &[]);
    let mut args = vec!["train", "--data", p(&c), "--out", p(&m), "--variant", "W-A+V", "--epochs", "2"];
    args.extend_from_slice(TINY_MODEL);
    let t = ok(&args);
    assert_eq!(t["task"], "weak");
    let e = ok(&["eval", "--checkpoint", p(&m.join("model.ckpt")), "--data", p(&c), "--predictions", p(&d.path().join("p.jsonl"))]);
    assert_eq!(e["task"], "weak");
    assert_eq!(e["segments"], e["videos"].as_u64().unwrap() * 10);
    assert_eq!(ok(&["validate", p(&d.path().join("p.jsonl"))])["ok"], true);

    let clash = ["train", "--data", p(&c), "--out", p(&m), "--variant", "W-A", "--task", "supervised"];
    assert_eq!(code(&clash), 2);
}

#[test]
fn localize_rows_match_exhaustive_search() {
    let d = tempfile::tempdir().unwrap();
    let (c, m, r) = (d.path().join("c"), d.path().join("m"), d.path().join("r.jsonl"));
    synth(&c, "40", &["--event-len", "2,6", "--sync", "1"]);
    ok(&["train", "--model", "avdln", "--data", p(&c), "--out", p(&m), "--epochs", "2", "--hidden", "8", "--embed", "4"]);
    let ckpt = m.join("model.ckpt");
    let s = ok(&["localize", "--checkpoint", p(&ckpt), "--data", p(&c), "--direction", "a2v", "--subset", "all", "--out", p(&r)]);
    assert!(s["queries"].as_u64().unwrap() > 0);

    let (model, store) = load_avdln(&ckpt).unwrap();
    let corpus = read_corpus(&c).unwrap();
    let text = fs::read_to_string(&r).unwrap();
    for line in text.lines() {
        let row: LocalizationResult = serde_json::from_str(line).unwrap();
        let seq = corpus.iter().find(|q| q.video_id == row.video_id).unwrap();
        let (gt, l) = (row.ground_truth, row.l);
        let cost = |start: usize| -> f64 {
            (0..l)
                .map(|i| pair_distance(&model, &store, &seq.pooled_visual(start + i), seq.audio[gt + i].data()).unwrap())
                .sum()
        };
        let mut best = (0, f64::INFINITY);
        for start in 0..=seq.len() - l {
            let c = cost(start);
            if c < best.1 {
                best = (start, c);
            }
        }
        assert_eq!(row.t_star, best.0, "{line}");
        assert!((row.cumulative_distance - best.1).abs() <= 1e-9 * best.1.max(1.0));
    }
    let v = ok(&["validate", p(&r), p(&ckpt), p(&m.join("report.json"))]);
    assert_eq!(v["ok"], true, "{v}");
}

#[test]
fn attention_maps_are_written_and_validate() {
    let d = tempfile::tempdir().unwrap();
    let (c, m, a) = (d.path().join("c"), d.path().join("m"), d.path().join("att"));
    synth(&c, "30", &[]);
    let mut args = vec!["train", "--data", p(&c), "--out", p(&m), "--variant", "V-att", "--epochs", "1"];
    args.extend_from_slice(TINY_MODEL);
    ok(&args);
    let s = ok(&["attmaps", "--checkpoint", p(&m.join("model.ckpt")), "--data", p(&c), "--videos", "synth_0000", "--out", p(&a)]);
    assert_eq!(s["files"], 11);
    let paths: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().path().to_string_lossy().into_owned()).collect();
    let mut args = vec!["validate"];
    args.extend(paths.iter().map(String::as_str));
    assert_eq!(ok(&args)["ok"], true);

    // A model without attention has no maps to write.
    let m2 = d.path().join("m2");
    let mut args = vec!["train", "--data", p(&c), "--out", p(&m2), "--variant", "A", "--epochs", "1"];
    args.extend_from_slice(TINY_MODEL);
    ok(&args);
    assert_eq!(code(&["attmaps", "--checkpoint", p(&m2.join("model.ckpt")), "--data", p(&c), "--out", p(&a)]), 3);
}

#[test]
fn config_file_with_flag_overrides() {
    let d = tempfile::tempdir().unwrap();
    let (c, cfg) = (d.path().join("c"), d.path().join("run.toml"));
    fs::write(&cfg, format!("seed = 3\n[synth]\nout = {:?}\nvideos = 12\nregions = 4\nvisual_channels = 6\naudio_dim = 6\nevent_cells = 1\n", p(&c))).unwrap();
    let s = ok(&["synth", "--config", p(&cfg), "--videos", "9"]);
    assert_eq!(s["videos"], 9);
    assert_eq!(s["seed"], 3);

    fs::write(&cfg, "[synth]\nvidoes = 12\n").unwrap();
    assert_eq!(code(&["synth", "--config", p(&cfg), "--out", p(&c)]), 2);
    fs::write(&cfg, "videos = [").unwrap();
    assert_eq!(code(&["synth", "--config", p(&cfg), "--out", p(&c)]), 2);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let c = d.path().join("c");
    synth(&c, "20", &[]);
    let out = p(&d.path().join("m")).to_string();
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--data", p(&c), "--out", &out, "--epochs", "2"];
        args.extend_from_slice(TINY_MODEL);
        args.extend_from_slice(extra);
        code(&args)
    };
    let bad_variant = avel(&["train", "--data", p(&c), "--out", &out, "--variant", "A+B"]);
    assert_eq!(bad_variant.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_variant.stderr).contains("A+V-att"));
    assert_eq!(train(&["--fusion", "sum"]), 2);
    assert_eq!(train(&["--fusion", "dmrfe", "--placement", "early"]), 2);
    assert_eq!(train(&["--variant", "A'"]), 3);
    assert_eq!(train(&["--variant", "A+V", "--lr", "1e300"]), 4);
    assert_eq!(code(&["synth", "--out", p(&c), "--videos", "zero"]), 2);
    assert_eq!(code(&["eval", "--checkpoint", p(&d.path().join("none.ckpt")), "--data", p(&c)]), 3);

    let out = Command::new(env!("CARGO_BIN_EXE_avel"))
        .args(["validate", p(&c)])
        .env("AVEL_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let file = c.join("synth_0000.avef");
    let bytes = fs::read(&file).unwrap();
    let cut = d.path().join("cut.avef");
    fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    let magic = d.path().join("magic.avef");
    fs::write(&magic, &wrong).unwrap();
    let out = avel(&["validate", p(&file), p(&cut), p(&magic)]);
    assert_eq!(out.status.code(), Some(3));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = v["artifacts"].as_array().unwrap();
    assert_eq!(rows[0]["ok"], true);
    assert!(rows[1]["error"].as_str().unwrap().contains("format error at byte"));
    assert!(rows[2]["error"].as_str().unwrap().contains("at byte 0"));
}
