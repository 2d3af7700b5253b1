use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn agcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agcr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = agcr(args);
    assert!(
        out.status.success(),
        "agcr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|f| f.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(agcr(&[]).status.code(), Some(2));
    assert_eq!(agcr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(agcr(&["encode", "--mode", "fisher", "--codebooks", "x", "--out", "y", "z"]).status.code(), Some(2));
    assert_eq!(agcr(&["--help"]).status.code(), Some(0));
    assert_eq!(agcr(&["--version"]).status.code(), Some(0));
}

#[test]
fn bad_config_and_missing_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "theta_on = 0.01\ntheta_off = 0.02\n").unwrap();
    let out = agcr(&["--config", p(&cfg), "detect", "nothing.igsc"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta_on"));

    std::fs::write(&cfg, "warp_factor = 9\n").unwrap();
    assert_eq!(agcr(&["--config", p(&cfg), "detect", "x.igsc"]).status.code(), Some(1));
    assert_eq!(agcr(&["detect", p(&dir.path().join("missing.igsc"))]).status.code(), Some(1));
    assert_eq!(agcr(&["--jobs", "0", "detect", "x.igsc"]).status.code(), Some(1));
}

#[test]
fn gesture_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus");
    ok(&["synth", "gestures", "--out", p(&corpus), "--clips-per-class", "2", "--frames", "20"]);
    let clips = files(&corpus.join("rgb"), "igsc");
    assert_eq!(clips.len(), 14);

    let feats = d.join("feats");
    let mut args = vec!["extract", "--out", p(&feats)];
    args.extend(clips.iter().map(|c| p(c)));
    ok(&args);
    let fs = files(&feats, "igtf");
    assert_eq!(fs.len(), 14);

    let books = d.join("books");
    let mut args = vec!["codebook", "--out", p(&books), "--k", "8"];
    args.extend(fs.iter().map(|f| p(f)));
    let hashes = ok(&args);
    assert_eq!(hashes.lines().count(), 4);

    let ann = corpus.join("annotations.jsonl");
    let enc = d.join("train.igev");
    let mut args = vec!["encode", "--codebooks", p(&books), "--annotations", p(&ann), "--out", p(&enc)];
    args.extend(fs.iter().map(|f| p(f)));
    ok(&args);

    let model = d.join("model.igsv");
    ok(&["train", "svm", "--encoded", p(&enc), "--codebooks", p(&books), "--out", p(&model)]);
    let out = ok(&["classify", "gesture", "--model", p(&model), "--codebooks", p(&books), p(&fs[0])]);
    assert!(out.starts_with("class\t"));
    // Raw clips classify the same as their feature dumps.
    let stem = fs[0].file_stem().unwrap().to_str().unwrap();
    let from_clip = ok(&[
        "classify",
        "gesture",
        "--model",
        p(&model),
        "--codebooks",
        p(&books),
        p(&corpus.join("rgb").join(format!("{stem}.igsc"))),
    ]);
    assert_eq!(out, from_clip);

    let vlad = d.join("train.jsonl");
    let mut args = vec!["encode", "--mode", "vlad", "--codebooks", p(&books), "--annotations", p(&ann), "--out", p(&vlad)];
    args.extend(fs.iter().map(|f| p(f)));
    ok(&args);
    let linear = d.join("linear.igsv");
    ok(&["train", "svm", "--kind", "linear", "--encoded", p(&vlad), "--codebooks", p(&books), "--out", p(&linear)]);
    ok(&["classify", "gesture", "--model", p(&linear), "--codebooks", p(&books), p(&fs[3])]);

    let loo = ok(&["evaluate", "loo", "--encoded", p(&enc), "--annotations", p(&ann)]);
    assert!(!loo.is_empty());

    // Codebooks retrained with another size no longer match the model.
    let other = d.join("other");
    let mut args = vec!["codebook", "--out", p(&other), "--k", "6"];
    args.extend(fs.iter().map(|f| p(f)));
    ok(&args);
    let out = agcr(&["classify", "gesture", "--model", p(&model), "--codebooks", p(&other), p(&fs[0])]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn spoken_command_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tpl = d.join("templates");
    ok(&["synth", "audio", "--out", p(&tpl), "--speakers", "3"]);
    let enroll = d.join("enroll");
    ok(&["synth", "audio", "--out", p(&enroll), "--speakers", "1", "--seed", "50", "--snr", "30"]);
    let xf = d.join("speaker.json");
    let fit = ok(&[
        "train",
        "audio",
        "--manifest",
        p(&tpl.join("manifest.json")),
        "--enroll",
        p(&enroll.join("manifest.json")),
        "--out",
        p(&xf),
    ]);
    assert!(fit.starts_with("objective"));
    let wav = enroll.join("spk50_cmd3.wav");
    let plain = ok(&["classify", "audio", "--manifest", p(&tpl.join("manifest.json")), p(&wav)]);
    assert!(plain.starts_with("3\t"), "{plain}");
    let adapted = ok(&[
        "classify",
        "audio",
        "--manifest",
        p(&tpl.join("manifest.json")),
        "--transform",
        p(&xf),
        p(&wav),
    ]);
    assert!(adapted.starts_with("3\t"), "{adapted}");
}

#[test]
fn session_simulation_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sess = d.join("session");
    ok(&["synth", "session", "--out", p(&sess), "--seed", "4"]);
    let events = ok(&["detect", p(&sess.join("video.igsc"))]);
    // Three A-G steps, each one onset and one offset.
    assert_eq!(events.lines().count(), 6, "{events}");

    let log_a = d.join("a.jsonl");
    let out = ok(&["simulate", "--input", p(&sess), "--train-clips", "4", "--out", p(&log_a)]);
    assert!(out.contains("final state Halted"), "{out}");
    let log_b = d.join("b.jsonl");
    ok(&["simulate", "--seed", "9", "--gestures", "background", "--train-clips", "4", "--out", p(&log_b)]);

    let report = d.join("report");
    let text = ok(&["evaluate", "session", "--out", p(&report), p(&log_a), p(&log_b)]);
    assert!(text.contains("MCRR"), "{text}");
    let csv = std::fs::read_to_string(report.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert!(json["tasks"][0].is_object());

    let out = agcr(&["evaluate", "session", "--script", "back", "--out", p(&report), p(&log_a)]);
    assert_eq!(out.status.code(), Some(1));
}
