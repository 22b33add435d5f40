use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mocap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mocap")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mocap(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> String {
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Small noisy corpus with one sequence per requested kind.
fn corpus(dir: &Path, kinds: &str) -> PathBuf {
    let out = dir.join("corpus");
    ok(&["synth", "--out", s(&out), "--per-kind", "1", "--kinds", kinds, "--noise", "1.5", "--dropout", "0.05"]);
    out
}

fn run(seq: &Path, out: &Path, extra: &[&str]) -> Output {
    let (l, r) = (seq.join("left.jsonl"), seq.join("right.jsonl"));
    let mut args = vec!["run", "--left", s(&l), "--right", s(&r), "--out", s(out)];
    args.extend_from_slice(extra);
    mocap(&args)
}

const STREAMS: [&str; 4] = ["poses.jsonl", "events.jsonl", "states.jsonl", "animation.jsonl"];

#[test]
fn synth_is_reproducible_and_seeded() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (dir, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        ok(&["synth", "--out", s(dir), "--per-kind", "1", "--kinds", "heart,idle", "--seed", seed, "--noise", "1"]);
    }
    for file in ["manifest.json", "0000_heart/left.jsonl", "0001_idle/truth.jsonl", "0000_heart/labels.jsonl"] {
        assert_eq!(read(a.join(file)), read(b.join(file)), "{file}");
    }
    assert_ne!(read(a.join("0000_heart/left.jsonl")), read(c.join("0000_heart/left.jsonl")));
    assert_eq!(read(a.join("0000_heart/labels.jsonl")).lines().count(), 1);
    assert!(read(a.join("0001_idle/labels.jsonl")).is_empty());
}

#[test]
fn repeated_and_chunked_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let seq = corpus(tmp.path(), "wave").join("0000_wave");
    let audio = tmp.path().join("audio.jsonl");
    fs::write(
        &audio,
        "{\"t\":1.0,\"label\":\"happy\",\"confidence\":0.9}\n{\"t\":4.0,\"label\":\"sad\",\"confidence\":0.7}\n",
    )
    .unwrap();
    let runs: Vec<PathBuf> = ["whole", "again", "chunk1", "chunk13"].iter().map(|n| tmp.path().join(n)).collect();
    let chunk_flags: [&[&str]; 4] = [&[], &[], &["--chunk-size", "1"], &["--chunk-size", "13"]];
    for (dir, flags) in runs.iter().zip(chunk_flags) {
        let mut extra = vec!["--audio", s(&audio)];
        extra.extend_from_slice(flags);
        assert!(run(&seq, dir, &extra).status.success());
    }
    for name in STREAMS {
        let reference = read(runs[0].join(name));
        for dir in &runs[1..] {
            assert_eq!(reference, read(dir.join(name)), "{name} differs in {}", dir.display());
        }
    }
    let events = read(runs[0].join("events.jsonl"));
    assert_eq!(events.lines().count(), 1);
    assert!(events.contains("GreetingWave"));
    assert!(read(runs[0].join("animation.jsonl")).contains("mimic_wave"));
}

#[test]
fn stage_verbs_agree_with_full_run() {
    let tmp = TempDir::new().unwrap();
    let seq = corpus(tmp.path(), "petting").join("0000_petting");
    let full = tmp.path().join("full");
    assert!(run(&seq, &full, &[]).status.success());

    let track = tmp.path().join("track");
    let (l, r) = (seq.join("left.jsonl"), seq.join("right.jsonl"));
    ok(&["track", "--left", s(&l), "--right", s(&r), "--out", s(&track)]);
    assert_eq!(read(track.join("poses.jsonl")), read(full.join("poses.jsonl")));

    let rec = tmp.path().join("rec");
    ok(&["recognize", "--poses", s(&track.join("poses.jsonl")), "--out", s(&rec)]);
    assert_eq!(read(rec.join("events.jsonl")), read(full.join("events.jsonl")));

    let ret = tmp.path().join("ret");
    let events = rec.join("events.jsonl");
    ok(&["retarget", "--poses", s(&track.join("poses.jsonl")), "--events", s(&events), "--out", s(&ret)]);
    let animation = read(ret.join("animation.jsonl"));
    assert_eq!(animation.lines().count(), read(full.join("poses.jsonl")).lines().count());
    assert!(animation.contains("victory_smile"));
}

#[test]
fn eval_corpus_reports_scores_and_throughput() {
    let tmp = TempDir::new().unwrap();
    let dir = corpus(tmp.path(), "wave,heart,idle");
    let report_dir = tmp.path().join("report");
    let out = ok(&["eval", "--corpus", s(&dir), "--out", s(&report_dir)]);
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let saved: serde_json::Value = serde_json::from_str(&read(report_dir.join("report.json"))).unwrap();
    assert_eq!(printed, saved);
    assert_eq!(printed["sequences"], 3);
    let report = &printed["report"];
    assert_eq!(report["overall"]["labels"], 2);
    assert_eq!(report["overall"]["matched"], 2);
    assert_eq!(report["counts"]["false_events"], 0);
    let mpjpe = report["mpjpe_mm"].as_f64().unwrap();
    assert!(mpjpe > 0.0 && mpjpe < 60.0, "{mpjpe}");
    let fps = report["throughput_fps"].as_f64().unwrap();
    assert!(fps >= 300.0, "throughput {fps} fps is below 10x real time");
}

#[test]
fn eval_files_with_perfect_predictions() {
    let tmp = TempDir::new().unwrap();
    let seq = corpus(tmp.path(), "heart").join("0000_heart");
    let labels = read(seq.join("labels.jsonl"));
    let events = tmp.path().join("events.jsonl");
    fs::write(&events, labels.replace("}", ",\"confidence\":1.0}")).unwrap();
    let truth = seq.join("truth.jsonl");
    let out = ok(&[
        "eval",
        "--events",
        s(&events),
        "--labels",
        s(&seq.join("labels.jsonl")),
        "--poses",
        s(&truth),
        "--truth",
        s(&truth),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["overall"]["precision"], 1.0);
    assert_eq!(v["report"]["overall"]["recall"], 1.0);
    assert_eq!(v["report"]["timing"]["max_ms"], 0.0);
    assert_eq!(v["report"]["mpjpe_mm"], 0.0);
}

#[test]
fn empty_streams_succeed_with_empty_outputs() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = tmp.path().join("out");
    ok(&["run", "--left", s(&empty), "--right", s(&empty), "--out", s(&out)]);
    for name in STREAMS {
        assert!(read(out.join(name)).is_empty(), "{name}");
    }
    ok(&["recognize", "--poses", s(&empty), "--out", s(&out)]);
    ok(&["retarget", "--poses", s(&empty), "--out", s(&out)]);
    assert!(read(out.join("animation.jsonl")).is_empty());
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("typo.json", r#"{"pipeline": {"recognizer": {"wave_amplitde": 0.2}}}"#),
        ("invalid.json", r#"{"pipeline": {"tracker": {"alpha": 3.0}}}"#),
        ("missing.json", r#"{"calibration": "absent.json"}"#),
        ("syntax.json", "{"),
    ];
    for (name, text) in cases {
        let path = tmp.path().join(name);
        fs::write(&path, text).unwrap();
        let res = mocap(&["run", "--left", s(&empty), "--right", s(&empty), "--out", s(&out), "--config", s(&path)]);
        assert_eq!(res.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&res.stderr));
    }
    let res = mocap(&["run", "--left", s(&empty), "--right", s(&empty), "--out", s(&out), "--config", "nowhere.json"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_code_3() {
    let tmp = TempDir::new().unwrap();
    let seq = corpus(tmp.path(), "idle").join("0000_idle");
    let out = tmp.path().join("out");

    let left = read(seq.join("left.jsonl"));
    let mut lines: Vec<&str> = left.lines().collect();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, format!("{}\n{}\n{{\"t\": 0.5, \"cam\": 0}}\n", lines[0], lines[1])).unwrap();
    let res = mocap(&["run", "--left", s(&bad), "--right", s(&seq.join("right.jsonl")), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 3"));

    lines.swap(10, 20);
    let shuffled = tmp.path().join("shuffled.jsonl");
    fs::write(&shuffled, lines.join("\n")).unwrap();
    let res = mocap(&["run", "--left", s(&shuffled), "--right", s(&seq.join("right.jsonl")), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));

    let res = mocap(&["recognize", "--poses", s(&tmp.path().join("absent.jsonl")), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(3));
}
