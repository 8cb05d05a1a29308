use std::path::Path;
use std::process::{Command, Output};

use covstream::io;
use covstream::recognizer::{train, RecognizerConfig};
use covstream::synth::{SynthConfig, SyntheticClasses};

fn covstream(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covstream"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn assert_single_line_failure(out: &Output, code: i32, needle: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains(needle), "{err}");
    assert!(out.stdout.is_empty());
}

fn synth(dir: &Path, seed: &str) {
    let out = covstream(&[
        "synth",
        "--seed",
        seed,
        "--test-streams",
        "2",
        "--out-dir",
        p(dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
}

fn train_model(data: &Path, model: &Path, extra: &[&str]) -> Output {
    let train_manifest = data.join("train.txt");
    let neutral = data.join("neutral.txt");
    let mut args = vec![
        "train",
        "--data",
        p(&train_manifest),
        "--neutral",
        p(&neutral),
        "--eta",
        "0.8",
        "--init-frames",
        "15",
        "--out",
        p(model),
    ];
    args.extend_from_slice(extra);
    covstream(&args)
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "7");
    let model = dir.path().join("model.txt");

    let out = train_model(&data, &model, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = String::from_utf8(out.stdout).unwrap();
    for l in 1..=3 {
        assert!(
            summary.contains(&format!("class {l}: 5 descriptors")),
            "{summary}"
        );
    }
    assert!(summary.contains("orthonormality error"));
    let loaded = io::read_model(&model).unwrap();
    assert_eq!(loaded.classes.len(), 3);

    let report = dir.path().join("report.txt");
    let kv = dir.path().join("report.kv");
    let test_manifest = data.join("test.txt");
    let out = covstream(&[
        "evaluate",
        "--model",
        p(&model),
        "--streams",
        p(&test_manifest),
        "--out",
        p(&report),
        "--kv",
        p(&kv),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    let kv = std::fs::read_to_string(&kv).unwrap();
    for line in kv
        .lines()
        .filter(|l| l.contains("rate") || l.contains("latency"))
    {
        let v: f64 = line.split('=').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v), "{line}");
    }
    let miss: f64 = kv
        .lines()
        .find_map(|l| l.strip_prefix("segment.miss_rate="))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(miss, 0.0);

    let events = dir.path().join("events.txt");
    let trace = dir.path().join("trace.txt");
    let stream = data.join("test/stream_000.txt");
    let out = covstream(&[
        "recognize",
        "--model",
        p(&model),
        "--stream",
        p(&stream),
        "--out",
        p(&events),
        "--trace",
        p(&trace),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let frames = io::read_stream(&stream).unwrap().frames.len();
    let text = std::fs::read_to_string(&events).unwrap();
    let parsed = io::parse_events(&events, &text).unwrap();
    assert_eq!(parsed.len(), frames - 14);
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("# frame_index std d_1 d_2 d_3"));
    assert_eq!(trace_text.lines().count(), frames - 14 + 1);
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "7");
    synth(b.path(), "7");
    for rel in [
        "neutral.txt",
        "train.txt",
        "train/class2_004.txt",
        "test.txt",
        "test/stream_001.txt",
        "test/stream_001.ann",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(rel)).unwrap(),
            std::fs::read(b.path().join(rel)).unwrap(),
            "{rel}"
        );
    }
    let c = tempfile::tempdir().unwrap();
    synth(c.path(), "8");
    assert_ne!(
        std::fs::read(a.path().join("train/class1_000.txt")).unwrap(),
        std::fs::read(c.path().join("train/class1_000.txt")).unwrap()
    );
}

#[test]
fn annotations_partition_their_streams() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    for (stream, ann) in io::read_eval_manifest(&dir.path().join("test.txt")).unwrap() {
        let frames = io::read_stream(&stream).unwrap().frames.len();
        let ann = io::read_annotation(&ann).unwrap();
        assert_eq!(ann.segments.len(), 10);
        assert_eq!(ann.frame_count(), frames);
        assert_eq!(ann.segments[0].start, 0);
        for w in ann.segments.windows(2) {
            assert_eq!(w[1].start, w[0].end + 1);
        }
    }
}

#[test]
fn full_target_dimension_is_allowed() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    let model = dir.path().join("m.txt");
    let out = train_model(
        dir.path(),
        &model,
        &["--dim", "21", "--max-iterations", "5"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(io::read_model(&model).unwrap().target_dim(), 21);
}

#[test]
fn one_class_manifest_fails_with_affinity_undefined() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    let manifest = std::fs::read_to_string(dir.path().join("train.txt")).unwrap();
    let one: String = manifest
        .lines()
        .filter(|l| l.starts_with("1 "))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(dir.path().join("train.txt"), one).unwrap();
    let model = dir.path().join("m.txt");
    let out = train_model(dir.path(), &model, &[]);
    assert_single_line_failure(&out, 2, "affinity undefined");
    assert!(!model.exists());
}

#[test]
fn empty_eval_manifest_fails_with_no_streams() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    let model = dir.path().join("m.txt");
    assert!(train_model(dir.path(), &model, &[]).status.success());
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "# nothing\n").unwrap();
    let report = dir.path().join("r.txt");
    let out = covstream(&[
        "evaluate",
        "--model",
        p(&model),
        "--streams",
        p(&empty),
        "--out",
        p(&report),
    ]);
    assert_single_line_failure(&out, 2, "no streams");
    assert!(!report.exists());
}

#[test]
fn malformed_streams_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    let model = dir.path().join("m.txt");
    assert!(train_model(dir.path(), &model, &[]).status.success());
    let events = dir.path().join("e.txt");

    let stream = dir.path().join("test/stream_000.txt");
    let mut text = std::fs::read_to_string(&stream).unwrap();
    text.truncate(text.len() - 30);
    let truncated = dir.path().join("truncated.txt");
    std::fs::write(&truncated, text).unwrap();
    let out = covstream(&[
        "recognize",
        "--model",
        p(&model),
        "--stream",
        p(&truncated),
        "--out",
        p(&events),
    ]);
    assert_single_line_failure(&out, 2, "truncated stream");

    let other = SyntheticClasses::new(SynthConfig {
        dim: 24,
        ..SynthConfig::default()
    })
    .unwrap();
    let wrong_k = dir.path().join("wrong_k.txt");
    std::fs::write(
        &wrong_k,
        io::format_stream(other.layout(), &[other.neutral_frame()]),
    )
    .unwrap();
    let out = covstream(&[
        "recognize",
        "--model",
        p(&model),
        "--stream",
        p(&wrong_k),
        "--out",
        p(&events),
    ]);
    assert_single_line_failure(&out, 2, "dimension mismatch");
    assert!(!events.exists());
}

#[test]
fn short_stream_warns_and_writes_no_decisions() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    let model = dir.path().join("m.txt");
    assert!(train_model(dir.path(), &model, &[]).status.success());
    let full = io::read_stream(&dir.path().join("test/stream_000.txt")).unwrap();
    let short = dir.path().join("short.txt");
    std::fs::write(&short, io::format_stream(&full.layout, &full.frames[..10])).unwrap();
    let events = dir.path().join("e.txt");
    let out = covstream(&[
        "recognize",
        "--model",
        p(&model),
        "--stream",
        p(&short),
        "--out",
        p(&events),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("shorter than"));
    let text = std::fs::read_to_string(&events).unwrap();
    assert!(io::parse_events(&events, &text).unwrap().is_empty());
}

#[test]
fn usage_errors_exit_with_one() {
    let out = covstream(&["train", "--data", "x"]);
    assert_single_line_failure(&out, 1, "--neutral");
    let out = covstream(&["bench", "--d", "x", "--out", "y"]);
    assert_single_line_failure(&out, 1, "--d");
    let out = covstream(&["nonsense"]);
    assert_single_line_failure(&out, 1, "nonsense");
    let dir = tempfile::tempdir().unwrap();
    let out = covstream(&["synth", "--classes", "1", "--out-dir", p(dir.path())]);
    assert_single_line_failure(&out, 1, "at least 2 classes");
    let out = covstream(&[
        "train",
        "--data",
        "x",
        "--neutral",
        "y",
        "--eta",
        "1.5",
        "--out",
        "z",
    ]);
    assert_single_line_failure(&out, 1, "decay");
}

#[test]
fn missing_files_exit_with_two() {
    let out = covstream(&[
        "train",
        "--data",
        "/nonexistent/m",
        "--neutral",
        "/nonexistent/n",
        "--out",
        "/tmp/x",
    ]);
    assert_single_line_failure(&out, 2, "/nonexistent/n");
}

#[test]
fn bench_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("b.tsv");
    let out = covstream(&[
        "bench",
        "--d",
        "3",
        "--frames",
        "200",
        "--out",
        p(&out_path),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(out_path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "frame\tincremental_s\tbatch_s"
    );
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn model_file_round_trips_bit_exactly() {
    let synth = SyntheticClasses::new(SynthConfig::default()).unwrap();
    let (model, _) = train(
        &synth.training_set().unwrap(),
        synth.layout(),
        &synth.neutral(),
        &RecognizerConfig::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    io::write_model(&path, &model).unwrap();
    let back = io::read_model(&path).unwrap();
    assert_eq!(back, model);
    let bits = |m: &covstream::TrainedModel| -> Vec<u64> {
        let mut v: Vec<u64> = m.projection.matrix().iter().map(|x| x.to_bits()).collect();
        v.extend(m.neutral.0.values().iter().map(|x| x.to_bits()));
        for c in &m.classes {
            for d in &c.descriptors {
                v.extend(d.upper_triangle().iter().map(|x| x.to_bits()));
            }
        }
        v.push(m.decay.to_bits());
        v.push(m.epsilon.to_bits());
        v.push(m.objective.to_bits());
        v
    };
    assert_eq!(bits(&back), bits(&model));
    assert_eq!(
        io::format_model(&back),
        std::fs::read_to_string(&path).unwrap()
    );
}

#[test]
fn corrupted_model_files_are_rejected() {
    let synth = SyntheticClasses::new(SynthConfig::default()).unwrap();
    let (model, _) = train(
        &synth.training_set().unwrap(),
        synth.layout(),
        &synth.neutral(),
        &RecognizerConfig::default(),
    )
    .unwrap();
    let text = io::format_model(&model);
    let path = Path::new("model.txt");
    assert!(io::parse_model(
        path,
        &text.replace("covstream-model 1", "covstream-model 9")
    )
    .is_err());
    assert!(io::parse_model(path, &text[..text.len() / 2]).is_err());
    let lines: Vec<&str> = text.lines().collect();
    let dropped_row: String = lines
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != 12)
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    assert!(io::parse_model(path, &dropped_row).is_err());
}
