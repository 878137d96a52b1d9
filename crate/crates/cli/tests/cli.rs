use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fpcg_core::signal_io::{load_wav, save_wav};
use fpcg_core::synth::{gen_beats, BeatSpec};

const QUICK: &str = r#"
seed = 5

[denoise.training]
clips = 3
clip_s = 1.0

[denoise.training.separator]
epochs = 2
mixtures_per_epoch = 2
hidden = 8

[denoise.training.dae]
epochs = 2
hidden = [16, 8, 16]

[ensemble]
stacking_folds = 3

[ensemble.meta]
rounds = 15

[ensemble.hyper.gbt]
rounds = 15

[eval]
single_views = false
"#;

fn fpcg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpcg")).args(args).output().expect("spawn fpcg")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(&o));
    o
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, format!("{QUICK}\n{extra}")).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_reports_metrics_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "run.toml",
        "[data.synth]\nn_subjects_per_class = 3\nsegs_per_subject = 3\nsegment_s = 1.0\n[data.synth.class_delta]\nfhr_bpm = 20.0\n",
    );
    ok(fpcg(&["run", "--config", s(&cfg), "--out-dir", s(&out)]));
    let first = std::fs::read(out.join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["version"], 1);
    let m = &report["rows"][0]["metrics"];
    for key in ["acc", "pr", "sn", "sp"] {
        assert!(m.get(key).is_some(), "missing {key}");
    }
    ok(fpcg(&["run", "--config", s(&cfg), "--out-dir", s(&out)]));
    assert_eq!(std::fs::read(out.join("report.json")).unwrap(), first);
}

#[test]
fn missing_manifest_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[data]\nmanifest = \"/no/such/manifest.csv\"\n");
    let o = fpcg(&["run", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/manifest.csv"), "{}", stderr(&o));
    assert!(stderr(&o).contains("[config]"));
}

#[test]
fn seed_is_mandatory_for_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[data.synth]\nn_subjects_per_class = 2\n").unwrap();
    let o = fpcg(&["run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn bad_method_lists_valid_set() {
    let dir = tempfile::tempdir().unwrap();
    let o = fpcg(&["denoise", "a.wav", "b.wav", "--method", "wiener", "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("SCBSS") && e.contains("DAE"), "{e}");
}

#[test]
fn denoise_keeps_clean_heartbeats() {
    let dir = tempfile::tempdir().unwrap();
    // denoisers trained at full default size so the separator is meaningful
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 2\n").unwrap();
    let trained = ok(fpcg(&["train-denoiser", "--config", s(&cfg), "--out-dir", s(dir.path())]));
    let models = PathBuf::from(String::from_utf8(trained.stdout).unwrap().trim());
    let clean = gen_beats(&BeatSpec::default(), 4.0, 8000, 9).unwrap();
    let input = dir.path().join("clean.wav");
    save_wav(&clean, &input).unwrap();
    let x = load_wav(&input).unwrap();
    for method in ["SCBSS", "DAE"] {
        let output = dir.path().join(format!("{method}.wav"));
        ok(fpcg(&["denoise", s(&input), s(&output), "--method", method, "--models", s(&models)]));
        let y = load_wav(&output).unwrap();
        assert_eq!((y.len(), y.sample_rate_hz), (x.len(), x.sample_rate_hz));
        let kept = y.energy() / x.energy();
        println!("{method}: kept {kept:.3} of the input energy");
        // the separation path is the default; the DAE is only required to stay well formed
        if method == "SCBSS" {
            assert!(kept >= 0.8, "{method} kept {kept}");
        } else {
            assert!(y.samples.iter().all(|v| v.is_finite()) && kept <= 1.5);
        }
    }
}

/// Writes a well-separated synthetic corpus and returns its manifest.
fn synth(dir: &Path, name: &str, seed: u64, segments: &str) -> PathBuf {
    let out = dir.join(name);
    let o = ok(fpcg(&[
        "synth",
        "--seed",
        &seed.to_string(),
        "--out-dir",
        s(&out),
        "--segment-s",
        "2.0",
        "--segments",
        segments,
        "--fhr-delta",
        "40",
    ]));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

#[test]
fn evaluate_separable_holdout_and_three_subject_loso() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "quick.toml", "");
    let train_m = synth(dir.path(), "train", 1, "4");
    let test_m = synth(dir.path(), "test", 2, "4");
    let models = dir.path().join("models");
    ok(fpcg(&["train-denoiser", "--config", s(&cfg), "--out-dir", s(&models)]));
    let models = models.join("models").join("denoisers.fpcg");
    let o = ok(fpcg(&["train", "--config", s(&cfg), "--manifest", s(&train_m), "--models", s(&models), "--out-dir", s(dir.path())]));
    let bundle = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());

    let eval_dir = dir.path().join("eval");
    ok(fpcg(&["evaluate", "--config", s(&cfg), "--bundle", s(&bundle), "--manifest", s(&test_m), "--out-dir", s(&eval_dir)]));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(eval_dir.join("evaluation-holdout.json")).unwrap()).unwrap();
    let acc = r["evaluation"]["metrics"]["acc"].as_f64().unwrap();
    println!("hold-out accuracy on a fresh corpus: {acc:.3}");
    assert!(acc >= 0.95);

    // keep two male subjects and one female
    let text = std::fs::read_to_string(&test_m).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let pick = |g: &str, n: usize| {
        let mut ids: Vec<&str> = rows.iter().filter(|r| r[1] == g).map(|r| r[0]).collect();
        ids.dedup();
        ids.truncate(n);
        ids
    };
    let chosen: Vec<&str> = [pick("M", 2), pick("F", 1)].concat();
    assert_eq!(chosen.len(), 3);
    let mut kept = vec![text.lines().next().unwrap().to_string()];
    kept.extend(rows.iter().filter(|r| chosen.contains(&r[0])).map(|r| r.join(",")));
    let three = test_m.with_file_name("three.csv");
    std::fs::write(&three, kept.join("\n") + "\n").unwrap();
    ok(fpcg(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--bundle",
        s(&bundle),
        "--manifest",
        s(&three),
        "--protocol",
        "loso",
        "--out-dir",
        s(&eval_dir),
    ]));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(eval_dir.join("evaluation-loso.json")).unwrap()).unwrap();
    assert_eq!(r["evaluation"]["folds"].as_array().unwrap().len(), 3);

    // features built under a different MFCC setting do not fit the bundle
    let other = write_config(dir.path(), "mfcc8.toml", "[ensemble.features.mfcc]\nn_coeffs = 8\n");
    let fdir = dir.path().join("feat");
    let o = ok(fpcg(&["featurize", "--config", s(&other), "--manifest", s(&test_m), "--models", s(&models), "--out-dir", s(&fdir)]));
    let views = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    let o = fpcg(&["evaluate", "--config", s(&cfg), "--bundle", s(&bundle), "--features", s(&views), "--out-dir", s(&eval_dir)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = fpcg(&["predict", "--bundle", s(&bundle), "--features", s(&views)]);
    assert_eq!(o.status.code(), Some(3));

    // predict on loose WAV files
    let wav = std::fs::read_dir(test_m.parent().unwrap().join("audio")).unwrap().next().unwrap().unwrap().path();
    let o = ok(fpcg(&["predict", "--bundle", s(&bundle), s(&wav)]));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("index,subject_id,predicted"));
    assert!(out.lines().count() >= 2);
}

#[test]
fn synth_and_segment_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "corpus", 3, "2");
    let o = ok(fpcg(&["segment", "--manifest", s(&m), "--out-dir", s(dir.path())]));
    assert!(String::from_utf8(o.stdout).unwrap().contains("segments"));
    let seg = std::fs::read_to_string(dir.path().join("segments").join("manifest.csv")).unwrap();
    // 2 s recordings stay whole: one segment each
    assert_eq!(seg.lines().count(), std::fs::read_to_string(&m).unwrap().lines().count());
}
