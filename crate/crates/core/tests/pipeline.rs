mod common;

use std::path::Path;
use std::process::Command;

use common::segments;
use eegtse::config::ModelConfig;
use eegtse::datasets::{read_manifest, read_wav, synth_corpus, write_manifest, CorpusConfig, Split, SynthConfig};
use eegtse::evaluation::{evaluate_corpus, extract, write_boxplot};
use eegtse::training::{
    electrode_graph, fit, load_checkpoint, steps_per_epoch, Batch, StepRecord, TrainConfig, Trainer, NO_ALIGNMENT_TAG,
};
use eegtse::Error;

fn miniature_corpus(root: &Path) -> std::path::PathBuf {
    let model = ModelConfig::miniature();
    let corpus = synth_corpus(&CorpusConfig {
        synth: SynthConfig {
            n_electrodes: model.n_electrodes,
            audio_rate_hz: model.audio_rate_hz,
            eeg_rate_hz: model.eeg_rate_hz,
            trial_seconds: 4.0,
            ..Default::default()
        },
        trials: 2,
        segment_seconds: model.segment_seconds,
        train_fraction: 0.75,
        valid_fraction: 0.125,
    })
    .unwrap();
    write_manifest(&corpus, root).unwrap()
}

fn trainer(lambda: f64, seed: u64, steps: usize) -> (Trainer, Vec<eegtse::datasets::SegmentPair>) {
    let model = ModelConfig::miniature();
    let segs = segments(model.n_electrodes, model.audio_rate_hz, model.segment_seconds, 8, 40);
    let graph = electrode_graph(&model, segs[0].eeg.positions.as_ref().map(|p| p.view())).unwrap();
    let cfg = TrainConfig { model, batch_size: 4, epochs: 1, peak_lr: 1e-2, lambda, seed, ..Default::default() };
    (Trainer::new(cfg, &graph, steps).unwrap(), segs)
}

fn log_lines(buf: &[u8]) -> Vec<serde_json::Value> {
    std::str::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn synth_train_evaluate_extract() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = miniature_corpus(&dir.path().join("corpus"));
    let all = read_manifest(&manifest).unwrap();
    let train: Vec<_> = all.iter().filter(|p| p.split == Split::Train).cloned().collect();
    let valid: Vec<_> = all.iter().filter(|p| p.split == Split::Valid).cloned().collect();
    assert_eq!(all.len(), 32);
    assert_eq!((train.len(), valid.len()), (24, 4));

    let model = ModelConfig::miniature();
    let graph = electrode_graph(&model, train[0].eeg.positions.as_ref().map(|p| p.view())).unwrap();
    let cfg = TrainConfig { model, epochs: 2, batch_size: 4, peak_lr: 1e-2, ..Default::default() };
    let steps = cfg.epochs * steps_per_epoch(train.len(), cfg.batch_size);
    let mut t = Trainer::new(cfg, &graph, steps).unwrap();
    let run = dir.path().join("run");
    let mut log = Vec::new();
    let summary = fit(&mut t, &train, &valid, &mut log, Some(&run)).unwrap();
    assert_eq!(summary.steps, steps);
    assert!(summary.best_epoch.is_some());
    assert!(run.join("best").is_dir() && run.join("last").is_dir());

    let lines = log_lines(&log);
    assert_eq!(lines[0]["kind"], "run");
    assert_eq!(lines.iter().filter(|l| l.get("grad_norm").is_some()).count(), steps);

    let report = evaluate_corpus(&manifest, &run.join("best"), 2).unwrap();
    assert_eq!(report.summary.segments, 4);
    assert!(report.summary.si_sdri_db.unwrap().is_finite());
    let mut jsonl = Vec::new();
    report.write_jsonl(&mut jsonl).unwrap();
    assert!(std::str::from_utf8(&jsonl).unwrap().lines().count() >= 4 * 2 * 2);
    let svg = dir.path().join("box.svg");
    write_boxplot(&report, &svg).unwrap();
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));

    let best = load_checkpoint(&run.join("best")).unwrap();
    let seg = all.iter().find(|p| p.split == Split::Test).unwrap();
    let est = extract(&best.model, &best.store, &seg.mixture, &seg.eeg).unwrap();
    assert_eq!(est.samples.len(), seg.mixture.samples.len());
    assert!(est.samples.iter().all(|v| v.is_finite()));
}

#[test]
fn zero_lambda_runs_are_tagged() {
    let (mut t, segs) = trainer(0.0, 1, 2);
    let mut log = Vec::new();
    let summary = fit(&mut t, &segs, &[], &mut log, None).unwrap();
    assert_eq!(summary.variant, NO_ALIGNMENT_TAG);
    let lines = log_lines(&log);
    assert_eq!(lines[0]["variant"], NO_ALIGNMENT_TAG);
    for l in lines.iter().filter(|l| l.get("step").is_some()) {
        assert_eq!(l["tag"], NO_ALIGNMENT_TAG);
        assert_eq!(l["total"], l["si_sdr_term"]);
    }
}

#[test]
fn identical_seeds_give_identical_traces() {
    let run = |seed| {
        let (mut t, segs) = trainer(3.0, seed, 10);
        let refs: Vec<_> = segs.iter().take(4).collect();
        let batch = Batch::from_segments(&refs, &t.config.model).unwrap();
        (0..10).map(|_| t.train_step(&batch).unwrap()).collect::<Vec<StepRecord>>()
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert_ne!(a[0].loss.total, run(6)[0].loss.total);
}

#[test]
fn non_finite_input_is_reported() {
    let (mut t, segs) = trainer(3.0, 0, 4);
    let refs: Vec<_> = segs.iter().take(2).collect();
    let mut batch = Batch::from_segments(&refs, &t.config.model).unwrap();
    batch.mixture[[0, 0, 3]] = f64::NAN;
    let before = t.store.clone();
    match t.train_step(&batch) {
        Err(Error::NonFinite { .. }) => {}
        other => panic!("expected NonFinite, got {other:?}"),
    }
    assert!(t.store == before, "parameters must not move on a failed step");
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_eegtse")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn cli_inspect_reports_full_scale_shapes() {
    let out = cli(&["inspect", "--preset", "full-scale"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("T_s = 1632"), "{text}");
    for line in ["X~       (B,128,1632,4)", "E'       (B,64,32)", "M        (B,128,1632)", "s^       (B,1,29400)"] {
        assert!(text.contains(line), "missing {line} in\n{text}");
    }
}

#[test]
fn cli_rejects_unknown_flags() {
    let out = cli(&["train", "--no-such-flag"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--no-such-flag"));
    let out = cli(&["inspect", "--preset", "enormous"]);
    assert!(!out.status.success());
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let ok = |args: &[&str]| {
        let out = cli(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(&["synth", "--out", &d("corpus"), "--preset", "miniature", "--trials", "2", "--trial-seconds", "4"]);
    let manifest = d("corpus/manifest.jsonl");
    ok(&[
        "train", "--manifest", &manifest, "--preset", "miniature", "--epochs", "1", "--batch-size", "4", "--lr", "1e-2",
        "--out", &d("run"),
    ]);
    assert!(dir.path().join("run/train_log.jsonl").exists());
    ok(&["evaluate", "--manifest", &manifest, "--checkpoint", &d("run/best"), "--report", &d("r.jsonl"), "--figure", &d("f.svg")]);
    assert!(dir.path().join("f.svg").exists());
    ok(&[
        "extract", "--checkpoint", &d("run/best"), "--mixture", &d("corpus/audio/trial0_seg0_mixture.wav"), "--eeg",
        &d("corpus/eeg/trial0_seg0.f32"), "--out", &d("est.wav"),
    ]);
    assert_eq!(read_wav(&dir.path().join("est.wav")).unwrap().samples.len(), 400);
    let table = ok(&[
        "ablate", "--manifest", &manifest, "--axis", "gm-layers", "--values", "1..5", "--preset", "miniature", "--epochs",
        "1", "--batch-size", "4", "--out", &d("ablate.jsonl"),
    ]);
    assert_eq!(table.lines().count(), 6, "{table}");
    let rows: Vec<serde_json::Value> = log_lines(&std::fs::read(dir.path().join("ablate.jsonl")).unwrap());
    let mem: Vec<u64> = rows.iter().map(|r| r["activation_bytes"].as_u64().unwrap()).collect();
    assert_eq!(mem.len(), 5);
    assert!(mem.windows(2).all(|w| w[1] > w[0]), "{mem:?}");
}
