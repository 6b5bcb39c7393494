//! Trains the miniature model on a synthetic corpus, saves checkpoints and
//! scores the test split.
//!
//! cargo run --release --example train_and_evaluate -- /tmp/run

use std::path::PathBuf;

use eegtse::config::ModelConfig;
use eegtse::datasets::{synth_corpus, CorpusConfig, Split, SynthConfig};
use eegtse::evaluation::{evaluate_segments, write_boxplot};
use eegtse::training::{electrode_graph, fit, steps_per_epoch, TrainConfig, Trainer};

fn main() -> eegtse::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "run".into()));
    let model = ModelConfig::miniature();
    let corpus = synth_corpus(&CorpusConfig {
        synth: SynthConfig {
            n_electrodes: model.n_electrodes,
            audio_rate_hz: model.audio_rate_hz,
            eeg_rate_hz: model.eeg_rate_hz,
            trial_seconds: 10.0,
            ..Default::default()
        },
        trials: 2,
        segment_seconds: model.segment_seconds,
        train_fraction: 0.8,
        valid_fraction: 0.1,
    })?;
    let pick = |s: Split| corpus.iter().filter(|p| p.split == s).cloned().collect::<Vec<_>>();
    let (train, valid, test) = (pick(Split::Train), pick(Split::Valid), pick(Split::Test));

    let cfg = TrainConfig { model: model.clone(), epochs: 8, batch_size: 8, peak_lr: 1e-2, ..Default::default() };
    let graph = electrode_graph(&model, train[0].eeg.positions.as_ref().map(|p| p.view()))?;
    let steps = cfg.epochs * steps_per_epoch(train.len(), cfg.batch_size);
    let mut trainer = Trainer::new(cfg, &graph, steps)?;
    std::fs::create_dir_all(&out)?;
    let mut log = std::fs::File::create(out.join("train_log.jsonl"))?;
    let summary = fit(&mut trainer, &train, &valid, &mut log, Some(&out))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);

    let report = evaluate_segments(&trainer.model, &trainer.store, &test, 0)?;
    print!("{}", report.summary_table());
    write_boxplot(&report, &out.join("metrics.svg"))?;
    Ok(())
}
