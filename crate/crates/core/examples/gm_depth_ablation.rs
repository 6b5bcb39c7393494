//! Sweeps the number of stacked speech-encoder blocks and reports parameter
//! count, activation memory and test SI-SDRi for each depth.

use eegtse::ablation::{run_ablation, AblationGrid, Variant};
use eegtse::config::ModelConfig;
use eegtse::datasets::{synth_corpus, CorpusConfig, Split, SynthConfig};
use eegtse::training::TrainConfig;

fn main() -> eegtse::Result<()> {
    let model = ModelConfig::miniature();
    let corpus = synth_corpus(&CorpusConfig {
        synth: SynthConfig {
            n_electrodes: model.n_electrodes,
            audio_rate_hz: model.audio_rate_hz,
            eeg_rate_hz: model.eeg_rate_hz,
            trial_seconds: 8.0,
            ..Default::default()
        },
        trials: 1,
        segment_seconds: model.segment_seconds,
        train_fraction: 0.75,
        valid_fraction: 0.0,
    })?;
    let (train, test): (Vec<_>, Vec<_>) = corpus.into_iter().partition(|p| p.split == Split::Train);
    let base = TrainConfig { model, epochs: 3, batch_size: 4, peak_lr: 1e-2, ..Default::default() };

    let mut grid = AblationGrid::depths((1..=5).collect());
    grid.variants.push(Variant::NoAlignment);
    let rows = run_ablation(&base, &grid, &train, &test, &mut std::io::sink())?;
    println!("{:<14} {:>2} {:>8} {:>12} {:>8}", "variant", "N", "params", "act. bytes", "SI-SDRi");
    for r in rows {
        let sii = r.test_si_sdri_db.map_or("-".into(), |v| format!("{v:.2}"));
        println!("{:<14} {:>2} {:>8} {:>12} {:>8}", r.variant.label(), r.gm_layers, r.parameters, r.activation_bytes, sii);
    }
    Ok(())
}
