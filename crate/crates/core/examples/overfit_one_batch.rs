//! Fits a single batch until the extracted signal beats the mixture; a quick
//! end-to-end check that gradients reach every part of the model.

use eegtse::config::ModelConfig;
use eegtse::datasets::{segment_trial, synth_trial, Split, SynthConfig};
use eegtse::metrics::si_sdr;
use eegtse::training::{electrode_graph, infer, Batch, TrainConfig, Trainer};

fn main() -> eegtse::Result<()> {
    let model = ModelConfig::miniature();
    let trial = synth_trial(&SynthConfig {
        n_electrodes: model.n_electrodes,
        audio_rate_hz: model.audio_rate_hz,
        eeg_rate_hz: model.eeg_rate_hz,
        trial_seconds: 1.0,
        eeg_snr_db: f64::INFINITY,
        ..Default::default()
    })?;
    let segs = segment_trial(&trial, model.segment_seconds, Split::Train)?;
    let refs: Vec<_> = segs.iter().collect();
    let batch = Batch::from_segments(&refs, &model)?;
    let graph = electrode_graph(&model, segs[0].eeg.positions.as_ref().map(|p| p.view()))?;
    let cfg = TrainConfig { model, batch_size: segs.len(), peak_lr: 1e-2, ..Default::default() };
    let mut trainer = Trainer::new(cfg, &graph, 200)?;
    for step in 0..200 {
        let rec = trainer.train_step(&batch)?;
        if step % 25 == 0 {
            println!("step {step:>3}  loss {:>8.3}  SI-SDR term {:>8.3}", rec.loss.total, rec.loss.si_sdr_term);
        }
    }
    let est = infer(&trainer.model, &trainer.store, &batch)?;
    for (i, p) in segs.iter().enumerate() {
        let gain = si_sdr(&p.target.samples, &est.row(i).to_vec())? - si_sdr(&p.target.samples, &p.mixture.samples)?;
        println!("{}: SI-SDRi {gain:.2} dB", p.id());
    }
    Ok(())
}
