//! Recovers the neural latency of a synthetic recording by cross-correlating
//! each electrode with the attended speech envelope.

use eegtse::datasets::{eeg_source_envelope, lagged_correlation, peak_lag, resample, synth_trial, SynthConfig};

fn main() -> eegtse::Result<()> {
    let cfg = SynthConfig { audio_rate_hz: 8_000, trial_seconds: 20.0, eeg_snr_db: 10.0, ..Default::default() };
    let trial = synth_trial(&cfg)?;
    let env = eeg_source_envelope(&trial.target, cfg.eeg_rate_hz, cfg.envelope_cutoff_hz)?;
    let max_lag = 48;
    println!("configured latency: {} samples at {} Hz", cfg.latency_samples(), cfg.eeg_rate_hz);
    for (i, id) in trial.eeg.electrode_ids.iter().enumerate().take(6) {
        let row = trial.eeg.data.row(i).to_vec();
        let lag = peak_lag(&row, &env, max_lag);
        let r = lagged_correlation(&row, &env, max_lag)[lag];
        println!("{id:>6}: peak lag {lag:>3}  r = {r:.3}");
    }

    // Same waveform at the rate of the full-scale model.
    let up = resample(&trial.target, 14_700)?;
    println!("target resampled {} -> {} samples", trial.target.len(), up.len());
    Ok(())
}
