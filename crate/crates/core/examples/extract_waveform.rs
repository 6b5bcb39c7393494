//! Loads a checkpoint and extracts the attended speaker from one mixture.
//!
//! cargo run --release --example extract_waveform -- run/best corpus/audio/trial0_seg0_mixture.wav corpus/eeg/trial0_seg0.f32 out.wav

use std::path::Path;

use eegtse::datasets::{read_eeg, read_wav, write_wav};
use eegtse::evaluation::extract;
use eegtse::training::load_checkpoint;

fn main() -> eegtse::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [ckpt, mixture, eeg, out] = args.as_slice() else {
        eprintln!("usage: extract_waveform <checkpoint> <mixture.wav> <eeg.f32> <out.wav>");
        std::process::exit(2);
    };
    let trainer = load_checkpoint(Path::new(ckpt))?;
    let mix = read_wav(Path::new(mixture))?;
    let rec = read_eeg(Path::new(eeg), &Path::new(eeg).with_extension("json"))?;
    let est = extract(&trainer.model, &trainer.store, &mix, &rec)?;
    write_wav(Path::new(out), &est)?;
    println!("{:.2} s extracted -> {out}", est.duration_s());
    Ok(())
}
