//! Writes a small two-speaker corpus with pseudo-EEG to a directory.
//!
//! cargo run --release --example synth_corpus -- /tmp/corpus

use eegtse::datasets::{synth_corpus, write_manifest, CorpusConfig, Split, SynthConfig};

fn main() -> eegtse::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "corpus".into());
    let cfg = CorpusConfig {
        synth: SynthConfig { audio_rate_hz: 8_000, trial_seconds: 20.0, ..Default::default() },
        trials: 3,
        segment_seconds: 1.0,
        train_fraction: 0.8,
        valid_fraction: 0.1,
    };
    let pairs = synth_corpus(&cfg)?;
    for split in [Split::Train, Split::Valid, Split::Test] {
        println!("{:<6} {}", split.as_str(), pairs.iter().filter(|p| p.split == split).count());
    }
    let manifest = write_manifest(&pairs, std::path::Path::new(&out))?;
    println!("manifest: {}", manifest.display());
    Ok(())
}
