//! Prints every intermediate tensor shape of one forward pass.
//!
//! cargo run --release --example inspect_shapes -- full-scale

use eegtse::config::ModelConfig;
use eegtse::extractor::dry_run_shapes;

fn main() -> eegtse::Result<()> {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "desk".into());
    let cfg = ModelConfig::preset(&preset)?;
    println!("{preset}: T = {}, T_s = {}, T_e = {}", cfg.audio_len(), cfg.speech_frames(), cfg.eeg_len());
    for (name, shape) in dry_run_shapes(&cfg, 1)? {
        println!("  {name:<8} {shape:?}");
    }
    Ok(())
}
