//! SI-SDR, SDR, STOI and ESTOI of a tone complex under increasing noise.

use eegtse::metrics::{sdr, si_sdr, stoi, STOI_RATE_HZ};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() -> eegtse::Result<()> {
    let fs = STOI_RATE_HZ as f64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 1.0).unwrap();
    // Broadband carrier under a syllable-rate envelope.
    let clean: Vec<f64> = (0..30_000)
        .map(|k| {
            let t = k as f64 / fs;
            let env = 0.1 + (2.0 * std::f64::consts::PI * 4.0 * t).sin().max(0.0);
            env * noise.sample(&mut rng)
        })
        .collect();
    println!("{:>8} {:>8} {:>8} {:>7} {:>7}", "noise", "SI-SDR", "SDR", "STOI", "ESTOI");
    for g in [0.01, 0.1, 0.3, 1.0] {
        let noisy: Vec<f64> = clean.iter().map(|v| v + g * noise.sample(&mut rng)).collect();
        println!(
            "{g:>8} {:>8.2} {:>8.2} {:>7.3} {:>7.3}",
            si_sdr(&clean, &noisy)?,
            sdr(&clean, &noisy)?,
            stoi(&clean, &noisy, STOI_RATE_HZ, false)?,
            stoi(&clean, &noisy, STOI_RATE_HZ, true)?
        );
    }
    Ok(())
}
