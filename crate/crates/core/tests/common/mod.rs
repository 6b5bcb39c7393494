#![allow(dead_code)]

use std::io::Write;

use eegtse::datasets::{synth_trial, segment_trial, SegmentPair, Split, SynthConfig};

/// Prints one status line that bypasses the test harness's output capture.
pub fn status(criterion: usize, ok: bool, detail: &str) {
    let line = format!("{} criterion {criterion}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).ok();
    out.flush().ok();
}

/// xorshift64* stream shared with the script that produced the golden files.
pub struct XorShift(u64);

impl XorShift {
    pub fn new(seed: u64) -> Self {
        Self(if seed == 0 { 1 } else { seed })
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 11
    }

    pub fn uniform(&mut self) -> f64 {
        self.next_u64() as f64 * 2f64.powi(-53)
    }
}

/// Amplitude-modulated three-partial reference plus a noisy copy, at 10 kHz.
pub fn golden_pair(i: usize) -> (Vec<f64>, Vec<f64>) {
    use std::f64::consts::PI;
    let fs = 10_000.0;
    let mut r = XorShift::new(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
    let n = 12_000 + 1_000 * i;
    let parts: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (200.0 + 1800.0 * r.uniform(), 0.2 + r.uniform(), 2.0 * PI * r.uniform()))
        .collect();
    let fm = 2.0 + 3.0 * r.uniform();
    let pm = 2.0 * PI * r.uniform();
    let g = 0.01 + 0.4 * r.uniform();
    let mut s = vec![0.0; n];
    for (k, v) in s.iter_mut().enumerate() {
        let t = k as f64 / fs;
        let env = (2.0 * PI * fm * t + pm).sin().max(0.0);
        let tone: f64 = parts.iter().map(|&(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
        *v = env * tone + 0.01 * (2.0 * r.uniform() - 1.0);
    }
    let e = s.iter().map(|v| v + g * (2.0 * r.uniform() - 1.0)).collect();
    (s, e)
}

/// Segments of one synthetic trial at the given rates.
pub fn segments(n_electrodes: usize, audio_rate_hz: u32, seg_seconds: f64, count: usize, seed: u64) -> Vec<SegmentPair> {
    let cfg = SynthConfig {
        n_electrodes,
        audio_rate_hz,
        trial_seconds: seg_seconds * count as f64,
        seed,
        ..Default::default()
    };
    segment_trial(&synth_trial(&cfg).unwrap(), seg_seconds, Split::Train).unwrap()
}
