//! Objective quality metrics on plain sample slices: SI-SDR, SDR, STOI and
//! extended STOI.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Guard added to energy denominators.
pub const EPS: f64 = 1e-8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::Invalid(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::TooShort("empty signal".into()));
    }
    Ok(())
}

/// Scale-invariant SDR in dB:
/// `10·log₁₀(‖αs‖² / (‖ŝ − αs‖² + ε))` with `α = ⟨ŝ, s⟩/‖s‖²`.
///
/// The numerator is floored at `ε`, so a perfect estimate reports
/// `10·log₁₀(‖αs‖²/ε)` rather than infinity.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let energy = dot(reference, reference);
    if energy <= 0.0 {
        return Err(Error::SilentReference { segment: String::new() });
    }
    let alpha = dot(estimate, reference) / energy;
    let target = alpha * alpha * energy;
    let resid: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(s, e)| (e - alpha * s).powi(2))
        .sum();
    Ok(10.0 * (target.max(EPS) / (resid + EPS)).log10())
}

/// Plain energy-ratio SDR `10·log₁₀(‖s‖² / (‖s − ŝ‖² + ε))`.
pub fn sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let energy = dot(reference, reference);
    if energy <= 0.0 {
        return Err(Error::SilentReference { segment: String::new() });
    }
    let err: f64 = reference.iter().zip(estimate).map(|(s, e)| (s - e).powi(2)).sum();
    Ok(10.0 * (energy / (err + EPS)).log10())
}

/// Sample rate the intelligibility measures operate at.
pub const STOI_RATE_HZ: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const TINY: f64 = f64::EPSILON;

/// Symmetric Hann window without the zero end points.
fn hann() -> Vec<f64> {
    let n = FRAME + 2;
    (1..=FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Inclusive-exclusive FFT bin ranges of the one-third-octave bands.
fn band_edges() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * STOI_RATE_HZ as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        let mut best = 0;
        for (i, f) in freqs.iter().enumerate() {
            if (f - target).powi(2) < (freqs[best] - target).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames of both signals where the reference is more than 40 dB below
/// its loudest frame, and re-synthesizes by overlap-add of windowed frames.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = hann();
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + TINY).log10()
        })
        .collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if starts.is_empty() || !(max > 20.0 * TINY.log10()) {
        return Err(Error::SilentReference { segment: String::new() });
    }
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    let out_len = (kept.len() - 1) * HOP + FRAME;
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (j, &s) in kept.iter().enumerate() {
        for i in 0..FRAME {
            xs[j * HOP + i] += w[i] * x[s + i];
            ys[j * HOP + i] += w[i] * y[s + i];
        }
    }
    Ok((xs, ys))
}

/// Band envelopes `(frames, bands)` of one signal.
fn third_octave_envelopes(x: &[f64], fft: &Arc<dyn Fft<f64>>, edges: &[(usize, usize)]) -> Vec<[f64; BANDS]> {
    let w = hann();
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    frame_starts(x.len())
        .map(|s| {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(if i < FRAME { w[i] * x[s + i] } else { 0.0 }, 0.0);
            }
            fft.process(&mut buf);
            let mut env = [0.0; BANDS];
            for (band, &(lo, hi)) in edges.iter().enumerate() {
                env[band] = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            }
            env
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Short-time objective intelligibility of `estimate` against `reference`,
/// both sampled at `rate_hz`; `extended` selects the extended variant
/// (row/column-normalized spectrogram correlation).
///
/// Signals at other rates are resampled to 10 kHz first.
pub fn stoi(reference: &[f64], estimate: &[f64], rate_hz: u32, extended: bool) -> Result<f64> {
    check_pair(reference, estimate)?;
    let (x, y) = if rate_hz == STOI_RATE_HZ {
        (reference.to_vec(), estimate.to_vec())
    } else {
        (
            crate::datasets::resample_samples(reference, rate_hz, STOI_RATE_HZ)?,
            crate::datasets::resample_samples(estimate, rate_hz, STOI_RATE_HZ)?,
        )
    };
    let (x, y) = remove_silent_frames(&x, &y)?;
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let edges = band_edges();
    let xe = third_octave_envelopes(&x, &fft, &edges);
    let ye = third_octave_envelopes(&y, &fft, &edges);
    if xe.len() < SEGMENT {
        return Err(Error::TooShort(format!(
            "{} analysis frames after silence removal, need {SEGMENT}",
            xe.len()
        )));
    }
    let n_seg = xe.len() - SEGMENT + 1;
    // seg[band][t] for the frames m−N..m.
    let segment = |env: &[[f64; BANDS]], m: usize| -> Vec<Vec<f64>> {
        (0..BANDS).map(|b| (m..m + SEGMENT).map(|t| env[t][b]).collect()).collect()
    };
    let mut total = 0.0;
    for m in 0..n_seg {
        let xs = segment(&xe, m);
        let ys = segment(&ye, m);
        if extended {
            let xn = row_col_normalize(xs);
            let yn = row_col_normalize(ys);
            let s: f64 = xn.iter().zip(&yn).map(|(a, b)| dot(a, b)).sum();
            total += s / SEGMENT as f64;
        } else {
            let clip = 10f64.powf(-BETA_DB / 20.0);
            for (xb, yb) in xs.iter().zip(&ys) {
                let scale = norm(xb) / (norm(yb) + TINY);
                let mut yp: Vec<f64> = yb.iter().zip(xb).map(|(v, xv)| (v * scale).min(xv * (1.0 + clip))).collect();
                let mut xc = xb.clone();
                let (my, mx) = (mean(&yp), mean(&xc));
                yp.iter_mut().for_each(|v| *v -= my);
                xc.iter_mut().for_each(|v| *v -= mx);
                let (ny, nx) = (norm(&yp) + TINY, norm(&xc) + TINY);
                total += dot(&yp, &xc) / (ny * nx);
            }
        }
    }
    Ok(if extended {
        total / n_seg as f64
    } else {
        total / (n_seg * BANDS) as f64
    })
}

/// Zero-mean, unit-norm rows (per band over time), then the same per time
/// column over bands.
fn row_col_normalize(mut m: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    for row in m.iter_mut() {
        let mu = mean(row);
        row.iter_mut().for_each(|v| *v -= mu);
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    let cols = m[0].len();
    for t in 0..cols {
        let mu = m.iter().map(|r| r[t]).sum::<f64>() / m.len() as f64;
        m.iter_mut().for_each(|r| r[t] -= mu);
        let n = m.iter().map(|r| r[t] * r[t]).sum::<f64>().sqrt();
        if n > 0.0 {
            m.iter_mut().for_each(|r| r[t] /= n);
        }
    }
    m
}

/// Median of a nonempty set (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn si_sdr_orthogonal_ten_db() {
        let s = vec![1.0, 0.0, 1.0, 0.0];
        let n = vec![0.0, (0.2f64).sqrt(), 0.0, 0.0];
        let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!((si_sdr(&s, &est).unwrap() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn sdr_simple_cases() {
        let s = noise(1, 100);
        let twice: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert!(sdr(&s, &twice).unwrap().abs() < 1e-6);
        assert!(sdr(&s, &vec![0.0; 100]).unwrap().abs() < 1e-6);
        let cap = 10.0 * (dot(&s, &s) / EPS).log10();
        assert!((sdr(&s, &s).unwrap() - cap).abs() < 1e-9);
        assert!(matches!(sdr(&[0.0; 4], &[1.0; 4]), Err(Error::SilentReference { .. })));
    }

    #[test]
    fn band_edges_match_reference_table() {
        let e = band_edges();
        assert_eq!(e[0], (7, 9));
        assert_eq!(e[14], (174, 219));
    }

    #[test]
    fn stoi_identity_and_gain() {
        let s = noise(2, 20_000);
        for ext in [false, true] {
            assert!((stoi(&s, &s, STOI_RATE_HZ, ext).unwrap() - 1.0).abs() < 1e-3);
        }
        let louder: Vec<f64> = s.iter().map(|v| 3.0 * v).collect();
        let a = stoi(&s, &louder, STOI_RATE_HZ, false).unwrap();
        assert!((a - 1.0).abs() < 1e-3);
        assert!(stoi(&s[..3000], &s[..3000], STOI_RATE_HZ, false).is_err());
    }
}
