//! Synthetic cocktail-party trials, resampling, segmentation and on-disk
//! manifests.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioWave {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioWave {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Invalid("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Invalid("waveform is empty".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "waveform".into(), step: None });
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Multichannel neural recording, `(electrodes, samples)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecord {
    pub data: Array2<f64>,
    pub sample_rate_hz: u32,
    pub electrode_ids: Vec<String>,
    /// Optional `(electrodes, 3)` montage coordinates.
    pub positions: Option<Array2<f64>>,
}

impl EegRecord {
    pub fn new(
        data: Array2<f64>,
        sample_rate_hz: u32,
        electrode_ids: Vec<String>,
        positions: Option<Array2<f64>>,
    ) -> Result<Self> {
        let n = data.nrows();
        if n < 2 {
            return Err(Error::Invalid(format!("EEG needs at least two electrodes, got {n}")));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Invalid("EEG sample rate must be positive".into()));
        }
        if electrode_ids.len() != n {
            return Err(Error::Invalid(format!("{} electrode ids for {n} channels", electrode_ids.len())));
        }
        if let Some(p) = &positions {
            if p.dim() != (n, 3) {
                return Err(Error::Invalid(format!("positions must be ({n}, 3), got {:?}", p.dim())));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "EEG data".into(), step: None });
        }
        Ok(Self { data, sample_rate_hz, electrode_ids, positions })
    }

    pub fn n_electrodes(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }
}

/// Parameters of one synthetic trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_electrodes: usize,
    pub neural_latency_ms: f64,
    /// Signal-to-noise ratio of the pseudo-EEG; `+∞` disables the noise.
    pub eeg_snr_db: f64,
    pub envelope_cutoff_hz: f64,
    /// Target-to-interferer energy ratio of the mixture.
    pub mix_snr_db: f64,
    pub trial_seconds: f64,
    pub seed: u64,
    pub audio_rate_hz: u32,
    pub eeg_rate_hz: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_electrodes: 16,
            neural_latency_ms: 187.5,
            eeg_snr_db: 0.0,
            envelope_cutoff_hz: 8.0,
            mix_snr_db: 0.0,
            trial_seconds: 60.0,
            seed: 0,
            audio_rate_hz: 14_700,
            eeg_rate_hz: 128,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_electrodes < 2 {
            return bad(format!("at least two electrodes required, got {}", self.n_electrodes));
        }
        if !(self.trial_seconds > 0.0) {
            return bad("trial_seconds must be positive".into());
        }
        if !(self.neural_latency_ms >= 0.0) || self.neural_latency_ms >= self.trial_seconds * 1000.0 {
            return bad(format!(
                "neural latency {} ms must be nonnegative and shorter than the trial",
                self.neural_latency_ms
            ));
        }
        if self.audio_rate_hz == 0 || self.eeg_rate_hz == 0 {
            return bad("sample rates must be positive".into());
        }
        if !(self.envelope_cutoff_hz > 0.0) || self.envelope_cutoff_hz >= self.eeg_rate_hz as f64 / 2.0 {
            return bad(format!(
                "envelope cutoff {} Hz must lie in (0, {}) Hz",
                self.envelope_cutoff_hz,
                self.eeg_rate_hz as f64 / 2.0
            ));
        }
        if self.eeg_snr_db.is_nan() || !self.mix_snr_db.is_finite() {
            return bad("SNR values must be numbers".into());
        }
        Ok(())
    }

    /// Latency in EEG samples.
    pub fn latency_samples(&self) -> usize {
        (self.neural_latency_ms * self.eeg_rate_hz as f64 / 1000.0).round() as usize
    }
}

/// One generated or loaded recording before segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub trial_id: String,
    pub mixture: AudioWave,
    pub target: AudioWave,
    pub interferer: AudioWave,
    pub eeg: EegRecord,
}

fn fft_real(x: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn ifft_real(mut spec: Vec<Complex<f64>>) -> Vec<f64> {
    let n = spec.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c.re / n as f64).collect()
}

/// Zeroes every frequency outside `[lo, hi]` Hz (brick-wall FFT filter).
pub fn band_limit(x: &[f64], rate_hz: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = x.len();
    let mut spec = fft_real(x);
    for (k, c) in spec.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * rate_hz / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    ifft_real(spec)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Band-limited noise carrier shaped by a 2–8 Hz syllabic envelope, scaled
/// to unit RMS.
fn speech_like_source(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let nyq = rate / 2.0;
    let lo = rng.gen_range(100.0..(0.2 * nyq).max(101.0));
    let hi = (lo * rng.gen_range(1.5..3.0)).min(0.9 * nyq);
    let carrier = band_limit(&white, rate, lo, hi);
    let slow: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let modulation = band_limit(&slow, rate, 2.0, 8.0);
    let m_rms = rms(&modulation).max(1e-12);
    let c_rms = rms(&carrier).max(1e-12);
    let src: Vec<f64> = carrier
        .iter()
        .zip(&modulation)
        .map(|(c, m)| {
            // Smooth rectification gives a deep, positive envelope.
            let z = 2.0 * m / m_rms;
            let env = if z > 30.0 { z } else { z.exp().ln_1p() };
            c / c_rms * env
        })
        .collect();
    let r = rms(&src).max(1e-12);
    src.into_iter().map(|v| v / r).collect()
}

/// Points spread over the upper unit hemisphere (golden-angle spiral).
pub fn hemisphere_positions(n: usize) -> Array2<f64> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    Array2::from_shape_fn((n, 3), |(i, k)| {
        let z = 1.0 - (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let th = golden * i as f64;
        match k {
            0 => r * th.cos(),
            1 => r * th.sin(),
            _ => z,
        }
    })
}

/// Low-passed amplitude envelope of `target` at the EEG rate: `|s|`,
/// resampled, then brick-wall low-passed at `cutoff_hz`.
pub fn eeg_source_envelope(target: &AudioWave, eeg_rate_hz: u32, cutoff_hz: f64) -> Result<Vec<f64>> {
    let magnitude: Vec<f64> = target.samples.iter().map(|v| v.abs()).collect();
    let slow = resample_samples(&magnitude, target.sample_rate_hz, eeg_rate_hz)?;
    Ok(band_limit(&slow, eeg_rate_hz as f64, 0.0, cutoff_hz))
}

/// Generates a two-talker trial whose pseudo-EEG follows the target's
/// envelope after `neural_latency_ms`.
///
/// EEG values are rounded to `f32` precision so that they survive the binary
/// on-disk format unchanged.
pub fn synth_trial(config: &SynthConfig) -> Result<Trial> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rate = config.audio_rate_hz as f64;
    let n = (config.trial_seconds * rate).round() as usize;
    let target = speech_like_source(&mut rng, n, rate);
    let interferer_raw = speech_like_source(&mut rng, n, rate);
    let gain = 10f64.powf(-config.mix_snr_db / 20.0);
    let interferer: Vec<f64> = interferer_raw.iter().map(|v| v * gain).collect();
    let mixture: Vec<f64> = target.iter().zip(&interferer).map(|(a, b)| a + b).collect();
    let norm = 0.9 / peak(&mixture).max(peak(&target)).max(peak(&interferer)).max(1e-12);
    let scaled = |v: &[f64]| v.iter().map(|x| x * norm).collect::<Vec<f64>>();
    let target = AudioWave::new(scaled(&target), config.audio_rate_hz)?;
    let interferer = AudioWave::new(scaled(&interferer), config.audio_rate_hz)?;
    let mixture = AudioWave::new(scaled(&mixture), config.audio_rate_hz)?;

    let envelope = eeg_source_envelope(&target, config.eeg_rate_hz, config.envelope_cutoff_hz)?;
    let n_eeg = envelope.len();
    let delay = config.latency_samples().min(n_eeg);
    let mut delayed = vec![0.0; n_eeg];
    delayed[delay..].copy_from_slice(&envelope[..n_eeg - delay]);

    let positions = hemisphere_positions(config.n_electrodes);
    let src = positions.row(rng.gen_range(0..config.n_electrodes)).to_owned();
    let mut weights: Vec<f64> = positions
        .rows()
        .into_iter()
        .map(|p| {
            let d2: f64 = p.iter().zip(src.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            (-d2 / (2.0 * 0.5 * 0.5)).exp()
        })
        .collect();
    let wmax = weights.iter().copied().fold(0.0f64, f64::max);
    weights.iter_mut().for_each(|w| *w /= wmax);

    let mut data = Array2::zeros((config.n_electrodes, n_eeg));
    for (c, &w) in weights.iter().enumerate() {
        let clean: Vec<f64> = delayed.iter().map(|v| w * v).collect();
        let noise_std = if config.eeg_snr_db.is_finite() {
            rms(&clean) * 10f64.powf(-config.eeg_snr_db / 20.0)
        } else {
            0.0
        };
        let normal = Normal::new(0.0, noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        for (t, v) in clean.iter().enumerate() {
            let noisy = if noise_std > 0.0 { v + normal.sample(&mut rng) } else { *v };
            data[[c, t]] = noisy as f32 as f64;
        }
    }
    let ids = (1..=config.n_electrodes).map(|i| format!("E{i}")).collect();
    let eeg = EegRecord::new(data, config.eeg_rate_hz, ids, Some(positions))?;
    Ok(Trial { trial_id: format!("trial{}", config.seed), mixture, target, interferer, eeg })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

const ZERO_CROSSINGS: f64 = 24.0;
const KAISER_BETA: f64 = 8.6;
const ROLLOFF: f64 = 0.95;

/// Windowed-sinc resampler from `from_hz` to `to_hz`. Output sample `m` sits
/// at input position `m·from/to`; the output has
/// `round(len·to/from)` samples. Equal rates return an exact copy.
pub fn resample_samples(x: &[f64], from_hz: u32, to_hz: u32) -> Result<Vec<f64>> {
    if from_hz == 0 || to_hz == 0 {
        return Err(Error::Invalid("resampling rates must be positive".into()));
    }
    if from_hz == to_hz {
        return Ok(x.to_vec());
    }
    let g = gcd(from_hz as u64, to_hz as u64);
    let (up, down) = (to_hz as u64 / g, from_hz as u64 / g);
    let out_len = (x.len() as f64 * to_hz as f64 / from_hz as f64).round() as usize;
    // Cutoff in cycles per input sample.
    let fc = 0.5 * ROLLOFF * (up as f64 / down as f64).min(1.0);
    let half = (ZERO_CROSSINGS / (2.0 * fc)).ceil() as i64;
    let i0_beta = bessel_i0(KAISER_BETA);
    let taps_for = |frac: f64| -> Vec<f64> {
        let mut taps: Vec<f64> = (-half..=half)
            .map(|k| {
                let tau = k as f64 - frac;
                let r = tau / (half as f64 + 1.0);
                if r.abs() >= 1.0 {
                    return 0.0;
                }
                let arg = 2.0 * fc * tau;
                let sinc = if arg == 0.0 { 1.0 } else { (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg) };
                let win = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                sinc * win
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        taps
    };
    let cached: Option<Vec<Vec<f64>>> = (up <= 1024).then(|| (0..up).map(|p| taps_for(p as f64 / up as f64)).collect());
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len as u64 {
        let num = m * down;
        let base = (num / up) as i64;
        let phase = num % up;
        let owned;
        let taps = match &cached {
            Some(c) => &c[phase as usize],
            None => {
                owned = taps_for(phase as f64 / up as f64);
                &owned
            }
        };
        let mut acc = 0.0;
        for (j, &h) in taps.iter().enumerate() {
            let idx = base + j as i64 - half;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += h * x[idx as usize];
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Band-limited resampling of a waveform.
pub fn resample(wave: &AudioWave, target_hz: u32) -> Result<AudioWave> {
    if target_hz == 0 {
        return Err(Error::Invalid("target rate must be positive".into()));
    }
    let samples = resample_samples(&wave.samples, wave.sample_rate_hz, target_hz)?;
    AudioWave::new(samples, target_hz)
}

/// Dataset partition tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// One fixed-length training or evaluation item.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPair {
    pub mixture: AudioWave,
    pub target: AudioWave,
    pub interferer: AudioWave,
    pub eeg: EegRecord,
    pub trial_id: String,
    pub segment_index: usize,
    pub split: Split,
}

impl SegmentPair {
    pub fn id(&self) -> String {
        format!("{}_seg{}", self.trial_id, self.segment_index)
    }
}

fn samples_per(seconds: f64, rate: u32, what: &str) -> Result<usize> {
    let exact = seconds * rate as f64;
    let n = exact.round();
    if (exact - n).abs() > 1e-6 || n < 1.0 {
        return Err(Error::Invalid(format!(
            "{seconds} s is not a whole number of {what} samples at {rate} Hz"
        )));
    }
    Ok(n as usize)
}

/// Cuts a trial into consecutive non-overlapping segments of `seg_seconds`,
/// dropping the trailing remainder. Audio and EEG are cut at the same
/// wall-clock boundaries.
pub fn segment_trial(trial: &Trial, seg_seconds: f64, split: Split) -> Result<Vec<SegmentPair>> {
    if !(seg_seconds > 0.0) {
        return Err(Error::Invalid("segment length must be positive".into()));
    }
    let a_rate = trial.mixture.sample_rate_hz;
    let e_rate = trial.eeg.sample_rate_hz;
    if trial.target.len() != trial.mixture.len() || trial.interferer.len() != trial.mixture.len() {
        return Err(Error::Invalid("mixture, target and interferer lengths differ".into()));
    }
    let a_dur = trial.mixture.duration_s();
    let e_dur = trial.eeg.n_samples() as f64 / e_rate as f64;
    if (a_dur - e_dur).abs() > 1.0 / e_rate as f64 + 1e-9 {
        return Err(Error::Invalid(format!("audio lasts {a_dur} s but EEG lasts {e_dur} s")));
    }
    let na = samples_per(seg_seconds, a_rate, "audio")?;
    let ne = samples_per(seg_seconds, e_rate, "EEG")?;
    let count = (trial.mixture.len() / na).min(trial.eeg.n_samples() / ne);
    if count == 0 {
        log::warn!(
            "segment of {seg_seconds} s is longer than trial {} ({a_dur:.3} s); no segments produced",
            trial.trial_id
        );
        return Ok(Vec::new());
    }
    let cut = |w: &AudioWave, k: usize| AudioWave {
        samples: w.samples[k * na..(k + 1) * na].to_vec(),
        sample_rate_hz: a_rate,
    };
    Ok((0..count)
        .map(|k| SegmentPair {
            mixture: cut(&trial.mixture, k),
            target: cut(&trial.target, k),
            interferer: cut(&trial.interferer, k),
            eeg: EegRecord {
                data: trial.eeg.data.slice(s![.., k * ne..(k + 1) * ne]).to_owned(),
                sample_rate_hz: e_rate,
                electrode_ids: trial.eeg.electrode_ids.clone(),
                positions: trial.eeg.positions.clone(),
            },
            trial_id: trial.trial_id.clone(),
            segment_index: k,
            split,
        })
        .collect())
}

/// Assigns splits contiguously: the first `round(n·train)` items are train,
/// the next `round(n·valid)` valid, the rest test.
pub fn assign_splits(pairs: &mut [SegmentPair], train: f64, valid: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&valid) || train + valid > 1.0 + 1e-12 {
        return Err(Error::Invalid(format!("split fractions {train} / {valid} are invalid")));
    }
    let n = pairs.len();
    let n_train = (n as f64 * train).round() as usize;
    let n_valid = ((n as f64 * valid).round() as usize).min(n - n_train);
    for (i, p) in pairs.iter_mut().enumerate() {
        p.split = if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(())
}

/// Corpus recipe: `trials` trials (seeds `base.seed + k`) cut into
/// `segment_seconds` pieces and split by fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub synth: SynthConfig,
    pub trials: usize,
    pub segment_seconds: f64,
    pub train_fraction: f64,
    pub valid_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            trials: 4,
            segment_seconds: 2.0,
            train_fraction: 0.8,
            valid_fraction: 0.1,
        }
    }
}

pub fn synth_corpus(cfg: &CorpusConfig) -> Result<Vec<SegmentPair>> {
    let mut all = Vec::new();
    for k in 0..cfg.trials {
        let trial = synth_trial(&SynthConfig { seed: cfg.synth.seed + k as u64, ..cfg.synth.clone() })?;
        all.extend(segment_trial(&trial, cfg.segment_seconds, Split::Train)?);
    }
    assign_splits(&mut all, cfg.train_fraction, cfg.valid_fraction)?;
    Ok(all)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ManifestLine {
    Header(ManifestHeader),
    Segment(SegmentRecord),
}

#[derive(Serialize, Deserialize, Clone, Copy)]
struct ManifestHeader {
    version: u32,
    audio_rate_hz: u32,
    eeg_rate_hz: u32,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    id: String,
    trial_id: String,
    segment_index: usize,
    split: Split,
    mixture: String,
    target: String,
    interferer: String,
    eeg: String,
    eeg_meta: String,
}

#[derive(Serialize, Deserialize)]
struct EegSidecar {
    n_channels: usize,
    n_samples: usize,
    rate_hz: u32,
    electrode_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positions: Option<Vec<[f64; 3]>>,
}

/// Writes mono 16-bit PCM.
pub fn write_wav(path: &Path, wave: &AudioWave) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &v in &wave.samples {
        w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Reads a mono 16-bit or float WAV file.
pub fn read_wav(path: &Path) -> Result<AudioWave> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(Error::Invalid(format!("{} has {} channels, expected mono", path.display(), spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>().map(|s| s.map(|v| v as f64 / scale)).collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()?,
    };
    AudioWave::new(samples, spec.sample_rate)
}

/// Writes EEG as little-endian `f32` plus a JSON sidecar.
pub fn write_eeg(bin: &Path, meta: &Path, eeg: &EegRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(bin)?);
    for v in eeg.data.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    let sidecar = EegSidecar {
        n_channels: eeg.n_electrodes(),
        n_samples: eeg.n_samples(),
        rate_hz: eeg.sample_rate_hz,
        electrode_ids: eeg.electrode_ids.clone(),
        positions: eeg.positions.as_ref().map(|p| p.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()),
    };
    fs::write(meta, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_eeg(bin: &Path, meta: &Path) -> Result<EegRecord> {
    for p in [bin, meta] {
        if !p.exists() {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
    }
    let sidecar: EegSidecar = serde_json::from_str(&fs::read_to_string(meta)?)?;
    let mut bytes = Vec::new();
    File::open(bin)?.read_to_end(&mut bytes)?;
    let want = sidecar.n_channels * sidecar.n_samples * 4;
    if bytes.len() != want {
        return Err(Error::Manifest {
            path: bin.to_path_buf(),
            msg: format!("{} bytes on disk, sidecar implies {want}", bytes.len()),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = Array2::from_shape_vec((sidecar.n_channels, sidecar.n_samples), values)
        .map_err(|e| Error::Manifest { path: bin.to_path_buf(), msg: e.to_string() })?;
    let positions = sidecar
        .positions
        .map(|p| Array2::from_shape_fn((p.len(), 3), |(i, k)| p[i][k]));
    EegRecord::new(data, sidecar.rate_hz, sidecar.electrode_ids, positions)
}

/// Writes every pair under `root` (WAV audio, binary EEG) and a
/// line-delimited manifest; returns the manifest path.
pub fn write_manifest(pairs: &[SegmentPair], root: &Path) -> Result<PathBuf> {
    fs::create_dir_all(root.join("audio"))?;
    fs::create_dir_all(root.join("eeg"))?;
    let (audio_rate_hz, eeg_rate_hz) = match pairs.first() {
        Some(p) => (p.mixture.sample_rate_hz, p.eeg.sample_rate_hz),
        None => (0, 0),
    };
    let path = root.join(MANIFEST_FILE);
    let mut out = BufWriter::new(File::create(&path)?);
    let header = ManifestHeader { version: MANIFEST_VERSION, audio_rate_hz, eeg_rate_hz };
    writeln!(out, "{}", serde_json::to_string(&ManifestLine::Header(header))?)?;
    for p in pairs {
        if p.mixture.sample_rate_hz != audio_rate_hz || p.eeg.sample_rate_hz != eeg_rate_hz {
            return Err(Error::Manifest { path, msg: format!("segment {} has a different sample rate", p.id()) });
        }
        let id = p.id();
        let rec = SegmentRecord {
            mixture: format!("audio/{id}_mixture.wav"),
            target: format!("audio/{id}_target.wav"),
            interferer: format!("audio/{id}_interferer.wav"),
            eeg: format!("eeg/{id}.f32"),
            eeg_meta: format!("eeg/{id}.json"),
            id,
            trial_id: p.trial_id.clone(),
            segment_index: p.segment_index,
            split: p.split,
        };
        write_wav(&root.join(&rec.mixture), &p.mixture)?;
        write_wav(&root.join(&rec.target), &p.target)?;
        write_wav(&root.join(&rec.interferer), &p.interferer)?;
        write_eeg(&root.join(&rec.eeg), &root.join(&rec.eeg_meta), &p.eeg)?;
        writeln!(out, "{}", serde_json::to_string(&ManifestLine::Segment(rec))?)?;
    }
    out.flush()?;
    Ok(path)
}

/// Loads every segment listed in a manifest (paths relative to the
/// manifest's directory).
pub fn read_manifest(path: &Path) -> Result<Vec<SegmentPair>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let root = path.parent().unwrap_or(Path::new("."));
    let merr = |msg: String| Error::Manifest { path: path.to_path_buf(), msg };
    let mut header: Option<ManifestHeader> = None;
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine =
            serde_json::from_str(&line).map_err(|e| merr(format!("line {}: {e}", lineno + 1)))?;
        match parsed {
            ManifestLine::Header(h) => {
                if h.version != MANIFEST_VERSION {
                    return Err(merr(format!("unsupported manifest version {}", h.version)));
                }
                header = Some(h);
            }
            ManifestLine::Segment(rec) => {
                let h = header.ok_or_else(|| merr("segment record before header".into()))?;
                let load = |rel: &str| read_wav(&root.join(rel));
                let mixture = load(&rec.mixture)?;
                let target = load(&rec.target)?;
                let interferer = load(&rec.interferer)?;
                let eeg = read_eeg(&root.join(&rec.eeg), &root.join(&rec.eeg_meta))?;
                for w in [&mixture, &target, &interferer] {
                    if w.sample_rate_hz != h.audio_rate_hz {
                        return Err(merr(format!(
                            "{}: audio at {} Hz, header says {} Hz",
                            rec.id, w.sample_rate_hz, h.audio_rate_hz
                        )));
                    }
                }
                if target.len() != mixture.len() || interferer.len() != mixture.len() {
                    return Err(merr(format!("{}: audio lengths differ", rec.id)));
                }
                if eeg.sample_rate_hz != h.eeg_rate_hz {
                    return Err(merr(format!(
                        "{}: EEG at {} Hz, header says {} Hz",
                        rec.id, eeg.sample_rate_hz, h.eeg_rate_hz
                    )));
                }
                pairs.push(SegmentPair {
                    mixture,
                    target,
                    interferer,
                    eeg,
                    trial_id: rec.trial_id,
                    segment_index: rec.segment_index,
                    split: rec.split,
                });
            }
        }
    }
    Ok(pairs)
}

/// Pearson correlation of `eeg[t + lag]` with `envelope[t]` over the
/// overlapping region, for each `lag` in `0..=max_lag`.
pub fn lagged_correlation(eeg: &[f64], envelope: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| {
            let n = eeg.len().min(envelope.len()).saturating_sub(lag);
            if n < 2 {
                return f64::NAN;
            }
            let a = &eeg[lag..lag + n];
            let b = &envelope[..n];
            let (ma, mb) = (a.iter().sum::<f64>() / n as f64, b.iter().sum::<f64>() / n as f64);
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for (x, y) in a.iter().zip(b) {
                sab += (x - ma) * (y - mb);
                saa += (x - ma).powi(2);
                sbb += (y - mb).powi(2);
            }
            sab / (saa * sbb).sqrt().max(1e-300)
        })
        .collect()
}

/// Lag (in samples) maximizing [`lagged_correlation`].
pub fn peak_lag(eeg: &[f64], envelope: &[f64], max_lag: usize) -> usize {
    let c = lagged_correlation(eeg, envelope, max_lag);
    let mut best = 0;
    for (i, v) in c.iter().enumerate() {
        if v > &c[best] || c[best].is_nan() {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { n_electrodes: 6, trial_seconds: 4.0, audio_rate_hz: 1600, eeg_rate_hz: 128, seed: 3, ..Default::default() }
    }

    #[test]
    fn resampler_preserves_low_tones() {
        let from = 1600;
        let x: Vec<f64> = (0..1600).map(|i| (2.0 * std::f64::consts::PI * 50.0 * i as f64 / from as f64).sin()).collect();
        let y = resample_samples(&x, from, 1000).unwrap();
        assert_eq!(y.len(), 1000);
        for (m, v) in y.iter().enumerate().skip(100).take(800) {
            let want = (2.0 * std::f64::consts::PI * 50.0 * m as f64 / 1000.0).sin();
            assert!((v - want).abs() < 1e-3, "{m}: {v} vs {want}");
        }
        assert_eq!(resample_samples(&x, 1600, 1600).unwrap(), x);
    }

    #[test]
    fn resampler_rejects_above_cutoff() {
        let x: Vec<f64> = (0..4000).map(|i| (2.0 * std::f64::consts::PI * 700.0 * i as f64 / 1600.0).sin()).collect();
        let y = resample_samples(&x, 1600, 400).unwrap();
        assert!(rms(&y[200..800]) < 1e-3);
    }

    #[test]
    fn bessel_matches_reference() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008).abs() < 1e-12);
        assert!((bessel_i0(8.6) / 750.461_159_563_165_9 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_trial_shapes_and_lag() {
        let cfg = SynthConfig { eeg_snr_db: f64::INFINITY, ..small() };
        let t = synth_trial(&cfg).unwrap();
        assert_eq!(t.mixture.len(), 6400);
        assert_eq!(t.eeg.data.dim(), (6, 512));
        assert!(peak(&t.mixture.samples) <= 0.9 + 1e-12);
        let env = eeg_source_envelope(&t.target, 128, cfg.envelope_cutoff_hz).unwrap();
        let best = t.eeg.data.rows().into_iter().position(|r| r.iter().any(|v| (*v - 0.0).abs() > 0.0) && r.iter().copied().fold(0.0f64, f64::max) > 0.0).unwrap();
        let row = t.eeg.data.row(best).to_vec();
        assert_eq!(peak_lag(&row, &env, 60), cfg.latency_samples());
        for (a, b) in t.mixture.samples.iter().zip(t.target.samples.iter().zip(&t.interferer.samples)) {
            assert!((a - b.0 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn segmentation_and_manifest_round_trip() {
        let t = synth_trial(&small()).unwrap();
        let mut segs = segment_trial(&t, 1.0, Split::Train).unwrap();
        assert_eq!(segs.len(), 4);
        assert_eq!(segs[1].mixture.samples[..], t.mixture.samples[1600..3200]);
        assert!(segment_trial(&t, 5.0, Split::Train).unwrap().is_empty());
        assert!(segment_trial(&t, 0.3, Split::Train).is_err());
        assign_splits(&mut segs, 0.5, 0.25).unwrap();
        assert_eq!(segs.iter().map(|s| s.split).collect::<Vec<_>>(), [Split::Train, Split::Train, Split::Valid, Split::Test]);

        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(&segs, dir.path()).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in segs.iter().zip(&back) {
            assert_eq!(a.eeg, b.eeg);
            assert_eq!(a.split, b.split);
            for (x, y) in a.mixture.samples.iter().zip(&b.mixture.samples) {
                assert!((x - y).abs() <= 1.0 / 32768.0);
            }
        }
        fs::remove_file(dir.path().join("eeg/trial3_seg2.f32")).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::MissingFile(_))));
    }

    #[test]
    fn empty_manifest_reads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(&[], dir.path()).unwrap();
        assert!(read_manifest(&path).unwrap().is_empty());
    }
}
