//! Architecture hyperparameters and presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the electrode graph's edges are built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    /// Gaussian kernel on montage distances.
    Distance,
    /// Every pair of electrodes connected with weight one.
    Full,
}

/// Every architectural hyperparameter of the extraction network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub audio_rate_hz: u32,
    pub eeg_rate_hz: u32,
    pub n_electrodes: usize,
    /// Duration of one model input window.
    pub segment_seconds: f64,
    /// `N_s`.
    pub speech_channels: usize,
    /// `N_e`.
    pub eeg_channels: usize,
    /// Encoder filter lengths in milliseconds (`L₁..L₄`).
    pub kernel_ms: [f64; 4],
    /// Explicit filter lengths in samples; overrides `kernel_ms` when set.
    pub kernel_samples: Option<[usize; 4]>,
    /// Number of grouped scan blocks `N`; zero selects additive scale fusion.
    pub gm_layers: usize,
    pub state_dim: usize,
    /// Inner width of each directional scan block.
    pub scan_width: usize,
    /// Steps between stored scan states in the backward pass.
    pub scan_block: usize,
    pub cam_reduction: usize,
    pub ffn_expansion: usize,
    pub cheb_order: usize,
    pub graph_mode: GraphMode,
    pub res_blocks: usize,
    pub attn_heads: usize,
    pub gn_groups: usize,
    pub cmca_layers: usize,
    pub dprnn_layers: usize,
    /// DPRNN chunk length `L` (even).
    pub chunk_len: usize,
    /// Recurrent width per direction; defaults to `N_e`.
    pub dprnn_hidden: Option<usize>,
    /// InfoNCE temperature.
    pub tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

/// Rounds `x` to the nearest even integer, ties upward.
pub fn nearest_even(x: f64) -> usize {
    2 * ((x / 2.0 + 0.5).floor() as usize)
}

impl ModelConfig {
    /// Full-size network: 128-electrode EEG, 2 s windows at 14.7 kHz.
    pub fn full_scale() -> Self {
        Self {
            audio_rate_hz: 14_700,
            eeg_rate_hz: 128,
            n_electrodes: 128,
            segment_seconds: 2.0,
            speech_channels: 128,
            eeg_channels: 64,
            kernel_ms: [2.5, 5.0, 10.0, 20.0],
            kernel_samples: None,
            gm_layers: 2,
            state_dim: 16,
            scan_width: 4,
            scan_block: 64,
            cam_reduction: 4,
            ffn_expansion: 2,
            cheb_order: 3,
            graph_mode: GraphMode::Full,
            res_blocks: 3,
            attn_heads: 4,
            gn_groups: 8,
            cmca_layers: 3,
            dprnn_layers: 4,
            chunk_len: 250,
            dprnn_hidden: None,
            tau: 0.1,
        }
    }

    /// Reduced widths for laptop-scale runs.
    pub fn desk() -> Self {
        Self {
            n_electrodes: 16,
            speech_channels: 32,
            eeg_channels: 16,
            state_dim: 4,
            scan_width: 2,
            ..Self::full_scale()
        }
    }

    /// Desk widths on 1 s windows of 8 kHz audio with 20 ms base filters
    /// (`T_s = 99`), sized for multi-run experiments on one CPU core.
    pub fn compact() -> Self {
        Self {
            audio_rate_hz: 8_000,
            segment_seconds: 1.0,
            kernel_ms: [20.0, 40.0, 80.0, 160.0],
            chunk_len: 20,
            ..Self::desk()
        }
    }

    /// Preset by name: `full-scale`, `desk`, `compact` or `miniature`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full-scale" => Ok(Self::full_scale()),
            "desk" => Ok(Self::desk()),
            "compact" => Ok(Self::compact()),
            "miniature" => Ok(Self::miniature()),
            other => Err(Error::Config(format!("unknown preset `{other}` (full-scale, desk, compact, miniature)"))),
        }
    }

    /// Tiny network used for gradient checks and smoke tests: 400-sample
    /// windows, `L₁ = 8`.
    pub fn miniature() -> Self {
        Self {
            audio_rate_hz: 1_600,
            eeg_rate_hz: 128,
            n_electrodes: 4,
            segment_seconds: 0.25,
            speech_channels: 8,
            eeg_channels: 4,
            kernel_samples: Some([8, 16, 24, 32]),
            gm_layers: 1,
            state_dim: 2,
            scan_width: 2,
            scan_block: 16,
            attn_heads: 2,
            gn_groups: 2,
            cmca_layers: 2,
            dprnn_layers: 1,
            chunk_len: 20,
            ..Self::full_scale()
        }
    }

    /// Encoder filter lengths in samples.
    pub fn kernel_lengths(&self) -> [usize; 4] {
        if let Some(k) = self.kernel_samples {
            return k;
        }
        self.kernel_ms
            .map(|ms| nearest_even(ms * self.audio_rate_hz as f64 / 1000.0))
    }

    /// Encoder hop `L₁ / 2`.
    pub fn stride(&self) -> usize {
        self.kernel_lengths()[0] / 2
    }

    /// Audio samples per window (`T`).
    pub fn audio_len(&self) -> usize {
        (self.segment_seconds * self.audio_rate_hz as f64).round() as usize
    }

    /// EEG samples per window (`T_raw`).
    pub fn eeg_len(&self) -> usize {
        (self.segment_seconds * self.eeg_rate_hz as f64).round() as usize
    }

    /// EEG length after right-padding to a multiple of `2^res_blocks`.
    pub fn eeg_len_padded(&self) -> usize {
        let m = 1 << self.res_blocks;
        self.eeg_len().div_ceil(m) * m
    }

    /// Speech frames `T_s = ⌊(T − L₁)/(L₁/2)⌋ + 1`.
    pub fn speech_frames(&self) -> usize {
        frames_for(self.audio_len(), self.kernel_lengths()[0], self.stride())
    }

    /// EEG frames `T_e` after the pooling stages.
    pub fn eeg_frames(&self) -> usize {
        self.eeg_len_padded() >> self.res_blocks
    }

    pub fn dprnn_hidden(&self) -> usize {
        self.dprnn_hidden.unwrap_or(self.eeg_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let k = self.kernel_lengths();
        if !(k[0] < k[1] && k[1] < k[2] && k[2] < k[3]) {
            return bad(format!("filter lengths must increase, got {k:?}"));
        }
        if k[0] < 2 || k[0] % 2 != 0 {
            return bad(format!("L1 must be even and >= 2, got {}", k[0]));
        }
        if self.audio_len() < k[3] {
            return bad(format!("window of {} samples shorter than L4 = {}", self.audio_len(), k[3]));
        }
        if self.n_electrodes < 2 {
            return bad("at least two electrodes required".into());
        }
        if self.eeg_frames() > self.speech_frames() {
            return bad("EEG frames exceed speech frames".into());
        }
        if self.speech_channels % self.cam_reduction != 0 || self.speech_channels < self.cam_reduction {
            return bad("speech_channels must be a multiple of cam_reduction".into());
        }
        if self.attn_heads == 0 || self.eeg_channels % self.attn_heads != 0 {
            return bad("eeg_channels must be a multiple of attn_heads".into());
        }
        if self.gn_groups == 0 || self.eeg_channels % self.gn_groups != 0 {
            return bad("eeg_channels must be a multiple of gn_groups".into());
        }
        if self.chunk_len < 2 || self.chunk_len % 2 != 0 {
            return bad("chunk_len must be even".into());
        }
        if self.cheb_order == 0 || self.state_dim == 0 || self.scan_width == 0 || self.scan_block == 0 {
            return bad("cheb_order, state_dim, scan_width and scan_block must be positive".into());
        }
        if self.cmca_layers == 0 || self.dprnn_layers == 0 {
            return bad("at least one CMCA and one DPRNN layer required".into());
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive".into());
        }
        Ok(())
    }
}

/// Output length of a convolution with no padding.
pub fn frames_for(len: usize, kernel: usize, stride: usize) -> usize {
    (len - kernel) / stride + 1
}
