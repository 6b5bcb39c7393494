//! Multi-scale convolutional speech encoder refined by direction-specific
//! selective scans.
//!
//! The mixture `(B, 1, T)` goes through four parallel strided convolutions
//! (one per filter length). Each scale is a `(channels × frames)` map; the
//! maps are stacked on a trailing scale axis and refined by a stack of
//! grouped-scan blocks, each of which scans scale `i` in direction `i`.

use std::rc::Rc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{concat, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, LayerNorm, Linear};
use crate::params::{Ctx, ParamStore};
use crate::scan::selective_scan;

/// Flattening order of a `(channels × frames)` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDirection {
    /// Row-major.
    LeftRight,
    /// Reversed row-major.
    RightLeft,
    /// Column-major.
    TopBottom,
    /// Reversed column-major.
    BottomTop,
}

impl ScanDirection {
    /// Scale `i` is scanned in `ALL[i]`.
    pub const ALL: [ScanDirection; 4] = [Self::LeftRight, Self::RightLeft, Self::TopBottom, Self::BottomTop];

    pub fn label(self) -> &'static str {
        match self {
            Self::LeftRight => "LR",
            Self::RightLeft => "RL",
            Self::TopBottom => "TB",
            Self::BottomTop => "BT",
        }
    }
}

/// `order[p]` is the row-major index of the element visited at position `p`.
pub fn scan_order(rows: usize, cols: usize, dir: ScanDirection) -> Vec<usize> {
    let n = rows * cols;
    let col_major = |p: usize| (p % rows) * cols + p / rows;
    match dir {
        ScanDirection::LeftRight => (0..n).collect(),
        ScanDirection::RightLeft => (0..n).rev().collect(),
        ScanDirection::TopBottom => (0..n).map(col_major).collect(),
        ScanDirection::BottomTop => (0..n).rev().map(col_major).collect(),
    }
}

fn inverse(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (p, &i) in order.iter().enumerate() {
        inv[i] = p;
    }
    inv
}

/// Flattens `map` into the visiting order of `dir`.
pub fn cross_scan(map: &Array2<f64>, dir: ScanDirection) -> Array1<f64> {
    let (r, c) = map.dim();
    let flat: Vec<f64> = map.iter().copied().collect();
    scan_order(r, c, dir).into_iter().map(|i| flat[i]).collect()
}

/// Inverse of [`cross_scan`].
pub fn cross_unscan(seq: &Array1<f64>, rows: usize, cols: usize, dir: ScanDirection) -> Array2<f64> {
    assert_eq!(seq.len(), rows * cols, "sequence length");
    let mut flat = vec![0.0; rows * cols];
    for (p, i) in scan_order(rows, cols, dir).into_iter().enumerate() {
        flat[i] = seq[p];
    }
    Array2::from_shape_vec((rows, cols), flat).expect("shape")
}

/// Input-dependent selective scan over `(S, L, width)` sequences: the step
/// size, input map and readout map are projections of the input itself.
#[derive(Clone, Debug)]
pub struct SelectiveScan {
    pub name: String,
    pub width: usize,
    pub state: usize,
    pub block: usize,
}

impl SelectiveScan {
    pub fn new(name: impl Into<String>, width: usize, state: usize, block: usize) -> Self {
        Self { name: name.into(), width, state, block }
    }

    fn step_proj(&self) -> Linear {
        Linear::new(format!("{}.step", self.name), self.width, self.width)
    }

    fn in_map(&self) -> Linear {
        Linear::new(format!("{}.in_map", self.name), self.width, self.state).without_bias()
    }

    fn readout(&self) -> Linear {
        Linear::new(format!("{}.readout", self.name), self.width, self.state).without_bias()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let step = self.step_proj();
        step.init(store, rng);
        // Step sizes start log-uniform in [1e-3, 1e-1].
        let bias = store.get_mut(&step.bias_name()).expect("bias");
        for b in bias.iter_mut() {
            let dt: f64 = (rng.gen_range(1e-3f64.ln()..1e-1f64.ln())).exp();
            *b = dt + (-(-dt).exp_m1()).ln();
        }
        self.in_map().init(store, rng);
        self.readout().init(store, rng);
        let a_log = ndarray::Array2::from_shape_fn((self.width, self.state), |(_, n)| ((n + 1) as f64).ln());
        store.insert(format!("{}.a_log", self.name), a_log.into_dyn());
        store.insert(format!("{}.skip", self.name), ParamStore::filled(&[self.width], 1.0));
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, u: Var<'g>) -> Result<Var<'g>> {
        let delta = self.step_proj().forward(ctx, u).softplus();
        let b = self.in_map().forward(ctx, u);
        let c = self.readout().forward(ctx, u);
        let a = ctx.p(&format!("{}.a_log", self.name)).exp().neg();
        let d = ctx.p(&format!("{}.skip", self.name));
        selective_scan(u, delta, b, c, a, d, self.block)
    }
}

/// One directional scan block over a single-scale map `(B, C, T, 1)`.
#[derive(Clone, Debug)]
pub struct VsssBlock {
    pub name: String,
    pub direction: ScanDirection,
    pub width: usize,
    pub scan: SelectiveScan,
}

impl VsssBlock {
    pub fn new(name: impl Into<String>, direction: ScanDirection, cfg: &ModelConfig) -> Self {
        let name = name.into();
        let scan = SelectiveScan::new(format!("{name}.scan"), cfg.scan_width, cfg.state_dim, cfg.scan_block);
        Self { name, direction, width: cfg.scan_width, scan }
    }

    fn in_proj(&self) -> Linear {
        Linear::new(format!("{}.in_proj", self.name), 1, self.width)
    }

    fn gate_proj(&self) -> Linear {
        Linear::new(format!("{}.gate_proj", self.name), 1, self.width)
    }

    fn norm(&self) -> LayerNorm {
        LayerNorm::new(format!("{}.norm", self.name), self.width)
    }

    pub fn out_proj(&self) -> Linear {
        Linear::new(format!("{}.out_proj", self.name), self.width, 1)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.in_proj().init(store, rng);
        self.gate_proj().init(store, rng);
        self.scan.init(store, rng);
        self.norm().init(store);
        self.out_proj().init(store, rng);
    }

    /// `x`: `(B, C, T, 1)` or `(B, C, T)`; output has the same shape.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let (b, c, t) = (shape[0], shape[1], shape[2]);
        let order = scan_order(c, t, self.direction);
        let unorder: Rc<[usize]> = inverse(&order).into();
        let seq = x.reshape(&[b, c * t]).index_select(1, order.into()).reshape(&[b, c * t, 1]);
        let u = self.in_proj().forward(ctx, seq).silu();
        let gate = self.gate_proj().forward(ctx, seq).silu();
        let y = self.scan.forward(ctx, u)?;
        let y = self.norm().forward(ctx, y).mul(gate);
        let out = self
            .out_proj()
            .forward(ctx, y)
            .reshape(&[b, c * t])
            .index_select(1, unorder)
            .reshape(&shape);
        Ok(x.add(out))
    }
}

/// Channel gate computed from the scale-and-time average of a reference map.
#[derive(Clone, Debug)]
pub struct Cam {
    pub name: String,
    pub channels: usize,
    pub reduction: usize,
}

impl Cam {
    pub fn new(name: impl Into<String>, channels: usize, reduction: usize) -> Self {
        Self { name: name.into(), channels, reduction }
    }

    pub fn fc1(&self) -> Linear {
        Linear::new(format!("{}.fc1", self.name), self.channels, self.channels / self.reduction)
    }

    pub fn fc2(&self) -> Linear {
        Linear::new(format!("{}.fc2", self.name), self.channels / self.reduction, self.channels)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.fc1().init(store, rng);
        self.fc2().init(store, rng);
    }

    /// Gate of shape `(B, C)` computed from `reference: (B, C, T, S)`.
    pub fn gate<'g>(&self, ctx: Ctx<'g>, reference: Var<'g>) -> Var<'g> {
        let sh = reference.shape();
        let pooled = reference.mean_axes_keep(&[2, 3]).reshape(&[sh[0], sh[1]]);
        self.fc2().forward(ctx, self.fc1().forward(ctx, pooled).relu()).sigmoid()
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, xc: Var<'g>, reference: Var<'g>) -> Result<Var<'g>> {
        if xc.shape() != reference.shape() {
            return Err(Error::shape("cam", format!("{:?} vs {:?}", xc.shape(), reference.shape())));
        }
        let sh = xc.shape();
        let gate = self.gate(ctx, reference).reshape(&[sh[0], sh[1], 1, 1]);
        Ok(xc.mul(gate))
    }
}

/// Grouped scan block: four directional scans (one per scale), channel
/// gating, normalization, feedforward, residual.
#[derive(Clone, Debug)]
pub struct GmBlock {
    pub name: String,
    pub channels: usize,
    pub expansion: usize,
    pub scans: [VsssBlock; 4],
    pub cam: Cam,
}

impl GmBlock {
    pub fn new(name: impl Into<String>, cfg: &ModelConfig) -> Self {
        let name = name.into();
        let scans = ScanDirection::ALL.map(|d| VsssBlock::new(format!("{name}.{}", d.label().to_lowercase()), d, cfg));
        let cam = Cam::new(format!("{name}.cam"), cfg.speech_channels, cfg.cam_reduction);
        Self { name, channels: cfg.speech_channels, expansion: cfg.ffn_expansion, scans, cam }
    }

    fn norm(&self) -> LayerNorm {
        LayerNorm::new(format!("{}.norm", self.name), self.channels)
    }

    pub fn ffn_in(&self) -> Linear {
        Linear::new(format!("{}.ffn_in", self.name), self.channels, self.channels * self.expansion)
    }

    pub fn ffn_out(&self) -> Linear {
        Linear::new(format!("{}.ffn_out", self.name), self.channels * self.expansion, self.channels)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for s in &self.scans {
            s.init(store, rng);
        }
        self.cam.init(store, rng);
        self.norm().init(store);
        self.ffn_in().init(store, rng);
        self.ffn_out().init(store, rng);
    }

    /// `x`: `(B, C, T, 4)` → same shape.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let sh = x.shape();
        if sh.len() != 4 || sh[3] != 4 || sh[1] != self.channels {
            return Err(Error::shape("gm_block", format!("expected (B, {}, T, 4), got {sh:?}", self.channels)));
        }
        let mut parts = Vec::with_capacity(4);
        for (i, s) in self.scans.iter().enumerate() {
            parts.push(s.forward(ctx, x.slice_axis(3, i, i + 1))?);
        }
        let xc = concat(&parts, 3);
        let xcam = self.cam.forward(ctx, xc, x)?;
        // Channel-last for the per-position norm and feedforward.
        let h = xcam.permute(&[0, 2, 3, 1]);
        let h = self.norm().forward(ctx, h);
        let h = self.ffn_out().forward(ctx, self.ffn_in().forward(ctx, h).gelu());
        Ok(x.add(h.permute(&[0, 3, 1, 2])))
    }
}

/// Four parallel strided convolutions sharing one output frame grid.
#[derive(Clone, Debug)]
pub struct MultiScaleEncoder {
    pub convs: [Conv1d; 4],
    pub kernels: [usize; 4],
}

impl MultiScaleEncoder {
    pub fn new(name: &str, cfg: &ModelConfig) -> Self {
        let kernels = cfg.kernel_lengths();
        let stride = cfg.stride();
        let convs = std::array::from_fn(|i| {
            let total = kernels[i] - kernels[0];
            let left = total / 2;
            Conv1d::new(format!("{name}.scale{i}"), 1, cfg.speech_channels, kernels[i])
                .stride(stride)
                .padding(left, total - left)
        });
        Self { convs, kernels }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for c in &self.convs {
            c.init(store, rng);
        }
    }

    /// `x`: `(B, 1, T)` → four `(B, N_s, T_s)` maps.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Result<[Var<'g>; 4]> {
        let sh = x.shape();
        if sh.len() != 3 || sh[1] != 1 {
            return Err(Error::shape("multi_scale_encode", format!("expected (B, 1, T), got {sh:?}")));
        }
        if sh[2] < self.kernels[3] {
            return Err(Error::TooShort(format!(
                "input of {} samples is shorter than the longest filter ({})",
                sh[2], self.kernels[3]
            )));
        }
        Ok(std::array::from_fn(|i| self.convs[i].forward(ctx, x).relu()))
    }
}

/// Encoder outputs needed downstream.
pub struct SpeechFeatures<'g> {
    /// Per-scale maps `X_1..X_4`, each `(B, N_s, T_s)`.
    pub scales: [Var<'g>; 4],
    /// Stacked scales `(B, N_s, T_s, 4)`.
    pub stacked: Var<'g>,
    /// Output of the scan stack, same shape as `stacked`.
    pub refined: Var<'g>,
}

/// Stacks four `(B, C, T)` maps on a trailing axis.
pub fn stack_scales<'g>(scales: &[Var<'g>; 4]) -> Var<'g> {
    let parts: Vec<Var<'g>> = scales
        .iter()
        .map(|s| {
            let mut sh = s.shape();
            sh.push(1);
            s.reshape(&sh)
        })
        .collect();
    concat(&parts, 3)
}

#[derive(Clone, Debug)]
pub struct SpeechEncoder {
    pub multi: MultiScaleEncoder,
    pub blocks: Vec<GmBlock>,
    pub mask_proj: Conv1d,
}

impl SpeechEncoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            multi: MultiScaleEncoder::new("speech.enc", cfg),
            blocks: (0..cfg.gm_layers).map(|i| GmBlock::new(format!("speech.gm{i}"), cfg)).collect(),
            mask_proj: Conv1d::pointwise("speech.mask_proj", 4 * cfg.speech_channels, cfg.speech_channels),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.multi.init(store, rng);
        for b in &self.blocks {
            b.init(store, rng);
        }
        self.mask_proj.init(store, rng);
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Result<SpeechFeatures<'g>> {
        let scales = self.multi.forward(ctx, x)?;
        let stacked = stack_scales(&scales);
        let mut refined = stacked;
        for b in &self.blocks {
            refined = b.forward(ctx, refined)?;
        }
        Ok(SpeechFeatures { scales, stacked, refined })
    }

    /// Concatenates the four scales on the channel axis and projects back to
    /// `N_s` channels.
    pub fn encode_for_mask<'g>(&self, ctx: Ctx<'g>, scales: &[Var<'g>; 4]) -> Result<Var<'g>> {
        let first = scales[0].shape();
        if scales.iter().any(|s| s.shape() != first) {
            return Err(Error::shape("encode_for_mask", "scale maps differ in shape"));
        }
        Ok(self.mask_proj.forward(ctx, concat(scales, 1)))
    }
}
