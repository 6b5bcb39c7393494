//! Cross-modal fusion, mask estimation and waveform decoding, plus the
//! end-to-end model that ties the encoders together.

use std::rc::Rc;

use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{AlignProjection, AlignedPair};
use crate::autograd::{concat, Tensor, Var};
use crate::config::ModelConfig;
use crate::eeg_encoder::{EegEncoder, ElectrodeGraph};
use crate::error::{Error, Result};
use crate::nn::{BiLstm, Conv1d, ConvTranspose1d, GroupNorm, LayerNorm, Linear};
use crate::params::{Ctx, ParamStore};
use crate::speech_encoder::{SpeechEncoder, SpeechFeatures};

/// One attention direction: queries from one stream, keys and values from
/// the other, then residual and group norm on the query stream.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub name: String,
    pub heads: usize,
    pub q: Conv1d,
    pub k: Conv1d,
    pub v: Conv1d,
    pub out: Conv1d,
    pub norm: GroupNorm,
}

impl CrossAttention {
    pub fn new(name: impl Into<String>, channels: usize, heads: usize, groups: usize) -> Self {
        let name = name.into();
        Self {
            heads,
            q: Conv1d::pointwise(format!("{name}.q"), channels, channels),
            k: Conv1d::pointwise(format!("{name}.k"), channels, channels),
            v: Conv1d::pointwise(format!("{name}.v"), channels, channels),
            out: Conv1d::pointwise(format!("{name}.out"), channels, channels),
            norm: GroupNorm::new(format!("{name}.norm"), groups, channels),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for c in [&self.q, &self.k, &self.v, &self.out] {
            c.init(store, rng);
        }
        self.norm.init(store);
    }

    fn split_heads<'g>(&self, x: Var<'g>) -> Var<'g> {
        let sh = x.shape();
        let (b, c, t) = (sh[0], sh[1], sh[2]);
        x.reshape(&[b, self.heads, c / self.heads, t]).permute(&[0, 1, 3, 2])
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, query: Var<'g>, context: Var<'g>) -> Var<'g> {
        let sh = query.shape();
        let q = self.split_heads(self.q.forward(ctx, query));
        let k = self.split_heads(self.k.forward(ctx, context));
        let v = self.split_heads(self.v.forward(ctx, context));
        let att = q.attention(k, v).permute(&[0, 1, 3, 2]).reshape(&sh);
        self.norm.forward(ctx, query.add(self.out.forward(ctx, att)))
    }
}

/// Stacked bidirectional cross attention between the EEG and speech streams.
#[derive(Clone, Debug)]
pub struct Cmca {
    pub layers: Vec<(CrossAttention, CrossAttention)>,
    pub merge: Conv1d,
}

impl Cmca {
    pub fn new(cfg: &ModelConfig) -> Self {
        let c = cfg.eeg_channels;
        Self {
            layers: (0..cfg.cmca_layers)
                .map(|i| {
                    (
                        CrossAttention::new(format!("cmca.l{i}.eeg"), c, cfg.attn_heads, cfg.gn_groups),
                        CrossAttention::new(format!("cmca.l{i}.speech"), c, cfg.attn_heads, cfg.gn_groups),
                    )
                })
                .collect(),
            merge: Conv1d::pointwise("cmca.merge", 2 * c, c),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for (a, b) in &self.layers {
            a.init(store, rng);
            b.init(store, rng);
        }
        self.merge.init(store, rng);
    }

    /// Returns the fused feature `(B, N_e, T_s)` and the final
    /// `(eeg, speech)` streams.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, eeg: Var<'g>, speech: Var<'g>) -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
        if eeg.shape() != speech.shape() || eeg.ndim() != 3 {
            return Err(Error::shape("cmca_fuse", format!("{:?} vs {:?}", eeg.shape(), speech.shape())));
        }
        let (mut e, mut s) = (eeg, speech);
        for (to_eeg, to_speech) in &self.layers {
            let e_next = to_eeg.forward(ctx, e, s);
            let s_next = to_speech.forward(ctx, s, e);
            e = e_next;
            s = s_next;
        }
        let y = self.merge.forward(ctx, concat(&[s, speech], 1));
        Ok((y, e, s))
    }
}

/// Layout of overlapping chunks over a sequence of `len` frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkPlan {
    pub len: usize,
    pub chunk: usize,
    pub hop: usize,
    pub n_chunks: usize,
}

impl ChunkPlan {
    pub fn new(len: usize, chunk: usize) -> Result<Self> {
        if chunk < 2 || chunk % 2 != 0 {
            return Err(Error::Config(format!("chunk length must be even, got {chunk}")));
        }
        let hop = chunk / 2;
        let n_chunks = if len <= chunk { 1 } else { (len - chunk).div_ceil(hop) + 1 };
        Ok(Self { len, chunk, hop, n_chunks })
    }

    pub fn padded_len(&self) -> usize {
        self.chunk + self.hop * (self.n_chunks - 1)
    }

    fn positions(&self) -> Rc<[usize]> {
        (0..self.n_chunks)
            .flat_map(|c| (0..self.chunk).map(move |j| c * self.hop + j))
            .collect()
    }

    /// `(B, C, len)` → `(B, n_chunks, chunk, C)`.
    pub fn split<'g>(&self, y: Var<'g>) -> Var<'g> {
        let sh = y.shape();
        let (b, c) = (sh[0], sh[1]);
        y.pad_axis(2, 0, self.padded_len() - self.len)
            .index_select(2, self.positions())
            .reshape(&[b, c, self.n_chunks, self.chunk])
            .permute(&[0, 2, 3, 1])
    }

    /// Inverse of [`ChunkPlan::split`]: sums overlapping frames, divides by
    /// the number of chunks covering each frame, and trims the padding.
    pub fn merge<'g>(&self, chunks: Var<'g>) -> Var<'g> {
        let sh = chunks.shape();
        let (b, c) = (sh[0], sh[3]);
        let padded = self.padded_len();
        let mut count = vec![0.0; padded];
        for &p in self.positions().iter() {
            count[p] += 1.0;
        }
        let inv = Tensor::from_shape_vec(IxDyn(&[1, 1, padded]), count.into_iter().map(|n| 1.0 / n).collect())
            .expect("shape");
        chunks
            .permute(&[0, 3, 1, 2])
            .reshape(&[b, c, self.n_chunks * self.chunk])
            .index_add(2, self.positions(), padded)
            .mul(chunks.graph().constant(inv))
            .slice_axis(2, 0, self.len)
    }
}

/// One recurrent pass along axis 1 of `(S, L, C)` with projection, layer
/// norm and residual.
#[derive(Clone, Debug)]
pub struct RecurrentPath {
    pub rnn: BiLstm,
    pub proj: Linear,
    pub norm: LayerNorm,
}

impl RecurrentPath {
    pub fn new(name: &str, channels: usize, hidden: usize) -> Self {
        Self {
            rnn: BiLstm::new(format!("{name}.rnn"), channels, hidden),
            proj: Linear::new(format!("{name}.proj"), 2 * hidden, channels),
            norm: LayerNorm::new(format!("{name}.norm"), channels),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.rnn.init(store, rng);
        self.proj.init(store, rng);
        self.norm.init(store);
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let h = self.proj.forward(ctx, self.rnn.forward(ctx, x));
        x.add(self.norm.forward(ctx, h))
    }
}

/// Dual-path recurrent mask estimator.
#[derive(Clone, Debug)]
pub struct Dprnn {
    pub chunk: usize,
    pub layers: Vec<(RecurrentPath, RecurrentPath)>,
    pub head: Conv1d,
}

impl Dprnn {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (c, h) = (cfg.eeg_channels, cfg.dprnn_hidden());
        Self {
            chunk: cfg.chunk_len,
            layers: (0..cfg.dprnn_layers)
                .map(|i| {
                    (
                        RecurrentPath::new(&format!("dprnn.l{i}.intra"), c, h),
                        RecurrentPath::new(&format!("dprnn.l{i}.inter"), c, h),
                    )
                })
                .collect(),
            head: Conv1d::pointwise("dprnn.head", c, cfg.speech_channels),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for (a, b) in &self.layers {
            a.init(store, rng);
            b.init(store, rng);
        }
        self.head.init(store, rng);
    }

    /// `(B, N_e, T_s)` → mask `(B, N_s, T_s)` in `[0, 1]`.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, y: Var<'g>) -> Result<Var<'g>> {
        let sh = y.shape();
        if sh.len() != 3 {
            return Err(Error::shape("dprnn_mask", format!("expected (B, C, T), got {sh:?}")));
        }
        let (b, c) = (sh[0], sh[1]);
        let plan = ChunkPlan::new(sh[2], self.chunk)?;
        let (n, l) = (plan.n_chunks, plan.chunk);
        let mut h = plan.split(y);
        for (intra, inter) in &self.layers {
            h = intra.forward(ctx, h.reshape(&[b * n, l, c])).reshape(&[b, n, l, c]);
            let across = h.permute(&[0, 2, 1, 3]).reshape(&[b * l, n, c]);
            h = inter.forward(ctx, across).reshape(&[b, l, n, c]).permute(&[0, 2, 1, 3]);
        }
        Ok(self.head.forward(ctx, plan.merge(h)).sigmoid())
    }
}

/// `Ŝ = X_en ⊙ M`.
pub fn apply_mask<'g>(encoded: Var<'g>, mask: Var<'g>) -> Result<Var<'g>> {
    if encoded.shape() != mask.shape() {
        return Err(Error::shape("apply_mask", format!("{:?} vs {:?}", encoded.shape(), mask.shape())));
    }
    Ok(encoded.mul(mask))
}

/// Transposed-convolution decoder back to a waveform of a given length.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub deconv: ConvTranspose1d,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        let l1 = cfg.kernel_lengths()[0];
        Self { deconv: ConvTranspose1d::new("decoder", cfg.speech_channels, 1, l1, l1 / 2) }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.deconv.init(store, rng);
    }

    /// `(B, N_s, T_s)` → `(B, 1, len)`, trimming or zero-padding on the right.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, s: Var<'g>, len: usize) -> Var<'g> {
        let raw = self.deconv.forward(ctx, s);
        let t = raw.shape()[2];
        if t >= len {
            raw.slice_axis(2, 0, len)
        } else {
            raw.pad_axis(2, 0, len - t)
        }
    }
}

/// Every intermediate of one forward pass.
pub struct ForwardOutput<'g> {
    pub speech: SpeechFeatures<'g>,
    /// `E′`: `(B, N_e, T_e)`.
    pub eeg_embedding: Var<'g>,
    /// Shared-space pair (`Ẽ` and the projected speech).
    pub aligned: AlignedPair<'g>,
    /// `Y`: `(B, N_e, T_s)`.
    pub fused: Var<'g>,
    /// `M`: `(B, N_s, T_s)`.
    pub mask: Var<'g>,
    /// `X_en`: `(B, N_s, T_s)`.
    pub encoded: Var<'g>,
    /// `Ŝ`: `(B, N_s, T_s)`.
    pub masked: Var<'g>,
    /// `ŝ`: `(B, 1, T)`.
    pub estimate: Var<'g>,
}

/// The full EEG-conditioned extraction network.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub speech: SpeechEncoder,
    pub eeg: EegEncoder,
    pub align: AlignProjection,
    pub cmca: Cmca,
    pub dprnn: Dprnn,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            speech: SpeechEncoder::new(config),
            eeg: EegEncoder::new(config),
            align: AlignProjection::new(config),
            cmca: Cmca::new(config),
            dprnn: Dprnn::new(config),
            decoder: Decoder::new(config),
            config: config.clone(),
        })
    }

    /// Fresh parameters drawn from `seed`.
    pub fn init(&self, graph: &ElectrodeGraph, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.speech.init(&mut store, &mut rng);
        self.eeg.init(&mut store, &mut rng, graph)?;
        self.align.init(&mut store, &mut rng);
        self.cmca.init(&mut store, &mut rng);
        self.dprnn.init(&mut store, &mut rng);
        self.decoder.init(&mut store, &mut rng);
        Ok(store)
    }

    /// `mixture: (B, 1, T)`, `eeg: (B, electrodes, T_raw)`.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, mixture: Var<'g>, eeg: Var<'g>) -> Result<ForwardOutput<'g>> {
        let (ms, es) = (mixture.shape(), eeg.shape());
        if ms.len() != 3 || es.len() != 3 || ms[0] != es[0] {
            return Err(Error::shape("forward", format!("mixture {ms:?}, eeg {es:?}")));
        }
        let audio_s = ms[2] as f64 / self.config.audio_rate_hz as f64;
        let eeg_s = es[2] as f64 / self.config.eeg_rate_hz as f64;
        if (audio_s - eeg_s).abs() > 1.0 / self.config.eeg_rate_hz as f64 + 1e-9 {
            return Err(Error::Invalid(format!(
                "mixture lasts {audio_s:.4} s but EEG lasts {eeg_s:.4} s"
            )));
        }
        let speech = self.speech.forward(ctx, mixture)?;
        let eeg_embedding = self.eeg.forward(ctx, eeg)?;
        let aligned = self.align.forward(ctx, speech.refined, eeg_embedding)?;
        let (fused, _, _) = self.cmca.forward(ctx, aligned.eeg, aligned.speech)?;
        let mask = self.dprnn.forward(ctx, fused)?;
        let encoded = self.speech.encode_for_mask(ctx, &speech.scales)?;
        let masked = apply_mask(encoded, mask)?;
        let estimate = self.decoder.forward(ctx, masked, ms[2]);
        Ok(ForwardOutput { speech, eeg_embedding, aligned, fused, mask, encoded, masked, estimate })
    }
}

impl ForwardOutput<'_> {
    /// Named shapes of every intermediate, in pipeline order.
    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let mut out = Vec::new();
        for (name, x) in ["X_1", "X_2", "X_3", "X_4"].iter().zip(&self.speech.scales) {
            out.push((*name, x.shape()));
        }
        out.extend([
            ("X^", self.speech.stacked.shape()),
            ("X~", self.speech.refined.shape()),
            ("E'", self.eeg_embedding.shape()),
            ("E~", self.aligned.eeg.shape()),
            ("X_align", self.aligned.speech.shape()),
            ("Y", self.fused.shape()),
            ("M", self.mask.shape()),
            ("X_en", self.encoded.shape()),
            ("S^", self.masked.shape()),
            ("s^", self.estimate.shape()),
        ]);
        out
    }
}

/// Runs a zero batch of `batch` windows through a freshly initialized model
/// and returns the intermediate shapes.
pub fn dry_run_shapes(config: &ModelConfig, batch: usize) -> Result<Vec<(&'static str, Vec<usize>)>> {
    let model = Model::new(config)?;
    let graph = crate::eeg_encoder::build_graph(config.n_electrodes, None, crate::config::GraphMode::Full)?;
    let store = model.init(&graph, 0)?;
    let g = crate::autograd::Graph::inference();
    let ctx = Ctx::new(&g, &store, false);
    let mix = g.constant(Tensor::zeros(IxDyn(&[batch, 1, config.audio_len()])));
    let eeg = g.constant(Tensor::zeros(IxDyn(&[batch, config.n_electrodes, config.eeg_len()])));
    Ok(model.forward(ctx, mix, eeg)?.shapes())
}
