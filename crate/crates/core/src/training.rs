//! Optimization loop, learning-rate schedule and checkpoints.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::config::ModelConfig;
use crate::datasets::SegmentPair;
use crate::eeg_encoder::{build_graph, ElectrodeGraph};
use crate::error::{Error, Result};
use crate::extractor::Model;
use crate::metrics;
use crate::objectives::{total_loss, LossReport};
use crate::params::{Ctx, ParamStore};

/// Log tag of runs without the contrastive term.
pub const NO_ALIGNMENT_TAG: &str = "w/o Alignment";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    /// Weight of the contrastive alignment term.
    pub lambda: f64,
    pub seed: u64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    pub train_manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 8,
            peak_lr: 6e-4,
            weight_decay: 1e-3,
            warmup_ratio: 0.05,
            lambda: 3.0,
            seed: 0,
            grad_clip: 5.0,
            train_manifest: None,
            valid_manifest: None,
            model: ModelConfig::desk(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2 for the contrastive term, got {}", self.batch_size));
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return bad(format!("warmup_ratio must lie in (0, 1), got {}", self.warmup_ratio));
        }
        if !(self.peak_lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay nonnegative".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be nonnegative".into());
        }
        self.model.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Variant label used in logs and ablation tables.
    pub fn variant(&self) -> &'static str {
        match (self.lambda == 0.0, self.model.gm_layers == 0) {
            (true, _) => NO_ALIGNMENT_TAG,
            (false, true) => "w/o GM",
            (false, false) => "full",
        }
    }
}

/// Linear warm-up to `peak_lr` over `round(total·warmup_ratio)` steps, then
/// cosine decay to zero at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, peak_lr: f64, warmup_ratio: f64) -> f64 {
    let step = step.min(total_steps);
    let warmup = ((total_steps as f64 * warmup_ratio).round() as usize).min(total_steps);
    if step < warmup {
        return peak_lr * step as f64 / warmup as f64;
    }
    let rest = total_steps - warmup;
    if rest == 0 {
        return peak_lr;
    }
    let progress = (step - warmup) as f64 / rest as f64;
    0.5 * peak_lr * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in store.params_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.raw_dim()));
            let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
            ndarray::Zip::from(&mut *p).and(&mut *m).and(&mut *v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * wd * *p;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}

/// Rescales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / (norm + 1e-12);
        grads.values_mut().for_each(|g| g.mapv_inplace(|v| v * k));
    }
    norm
}

/// Stacked tensors for one batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `(B, 1, T)`.
    pub mixture: Tensor,
    /// `(B, 1, T)`.
    pub target: Tensor,
    /// `(B, electrodes, T_raw)`.
    pub eeg: Tensor,
}

impl Batch {
    pub fn from_segments(items: &[&SegmentPair], cfg: &ModelConfig) -> Result<Self> {
        let b = items.len();
        if b == 0 {
            return Err(Error::Invalid("empty batch".into()));
        }
        let t = items[0].mixture.len();
        let (e, te) = items[0].eeg.data.dim();
        let mut mixture = Array3::zeros((b, 1, t));
        let mut target = Array3::zeros((b, 1, t));
        let mut eeg = Array3::zeros((b, e, te));
        for (i, p) in items.iter().enumerate() {
            if p.mixture.sample_rate_hz != cfg.audio_rate_hz || p.eeg.sample_rate_hz != cfg.eeg_rate_hz {
                return Err(Error::Invalid(format!(
                    "segment {} is at {}/{} Hz but the model expects {}/{} Hz",
                    p.id(),
                    p.mixture.sample_rate_hz,
                    p.eeg.sample_rate_hz,
                    cfg.audio_rate_hz,
                    cfg.eeg_rate_hz
                )));
            }
            if p.mixture.len() != t || p.target.len() != t || p.eeg.data.dim() != (e, te) {
                return Err(Error::Invalid(format!("segment {} differs in length from the batch", p.id())));
            }
            if e != cfg.n_electrodes {
                return Err(Error::Invalid(format!("segment {} has {e} electrodes, model expects {}", p.id(), cfg.n_electrodes)));
            }
            mixture.slice_mut(ndarray::s![i, 0, ..]).assign(&ndarray::ArrayView1::from(&p.mixture.samples));
            target.slice_mut(ndarray::s![i, 0, ..]).assign(&ndarray::ArrayView1::from(&p.target.samples));
            eeg.index_axis_mut(Axis(0), i).assign(&p.eeg.data);
        }
        Ok(Self { mixture: mixture.into_dyn(), target: target.into_dyn(), eeg: eeg.into_dyn() })
    }

    pub fn len(&self) -> usize {
        self.mixture.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossReport,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

/// Per-epoch summary line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_si_sdr: Option<f64>,
    pub best: bool,
}

/// Mutable training state: model, parameters, optimizer, RNG and counters.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub store: ParamStore,
    pub optimizer: AdamW,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub epoch: usize,
    pub total_steps: usize,
    pub best_valid: Option<f64>,
}

/// Electrode graph for the configured mode, using montage positions when
/// available.
pub fn electrode_graph(cfg: &ModelConfig, positions: Option<ArrayView2<'_, f64>>) -> Result<ElectrodeGraph> {
    build_graph(cfg.n_electrodes, positions, cfg.graph_mode)
}

impl Trainer {
    /// Fresh state; `total_steps` fixes the schedule length.
    pub fn new(config: TrainConfig, graph: &ElectrodeGraph, total_steps: usize) -> Result<Self> {
        config.validate()?;
        let model = Model::new(&config.model)?;
        let store = model.init(graph, config.seed)?;
        Ok(Self {
            optimizer: AdamW::new(config.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed),
            model,
            store,
            step: 0,
            epoch: 0,
            total_steps: total_steps.max(1),
            best_valid: None,
            config,
        })
    }

    pub fn lr(&self) -> f64 {
        lr_schedule(self.step, self.total_steps, self.config.peak_lr, self.config.warmup_ratio)
    }

    /// Loss terms and parameter gradients without updating anything.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(LossReport, BTreeMap<String, Tensor>, Vec<(String, Tensor)>)> {
        let g = Graph::new();
        let ctx = Ctx::new(&g, &self.store, true);
        let out = self.model.forward(ctx, g.constant(batch.mixture.clone()), g.constant(batch.eeg.clone()))?;
        let obj = total_loss(out.estimate, &batch.target, &out.aligned, self.config.lambda, self.config.model.tau)?;
        if !obj.report.total.is_finite() {
            return Err(Error::NonFinite { what: "training loss".into(), step: Some(self.step) });
        }
        let buffers = g.take_buffer_updates();
        let grads = g.backward(obj.loss).into_param_grads();
        Ok((obj.report, grads, buffers))
    }

    /// Forward, backward, clip and update on one batch. On a non-finite loss
    /// or gradient the state is left untouched.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let (report, mut grads, buffers) = self.loss_and_grads(batch)?;
        let grad_norm = clip_grad_norm(&mut grads, self.config.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite { what: "gradient norm".into(), step: Some(self.step) });
        }
        let lr = self.lr();
        self.optimizer.step(&mut self.store, &grads, lr);
        for (name, value) in buffers {
            self.store.set_buffer(&name, value);
        }
        let record = StepRecord {
            step: self.step,
            epoch: self.epoch,
            lr,
            loss: report,
            grad_norm,
            tag: (self.config.lambda == 0.0).then(|| NO_ALIGNMENT_TAG.to_string()),
        };
        self.step += 1;
        Ok(record)
    }

    /// Mean SI-SDR of the model's estimates over `segments`.
    pub fn mean_si_sdr(&self, segments: &[SegmentPair]) -> Result<f64> {
        if segments.is_empty() {
            return Err(Error::Invalid("no segments to score".into()));
        }
        let mut sum = 0.0;
        for chunk in segments.chunks(self.config.batch_size) {
            let refs: Vec<&SegmentPair> = chunk.iter().collect();
            let batch = Batch::from_segments(&refs, &self.config.model)?;
            let est = infer(&self.model, &self.store, &batch)?;
            for (i, p) in chunk.iter().enumerate() {
                let e: Vec<f64> = est.row(i).to_vec();
                sum += metrics::si_sdr(&p.target.samples, &e)
                    .map_err(|err| with_segment(err, &p.id()))?;
            }
        }
        Ok(sum / segments.len() as f64)
    }
}

pub(crate) fn with_segment(err: Error, id: &str) -> Error {
    match err {
        Error::SilentReference { .. } => Error::SilentReference { segment: id.to_string() },
        other => other,
    }
}

/// Estimates `(B, T)` for a batch in inference mode.
pub fn infer(model: &Model, store: &ParamStore, batch: &Batch) -> Result<Array2<f64>> {
    let g = Graph::inference();
    let ctx = Ctx::new(&g, store, false);
    let out = model.forward(ctx, g.constant(batch.mixture.clone()), g.constant(batch.eeg.clone()))?;
    let v = out.estimate.value();
    let (b, t) = (v.shape()[0], v.shape()[2]);
    Ok(v.to_shape((b, t)).expect("contiguous").to_owned())
}

/// Batches of one epoch in shuffled order; a trailing batch of one item is
/// dropped because the contrastive term needs negatives.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).filter(|c| c.len() >= 2).map(|c| c.to_vec()).collect()
}

/// Number of optimizer steps per epoch for `n` training segments.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n / batch_size + usize::from(n % batch_size >= 2)
}

/// Outcome of [`fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub steps: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub best_epoch: Option<usize>,
    pub best_valid_si_sdr: Option<f64>,
    pub variant: String,
}

/// Runs the remaining epochs of `trainer`, writing one JSON record per step
/// and per epoch to `log`. With `out_dir` set, the best-validation state goes
/// to `out_dir/best`, the latest to `out_dir/last`, and a non-finite loss
/// leaves the last good state in `out_dir/last`.
pub fn fit(
    trainer: &mut Trainer,
    train: &[SegmentPair],
    valid: &[SegmentPair],
    log: &mut dyn Write,
    out_dir: Option<&Path>,
) -> Result<FitSummary> {
    if train.len() < 2 {
        return Err(Error::Invalid(format!("training needs at least two segments, got {}", train.len())));
    }
    let probe: Vec<&SegmentPair> = train.iter().take(1).collect();
    Batch::from_segments(&probe, &trainer.config.model)?;
    let header = serde_json::json!({
        "kind": "run",
        "variant": trainer.config.variant(),
        "lambda": trainer.config.lambda,
        "gm_layers": trainer.config.model.gm_layers,
        "parameters": trainer.store.numel(),
        "total_steps": trainer.total_steps,
    });
    writeln!(log, "{header}")?;
    let mut final_loss = f64::NAN;
    let mut best_epoch = None;
    while trainer.epoch < trainer.config.epochs {
        let batches = epoch_batches(train.len(), trainer.config.batch_size, &mut trainer.rng);
        let mut loss_sum = 0.0;
        for idx in &batches {
            let items: Vec<&SegmentPair> = idx.iter().map(|&i| &train[i]).collect();
            let batch = Batch::from_segments(&items, &trainer.config.model)?;
            let rec = match trainer.train_step(&batch) {
                Ok(r) => r,
                Err(e @ Error::NonFinite { .. }) => {
                    if let Some(dir) = out_dir {
                        save_checkpoint(trainer, &dir.join("last"))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            loss_sum += rec.loss.total;
            final_loss = rec.loss.total;
            writeln!(log, "{}", serde_json::to_string(&rec)?)?;
        }
        let valid_si_sdr = if valid.is_empty() { None } else { Some(trainer.mean_si_sdr(valid)?) };
        let score = valid_si_sdr.unwrap_or(-final_loss);
        let best = trainer.best_valid.is_none_or(|b| score > b);
        trainer.epoch += 1;
        if best {
            trainer.best_valid = Some(score);
            best_epoch = Some(trainer.epoch);
        }
        let rec = EpochRecord { epoch: trainer.epoch, mean_loss: loss_sum / batches.len().max(1) as f64, valid_si_sdr, best };
        writeln!(log, "{}", serde_json::to_string(&rec)?)?;
        log.flush()?;
        log::info!("epoch {} loss {:.4} valid {:?}", rec.epoch, rec.mean_loss, rec.valid_si_sdr);
        if let Some(dir) = out_dir {
            if best {
                save_checkpoint(trainer, &dir.join("best"))?;
            }
            save_checkpoint(trainer, &dir.join("last"))?;
        }
    }
    Ok(FitSummary {
        steps: trainer.step,
        epochs: trainer.epoch,
        final_loss,
        best_epoch,
        best_valid_si_sdr: if valid.is_empty() { None } else { trainer.best_valid },
        variant: trainer.config.variant().to_string(),
    })
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct TrainState {
    epoch: usize,
    step: usize,
    total_steps: usize,
    adam_t: u64,
    best_valid: Option<f64>,
    rng_seed: Vec<u8>,
    rng_stream: u64,
    /// Decimal string: the word position is 128-bit.
    rng_word_pos: String,
}

fn write_blob(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in t.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_blob(path: &Path, shape: &[usize]) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let n: usize = shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(Error::Checkpoint(format!("{}: {} bytes, shape {shape:?} needs {}", path.display(), bytes.len(), n * 8)));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::from_shape_vec(IxDyn(shape), data).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Writes parameters, buffers, optimizer moments, config and counters as a
/// directory of little-endian `f64` blobs plus an `index.json`.
pub fn save_checkpoint(trainer: &Trainer, dir: &Path) -> Result<()> {
    let tmp = dir.with_extension("tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(tmp.join("tensors"))?;
    let mut index = Vec::new();
    let groups: [(&str, Box<dyn Iterator<Item = (&String, &Tensor)>>); 4] = [
        ("param", Box::new(trainer.store.params())),
        ("buffer", Box::new(trainer.store.buffers())),
        ("adam_m", Box::new(trainer.optimizer.m.iter())),
        ("adam_v", Box::new(trainer.optimizer.v.iter())),
    ];
    for (kind, items) in groups {
        for (name, t) in items {
            let file = format!("tensors/{kind}.{name}.bin");
            write_blob(&tmp.join(&file), t)?;
            index.push(TensorEntry { name: name.clone(), kind: kind.to_string(), shape: t.shape().to_vec(), file });
        }
    }
    fs::write(tmp.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    fs::write(tmp.join("train.toml"), trainer.config.to_toml()?)?;
    let state = TrainState {
        epoch: trainer.epoch,
        step: trainer.step,
        total_steps: trainer.total_steps,
        adam_t: trainer.optimizer.t,
        best_valid: trainer.best_valid,
        rng_seed: trainer.rng.get_seed().to_vec(),
        rng_stream: trainer.rng.get_stream(),
        rng_word_pos: trainer.rng.get_word_pos().to_string(),
    };
    fs::write(tmp.join("state.json"), serde_json::to_string_pretty(&state)?)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

/// Restores a [`Trainer`] saved by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<Trainer> {
    let need = |f: &str| -> Result<PathBuf> {
        let p = dir.join(f);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingFile(p))
        }
    };
    let config: TrainConfig = toml::from_str(&fs::read_to_string(need("train.toml")?)?)?;
    let index: Vec<TensorEntry> = serde_json::from_str(&fs::read_to_string(need("index.json")?)?)?;
    let state: TrainState = serde_json::from_str(&fs::read_to_string(need("state.json")?)?)?;
    let model = Model::new(&config.model)?;
    let mut store = ParamStore::new();
    let mut optimizer = AdamW::new(config.weight_decay);
    optimizer.t = state.adam_t;
    for e in index {
        let t = read_blob(&dir.join(&e.file), &e.shape)?;
        match e.kind.as_str() {
            "param" => store.insert(e.name, t),
            "buffer" => store.insert_buffer(e.name, t),
            "adam_m" => {
                optimizer.m.insert(e.name, t);
            }
            "adam_v" => {
                optimizer.v.insert(e.name, t);
            }
            other => return Err(Error::Checkpoint(format!("unknown tensor kind `{other}`"))),
        }
    }
    let seed: [u8; 32] = state
        .rng_seed
        .as_slice()
        .try_into()
        .map_err(|_| Error::Checkpoint("RNG seed must be 32 bytes".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(state.rng_stream);
    rng.set_word_pos(state.rng_word_pos.parse().map_err(|_| Error::Checkpoint("bad RNG position".into()))?);
    Ok(Trainer {
        config,
        model,
        store,
        optimizer,
        rng,
        step: state.step,
        epoch: state.epoch,
        total_steps: state.total_steps,
        best_valid: state.best_valid,
    })
}
