//! EEG encoder: Chebyshev graph convolutions over the electrode graph,
//! channel-wise normalization and a pooled residual convolution stack.
//!
//! Input `(B, electrodes, samples)`; output `(B, N_e, samples / 8)` for three
//! residual blocks.

use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{concat, Var};
use crate::config::{GraphMode, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{channel_view, BatchNorm1d, Conv1d, PRelu};
use crate::params::{Ctx, ParamStore};

/// Electrode adjacency and its rescaled Laplacian.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeGraph {
    pub adjacency: Array2<f64>,
    /// `2L/λ_max − I` with `L` the symmetric-normalized Laplacian.
    pub scaled_laplacian: Array2<f64>,
    pub lambda_max: f64,
}

impl ElectrodeGraph {
    pub fn n_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    /// Builds the graph from an arbitrary symmetric nonnegative adjacency.
    pub fn from_adjacency(adjacency: Array2<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if n < 2 || adjacency.ncols() != n {
            return Err(Error::Invalid(format!("adjacency must be square with N >= 2, got {:?}", adjacency.dim())));
        }
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (adjacency[[i, j]], adjacency[[j, i]]);
                if !a.is_finite() || a < 0.0 || (a - b).abs() > 1e-12 {
                    return Err(Error::Invalid("adjacency must be finite, nonnegative and symmetric".into()));
                }
            }
            if adjacency[[i, i]] != 0.0 {
                return Err(Error::Invalid("adjacency diagonal must be zero".into()));
            }
        }
        // Isolated nodes contribute an identity row to L.
        let inv_sqrt: Vec<f64> = adjacency
            .rows()
            .into_iter()
            .map(|r| {
                let d = r.sum();
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let lap = Array2::from_shape_fn((n, n), |(i, j)| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - inv_sqrt[i] * adjacency[[i, j]] * inv_sqrt[j]
        });
        let lambda_max = largest_eigenvalue(lap.view());
        let scaled_laplacian = Array2::from_shape_fn((n, n), |(i, j)| {
            let id = if i == j { 1.0 } else { 0.0 };
            2.0 * lap[[i, j]] / lambda_max - id
        });
        Ok(Self { adjacency, scaled_laplacian, lambda_max })
    }
}

fn largest_eigenvalue(m: ArrayView2<'_, f64>) -> f64 {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(dm);
    eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Builds the electrode graph for `n` electrodes. Distance mode needs an
/// `(n, 3)` position array and weights edges by `exp(−d²/σ²)` with `σ` the
/// median pairwise distance.
pub fn build_graph(n: usize, positions: Option<ArrayView2<'_, f64>>, mode: GraphMode) -> Result<ElectrodeGraph> {
    if n < 2 {
        return Err(Error::Invalid(format!("electrode graph needs at least two nodes, got {n}")));
    }
    let adjacency = match mode {
        GraphMode::Full => Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 }),
        GraphMode::Distance => {
            let p = positions.ok_or_else(|| Error::Invalid("distance graph requires electrode positions".into()))?;
            if p.nrows() != n {
                return Err(Error::Invalid(format!("{} positions for {n} electrodes", p.nrows())));
            }
            let dist = |i: usize, j: usize| {
                p.row(i)
                    .iter()
                    .zip(p.row(j).iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            let pairs: Vec<f64> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| dist(i, j)).collect();
            let sigma = median(pairs);
            if !(sigma > 0.0) {
                return Err(Error::Invalid("electrode positions are degenerate".into()));
            }
            Array2::from_shape_fn((n, n), |(i, j)| {
                if i == j {
                    0.0
                } else {
                    (-dist(i, j).powi(2) / (sigma * sigma)).exp()
                }
            })
        }
    };
    ElectrodeGraph::from_adjacency(adjacency)
}

/// `Σ_k T_k(L̂)·X·Θ_k` for `x: (B, N, F)`, `laplacian: (N, N)` (symmetric)
/// and `theta: (K, F, F')`.
pub fn cheb_graph_conv<'g>(x: Var<'g>, laplacian: Var<'g>, theta: Var<'g>) -> Result<Var<'g>> {
    let (xs, ls, ts) = (x.shape(), laplacian.shape(), theta.shape());
    if xs.len() != 3 || ls != [xs[1], xs[1]] || ts.len() != 3 || ts[1] != xs[2] {
        return Err(Error::shape(
            "cheb_graph_conv",
            format!("x {xs:?}, laplacian {ls:?}, weights {ts:?}"),
        ));
    }
    if theta.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "graph convolution weights".into(), step: None });
    }
    let (k_order, f, f_out) = (ts[0], ts[1], ts[2]);
    let weight = |k: usize| theta.slice_axis(0, k, k + 1).reshape(&[f, f_out]);
    // Polynomials act on the node axis; keep nodes last so that the shared
    // Laplacian multiplies from the right (it is symmetric).
    let xt = x.permute(&[0, 2, 1]);
    let mut prev = xt;
    let mut out = x.matmul(weight(0));
    let mut cur: Option<Var<'g>> = None;
    for k in 1..k_order {
        let next = match cur {
            None => xt.matmul(laplacian),
            Some(c) => c.matmul(laplacian).scale(2.0).sub(prev),
        };
        if let Some(c) = cur {
            prev = c;
        }
        cur = Some(next);
        out = out.add(next.permute(&[0, 2, 1]).matmul(weight(k)));
    }
    Ok(out)
}

/// Per-(batch, channel) standardization over time with a per-channel affine
/// map; `ε = 1e−8`.
pub fn channelwise_norm<'g>(x: Var<'g>, gain: Var<'g>, bias: Var<'g>) -> Var<'g> {
    let xn = x.standardize(&[2], 1e-8);
    xn.mul(channel_view(gain, 3, 1)).add(channel_view(bias, 3, 1))
}

/// Two conv–BN stages with PReLU, a residual connection and 2× max pooling.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub name: String,
    pub conv1: Conv1d,
    pub bn1: BatchNorm1d,
    pub act1: PRelu,
    pub conv2: Conv1d,
    pub bn2: BatchNorm1d,
    pub act2: PRelu,
    pub shortcut: Option<Conv1d>,
}

impl ResBlock {
    pub fn new(name: impl Into<String>, inp: usize, out: usize) -> Self {
        let name = name.into();
        Self {
            conv1: Conv1d::new(format!("{name}.conv1"), inp, out, 3).padding(1, 1),
            bn1: BatchNorm1d::new(format!("{name}.bn1"), out),
            act1: PRelu::new(format!("{name}.act1"), out),
            conv2: Conv1d::new(format!("{name}.conv2"), out, out, 3).padding(1, 1),
            bn2: BatchNorm1d::new(format!("{name}.bn2"), out),
            act2: PRelu::new(format!("{name}.act2"), out),
            shortcut: (inp != out).then(|| Conv1d::pointwise(format!("{name}.shortcut"), inp, out)),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.conv1.init(store, rng);
        self.bn1.init(store);
        self.act1.init(store);
        self.conv2.init(store, rng);
        self.bn2.init(store);
        self.act2.init(store);
        if let Some(s) = &self.shortcut {
            s.init(store, rng);
        }
    }

    /// `(B, C_in, T)` → `(B, C_out, ⌈T/2⌉)`.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, r: Var<'g>) -> Var<'g> {
        let t = r.shape()[2];
        let r = if t % 2 == 1 { r.pad_axis(2, 0, 1) } else { r };
        let h = self.act1.forward(ctx, self.bn1.forward(ctx, self.conv1.forward(ctx, r)));
        let h = self.bn2.forward(ctx, self.conv2.forward(ctx, h));
        let skip = match &self.shortcut {
            Some(s) => s.forward(ctx, r),
            None => r,
        };
        self.act2.forward(ctx, skip.add(h)).max_pool2()
    }
}

pub const LAPLACIAN_BUFFER: &str = "eeg.graph.laplacian";

#[derive(Clone, Debug)]
pub struct EegEncoder {
    pub electrodes: usize,
    /// Per-node feature length of the graph layers (training window length).
    pub window: usize,
    pub cheb_order: usize,
    pub gcn_layers: usize,
    pub input_proj: Conv1d,
    pub blocks: Vec<ResBlock>,
    pub output_proj: Conv1d,
}

impl EegEncoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        let ne = cfg.eeg_channels;
        Self {
            electrodes: cfg.n_electrodes,
            window: cfg.eeg_len(),
            cheb_order: cfg.cheb_order,
            gcn_layers: 3,
            input_proj: Conv1d::pointwise("eeg.input_proj", cfg.n_electrodes, ne),
            blocks: (0..cfg.res_blocks).map(|i| ResBlock::new(format!("eeg.res{i}"), ne, ne)).collect(),
            output_proj: Conv1d::pointwise("eeg.output_proj", ne, ne),
        }
    }

    pub fn gcn_weight_name(layer: usize) -> String {
        format!("eeg.gcn{layer}.theta")
    }

    /// Writes parameters and the fixed graph into `store`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng, graph: &ElectrodeGraph) -> Result<()> {
        if graph.n_nodes() != self.electrodes {
            return Err(Error::Config(format!(
                "graph has {} nodes, model expects {} electrodes",
                graph.n_nodes(),
                self.electrodes
            )));
        }
        let bound = 1.0 / ((self.cheb_order * self.window) as f64).sqrt();
        for l in 0..self.gcn_layers {
            store.insert(
                Self::gcn_weight_name(l),
                ParamStore::uniform(rng, &[self.cheb_order, self.window, self.window], bound),
            );
        }
        store.insert("eeg.norm.gain", ParamStore::filled(&[self.electrodes], 1.0));
        store.insert("eeg.norm.bias", ParamStore::filled(&[self.electrodes], 0.0));
        self.input_proj.init(store, rng);
        for b in &self.blocks {
            b.init(store, rng);
        }
        self.output_proj.init(store, rng);
        store.insert_buffer(LAPLACIAN_BUFFER, graph.scaled_laplacian.clone().into_dyn());
        Ok(())
    }

    /// Output frames for `samples` input samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        samples.div_ceil(1 << self.blocks.len())
    }

    /// `(B, electrodes, window)` → `(B, N_e, window / 8)`.
    fn encode_window<'g>(&self, ctx: Ctx<'g>, e: Var<'g>) -> Result<Var<'g>> {
        let lap = ctx.constant(
            ctx.store
                .buffer(LAPLACIAN_BUFFER)
                .ok_or_else(|| Error::Config("missing electrode graph".into()))?
                .clone(),
        );
        let mut h = e;
        for l in 0..self.gcn_layers {
            if l > 0 {
                h = h.relu();
            }
            h = cheb_graph_conv(h, lap, ctx.p(&Self::gcn_weight_name(l)))?;
        }
        let h = channelwise_norm(h, ctx.p("eeg.norm.gain"), ctx.p("eeg.norm.bias"));
        let mut h = self.input_proj.forward(ctx, h);
        for b in &self.blocks {
            h = b.forward(ctx, h);
        }
        Ok(self.output_proj.forward(ctx, h))
    }

    /// Encodes `(B, electrodes, samples)`. Inputs longer or shorter than the
    /// training window are split into zero-padded windows whose embeddings
    /// are concatenated and trimmed to `⌈samples / 8⌉` frames.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, e: Var<'g>) -> Result<Var<'g>> {
        let sh = e.shape();
        if sh.len() != 3 || sh[1] != self.electrodes {
            return Err(Error::shape(
                "eeg_encode",
                format!("expected (B, {}, T), got {sh:?}", self.electrodes),
            ));
        }
        if e.value().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "EEG input".into(), step: None });
        }
        let t = sh[2];
        if t == self.window {
            return self.encode_window(ctx, e);
        }
        let n_win = t.div_ceil(self.window);
        let padded = e.pad_axis(2, 0, n_win * self.window - t);
        let mut parts = Vec::with_capacity(n_win);
        for w in 0..n_win {
            parts.push(self.encode_window(ctx, padded.slice_axis(2, w * self.window, (w + 1) * self.window))?);
        }
        let joined = if parts.len() == 1 { parts[0] } else { concat(&parts, 2) };
        Ok(joined.slice_axis(2, 0, self.frames_for(t)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Graph, Tensor};
    use crate::testing::{check_gradients, randn, GradCheckOptions};
    use ndarray::{array, Axis, IxDyn};
    use rand::SeedableRng;

    fn dense(x: &Array2<f64>, lap: &Array2<f64>, theta: &Tensor) -> Array2<f64> {
        let n = lap.nrows();
        let (k_order, f, fo) = (theta.shape()[0], theta.shape()[1], theta.shape()[2]);
        let mut polys = vec![Array2::<f64>::eye(n), lap.clone()];
        for k in 2..k_order {
            let p = 2.0 * lap.dot(&polys[k - 1]) - &polys[k - 2];
            polys.push(p);
        }
        let mut out = Array2::<f64>::zeros((x.nrows(), fo));
        for (k, p) in polys.iter().take(k_order).enumerate() {
            let th = theta.index_axis(Axis(0), k).to_owned().into_shape_with_order((f, fo)).unwrap();
            out = out + p.dot(x).dot(&th);
        }
        out
    }

    #[test]
    fn two_node_full_graph() {
        let g = build_graph(2, None, GraphMode::Full).unwrap();
        assert_eq!(g.adjacency, array![[0.0, 1.0], [1.0, 0.0]]);
        assert!((g.lambda_max - 2.0).abs() < 1e-12);
        let want = array![[0.0, -1.0], [-1.0, 0.0]];
        assert!(g.scaled_laplacian.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn distance_graph_needs_positions() {
        assert!(build_graph(4, None, GraphMode::Distance).is_err());
        assert!(build_graph(1, None, GraphMode::Full).is_err());
    }

    #[test]
    fn cheb_matches_dense_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pos = randn(&mut rng, &[4, 3], 1.0).into_dimensionality::<ndarray::Ix2>().unwrap();
        let graph = build_graph(4, Some(pos.view()), GraphMode::Distance).unwrap();
        let x = randn(&mut rng, &[2, 4, 2], 1.0);
        let theta = randn(&mut rng, &[3, 2, 2], 1.0);
        let g = Graph::inference();
        let lap = g.constant(graph.scaled_laplacian.clone().into_dyn());
        let y = cheb_graph_conv(g.constant(x.clone()), lap, g.constant(theta.clone())).unwrap();
        for b in 0..2 {
            let xb = x.index_axis(Axis(0), b).to_owned().into_dimensionality().unwrap();
            let want = dense(&xb, &graph.scaled_laplacian, &theta);
            let got = y.value().index_axis(Axis(0), b).to_owned();
            for (a, w) in got.iter().zip(want.iter()) {
                assert!((a - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn res_block_zero_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = ResBlock::new("r", 3, 3);
        let mut store = ParamStore::new();
        block.init(&mut store, &mut rng);
        store.zero_prefix("r.conv");
        let x = randn(&mut rng, &[2, 3, 8], 1.0);
        let g = Graph::inference();
        let y = block.forward(Ctx::new(&g, &store, true), g.constant(x.clone()));
        let want = Tensor::from_shape_fn(IxDyn(&[2, 3, 4]), |i| {
            let pr = |v: f64| if v > 0.0 { v } else { 0.25 * v };
            pr(x[[i[0], i[1], 2 * i[2]]]).max(pr(x[[i[0], i[1], 2 * i[2] + 1]]))
        });
        assert!(y.value().iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn encoder_shape_and_windowing() {
        let cfg = ModelConfig::miniature();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = EegEncoder::new(&cfg);
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut rng, &build_graph(cfg.n_electrodes, None, GraphMode::Full).unwrap()).unwrap();
        let g = Graph::inference();
        let ctx = Ctx::new(&g, &store, false);
        let e = g.constant(randn(&mut rng, &[2, cfg.n_electrodes, cfg.eeg_len()], 1.0));
        assert_eq!(enc.forward(ctx, e).unwrap().shape(), vec![2, cfg.eeg_channels, cfg.eeg_frames()]);
        let long = g.constant(randn(&mut rng, &[1, cfg.n_electrodes, 3 * cfg.eeg_len() + 5], 1.0));
        assert_eq!(enc.forward(ctx, long).unwrap().shape(), vec![1, cfg.eeg_channels, (3 * cfg.eeg_len() + 5).div_ceil(8)]);
    }

    #[test]
    fn encoder_gradients() {
        let cfg = ModelConfig { n_electrodes: 4, eeg_channels: 4, segment_seconds: 0.125, ..ModelConfig::miniature() };
        assert_eq!(cfg.eeg_len(), 16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = EegEncoder::new(&cfg);
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut rng, &build_graph(4, None, GraphMode::Full).unwrap()).unwrap();
        let e = randn(&mut rng, &[2, 4, 16], 1.0);
        let report = check_gradients(
            &store,
            &[e],
            move |ctx, v| enc.forward(ctx, v[0]).unwrap().sum_all(),
            &GradCheckOptions::default(),
        );
        assert!(report.max_error() < 1e-4, "{:?}", report.worst());
    }
}
