//! Parameterized layers built on the autograd primitives.
//!
//! Each layer is a plain description (name prefix plus sizes). `init` writes
//! its parameters into a [`ParamStore`]; `forward` reads them back through a
//! [`Ctx`]. Initialization follows the usual fan-in uniform rule.

use ndarray::{s, Array2, Ix2, IxDyn};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{concat, sigmoid as sigm, Tensor, Var};
use crate::params::{Ctx, ParamStore};

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Reshapes a per-channel vector so it broadcasts against `rank`-D input
/// along `axis`.
pub fn channel_view<'g>(v: Var<'g>, rank: usize, axis: usize) -> Var<'g> {
    let c = v.shape()[0];
    let mut shape = vec![1; rank];
    shape[axis] = c;
    v.reshape(&shape)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub inp: usize,
    pub out: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, inp: usize, out: usize) -> Self {
        Self { name: name.into(), inp, out, bias: true }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let b = fan_in_bound(self.inp);
        store.insert(self.weight_name(), ParamStore::uniform(rng, &[self.out, self.inp], b));
        if self.bias {
            store.insert(self.bias_name(), ParamStore::uniform(rng, &[self.out], b));
        }
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let b = self.bias.then(|| ctx.p(&self.bias_name()));
        x.linear(ctx.p(&self.weight_name()), b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub name: String,
    pub inp: usize,
    pub out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub bias: bool,
}

impl Conv1d {
    pub fn new(name: impl Into<String>, inp: usize, out: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            inp,
            out,
            kernel,
            stride: 1,
            pad_left: 0,
            pad_right: 0,
            bias: true,
        }
    }

    pub fn pointwise(name: impl Into<String>, inp: usize, out: usize) -> Self {
        Self::new(name, inp, out, 1)
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, left: usize, right: usize) -> Self {
        self.pad_left = left;
        self.pad_right = right;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let b = fan_in_bound(self.inp * self.kernel);
        store.insert(self.weight_name(), ParamStore::uniform(rng, &[self.out, self.inp, self.kernel], b));
        if self.bias {
            store.insert(self.bias_name(), ParamStore::uniform(rng, &[self.out], b));
        }
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let b = self.bias.then(|| ctx.p(&self.bias_name()));
        x.conv1d(ctx.p(&self.weight_name()), b, self.stride, self.pad_left, self.pad_right)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub name: String,
    pub inp: usize,
    pub out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvTranspose1d {
    pub fn new(name: impl Into<String>, inp: usize, out: usize, kernel: usize, stride: usize) -> Self {
        Self { name: name.into(), inp, out, kernel, stride }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let b = fan_in_bound(self.out * self.kernel);
        store.insert(self.weight_name(), ParamStore::uniform(rng, &[self.inp, self.out, self.kernel], b));
        store.insert(self.bias_name(), ParamStore::uniform(rng, &[self.out], b));
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Var<'g> {
        x.conv_transpose1d(ctx.p(&self.weight_name()), Some(ctx.p(&self.bias_name())), self.stride)
    }
}

/// Normalization over one feature axis with a per-feature affine map.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim, eps: 1e-5 }
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.insert(format!("{}.gain", self.name), ParamStore::filled(&[self.dim], 1.0));
        store.insert(format!("{}.bias", self.name), ParamStore::filled(&[self.dim], 0.0));
    }

    /// Normalizes `x` over `axis` (which must have length `dim`).
    pub fn forward_axis<'g>(&self, ctx: Ctx<'g>, x: Var<'g>, axis: usize) -> Var<'g> {
        let rank = x.ndim();
        assert_eq!(x.shape()[axis], self.dim, "{}: normalized axis", self.name);
        let xn = x.standardize(&[axis], self.eps);
        let g = channel_view(ctx.p(&format!("{}.gain", self.name)), rank, axis);
        let b = channel_view(ctx.p(&format!("{}.bias", self.name)), rank, axis);
        xn.mul(g).add(b)
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let last = x.ndim() - 1;
        self.forward_axis(ctx, x, last)
    }
}

/// Group normalization of `(B, C, T)` with a per-channel affine map.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub name: String,
    pub groups: usize,
    pub channels: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new(name: impl Into<String>, groups: usize, channels: usize) -> Self {
        assert!(groups > 0 && channels % groups == 0, "groups {groups} must divide channels {channels}");
        Self { name: name.into(), groups, channels, eps: 1e-5 }
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.insert(format!("{}.gain", self.name), ParamStore::filled(&[self.channels], 1.0));
        store.insert(format!("{}.bias", self.name), ParamStore::filled(&[self.channels], 0.0));
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let sh = x.shape();
        let (b, c, t) = (sh[0], sh[1], sh[2]);
        let xn = x
            .reshape(&[b, self.groups, c / self.groups, t])
            .standardize(&[2, 3], self.eps)
            .reshape(&[b, c, t]);
        let g = channel_view(ctx.p(&format!("{}.gain", self.name)), 3, 1);
        let bias = channel_view(ctx.p(&format!("{}.bias", self.name)), 3, 1);
        xn.mul(g).add(bias)
    }
}

/// Batch normalization of `(B, C, T)`: batch statistics while training,
/// running statistics otherwise.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub name: String,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self { name: name.into(), channels, momentum: 0.1, eps: 1e-5 }
    }

    fn key(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.name)
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.insert(self.key("gain"), ParamStore::filled(&[self.channels], 1.0));
        store.insert(self.key("bias"), ParamStore::filled(&[self.channels], 0.0));
        store.insert_buffer(self.key("running_mean"), ParamStore::filled(&[self.channels], 0.0));
        store.insert_buffer(self.key("running_var"), ParamStore::filled(&[self.channels], 1.0));
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let sh = x.shape();
        let c = sh[1];
        let xn = if ctx.train {
            let (xn, mean, var) = x.standardize_with_stats(&[0, 2], self.eps);
            let n = (sh[0] * sh[2]) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let rm = ctx.store.buffer(&self.key("running_mean")).expect("running mean");
            let rv = ctx.store.buffer(&self.key("running_var")).expect("running var");
            let m = self.momentum;
            let new_rm = Tensor::from_shape_fn(IxDyn(&[c]), |i| (1.0 - m) * rm[[i[0]]] + m * mean[i[0]]);
            let new_rv = Tensor::from_shape_fn(IxDyn(&[c]), |i| (1.0 - m) * rv[[i[0]]] + m * var[i[0]] * unbias);
            ctx.graph.stash_buffer(&self.key("running_mean"), new_rm);
            ctx.graph.stash_buffer(&self.key("running_var"), new_rv);
            xn
        } else {
            let rm = ctx.store.buffer(&self.key("running_mean")).expect("running mean");
            let rv = ctx.store.buffer(&self.key("running_var")).expect("running var");
            let shift = ctx.constant(rm.clone().into_shape_with_order(IxDyn(&[1, c, 1])).expect("shape"));
            let inv = rv.mapv(|v| 1.0 / (v + self.eps).sqrt());
            let scale = ctx.constant(inv.into_shape_with_order(IxDyn(&[1, c, 1])).expect("shape"));
            x.sub(shift).mul(scale)
        };
        let g = channel_view(ctx.p(&self.key("gain")), 3, 1);
        let b = channel_view(ctx.p(&self.key("bias")), 3, 1);
        xn.mul(g).add(b)
    }
}

/// PReLU with one slope per channel (axis 1).
#[derive(Clone, Debug)]
pub struct PRelu {
    pub name: String,
    pub channels: usize,
}

impl PRelu {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self { name: name.into(), channels }
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.insert(format!("{}.slope", self.name), ParamStore::filled(&[self.channels], 0.25));
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Var<'g> {
        x.prelu(ctx.p(&format!("{}.slope", self.name)))
    }
}

/// Bidirectional single-layer LSTM over `(S, L, in)` sequences, returning
/// `(S, L, 2·hidden)` with forward states first.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub name: String,
    pub inp: usize,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new(name: impl Into<String>, inp: usize, hidden: usize) -> Self {
        Self { name: name.into(), inp, hidden }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let b = fan_in_bound(self.hidden);
        let h4 = 4 * self.hidden;
        for dir in ["fwd", "bwd"] {
            store.insert(format!("{}.{dir}.w_ih", self.name), ParamStore::uniform(rng, &[h4, self.inp], b));
            store.insert(format!("{}.{dir}.w_hh", self.name), ParamStore::uniform(rng, &[h4, self.hidden], b));
            store.insert(format!("{}.{dir}.bias", self.name), ParamStore::uniform(rng, &[h4], b));
        }
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let run = |dir: &str, input: Var<'g>| {
            let gx = input.linear(
                ctx.p(&format!("{}.{dir}.w_ih", self.name)),
                Some(ctx.p(&format!("{}.{dir}.bias", self.name))),
            );
            lstm_recurrence(gx, ctx.p(&format!("{}.{dir}.w_hh", self.name)))
        };
        let fwd = run("fwd", x);
        let bwd = run("bwd", x.flip(1)).flip(1);
        concat(&[fwd, bwd], 2)
    }
}

/// LSTM recurrence given precomputed input gates `(S, L, 4H)` (order i, f,
/// g, o) and the recurrent matrix `(4H, H)`; zero initial state.
pub fn lstm_recurrence<'g>(gx: Var<'g>, w_hh: Var<'g>) -> Var<'g> {
    let gxv = gx.value();
    let wv = w_hh.value();
    let sh = gxv.shape();
    let (s_len, l, h4) = (sh[0], sh[1], sh[2]);
    let h = h4 / 4;
    assert_eq!(wv.shape(), &[h4, h], "lstm recurrent weight");
    let w2 = wv.view().into_dimensionality::<Ix2>().expect("2-D").to_owned();

    // acts[t] holds (S, 4H) activated gates; cells[t] and hs[t] are (S, H).
    let mut acts = Vec::with_capacity(l);
    let mut cells = Vec::with_capacity(l);
    let mut hs = Vec::with_capacity(l);
    let mut hprev = Array2::<f64>::zeros((s_len, h));
    let mut cprev = Array2::<f64>::zeros((s_len, h));
    let mut out = Tensor::zeros(IxDyn(&[s_len, l, h]));
    for t in 0..l {
        let mut gates = gxv.slice(s![.., t, ..]).to_owned();
        gates += &hprev.dot(&w2.t());
        let mut c = Array2::<f64>::zeros((s_len, h));
        let mut hn = Array2::<f64>::zeros((s_len, h));
        for si in 0..s_len {
            let mut row = gates.row_mut(si);
            for j in 0..h {
                let i_g = sigm(row[j]);
                let f_g = sigm(row[h + j]);
                let g_g = row[2 * h + j].tanh();
                let o_g = sigm(row[3 * h + j]);
                row[j] = i_g;
                row[h + j] = f_g;
                row[2 * h + j] = g_g;
                row[3 * h + j] = o_g;
                let cv = f_g * cprev[[si, j]] + i_g * g_g;
                c[[si, j]] = cv;
                hn[[si, j]] = o_g * cv.tanh();
            }
        }
        out.slice_mut(s![.., t, ..]).assign(&hn);
        acts.push(gates);
        cells.push(c.clone());
        hs.push(hn.clone());
        hprev = hn;
        cprev = c;
    }
    let graph = gx.graph();
    graph.op(out, &[gx, w_hh], move |g, need| {
        let mut ggx = Tensor::zeros(IxDyn(&[s_len, l, h4]));
        let mut gw = Array2::<f64>::zeros((h4, h));
        let mut dh_next = Array2::<f64>::zeros((s_len, h));
        let mut dc_next = Array2::<f64>::zeros((s_len, h));
        for t in (0..l).rev() {
            let a = &acts[t];
            let c = &cells[t];
            let mut dgates = Array2::<f64>::zeros((s_len, h4));
            for si in 0..s_len {
                for j in 0..h {
                    let dh = g[[si, t, j]] + dh_next[[si, j]];
                    let (i_g, f_g, g_g, o_g) = (a[[si, j]], a[[si, h + j]], a[[si, 2 * h + j]], a[[si, 3 * h + j]]);
                    let tc = c[[si, j]].tanh();
                    let cp = if t > 0 { cells[t - 1][[si, j]] } else { 0.0 };
                    let dc = dc_next[[si, j]] + dh * o_g * (1.0 - tc * tc);
                    dgates[[si, j]] = dc * g_g * i_g * (1.0 - i_g);
                    dgates[[si, h + j]] = dc * cp * f_g * (1.0 - f_g);
                    dgates[[si, 2 * h + j]] = dc * i_g * (1.0 - g_g * g_g);
                    dgates[[si, 3 * h + j]] = dh * tc * o_g * (1.0 - o_g);
                    dc_next[[si, j]] = dc * f_g;
                }
            }
            if t > 0 {
                gw += &dgates.t().dot(&hs[t - 1]);
            }
            dh_next = dgates.dot(&w2);
            ggx.slice_mut(s![.., t, ..]).assign(&dgates);
        }
        vec![need[0].then_some(ggx), need[1].then(|| gw.into_dyn())]
    })
}
