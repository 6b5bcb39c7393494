use ndarray::{s, Array2, ArrayView2, Axis, Ix2, IxDyn};

use super::{zeros, Tensor, Var};

fn as2(t: &Tensor, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    t.view()
        .into_shape_with_order((rows, cols))
        .expect("standard layout")
}

impl<'g> Var<'g> {
    /// Matrix product over the last two axes. `other` is either 2-D (shared
    /// across all leading axes of `self`) or has the same leading axes.
    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        self.same_graph(&other);
        let a = self.value();
        let b = other.value();
        let ash = a.shape().to_vec();
        let bsh = b.shape().to_vec();
        let nd = ash.len();
        assert!(nd >= 2 && bsh.len() >= 2, "matmul needs rank >= 2");
        let (m, k) = (ash[nd - 2], ash[nd - 1]);
        let n = *bsh.last().expect("rank");
        assert_eq!(bsh[bsh.len() - 2], k, "matmul inner dims {ash:?} x {bsh:?}");
        let mut out_shape = ash.clone();
        out_shape[nd - 1] = n;

        if bsh.len() == 2 {
            let p = a.len() / k;
            let y = as2(&a, p, k).dot(&b.view().into_dimensionality::<Ix2>().expect("2-D"));
            let y = reshape_std(y, &out_shape);
            return self.graph.op(y, &[self, other], move |g, need| {
                let g2 = as2(g, p, n);
                let b2 = b.view().into_dimensionality::<Ix2>().expect("2-D");
                let ga = need[0].then(|| {
                    reshape_std(g2.dot(&b2.t()), &ash)
                });
                let gb = need[1].then(|| as2(&a, p, k).t().dot(&g2).into_dyn());
                vec![ga, gb]
            });
        }

        assert_eq!(ash[..nd - 2], bsh[..bsh.len() - 2], "matmul batch dims");
        let batch: usize = ash[..nd - 2].iter().product();
        let mut y = zeros(&out_shape);
        {
            let a3 = a.view().into_shape_with_order((batch, m, k)).expect("layout");
            let b3 = b.view().into_shape_with_order((batch, k, n)).expect("layout");
            let mut y3 = y.view_mut().into_shape_with_order((batch, m, n)).expect("layout");
            for i in 0..batch {
                y3.index_axis_mut(Axis(0), i)
                    .assign(&a3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i)));
            }
        }
        self.graph.op(y, &[self, other], move |g, need| {
            let a3 = a.view().into_shape_with_order((batch, m, k)).expect("layout");
            let b3 = b.view().into_shape_with_order((batch, k, n)).expect("layout");
            let g3 = g.view().into_shape_with_order((batch, m, n)).expect("layout");
            let mut ga = need[0].then(|| zeros(&ash));
            let mut gb = need[1].then(|| zeros(&bsh));
            for i in 0..batch {
                let gi = g3.index_axis(Axis(0), i);
                if let Some(ga) = ga.as_mut() {
                    let mut v = ga.view_mut().into_shape_with_order((batch, m, k)).expect("layout");
                    v.index_axis_mut(Axis(0), i).assign(&gi.dot(&b3.index_axis(Axis(0), i).t()));
                }
                if let Some(gb) = gb.as_mut() {
                    let mut v = gb.view_mut().into_shape_with_order((batch, k, n)).expect("layout");
                    v.index_axis_mut(Axis(0), i).assign(&a3.index_axis(Axis(0), i).t().dot(&gi));
                }
            }
            vec![ga, gb]
        })
    }

    /// Affine map on the last axis: `x · wᵀ + b` with `w` of shape `(out, in)`.
    pub fn linear(self, w: Var<'g>, b: Option<Var<'g>>) -> Var<'g> {
        let x = self.value();
        let wv = w.value();
        let xs = x.shape().to_vec();
        let inp = *xs.last().expect("rank");
        let (out, win) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(win, inp, "linear: input width {inp} vs weight {:?}", wv.shape());
        let p = x.len() / inp;
        let w2 = wv.view().into_dimensionality::<Ix2>().expect("2-D weight");
        let mut y2 = as2(&x, p, inp).dot(&w2.t());
        if let Some(b) = &b {
            let bv = b.value();
            assert_eq!(bv.shape(), &[out], "linear bias");
            y2 += &bv.view().into_dimensionality::<ndarray::Ix1>().expect("1-D");
        }
        let mut ys = xs.clone();
        *ys.last_mut().expect("rank") = out;
        let y = reshape_std(y2, &ys);
        let mut parents = vec![self, w];
        if let Some(b) = b {
            parents.push(b);
        }
        self.graph.op(y, &parents, move |g, need| {
            let g2 = as2(g, p, out);
            let w2 = wv.view().into_dimensionality::<Ix2>().expect("2-D");
            let mut res = vec![
                need[0].then(|| reshape_std(g2.dot(&w2), &xs)),
                need[1].then(|| g2.t().dot(&as2(&x, p, inp)).into_dyn()),
            ];
            if need.len() > 2 {
                res.push(need[2].then(|| g2.sum_axis(Axis(0)).into_dyn()));
            }
            res
        })
    }

    /// 1-D convolution of `(B, Cin, T)` with `(Cout, Cin, K)` weights.
    pub fn conv1d(self, w: Var<'g>, b: Option<Var<'g>>, stride: usize, pad_left: usize, pad_right: usize) -> Var<'g> {
        let x = self.value();
        let wv = w.value();
        let (bsz, cin, t) = dims3(&x);
        let (cout, wcin, k) = dims3(&wv);
        assert_eq!(cin, wcin, "conv1d channels: input {cin}, weight {wcin}");
        let tp = t + pad_left + pad_right;
        assert!(tp >= k && stride > 0, "conv1d: padded length {tp} < kernel {k}");
        let tout = (tp - k) / stride + 1;
        let geom = ConvGeom { cin, t, k, stride, pad_left, tout };
        let w2 = as2(&wv, cout, cin * k).to_owned();
        let mut y = zeros(&[bsz, cout, tout]);
        for bi in 0..bsz {
            let xb = x.index_axis(Axis(0), bi);
            let xs = xb.as_slice().expect("contiguous");
            let yb = if k == 1 && stride == 1 && pad_left == 0 && pad_right == 0 {
                w2.dot(&as2_slice(xs, cin, t))
            } else {
                w2.dot(&geom.im2col(xs).t())
            };
            y.slice_mut(s![bi, .., ..]).assign(&yb);
        }
        if let Some(b) = &b {
            let bv = b.value();
            assert_eq!(bv.shape(), &[cout], "conv1d bias");
            for (co, &bc) in bv.iter().enumerate() {
                y.slice_mut(s![.., co, ..]).mapv_inplace(|v| v + bc);
            }
        }
        let mut parents = vec![self, w];
        if let Some(b) = b {
            parents.push(b);
        }
        self.graph.op(y, &parents, move |g, need| {
            let mut gx = need[0].then(|| zeros(&[bsz, cin, t]));
            let mut gw = need[1].then(|| Array2::<f64>::zeros((cout, cin * k)));
            for bi in 0..bsz {
                let gb = g.slice(s![bi, .., ..]);
                let xb = x.index_axis(Axis(0), bi);
                let xs = xb.as_slice().expect("contiguous");
                let pointwise = k == 1 && stride == 1 && pad_left == 0 && pad_right == 0;
                if let Some(gw) = gw.as_mut() {
                    if pointwise {
                        *gw += &gb.dot(&as2_slice(xs, cin, t).t());
                    } else {
                        *gw += &gb.dot(&geom.im2col(xs));
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    let gcols = gb.t().dot(&w2);
                    let mut gxb = gx.index_axis_mut(Axis(0), bi);
                    let gxs = gxb.as_slice_mut().expect("contiguous");
                    if pointwise {
                        for (ti, row) in gcols.outer_iter().enumerate() {
                            for c in 0..cin {
                                gxs[c * t + ti] += row[c];
                            }
                        }
                    } else {
                        geom.col2im(&gcols, gxs);
                    }
                }
            }
            let mut res = vec![gx, gw.map(|gw| reshape_std(gw, &[cout, cin, k]))];
            if need.len() > 2 {
                res.push(need[2].then(|| g.sum_axis(Axis(2)).sum_axis(Axis(0))));
            }
            res
        })
    }

    /// Transposed 1-D convolution of `(B, Cin, T)` with `(Cin, Cout, K)`
    /// weights; output length `(T - 1)·stride + K`.
    pub fn conv_transpose1d(self, w: Var<'g>, b: Option<Var<'g>>, stride: usize) -> Var<'g> {
        let x = self.value();
        let wv = w.value();
        let (bsz, cin, tin) = dims3(&x);
        let (wcin, cout, k) = dims3(&wv);
        assert_eq!(cin, wcin, "conv_transpose1d channels");
        let tout = (tin - 1) * stride + k;
        let w2 = as2(&wv, cin, cout * k).to_owned();
        let mut y = zeros(&[bsz, cout, tout]);
        for bi in 0..bsz {
            let xb = x.slice(s![bi, .., ..]);
            let cols = xb.t().dot(&w2); // (tin, cout*k)
            let mut yb = y.index_axis_mut(Axis(0), bi);
            let ys = yb.as_slice_mut().expect("contiguous");
            for (ti, row) in cols.outer_iter().enumerate() {
                for co in 0..cout {
                    let base = co * tout + ti * stride;
                    for kk in 0..k {
                        ys[base + kk] += row[co * k + kk];
                    }
                }
            }
        }
        if let Some(b) = &b {
            let bv = b.value();
            for (co, &bc) in bv.iter().enumerate() {
                y.slice_mut(s![.., co, ..]).mapv_inplace(|v| v + bc);
            }
        }
        let mut parents = vec![self, w];
        if let Some(b) = b {
            parents.push(b);
        }
        self.graph.op(y, &parents, move |g, need| {
            let mut gx = need[0].then(|| zeros(&[bsz, cin, tin]));
            let mut gw = need[1].then(|| Array2::<f64>::zeros((cin, cout * k)));
            for bi in 0..bsz {
                let gb = g.index_axis(Axis(0), bi);
                let gs = gb.as_slice().expect("contiguous");
                let mut gcols = Array2::<f64>::zeros((tin, cout * k));
                for (ti, mut row) in gcols.outer_iter_mut().enumerate() {
                    for co in 0..cout {
                        let base = co * tout + ti * stride;
                        for kk in 0..k {
                            row[co * k + kk] = gs[base + kk];
                        }
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    gx.slice_mut(s![bi, .., ..]).assign(&w2.dot(&gcols.t()));
                }
                if let Some(gw) = gw.as_mut() {
                    *gw += &x.slice(s![bi, .., ..]).dot(&gcols);
                }
            }
            let mut res = vec![gx, gw.map(|gw| reshape_std(gw, &[cin, cout, k]))];
            if need.len() > 2 {
                res.push(need[2].then(|| g.sum_axis(Axis(2)).sum_axis(Axis(0))));
            }
            res
        })
    }

    /// Max pooling with kernel 2 and stride 2 over the last axis (even length).
    pub fn max_pool2(self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let t = *shape.last().expect("rank");
        assert!(t % 2 == 0, "max_pool2 needs an even length, got {t}");
        let mut out_shape = shape.clone();
        *out_shape.last_mut().expect("rank") = t / 2;
        let xs = x.as_slice().expect("contiguous");
        let mut y = Vec::with_capacity(xs.len() / 2);
        let mut pick_right = Vec::with_capacity(xs.len() / 2);
        for pair in xs.chunks_exact(2) {
            let right = pair[1] > pair[0];
            pick_right.push(right);
            y.push(if right { pair[1] } else { pair[0] });
        }
        let y = Tensor::from_shape_vec(IxDyn(&out_shape), y).expect("shape");
        self.graph.op(y, &[self], move |g, _| {
            let gs = g.as_slice().expect("contiguous");
            let mut gx = vec![0.0; gs.len() * 2];
            for (i, (&gv, &r)) in gs.iter().zip(&pick_right).enumerate() {
                gx[2 * i + usize::from(r)] = gv;
            }
            vec![Some(Tensor::from_shape_vec(IxDyn(&shape), gx).expect("shape"))]
        })
    }
}

pub(crate) fn dims3(t: &Tensor) -> (usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 3, "expected rank 3, got {s:?}");
    (s[0], s[1], s[2])
}

fn as2_slice(xs: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), xs).expect("shape")
}

struct ConvGeom {
    cin: usize,
    t: usize,
    k: usize,
    stride: usize,
    pad_left: usize,
    tout: usize,
}

impl ConvGeom {
    /// `(Tout, Cin·K)` patch matrix with implicit zero padding.
    fn im2col(&self, xs: &[f64]) -> Array2<f64> {
        let (cin, t, k) = (self.cin, self.t, self.k);
        let mut cols = Array2::<f64>::zeros((self.tout, cin * k));
        let cs = cols.as_slice_mut().expect("contiguous");
        for ti in 0..self.tout {
            let start = (ti * self.stride) as isize - self.pad_left as isize;
            let row = &mut cs[ti * cin * k..(ti + 1) * cin * k];
            for c in 0..cin {
                let src = &xs[c * t..(c + 1) * t];
                let dst = &mut row[c * k..(c + 1) * k];
                if start >= 0 && start as usize + k <= t {
                    dst.copy_from_slice(&src[start as usize..start as usize + k]);
                } else {
                    for (kk, d) in dst.iter_mut().enumerate() {
                        let pos = start + kk as isize;
                        if pos >= 0 && (pos as usize) < t {
                            *d = src[pos as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, gcols: &Array2<f64>, gxs: &mut [f64]) {
        let (cin, t, k) = (self.cin, self.t, self.k);
        for (ti, row) in gcols.outer_iter().enumerate() {
            let start = (ti * self.stride) as isize - self.pad_left as isize;
            for c in 0..cin {
                for kk in 0..k {
                    let pos = start + kk as isize;
                    if pos >= 0 && (pos as usize) < t {
                        gxs[c * t + pos as usize] += row[c * k + kk];
                    }
                }
            }
        }
    }
}

/// Reshapes an owned array in row-major order, copying when its layout is
/// not already standard.
pub(crate) fn reshape_std<D: ndarray::Dimension>(a: ndarray::Array<f64, D>, shape: &[usize]) -> Tensor {
    let a = if a.is_standard_layout() { a } else { a.as_standard_layout().into_owned() };
    a.into_dyn().into_shape_with_order(IxDyn(shape)).expect("shape")
}
