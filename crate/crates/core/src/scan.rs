//! Selective state-space scan with a diagonal state matrix.
//!
//! For every sequence `s`, channel `d` and state index `n`:
//!
//! ```text
//! h[t,d,n] = exp(delta[t,d]·A[d,n])·h[t−1,d,n] + delta[t,d]·B[t,n]·x[t,d]
//! y[t,d]   = Σ_n C[t,n]·h[t,d,n] + D[d]·x[t,d]
//! ```
//!
//! The forward sweep keeps one state snapshot every `block` steps; the
//! backward sweep recomputes the states of one block at a time from its
//! snapshot, so memory grows with `L / block` rather than `L`.

use ndarray::{ArrayView1, ArrayView2, ArrayView3, Ix1, Ix2, Ix3, IxDyn};

use crate::autograd::{Tensor, Var};
use crate::error::{Error, Result};

struct Dims {
    seqs: usize,
    len: usize,
    width: usize,
    state: usize,
}

fn dims(x: &Tensor, delta: &Tensor, b: &Tensor, c: &Tensor, a: &Tensor, d: &Tensor) -> Result<Dims> {
    let bad = |m: String| Err(Error::shape("selective_scan", m));
    if x.ndim() != 3 {
        return bad(format!("x must be (S, L, D), got {:?}", x.shape()));
    }
    let (seqs, len, width) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if len == 0 {
        return bad("empty sequence".into());
    }
    if delta.shape() != x.shape() {
        return bad(format!("delta {:?} vs x {:?}", delta.shape(), x.shape()));
    }
    if a.ndim() != 2 || a.shape()[0] != width {
        return bad(format!("A must be (D, N), got {:?}", a.shape()));
    }
    let state = a.shape()[1];
    if b.shape() != [seqs, len, state] || c.shape() != [seqs, len, state] {
        return bad(format!("B {:?} / C {:?} must be ({seqs}, {len}, {state})", b.shape(), c.shape()));
    }
    if d.shape() != [width] {
        return bad(format!("D must be ({width}), got {:?}", d.shape()));
    }
    Ok(Dims { seqs, len, width, state })
}

/// Views over the scan operands, all in standard layout.
struct Operands<'a> {
    x: ArrayView3<'a, f64>,
    delta: ArrayView3<'a, f64>,
    b: ArrayView3<'a, f64>,
    c: ArrayView3<'a, f64>,
    a: ArrayView2<'a, f64>,
    d: ArrayView1<'a, f64>,
}

impl<'a> Operands<'a> {
    fn new(x: &'a Tensor, delta: &'a Tensor, b: &'a Tensor, c: &'a Tensor, a: &'a Tensor, d: &'a Tensor) -> Self {
        Self {
            x: x.view().into_dimensionality::<Ix3>().expect("3-D"),
            delta: delta.view().into_dimensionality::<Ix3>().expect("3-D"),
            b: b.view().into_dimensionality::<Ix3>().expect("3-D"),
            c: c.view().into_dimensionality::<Ix3>().expect("3-D"),
            a: a.view().into_dimensionality::<Ix2>().expect("2-D"),
            d: d.view().into_dimensionality::<Ix1>().expect("1-D"),
        }
    }

    /// Advances `h` (D·N, row-major) by one step and returns whether the
    /// new state is finite.
    #[inline]
    fn step(&self, s: usize, t: usize, h: &mut [f64], dm: &Dims) -> bool {
        let mut finite = true;
        for di in 0..dm.width {
            let dt = self.delta[[s, t, di]];
            let xu = dt * self.x[[s, t, di]];
            let row = &mut h[di * dm.state..(di + 1) * dm.state];
            for (n, hv) in row.iter_mut().enumerate() {
                *hv = (dt * self.a[[di, n]]).exp() * *hv + xu * self.b[[s, t, n]];
                finite &= hv.is_finite();
            }
        }
        finite
    }

    #[inline]
    fn emit(&self, s: usize, t: usize, h: &[f64], y: &mut [f64], dm: &Dims) {
        for (di, yv) in y.iter_mut().enumerate() {
            let row = &h[di * dm.state..(di + 1) * dm.state];
            let mut acc = self.d[di] * self.x[[s, t, di]];
            for (n, hv) in row.iter().enumerate() {
                acc += self.c[[s, t, n]] * hv;
            }
            *yv = acc;
        }
    }
}

/// Runs the recurrence; when `block` is set, also returns the state entering
/// every block (`snapshots[s][k]` is the state before step `k·block`).
fn forward(ops: &Operands<'_>, dm: &Dims, block: Option<usize>) -> Result<(Tensor, Vec<Vec<Vec<f64>>>)> {
    let mut y = Tensor::zeros(IxDyn(&[dm.seqs, dm.len, dm.width]));
    let ys = y.as_slice_mut().expect("contiguous");
    let mut snapshots = Vec::new();
    for s in 0..dm.seqs {
        let mut h = vec![0.0; dm.width * dm.state];
        let mut snaps = Vec::new();
        for t in 0..dm.len {
            if let Some(bl) = block {
                if t % bl == 0 {
                    snaps.push(h.clone());
                }
            }
            if !ops.step(s, t, &mut h, dm) {
                return Err(Error::NonFinite {
                    what: format!("scan state of sequence {s}"),
                    step: Some(t),
                });
            }
            let off = (s * dm.len + t) * dm.width;
            ops.emit(s, t, &h, &mut ys[off..off + dm.width], dm);
        }
        snapshots.push(snaps);
    }
    Ok((y, snapshots))
}

/// Evaluates the scan on plain arrays (no gradient bookkeeping).
///
/// Shapes: `x`, `delta` are `(S, L, D)`; `b`, `c` are `(S, L, N)`; `a` is
/// `(D, N)` (already negative, not log-parameterized); `d` is `(D)`.
pub fn scan_values(x: &Tensor, delta: &Tensor, b: &Tensor, c: &Tensor, a: &Tensor, d: &Tensor) -> Result<Tensor> {
    let dm = dims(x, delta, b, c, a, d)?;
    let ops = Operands::new(x, delta, b, c, a, d);
    Ok(forward(&ops, &dm, None)?.0)
}

/// Differentiable selective scan. See [`scan_values`] for shapes; `block` is
/// the snapshot interval of the backward pass.
pub fn selective_scan<'g>(
    x: Var<'g>,
    delta: Var<'g>,
    b: Var<'g>,
    c: Var<'g>,
    a: Var<'g>,
    d: Var<'g>,
    block: usize,
) -> Result<Var<'g>> {
    let (xv, dv, bv, cv, av, skip) = (x.value(), delta.value(), b.value(), c.value(), a.value(), d.value());
    let dm = dims(&xv, &dv, &bv, &cv, &av, &skip)?;
    let block = block.max(1);
    let record = x.graph().grad_enabled();
    let (y, snapshots) = {
        let ops = Operands::new(&xv, &dv, &bv, &cv, &av, &skip);
        forward(&ops, &dm, record.then_some(block))?
    };
    let graph = x.graph();
    Ok(graph.op(y, &[x, delta, b, c, a, d], move |g, _| {
        let ops = Operands::new(&xv, &dv, &bv, &cv, &av, &skip);
        backward(&ops, &dm, &snapshots, block, g)
    }))
}

fn backward(ops: &Operands<'_>, dm: &Dims, snapshots: &[Vec<Vec<f64>>], block: usize, g: &Tensor) -> Vec<Option<Tensor>> {
    let (sq, l, w, n) = (dm.seqs, dm.len, dm.width, dm.state);
    let g = g.view().into_dimensionality::<Ix3>().expect("3-D");
    let mut gx = Tensor::zeros(IxDyn(&[sq, l, w]));
    let mut gdelta = Tensor::zeros(IxDyn(&[sq, l, w]));
    let mut gb = Tensor::zeros(IxDyn(&[sq, l, n]));
    let mut gc = Tensor::zeros(IxDyn(&[sq, l, n]));
    let mut ga = Tensor::zeros(IxDyn(&[w, n]));
    let mut gd = Tensor::zeros(IxDyn(&[w]));
    {
        let gxs = gx.as_slice_mut().expect("contiguous");
        let gdl = gdelta.as_slice_mut().expect("contiguous");
        let gbs = gb.as_slice_mut().expect("contiguous");
        let gcs = gc.as_slice_mut().expect("contiguous");
        let gas = ga.as_slice_mut().expect("contiguous");
        let gds = gd.as_slice_mut().expect("contiguous");
        let wn = w * n;
        let mut states = vec![0.0; (block + 1) * wn];
        for s in 0..sq {
            let mut carry = vec![0.0; wn];
            for k in (0..snapshots[s].len()).rev() {
                let start = k * block;
                let end = (start + block).min(l);
                states[..wn].copy_from_slice(&snapshots[s][k]);
                for t in start..end {
                    let (prev, next) = states.split_at_mut((t - start + 1) * wn);
                    next[..wn].copy_from_slice(&prev[(t - start) * wn..]);
                    ops.step(s, t, &mut next[..wn], dm);
                }
                for t in (start..end).rev() {
                    let hprev = &states[(t - start) * wn..(t - start + 1) * wn];
                    let hcur = &states[(t - start + 1) * wn..(t - start + 2) * wn];
                    let row = (s * l + t) * w;
                    let nrow = (s * l + t) * n;
                    for di in 0..w {
                        let dt = ops.delta[[s, t, di]];
                        let xv = ops.x[[s, t, di]];
                        let gy = g[[s, t, di]];
                        let mut gx_acc = gy * ops.d[di];
                        gds[di] += gy * xv;
                        let mut gdt = 0.0;
                        for ni in 0..n {
                            let j = di * n + ni;
                            let av = ops.a[[di, ni]];
                            let bv = ops.b[[s, t, ni]];
                            gcs[nrow + ni] += gy * hcur[j];
                            let dh = carry[j] + gy * ops.c[[s, t, ni]];
                            let decay = (dt * av).exp();
                            let dgate = dh * hprev[j] * decay;
                            gdt += dgate * av + dh * bv * xv;
                            gas[j] += dgate * dt;
                            gbs[nrow + ni] += dh * dt * xv;
                            gx_acc += dh * dt * bv;
                            carry[j] = dh * decay;
                        }
                        gxs[row + di] = gx_acc;
                        gdl[row + di] = gdt;
                    }
                }
            }
        }
    }
    vec![Some(gx), Some(gdelta), Some(gb), Some(gc), Some(ga), Some(gd)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::params::{Ctx, ParamStore};
    use crate::testing::{check_gradients, randn, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn operands(rng: &mut ChaCha8Rng, s: usize, l: usize, w: usize, n: usize) -> Vec<Tensor> {
        let x = randn(rng, &[s, l, w], 1.0);
        let delta = randn(rng, &[s, l, w], 0.5).mapv(crate::autograd::softplus);
        let b = randn(rng, &[s, l, n], 1.0);
        let c = randn(rng, &[s, l, n], 1.0);
        let a = randn(rng, &[w, n], 1.0).mapv(|v| -v.abs() - 0.1);
        let d = randn(rng, &[w], 1.0);
        vec![x, delta, b, c, a, d]
    }

    #[test]
    fn prefix_sum_degenerate_case() {
        let x = Tensor::from_shape_vec(IxDyn(&[1, 5, 1]), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let ones = Tensor::ones(IxDyn(&[1, 5, 1]));
        let y = scan_values(&x, &ones, &ones, &ones, &Tensor::zeros(IxDyn(&[1, 1])), &Tensor::zeros(IxDyn(&[1]))).unwrap();
        assert_eq!(y.as_slice().unwrap(), &[1.0, 3.0, 6.0, 10.0, 15.0]);
    }

    #[test]
    fn memoryless_degenerate_case() {
        let x = Tensor::from_shape_vec(IxDyn(&[1, 4, 1]), vec![0.5, -2.0, 3.0, 7.0]).unwrap();
        let ones = Tensor::ones(IxDyn(&[1, 4, 1]));
        let a = Tensor::from_elem(IxDyn(&[1, 1]), -1e4);
        let y = scan_values(&x, &ones, &ones, &ones, &a, &Tensor::zeros(IxDyn(&[1]))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn overflow_reports_step() {
        let x = Tensor::ones(IxDyn(&[1, 50, 1]));
        let ones = Tensor::ones(IxDyn(&[1, 50, 1]));
        let a = Tensor::from_elem(IxDyn(&[1, 1]), 100.0);
        let err = scan_values(&x, &ones, &ones, &ones, &a, &Tensor::zeros(IxDyn(&[1]))).unwrap_err();
        match err {
            Error::NonFinite { step: Some(t), .. } => assert!(t > 0 && t < 50),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for block in [1, 4, 64] {
            let inputs = operands(&mut rng, 2, 11, 3, 2);
            let store = ParamStore::new();
            let report = check_gradients(
                &store,
                &inputs,
                |_ctx: Ctx<'_>, v| {
                    let y = selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], block).unwrap();
                    y.square().sum_all()
                },
                &GradCheckOptions { samples_per_tensor: 12, ..Default::default() },
            );
            assert!(report.max_error() < 1e-6, "block {block}: {:?}", report.worst());
        }
    }

    #[test]
    fn inference_graph_matches_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ops = operands(&mut rng, 1, 30, 2, 3);
        let g = Graph::inference();
        let v: Vec<_> = ops.iter().map(|t| g.constant(t.clone())).collect();
        let y = selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], 8).unwrap();
        let direct = scan_values(&ops[0], &ops[1], &ops[2], &ops[3], &ops[4], &ops[5]).unwrap();
        assert_eq!(*y.value(), direct);
    }
}
