use ndarray::{s, Array2, ArrayView2, Axis, Ix4};

use super::Var;

/// Query rows processed together; bounds the score buffer to
/// `QUERY_BLOCK × keys`.
const QUERY_BLOCK: usize = 64;

impl<'g> Var<'g> {
    /// Scaled dot-product attention over `(B, H, T, d)` tensors:
    /// `softmax(Q·Kᵀ/√d)·V`. Score matrices are never kept; the backward
    /// pass rebuilds them from the stored row log-sum-exps.
    pub fn attention(self, k: Var<'g>, v: Var<'g>) -> Var<'g> {
        self.same_graph(&k);
        self.same_graph(&v);
        let (q, kv, vv) = (self.value(), k.value(), v.value());
        let qs = q.shape().to_vec();
        assert_eq!(qs.len(), 4, "attention expects (B, H, T, d)");
        let (b, h, tq, d) = (qs[0], qs[1], qs[2], qs[3]);
        let tk = kv.shape()[2];
        assert_eq!(kv.shape(), &[b, h, tk, d], "attention keys");
        assert_eq!(vv.shape()[..3], [b, h, tk], "attention values");
        let dv = vv.shape()[3];
        let scale = 1.0 / (d as f64).sqrt();

        let q4 = q.view().into_dimensionality::<Ix4>().expect("4-D").to_owned();
        let k4 = kv.view().into_dimensionality::<Ix4>().expect("4-D").to_owned();
        let v4 = vv.view().into_dimensionality::<Ix4>().expect("4-D").to_owned();
        let mut out = ndarray::Array4::<f64>::zeros((b, h, tq, dv));
        let mut lse = ndarray::Array3::<f64>::zeros((b, h, tq));
        for bi in 0..b {
            for hi in 0..h {
                let qm = q4.slice(s![bi, hi, .., ..]);
                let km = k4.slice(s![bi, hi, .., ..]);
                let vm = v4.slice(s![bi, hi, .., ..]);
                for start in (0..tq).step_by(QUERY_BLOCK) {
                    let end = (start + QUERY_BLOCK).min(tq);
                    let p = probabilities(qm.slice(s![start..end, ..]), km, scale, None);
                    let (p, l) = p;
                    out.slice_mut(s![bi, hi, start..end, ..]).assign(&p.dot(&vm));
                    lse.slice_mut(s![bi, hi, start..end]).assign(&ndarray::Array1::from(l));
                }
            }
        }
        let out_kept = out.clone();
        self.graph.op(out.into_dyn(), &[self, k, v], move |g, need| {
            let g4 = g.view().into_dimensionality::<Ix4>().expect("4-D");
            let mut gq = ndarray::Array4::<f64>::zeros((b, h, tq, d));
            let mut gk = ndarray::Array4::<f64>::zeros((b, h, tk, d));
            let mut gv = ndarray::Array4::<f64>::zeros((b, h, tk, dv));
            for bi in 0..b {
                for hi in 0..h {
                    let qm = q4.slice(s![bi, hi, .., ..]);
                    let km = k4.slice(s![bi, hi, .., ..]);
                    let vm = v4.slice(s![bi, hi, .., ..]);
                    for start in (0..tq).step_by(QUERY_BLOCK) {
                        let end = (start + QUERY_BLOCK).min(tq);
                        let rows = lse.slice(s![bi, hi, start..end]).to_vec();
                        let (p, _) = probabilities(qm.slice(s![start..end, ..]), km, scale, Some(&rows));
                        let go = g4.slice(s![bi, hi, start..end, ..]);
                        let o = out_kept.slice(s![bi, hi, start..end, ..]);
                        if need[2] {
                            let mut acc = gv.slice_mut(s![bi, hi, .., ..]);
                            acc += &p.t().dot(&go);
                        }
                        if need[0] || need[1] {
                            let dp = go.dot(&vm.t());
                            let row_dot = (&go * &o).sum_axis(Axis(1));
                            let mut ds = p;
                            for (mut r, (dpr, &rd)) in ds.rows_mut().into_iter().zip(dp.rows().into_iter().zip(row_dot.iter())) {
                                r.zip_mut_with(&dpr, |pv, &dpv| *pv *= (dpv - rd) * scale);
                            }
                            if need[0] {
                                gq.slice_mut(s![bi, hi, start..end, ..]).assign(&ds.dot(&km));
                            }
                            if need[1] {
                                let mut acc = gk.slice_mut(s![bi, hi, .., ..]);
                                acc += &ds.t().dot(&qm.slice(s![start..end, ..]));
                            }
                        }
                    }
                }
            }
            vec![
                need[0].then(|| gq.into_dyn()),
                need[1].then(|| gk.into_dyn()),
                need[2].then(|| gv.into_dyn()),
            ]
        })
    }
}

/// Row-softmax of `q·kᵀ·scale`; with `lse` given the stored normalizers are
/// reused instead of recomputed.
fn probabilities(q: ArrayView2<'_, f64>, k: ArrayView2<'_, f64>, scale: f64, lse: Option<&[f64]>) -> (Array2<f64>, Vec<f64>) {
    let mut sc = q.dot(&k.t());
    sc *= scale;
    let mut norms = Vec::with_capacity(sc.nrows());
    for (i, mut row) in sc.rows_mut().into_iter().enumerate() {
        let l = match lse {
            Some(l) => l[i],
            None => {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
            }
        };
        row.mapv_inplace(|v| (v - l).exp());
        norms.push(l);
    }
    (sc, norms)
}

