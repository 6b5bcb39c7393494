use ndarray::IxDyn;

use super::{Tensor, Var};

/// Axis bookkeeping for reducing over an arbitrary set of axes.
struct Layout {
    perm: Vec<usize>,
    inv: Vec<usize>,
    permuted_shape: Vec<usize>,
    rows: usize,
    width: usize,
}

impl Layout {
    fn new(shape: &[usize], axes: &[usize]) -> Self {
        let kept: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
        let mut red = axes.to_vec();
        red.sort_unstable();
        let perm: Vec<usize> = kept.iter().chain(red.iter()).copied().collect();
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let permuted_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let width: usize = red.iter().map(|&a| shape[a]).product();
        let rows: usize = kept.iter().map(|&a| shape[a]).product();
        Self { perm, inv, permuted_shape, rows, width }
    }

    fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }

    fn to_rows(&self, t: &Tensor) -> Vec<f64> {
        if self.is_identity() {
            t.as_slice().expect("contiguous").to_vec()
        } else {
            t.view()
                .permuted_axes(IxDyn(&self.perm))
                .as_standard_layout()
                .iter()
                .copied()
                .collect()
        }
    }

    fn from_rows(&self, data: Vec<f64>) -> Tensor {
        let t = Tensor::from_shape_vec(IxDyn(&self.permuted_shape), data).expect("shape");
        if self.is_identity() {
            t
        } else {
            t.view().permuted_axes(IxDyn(&self.inv)).as_standard_layout().into_owned()
        }
    }
}

impl<'g> Var<'g> {
    /// `(x − mean) / sqrt(var + eps)` with biased statistics over `axes`.
    pub fn standardize(self, axes: &[usize], eps: f64) -> Var<'g> {
        let (y, _, _) = self.standardize_with_stats(axes, eps);
        y
    }

    /// Like [`Var::standardize`], also returning the per-row mean and biased
    /// variance (rows ordered over the kept axes).
    pub fn standardize_with_stats(self, axes: &[usize], eps: f64) -> (Var<'g>, Vec<f64>, Vec<f64>) {
        let x = self.value();
        let layout = Layout::new(x.shape(), axes);
        let data = layout.to_rows(&x);
        let w = layout.width;
        let mut xhat = vec![0.0; data.len()];
        let mut inv_std = vec![0.0; layout.rows];
        let mut means = vec![0.0; layout.rows];
        let mut vars = vec![0.0; layout.rows];
        for r in 0..layout.rows {
            let row = &data[r * w..(r + 1) * w];
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in xhat[r * w..(r + 1) * w].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std[r] = is;
            means[r] = mean;
            vars[r] = var;
        }
        let y = layout.from_rows(xhat.clone());
        let out = self.graph.op(y, &[self], move |g, _| {
            let gd = layout.to_rows(g);
            let mut gx = vec![0.0; gd.len()];
            for r in 0..layout.rows {
                let gr = &gd[r * w..(r + 1) * w];
                let xr = &xhat[r * w..(r + 1) * w];
                let mg = gr.iter().sum::<f64>() / w as f64;
                let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                for ((o, &gv), &xv) in gx[r * w..(r + 1) * w].iter_mut().zip(gr).zip(xr) {
                    *o = inv_std[r] * (gv - mg - xv * mgx);
                }
            }
            vec![Some(layout.from_rows(gx))]
        });
        (out, means, vars)
    }
}
