use std::rc::Rc;

use ndarray::{concatenate, Axis, IxDyn, Slice};

use super::{zeros, Tensor, Var};

/// Sums a broadcast gradient back down to `shape`.
pub fn sum_to_shape(g: Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    let mut g = g;
    let lead = g.ndim() - shape.len();
    for _ in 0..lead {
        g = g.sum_axis(Axis(0));
    }
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

impl<'g> Var<'g> {
    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = (*x)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|e| panic!("reshape {old:?} -> {shape:?}: {e}"));
        self.graph.op(y, &[self], move |g, _| {
            vec![Some(super::linalg::reshape_std(g.clone(), &old))]
        })
    }

    pub fn permute(self, axes: &[usize]) -> Var<'g> {
        let x = self.value();
        let y = x.view().permuted_axes(IxDyn(axes)).as_standard_layout().into_owned();
        let mut inv = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        self.graph.op(y, &[self], move |g, _| {
            vec![Some(g.view().permuted_axes(IxDyn(&inv)).as_standard_layout().into_owned())]
        })
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice_axis(self, axis: usize, start: usize, end: usize) -> Var<'g> {
        let x = self.value();
        let y = x.slice_axis(Axis(axis), Slice::from(start..end)).to_owned();
        let shape = x.shape().to_vec();
        self.graph.op(y, &[self], move |g, _| {
            let mut out = zeros(&shape);
            out.slice_axis_mut(Axis(axis), Slice::from(start..end)).assign(g);
            vec![Some(out)]
        })
    }

    /// Zero padding along `axis`.
    pub fn pad_axis(self, axis: usize, left: usize, right: usize) -> Var<'g> {
        if left == 0 && right == 0 {
            return self;
        }
        let x = self.value();
        let mut shape = x.shape().to_vec();
        let n = shape[axis];
        shape[axis] = n + left + right;
        let mut y = zeros(&shape);
        y.slice_axis_mut(Axis(axis), Slice::from(left..left + n)).assign(&*x);
        self.graph.op(y, &[self], move |g, _| {
            vec![Some(g.slice_axis(Axis(axis), Slice::from(left..left + n)).to_owned())]
        })
    }

    /// Reverses the order of elements along `axis`.
    pub fn flip(self, axis: usize) -> Var<'g> {
        let x = self.value();
        let mut y = (*x).clone();
        y.invert_axis(Axis(axis));
        self.graph.op(y, &[self], move |g, _| {
            let mut out = g.clone();
            out.invert_axis(Axis(axis));
            vec![Some(out)]
        })
    }

    /// Gathers positions `idx` along `axis` (duplicates allowed).
    pub fn index_select(self, axis: usize, idx: Rc<[usize]>) -> Var<'g> {
        let x = self.value();
        let y = x.select(Axis(axis), &idx);
        let len = x.shape()[axis];
        self.graph.op(y, &[self], move |g, _| vec![Some(scatter_add(g, axis, &idx, len))])
    }

    /// Scatter-adds slice `i` of `axis` into position `idx[i]` of an output
    /// whose `axis` has length `out_len`. Adjoint of [`Var::index_select`].
    pub fn index_add(self, axis: usize, idx: Rc<[usize]>, out_len: usize) -> Var<'g> {
        let x = self.value();
        let y = scatter_add(&x, axis, &idx, out_len);
        self.graph.op(y, &[self], move |g, _| vec![Some(g.select(Axis(axis), &idx))])
    }
}

fn scatter_add(x: &Tensor, axis: usize, idx: &[usize], out_len: usize) -> Tensor {
    assert_eq!(x.shape()[axis], idx.len(), "scatter index length");
    let mut shape = x.shape().to_vec();
    shape[axis] = out_len;
    let mut out = zeros(&shape);
    for (i, &j) in idx.iter().enumerate() {
        let mut dst = out.index_axis_mut(Axis(axis), j);
        dst += &x.index_axis(Axis(axis), i);
    }
    out
}

/// Concatenates along `axis`.
pub fn concat<'g>(vars: &[Var<'g>], axis: usize) -> Var<'g> {
    assert!(!vars.is_empty(), "concat of nothing");
    let graph = vars[0].graph;
    let values: Vec<Rc<Tensor>> = vars.iter().map(|v| v.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let y = concatenate(Axis(axis), &views).expect("concat shapes");
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    graph.op(y, vars, move |g, need| {
        let mut start = 0;
        sizes
            .iter()
            .zip(need)
            .map(|(&n, &nd)| {
                let part = nd.then(|| g.slice_axis(Axis(axis), Slice::from(start..start + n)).to_owned());
                start += n;
                part
            })
            .collect()
    })
}
