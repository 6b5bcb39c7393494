use std::rc::Rc;

use ndarray::Zip;

use super::{sum_to_shape, Tensor, Var};

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<'g> Var<'g> {
    /// Elementwise map with derivative `deriv(x, y)`.
    fn map(self, f: fn(f64) -> f64, deriv: fn(f64, f64) -> f64) -> Var<'g> {
        let x = self.value();
        let y = x.mapv(f);
        let y_rc = Rc::new(y.clone());
        self.graph.op(y, &[self], move |g, _| {
            let mut out = g.clone();
            Zip::from(&mut out)
                .and(&*x)
                .and(&*y_rc)
                .for_each(|o, &xv, &yv| *o *= deriv(xv, yv));
            vec![Some(out)]
        })
    }

    pub fn relu(self) -> Var<'g> {
        self.map(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.map(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn silu(self) -> Var<'g> {
        self.map(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            },
        )
    }

    pub fn softplus(self) -> Var<'g> {
        self.map(softplus, |x, _| sigmoid(x))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(self) -> Var<'g> {
        self.map(
            |x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
            |x, _| {
                let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            },
        )
    }

    pub fn exp(self) -> Var<'g> {
        self.map(f64::exp, |_, y| y)
    }

    pub fn tanh(self) -> Var<'g> {
        self.map(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn square(self) -> Var<'g> {
        self.map(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let y = self.value().mapv(|x| x * c);
        self.graph.op(y, &[self], move |g, _| vec![Some(g.mapv(|v| v * c))])
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let y = self.value().mapv(|x| x + c);
        self.graph.op(y, &[self], |g, _| vec![Some(g.clone())])
    }

    /// Broadcasting sum.
    pub fn add(self, other: Var<'g>) -> Var<'g> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        let y = &*a + &*b;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.graph.op(y, &[self, other], move |g, need| {
            vec![
                need[0].then(|| sum_to_shape(g.clone(), &sa)),
                need[1].then(|| sum_to_shape(g.clone(), &sb)),
            ]
        })
    }

    /// Broadcasting difference.
    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        let y = &*a - &*b;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.graph.op(y, &[self, other], move |g, need| {
            vec![
                need[0].then(|| sum_to_shape(g.clone(), &sa)),
                need[1].then(|| sum_to_shape(-g, &sb)),
            ]
        })
    }

    /// Broadcasting product.
    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        let y = &*a * &*b;
        self.graph.op(y, &[self, other], move |g, need| {
            vec![
                need[0].then(|| sum_to_shape(g * &*b, a.shape())),
                need[1].then(|| sum_to_shape(g * &*a, b.shape())),
            ]
        })
    }

    /// Per-channel PReLU on axis 1 of `(B, C, ...)` with slopes of shape `(C)`.
    pub fn prelu(self, slope: Var<'g>) -> Var<'g> {
        self.same_graph(&slope);
        let x = self.value();
        let a = slope.value();
        let c = x.shape()[1];
        assert_eq!(a.shape(), &[c], "prelu slope shape");
        let mut y = (*x).clone();
        for (ci, mut lane) in y.axis_iter_mut(ndarray::Axis(1)).enumerate() {
            let s = a[ci];
            lane.mapv_inplace(|v| if v > 0.0 { v } else { s * v });
        }
        self.graph.op(y, &[self, slope], move |g, need| {
            let mut gx = need[0].then(|| g.clone());
            let mut ga = need[1].then(|| Tensor::zeros(a.raw_dim()));
            for ci in 0..c {
                let s = a[ci];
                let xs = x.index_axis(ndarray::Axis(1), ci);
                let gs = g.index_axis(ndarray::Axis(1), ci);
                if let Some(gx) = gx.as_mut() {
                    let mut lane = gx.index_axis_mut(ndarray::Axis(1), ci);
                    Zip::from(&mut lane).and(&xs).for_each(|o, &xv| {
                        if xv <= 0.0 {
                            *o *= s;
                        }
                    });
                }
                if let Some(ga) = ga.as_mut() {
                    let mut acc = 0.0;
                    Zip::from(&xs).and(&gs).for_each(|&xv, &gv| {
                        if xv <= 0.0 {
                            acc += gv * xv;
                        }
                    });
                    ga[ci] = acc;
                }
            }
            vec![gx, ga]
        })
    }

    pub fn sum_all(self) -> Var<'g> {
        let x = self.value();
        let s = x.sum();
        let shape = x.raw_dim();
        self.graph.op(ndarray::arr0(s).into_dyn(), &[self], move |g, _| {
            let gv = *g.iter().next().expect("scalar");
            vec![Some(Tensor::from_elem(shape.clone(), gv))]
        })
    }

    pub fn mean_all(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Mean over `axes`, keeping them as size-one dimensions.
    pub fn mean_axes_keep(self, axes: &[usize]) -> Var<'g> {
        let x = self.value();
        let mut y = (*x).clone();
        let mut count = 1usize;
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        for &ax in &sorted {
            count *= x.shape()[ax];
            y = y.sum_axis(ndarray::Axis(ax)).insert_axis(ndarray::Axis(ax));
        }
        let inv = 1.0 / count as f64;
        y.mapv_inplace(|v| v * inv);
        let shape = x.raw_dim();
        self.graph.op(y, &[self], move |g, _| {
            let full = g.broadcast(shape.clone()).expect("broadcast back").mapv(|v| v * inv);
            vec![Some(full)]
        })
    }
}
