//! Finite-difference gradient checking.
//!
//! Used by the unit, integration and acceptance suites; it only depends on
//! forward evaluation, never on the backward closures it validates.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::params::{Ctx, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Elements probed per tensor (all elements when the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Run the forward pass in training mode.
    pub train: bool,
    pub seed: u64,
    /// Lower bound on the normalizing gradient magnitude, so tensors whose
    /// true gradient is zero (a bias feeding a batch norm) are judged on
    /// absolute error.
    pub scale_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-6, samples_per_tensor: 6, train: true, seed: 7, scale_floor: 1e-4 }
    }
}

/// Per-tensor worst relative error: `max |analytic − numeric|` over probed
/// elements divided by the largest gradient magnitude of that tensor
/// (at least [`GradCheckOptions::scale_floor`]).
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub errors: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.values().copied().fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<(&String, f64)> {
        self.errors
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, v)| (k, *v))
    }
}

fn eval<F>(store: &ParamStore, inputs: &[Tensor], f: &F, train: bool) -> f64
where
    F: for<'g> Fn(Ctx<'g>, &[Var<'g>]) -> Var<'g>,
{
    let g = Graph::inference();
    let ctx = Ctx::new(&g, store, train);
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    f(ctx, &vars).item()
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences for every parameter in `store` and every input tensor
/// (reported as `input[i]`).
pub fn check_gradients<F>(store: &ParamStore, inputs: &[Tensor], f: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: for<'g> Fn(Ctx<'g>, &[Var<'g>]) -> Var<'g>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (param_grads, input_grads) = {
        let g = Graph::new();
        let ctx = Ctx::new(&g, store, opts.train);
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(ctx, &vars);
        let grads = g.backward(out);
        let ig: Vec<Option<Tensor>> = vars.iter().map(|v| grads.wrt(*v).cloned()).collect();
        (grads.into_param_grads(), ig)
    };

    let mut report = GradCheckReport::default();
    let mut probe = |label: String, analytic: Option<&Tensor>, len: usize, perturb: &mut dyn FnMut(usize, f64) -> f64| {
        let k = opts.samples_per_tensor.min(len);
        let idx = sample(&mut rng, len, k).into_vec();
        let scale_a = analytic.map(|a| a.iter().fold(0.0f64, |m, v| m.max(v.abs()))).unwrap_or(0.0);
        let mut worst = 0.0f64;
        let mut scale_n = 0.0f64;
        let mut diffs = Vec::with_capacity(k);
        for i in idx {
            let plus = perturb(i, opts.step);
            let minus = perturb(i, -opts.step);
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.map(|a| a.as_slice().expect("contiguous")[i]).unwrap_or(0.0);
            scale_n = scale_n.max(numeric.abs());
            diffs.push((a - numeric).abs());
        }
        let scale = scale_a.max(scale_n).max(opts.scale_floor);
        for d in diffs {
            worst = worst.max(d / scale);
        }
        report.errors.insert(label, worst);
    };

    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let base = store.get(&name).expect("param").clone();
        let len = base.len();
        let mut work = store.clone();
        let mut perturb = |i: usize, h: f64| {
            let t = work.get_mut(&name).expect("param");
            let slot = &mut t.as_slice_mut().expect("contiguous")[i];
            let orig = *slot;
            *slot = orig + h;
            let v = eval(&work, inputs, &f, opts.train);
            let t = work.get_mut(&name).expect("param");
            t.as_slice_mut().expect("contiguous")[i] = orig;
            v
        };
        probe(name.clone(), param_grads.get(&name), len, &mut perturb);
    }
    for (ii, base) in inputs.iter().enumerate() {
        let mut work: Vec<Tensor> = inputs.to_vec();
        let len = base.len();
        let mut perturb = |i: usize, h: f64| {
            let orig = work[ii].as_slice().expect("contiguous")[i];
            work[ii].as_slice_mut().expect("contiguous")[i] = orig + h;
            let v = eval(store, &work, &f, opts.train);
            work[ii].as_slice_mut().expect("contiguous")[i] = orig;
            v
        };
        probe(format!("input[{ii}]"), input_grads[ii].as_ref(), len, &mut perturb);
    }
    report
}

/// Random normal tensor for tests.
pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    use rand_distr::{Distribution, Normal};
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("std > 0");
    Tensor::from_shape_vec(ndarray::IxDyn(shape), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}
