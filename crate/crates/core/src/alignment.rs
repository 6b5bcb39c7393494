//! Projection of speech and EEG embeddings into a shared space and the
//! contrastive loss that pulls time-matched pairs together.

use ndarray::{Array2, Ix2, IxDyn};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Linear};
use crate::params::{Ctx, ParamStore};

/// Guard on row norms before normalization.
pub const NORM_EPS: f64 = 1e-8;

/// `(T_in, T_out)` matrix resampling a sequence by linear interpolation with
/// both end points pinned (`out = in · M`).
pub fn interpolation_matrix(t_in: usize, t_out: usize) -> Result<Array2<f64>> {
    if t_in == 0 || t_out == 0 {
        return Err(Error::Invalid("interpolation needs nonempty sequences".into()));
    }
    if t_in > t_out {
        return Err(Error::Invalid(format!(
            "EEG frames ({t_in}) exceed speech frames ({t_out}); expansion only"
        )));
    }
    let mut m = Array2::zeros((t_in, t_out));
    if t_in == t_out {
        m.diag_mut().fill(1.0);
        return Ok(m);
    }
    for j in 0..t_out {
        let pos = if t_out == 1 { 0.0 } else { j as f64 * (t_in - 1) as f64 / (t_out - 1) as f64 };
        let lo = (pos.floor() as usize).min(t_in - 1);
        let hi = (lo + 1).min(t_in - 1);
        let frac = pos - lo as f64;
        m[[lo, j]] += 1.0 - frac;
        if hi != lo {
            m[[hi, j]] += frac;
        }
    }
    Ok(m)
}

/// Speech and EEG embeddings on a common `(B, N_e, T_s)` grid.
pub struct AlignedPair<'g> {
    /// Speech branch before flattening (also the speech input of the fusion
    /// stage).
    pub speech: Var<'g>,
    /// EEG embedding expanded to the speech frame rate.
    pub eeg: Var<'g>,
}

impl<'g> AlignedPair<'g> {
    /// Query rows `(B, N_e·T_s)` (EEG side).
    pub fn queries(&self) -> Var<'g> {
        flatten_rows(self.eeg)
    }

    /// Key rows `(B, N_e·T_s)` (speech side).
    pub fn keys(&self) -> Var<'g> {
        flatten_rows(self.speech)
    }
}

fn flatten_rows(v: Var<'_>) -> Var<'_> {
    let sh = v.shape();
    v.reshape(&[sh[0], sh[1..].iter().product()])
}

#[derive(Clone, Debug)]
pub struct AlignProjection {
    /// Sum the scales instead of learning a 4 → 1 map.
    pub additive: bool,
    pub scale_collapse: Linear,
    pub channel_proj: Conv1d,
}

impl AlignProjection {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            additive: cfg.gm_layers == 0,
            scale_collapse: Linear::new("align.scale_collapse", 4, 1),
            channel_proj: Conv1d::pointwise("align.channel_proj", cfg.speech_channels, cfg.eeg_channels),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        if !self.additive {
            self.scale_collapse.init(store, rng);
        }
        self.channel_proj.init(store, rng);
    }

    /// `speech: (B, N_s, T_s, 4)`, `eeg: (B, N_e, T_e)`.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, speech: Var<'g>, eeg: Var<'g>) -> Result<AlignedPair<'g>> {
        let (ss, es) = (speech.shape(), eeg.shape());
        if ss.len() != 4 || es.len() != 3 || ss[0] != es[0] || ss[3] != 4 {
            return Err(Error::shape("align_project", format!("speech {ss:?}, eeg {es:?}")));
        }
        let (b, ns, ts) = (ss[0], ss[1], ss[2]);
        let collapsed = if self.additive {
            speech.reshape(&[b * ns * ts, 4]).matmul(ctx.constant(Tensor::ones(IxDyn(&[4, 1]))))
        } else {
            self.scale_collapse.forward(ctx, speech)
        };
        let s = self.channel_proj.forward(ctx, collapsed.reshape(&[b, ns, ts]));
        let interp = interpolation_matrix(es[2], ts)?;
        let e = if es[2] == ts { eeg } else { eeg.matmul(ctx.constant(interp.into_dyn())) };
        Ok(AlignedPair { speech: s, eeg: e })
    }
}

fn unit_rows(m: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.nrows());
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        norms.push(n);
        let d = n.max(NORM_EPS);
        row.mapv_inplace(|v| v / d);
    }
    (out, norms)
}

/// Mean over rows `i` of `−log softmax_k(cos(q_i, x_k)/τ)[i]`.
///
/// Rows with norm below `1e−8` are divided by `1e−8` instead of their norm,
/// which makes an all-zero row's similarities exactly zero.
pub fn infonce_loss<'g>(q: Var<'g>, x: Var<'g>, tau: f64) -> Result<Var<'g>> {
    let (qv, xv) = (q.value(), x.value());
    if qv.ndim() != 2 || qv.shape() != xv.shape() {
        return Err(Error::shape("infonce_loss", format!("{:?} vs {:?}", qv.shape(), xv.shape())));
    }
    let b = qv.shape()[0];
    if b < 2 {
        return Err(Error::Invalid("contrastive loss needs a batch of at least 2".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("temperature must be positive, got {tau}")));
    }
    let q2 = qv.view().into_dimensionality::<Ix2>().expect("2-D").to_owned();
    let x2 = xv.view().into_dimensionality::<Ix2>().expect("2-D").to_owned();
    let (qn, qnorm) = unit_rows(&q2);
    let (xn, xnorm) = unit_rows(&x2);
    let logits = qn.dot(&xn.t()) / tau;
    let mut probs = Array2::<f64>::zeros((b, b));
    let mut total = 0.0;
    for i in 0..b {
        let row = logits.row(i);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let se: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        let lse = mx + se.ln();
        total += lse - logits[[i, i]];
        for k in 0..b {
            probs[[i, k]] = (logits[[i, k]] - lse).exp();
        }
    }
    let loss = total / b as f64;
    Ok(q.graph().op(ndarray::arr0(loss).into_dyn(), &[q, x], move |g, need| {
        let gv = *g.iter().next().expect("scalar");
        let mut ds = probs.clone();
        for i in 0..b {
            ds[[i, i]] -= 1.0;
        }
        ds *= gv / (b as f64 * tau);
        let back = |dn: Array2<f64>, unit: &Array2<f64>, norms: &[f64]| {
            let mut out = dn;
            for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                if norms[i] > NORM_EPS {
                    let proj = row.dot(&unit.row(i));
                    let u = unit.row(i);
                    row.zip_mut_with(&u, |r, &uv| *r = (*r - proj * uv) / norms[i]);
                } else {
                    row.mapv_inplace(|v| v / NORM_EPS);
                }
            }
            out.into_dyn()
        };
        vec![
            need[0].then(|| back(ds.dot(&xn), &qn, &qnorm)),
            need[1].then(|| back(ds.t().dot(&qn), &xn, &xnorm)),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::testing::{check_gradients, randn, GradCheckOptions};
    use rand::SeedableRng;

    fn loss_of(q: &Tensor, x: &Tensor) -> f64 {
        let g = Graph::inference();
        infonce_loss(g.constant(q.clone()), g.constant(x.clone()), 0.1).unwrap().item()
    }

    #[test]
    fn identical_rows_give_log_batch() {
        let q = Tensor::from_elem(IxDyn(&[8, 5]), 0.3);
        assert!((loss_of(&q, &q) - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_pair_value() {
        let q = ndarray::array![[1.0, 0.0], [0.0, 1.0]].into_dyn();
        let want = (1.0 + (-10f64).exp()).ln();
        assert!((loss_of(&q, &q) - want).abs() < 1e-15);
    }

    #[test]
    fn zero_rows_are_finite() {
        let q = Tensor::zeros(IxDyn(&[3, 4]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = randn(&mut rng, &[3, 4], 1.0);
        assert!((loss_of(&q, &x) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = randn(&mut rng, &[4, 6], 1.0);
        let x = randn(&mut rng, &[4, 6], 1.0);
        let report = check_gradients(
            &ParamStore::new(),
            &[q, x],
            |_, v| infonce_loss(v[0], v[1], 0.1).unwrap(),
            &GradCheckOptions { samples_per_tensor: 24, ..Default::default() },
        );
        assert!(report.max_error() < 1e-6, "{:?}", report.worst());
    }

    #[test]
    fn interpolation_identities() {
        let m = interpolation_matrix(4, 4).unwrap();
        assert_eq!(m, Array2::<f64>::eye(4));
        let m = interpolation_matrix(3, 9).unwrap();
        for col in m.columns() {
            assert!((col.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m[[0, 0]], 1.0);
        assert_eq!(m[[2, 8]], 1.0);
        assert!(interpolation_matrix(5, 3).is_err());
    }
}
