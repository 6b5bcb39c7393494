//! Training objective: negative SI-SDR on the waveform plus a weighted
//! contrastive alignment term.

use ndarray::{Array1, Axis, Ix2};

use crate::alignment::{infonce_loss, AlignedPair};
use crate::autograd::{Tensor, Var};
use crate::datasets::AudioWave;
use crate::error::{Error, Result};
use crate::metrics::{self, EPS};

const DB: f64 = 10.0 / std::f64::consts::LN_10;

/// Default weight of the alignment term.
pub const DEFAULT_LAMBDA: f64 = 3.0;

/// Negative SI-SDR of one waveform pair (the metric with its sign flipped).
pub fn si_sdr_loss(reference: &AudioWave, estimate: &AudioWave) -> Result<f64> {
    if reference.sample_rate_hz != estimate.sample_rate_hz {
        return Err(Error::Invalid(format!(
            "reference at {} Hz, estimate at {} Hz",
            reference.sample_rate_hz, estimate.sample_rate_hz
        )));
    }
    Ok(-metrics::si_sdr(&reference.samples, &estimate.samples)?)
}

/// Batch mean of the negative SI-SDR between `estimate` and the fixed
/// `reference`, both `(B, 1, T)` or `(B, T)`. The gradient flows to the
/// estimate only.
pub fn si_sdr_loss_batch<'g>(estimate: Var<'g>, reference: &Tensor) -> Result<Var<'g>> {
    let ev = estimate.value();
    if ev.shape() != reference.shape() || !(2..=3).contains(&ev.ndim()) {
        return Err(Error::shape("si_sdr_loss", format!("{:?} vs {:?}", ev.shape(), reference.shape())));
    }
    let b = ev.shape()[0];
    let t = ev.len() / b.max(1);
    let e2 = ev.to_shape((b, t)).expect("contiguous").into_dimensionality::<Ix2>().expect("2-D").to_owned();
    let s2 = reference.to_shape((b, t)).expect("contiguous").into_dimensionality::<Ix2>().expect("2-D").to_owned();
    // Per-row coefficients of the gradient: d(SI-SDR)/dê = c_s·s + c_e·ê.
    let mut coef_s = Array1::zeros(b);
    let mut coef_e = Array1::zeros(b);
    let mut total = 0.0;
    for i in 0..b {
        let (s, e) = (s2.row(i), e2.row(i));
        let energy = s.dot(&s);
        if energy <= 0.0 {
            return Err(Error::SilentReference { segment: format!("batch item {i}") });
        }
        let proj = e.dot(&s);
        let alpha = proj / energy;
        let num = alpha * alpha * energy;
        let resid: f64 = s.iter().zip(e.iter()).map(|(sv, ev)| (ev - alpha * sv).powi(2)).sum();
        let den = resid + EPS;
        total += DB * (num.max(EPS) / den).ln();
        let d_num = if num > EPS { 2.0 * alpha / num } else { 0.0 };
        coef_s[i] = d_num + 2.0 * alpha / den;
        coef_e[i] = -2.0 / den;
        if !total.is_finite() {
            return Err(Error::NonFinite { what: "SI-SDR".into(), step: None });
        }
    }
    let shape = ev.raw_dim();
    let loss = -total / b as f64;
    Ok(estimate.graph().op(ndarray::arr0(loss).into_dyn(), &[estimate], move |g, _| {
        let k = -*g.iter().next().expect("scalar") * DB / b as f64;
        let mut out = e2.clone();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let s = s2.row(i);
            row.zip_mut_with(&s, |o, &sv| *o = k * (coef_s[i] * sv + coef_e[i] * *o));
        }
        vec![Some(out.into_shape_with_order(shape.clone()).expect("same size"))]
    }))
}

/// Terms of the total objective. `total` is computed from the two terms with
/// the same operations as the differentiated loss, so
/// `total == si_sdr_term + lambda * infonce_term` holds bitwise.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub si_sdr_term: f64,
    pub infonce_term: f64,
    pub lambda: f64,
}

/// Objective on one batch and its scalar breakdown.
pub struct TotalLoss<'g> {
    pub loss: Var<'g>,
    pub report: LossReport,
}

/// `−SI-SDR + λ·InfoNCE`. With `λ = 0` the contrastive term is still
/// reported but contributes neither value nor gradient.
pub fn total_loss<'g>(
    estimate: Var<'g>,
    reference: &Tensor,
    aligned: &AlignedPair<'g>,
    lambda: f64,
    tau: f64,
) -> Result<TotalLoss<'g>> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Invalid(format!("loss weight must be finite and nonnegative, got {lambda}")));
    }
    let si = si_sdr_loss_batch(estimate, reference)?;
    let info = infonce_loss(aligned.queries(), aligned.keys(), tau)?;
    let loss = if lambda == 0.0 { si } else { si.add(info.scale(lambda)) };
    let report = LossReport {
        total: loss.item(),
        si_sdr_term: si.item(),
        infonce_term: info.item(),
        lambda,
    };
    debug_assert!(lambda == 0.0 || report.total == report.si_sdr_term + lambda * report.infonce_term);
    Ok(TotalLoss { loss, report })
}

/// Combines already evaluated terms exactly as [`total_loss`] does.
pub fn combine_terms(si_sdr_term: f64, infonce_term: f64, lambda: f64) -> LossReport {
    let total = if lambda == 0.0 { si_sdr_term } else { si_sdr_term + lambda * infonce_term };
    LossReport { total, si_sdr_term, infonce_term, lambda }
}
