//! Windowed extraction and corpus-level scoring.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::datasets::{read_manifest, AudioWave, EegRecord, SegmentPair, Split};
use crate::error::{Error, Result};
use crate::extractor::Model;
use crate::metrics;
use crate::params::ParamStore;
use crate::training::{infer, load_checkpoint, with_segment, Batch};

/// Extracts the attended speaker from a recording of any length by running
/// the model on consecutive windows of its configured length. The last
/// window is zero-padded and the output trimmed to the input length.
pub fn extract(model: &Model, store: &ParamStore, mixture: &AudioWave, eeg: &EegRecord) -> Result<AudioWave> {
    let cfg = &model.config;
    if mixture.sample_rate_hz != cfg.audio_rate_hz || eeg.sample_rate_hz != cfg.eeg_rate_hz {
        return Err(Error::Invalid(format!(
            "inputs at {}/{} Hz, model expects {}/{} Hz",
            mixture.sample_rate_hz, eeg.sample_rate_hz, cfg.audio_rate_hz, cfg.eeg_rate_hz
        )));
    }
    if eeg.n_electrodes() != cfg.n_electrodes {
        return Err(Error::Invalid(format!("{} electrodes, model expects {}", eeg.n_electrodes(), cfg.n_electrodes)));
    }
    let (wa, we) = (cfg.audio_len(), cfg.eeg_len());
    let n = mixture.len();
    let windows = n.div_ceil(wa).max(1);
    let mut mix = Array3::zeros((windows, 1, wa));
    let mut cue = Array3::zeros((windows, cfg.n_electrodes, we));
    for k in 0..windows {
        let a0 = k * wa;
        let a1 = (a0 + wa).min(n);
        for (dst, src) in mix.slice_mut(s![k, 0, ..a1 - a0]).iter_mut().zip(&mixture.samples[a0..a1]) {
            *dst = *src;
        }
        let e0 = (k * we).min(eeg.n_samples());
        let e1 = (e0 + we).min(eeg.n_samples());
        cue.slice_mut(s![k, .., ..e1 - e0]).assign(&eeg.data.slice(s![.., e0..e1]));
    }
    let batch = Batch { target: mix.clone().into_dyn(), mixture: mix.into_dyn(), eeg: cue.into_dyn() };
    let est = infer(model, store, &batch)?;
    let samples: Vec<f64> = est.iter().copied().take(n).collect();
    AudioWave::new(samples, mixture.sample_rate_hz)
}

/// Scores of one estimate against its reference. The intelligibility
/// measures are `None` when fewer than 30 non-silent frames remain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub si_sdr_db: f64,
    pub sdr_db: f64,
    pub stoi: Option<f64>,
    pub estoi: Option<f64>,
}

impl MetricSet {
    pub fn compute(reference: &[f64], estimate: &[f64], rate_hz: u32) -> Result<Self> {
        let optional = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::TooShort(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            si_sdr_db: metrics::si_sdr(reference, estimate)?,
            sdr_db: metrics::sdr(reference, estimate)?,
            stoi: optional(metrics::stoi(reference, estimate, rate_hz, false))?,
            estoi: optional(metrics::stoi(reference, estimate, rate_hz, true))?,
        })
    }

    fn entries(&self) -> [(&'static str, Option<f64>); 4] {
        [("si_sdr", Some(self.si_sdr_db)), ("sdr", Some(self.sdr_db)), ("stoi", self.stoi), ("estoi", self.estoi)]
    }
}

/// Model estimate and unprocessed mixture, both scored against the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub segment_id: String,
    pub estimate: MetricSet,
    pub mixture: MetricSet,
}

/// Medians over segments; `None` when no segment produced the value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MedianSet {
    pub si_sdr_db: Option<f64>,
    pub sdr_db: Option<f64>,
    pub stoi: Option<f64>,
    pub estoi: Option<f64>,
}

impl MedianSet {
    fn of(sets: &[&MetricSet]) -> Self {
        let col = |f: &dyn Fn(&MetricSet) -> Option<f64>| {
            let v: Vec<f64> = sets.iter().filter_map(|m| f(m)).collect();
            metrics::median(&v)
        };
        Self {
            si_sdr_db: col(&|m| Some(m.si_sdr_db)),
            sdr_db: col(&|m| Some(m.sdr_db)),
            stoi: col(&|m| m.stoi),
            estoi: col(&|m| m.estoi),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub segments: usize,
    pub estimate: MedianSet,
    pub mixture: MedianSet,
    /// Median of per-segment SI-SDR improvement over the mixture.
    pub si_sdri_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<SegmentMetrics>,
    pub summary: EvalSummary,
}

/// One `{segment_id, source, metric, value}` record of the report stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub segment_id: String,
    pub source: String,
    pub metric: String,
    pub value: f64,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<SegmentMetrics>) -> Self {
        let est: Vec<&MetricSet> = rows.iter().map(|r| &r.estimate).collect();
        let mix: Vec<&MetricSet> = rows.iter().map(|r| &r.mixture).collect();
        let gains: Vec<f64> = rows.iter().map(|r| r.estimate.si_sdr_db - r.mixture.si_sdr_db).collect();
        let summary = EvalSummary {
            segments: rows.len(),
            estimate: MedianSet::of(&est),
            mixture: MedianSet::of(&mix),
            si_sdri_db: metrics::median(&gains),
        };
        Self { rows, summary }
    }

    pub fn records(&self) -> Vec<MetricRecord> {
        let mut out = Vec::new();
        for r in &self.rows {
            for (source, set) in [("estimate", &r.estimate), ("mixture", &r.mixture)] {
                for (metric, value) in set.entries() {
                    if let Some(value) = value {
                        out.push(MetricRecord {
                            segment_id: r.segment_id.clone(),
                            source: source.into(),
                            metric: metric.into(),
                            value,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn write_jsonl(&self, w: &mut dyn Write) -> Result<()> {
        for rec in self.records() {
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }

    /// Plain-text median table with one row per source.
    pub fn summary_table(&self) -> String {
        let f = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |x| format!("{x:.digits$}"));
        let mut s = format!(
            "{:<10} {:>9} {:>9} {:>7} {:>7}\n",
            "source", "SI-SDR", "SDR", "STOI", "ESTOI"
        );
        for (name, m) in [("Mixture", &self.summary.mixture), ("Estimate", &self.summary.estimate)] {
            s += &format!(
                "{:<10} {:>9} {:>9} {:>7} {:>7}\n",
                name,
                f(m.si_sdr_db, 2),
                f(m.sdr_db, 2),
                f(m.stoi, 3),
                f(m.estoi, 3)
            );
        }
        s += &format!("median SI-SDRi {} dB over {} segments\n", f(self.summary.si_sdri_db, 2), self.summary.segments);
        s
    }
}

/// Scores every segment, spreading the work over `threads` workers. The
/// result order follows `segments` regardless of scheduling.
pub fn evaluate_segments(model: &Model, store: &ParamStore, segments: &[SegmentPair], threads: usize) -> Result<EvalReport> {
    let score = |p: &SegmentPair| -> Result<SegmentMetrics> {
        let est = extract(model, store, &p.mixture, &p.eeg)?;
        let rate = p.mixture.sample_rate_hz;
        let id = p.id();
        let estimate = MetricSet::compute(&p.target.samples, &est.samples, rate).map_err(|e| with_segment(e, &id))?;
        let mixture = MetricSet::compute(&p.target.samples, &p.mixture.samples, rate).map_err(|e| with_segment(e, &id))?;
        Ok(SegmentMetrics { segment_id: id, estimate, mixture })
    };
    let threads = threads.clamp(1, segments.len().max(1));
    let mut slots: Vec<Option<Result<SegmentMetrics>>> = (0..segments.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let score = &score;
                scope.spawn(move || {
                    (w..segments.len()).step_by(threads).map(|i| (i, score(&segments[i]))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("evaluation worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    let rows = slots.into_iter().map(|r| r.expect("every slot filled")).collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows))
}

/// Loads a checkpoint directory and scores the test split of a manifest;
/// `threads = 0` uses every available core.
pub fn evaluate_corpus(manifest: &Path, checkpoint: &Path, threads: usize) -> Result<EvalReport> {
    if !checkpoint.exists() {
        return Err(Error::MissingFile(checkpoint.to_path_buf()));
    }
    let segments: Vec<SegmentPair> = read_manifest(manifest)?.into_iter().filter(|p| p.split == Split::Test).collect();
    if segments.is_empty() {
        return Err(Error::Manifest { path: manifest.to_path_buf(), msg: "no test segments".into() });
    }
    let trainer = load_checkpoint(checkpoint)?;
    let threads = if threads == 0 { default_threads() } else { threads };
    evaluate_segments(&trainer.model, &trainer.store, &segments, threads)
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Box plot of per-segment SI-SDR, STOI and ESTOI for the mixture and the
/// estimate, written as SVG.
pub fn write_boxplot(report: &EvalReport, path: &Path) -> Result<()> {
    use plotters::prelude::*;
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (900, 320)).into_drawing_area();
        root.fill(&WHITE)?;
        let panels = root.split_evenly((1, 3));
        let metric_sets: [(&str, fn(&MetricSet) -> Option<f64>); 3] = [
            ("SI-SDR (dB)", |m| Some(m.si_sdr_db)),
            ("STOI", |m| m.stoi),
            ("ESTOI", |m| m.estoi),
        ];
        for (panel, (title, get)) in panels.iter().zip(metric_sets) {
            let mix: Vec<f32> = report.rows.iter().filter_map(|r| get(&r.mixture)).map(|v| v as f32).collect();
            let est: Vec<f32> = report.rows.iter().filter_map(|r| get(&r.estimate)).map(|v| v as f32).collect();
            if mix.is_empty() || est.is_empty() {
                continue;
            }
            let all = mix.iter().chain(&est);
            let lo = all.clone().fold(f32::INFINITY, |a, &b| a.min(b));
            let hi = all.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let pad = ((hi - lo) * 0.1).max(1e-3);
            let labels = ["Mixture", "Estimate"];
            let mut chart = ChartBuilder::on(panel)
                .caption(title, ("sans-serif", 16))
                .margin(10)
                .x_label_area_size(25)
                .y_label_area_size(45)
                .build_cartesian_2d(labels.into_segmented(), (lo - pad)..(hi + pad))?;
            chart.configure_mesh().disable_x_mesh().draw()?;
            chart.draw_series([
                Boxplot::new_vertical(SegmentValue::CenterOf(&labels[0]), &Quartiles::new(&mix)),
                Boxplot::new_vertical(SegmentValue::CenterOf(&labels[1]), &Quartiles::new(&est)),
            ])?;
        }
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| Error::Invalid(format!("figure: {e}")))
}

/// Per-segment values of one metric as a `(segments, 2)` array of
/// `[mixture, estimate]`.
pub fn metric_matrix(report: &EvalReport, get: fn(&MetricSet) -> Option<f64>) -> Array2<f64> {
    Array2::from_shape_fn((report.rows.len(), 2), |(i, j)| {
        let r = &report.rows[i];
        get(if j == 0 { &r.mixture } else { &r.estimate }).unwrap_or(f64::NAN)
    })
}
