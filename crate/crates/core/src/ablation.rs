//! Variant and depth sweeps over the training pipeline.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::datasets::SegmentPair;
use crate::error::{Error, Result};
use crate::evaluation::evaluate_segments;
use crate::objectives::total_loss;
use crate::params::Ctx;
use crate::training::{electrode_graph, fit, steps_per_epoch, Batch, TrainConfig, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    /// No scan blocks; scales fused by addition.
    #[serde(rename = "w/o GM")]
    NoGm,
    /// Contrastive weight set to zero.
    #[serde(rename = "w/o Alignment")]
    NoAlignment,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoGm, Variant::NoAlignment];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGm => "w/o GM",
            Variant::NoAlignment => "w/o Alignment",
        }
    }

    /// `base` adjusted for this variant at `gm_layers` scan blocks.
    pub fn apply(self, base: &TrainConfig, gm_layers: usize) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.model.gm_layers = gm_layers;
        match self {
            Variant::Full => {}
            Variant::NoGm => cfg.model.gm_layers = 0,
            Variant::NoAlignment => cfg.lambda = 0.0,
        }
        cfg
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "full" => Ok(Variant::Full),
            "no-gm" | "w/o-gm" | "wo-gm" => Ok(Variant::NoGm),
            "no-alignment" | "w/o-alignment" | "wo-alignment" => Ok(Variant::NoAlignment),
            other => Err(Error::Invalid(format!("unknown variant `{other}`"))),
        }
    }
}

/// Grid of runs: every variant at every depth. `w/o GM` runs once whatever
/// the depth list.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub variants: Vec<Variant>,
    pub gm_layers: Vec<usize>,
}

impl AblationGrid {
    /// Variants at the base depth.
    pub fn variants(base: &TrainConfig) -> Self {
        Self { variants: Variant::ALL.to_vec(), gm_layers: vec![base.model.gm_layers.max(1)] }
    }

    /// The full model at each depth.
    pub fn depths(layers: Vec<usize>) -> Self {
        Self { variants: vec![Variant::Full], gm_layers: layers }
    }

    pub fn runs(&self, base: &TrainConfig) -> Vec<(Variant, TrainConfig)> {
        let mut out = Vec::new();
        for &v in &self.variants {
            if v == Variant::NoGm {
                out.push((v, v.apply(base, 0)));
                continue;
            }
            for &n in &self.gm_layers {
                out.push((v, v.apply(base, n)));
            }
        }
        out
    }
}

/// Parses `1..5`, `1..=5`, `2,4` or a single integer.
pub fn parse_layer_list(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Invalid(format!("cannot parse layer list `{s}`"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(num).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub gm_layers: usize,
    pub lambda: f64,
    pub parameters: usize,
    /// Bytes of every value recorded for one training step's forward pass
    /// and loss.
    pub activation_bytes: usize,
    pub final_loss: f64,
    pub test_si_sdr_db: Option<f64>,
    pub test_si_sdri_db: Option<f64>,
    pub seconds: f64,
}

/// Activation memory of one training forward pass on `batch`.
pub fn activation_bytes(trainer: &Trainer, batch: &Batch) -> Result<usize> {
    let g = Graph::new();
    let ctx = Ctx::new(&g, &trainer.store, true);
    let out = trainer.model.forward(ctx, g.constant(batch.mixture.clone()), g.constant(batch.eeg.clone()))?;
    total_loss(out.estimate, &batch.target, &out.aligned, trainer.config.lambda, trainer.config.model.tau)?;
    Ok(g.value_bytes())
}

/// Trains and scores every run of `grid`, writing one JSON row per run to
/// `log` as soon as it finishes.
pub fn run_ablation(
    base: &TrainConfig,
    grid: &AblationGrid,
    train: &[SegmentPair],
    test: &[SegmentPair],
    log: &mut dyn Write,
) -> Result<Vec<AblationRow>> {
    if train.len() < base.batch_size.min(2) || train.len() < 2 {
        return Err(Error::Invalid("ablation needs at least two training segments".into()));
    }
    let graph = electrode_graph(&base.model, train[0].eeg.positions.as_ref().map(|p| p.view()))?;
    let mut rows = Vec::new();
    for (variant, cfg) in grid.runs(base) {
        let start = Instant::now();
        let steps = cfg.epochs * steps_per_epoch(train.len(), cfg.batch_size);
        let mut trainer = Trainer::new(cfg.clone(), &graph, steps)?;
        let probe: Vec<&SegmentPair> = train.iter().take(cfg.batch_size).collect();
        let bytes = activation_bytes(&trainer, &Batch::from_segments(&probe, &cfg.model)?)?;
        let summary = fit(&mut trainer, train, &[], &mut std::io::sink(), None)?;
        let (si, sii) = if test.is_empty() {
            (None, None)
        } else {
            let r = evaluate_segments(&trainer.model, &trainer.store, test, 1)?;
            (r.summary.estimate.si_sdr_db, r.summary.si_sdri_db)
        };
        let row = AblationRow {
            variant,
            gm_layers: cfg.model.gm_layers,
            lambda: cfg.lambda,
            parameters: trainer.store.numel(),
            activation_bytes: bytes,
            final_loss: summary.final_loss,
            test_si_sdr_db: si,
            test_si_sdri_db: sii,
            seconds: start.elapsed().as_secs_f64(),
        };
        writeln!(log, "{}", serde_json::to_string(&row)?)?;
        log::info!("{} N={} SI-SDRi {:?}", variant.label(), row.gm_layers, row.test_si_sdri_db);
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_lists() {
        assert_eq!(parse_layer_list("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_layer_list("1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_layer_list("2,4").unwrap(), vec![2, 4]);
        assert!(parse_layer_list("5..1").is_err());
    }

    #[test]
    fn grid_expansion() {
        let base = TrainConfig::default();
        let runs = AblationGrid { variants: Variant::ALL.to_vec(), gm_layers: vec![1, 2] }.runs(&base);
        let labels: Vec<(Variant, usize, f64)> = runs.iter().map(|(v, c)| (*v, c.model.gm_layers, c.lambda)).collect();
        assert_eq!(
            labels,
            vec![
                (Variant::Full, 1, 3.0),
                (Variant::Full, 2, 3.0),
                (Variant::NoGm, 0, 3.0),
                (Variant::NoAlignment, 1, 0.0),
                (Variant::NoAlignment, 2, 0.0)
            ]
        );
        assert_eq!("w/o GM".parse::<Variant>().unwrap(), Variant::NoGm);
    }
}
