use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use eegtse::ablation::{parse_layer_list, run_ablation, AblationGrid, Variant};
use eegtse::datasets::{read_eeg, read_manifest, read_wav, synth_corpus, write_manifest, write_wav, CorpusConfig, Split, SynthConfig};
use eegtse::evaluation::{evaluate_corpus, extract, write_boxplot};
use eegtse::extractor::dry_run_shapes;
use eegtse::training::{electrode_graph, fit, load_checkpoint, steps_per_epoch, TrainConfig, Trainer};
use eegtse::{ModelConfig, Result};

#[derive(Parser)]
#[command(name = "eegtse", version, about = "EEG-guided target speaker extraction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long, default_value_t = 60.0)]
        trial_seconds: f64,
        #[arg(long, default_value_t = 187.5)]
        latency_ms: f64,
        #[arg(long, default_value_t = 0.0)]
        eeg_snr_db: f64,
        #[arg(long, default_value_t = 0.0)]
        mix_snr_db: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0.1)]
        valid_fraction: f64,
    },
    /// Train on the train/valid splits of a manifest.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// TOML training config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        gm_layers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test split of a manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Line-delimited per-segment records.
        #[arg(long)]
        report: Option<PathBuf>,
        /// SVG box plot.
        #[arg(long)]
        figure: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Extract the attended speaker from a mixture WAV and an EEG file.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mixture: PathBuf,
        /// Raw little-endian f32 EEG; the JSON sidecar defaults to the same
        /// path with a `.json` extension.
        #[arg(long)]
        eeg: PathBuf,
        #[arg(long)]
        eeg_meta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print every intermediate shape for a zero batch.
    Inspect {
        #[arg(long, default_value = "full-scale")]
        preset: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Train and score a grid of variants or GM depths.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Axis::Variant)]
        axis: Axis,
        /// Layer list for `gm-layers` (`1..5`, `2,4`) or variants for
        /// `variant` (`full,no-gm,no-alignment`).
        #[arg(long)]
        values: Option<String>,
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 6e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Variant,
    GmLayers,
}

fn splits(manifest: &Path) -> Result<(Vec<eegtse::datasets::SegmentPair>, Vec<eegtse::datasets::SegmentPair>, Vec<eegtse::datasets::SegmentPair>)> {
    let all = read_manifest(manifest)?;
    let pick = |s: Split| all.iter().filter(|p| p.split == s).cloned().collect::<Vec<_>>();
    Ok((pick(Split::Train), pick(Split::Valid), pick(Split::Test)))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { out, preset, trials, trial_seconds, latency_ms, eeg_snr_db, mix_snr_db, seed, train_fraction, valid_fraction } => {
            let model = ModelConfig::preset(&preset)?;
            let cfg = CorpusConfig {
                synth: SynthConfig {
                    n_electrodes: model.n_electrodes,
                    neural_latency_ms: latency_ms,
                    eeg_snr_db,
                    mix_snr_db,
                    trial_seconds,
                    seed,
                    audio_rate_hz: model.audio_rate_hz,
                    eeg_rate_hz: model.eeg_rate_hz,
                    ..SynthConfig::default()
                },
                trials,
                segment_seconds: model.segment_seconds,
                train_fraction,
                valid_fraction,
            };
            let pairs = synth_corpus(&cfg)?;
            let path = write_manifest(&pairs, &out)?;
            println!("{} segments -> {}", pairs.len(), path.display());
        }
        Cmd::Train { manifest, config, preset, epochs, batch_size, lr, lambda, gm_layers, seed, resume, out } => {
            let mut trainer = match &resume {
                Some(dir) => load_checkpoint(dir)?,
                None => {
                    let mut cfg = match &config {
                        Some(p) => TrainConfig::from_toml(&fs::read_to_string(p)?)?,
                        None => TrainConfig::default(),
                    };
                    if let Some(p) = preset {
                        cfg.model = ModelConfig::preset(&p)?;
                    }
                    cfg.epochs = epochs.unwrap_or(cfg.epochs);
                    cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
                    cfg.peak_lr = lr.unwrap_or(cfg.peak_lr);
                    cfg.lambda = lambda.unwrap_or(cfg.lambda);
                    cfg.model.gm_layers = gm_layers.unwrap_or(cfg.model.gm_layers);
                    cfg.seed = seed.unwrap_or(cfg.seed);
                    cfg.train_manifest = manifest.clone().or(cfg.train_manifest);
                    cfg.validate()?;
                    let path = cfg.train_manifest.clone().ok_or_else(|| eegtse::Error::Config("no manifest given".into()))?;
                    let (train, _, _) = splits(&path)?;
                    let first = train.first().ok_or_else(|| eegtse::Error::Config("manifest has no training segments".into()))?;
                    let graph = electrode_graph(&cfg.model, first.eeg.positions.as_ref().map(|p| p.view()))?;
                    let steps = cfg.epochs * steps_per_epoch(train.len(), cfg.batch_size);
                    Trainer::new(cfg, &graph, steps)?
                }
            };
            let path = manifest
                .or_else(|| trainer.config.train_manifest.clone())
                .ok_or_else(|| eegtse::Error::Config("no manifest given".into()))?;
            let (train, valid, _) = splits(&path)?;
            fs::create_dir_all(&out)?;
            let mut log = BufWriter::new(File::options().create(true).append(true).open(out.join("train_log.jsonl"))?);
            let summary = fit(&mut trainer, &train, &valid, &mut log, Some(&out))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Evaluate { manifest, checkpoint, report, figure, threads } => {
            let r = evaluate_corpus(&manifest, &checkpoint, threads)?;
            if let Some(p) = report {
                let mut w = BufWriter::new(File::create(&p)?);
                r.write_jsonl(&mut w)?;
                w.flush()?;
                fs::write(p.with_extension("summary.json"), serde_json::to_string_pretty(&r.summary)?)?;
            }
            if let Some(p) = figure {
                write_boxplot(&r, &p)?;
            }
            print!("{}", r.summary_table());
        }
        Cmd::Extract { checkpoint, mixture, eeg, eeg_meta, out } => {
            let trainer = load_checkpoint(&checkpoint)?;
            let meta = eeg_meta.unwrap_or_else(|| eeg.with_extension("json"));
            let est = extract(&trainer.model, &trainer.store, &read_wav(&mixture)?, &read_eeg(&eeg, &meta)?)?;
            write_wav(&out, &est)?;
            println!("{} samples -> {}", est.len(), out.display());
        }
        Cmd::Inspect { preset, config, batch } => {
            let cfg = match config {
                Some(p) => TrainConfig::from_toml(&fs::read_to_string(p)?)?.model,
                None => ModelConfig::preset(&preset)?,
            };
            println!("T = {} samples, T_s = {}, T_e = {}", cfg.audio_len(), cfg.speech_frames(), cfg.eeg_frames());
            for (name, shape) in dry_run_shapes(&cfg, batch)? {
                let dims: Vec<String> = shape.iter().enumerate().map(|(i, d)| if i == 0 { "B".into() } else { d.to_string() }).collect();
                println!("{name:<8} ({})", dims.join(","));
            }
        }
        Cmd::Ablate { manifest, axis, values, preset, epochs, batch_size, lr, seed, out } => {
            let base = TrainConfig { model: ModelConfig::preset(&preset)?, epochs, batch_size, peak_lr: lr, seed, ..TrainConfig::default() };
            base.validate()?;
            let grid = match axis {
                Axis::GmLayers => AblationGrid::depths(parse_layer_list(values.as_deref().unwrap_or("1..5"))?),
                Axis::Variant => {
                    let mut g = AblationGrid::variants(&base);
                    if let Some(v) = values {
                        g.variants = v.split(',').map(str::parse::<Variant>).collect::<Result<_>>()?;
                    }
                    g
                }
            };
            let (train, _, test) = splits(&manifest)?;
            let mut sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(std::io::sink()),
            };
            let rows = run_ablation(&base, &grid, &train, &test, &mut *sink)?;
            sink.flush()?;
            println!("{:<14} {:>3} {:>10} {:>14} {:>10}", "variant", "N", "params", "activations", "SI-SDRi");
            for r in rows {
                let sii = r.test_si_sdri_db.map_or("-".into(), |v| format!("{v:.2}"));
                println!("{:<14} {:>3} {:>10} {:>14} {:>10}", r.variant.label(), r.gm_layers, r.parameters, r.activation_bytes, sii);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
