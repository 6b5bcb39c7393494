mod common;

use std::time::Instant;

use ndarray::{Array2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{golden_pair, segments, status};
use eegtse::ablation::{run_ablation, AblationGrid};
use eegtse::alignment::infonce_loss;
use eegtse::autograd::{Graph, Tensor};
use eegtse::config::{GraphMode, ModelConfig};
use eegtse::datasets::{
    eeg_source_envelope, peak_lag, read_manifest, synth_corpus, synth_trial, write_manifest, CorpusConfig, Split,
    SynthConfig,
};
use eegtse::eeg_encoder::{build_graph, cheb_graph_conv, ResBlock};
use eegtse::extractor::{dry_run_shapes, ChunkPlan, Cmca, Decoder, Dprnn, Model};
use eegtse::metrics::{si_sdr, stoi};
use eegtse::objectives::{combine_terms, si_sdr_loss_batch, total_loss};
use eegtse::params::ParamStore;
use eegtse::scan::selective_scan;
use eegtse::speech_encoder::{cross_scan, cross_unscan, GmBlock, ScanDirection};
use eegtse::testing::{check_gradients, randn, GradCheckOptions};
use eegtse::training::{
    electrode_graph, fit, infer, load_checkpoint, save_checkpoint, steps_per_epoch, Batch, TrainConfig, Trainer,
};

fn naive_scan(x: &Tensor, delta: &Tensor, b: &Tensor, c: &Tensor, a: &Tensor, d: &Tensor) -> Tensor {
    let (s, l, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = a.shape()[1];
    let mut y = Tensor::zeros(IxDyn(&[s, l, w]));
    for si in 0..s {
        for di in 0..w {
            let mut h = vec![0.0; n];
            for t in 0..l {
                let dt = delta[[si, t, di]];
                let mut acc = 0.0;
                for (ni, hn) in h.iter_mut().enumerate() {
                    *hn = (dt * a[[di, ni]]).exp() * *hn + dt * b[[si, t, ni]] * x[[si, t, di]];
                    acc += c[[si, t, ni]] * *hn;
                }
                y[[si, t, di]] = acc + d[di] * x[[si, t, di]];
            }
        }
    }
    y
}

#[test]
fn criterion_01_scan_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = rng.gen_range(1..=3);
        let l = rng.gen_range(1..=256);
        let w = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=16);
        let x = randn(&mut rng, &[s, l, w], 1.0);
        let delta = randn(&mut rng, &[s, l, w], 1.0).mapv(|v| v.exp().ln_1p() * 0.2);
        let b = randn(&mut rng, &[s, l, n], 1.0);
        let c = randn(&mut rng, &[s, l, n], 1.0);
        let a = randn(&mut rng, &[w, n], 1.0).mapv(|v| -v.exp());
        let d = randn(&mut rng, &[w], 1.0);
        let block = rng.gen_range(1..=64);
        let want = naive_scan(&x, &delta, &b, &c, &a, &d);
        let g = Graph::new();
        let leaf = |t: &Tensor| g.leaf(t.clone());
        let got = selective_scan(leaf(&x), leaf(&delta), leaf(&b), leaf(&c), leaf(&a), leaf(&d), block).unwrap();
        let err = (&*got.value() - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst < 1e-6 && secs < 10.0;
    status(1, ok, &format!("100 random scans, max abs error {worst:.2e}, {secs:.2} s"));
    assert!(ok);
}

#[test]
fn criterion_02_gradient_suite() {
    let start = Instant::now();
    let cfg = ModelConfig::miniature();
    let opts = GradCheckOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut results: Vec<(&str, f64, f64)> = Vec::new();

    {
        let block = ResBlock::new("rb", 3, 4);
        let mut store = ParamStore::new();
        block.init(&mut store, &mut rng);
        let x = randn(&mut rng, &[2, 3, 10], 1.0);
        let r = check_gradients(&store, &[x], move |ctx, v| block.forward(ctx, v[0]).sum_all(), &opts);
        results.push(("res_block", r.max_error(), 1e-4));
    }
    {
        let lap = build_graph(4, None, GraphMode::Full).unwrap().scaled_laplacian.into_dyn();
        let x = randn(&mut rng, &[2, 4, 6], 1.0);
        let theta = randn(&mut rng, &[3, 6, 6], 0.3);
        let w = randn(&mut rng, &[2, 4, 6], 1.0);
        let r = check_gradients(
            &ParamStore::new(),
            &[x, theta],
            move |ctx, v| {
                let l = ctx.constant(lap.clone());
                cheb_graph_conv(v[0], l, v[1]).unwrap().mul(ctx.constant(w.clone())).sum_all()
            },
            &opts,
        );
        results.push(("cheb_graph_conv", r.max_error(), 1e-4));
    }
    {
        let block = GmBlock::new("gm", &cfg);
        let mut store = ParamStore::new();
        block.init(&mut store, &mut rng);
        let x = randn(&mut rng, &[1, cfg.speech_channels, 6, 4], 1.0);
        let w = randn(&mut rng, &[1, cfg.speech_channels, 6, 4], 1.0);
        let r = check_gradients(
            &store,
            &[x],
            move |ctx, v| block.forward(ctx, v[0]).unwrap().mul(ctx.constant(w.clone())).sum_all(),
            &opts,
        );
        results.push(("gm_block", r.max_error(), 1e-4));
    }
    {
        let cmca = Cmca::new(&cfg);
        let mut store = ParamStore::new();
        cmca.init(&mut store, &mut rng);
        let e = randn(&mut rng, &[1, cfg.eeg_channels, 12], 1.0);
        let s = randn(&mut rng, &[1, cfg.eeg_channels, 12], 1.0);
        let w = randn(&mut rng, &[1, cfg.eeg_channels, 12], 1.0);
        let r = check_gradients(
            &store,
            &[e, s],
            move |ctx, v| cmca.forward(ctx, v[0], v[1]).unwrap().0.mul(ctx.constant(w.clone())).sum_all(),
            &opts,
        );
        results.push(("cmca_fuse", r.max_error(), 1e-4));
    }
    {
        let dprnn = Dprnn::new(&ModelConfig { chunk_len: 4, ..cfg.clone() });
        let mut store = ParamStore::new();
        dprnn.init(&mut store, &mut rng);
        let y = randn(&mut rng, &[1, cfg.eeg_channels, 9], 1.0);
        let w = randn(&mut rng, &[1, cfg.speech_channels, 9], 1.0);
        let r = check_gradients(
            &store,
            &[y],
            move |ctx, v| dprnn.forward(ctx, v[0]).unwrap().mul(ctx.constant(w.clone())).sum_all(),
            &opts,
        );
        results.push(("dprnn_mask", r.max_error(), 1e-4));
    }
    {
        let dec = Decoder::new(&cfg);
        let mut store = ParamStore::new();
        dec.init(&mut store, &mut rng);
        let s = randn(&mut rng, &[1, cfg.speech_channels, 7], 1.0);
        let w = randn(&mut rng, &[1, 1, 30], 1.0);
        let r = check_gradients(
            &store,
            &[s],
            move |ctx, v| dec.forward(ctx, v[0], 30).mul(ctx.constant(w.clone())).sum_all(),
            &opts,
        );
        results.push(("decode", r.max_error(), 1e-4));
    }
    {
        let q = randn(&mut rng, &[4, 10], 1.0);
        let x = randn(&mut rng, &[4, 10], 1.0);
        let r = check_gradients(&ParamStore::new(), &[q, x], |_, v| infonce_loss(v[0], v[1], 0.1).unwrap(), &opts);
        results.push(("infonce_loss", r.max_error(), 1e-4));
    }
    {
        let s = randn(&mut rng, &[2, 1, 40], 1.0);
        let e = &s + &randn(&mut rng, &[2, 1, 40], 0.7);
        let r = check_gradients(&ParamStore::new(), &[e], move |_, v| si_sdr_loss_batch(v[0], &s).unwrap(), &opts);
        results.push(("si_sdr_loss", r.max_error(), 1e-4));
    }
    {
        let model = Model::new(&cfg).unwrap();
        let graph = build_graph(cfg.n_electrodes, None, GraphMode::Full).unwrap();
        let store = model.init(&graph, 5).unwrap();
        let mix = randn(&mut rng, &[2, 1, cfg.audio_len()], 0.3);
        let target = randn(&mut rng, &[2, 1, cfg.audio_len()], 0.3);
        let eeg = randn(&mut rng, &[2, cfg.n_electrodes, cfg.eeg_len()], 1.0);
        let tau = cfg.tau;
        let r = check_gradients(
            &store,
            &[mix, eeg],
            move |ctx, v| {
                let out = model.forward(ctx, v[0], v[1]).unwrap();
                total_loss(out.estimate, &target, &out.aligned, 3.0, tau).unwrap().loss
            },
            &GradCheckOptions { samples_per_tensor: 3, ..opts.clone() },
        );
        results.push(("end-to-end forward", r.max_error(), 1e-3));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = results.iter().all(|(_, e, tol)| e < tol) && secs < 120.0;
    let detail: Vec<String> = results.iter().map(|(n, e, _)| format!("{n} {e:.1e}")).collect();
    status(2, ok, &format!("{} ({secs:.1} s)", detail.join(", ")));
    assert!(ok);
}

#[test]
fn criterion_03_loss_identities() {
    let g = Graph::new();
    let row = Tensor::from_shape_vec(IxDyn(&[1, 5]), vec![0.3, -1.0, 2.0, 0.5, 0.1]).unwrap();
    let same = row.broadcast(IxDyn(&[8, 5])).unwrap().to_owned();
    let uniform = infonce_loss(g.leaf(same.clone()), g.leaf(same), 0.1).unwrap().item();
    let ln8_ok = (uniform - 8f64.ln()).abs() < 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let q = randn(&mut rng, &[6, 9], 1.0);
    let x = randn(&mut rng, &[6, 9], 1.0);
    let base = infonce_loss(g.leaf(q.clone()), g.leaf(x.clone()), 0.1).unwrap().item();
    let mut q2 = q.clone();
    q2.index_axis_mut(ndarray::Axis(0), 2).mapv_inplace(|v| v * 7.5);
    let mut x2 = x.clone();
    x2.index_axis_mut(ndarray::Axis(0), 4).mapv_inplace(|v| v * 0.01);
    let scaled = infonce_loss(g.leaf(q2), g.leaf(x2), 0.1).unwrap().item();
    let scale_ok = (base - scaled).abs() < 1e-9;

    // s and n orthogonal, ‖n‖² = ‖s‖²/10.
    let s: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.05).sin()).collect();
    let raw: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.31).cos() + 0.2).collect();
    let proj = raw.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / s.iter().map(|v| v * v).sum::<f64>();
    let orth: Vec<f64> = raw.iter().zip(&s).map(|(a, b)| a - proj * b).collect();
    let k = (s.iter().map(|v| v * v).sum::<f64>() / 10.0 / orth.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let est: Vec<f64> = s.iter().zip(&orth).map(|(a, b)| a + k * b).collect();
    let ten = si_sdr(&s, &est).unwrap();
    let ten_ok = (ten - 10.0).abs() < 0.01;

    let q = randn(&mut rng, &[4, 6], 1.0);
    let x = randn(&mut rng, &[4, 6], 1.0);
    let target = randn(&mut rng, &[4, 1, 6], 1.0);
    let estimate = &target + &randn(&mut rng, &[4, 1, 6], 0.5);
    let si = si_sdr_loss_batch(g.leaf(estimate), &target).unwrap().item();
    let info = infonce_loss(g.leaf(q), g.leaf(x), 0.1).unwrap().item();
    let rep = combine_terms(si, info, 3.0);
    let bitwise_ok = rep.total.to_bits() == (rep.si_sdr_term + 3.0 * rep.infonce_term).to_bits();
    let arith = combine_terms(-10.0, 2.0794, 3.0).total;

    let ok = ln8_ok && scale_ok && ten_ok && bitwise_ok && (arith + 3.7618).abs() < 1e-12;
    status(
        3,
        ok,
        &format!("InfoNCE uniform {uniform:.9} (ln 8 {:.9}), scaled rows Δ {:.1e}, orthogonal SI-SDR {ten:.4} dB, bitwise total {bitwise_ok}", 8f64.ln(), (base - scaled).abs()),
    );
    assert!(ok);
}

#[test]
fn criterion_04_shape_contract() {
    let shapes = dry_run_shapes(&ModelConfig::full_scale(), 2).unwrap();
    let get = |k: &str| shapes.iter().find(|(n, _)| *n == k).map(|(_, s)| s.clone()).unwrap();
    let checks = [
        ("X~", vec![2, 128, 1632, 4]),
        ("E'", vec![2, 64, 32]),
        ("E~", vec![2, 64, 1632]),
        ("Y", vec![2, 64, 1632]),
        ("M", vec![2, 128, 1632]),
        ("s^", vec![2, 1, 29_400]),
    ];
    let ok = checks.iter().all(|(k, want)| &get(k) == want);
    let detail: Vec<String> = checks.iter().map(|(k, _)| format!("{k} {:?}", get(k))).collect();
    status(4, ok, &detail.join(", "));
    assert!(ok);
}

#[test]
fn criterion_05_overfit_smoke() {
    let start = Instant::now();
    let model = ModelConfig::miniature();
    let segs = segments(model.n_electrodes, model.audio_rate_hz, model.segment_seconds, 4, 3);
    let graph = electrode_graph(&model, segs[0].eeg.positions.as_ref().map(|p| p.view())).unwrap();
    let cfg = TrainConfig { model: model.clone(), batch_size: 4, peak_lr: 1e-2, ..Default::default() };
    let mut trainer = Trainer::new(cfg, &graph, 200).unwrap();
    let refs: Vec<_> = segs.iter().collect();
    let batch = Batch::from_segments(&refs, &model).unwrap();
    let losses: Vec<f64> = (0..200).map(|_| trainer.train_step(&batch).unwrap().loss.total).collect();
    let windows: Vec<f64> = losses.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    let decreasing = windows.windows(2).all(|w| w[1] < w[0]);
    let est = infer(&trainer.model, &trainer.store, &batch).unwrap();
    let mut gain = 0.0;
    for (i, p) in segs.iter().enumerate() {
        gain += si_sdr(&p.target.samples, &est.row(i).to_vec()).unwrap() - si_sdr(&p.target.samples, &p.mixture.samples).unwrap();
    }
    gain /= segs.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    let ok = gain >= 5.0 && decreasing && secs < 300.0;
    status(5, ok, &format!("SI-SDRi {gain:.2} dB after 200 steps, window means {windows:.3?}, {secs:.1} s"));
    assert!(ok);
}

#[test]
fn criterion_06_alignment_direction() {
    let start = Instant::now();
    let model = ModelConfig::compact();
    let corpus = synth_corpus(&CorpusConfig {
        synth: SynthConfig {
            n_electrodes: model.n_electrodes,
            audio_rate_hz: model.audio_rate_hz,
            neural_latency_ms: 187.5,
            trial_seconds: 50.0,
            ..Default::default()
        },
        trials: 4,
        segment_seconds: model.segment_seconds,
        train_fraction: 0.8,
        valid_fraction: 0.1,
    })
    .unwrap();
    assert_eq!(corpus.len(), 200);
    let train: Vec<_> = corpus.iter().filter(|p| p.split == Split::Train).cloned().collect();
    let test: Vec<_> = corpus.iter().filter(|p| p.split == Split::Test).cloned().collect();
    let graph = electrode_graph(&model, train[0].eeg.positions.as_ref().map(|p| p.view())).unwrap();
    let mixture_si: f64 =
        test.iter().map(|p| si_sdr(&p.target.samples, &p.mixture.samples).unwrap()).sum::<f64>() / test.len() as f64;
    let mut means = Vec::new();
    for lambda in [3.0, 0.0] {
        let mut gains = Vec::new();
        for seed in 0..3 {
            let cfg = TrainConfig { model: model.clone(), epochs: 10, peak_lr: 5e-3, lambda, seed, ..Default::default() };
            let steps = cfg.epochs * steps_per_epoch(train.len(), cfg.batch_size);
            let mut trainer = Trainer::new(cfg, &graph, steps).unwrap();
            fit(&mut trainer, &train, &[], &mut std::io::sink(), None).unwrap();
            gains.push(trainer.mean_si_sdr(&test).unwrap() - mixture_si);
        }
        means.push((lambda, gains.iter().sum::<f64>() / 3.0, gains));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = means[0].1 >= means[1].1 && secs < 1800.0;
    status(
        6,
        ok,
        &format!(
            "mean test SI-SDRi λ=3 {:.2} dB {:.2?} vs λ=0 {:.2} dB {:.2?}, {secs:.0} s",
            means[0].1, means[0].2, means[1].1, means[1].2
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_gm_depth_surface() {
    let start = Instant::now();
    let base = TrainConfig { model: ModelConfig::compact(), epochs: 1, batch_size: 4, ..Default::default() };
    let segs = segments(base.model.n_electrodes, base.model.audio_rate_hz, base.model.segment_seconds, 6, 4);
    let (train, test) = segs.split_at(4);
    let rows = run_ablation(&base, &AblationGrid::depths((1..=5).collect()), train, test, &mut std::io::sink()).unwrap();
    let mem: Vec<usize> = rows.iter().map(|r| r.activation_bytes).collect();
    let params: Vec<usize> = rows.iter().map(|r| r.parameters).collect();
    let monotone = mem.windows(2).all(|w| w[1] > w[0]) && params.windows(2).all(|w| w[1] > w[0]);
    let finite = rows.iter().all(|r| r.final_loss.is_finite());
    let ok = rows.len() == 5 && monotone && finite;
    status(
        7,
        ok,
        &format!("N=1..5 completed, activation bytes {mem:?}, parameters {params:?}, {:.0} s", start.elapsed().as_secs_f64()),
    );
    assert!(ok);
}

#[derive(serde::Deserialize)]
struct Golden {
    index: usize,
    stoi: f64,
    estoi: f64,
}

#[test]
fn criterion_08_metric_golden_files() {
    let golden: Vec<Golden> = serde_json::from_str(include_str!("data/stoi_golden.json")).unwrap();
    assert_eq!(golden.len(), 10);
    let mut worst = 0.0f64;
    for g in &golden {
        let (s, e) = golden_pair(g.index);
        worst = worst.max((stoi(&s, &e, 10_000, false).unwrap() - g.stoi).abs());
        worst = worst.max((stoi(&s, &e, 10_000, true).unwrap() - g.estoi).abs());
    }
    let (s, _) = golden_pair(3);
    let ident = stoi(&s, &s, 10_000, false).unwrap();
    let ident_ext = stoi(&s, &s, 10_000, true).unwrap();
    let (s, e) = golden_pair(5);
    let base = si_sdr(&s, &e).unwrap();
    let drift = [0.5, 2.0, 10.0]
        .iter()
        .map(|a| (si_sdr(&s, &e.iter().map(|v| v * a).collect::<Vec<_>>()).unwrap() - base).abs())
        .fold(0.0f64, f64::max);
    let ok = worst < 0.01 && (ident - 1.0).abs() < 1e-3 && (ident_ext - 1.0).abs() < 1e-3 && drift < 1e-6;
    status(
        8,
        ok,
        &format!("max golden deviation {worst:.2e}, STOI(s,s) {ident:.6}, ESTOI(s,s) {ident_ext:.6}, SI-SDR scale drift {drift:.1e} dB"),
    );
    assert!(ok);
}

#[test]
fn criterion_09_latency_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut misses = Vec::new();
    for k in 0..20 {
        let cfg = SynthConfig {
            n_electrodes: rng.gen_range(4..=32),
            neural_latency_ms: rng.gen_range(0.0..400.0),
            eeg_snr_db: rng.gen_range(5.0..30.0),
            trial_seconds: rng.gen_range(8.0..16.0),
            audio_rate_hz: 8_000,
            seed: 1000 + k,
            ..Default::default()
        };
        let trial = synth_trial(&cfg).unwrap();
        let env = eeg_source_envelope(&trial.target, cfg.eeg_rate_hz, cfg.envelope_cutoff_hz).unwrap();
        // The electrode nearest the source carries the strongest copy.
        let best = (0..cfg.n_electrodes)
            .max_by(|&a, &b| {
                let e = |i: usize| trial.eeg.data.row(i).iter().map(|v| v * v).sum::<f64>();
                e(a).total_cmp(&e(b))
            })
            .unwrap();
        let lag = peak_lag(&trial.eeg.data.row(best).to_vec(), &env, 64);
        if lag != cfg.latency_samples() {
            misses.push((k, lag, cfg.latency_samples()));
        }
    }
    let ok = misses.is_empty();
    status(9, ok, &format!("20 random configs, {} mismatches {misses:?}", misses.len()));
    assert!(ok);
}

#[test]
fn criterion_10_round_trips() {
    // Manifest.
    let segs = segments(6, 1600, 0.5, 4, 8);
    let dir = tempfile::tempdir().unwrap();
    let back = read_manifest(&write_manifest(&segs, dir.path()).unwrap()).unwrap();
    let pcm = segs.iter().zip(&back).all(|(a, b)| {
        a.eeg == b.eeg
            && [(&a.mixture, &b.mixture), (&a.target, &b.target), (&a.interferer, &b.interferer)]
                .iter()
                .all(|(x, y)| x.samples.iter().zip(&y.samples).all(|(u, v)| (u - v).abs() <= 1.0 / 32768.0))
    });

    // Cross scan.
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut scan_exact = true;
    for (r, c) in [(1, 1), (3, 5), (8, 4), (16, 9)] {
        let m = Array2::from_shape_fn((r, c), |_| rng.gen::<f64>());
        for dir in ScanDirection::ALL {
            scan_exact &= cross_unscan(&cross_scan(&m, dir), r, c, dir) == m;
        }
    }

    // Chunking with an identity body.
    let mut chunk_exact = true;
    for (len, chunk) in [(9, 4), (20, 20), (37, 8), (1632, 250)] {
        let plan = ChunkPlan::new(len, chunk).unwrap();
        let x = randn(&mut rng, &[2, 3, len], 1.0);
        let g = Graph::inference();
        chunk_exact &= *plan.merge(plan.split(g.constant(x.clone()))).value() == x;
    }

    // Checkpoint: save → load → step equals an uninterrupted step, bitwise.
    let model = ModelConfig::miniature();
    let train = segments(model.n_electrodes, model.audio_rate_hz, model.segment_seconds, 4, 9);
    let graph = electrode_graph(&model, train[0].eeg.positions.as_ref().map(|p| p.view())).unwrap();
    let cfg = TrainConfig { model: model.clone(), batch_size: 2, epochs: 1, ..Default::default() };
    let mut a = Trainer::new(cfg, &graph, 10).unwrap();
    fit(&mut a, &train, &[], &mut std::io::sink(), None).unwrap();
    save_checkpoint(&a, &dir.path().join("ckpt")).unwrap();
    let mut b = load_checkpoint(&dir.path().join("ckpt")).unwrap();
    let refs: Vec<_> = train.iter().take(2).collect();
    let batch = Batch::from_segments(&refs, &model).unwrap();
    let ra = a.train_step(&batch).unwrap();
    let rb = b.train_step(&batch).unwrap();
    let ckpt_exact = ra == rb && a.store == b.store && a.optimizer == b.optimizer && a.rng == b.rng;

    let ok = pcm && scan_exact && chunk_exact && ckpt_exact;
    status(
        10,
        ok,
        &format!("manifest within 2^-15 {pcm}, cross-scan exact {scan_exact}, chunk overlap-add exact {chunk_exact}, checkpoint step bitwise {ckpt_exact}"),
    );
    assert!(ok);
}
