//! Training-loop contracts: freezing, the supervised reduction, logged
//! terms, determinism and the initial discriminator loss scale.

use pca_seg::data::{generate_synthetic, split, DatasetSplit, SynthConfig};
use pca_seg::networks::{
    build_discriminator, build_segmenter, discriminator_forward, segmenter_forward, NetworkState,
    SegmenterSpec,
};
use pca_seg::numcore::{RngStream, Tape};
use pca_seg::objectives::{
    condition, disc_loss, seg_loss, total_seg_loss, BatchPair, Conditioning, LossWeights,
};
use pca_seg::trainer::{disc_step, sample_batch, seg_step, train, Adam, Sgd, TrainConfig, LOG_HEADER};

fn small_data() -> DatasetSplit {
    let data = generate_synthetic(&SynthConfig {
        count: 40,
        noise_sigma: 0.2,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    split(&data, 0.25, 0, 6, 6).unwrap()
}

fn small_config(iters: usize) -> TrainConfig {
    TrainConfig {
        total_iterations: iters,
        batch_size: 4,
        eval_every: 3,
        segmenter: SegmenterSpec {
            base_channels: 4,
            ..SegmenterSpec::default()
        },
        ..TrainConfig::default()
    }
}

struct Setup {
    seg: NetworkState,
    disc: NetworkState,
    batch: BatchPair,
}

fn setup(cfg: &TrainConfig, seed: u64) -> Setup {
    let data = small_data();
    let mut rng = RngStream::new(seed);
    let seg = build_segmenter(&cfg.segmenter, &mut rng).unwrap();
    let disc = build_discriminator(&cfg.disc_spec(), &mut rng).unwrap();
    let batch = sample_batch(&data.labeled, &data.unlabeled, cfg.batch_size, true, &mut rng).unwrap();
    Setup { seg, disc, batch }
}

#[test]
fn disc_step_freezes_segmenter() {
    let cfg = small_config(1);
    let Setup { seg, mut disc, batch } = setup(&cfg, 1);
    let (seg0, disc0) = (seg.clone(), disc.clone());
    let mut adam = Adam::new(&disc);
    disc_step(&batch, &seg, &mut disc, &cfg.weights, &mut adam, 1e-3, &mut RngStream::new(2)).unwrap();
    assert!(seg.bit_identical(&seg0));
    assert!(!disc.bit_identical(&disc0));
}

#[test]
fn seg_step_freezes_discriminator() {
    let cfg = small_config(1);
    let Setup { mut seg, disc, batch } = setup(&cfg, 2);
    let (seg0, disc0) = (seg.clone(), disc.clone());
    let mut sgd = Sgd::new(&seg, 0.9);
    seg_step(&batch, &mut seg, &disc, &cfg.weights, &mut sgd, 1e-2, &mut RngStream::new(2)).unwrap();
    assert!(disc.bit_identical(&disc0));
    assert!(!seg.bit_identical(&seg0));
}

#[test]
fn zero_weights_step_equals_pure_supervised_step() {
    let cfg = small_config(1);
    let Setup { seg, disc, batch } = setup(&cfg, 3);
    let zero = LossWeights {
        lambda_adv: 0.0,
        lambda_fea: 0.0,
        lambda_ipm: 0.0,
        ..LossWeights::default()
    };
    let mut via_step = seg.clone();
    let mut sgd = Sgd::new(&via_step, 0.9);
    let mut rng = RngStream::new(4);
    let mut before = rng.clone();
    let terms = seg_step(&batch, &mut via_step, &disc, &zero, &mut sgd, 1e-2, &mut rng).unwrap();
    assert_eq!(rng.uniform().to_bits(), before.uniform().to_bits(), "no noise may be drawn");
    assert!(terms.adv.is_none() && terms.fm.is_none() && terms.ipm.is_none());

    // hand-rolled supervised update on the labeled half
    let mut manual = seg.clone();
    let mut tape = Tape::new();
    let bound = manual.bind(&mut tape, true);
    let x = tape.constant(batch.labeled_images().unwrap());
    let spec = match manual.spec() {
        pca_seg::networks::NetworkSpec::Segmenter(s) => s.clone(),
        _ => unreachable!(),
    };
    let probs = segmenter_forward(&spec, &mut tape, &bound, x).unwrap();
    let y = tape.constant(batch.masks.clone().unwrap());
    let loss = seg_loss(&mut tape, probs, y).unwrap();
    assert_eq!(tape.value(loss).item().unwrap().to_bits(), terms.seg.to_bits());
    let grads = tape.backward(loss).unwrap();
    manual.store_grads(&bound, &grads).unwrap();
    let mut sgd = Sgd::new(&manual, 0.9);
    sgd.step(&mut manual, 1e-2).unwrap();
    manual.clear_grads();
    assert!(manual.bit_identical(&via_step));
}

#[test]
fn zero_weights_reproduce_supervised_trajectory() {
    let data = small_data();
    let sup = TrainConfig {
        weights: LossWeights::supervised(),
        ..small_config(6)
    };
    let zeroed = TrainConfig {
        weights: LossWeights {
            lambda_adv: 0.0,
            lambda_fea: 0.0,
            lambda_ipm: 0.0,
            conditioning: Conditioning::Blend,
            ..LossWeights::default()
        },
        ..small_config(6)
    };
    let a = train(&sup, &data, None).unwrap();
    let b = train(&zeroed, &data, None).unwrap();
    assert_eq!(a.log, b.log);
    assert!(a.segmenter.bit_identical(&b.segmenter));
    assert!(a.log.rows.iter().all(|r| r.l_disc.is_none() && r.lr_disc.is_none()));
}

#[test]
fn logged_terms_match_recomputation() {
    let cfg = small_config(1);
    let Setup { mut seg, disc, batch } = setup(&cfg, 5);
    let rng = RngStream::new(9);

    let mut tape = Tape::new();
    let sb = seg.bind(&mut tape, false);
    let db = disc.bind(&mut tape, false);
    let (sspec, dspec) = (cfg.segmenter.clone(), cfg.disc_spec());
    let obj = total_seg_loss(&mut tape, &batch, &sspec, &sb, Some((&dspec, &db)), &cfg.weights, &mut rng.clone())
        .unwrap();
    let get = |v| tape.value(v).item().unwrap();
    let expect = (get(obj.total), get(obj.seg), get(obj.adv.unwrap()), get(obj.fm.unwrap()), get(obj.ipm.unwrap()));

    let mut sgd = Sgd::new(&seg, 0.9);
    let t = seg_step(&batch, &mut seg, &disc, &cfg.weights, &mut sgd, 1e-2, &mut rng.clone()).unwrap();
    assert_eq!(expect, (t.total, t.seg, t.adv.unwrap(), t.fm.unwrap(), t.ipm.unwrap()));
    let w = &cfg.weights;
    let sum = t.seg + w.lambda_adv * t.adv.unwrap() + w.lambda_fea * t.fm.unwrap() + w.lambda_ipm * t.ipm.unwrap();
    assert!((sum - t.total).abs() < 1e-12);
}

#[test]
fn initial_disc_loss_near_two_ln_two() {
    let cfg = TrainConfig::default();
    let data = small_data();
    let target = 2.0 * std::f64::consts::LN_2;
    for seed in 1..=10u64 {
        let mut rng = RngStream::new(seed);
        let seg = build_segmenter(&cfg.segmenter, &mut rng).unwrap();
        let mut disc = build_discriminator(&cfg.disc_spec(), &mut rng).unwrap();
        let batch = sample_batch(&data.labeled, &data.unlabeled, 8, true, &mut rng).unwrap();
        let mut adam = Adam::new(&disc);
        let l = disc_step(&batch, &seg, &mut disc, &cfg.weights, &mut adam, 1e-4, &mut rng).unwrap();
        assert!((l - target).abs() < 0.4, "seed {seed}: {l}");
    }
}

#[test]
fn indistinguishable_inputs_are_stationary_at_half() {
    let cfg = TrainConfig {
        weights: LossWeights {
            lambda_noise: 0.0,
            ..LossWeights::default()
        },
        ..small_config(1)
    };
    let Setup { batch, .. } = setup(&cfg, 6);
    let spec = cfg.disc_spec();
    let mut disc = build_discriminator(&spec, &mut RngStream::new(1)).unwrap();
    // zero final layer: every confidence is exactly 0.5
    let n = disc.params().len();
    for p in &mut disc.params_mut()[n - 2..] {
        p.data_mut().fill(0.0);
    }
    let mut tape = Tape::new();
    let db = disc.bind(&mut tape, true);
    let images = batch.labeled_images().unwrap();
    let gt = tape.constant(batch.masks.clone().unwrap());
    let mut rng = RngStream::new(2);
    let z_real = condition(&mut tape, Conditioning::Blend, &images, gt, 0.0, &mut rng).unwrap();
    let z_fake = condition(&mut tape, Conditioning::Blend, &images, gt, 0.0, &mut rng).unwrap();
    let real = discriminator_forward(&spec, &mut tape, &db, z_real).unwrap();
    let fake = discriminator_forward(&spec, &mut tape, &db, z_fake).unwrap();
    assert_eq!(tape.value(real.confidence).data(), tape.value(fake.confidence).data());
    let loss = disc_loss(&mut tape, &real, &fake).unwrap();
    assert!((tape.value(loss).item().unwrap() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    let grads = tape.backward(loss).unwrap();
    for v in db.vars() {
        if let Some(g) = grads.get(*v) {
            assert!(g.iter().all(|x| x.abs() < 1e-12));
        }
    }
}

#[test]
fn zero_iterations_returns_initialisation() {
    let data = small_data();
    let cfg = small_config(0);
    let out = train(&cfg, &data, None).unwrap();
    assert!(out.log.rows.is_empty());
    // initial weights come from stream 1 of the seed's root stream
    let mut init = RngStream::new(cfg.seed).fork(1);
    let seg = build_segmenter(&cfg.segmenter, &mut init).unwrap();
    let disc = build_discriminator(&cfg.disc_spec(), &mut init).unwrap();
    assert!(out.segmenter.bit_identical(&seg));
    assert!(out.best_segmenter.bit_identical(&seg));
    assert!(out.discriminator.bit_identical(&disc));
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let data = small_data();
    let cfg = small_config(4);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train(&cfg, &data, Some(a.path())).unwrap();
    let rb = train(&cfg, &data, Some(b.path())).unwrap();
    assert_eq!(ra.log, rb.log);
    for f in ["log.csv", "ckpt_4.bin", "best.bin"] {
        let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
    let log = std::fs::read_to_string(a.path().join("log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), LOG_HEADER);
    assert_eq!(log.lines().count(), 5);
    let other = train(&TrainConfig { seed: 2, ..cfg }, &data, None).unwrap();
    assert_ne!(other.log, ra.log);
}

#[test]
fn log_rows_record_schedule_and_cadence() {
    let data = small_data();
    let cfg = small_config(7);
    let out = train(&cfg, &data, None).unwrap();
    let iters: Vec<usize> = out.log.rows.iter().map(|r| r.iter).collect();
    assert_eq!(iters, (1..=7).collect::<Vec<_>>());
    let evaluated: Vec<usize> = out.log.val_curve().iter().map(|&(i, _)| i).collect();
    assert_eq!(evaluated, [3, 6, 7]);
    for r in &out.log.rows {
        let lr = pca_seg::trainer::poly_lr(cfg.seg_lr0, r.iter - 1, 7, 0.9).unwrap();
        assert_eq!(r.lr_seg, lr);
        assert!(r.l_adv.is_some() && r.l_disc.is_some());
    }
    let best = out.log.val_curve().into_iter().map(|(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_dsc, Some(best));
}

#[test]
fn nonfinite_loss_aborts_with_dump() {
    let data = small_data();
    let mut cfg = small_config(3);
    cfg.seg_lr0 = 1e200;
    let dir = tempfile::tempdir().unwrap();
    match train(&cfg, &data, Some(dir.path())) {
        Err(pca_seg::Error::NonFinite { dump, .. }) => {
            let text = std::fs::read_to_string(dump).unwrap();
            assert!(text.starts_with("labeled:"));
        }
        other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn supervised_sanity_on_synthetic_set() {
    // pinned regression: 200 training samples, 2000 iterations
    let data = generate_synthetic(&SynthConfig::default()).unwrap();
    let data = split(&data, 0.1, 0, 30, 50).unwrap();
    assert_eq!(data.labeled.len() + data.unlabeled.len(), 200);
    let cfg = TrainConfig {
        weights: LossWeights::supervised(),
        ..TrainConfig::default()
    };
    let out = train(&cfg, &data, None).unwrap();
    let val = out.best_val_dsc.unwrap();
    assert!(val > 0.85, "val mean dsc {val}");
}
