//! Composite objective checks: sum-of-parts oracles, gradient isolation
//! between the two networks, and properties of the individual terms.

mod common;

use common::{gradcheck, REL_TOL};
use pca_seg::networks::{
    build_discriminator, build_segmenter, discriminator_forward, segmenter_forward, DiscOutput,
    DiscriminatorSpec, Granularity, NetworkState, SegmenterSpec,
};
use pca_seg::numcore::{RngStream, Tape, Tensor, Var};
use pca_seg::objectives::{
    condition, disc_loss, disc_objective, feature_matching_loss, gen_adv_loss, ipm_loss,
    seg_loss, total_seg_loss, BatchPair, Conditioning, LossWeights,
};
use proptest::prelude::*;

const HW: usize = 8;
const CLASSES: usize = 3;

fn seg_spec() -> SegmenterSpec {
    SegmenterSpec {
        in_channels: 1,
        num_classes: CLASSES,
        depth: 2,
        base_channels: 4,
    }
}

fn disc_spec(g: Granularity) -> DiscriminatorSpec {
    DiscriminatorSpec::for_granularity(g, Conditioning::Blend.disc_channels(CLASSES))
}

fn one_hot(labels: &[usize], n: usize) -> Tensor {
    let hw = HW * HW;
    let mut data = vec![0.0; n * CLASSES * hw];
    for b in 0..n {
        for p in 0..hw {
            let c = labels[(b * hw + p) % labels.len()];
            data[(b * CLASSES + c) * hw + p] = 1.0;
        }
    }
    Tensor::new(&[n, CLASSES, HW, HW], data).unwrap()
}

/// Four images, the first and third labeled.
fn tiny_batch() -> BatchPair {
    let mut rng = RngStream::new(7);
    let images = Tensor::from_fn(&[4, 1, HW, HW], |_| rng.uniform());
    let labels: Vec<usize> = (0..2 * HW * HW).map(|i| (i * 7 / 11) % CLASSES).collect();
    BatchPair::new(images, Some(one_hot(&labels, 2)), vec![true, false, true, false]).unwrap()
}

fn nets(g: Granularity) -> (NetworkState, NetworkState, DiscriminatorSpec) {
    let mut rng = RngStream::new(11);
    let s = build_segmenter(&seg_spec(), &mut rng).unwrap();
    let dspec = disc_spec(g);
    let d = build_discriminator(&dspec, &mut rng).unwrap();
    (s, d, dspec)
}

fn val(t: &Tape, v: Var) -> f64 {
    t.value(v).item().unwrap()
}

#[test]
fn total_matches_sum_of_parts() {
    let batch = tiny_batch();
    let (s, d, dspec) = nets(Granularity::Patch);
    let w = LossWeights::default();

    let mut tape = Tape::new();
    let sb = s.bind(&mut tape, true);
    let db = d.bind(&mut tape, false);
    let mut rng = RngStream::new(3);
    let obj = total_seg_loss(&mut tape, &batch, &seg_spec(), &sb, Some((&dspec, &db)), &w, &mut rng)
        .unwrap();
    let total = val(&tape, obj.total);

    // Each term on its own tape, replaying the same noise draws.
    let mut rng = RngStream::new(3);
    let mut t = Tape::new();
    let sb = s.bind(&mut t, false);
    let db = d.bind(&mut t, false);
    let x_lab = t.constant(batch.labeled_images().unwrap());
    let pred_lab = segmenter_forward(&seg_spec(), &mut t, &sb, x_lab).unwrap();
    let y = t.constant(batch.masks.clone().unwrap());
    let l_seg = seg_loss(&mut t, pred_lab, y).unwrap();

    let x_all = t.constant(batch.images.clone());
    let pred_all = segmenter_forward(&seg_spec(), &mut t, &sb, x_all).unwrap();
    let z_fake = condition(&mut t, w.conditioning, &batch.images, pred_all, w.lambda_noise, &mut rng)
        .unwrap();
    let z_real = condition(
        &mut t,
        w.conditioning,
        &batch.labeled_images().unwrap(),
        y,
        w.lambda_noise,
        &mut rng,
    )
    .unwrap();
    let fake = discriminator_forward(&dspec, &mut t, &db, z_fake).unwrap();
    let real = discriminator_forward(&dspec, &mut t, &db, z_real).unwrap();
    let l_adv = gen_adv_loss(&mut t, &fake);

    // Feature terms by naive loops over the raw feature buffers.
    let ff = t.value(fake.features).clone();
    let fr = t.value(real.features).clone();
    let per = ff.numel() / 4;
    let lab = [0usize, 2];
    let mut fm = 0.0;
    for (k, &b) in lab.iter().enumerate() {
        for j in 0..per {
            let dv = ff.data()[b * per + j] - fr.data()[k * per + j];
            fm += dv * dv;
        }
    }
    fm /= (2 * per) as f64;
    let mut ipm = 0.0;
    for j in 0..per {
        let mu = (ff.data()[per + j] + ff.data()[3 * per + j]) / 2.0;
        let mr = (fr.data()[j] + fr.data()[per + j]) / 2.0;
        ipm += (mu - mr) * (mu - mr);
    }

    ipm /= per as f64;
    let parts = val(&t, l_seg) + 0.1 * val(&t, l_adv) + 1.0 * fm + 0.1 * ipm;
    assert!((total - parts).abs() < 1e-12, "total {total} vs parts {parts}");
    assert!((val(&tape, obj.fm.unwrap()) - fm).abs() < 1e-12);
    assert!((val(&tape, obj.ipm.unwrap()) - ipm).abs() < 1e-12);
}

#[test]
fn zero_weights_reduce_to_supervised_loss() {
    let batch = tiny_batch();
    let (s, d, dspec) = nets(Granularity::Patch);
    let w = LossWeights {
        lambda_adv: 0.0,
        lambda_fea: 0.0,
        lambda_ipm: 0.0,
        ..LossWeights::default()
    };
    let mut tape = Tape::new();
    let sb = s.bind(&mut tape, true);
    let db = d.bind(&mut tape, false);
    let mut rng = RngStream::new(3);
    let obj = total_seg_loss(&mut tape, &batch, &seg_spec(), &sb, Some((&dspec, &db)), &w, &mut rng)
        .unwrap();
    assert!(obj.adv.is_none() && obj.fm.is_none() && obj.ipm.is_none());
    assert_eq!(rng.counter(), RngStream::new(3).counter());

    let mut t = Tape::new();
    let sb = s.bind(&mut t, false);
    let x = t.constant(batch.labeled_images().unwrap());
    let p = segmenter_forward(&seg_spec(), &mut t, &sb, x).unwrap();
    let y = t.constant(batch.masks.clone().unwrap());
    let l = seg_loss(&mut t, p, y).unwrap();
    assert_eq!(val(&tape, obj.total).to_bits(), val(&t, l).to_bits());
}

#[test]
fn adversarial_weight_is_linear() {
    let batch = tiny_batch();
    let (s, d, dspec) = nets(Granularity::Image);
    let run = |lambda_adv: f64| {
        let w = LossWeights {
            lambda_adv,
            granularity: Granularity::Image,
            ..LossWeights::default()
        };
        let mut tape = Tape::new();
        let sb = s.bind(&mut tape, true);
        let db = d.bind(&mut tape, false);
        let mut rng = RngStream::new(5);
        let o = total_seg_loss(&mut tape, &batch, &seg_spec(), &sb, Some((&dspec, &db)), &w, &mut rng)
            .unwrap();
        (val(&tape, o.total), val(&tape, o.adv.unwrap()))
    };
    let (t0, adv) = run(0.0);
    let (t1, _) = run(0.1);
    // zero lambda_adv alone keeps the other terms, so the discriminator still runs
    assert!(((t1 - t0) - 0.1 * adv).abs() < 1e-12);
}

#[test]
fn gradients_stay_on_their_own_network() {
    let batch = tiny_batch();
    for g in [Granularity::Image, Granularity::Patch, Granularity::Pixel] {
        let (s, d, dspec) = nets(g);
        let w = LossWeights {
            granularity: g,
            ..LossWeights::default()
        };

        let mut tape = Tape::new();
        let sb = s.bind(&mut tape, true);
        let db = d.bind(&mut tape, false);
        let mut rng = RngStream::new(1);
        let o = total_seg_loss(&mut tape, &batch, &seg_spec(), &sb, Some((&dspec, &db)), &w, &mut rng)
            .unwrap();
        let grads = tape.backward(o.total).unwrap();
        for &v in db.vars() {
            assert!(grads.get(v).is_none_or(|g| g.iter().all(|&x| x == 0.0)));
        }
        assert!(sb.vars().iter().any(|&v| grads.get(v).is_some_and(|g| g.iter().any(|&x| x != 0.0))));

        let mut tape = Tape::new();
        let sb = s.bind(&mut tape, false);
        let db = d.bind(&mut tape, true);
        let loss = disc_objective(&mut tape, &batch, &seg_spec(), &sb, &dspec, &db, &w, &mut rng)
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        for &v in sb.vars() {
            assert!(grads.get(v).is_none_or(|g| g.iter().all(|&x| x == 0.0)));
        }
        assert!(db.vars().iter().any(|&v| grads.get(v).is_some_and(|g| g.iter().any(|&x| x != 0.0))));

        // binding the wrong network as trainable is refused
        let mut tape = Tape::new();
        let sb = s.bind(&mut tape, true);
        let db = d.bind(&mut tape, true);
        assert!(
            total_seg_loss(&mut tape, &batch, &seg_spec(), &sb, Some((&dspec, &db)), &w, &mut rng)
                .is_err()
        );
        assert!(disc_objective(&mut tape, &batch, &seg_spec(), &sb, &dspec, &db, &w, &mut rng).is_err());
    }
}

#[test]
fn no_labeled_samples_is_a_config_error() {
    let batch = tiny_batch();
    let unl = BatchPair::new(batch.images.clone(), None, vec![false; 4]).unwrap();
    let (s, d, dspec) = nets(Granularity::Patch);
    let mut tape = Tape::new();
    let sb = s.bind(&mut tape, true);
    let db = d.bind(&mut tape, false);
    let mut rng = RngStream::new(1);
    let err = total_seg_loss(
        &mut tape,
        &unl,
        &seg_spec(),
        &sb,
        Some((&dspec, &db)),
        &LossWeights::default(),
        &mut rng,
    )
    .unwrap_err();
    assert!(matches!(err, pca_seg::Error::Config(_)));
}

#[test]
fn batch_pair_validation() {
    let b = tiny_batch();
    assert!(BatchPair::new(b.images.clone(), None, vec![true, false, false, false]).is_err());
    assert!(BatchPair::new(b.images.clone(), b.masks.clone(), vec![true; 4]).is_err());
    let mut soft = b.masks.clone().unwrap();
    soft.data_mut()[0] = 0.5;
    assert!(BatchPair::new(b.images.clone(), Some(soft), b.labeled.clone()).is_err());
}

#[test]
fn pixel_disc_loss_matches_naive_loop() {
    let (_, d, dspec) = nets(Granularity::Pixel);
    let mut rng = RngStream::new(9);
    let real_in = Tensor::from_fn(&[2, CLASSES, HW, HW], |_| rng.uniform());
    let fake_in = Tensor::from_fn(&[3, CLASSES, HW, HW], |_| rng.uniform());
    let mut t = Tape::new();
    let db = d.bind(&mut t, false);
    let ri = t.constant(real_in);
    let fi = t.constant(fake_in);
    let real = discriminator_forward(&dspec, &mut t, &db, ri).unwrap();
    let fake = discriminator_forward(&dspec, &mut t, &db, fi).unwrap();
    let loss = disc_loss(&mut t, &real, &fake).unwrap();
    let loss = val(&t, loss);

    let rc = t.value(real.confidence).data();
    let fc = t.value(fake.confidence).data();
    assert_eq!(rc.len(), 2 * HW * HW);
    let mut lr = 0.0;
    for &p in rc {
        lr += -p.ln();
    }
    let mut lf = 0.0;
    for &p in fc {
        lf += -(1.0 - p).ln();
    }
    let naive = lr / rc.len() as f64 + lf / fc.len() as f64;
    assert!((loss - naive).abs() < 1e-12);
}

#[test]
fn gen_adv_logit_gradient() {
    let cells = 6;
    let mut t = Tape::new();
    let logit = t.leaf(Tensor::zeros(&[1, 1, 2, 3]));
    let conf = t.sigmoid(logit);
    let out = DiscOutput {
        confidence: conf,
        logits: logit,
        features: logit,
    };
    let l = gen_adv_loss(&mut t, &out);
    let g = t.backward(l).unwrap();
    for &v in g.get(logit).unwrap() {
        assert!((v + 0.5 / cells as f64).abs() < 1e-12);
    }
    let err = gradcheck(&[Tensor::zeros(&[1, 1, 2, 3])], |t, v| {
        let conf = t.sigmoid(v[0]);
        let out = DiscOutput {
            confidence: conf,
            logits: v[0],
            features: v[0],
        };
        Ok(gen_adv_loss(t, &out))
    });
    assert!(err < REL_TOL);
}

#[test]
fn feature_matching_matches_naive_oracle() {
    let mut rng = RngStream::new(21);
    let a = rng.sample_gaussian(&[3, 4, 5, 5]);
    let b = rng.sample_gaussian(&[3, 4, 5, 5]);
    let naive = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    let mut t = Tape::new();
    let (va, vb) = (t.constant(a), t.constant(b));
    let l = feature_matching_loss(&mut t, va, vb).unwrap();
    assert!((val(&t, l) - naive).abs() < 1e-12);
}

#[test]
fn ipm_ignores_spread() {
    // equal batch means, different variances
    let a = Tensor::new(&[2, 2], vec![1.0, -1.0, 3.0, 5.0]).unwrap();
    let b = Tensor::new(&[3, 2], vec![2.0, 2.0, 2.0, 2.0, 2.0, 2.0]).unwrap();
    let mut t = Tape::new();
    let (va, vb) = (t.constant(a), t.constant(b));
    let l = ipm_loss(&mut t, va, vb).unwrap();
    assert!(val(&t, l).abs() < 1e-15);
}

fn permuted(t: &Tensor, perm: &[usize]) -> Tensor {
    let items: Vec<Tensor> = perm.iter().map(|&i| t.batch_item(i).unwrap()).collect();
    Tensor::stack(&items.iter().collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ipm_is_permutation_invariant(
        seed in any::<u64>(),
        pu in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
        pr in Just((0..3usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let mut rng = RngStream::new(seed);
        let u = rng.sample_gaussian(&[5, 2, 3, 3]);
        let r = rng.sample_gaussian(&[3, 2, 3, 3]);
        let eval = |u: Tensor, r: Tensor| {
            let mut t = Tape::new();
            let (vu, vr) = (t.constant(u), t.constant(r));
            let l = ipm_loss(&mut t, vu, vr).unwrap();
            val(&t, l)
        };
        let base = eval(u.clone(), r.clone());
        let perm = eval(permuted(&u, &pu), permuted(&r, &pr));
        prop_assert!((base - perm).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn seg_loss_is_nonnegative(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let logits = rng.sample_gaussian(&[2, CLASSES, 4, 4]);
        let labels: Vec<usize> = (0..32).map(|_| rng.below(CLASSES)).collect();
        let mut data = vec![0.0; 2 * CLASSES * 16];
        for b in 0..2 {
            for p in 0..16 {
                data[(b * CLASSES + labels[b * 16 + p]) * 16 + p] = 1.0;
            }
        }
        let mut t = Tape::new();
        let x = t.constant(logits);
        let p = t.softmax_channels(x).unwrap();
        let y = t.constant(Tensor::new(&[2, CLASSES, 4, 4], data).unwrap());
        let l = seg_loss(&mut t, p, y).unwrap();
        prop_assert!(val(&t, l) >= 0.0);
    }
}
