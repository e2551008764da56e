use std::path::{Path, PathBuf};

use super::log::{LogRow, TrainingLog};
use super::optim::{Adam, Sgd};
use super::predict::evaluate_samples;
use super::{poly_lr, TrainConfig};
use crate::data::{augment, normalize, DatasetSplit, Sample};
use crate::error::{config_err, shape_err, Error, Result};
use crate::networks::{
    build_discriminator, build_segmenter, write_checkpoint, Checkpoint, DiscriminatorSpec,
    NetworkSpec, NetworkState, SegmenterSpec,
};
use crate::numcore::{RngStream, Tape, Tensor};
use crate::objectives::{disc_objective, total_seg_loss, BatchPair, LossWeights};

const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

fn seg_spec(net: &NetworkState) -> Result<&SegmenterSpec> {
    match net.spec() {
        NetworkSpec::Segmenter(s) => Ok(s),
        _ => config_err("expected a segmenter"),
    }
}

fn disc_spec(net: &NetworkState) -> Result<&DiscriminatorSpec> {
    match net.spec() {
        NetworkSpec::Discriminator(d) => Ok(d),
        _ => config_err("expected a discriminator"),
    }
}

/// Loss values recorded by one segmenter step, at the pre-step parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepTerms {
    pub total: f64,
    pub seg: f64,
    pub adv: Option<f64>,
    pub fm: Option<f64>,
    pub ipm: Option<f64>,
}

/// One discriminator update on `batch`; the segmenter is read only.
pub fn disc_step(
    batch: &BatchPair,
    seg: &NetworkState,
    disc: &mut NetworkState,
    w: &LossWeights,
    opt: &mut Adam,
    lr: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut tape = Tape::new();
    let sb = seg.bind(&mut tape, false);
    let db = disc.bind(&mut tape, true);
    let loss = disc_objective(&mut tape, batch, seg_spec(seg)?, &sb, disc_spec(disc)?, &db, w, rng)?;
    let value = tape.value(loss).item()?;
    if value.is_finite() {
        let grads = tape.backward(loss)?;
        disc.store_grads(&db, &grads)?;
        opt.step(disc, lr)?;
        disc.clear_grads();
    }
    Ok(value)
}

/// One segmenter update on `batch`; the discriminator is read only and not
/// consulted at all when every adversarial weight is zero.
pub fn seg_step(
    batch: &BatchPair,
    seg: &mut NetworkState,
    disc: &NetworkState,
    w: &LossWeights,
    opt: &mut Sgd,
    lr: f64,
    rng: &mut RngStream,
) -> Result<StepTerms> {
    let mut tape = Tape::new();
    let sb = seg.bind(&mut tape, true);
    let db = disc.bind(&mut tape, false);
    let d = if w.is_supervised() { None } else { Some((disc_spec(disc)?, &db)) };
    let obj = total_seg_loss(&mut tape, batch, seg_spec(seg)?, &sb, d, w, rng)?;
    let read = |v: Option<crate::numcore::Var>| -> Result<Option<f64>> {
        v.map(|v| tape.value(v).item()).transpose()
    };
    let terms = StepTerms {
        total: tape.value(obj.total).item()?,
        seg: tape.value(obj.seg).item()?,
        adv: read(obj.adv)?,
        fm: read(obj.fm)?,
        ipm: read(obj.ipm)?,
    };
    if terms.total.is_finite() {
        let grads = tape.backward(obj.total)?;
        seg.store_grads(&sb, &grads)?;
        opt.step(seg, lr)?;
        seg.clear_grads();
    }
    Ok(terms)
}

/// Draws `b / 2` labeled and `b / 2` unlabeled samples uniformly with
/// replacement (from the labeled pool when there is no unlabeled data),
/// optionally rotating/flipping each.
pub fn sample_batch(
    labeled: &[Sample],
    unlabeled: &[Sample],
    b: usize,
    augment_samples: bool,
    rng: &mut RngStream,
) -> Result<BatchPair> {
    if labeled.is_empty() {
        return config_err("no labeled samples to train on");
    }
    let half = b / 2;
    let unl_pool = if unlabeled.is_empty() { labeled } else { unlabeled };
    let mut picks = Vec::with_capacity(b);
    for k in 0..b {
        let pool = if k < half { labeled } else { unl_pool };
        let s = &pool[rng.below(pool.len())];
        picks.push(if augment_samples { augment(s, rng)?.0 } else { s.clone() });
    }
    let (h, w) = picks[0].hw();
    let mut images = Vec::with_capacity(b * h * w);
    let mut masks = Vec::new();
    for (k, s) in picks.iter().enumerate() {
        if s.hw() != (h, w) {
            return shape_err("samples in a batch must share a size");
        }
        images.extend_from_slice(s.image.data());
        if k < half {
            match &s.mask {
                Some(m) => masks.extend_from_slice(m.data()),
                None => return shape_err(format!("labeled sample {} has no mask", s.id)),
            }
        }
    }
    let c = masks.len() / (half * h * w);
    let labeled_flags = (0..b).map(|k| k < half).collect();
    BatchPair::new(
        Tensor::new(&[b, 1, h, w], images)?,
        Some(Tensor::new(&[half, c, h, w], masks)?),
        labeled_flags,
    )
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub segmenter: NetworkState,
    pub discriminator: NetworkState,
    /// Segmenter with the best validation mean DSC (the initial state when
    /// no validation ran).
    pub best_segmenter: NetworkState,
    pub best_iter: usize,
    pub best_val_dsc: Option<f64>,
    pub log: TrainingLog,
}

fn prepared(samples: &[Sample], cfg: &TrainConfig) -> Vec<Sample> {
    samples.iter().map(|s| normalize(s, cfg.normalization).0).collect()
}

fn dump_batch(out_dir: Option<&Path>, iter: usize, batch: &BatchPair) -> Result<PathBuf> {
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("nonfinite_batch_{iter}.txt"));
    let mut text = format!("labeled: {:?}\n", batch.labeled);
    text.push_str(&batch.images.dump());
    if let Some(m) = &batch.masks {
        text.push_str(&m.dump());
    }
    std::fs::write(&path, text)?;
    Ok(path)
}

fn check_finite(v: Option<f64>, term: &str, iter: usize, out_dir: Option<&Path>, batch: &BatchPair) -> Result<()> {
    match v {
        Some(x) if !x.is_finite() => Err(Error::NonFinite {
            term: term.to_string(),
            iter,
            dump: dump_batch(out_dir, iter, batch)?,
        }),
        _ => Ok(()),
    }
}

/// Runs `cfg.total_iterations` rounds of discriminator step then segmenter
/// step. With `out_dir`, writes `log.csv`, `ckpt_<iter>.bin` and `best.bin`.
pub fn train(cfg: &TrainConfig, data: &DatasetSplit, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labeled = prepared(&data.labeled, cfg);
    let unlabeled: Vec<Sample> = prepared(&data.unlabeled, cfg)
        .into_iter()
        .map(|mut s| {
            s.mask = None;
            s
        })
        .collect();
    let val = prepared(&data.val, cfg);

    let root = RngStream::new(cfg.seed);
    let mut init_rng = root.fork(INIT_STREAM);
    let mut batch_rng = root.fork(BATCH_STREAM);
    let mut noise_rng = root.fork(NOISE_STREAM);
    let mut seg = build_segmenter(&cfg.segmenter, &mut init_rng)?;
    let mut disc = build_discriminator(&cfg.disc_spec(), &mut init_rng)?;
    let mut sgd = Sgd::new(&seg, cfg.momentum);
    let mut adam = Adam::new(&disc);
    let w = &cfg.weights;
    let adversarial = !w.is_supervised();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let total = cfg.total_iterations;
    let mut log = TrainingLog::default();
    let mut best = (seg.clone(), 0usize, None::<f64>);

    for it in 0..total {
        let iter = it + 1;
        let lr_seg = poly_lr(cfg.seg_lr0, it, total, cfg.lr_decay_power)?;
        let lr_disc = poly_lr(cfg.disc_lr0, it, total, cfg.lr_decay_power)?;
        let batch = sample_batch(&labeled, &unlabeled, cfg.batch_size, cfg.augment, &mut batch_rng)?;

        let l_disc = if adversarial {
            Some(disc_step(&batch, &seg, &mut disc, w, &mut adam, lr_disc, &mut noise_rng)?)
        } else {
            None
        };
        check_finite(l_disc, "l_disc", iter, out_dir, &batch)?;
        let terms = seg_step(&batch, &mut seg, &disc, w, &mut sgd, lr_seg, &mut noise_rng)?;
        for (name, v) in [("l_total", Some(terms.total)), ("l_seg", Some(terms.seg)), ("l_adv", terms.adv), ("l_fm", terms.fm), ("l_ipm", terms.ipm)] {
            check_finite(v, name, iter, out_dir, &batch)?;
        }
        if !seg.is_finite() || !disc.is_finite() {
            return Err(Error::NonFinite {
                term: "parameters".into(),
                iter,
                dump: dump_batch(out_dir, iter, &batch)?,
            });
        }

        let val_dsc = if (iter % cfg.eval_every == 0 || iter == total) && !val.is_empty() {
            let dsc = evaluate_samples(&seg, &val)?.mean.dsc;
            if best.2.is_none_or(|b| dsc > b) {
                best = (seg.clone(), iter, Some(dsc));
            }
            Some(dsc)
        } else {
            None
        };
        log.rows.push(LogRow {
            iter,
            l_seg: terms.seg,
            l_adv: terms.adv,
            l_fm: terms.fm,
            l_ipm: terms.ipm,
            l_disc,
            lr_seg,
            lr_disc: adversarial.then_some(lr_disc),
            val_dsc,
        });
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 && iter != total {
                write_ckpt(dir, &format!("ckpt_{iter}.bin"), iter, &seg, Some(&disc))?;
            }
        }
        if iter % 100 == 0 {
            log::debug!("iter {iter}: l_seg {:.4} val {:?}", terms.seg, val_dsc);
        }
    }

    if let Some(dir) = out_dir {
        std::fs::write(dir.join("log.csv"), log.to_csv())?;
        write_ckpt(dir, &format!("ckpt_{total}.bin"), total, &seg, Some(&disc))?;
        write_ckpt(dir, "best.bin", best.1, &best.0, None)?;
    }
    Ok(TrainOutcome {
        segmenter: seg,
        discriminator: disc,
        best_segmenter: best.0,
        best_iter: best.1,
        best_val_dsc: best.2,
        log,
    })
}

fn write_ckpt(dir: &Path, name: &str, iteration: usize, seg: &NetworkState, disc: Option<&NetworkState>) -> Result<()> {
    write_checkpoint(
        &dir.join(name),
        &Checkpoint {
            iteration,
            segmenter: seg.clone(),
            discriminator: disc.cloned(),
        },
    )
}
