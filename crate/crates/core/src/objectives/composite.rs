use super::conditioning::condition;
use super::losses::{disc_loss, feature_matching_loss, gen_adv_loss, ipm_loss, ipm_loss_mean, seg_loss};
use super::{FeatureSource, IpmReduction, LossWeights};
use crate::error::{config_err, shape_err, Error, Result};
use crate::networks::{
    discriminator_forward, segmenter_forward, Bound, DiscOutput, DiscriminatorSpec, SegmenterSpec,
};
use crate::numcore::{RngStream, Tape, Tensor, Var};

/// A training batch mixing labeled and unlabeled images.
#[derive(Clone, Debug)]
pub struct BatchPair {
    /// `[B, 1, H, W]`.
    pub images: Tensor,
    /// `[L, C, H, W]` one-hot masks of the labeled samples, in batch order.
    pub masks: Option<Tensor>,
    pub labeled: Vec<bool>,
}

impl BatchPair {
    pub fn new(images: Tensor, masks: Option<Tensor>, labeled: Vec<bool>) -> Result<Self> {
        let (b, _, h, w) = images.dims4()?;
        if labeled.len() != b {
            return shape_err(format!("{} labeled flags for batch of {b}", labeled.len()));
        }
        let n_lab = labeled.iter().filter(|&&l| l).count();
        match &masks {
            None if n_lab > 0 => return shape_err("labeled samples without masks"),
            None => {}
            Some(m) => {
                let (mb, c, mh, mw) = m.dims4()?;
                if mb != n_lab || (mh, mw) != (h, w) {
                    return shape_err(format!(
                        "masks {:?} do not match {n_lab} labeled {h}x{w} samples",
                        m.shape()
                    ));
                }
                let hw = h * w;
                for bi in 0..mb {
                    for p in 0..hw {
                        let mut total = 0.0;
                        for ch in 0..c {
                            let v = m.data()[(bi * c + ch) * hw + p];
                            if v != 0.0 && v != 1.0 {
                                return shape_err("masks must be one-hot");
                            }
                            total += v;
                        }
                        if total != 1.0 {
                            return shape_err("masks must be one-hot");
                        }
                    }
                }
            }
        }
        Ok(Self {
            images,
            masks,
            labeled,
        })
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.labeled.len()).filter(|&i| self.labeled[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.labeled.len()).filter(|&i| !self.labeled[i]).collect()
    }

    pub fn labeled_images(&self) -> Result<Tensor> {
        let items = self
            .labeled_indices()
            .into_iter()
            .map(|i| self.images.batch_item(i))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&items.iter().collect::<Vec<_>>())
    }
}

/// Recorded terms of the segmenter objective. Adversarial terms are `None`
/// when the discriminator was not consulted (or, for IPM, when the batch has
/// no unlabeled samples).
#[derive(Clone, Copy, Debug)]
pub struct SegObjective {
    pub total: Var,
    pub seg: Var,
    pub adv: Option<Var>,
    pub fm: Option<Var>,
    pub ipm: Option<Var>,
}

fn ensure_frozen(tape: &Tape, bound: &Bound, which: &str) -> Result<()> {
    if bound.vars().iter().any(|&v| tape.requires_grad(v)) {
        return Err(Error::Usage(format!(
            "{which} parameters must be bound as constants for this objective"
        )));
    }
    Ok(())
}

fn features(out: &DiscOutput, source: FeatureSource) -> Var {
    match source {
        FeatureSource::Penultimate => out.features,
        FeatureSource::Confidence => out.confidence,
    }
}

fn labeled_parts(batch: &BatchPair) -> Result<(Vec<usize>, Tensor, &Tensor)> {
    let lab = batch.labeled_indices();
    let masks = match (&batch.masks, lab.is_empty()) {
        (Some(m), false) => m,
        _ => return config_err("batch has no labeled samples; the supervised loss is undefined"),
    };
    Ok((lab, batch.labeled_images()?, masks))
}

/// Segmenter objective
/// `L_seg + lambda_adv L_adv + lambda_fea L_fm + lambda_ipm L_ipm`.
///
/// `disc` must be bound as constants. With all adversarial weights zero only
/// the labeled images are forwarded and nothing else is recorded, so the
/// result is exactly the supervised loss.
#[allow(clippy::too_many_arguments)]
pub fn total_seg_loss(
    tape: &mut Tape,
    batch: &BatchPair,
    seg_spec: &SegmenterSpec,
    seg: &Bound,
    disc: Option<(&DiscriminatorSpec, &Bound)>,
    w: &LossWeights,
    rng: &mut RngStream,
) -> Result<SegObjective> {
    w.validate()?;
    let (lab, lab_images, masks) = labeled_parts(batch)?;
    let target = tape.constant(masks.clone());

    let disc = match (w.is_supervised(), disc) {
        (true, _) => None,
        (false, Some(d)) => Some(d),
        (false, None) => return config_err("adversarial weights set but no discriminator given"),
    };
    let Some((disc_spec, disc_params)) = disc else {
        let x = tape.constant(lab_images);
        let pred = segmenter_forward(seg_spec, tape, seg, x)?;
        let seg_term = seg_loss(tape, pred, target)?;
        return Ok(SegObjective {
            total: seg_term,
            seg: seg_term,
            adv: None,
            fm: None,
            ipm: None,
        });
    };
    ensure_frozen(tape, disc_params, "discriminator")?;

    let x = tape.constant(batch.images.clone());
    let pred = segmenter_forward(seg_spec, tape, seg, x)?;
    let pred_lab = tape.select_batch(pred, &lab)?;
    let seg_term = seg_loss(tape, pred_lab, target)?;

    let fake_in = condition(tape, w.conditioning, &batch.images, pred, w.lambda_noise, rng)?;
    let fake = discriminator_forward(disc_spec, tape, disc_params, fake_in)?;
    let adv = gen_adv_loss(tape, &fake);

    let real_in = condition(tape, w.conditioning, &lab_images, target, w.lambda_noise, rng)?;
    let real = discriminator_forward(disc_spec, tape, disc_params, real_in)?;
    let real_feats = features(&real, w.feature_source);
    let fake_feats = features(&fake, w.feature_source);

    let fake_lab = tape.select_batch(fake_feats, &lab)?;
    let fm = feature_matching_loss(tape, fake_lab, real_feats)?;
    let unl = batch.unlabeled_indices();
    let ipm = if unl.is_empty() {
        None
    } else {
        let fake_unl = tape.select_batch(fake_feats, &unl)?;
        Some(match w.ipm_reduction {
            IpmReduction::Sum => ipm_loss(tape, fake_unl, real_feats)?,
            IpmReduction::Mean => ipm_loss_mean(tape, fake_unl, real_feats)?,
        })
    };

    let mut total = seg_term;
    for (term, lambda) in [(Some(adv), w.lambda_adv), (Some(fm), w.lambda_fea), (ipm, w.lambda_ipm)] {
        if let Some(term) = term {
            let weighted = tape.scale(term, lambda);
            total = tape.add(total, weighted)?;
        }
    }
    Ok(SegObjective {
        total,
        seg: seg_term,
        adv: Some(adv),
        fm: Some(fm),
        ipm,
    })
}

/// Discriminator objective: conditioned ground truth of the labeled samples
/// as real pairs, conditioned predictions for every sample as fake pairs.
/// `seg` must be bound as constants, which detaches the predictions.
#[allow(clippy::too_many_arguments)]
pub fn disc_objective(
    tape: &mut Tape,
    batch: &BatchPair,
    seg_spec: &SegmenterSpec,
    seg: &Bound,
    disc_spec: &DiscriminatorSpec,
    disc: &Bound,
    w: &LossWeights,
    rng: &mut RngStream,
) -> Result<Var> {
    w.validate()?;
    ensure_frozen(tape, seg, "segmenter")?;
    let (_, lab_images, masks) = labeled_parts(batch)?;
    let target = tape.constant(masks.clone());
    let real_in = condition(tape, w.conditioning, &lab_images, target, w.lambda_noise, rng)?;
    let real = discriminator_forward(disc_spec, tape, disc, real_in)?;

    let x = tape.constant(batch.images.clone());
    let pred = segmenter_forward(seg_spec, tape, seg, x)?;
    let pred = tape.detach(pred);
    let fake_in = condition(tape, w.conditioning, &batch.images, pred, w.lambda_noise, rng)?;
    let fake = discriminator_forward(disc_spec, tape, disc, fake_in)?;
    disc_loss(tape, &real, &fake)
}
