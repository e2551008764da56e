use crate::error::{shape_err, Result};
use crate::networks::DiscOutput;
use crate::numcore::{Tape, Tensor, Var};

/// Floor applied to every log argument.
pub const LOG_FLOOR: f64 = 1e-12;
/// Denominator guard of the dice ratio.
pub const DICE_EPS: f64 = 1e-8;

fn check_same(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return shape_err(format!(
            "{what}: shapes {:?} and {:?} differ",
            tape.value(a).shape(),
            tape.value(b).shape()
        ));
    }
    Ok(())
}

/// Mean over all elements of `-[t ln p + (1 - t) ln(1 - p)]`.
pub fn bce_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    check_same(tape, pred, target, "bce_loss")?;
    let log_p = tape.log_clamped(pred, LOG_FLOOR);
    let one_minus_p = tape.affine(pred, -1.0, 1.0);
    let log_q = tape.log_clamped(one_minus_p, LOG_FLOOR);
    let one_minus_t = tape.affine(target, -1.0, 1.0);
    let pos = tape.mul(target, log_p)?;
    let neg = tape.mul(one_minus_t, log_q)?;
    let both = tape.add(pos, neg)?;
    let m = tape.mean(both);
    Ok(tape.scale(m, -1.0))
}

/// `1 - 2 sum(p t) / (sum p + sum t + eps)` with every element treated as
/// one class.
pub fn dice_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    check_same(tape, pred, target, "dice_loss")?;
    let pt = tape.mul(pred, target)?;
    let inter = tape.sum(pt);
    let sp = tape.sum(pred);
    let st = tape.sum(target);
    let denom = tape.add(sp, st)?;
    let denom = tape.affine(denom, 1.0, DICE_EPS);
    let ratio = tape.div(inter, denom)?;
    Ok(tape.affine(ratio, -2.0, 1.0))
}

/// Dice loss per foreground channel (1..C) of `[B, C, H, W]` maps, summed
/// over batch and space, then averaged over those channels.
pub fn multiclass_dice_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    check_same(tape, pred, target, "multiclass_dice_loss")?;
    let (_, c, _, _) = tape.value(pred).dims4()?;
    if c < 2 {
        return shape_err("multiclass dice needs at least one foreground channel");
    }
    let pt = tape.mul(pred, target)?;
    let inter = tape.channel_sums(pt)?;
    let sp = tape.channel_sums(pred)?;
    let st = tape.channel_sums(target)?;
    let denom = tape.add(sp, st)?;
    let denom = tape.affine(denom, 1.0, DICE_EPS);
    let ratio = tape.div(inter, denom)?;
    let per_class = tape.affine(ratio, -2.0, 1.0);
    let fg = Tensor::from_fn(&[c], |i| if i == 0 { 0.0 } else { 1.0 / (c - 1) as f64 });
    let fg = tape.constant(fg);
    let weighted = tape.mul(per_class, fg)?;
    Ok(tape.sum(weighted))
}

/// `0.5 * bce + 0.5 * dice`. Multi-channel `[B, C, H, W]` maps use the
/// per-class dice over foreground channels; anything else uses the
/// single-class form.
pub fn seg_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let bce = bce_loss(tape, pred, target)?;
    let multi = matches!(tape.value(pred).shape(), [_, c, _, _] if *c >= 2);
    let dice = if multi {
        multiclass_dice_loss(tape, pred, target)?
    } else {
        dice_loss(tape, pred, target)?
    };
    let sum = tape.add(bce, dice)?;
    Ok(tape.scale(sum, 0.5))
}

fn check_cells(tape: &Tape, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa.len() != sb.len() || sa[1..] != sb[1..] {
        return shape_err(format!("confidence maps {sa:?} and {sb:?} differ in geometry"));
    }
    Ok(())
}

/// `mean(-ln D_real) + mean(-ln(1 - D_fake))`, each mean over its own cells.
pub fn disc_loss(tape: &mut Tape, real: &DiscOutput, fake: &DiscOutput) -> Result<Var> {
    check_cells(tape, real.confidence, fake.confidence)?;
    let lr = tape.log_clamped(real.confidence, LOG_FLOOR);
    let real_term = tape.mean(lr);
    let q = tape.affine(fake.confidence, -1.0, 1.0);
    let lf = tape.log_clamped(q, LOG_FLOOR);
    let fake_term = tape.mean(lf);
    let s = tape.add(real_term, fake_term)?;
    Ok(tape.scale(s, -1.0))
}

/// Non-saturating generator loss `mean(-ln D_fake)`.
pub fn gen_adv_loss(tape: &mut Tape, fake: &DiscOutput) -> Var {
    let l = tape.log_clamped(fake.confidence, LOG_FLOOR);
    let m = tape.mean(l);
    tape.scale(m, -1.0)
}

/// Mean squared difference of per-sample paired features.
pub fn feature_matching_loss(tape: &mut Tape, fake_feats: Var, real_feats: Var) -> Result<Var> {
    check_same(tape, fake_feats, real_feats, "feature_matching_loss")?;
    let d = tape.sub(fake_feats, real_feats)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Squared L2 distance between the batch-mean feature of each side.
pub fn ipm_loss(tape: &mut Tape, unlabeled_feats: Var, real_feats: Var) -> Result<Var> {
    check_cells(tape, unlabeled_feats, real_feats)?;
    let mu = tape.mean_batch(unlabeled_feats)?;
    let mr = tape.mean_batch(real_feats)?;
    let d = tape.sub(mu, mr)?;
    let sq = tape.square(d);
    Ok(tape.sum(sq))
}

/// [`ipm_loss`] divided by the number of feature elements per sample, i.e.
/// the mean squared difference of the two feature centres.
pub fn ipm_loss_mean(tape: &mut Tape, unlabeled_feats: Var, real_feats: Var) -> Result<Var> {
    let per_sample: usize = tape.value(real_feats).shape()[1..].iter().product();
    let total = ipm_loss(tape, unlabeled_feats, real_feats)?;
    Ok(tape.scale(total, 1.0 / per_sample as f64))
}
