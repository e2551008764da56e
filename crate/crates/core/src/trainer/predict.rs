use crate::data::{normalize, Normalization, Sample};
use crate::error::{shape_err, Result};
use crate::metrics::{evaluate, LabelMap, MetricReport};
use crate::networks::{segmenter_forward, NetworkSpec, NetworkState};
use crate::numcore::{Tape, Tensor};

/// Samples per forward pass during inference.
const INFER_BATCH: usize = 16;

/// Segmenter output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Channel softmax, `[C, H, W]`.
    pub probs: Tensor,
    /// Per-pixel argmax; ties go to the lowest class index.
    pub labels: LabelMap,
    /// Per-class `p >= 0.5` maps, `[C, H, W]`.
    pub binary: Tensor,
}

/// Argmax over the channels of a `[C, H, W]` probability tensor.
pub fn argmax_labels(probs: &Tensor) -> Result<LabelMap> {
    let s = probs.shape();
    if s.len() != 3 {
        return shape_err(format!("expected [C, H, W] probabilities, got {s:?}"));
    }
    let (c, hw) = (s[0], s[1] * s[2]);
    let d = probs.data();
    let labels = (0..hw)
        .map(|p| {
            let mut best = 0;
            for ch in 1..c {
                if d[ch * hw + p] > d[best * hw + p] {
                    best = ch;
                }
            }
            best
        })
        .collect();
    LabelMap::new(s[1], s[2], c, labels)
}

/// `1` where `p >= 0.5`, else `0`.
pub fn binarize(probs: &Tensor) -> Tensor {
    Tensor::from_fn(probs.shape(), |i| if probs.data()[i] >= 0.5 { 1.0 } else { 0.0 })
}

fn segmenter_spec(seg: &NetworkState) -> Result<&crate::networks::SegmenterSpec> {
    match seg.spec() {
        NetworkSpec::Segmenter(s) => Ok(s),
        NetworkSpec::Discriminator(_) => shape_err("expected a segmenter state"),
    }
}

/// Runs the segmenter over `images` (each `[1, H, W]`) in fixed-size chunks.
pub fn predict_batch(seg: &NetworkState, images: &[&Tensor]) -> Result<Vec<Prediction>> {
    let spec = segmenter_spec(seg)?;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFER_BATCH) {
        let s = chunk[0].shape();
        if s.len() != 3 {
            return shape_err(format!("expected [1, H, W] images, got {s:?}"));
        }
        let (h, w) = (s[1], s[2]);
        let mut data = Vec::with_capacity(chunk.len() * h * w);
        for im in chunk {
            if im.shape() != s {
                return shape_err("images in one batch must share a shape");
            }
            data.extend_from_slice(im.data());
        }
        let x = Tensor::new(&[chunk.len(), s[0], h, w], data)?;
        let mut tape = Tape::new();
        let bound = seg.bind(&mut tape, false);
        let xv = tape.constant(x);
        let probs = segmenter_forward(spec, &mut tape, &bound, xv)?;
        let probs = tape.value(probs);
        let c = probs.shape()[1];
        for b in 0..chunk.len() {
            let p = probs.batch_item(b)?.reshape(&[c, h, w])?;
            out.push(Prediction {
                labels: argmax_labels(&p)?,
                binary: binarize(&p),
                probs: p,
            });
        }
    }
    Ok(out)
}

pub fn predict(seg: &NetworkState, image: &Tensor) -> Result<Prediction> {
    Ok(predict_batch(seg, &[image])?.remove(0))
}

/// Per-sample metric reports on masked samples, averaged.
pub fn evaluate_samples(seg: &NetworkState, samples: &[Sample]) -> Result<MetricReport> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let preds = predict_batch(seg, &images)?;
    let mut reports = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(&preds) {
        let Some(labels) = s.labels() else {
            return shape_err(format!("sample {} has no mask to evaluate against", s.id));
        };
        let (h, w) = s.hw();
        let gt = LabelMap::new(h, w, p.labels.classes, labels)?;
        reports.push(evaluate(&p.labels, &gt)?);
    }
    MetricReport::average(&reports)
}

/// [`evaluate_samples`] after applying the training-time normalisation.
pub fn evaluate_normalized(seg: &NetworkState, samples: &[Sample], mode: Normalization) -> Result<MetricReport> {
    let prepared: Vec<Sample> = samples.iter().map(|s| normalize(s, mode).0).collect();
    evaluate_samples(seg, &prepared)
}
