//! Overlap and boundary-distance metrics for binary and multi-class masks.
//!
//! Distances are in pixels. A boundary pixel is a foreground pixel with a
//! 4-neighbour that is background or outside the image. When exactly one of
//! the two masks is empty, the distance metrics return the image diagonal;
//! when both are empty they return 0.

use serde::Serialize;
use std::fmt::Write as _;

use crate::error::{shape_err, Error, Result};

pub const REPORT_HEADER: &str = "class,dsc,ja,hd95,asd";

/// A binary grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return shape_err(format!("{} bits for a {height}x{width} mask", bits.len()));
        }
        Ok(Self { height, width, bits })
    }

    /// Pixels of `labels` equal to `class`.
    pub fn from_labels(labels: &LabelMap, class: usize) -> Self {
        Self {
            height: labels.height,
            width: labels.width,
            bits: labels.labels.iter().map(|&l| l == class).collect(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn get(&self, y: isize, x: isize) -> bool {
        y >= 0
            && x >= 0
            && (y as usize) < self.height
            && (x as usize) < self.width
            && self.bits[y as usize * self.width + x as usize]
    }

    /// Boundary pixels as `(y, x)`.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let (yi, xi) = (y as isize, x as isize);
                if self.get(yi, xi)
                    && !(self.get(yi - 1, xi) && self.get(yi + 1, xi) && self.get(yi, xi - 1) && self.get(yi, xi + 1))
                {
                    out.push((y, x));
                }
            }
        }
        out
    }

    fn diagonal(&self) -> f64 {
        ((self.height * self.height + self.width * self.width) as f64).sqrt()
    }
}

/// Per-pixel class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub labels: Vec<usize>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return shape_err(format!("{} labels for a {height}x{width} map", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return shape_err(format!("label {bad} out of range for {classes} classes"));
        }
        Ok(Self {
            height,
            width,
            classes,
            labels,
        })
    }
}

fn check_pair(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return shape_err(format!("mask shapes {:?} and {:?} differ", a.dims(), b.dims()));
    }
    Ok(())
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize) {
    let inter = a.bits.iter().zip(&b.bits).filter(|(x, y)| **x && **y).count();
    (inter, a.count(), b.count())
}

/// `2|P∩G| / (|P|+|G|)`, 1 when both are empty.
pub fn dsc(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_pair(pred, gt)?;
    let (i, p, g) = overlap(pred, gt);
    Ok(if p + g == 0 { 1.0 } else { 2.0 * i as f64 / (p + g) as f64 })
}

/// `|P∩G| / |P∪G|`, 1 when both are empty.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_pair(pred, gt)?;
    let (i, p, g) = overlap(pred, gt);
    let union = p + g - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// Exact squared Euclidean distance from every pixel to the nearest pixel
/// of `sites`, by two separable lower-envelope passes.
fn squared_distance_field(h: usize, w: usize, sites: &[(usize, usize)]) -> Vec<f64> {
    let inf = ((h * h + w * w) * 4) as f64;
    let mut f = vec![inf; h * w];
    for &(y, x) in sites {
        f[y * w + x] = 0.0;
    }
    let mut col = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = f[y * w + x];
        }
        let d = envelope_1d(&col);
        for y in 0..h {
            f[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        let row = envelope_1d(&f[y * w..(y + 1) * w]);
        f[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    f
}

/// `d[q] = min_p (q - p)^2 + f[p]` via the lower envelope of parabolas.
fn envelope_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let sq = |i: usize| (i * i) as f64;
    for q in 1..n {
        let cross = |p: usize| ((f[q] + sq(q)) - (f[p] + sq(p))) / (2.0 * (q - p) as f64);
        let mut s = cross(v[k]);
        // z[0] is -inf, so this stops at k = 0
        while s <= z[k] {
            k -= 1;
            s = cross(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut d = vec![0.0; n];
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *out = diff * diff + f[p];
    }
    d
}

/// Directed nearest boundary distances from each boundary pixel of `from`
/// to the boundary of `to`.
fn directed(from: &[(usize, usize)], to_field: &[f64], w: usize) -> Vec<f64> {
    from.iter().map(|&(y, x)| to_field[y * w + x].sqrt()).collect()
}

/// Both directed distance lists, or the sentinel when a mask is empty.
fn surface_distances(a: &BinaryMask, b: &BinaryMask) -> Result<std::result::Result<(Vec<f64>, Vec<f64>), f64>> {
    check_pair(a, b)?;
    match (a.count(), b.count()) {
        (0, 0) => return Ok(Err(0.0)),
        (0, _) | (_, 0) => return Ok(Err(a.diagonal())),
        _ => {}
    }
    let (h, w) = a.dims();
    let (ba, bb) = (a.boundary(), b.boundary());
    let fa = squared_distance_field(h, w, &ba);
    let fb = squared_distance_field(h, w, &bb);
    Ok(Ok((directed(&ba, &fb, w), directed(&bb, &fa, w))))
}

/// Nearest-rank 95th percentile of the pooled directed boundary distances.
pub fn hd95(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (mut d, other) = match surface_distances(pred, gt)? {
        Ok(v) => v,
        Err(sentinel) => return Ok(sentinel),
    };
    d.extend(other);
    d.sort_by(f64::total_cmp);
    let rank = (95 * d.len()).div_ceil(100);
    Ok(d[rank.max(1) - 1])
}

/// Mean of the two directional mean boundary distances.
pub fn asd(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (a, b) = match surface_distances(pred, gt)? {
        Ok(v) => v,
        Err(sentinel) => return Ok(sentinel),
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(&a) + mean(&b)))
}

/// The four metrics for one class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub dsc: f64,
    pub ja: f64,
    pub hd95: f64,
    pub asd: f64,
}

/// Per-foreground-class metrics and their mean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    /// `(class index, metrics)` for classes `1..C`.
    pub per_class: Vec<(usize, ClassMetrics)>,
    pub mean: ClassMetrics,
}

impl MetricReport {
    /// Averages several reports class by class.
    pub fn average(reports: &[MetricReport]) -> Result<MetricReport> {
        let Some(first) = reports.first() else {
            return shape_err("no reports to average");
        };
        let n = reports.len() as f64;
        let mut per_class = Vec::with_capacity(first.per_class.len());
        for (k, &(class, _)) in first.per_class.iter().enumerate() {
            let mut acc = ClassMetrics {
                dsc: 0.0,
                ja: 0.0,
                hd95: 0.0,
                asd: 0.0,
            };
            for r in reports {
                let Some(&(c, m)) = r.per_class.get(k) else {
                    return shape_err("reports cover different classes");
                };
                if c != class {
                    return shape_err("reports cover different classes");
                }
                acc.dsc += m.dsc / n;
                acc.ja += m.ja / n;
                acc.hd95 += m.hd95 / n;
                acc.asd += m.asd / n;
            }
            per_class.push((class, acc));
        }
        Ok(Self::from_classes(per_class))
    }

    fn from_classes(per_class: Vec<(usize, ClassMetrics)>) -> Self {
        let n = per_class.len() as f64;
        let sum = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
        let mean = ClassMetrics {
            dsc: sum(|m| m.dsc),
            ja: sum(|m| m.ja),
            hd95: sum(|m| m.hd95),
            asd: sum(|m| m.asd),
        };
        Self { per_class, mean }
    }

    /// `class,dsc,ja,hd95,asd` rows followed by a `mean` row. Values use
    /// the shortest decimal form that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        let row = |out: &mut String, name: &str, m: &ClassMetrics| {
            writeln!(out, "{name},{},{},{},{}", m.dsc, m.ja, m.hd95, m.asd).unwrap();
        };
        for (c, m) in &self.per_class {
            row(&mut out, &c.to_string(), m);
        }
        row(&mut out, "mean", &self.mean);
        out
    }

    /// Inverse of [`MetricReport::to_csv`]. The mean row is read back as
    /// written, not recomputed.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::Parse(format!("report must start with {REPORT_HEADER:?}")));
        }
        let mut per_class = Vec::new();
        let mut mean = None;
        for line in lines.filter(|l| !l.is_empty()) {
            let cells: Vec<&str> = line.split(',').collect();
            let [name, dsc, ja, hd, asd] = cells[..] else {
                return Err(Error::Parse(format!("report row {line:?} needs 5 cells")));
            };
            let num = |c: &str| c.parse::<f64>().map_err(|e| Error::Parse(format!("{c:?}: {e}")));
            let m = ClassMetrics {
                dsc: num(dsc)?,
                ja: num(ja)?,
                hd95: num(hd)?,
                asd: num(asd)?,
            };
            if name == "mean" {
                mean = Some(m);
            } else {
                let class = name.parse().map_err(|e| Error::Parse(format!("class {name:?}: {e}")))?;
                per_class.push((class, m));
            }
        }
        match mean {
            Some(mean) => Ok(Self { per_class, mean }),
            None => Err(Error::Parse("report has no mean row".into())),
        }
    }
}

/// Binarises each foreground class (1..C) and scores it.
pub fn evaluate(pred: &LabelMap, gt: &LabelMap) -> Result<MetricReport> {
    if pred.classes != gt.classes {
        return shape_err(format!("class counts differ: {} vs {}", pred.classes, gt.classes));
    }
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return shape_err("label maps differ in size");
    }
    if pred.classes < 2 {
        return shape_err("need at least one foreground class");
    }
    let per_class = (1..pred.classes)
        .map(|c| {
            let (p, g) = (BinaryMask::from_labels(pred, c), BinaryMask::from_labels(gt, c));
            Ok((
                c,
                ClassMetrics {
                    dsc: dsc(&p, &g)?,
                    ja: jaccard(&p, &g)?,
                    hd95: hd95(&p, &g)?,
                    asd: asd(&p, &g)?,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_classes(per_class))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut bits = vec![false; h * w];
        for &(y, x) in on {
            bits[y * w + x] = true;
        }
        BinaryMask::new(h, w, bits).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let a = mask(2, 2, &[(0, 0)]);
        let ab = mask(2, 2, &[(0, 0), (0, 1)]);
        assert!((dsc(&a, &ab).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((jaccard(&a, &ab).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        let b = mask(2, 2, &[(1, 1)]);
        assert_eq!((dsc(&a, &b).unwrap(), jaccard(&a, &b).unwrap()), (0.0, 0.0));
        let e = mask(2, 2, &[]);
        assert_eq!((dsc(&e, &e).unwrap(), jaccard(&e, &e).unwrap()), (1.0, 1.0));
        assert_eq!(dsc(&e, &a).unwrap(), 0.0);
        assert!(dsc(&a, &mask(2, 3, &[])).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = mask(5, 5, &[(0, 0)]);
        let b = mask(5, 5, &[(3, 4)]);
        assert_eq!(hd95(&a, &b).unwrap(), 5.0);
        assert_eq!(asd(&a, &b).unwrap(), 5.0);
        assert_eq!(hd95(&a, &a).unwrap(), 0.0);
        let e = mask(5, 5, &[]);
        assert_eq!(hd95(&a, &e).unwrap(), 50f64.sqrt());
        assert_eq!(asd(&e, &a).unwrap(), 50f64.sqrt());
        assert_eq!(hd95(&e, &e).unwrap(), 0.0);
    }

    #[test]
    fn boundary_excludes_interior() {
        let on: Vec<_> = (0..3).flat_map(|y| (0..3).map(move |x| (y + 1, x + 1))).collect();
        let m = mask(5, 5, &on);
        let b = m.boundary();
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&(2, 2)));
        // touching the edge counts as boundary
        let full = mask(3, 3, &(0..9).map(|i| (i / 3, i % 3)).collect::<Vec<_>>());
        assert_eq!(full.boundary().len(), 8);
    }

    #[test]
    fn missing_class_uses_sentinel() {
        let gt = LabelMap::new(4, 4, 3, (0..16).map(|i| i % 3).collect()).unwrap();
        let pred = LabelMap::new(4, 4, 3, gt.labels.iter().map(|&l| if l == 2 { 0 } else { l }).collect()).unwrap();
        let r = evaluate(&pred, &gt).unwrap();
        let (_, m2) = r.per_class[1];
        assert_eq!(m2.dsc, 0.0);
        assert_eq!(m2.hd95, 32f64.sqrt());
        let perfect = evaluate(&gt, &gt).unwrap();
        assert_eq!(perfect.mean.dsc, 1.0);
        assert_eq!(perfect.mean.hd95, 0.0);
        assert!(r.mean.dsc < 1.0);
        let other = LabelMap::new(4, 4, 4, gt.labels.clone()).unwrap();
        assert!(evaluate(&other, &gt).is_err());
        assert!(r.to_csv().starts_with("class,dsc,ja,hd95,asd\n1,"));
        assert!(r.to_csv().lines().last().unwrap().starts_with("mean,"));
        assert_eq!(MetricReport::from_csv(&r.to_csv()).unwrap(), r);
    }
}
