use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::{one_hot, Sample};
use crate::error::{config_err, Result};
use crate::numcore::{RngStream, Tensor};

pub const BACKGROUND: usize = 0;
pub const LV: usize = 1;
pub const MYO: usize = 2;
pub const RV: usize = 3;

/// Parameters of the synthetic generator. Each sample is a disk (LV)
/// inside an annulus (Myo) with a crescent (RV) pressed against the
/// annulus, placed uniformly wherever the whole structure fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub hw: usize,
    pub classes: usize,
    pub noise_sigma: f64,
    pub lv_radius: (f64, f64),
    pub myo_thickness: (f64, f64),
    pub rv_radius: (f64, f64),
    /// RV disk centre sits this fraction of its radius beyond the annulus.
    pub rv_shift: (f64, f64),
    /// Direction of the RV, radians.
    pub rotation: (f64, f64),
    /// Minimum distance between any structure and the canvas edge.
    pub margin: f64,
    /// Intensity per class, indexed by class.
    pub bands: [f64; 4],
    /// Background blobs rendered with a random foreground band.
    pub distractors: usize,
    pub distractor_radius: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 280,
            hw: 32,
            classes: 4,
            noise_sigma: 0.25,
            lv_radius: (2.5, 4.5),
            myo_thickness: (1.5, 2.5),
            rv_radius: (3.5, 5.5),
            rv_shift: (0.3, 0.6),
            rotation: (0.0, TAU),
            margin: 1.0,
            bands: [0.1, 0.9, 0.4, 0.65],
            distractors: 0,
            distractor_radius: (1.5, 3.0),
            seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min) {
        return config_err(format!("{name} range ({lo}, {hi}) must be ordered and >= {min}"));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes != 4 {
            return config_err(format!("generator renders 4 classes, got {}", self.classes));
        }
        if self.hw < 8 || !self.hw.is_power_of_two() {
            return config_err(format!("hw must be a power of two >= 8, got {}", self.hw));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return config_err("noise_sigma must be finite and non-negative");
        }
        check_range("lv_radius", self.lv_radius, 0.5)?;
        check_range("myo_thickness", self.myo_thickness, 0.5)?;
        check_range("rv_radius", self.rv_radius, 0.5)?;
        check_range("rv_shift", self.rv_shift, 0.0)?;
        check_range("distractor_radius", self.distractor_radius, 0.0)?;
        if !(self.rotation.0 <= self.rotation.1) || self.margin < 0.0 {
            return config_err("rotation range must be ordered and margin non-negative");
        }
        if self.bands.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return config_err("bands must lie in [0, 1]");
        }
        // widest possible structure, measured along the RV direction
        let r_myo = self.lv_radius.1 + self.myo_thickness.1;
        let extent = 2.0 * r_myo + (1.0 + self.rv_shift.1) * self.rv_radius.1;
        if extent > self.hw as f64 - 2.0 * self.margin {
            return config_err(format!(
                "structures up to {extent:.2} px wide do not fit a {0}x{0} canvas with margin {1}",
                self.hw, self.margin
            ));
        }
        Ok(())
    }

    /// Expected LV, Myo pixel fractions implied by the radius distributions,
    /// for structures that never touch the canvas edge.
    pub fn expected_fractions(&self) -> (f64, f64) {
        let m2 = |(a, b): (f64, f64)| (a * a + a * b + b * b) / 3.0;
        let m1 = |(a, b): (f64, f64)| (a + b) / 2.0;
        let lv = m2(self.lv_radius);
        let outer = lv + 2.0 * m1(self.lv_radius) * m1(self.myo_thickness) + m2(self.myo_thickness);
        let area = (self.hw * self.hw) as f64;
        (std::f64::consts::PI * lv / area, std::f64::consts::PI * (outer - lv) / area)
    }
}

/// Renders `cfg.count` samples. Sample `i` depends only on `cfg` and `i`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    (0..cfg.count)
        .map(|i| render(cfg, &mut root.fork(i as u64), format!("s{i:04}")))
        .collect()
}

fn render(cfg: &SynthConfig, rng: &mut RngStream, id: String) -> Result<Sample> {
    let hw = cfg.hw;
    let r_lv = rng.uniform_range(cfg.lv_radius.0, cfg.lv_radius.1);
    let r_myo = r_lv + rng.uniform_range(cfg.myo_thickness.0, cfg.myo_thickness.1);
    let r_rv = rng.uniform_range(cfg.rv_radius.0, cfg.rv_radius.1);
    let shift = rng.uniform_range(cfg.rv_shift.0, cfg.rv_shift.1);
    let theta = rng.uniform_range(cfg.rotation.0, cfg.rotation.1);
    let d = r_myo + shift * r_rv;
    let (dx, dy) = (d * theta.cos(), d * theta.sin());

    let (x_lo, x_hi) = ((-r_myo).min(dx - r_rv), r_myo.max(dx + r_rv));
    let (y_lo, y_hi) = ((-r_myo).min(dy - r_rv), r_myo.max(dy + r_rv));
    let n = hw as f64;
    let cx = rng.uniform_range(cfg.margin - x_lo, n - cfg.margin - x_hi);
    let cy = rng.uniform_range(cfg.margin - y_lo, n - cfg.margin - y_hi);

    let mut labels = vec![BACKGROUND; hw * hw];
    for y in 0..hw {
        for x in 0..hw {
            let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let r2 = px * px + py * py;
            let rv2 = (px - dx).powi(2) + (py - dy).powi(2);
            labels[y * hw + x] = if r2 < r_lv * r_lv {
                LV
            } else if r2 < r_myo * r_myo {
                MYO
            } else if rv2 < r_rv * r_rv {
                RV
            } else {
                BACKGROUND
            };
        }
    }

    let mut img: Vec<f64> = labels.iter().map(|&c| cfg.bands[c]).collect();
    for _ in 0..cfg.distractors {
        let r = rng.uniform_range(cfg.distractor_radius.0, cfg.distractor_radius.1);
        let (bx, by) = (rng.uniform_range(0.0, n), rng.uniform_range(0.0, n));
        let band = cfg.bands[1 + rng.below(3)];
        for y in 0..hw {
            for x in 0..hw {
                let (px, py) = (x as f64 + 0.5 - bx, y as f64 + 0.5 - by);
                if labels[y * hw + x] == BACKGROUND && px * px + py * py < r * r {
                    img[y * hw + x] = band;
                }
            }
        }
    }
    if cfg.noise_sigma > 0.0 {
        for v in &mut img {
            *v = (*v + cfg.noise_sigma * rng.gaussian()).clamp(0.0, 1.0);
        }
    }
    let image = Tensor::new(&[1, hw, hw], img)?;
    let mask = one_hot(&labels, cfg.classes, hw, hw)?;
    Sample::new(id, image, Some(mask))
}
