use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use super::pgm::{read_pgm, write_pgm, PgmGrid};
use super::{labels_from_one_hot, one_hot, DatasetSplit, Sample, SynthConfig};
use crate::error::{config_err, Error, Result};
use crate::numcore::Tensor;

use super::split::SplitIds;

const IMAGE_MAX: u16 = 65535;

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub hw: usize,
    pub classes: usize,
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitIds>,
    /// Generator settings, when the data is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self) -> Result<DatasetSplit> {
        match &self.manifest.split {
            Some(s) => s.materialize(&self.samples),
            None => config_err("dataset manifest has no split"),
        }
    }
}

/// Pixel values clamped to [0, 1] and quantised to 16 bits, as stored.
pub fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * IMAGE_MAX as f64).round() as u16
}

/// Writes `images/<id>.pgm`, `masks/<id>.pgm` and `manifest.json`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let m = &dataset.manifest;
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    for s in &dataset.samples {
        let (h, w) = s.hw();
        if (h, w) != (m.hw, m.hw) {
            return config_err(format!("sample {} is {h}x{w}, manifest says {}", s.id, m.hw));
        }
        let grid = PgmGrid {
            width: w,
            height: h,
            maxval: IMAGE_MAX,
            values: s.image.data().iter().map(|&v| quantize(v)).collect(),
        };
        write_pgm(&dir.join("images").join(format!("{}.pgm", s.id)), &grid)?;
        if let Some(mask) = &s.mask {
            let grid = PgmGrid {
                width: w,
                height: h,
                maxval: 255,
                values: labels_from_one_hot(mask)?.iter().map(|&c| c as u16).collect(),
            };
            write_pgm(&dir.join("masks").join(format!("{}.pgm", s.id)), &grid)?;
        }
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(m)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let hw = manifest.hw;
    let mut samples = Vec::with_capacity(manifest.ids.len());
    for id in &manifest.ids {
        let grid = read_pgm(&dir.join("images").join(format!("{id}.pgm")))?;
        if (grid.width, grid.height) != (hw, hw) {
            return Err(Error::Parse(format!("image {id} is not {hw}x{hw}")));
        }
        let scale = grid.maxval as f64;
        let image = Tensor::new(&[1, hw, hw], grid.values.iter().map(|&v| v as f64 / scale).collect())?;
        let mask_path = dir.join("masks").join(format!("{id}.pgm"));
        let mask = if mask_path.exists() {
            let g = read_pgm(&mask_path)?;
            if (g.width, g.height) != (hw, hw) {
                return Err(Error::Parse(format!("mask {id} is not {hw}x{hw}")));
            }
            let labels: Vec<usize> = g.values.iter().map(|&v| v as usize).collect();
            Some(one_hot(&labels, manifest.classes, hw, hw)?)
        } else {
            None
        };
        samples.push(Sample::new(id.clone(), image, mask)?);
    }
    Ok(Dataset { manifest, samples })
}
