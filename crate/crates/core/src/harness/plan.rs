use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::PathBuf;

use crate::data::{generate_synthetic, load_dataset, split, DatasetSplit, Sample, SplitIds, SynthConfig};
use crate::error::{config_err, Result};
use crate::networks::Granularity;
use crate::objectives::{Conditioning, LossWeights};
use crate::trainer::TrainConfig;

pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];
pub const BASELINE_RUN: &str = "baseline";

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_baseline() -> Option<String> {
    Some(BASELINE_RUN.to_string())
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

/// Where the samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated in memory, then split by `split_seed` into `val` and
    /// `test` samples and a training pool.
    Synthetic {
        #[serde(default)]
        config: SynthConfig,
        #[serde(default = "default_val")]
        val: usize,
        #[serde(default = "default_test")]
        test: usize,
        #[serde(default)]
        split_seed: u64,
    },
    /// A dataset directory written by `gen-data`. Its val/test partition is
    /// kept; the training pool is re-divided per run by labeled fraction.
    Directory {
        path: PathBuf,
        #[serde(default)]
        split_seed: u64,
    },
}

fn default_val() -> usize {
    30
}

fn default_test() -> usize {
    50
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            config: SynthConfig::default(),
            val: default_val(),
            test: default_test(),
            split_seed: 0,
        }
    }
}

/// Samples loaded once per plan; read-only afterwards.
#[derive(Clone, Debug)]
pub struct LoadedData {
    samples: Vec<Sample>,
    /// Fixed val/test ids and the training pool, for directory sources.
    fixed: Option<SplitIds>,
    val: usize,
    test: usize,
    split_seed: u64,
}

impl LoadedData {
    pub fn load(source: &DataSource) -> Result<Self> {
        match source {
            DataSource::Synthetic {
                config,
                val,
                test,
                split_seed,
            } => Ok(Self {
                samples: generate_synthetic(config)?,
                fixed: None,
                val: *val,
                test: *test,
                split_seed: *split_seed,
            }),
            DataSource::Directory { path, split_seed } => {
                let ds = load_dataset(path)?;
                let Some(ids) = ds.manifest.split.clone() else {
                    return config_err(format!("{} has no split in its manifest", path.display()));
                };
                Ok(Self {
                    samples: ds.samples,
                    val: ids.val.len(),
                    test: ids.test.len(),
                    fixed: Some(ids),
                    split_seed: *split_seed,
                })
            }
        }
    }

    /// Partition for one labeled fraction. Val and test never depend on it.
    pub fn split(&self, labeled_fraction: f64) -> Result<DatasetSplit> {
        match &self.fixed {
            None => split(&self.samples, labeled_fraction, self.split_seed, self.val, self.test),
            Some(ids) => {
                let mut pool = ids.labeled.clone();
                pool.extend(ids.unlabeled.iter().cloned());
                let train = SplitIds::new(&pool, labeled_fraction, self.split_seed, 0, 0)?;
                SplitIds {
                    val: ids.val.clone(),
                    test: ids.test.clone(),
                    ..train
                }
                .materialize(&self.samples)
            }
        }
    }
}

/// One row of an experiment: a weight setting trained over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    #[serde(default = "default_fraction")]
    pub labeled_fraction: f64,
    #[serde(default)]
    pub weights: LossWeights,
    /// Fields merged over the plan's base training config.
    #[serde(default = "empty_object")]
    pub overrides: serde_json::Value,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_fraction() -> f64 {
    0.1
}

impl RunSpec {
    pub fn new(name: &str, weights: LossWeights) -> Self {
        Self {
            name: name.to_string(),
            labeled_fraction: default_fraction(),
            weights,
            overrides: empty_object(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub base: TrainConfig,
    /// Run the improvement columns are measured against.
    #[serde(default = "default_baseline")]
    pub baseline: Option<String>,
}

fn adversarial(granularity: Granularity, conditioning: Conditioning) -> LossWeights {
    LossWeights {
        granularity,
        conditioning,
        ..LossWeights::default()
    }
}

impl ExperimentPlan {
    /// Supervised baseline, the three discriminator granularities on raw
    /// maps, then image and patch discriminators on blended maps.
    pub fn ablation() -> Self {
        use Conditioning::{Blend, None as Raw};
        use Granularity::{Image, Patch, Pixel};
        let runs = vec![
            RunSpec::new(BASELINE_RUN, LossWeights::supervised()),
            RunSpec::new("image", adversarial(Image, Raw)),
            RunSpec::new("patch", adversarial(Patch, Raw)),
            RunSpec::new("pixel", adversarial(Pixel, Raw)),
            RunSpec::new("image_blend", adversarial(Image, Blend)),
            RunSpec::new("patch_blend", adversarial(Patch, Blend)),
        ];
        Self {
            runs,
            data: DataSource::default(),
            base: TrainConfig::default(),
            baseline: default_baseline(),
        }
    }

    /// Supervised and full adversarial runs at each labeled fraction.
    pub fn ratio_sweep(fractions: &[f64]) -> Self {
        let mut runs = Vec::new();
        for &f in fractions {
            let pct = (f * 100.0).round();
            for (prefix, weights) in [("baseline", LossWeights::supervised()), ("pca", LossWeights::default())] {
                runs.push(RunSpec {
                    labeled_fraction: f,
                    ..RunSpec::new(&format!("{prefix}_{pct}"), weights)
                });
            }
        }
        let baseline = runs.first().map(|r| r.name.clone());
        Self {
            runs,
            data: DataSource::default(),
            base: TrainConfig::default(),
            baseline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return config_err("plan has no runs");
        }
        let mut names = HashSet::new();
        for r in &self.runs {
            if r.name.is_empty() || r.name.contains(['/', '\\']) || r.name.starts_with('.') {
                return config_err(format!("run name {:?} is not a plain directory name", r.name));
            }
            if !names.insert(r.name.as_str()) {
                return config_err(format!("duplicate run name {:?}", r.name));
            }
            if r.seeds.is_empty() {
                return config_err(format!("run {:?} has no seeds", r.name));
            }
            if !r.overrides.is_object() {
                return config_err(format!("overrides of run {:?} must be a JSON object", r.name));
            }
        }
        if let Some(b) = &self.baseline {
            if !names.contains(b.as_str()) {
                log::warn!("baseline run {b:?} is not in the plan; improvement columns stay empty");
            }
        }
        Ok(())
    }

    /// Training config of `run` for one seed: base, then overrides, then the
    /// run's weights and the seed.
    pub fn train_config(&self, run: &RunSpec, seed: u64) -> Result<TrainConfig> {
        let cfg = merge_config(&self.base, &run.overrides)?;
        let cfg = TrainConfig {
            weights: run.weights.clone(),
            seed,
            ..cfg
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_seeds(&mut self, seeds: &[u64]) {
        for r in &mut self.runs {
            r.seeds = seeds.to_vec();
        }
    }
}

/// Overlays the keys of a JSON object onto a config, recursing into
/// nested objects.
pub fn merge_config<T>(base: &T, overrides: &serde_json::Value) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut value = serde_json::to_value(base)?;
    merge_json(&mut value, overrides);
    Ok(serde_json::from_value(value)?)
}

fn merge_json(dst: &mut serde_json::Value, src: &serde_json::Value) {
    match (dst, src) {
        (serde_json::Value::Object(d), serde_json::Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        d.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (d, s) => *d = s.clone(),
    }
}
