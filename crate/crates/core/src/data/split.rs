use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::Sample;
use crate::error::{config_err, Result};
use crate::numcore::RngStream;

/// Sample ids per partition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Materialised partitions. Unlabeled samples keep their masks so they can
/// be scored afterwards; the trainer never reads them.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SplitIds {
    /// Shuffles `ids` with `seed`, takes `val` then `test` ids off the front
    /// and splits the remaining training ids into `round(fraction * train)`
    /// labeled and the rest unlabeled. Val and test depend only on the seed.
    pub fn new(ids: &[String], labeled_fraction: f64, seed: u64, val: usize, test: usize) -> Result<Self> {
        if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
            return config_err(format!("labeled fraction must be in (0, 1], got {labeled_fraction}"));
        }
        if val + test >= ids.len() {
            return config_err(format!(
                "{val} val + {test} test leaves no training data out of {}",
                ids.len()
            ));
        }
        let mut order = ids.to_vec();
        RngStream::new(seed).shuffle(&mut order);
        let train = &order[val + test..];
        let n_lab = (labeled_fraction * train.len() as f64).round() as usize;
        if n_lab == 0 {
            return config_err(format!(
                "labeled fraction {labeled_fraction} of {} training samples rounds to zero",
                train.len()
            ));
        }
        Ok(Self {
            val: order[..val].to_vec(),
            test: order[val..val + test].to_vec(),
            labeled: train[..n_lab].to_vec(),
            unlabeled: train[n_lab..].to_vec(),
        })
    }

    pub fn materialize(&self, data: &[Sample]) -> Result<DatasetSplit> {
        let by_id: HashMap<&str, &Sample> = data.iter().map(|s| (s.id.as_str(), s)).collect();
        let pick = |ids: &[String]| -> Result<Vec<Sample>> {
            ids.iter()
                .map(|id| match by_id.get(id.as_str()) {
                    Some(s) => Ok((*s).clone()),
                    None => config_err(format!("split references unknown sample {id}")),
                })
                .collect()
        };
        Ok(DatasetSplit {
            labeled: pick(&self.labeled)?,
            unlabeled: pick(&self.unlabeled)?,
            val: pick(&self.val)?,
            test: pick(&self.test)?,
        })
    }
}

/// Deterministic shuffled split; see [`SplitIds::new`].
pub fn split(data: &[Sample], labeled_fraction: f64, seed: u64, val: usize, test: usize) -> Result<DatasetSplit> {
    let ids: Vec<String> = data.iter().map(|s| s.id.clone()).collect();
    let mut seen = std::collections::HashSet::new();
    if !ids.iter().all(|id| seen.insert(id)) {
        return config_err("sample ids must be unique");
    }
    SplitIds::new(&ids, labeled_fraction, seed, val, test)?.materialize(data)
}
