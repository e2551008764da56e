use std::fs;
use std::path::Path;

use super::plan::{ExperimentPlan, LoadedData, RunSpec};
use super::svg::{ablation_svg, emit_learning_curve};
use super::table::ResultTable;
use crate::data::DatasetSplit;
use crate::error::{config_err, Result};
use crate::networks::{output_geometry, receptive_field, DiscriminatorSpec};
use crate::trainer::{evaluate_normalized, train};

/// Regression bound accepted when the patch-over-image gap is within one
/// pooled standard deviation.
pub const ORDERING_TOLERANCE: f64 = 0.01;

/// The full-resolution patch discriminator must see 22x22 patches and emit
/// a 32x32 map on 256x256 inputs.
pub fn geometry_self_test() -> Result<()> {
    let spec = DiscriminatorSpec::patch_256(4);
    let rf = receptive_field(&spec)?;
    let out = output_geometry(&spec, (256, 256))?;
    if rf != 22 || out != (32, 32) {
        return config_err(format!(
            "geometry self-test failed: rf={rf} out={}x{} (expected rf=22 out=32x32)",
            out.0, out.1
        ));
    }
    Ok(())
}

fn run_seed(plan: &ExperimentPlan, run: &RunSpec, seed: u64, data: &DatasetSplit, dir: &Path) -> Result<()> {
    let cfg = plan.train_config(run, seed)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let out = train(&cfg, data, Some(dir))?;
    emit_learning_curve(&out.log, &dir.join("curve.svg"))?;
    let report = evaluate_normalized(&out.best_segmenter, &data.test, cfg.normalization)?;
    fs::write(dir.join("report.csv"), report.to_csv())?;
    Ok(())
}

fn record_failure(dir: &Path, err: &crate::Error) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("error.txt"), format!("{err}\n"))?;
    Ok(())
}

/// Trains every run and seed into `<out>/<run>/<seed>/`, then rebuilds the
/// result table from the written reports and saves `table.csv`,
/// `seeds.csv` and `ablation.svg`. Training failures are recorded per seed
/// and do not stop the plan.
pub fn run_experiment(plan: &ExperimentPlan, out: &Path) -> Result<ResultTable> {
    geometry_self_test()?;
    plan.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("plan.json"), serde_json::to_string_pretty(plan)?)?;
    let data = LoadedData::load(&plan.data)?;

    for run in &plan.runs {
        let split = data.split(run.labeled_fraction);
        for &seed in &run.seeds {
            let dir = out.join(&run.name).join(seed.to_string());
            for stale in ["report.csv", "error.txt"] {
                if dir.join(stale).exists() {
                    fs::remove_file(dir.join(stale))?;
                }
            }
            let result = match &split {
                Ok(split) => {
                    log::info!("run {} seed {seed}", run.name);
                    run_seed(plan, run, seed, split, &dir)
                }
                Err(e) => Err(crate::Error::Config(e.to_string())),
            };
            if let Err(e) = result {
                log::error!("run {} seed {seed} failed: {e}", run.name);
                record_failure(&dir, &e)?;
            }
        }
    }

    let mut table = ResultTable::from_dir(plan, out)?;
    if let Some(check) = table.ordering("patch", "image", ORDERING_TOLERANCE) {
        table.add_note("patch", &check.describe("patch", "image"));
    }
    fs::write(out.join("table.csv"), table.to_csv())?;
    fs::write(out.join("seeds.csv"), table.seeds_csv())?;
    fs::write(out.join("ablation.svg"), ablation_svg(&table))?;
    Ok(table)
}

/// [`run_experiment`] for plans that carry a supervised baseline run.
pub fn run_ablation(plan: &ExperimentPlan, out: &Path) -> Result<ResultTable> {
    let Some(name) = &plan.baseline else {
        return config_err("ablation needs a designated baseline run");
    };
    match plan.runs.iter().find(|r| &r.name == name) {
        Some(r) if r.weights.is_supervised() => run_experiment(plan, out),
        Some(_) => config_err(format!("baseline run {name:?} has non-zero adversarial weights")),
        None => config_err(format!("baseline run {name:?} is not in the plan")),
    }
}
