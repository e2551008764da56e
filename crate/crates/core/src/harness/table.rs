use std::fmt::Write as _;
use std::path::Path;

use super::plan::ExperimentPlan;
use crate::error::Result;
use crate::metrics::{ClassMetrics, MetricReport};

pub const TABLE_HEADER: &str = "run,seeds_ok,seeds_failed,dsc_mean,dsc_std,ja_mean,ja_std,hd95_mean,hd95_std,asd_mean,asd_std,dsc_imp,ja_imp,hd95_imp,asd_imp,note";

/// Outcome of one seed: its test report, or the error that stopped it.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub outcome: std::result::Result<MetricReport, String>,
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

/// Seed statistics of the mean-over-classes metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSummary {
    pub dsc: Stat,
    pub ja: Stat,
    pub hd95: Stat,
    pub asd: Stat,
}

impl RunSummary {
    fn of(reports: &[&MetricReport]) -> Option<Self> {
        let col = |f: fn(&ClassMetrics) -> f64| Stat::of(&reports.iter().map(|r| f(&r.mean)).collect::<Vec<_>>());
        Some(Self {
            dsc: col(|m| m.dsc)?,
            ja: col(|m| m.ja)?,
            hd95: col(|m| m.hd95)?,
            asd: col(|m| m.asd)?,
        })
    }

    fn means(&self) -> [f64; 4] {
        [self.dsc.mean, self.ja.mean, self.hd95.mean, self.asd.mean]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub name: String,
    pub seeds: Vec<SeedResult>,
    /// `None` when every seed failed.
    pub summary: Option<RunSummary>,
    pub note: String,
}

impl RunResult {
    pub fn new(name: &str, seeds: Vec<SeedResult>) -> Self {
        let ok: Vec<&MetricReport> = seeds.iter().filter_map(|s| s.outcome.as_ref().ok()).collect();
        let failed: Vec<String> = seeds
            .iter()
            .filter_map(|s| s.outcome.as_ref().err().map(|e| format!("seed {} failed: {e}", s.seed)))
            .collect();
        Self {
            name: name.to_string(),
            summary: RunSummary::of(&ok),
            note: failed.join("; "),
            seeds,
        }
    }

    pub fn failed(&self) -> usize {
        self.seeds.iter().filter(|s| s.outcome.is_err()).count()
    }
}

/// Directional comparison of two runs' mean DSC.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderingCheck {
    pub diff: f64,
    pub pooled_std: f64,
    /// The gap is within one pooled standard deviation, so a regression of
    /// at most `tolerance` is accepted.
    pub relaxed: bool,
    pub tolerance: f64,
    pub pass: bool,
}

impl OrderingCheck {
    pub fn describe(&self, better: &str, worse: &str) -> String {
        let rule = if self.relaxed {
            format!("within one pooled std, no regression > {}", self.tolerance)
        } else {
            "strict".to_string()
        };
        format!(
            "{better} vs {worse}: dsc diff {:.4}, pooled std {:.4}, rule {rule}, {}",
            self.diff,
            self.pooled_std,
            if self.pass { "pass" } else { "fail" }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub runs: Vec<RunResult>,
    pub baseline: Option<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

impl ResultTable {
    pub fn run(&self, name: &str) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.name == name)
    }

    fn baseline_means(&self) -> Option<[f64; 4]> {
        let b = self.baseline.as_deref()?;
        Some(self.run(b)?.summary?.means())
    }

    /// `run mean - baseline mean` for DSC, JA, HD95 and ASD.
    pub fn improvement(&self, name: &str) -> Option<[f64; 4]> {
        let base = self.baseline_means()?;
        let own = self.run(name)?.summary?.means();
        Some([0, 1, 2, 3].map(|k| own[k] - base[k]))
    }

    /// Checks `better`'s mean DSC is at least `worse`'s. If the gap lies
    /// within one pooled standard deviation the check only requires the
    /// regression to be at most `tolerance`.
    pub fn ordering(&self, better: &str, worse: &str, tolerance: f64) -> Option<OrderingCheck> {
        let a = self.run(better)?.summary?.dsc;
        let b = self.run(worse)?.summary?.dsc;
        let dof = (a.n + b.n).saturating_sub(2);
        let pooled_std = if dof > 0 {
            ((a.n.saturating_sub(1) as f64 * a.std.powi(2) + b.n.saturating_sub(1) as f64 * b.std.powi(2)) / dof as f64)
                .sqrt()
        } else {
            0.0
        };
        let diff = a.mean - b.mean;
        let relaxed = diff < 0.0 && -diff <= pooled_std;
        let pass = diff >= 0.0 || (relaxed && -diff <= tolerance);
        Some(OrderingCheck {
            diff,
            pooled_std,
            relaxed,
            tolerance,
            pass,
        })
    }

    pub fn add_note(&mut self, run: &str, note: &str) {
        if let Some(r) = self.runs.iter_mut().find(|r| r.name == run) {
            if !r.note.is_empty() {
                r.note.push_str("; ");
            }
            r.note.push_str(note);
        }
    }

    /// One row per run, in plan order.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TABLE_HEADER}\n");
        for r in &self.runs {
            let ok = r.seeds.len() - r.failed();
            let stats = match &r.summary {
                Some(s) => [s.dsc, s.ja, s.hd95, s.asd]
                    .iter()
                    .map(|st| format!("{},{}", st.mean, st.std))
                    .collect::<Vec<_>>()
                    .join(","),
                None => ",,,,,,,".to_string(),
            };
            let imp = self.improvement(&r.name);
            let imp = (0..4).map(|k| opt(imp.map(|i| i[k]))).collect::<Vec<_>>().join(",");
            writeln!(out, "{},{ok},{},{stats},{imp},{}", r.name, r.failed(), csv_text(&r.note)).unwrap();
        }
        out
    }

    /// Per-seed mean metrics: `run,seed,dsc,ja,hd95,asd,error`.
    pub fn seeds_csv(&self) -> String {
        let mut out = String::from("run,seed,dsc,ja,hd95,asd,error\n");
        for r in &self.runs {
            for s in &r.seeds {
                match &s.outcome {
                    Ok(rep) => {
                        let m = rep.mean;
                        writeln!(out, "{},{},{},{},{},{},", r.name, s.seed, m.dsc, m.ja, m.hd95, m.asd).unwrap();
                    }
                    Err(e) => writeln!(out, "{},{},,,,,{}", r.name, s.seed, csv_text(e)).unwrap(),
                }
            }
        }
        out
    }

    /// Rebuilds the table from `<dir>/<run>/<seed>/report.csv` files. A seed
    /// without a report counts as failed, with the text of `error.txt` when
    /// present.
    pub fn from_dir(plan: &ExperimentPlan, dir: &Path) -> Result<Self> {
        let mut runs = Vec::with_capacity(plan.runs.len());
        for run in &plan.runs {
            let mut seeds = Vec::with_capacity(run.seeds.len());
            for &seed in &run.seeds {
                let seed_dir = dir.join(&run.name).join(seed.to_string());
                let report = seed_dir.join("report.csv");
                let outcome = if report.exists() {
                    Ok(MetricReport::from_csv(&std::fs::read_to_string(&report)?)?)
                } else {
                    let msg = std::fs::read_to_string(seed_dir.join("error.txt"))
                        .unwrap_or_else(|_| "no report written".to_string());
                    Err(msg.trim().to_string())
                };
                seeds.push(SeedResult { seed, outcome });
            }
            runs.push(RunResult::new(&run.name, seeds));
        }
        Ok(Self {
            runs,
            baseline: plan.baseline.clone(),
        })
    }
}
