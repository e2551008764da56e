use std::fmt::Write as _;

pub const LOG_HEADER: &str = "iter,l_seg,l_adv,l_fm,l_ipm,l_disc,lr_seg,lr_disc,val_dsc";

/// One training iteration. Absent terms are left empty in the CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub l_seg: f64,
    pub l_adv: Option<f64>,
    pub l_fm: Option<f64>,
    pub l_ipm: Option<f64>,
    pub l_disc: Option<f64>,
    pub lr_seg: f64,
    pub lr_disc: Option<f64>,
    pub val_dsc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

/// Nine significant digits.
fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.8e}")).unwrap_or_default()
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.iter,
                cell(Some(r.l_seg)),
                cell(r.l_adv),
                cell(r.l_fm),
                cell(r.l_ipm),
                cell(r.l_disc),
                cell(Some(r.lr_seg)),
                cell(r.lr_disc),
                cell(r.val_dsc)
            )
            .unwrap();
        }
        out
    }

    /// `(iter, val_dsc)` for every evaluated row.
    pub fn val_curve(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter_map(|r| r.val_dsc.map(|v| (r.iter, v))).collect()
    }
}
