//! Hand-written SVG plots. Coordinates are printed with two decimals so the
//! output is byte-stable.

use std::fmt::Write as _;
use std::path::Path;

use super::table::ResultTable;
use crate::error::{config_err, Result};
use crate::trainer::TrainingLog;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

fn header(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn plot_bottom() -> f64 {
    HEIGHT - BOTTOM
}

fn plot_right() -> f64 {
    WIDTH - RIGHT
}

/// Linear map from `[lo, hi]` onto `[a, b]`; a degenerate range maps to the
/// midpoint.
fn scale(v: f64, (lo, hi): (f64, f64), (a, b): (f64, f64)) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

fn axis_ticks(out: &mut String, range: (f64, f64), x: f64, anchor: &str, dx: f64) {
    for k in 0..=4 {
        let v = range.0 + (range.1 - range.0) * k as f64 / 4.0;
        let y = scale(v, range, (plot_bottom(), TOP));
        writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="{anchor}">{}</text>"#,
            x - dx.signum() * 4.0,
            x + dx,
            y + 4.0,
            tick_label(v)
        )
        .unwrap();
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Iteration on x, loss terms on the left axis, validation DSC (0..1) on
/// the right axis. Only series with at least one value are drawn.
pub fn learning_curve_svg(log: &TrainingLog) -> Result<String> {
    if log.rows.is_empty() {
        return config_err("learning curve needs at least one logged iteration");
    }
    type Getter = fn(&crate::trainer::LogRow) -> Option<f64>;
    let losses: [(&str, Getter); 5] = [
        ("l_seg", |r| Some(r.l_seg)),
        ("l_adv", |r| r.l_adv),
        ("l_fm", |r| r.l_fm),
        ("l_ipm", |r| r.l_ipm),
        ("l_disc", |r| r.l_disc),
    ];
    let series: Vec<(&str, Vec<(f64, f64)>)> = losses
        .iter()
        .map(|(name, get)| {
            let pts = log
                .rows
                .iter()
                .filter_map(|r| get(r).filter(|v| v.is_finite()).map(|v| (r.iter as f64, v)))
                .collect();
            (*name, pts)
        })
        .filter(|(_, pts): &(&str, Vec<(f64, f64)>)| !pts.is_empty())
        .collect();
    let val: Vec<(f64, f64)> = log.val_curve().into_iter().map(|(i, v)| (i as f64, v)).collect();

    let x_range = (log.rows[0].iter as f64, log.rows[log.rows.len() - 1].iter as f64);
    let all = series.iter().flat_map(|(_, p)| p.iter().map(|&(_, v)| v));
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let loss_range = if lo.is_finite() { (lo.min(0.0), hi.max(lo.min(0.0) + 1e-12)) } else { (0.0, 1.0) };
    let dsc_range = (0.0, 1.0);

    let mut out = String::new();
    header(&mut out, "training curves");
    writeln!(
        out,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        plot_right() - LEFT,
        plot_bottom() - TOP
    )
    .unwrap();
    axis_ticks(&mut out, loss_range, LEFT, "end", -8.0);
    axis_ticks(&mut out, dsc_range, plot_right(), "start", 8.0);
    writeln!(
        out,
        r#"<text x="{LEFT:.2}" y="{:.2}" text-anchor="middle">{}</text><text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text><text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        plot_bottom() + 18.0,
        x_range.0,
        plot_right(),
        plot_bottom() + 18.0,
        x_range.1,
        (LEFT + plot_right()) / 2.0,
        plot_bottom() + 36.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">loss</text><text x="{:.2}" y="{:.2}" transform="rotate(90 {:.2} {:.2})" text-anchor="middle">val DSC</text>"#,
        (TOP + plot_bottom()) / 2.0,
        (TOP + plot_bottom()) / 2.0,
        WIDTH - 16.0,
        (TOP + plot_bottom()) / 2.0,
        WIDTH - 16.0,
        (TOP + plot_bottom()) / 2.0
    )
    .unwrap();

    let mut legend = Vec::new();
    for (k, (name, pts)) in series.iter().enumerate() {
        polyline(&mut out, pts, x_range, loss_range, COLORS[k % COLORS.len()], name, "");
        legend.push((name.to_string(), COLORS[k % COLORS.len()], ""));
    }
    if !val.is_empty() {
        let color = COLORS[series.len() % COLORS.len()];
        polyline(&mut out, &val, x_range, dsc_range, color, "val_dsc", r#" stroke-dasharray="6 3""#);
        legend.push(("val_dsc".to_string(), color, r#" stroke-dasharray="6 3""#));
    }
    for (k, (name, color, dash)) in legend.iter().enumerate() {
        let x = LEFT + 10.0 + 95.0 * k as f64;
        let y = HEIGHT - 12.0;
        writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.2}" y="{y:.2}">{name}</text>"#,
            y - 4.0,
            x + 20.0,
            y - 4.0,
            x + 24.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn polyline(
    out: &mut String,
    pts: &[(f64, f64)],
    x_range: (f64, f64),
    y_range: (f64, f64),
    color: &str,
    name: &str,
    extra: &str,
) {
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| {
            format!(
                "{:.2},{:.2}",
                scale(x, x_range, (LEFT, plot_right())),
                scale(y, y_range, (plot_bottom(), TOP))
            )
        })
        .collect();
    writeln!(
        out,
        r#"<polyline class="series" data-name="{name}" fill="none" stroke="{color}" stroke-width="1.5"{extra} points="{}"/>"#,
        coords.join(" ")
    )
    .unwrap();
}

pub fn emit_learning_curve(log: &TrainingLog, path: &Path) -> Result<()> {
    let svg = learning_curve_svg(log)?;
    std::fs::write(path, svg)?;
    Ok(())
}

/// Mean DSC and Jaccard per run with one-standard-deviation whiskers.
pub fn ablation_svg(table: &ResultTable) -> String {
    let mut out = String::new();
    header(&mut out, "mean test overlap per run");
    let n = table.runs.len().max(1) as f64;
    let group = (plot_right() - LEFT) / n;
    let bar = group * 0.3;
    let y = |v: f64| scale(v.clamp(0.0, 1.0), (0.0, 1.0), (plot_bottom(), TOP));
    axis_ticks(&mut out, (0.0, 1.0), LEFT, "end", -8.0);
    writeln!(
        out,
        r#"<line x1="{LEFT:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        plot_bottom(),
        plot_right(),
        plot_bottom()
    )
    .unwrap();
    for (k, run) in table.runs.iter().enumerate() {
        let x0 = LEFT + group * k as f64 + group * 0.2;
        match &run.summary {
            Some(s) => {
                for (j, (stat, color)) in [(s.dsc, COLORS[0]), (s.ja, COLORS[2])].into_iter().enumerate() {
                    let x = x0 + bar * j as f64;
                    let top = y(stat.mean);
                    writeln!(
                        out,
                        r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                        bar * 0.9,
                        plot_bottom() - top
                    )
                    .unwrap();
                    let cx = x + bar * 0.45;
                    writeln!(
                        out,
                        r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                        y(stat.mean - stat.std),
                        y(stat.mean + stat.std)
                    )
                    .unwrap();
                }
            }
            None => {
                writeln!(
                    out,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">failed</text>"#,
                    x0 + bar,
                    plot_bottom() - 10.0
                )
                .unwrap();
            }
        }
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x0 + bar,
            plot_bottom() + 18.0,
            escape(&run.name)
        )
        .unwrap();
    }
    for (j, (name, color)) in [("DSC", COLORS[0]), ("JA", COLORS[2])].iter().enumerate() {
        let x = LEFT + 10.0 + 80.0 * j as f64;
        writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{color}"/><text x="{:.2}" y="{:.2}">{name}</text>"#,
            HEIGHT - 24.0,
            x + 16.0,
            HEIGHT - 14.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::LogRow;

    fn row(iter: usize, val: Option<f64>) -> LogRow {
        LogRow {
            iter,
            l_seg: 1.0 / iter as f64,
            l_adv: Some(0.7),
            l_fm: None,
            l_ipm: None,
            l_disc: Some(1.3),
            lr_seg: 0.01,
            lr_disc: Some(1e-4),
            val_dsc: val,
        }
    }

    #[test]
    fn empty_log_rejected() {
        assert!(learning_curve_svg(&TrainingLog::default()).is_err());
    }

    #[test]
    fn one_polyline_per_logged_series() {
        let log = TrainingLog {
            rows: vec![row(1, None), row(2, Some(0.5)), row(3, None), row(4, Some(0.7))],
        };
        let svg = learning_curve_svg(&log).unwrap();
        // l_seg, l_adv, l_disc and val_dsc
        assert_eq!(svg.matches(r#"class="series""#).count(), 4);
        assert!(!svg.contains(r#"data-name="l_fm""#));
        assert_eq!(svg, learning_curve_svg(&log).unwrap());
    }
}
