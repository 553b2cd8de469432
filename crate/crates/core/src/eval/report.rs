use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::annotations::LANDMARK_NAMES;
use crate::error::{Error, Result};
use crate::eval::EvalResult;
use crate::nn::LossHistory;

pub const MAE_HEADER: &str = "landmark,mae_px,n_frames";

/// A labelled horizontal line drawn across a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLine {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportFiles {
    pub mae_csv: Option<PathBuf>,
    pub mae_svg: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
    pub loss_svg: Option<PathBuf>,
}

impl ReportFiles {
    pub fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        [&self.mae_csv, &self.mae_svg, &self.loss_csv, &self.loss_svg]
            .into_iter()
            .flatten()
    }
}

pub fn mae_csv(result: &EvalResult) -> String {
    let mut s = String::from(MAE_HEADER);
    s.push('\n');
    for (name, mae) in LANDMARK_NAMES.iter().zip(result.mae) {
        let _ = writeln!(s, "{name},{mae},{}", result.frames_evaluated);
    }
    s
}

/// Reads a table written by [`mae_csv`]. Test loss and the occlusion count
/// are not stored and come back empty.
pub fn parse_mae_csv(text: &str) -> Result<EvalResult> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAE_HEADER) {
        return Err(Error::Format(format!("expected header {MAE_HEADER:?}")));
    }
    let mut mae = [f64::NAN; 4];
    let mut frames = 0usize;
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: String| Error::Format(format!("mae table line {}: {m}", i + 2));
        let c: Vec<&str> = line.split(',').map(str::trim).collect();
        if c.len() != 3 {
            return Err(bad(format!("expected 3 columns, got {}", c.len())));
        }
        let k = LANDMARK_NAMES
            .iter()
            .position(|&n| n == c[0])
            .ok_or_else(|| bad(format!("unknown landmark {:?}", c[0])))?;
        mae[k] = c[1].parse().map_err(|e| bad(format!("{e}")))?;
        frames = c[2].parse().map_err(|e| bad(format!("{e}")))?;
    }
    if mae.iter().any(|v| v.is_nan()) {
        return Err(Error::Format("mae table must list all four landmarks".into()));
    }
    Ok(EvalResult {
        test_loss: None,
        mae,
        total_mae: mae.iter().sum(),
        frames_evaluated: frames,
        occlusion_excluded: 0,
    })
}

/// Writes whichever of the MAE table, the loss curve and their charts the
/// inputs allow into `dir`.
pub fn emit_report(
    dir: &Path,
    result: Option<&EvalResult>,
    history: Option<&LossHistory>,
    references: &[ReferenceLine],
) -> Result<ReportFiles> {
    if result.is_none() && history.is_none_or(|h| h.records.is_empty()) {
        return Err(Error::Empty("nothing to report".into()));
    }
    fs::create_dir_all(dir)?;
    let mut files = ReportFiles::default();
    if let Some(r) = result {
        let p = dir.join("mae.csv");
        fs::write(&p, mae_csv(r))?;
        files.mae_csv = Some(p);
        let p = dir.join("mae.svg");
        fs::write(&p, mae_svg(r, references))?;
        files.mae_svg = Some(p);
    }
    if let Some(h) = history {
        let p = dir.join("loss_history.csv");
        fs::write(&p, h.to_csv())?;
        files.loss_csv = Some(p);
        let p = dir.join("loss.svg");
        fs::write(&p, loss_svg(h))?;
        files.loss_svg = Some(p);
    }
    Ok(files)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_max(v: f64) -> f64 {
    if !(v > 0.0) || !v.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|&c| c >= v)
        .unwrap_or(10.0 * mag)
}

fn y_axis(s: &mut String, max: f64, to_y: impl Fn(f64) -> f64, fmt: impl Fn(f64) -> String) {
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        H - BOTTOM
    );
    for i in 0..=4 {
        let v = max * i as f64 / 4.0;
        let y = to_y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT,
            W - RIGHT,
            LEFT - 6.0,
            y + 4.0,
            fmt(v)
        );
    }
}

/// Bar chart of per-landmark MAE with optional reference lines.
pub fn mae_svg(result: &EvalResult, references: &[ReferenceLine]) -> String {
    let top = result
        .mae
        .iter()
        .copied()
        .chain(references.iter().map(|r| r.value))
        .fold(0.0, f64::max);
    let max = nice_max(top);
    let plot_h = H - TOP - BOTTOM;
    let to_y = |v: f64| H - BOTTOM - v / max * plot_h;
    let mut s = svg_open(&format!(
        "MAE per landmark (native px), total {:.2}, {} frames",
        result.total_mae, result.frames_evaluated
    ));
    y_axis(&mut s, max, to_y, |v| format!("{v:.1}"));
    let slot = (W - LEFT - RIGHT) / 4.0;
    for (k, (name, mae)) in LANDMARK_NAMES.iter().zip(result.mae).enumerate() {
        let x = LEFT + slot * k as f64 + slot * 0.2;
        let y = to_y(mae);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#4472c4"><title>{name}: {mae}</title></rect>"##,
            slot * 0.6,
            H - BOTTOM - y
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{name}</text>"#,
            x + slot * 0.3,
            H - BOTTOM + 18.0
        );
    }
    for r in references {
        let y = to_y(r.value);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#c00" stroke-dasharray="6 4"/><text x="{}" y="{:.2}" text-anchor="end" fill="#c00">{}</text>"##,
            W - RIGHT,
            W - RIGHT - 4.0,
            y - 4.0,
            escape(&format!("{} ({})", r.label, r.value))
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Train/test loss curves on a log10 scale.
pub fn loss_svg(history: &LossHistory) -> String {
    let train: Vec<(usize, f64)> = history.train_losses().filter(|p| p.1 > 0.0).collect();
    let test: Vec<(usize, f64)> = history.test_losses().filter(|p| p.1 > 0.0).collect();
    let all = || train.iter().chain(&test);
    let mut s = svg_open("Loss history");
    if all().next().is_none() {
        s.push_str("</svg>\n");
        return s;
    }
    let max_it = all().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let lo = all().map(|p| p.1.log10()).fold(f64::INFINITY, f64::min).floor();
    let hi = all().map(|p| p.1.log10()).fold(f64::NEG_INFINITY, f64::max).ceil();
    let hi = if hi <= lo { lo + 1.0 } else { hi };
    let plot_h = H - TOP - BOTTOM;
    let plot_w = W - LEFT - RIGHT;
    let to_x = |it: usize| LEFT + it as f64 / max_it * plot_w;
    let to_y = |v: f64| H - BOTTOM - (v - lo) / (hi - lo) * plot_h;
    y_axis(&mut s, hi - lo, |v| to_y(v + lo), |v| format!("1e{}", (v + lo).round()));
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><text x="{1}" y="{2}" text-anchor="end">iteration (max {max_it})</text>"#,
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM + 30.0
    );
    for (pts, colour, label, dy) in [(&train, "#4472c4", "train", 0.0), (&test, "#ed7d31", "test", 16.0)] {
        if pts.is_empty() {
            continue;
        }
        let path: Vec<String> = pts
            .iter()
            .map(|&(it, v)| format!("{:.2},{:.2}", to_x(it), to_y(v.log10())))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{colour}">{label}</text>"#,
            LEFT + 10.0,
            TOP + 14.0 + dy
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LossRecord;

    fn result() -> EvalResult {
        EvalResult {
            test_loss: None,
            mae: [1.0, 2.0, 3.0, 4.0],
            total_mae: 10.0,
            frames_evaluated: 7,
            occlusion_excluded: 0,
        }
    }

    #[test]
    fn mae_csv_has_row_per_landmark() {
        let csv = mae_csv(&result());
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], MAE_HEADER);
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "head,1,7");
    }

    #[test]
    fn emit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let h = LossHistory {
            records: (1..=3)
                .map(|i| LossRecord {
                    iteration: i * 10,
                    train_loss: Some(100.0 / i as f64),
                    test_loss: (i == 3).then_some(50.0),
                })
                .collect(),
        };
        let refs = [ReferenceLine {
            label: "B".into(),
            value: 36.5,
        }];
        let files = emit_report(dir.path(), Some(&result()), Some(&h), &refs).unwrap();
        assert_eq!(files.paths().count(), 4);
        let curve = fs::read_to_string(files.loss_csv.unwrap()).unwrap();
        assert_eq!(curve.lines().count(), 4);
        let svg = fs::read_to_string(files.mae_svg.unwrap()).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_report_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(dir.path(), None, None, &[]).is_err());
    }
}
