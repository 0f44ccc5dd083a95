//! Rendering of training/metrics logs to CSV and SVG line charts.
//!
//! Input is line-delimited JSON with numeric fields (the train report and
//! curve formats). Output: one CSV with the union of numeric columns, and
//! one SVG per column.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Parsed numeric series keyed by field name.
pub fn parse_jsonl_series(text: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut row_count = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                field: "record".into(),
                msg: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| Error::MalformedRecord {
            line: i + 1,
            field: "record".into(),
            msg: "not a JSON object".into(),
        })?;
        for (k, v) in obj {
            if let Some(x) = v.as_f64() {
                let entry = series.entry(k.clone()).or_insert_with(|| vec![f64::NAN; row_count]);
                entry.push(x);
            }
        }
        row_count += 1;
        for v in series.values_mut() {
            while v.len() < row_count {
                v.push(f64::NAN);
            }
        }
    }
    Ok(series)
}

pub fn series_to_csv(series: &BTreeMap<String, Vec<f64>>) -> String {
    let mut out = String::new();
    let keys: Vec<&String> = series.keys().collect();
    out.push_str(
        &keys
            .iter()
            .map(|k| k.as_str())
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    let rows = series.values().map(Vec::len).max().unwrap_or(0);
    for r in 0..rows {
        let line: Vec<String> = keys
            .iter()
            .map(|k| {
                let v = series[*k].get(r).copied().unwrap_or(f64::NAN);
                if v.is_nan() {
                    String::new()
                } else {
                    v.to_string()
                }
            })
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Minimal SVG line chart of one series.
pub fn render_line_svg(name: &str, values: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    let finite: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, &v)| (i, v))
        .collect();
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
        (lo.min(v), hi.max(v))
    });
    let (lo, hi) = if finite.is_empty() {
        (0.0, 1.0)
    } else if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let n = values.len().max(2) as f64;
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (n - 1.0);
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    let points: Vec<String> = finite
        .iter()
        .map(|&(i, v)| format!("{:.2},{:.2}", x(i), y(v)))
        .collect();
    format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="640" height="360" viewBox="0 0 640 360">"#,
            r#"<rect width="640" height="360" fill="white"/>"#,
            r#"<line x1="48" y1="312" x2="592" y2="312" stroke="black"/>"#,
            r#"<line x1="48" y1="48" x2="48" y2="312" stroke="black"/>"#,
            r#"<text x="320" y="24" text-anchor="middle" font-family="monospace" font-size="14">{name}</text>"#,
            r#"<text x="40" y="52" text-anchor="end" font-family="monospace" font-size="10">{hi:.4}</text>"#,
            r#"<text x="40" y="312" text-anchor="end" font-family="monospace" font-size="10">{lo:.4}</text>"#,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{points}"/>"#,
            r#"</svg>"#
        ),
        name = name,
        hi = hi,
        lo = lo,
        points = points.join(" ")
    )
}

/// Renders a JSONL log to `<stem>.csv` plus one `<stem>_<field>.svg` per
/// numeric field. Returns the written paths.
pub fn plot_log(input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(input)?;
    let series = parse_jsonl_series(&text)?;
    if series.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no numeric fields found in {}",
            input.display()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "log".into());
    let mut written = Vec::new();
    let csv_path = out_dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, series_to_csv(&series))?;
    written.push(csv_path);
    for (name, values) in &series {
        let svg_path = out_dir.join(format!("{stem}_{name}.svg"));
        std::fs::write(&svg_path, render_line_svg(name, values))?;
        written.push(svg_path);
    }
    Ok(written)
}
