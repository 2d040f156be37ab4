//! CSV and SVG output.
//!
//! RMS CSV columns are `t,rms_m,n_runs`, with a leading `case` column when
//! more than one case is written. Run CSV columns are
//! `t,truth_lat,truth_lon,est_lat,est_lon,err_m`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ErrorSample, HarnessError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsRow {
    pub t: f64,
    pub rms_m: f64,
    pub n_runs: usize,
}

#[derive(Serialize, Deserialize)]
struct CaseRow {
    case: String,
    t: f64,
    rms_m: f64,
    n_runs: usize,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, HarnessError> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

pub fn write_rms_csv(path: &Path, cases: &[(String, Vec<RmsRow>)]) -> Result<(), HarnessError> {
    let mut w = writer(path)?;
    if let [(_, rows)] = cases {
        for r in rows {
            w.serialize(r).map_err(|e| io_err(path, e))?;
        }
    } else {
        for (case, rows) in cases {
            for r in rows {
                let row = CaseRow { case: case.clone(), t: r.t, rms_m: r.rms_m, n_runs: r.n_runs };
                w.serialize(row).map_err(|e| io_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read an RMS CSV back, grouped by case (an empty name for single-case files).
pub fn read_rms_csv(path: &Path) -> Result<Vec<(String, Vec<RmsRow>)>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = r.headers().map_err(|e| io_err(path, e))?.clone();
    let mut out: Vec<(String, Vec<RmsRow>)> = Vec::new();
    let mut push = |case: String, row: RmsRow| match out.last_mut() {
        Some((name, rows)) if *name == case => rows.push(row),
        _ => out.push((case, vec![row])),
    };
    if headers.iter().next() == Some("case") {
        for rec in r.deserialize::<CaseRow>() {
            let c = rec.map_err(|e| io_err(path, e))?;
            push(c.case, RmsRow { t: c.t, rms_m: c.rms_m, n_runs: c.n_runs });
        }
    } else {
        for rec in r.deserialize::<RmsRow>() {
            push(String::new(), rec.map_err(|e| io_err(path, e))?);
        }
    }
    Ok(out)
}

pub fn write_run_csv(path: &Path, samples: &[ErrorSample]) -> Result<(), HarnessError> {
    let mut w = writer(path)?;
    for s in samples {
        w.serialize(s).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line plot of RMS error against time in hours, one polyline per case.
pub fn write_svg(path: &Path, cases: &[(String, Vec<RmsRow>)]) -> Result<(), HarnessError> {
    let (w, h, left, right, top, bottom) = (800.0, 480.0, 70.0, 20.0, 20.0, 50.0);
    let t_max = cases.iter().flat_map(|(_, r)| r.iter().map(|x| x.t)).fold(0.0, f64::max).max(1e-9);
    let y_max = cases.iter().flat_map(|(_, r)| r.iter().map(|x| x.rms_m)).fold(0.0, f64::max).max(1e-9) * 1.05;
    let x = |t: f64| left + (w - left - right) * t / t_max;
    let y = |v: f64| h - bottom - (h - top - bottom) * v / y_max;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{:.0}</text>"#,
            left - 6.0,
            y(v) + 4.0,
            v
        );
    }
    let hours = t_max / 3600.0;
    for i in 0..=4 {
        let t = t_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">{:.2}</text>"#,
            x(t),
            h - bottom + 16.0,
            hours * i as f64 / 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">time (h)</text>"#,
        (left + w - right) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">RMS position error (m)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (name, rows)) in cases.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let points: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", x(r.t), y(r.rms_m))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 16.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-size="12" fill="{colour}">{}</text>"#,
            left + 12.0,
            escape(if name.is_empty() { "rms" } else { name })
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s).map_err(|e| io_err(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
