//! Serialized outputs: sorted-key JSON, plotting CSVs, a bar-chart SVG and
//! the run manifest that accompanies every file the CLI writes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::{ComparisonReport, ExperimentReport};

/// Pretty-printed JSON with object keys in sorted order.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's `Value` map is a BTreeMap unless `preserve_order` is on.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// `trial,method,accuracy`; failed trials have an empty accuracy.
pub fn experiment_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("trial,method,accuracy\n");
    push_rows(&mut out, report);
    out
}

pub fn comparison_csv(cmp: &ComparisonReport) -> String {
    let mut out = String::from("trial,method,accuracy\n");
    for r in &cmp.reports {
        push_rows(&mut out, r);
    }
    out
}

fn push_rows(out: &mut String, report: &ExperimentReport) {
    for t in &report.trials {
        let acc = t.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", t.trial, report.config.method, acc);
    }
}

/// Mean accuracy per method as bars with one-standard-deviation whiskers.
pub fn comparison_svg(cmp: &ComparisonReport) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 50.0;
    const LEFT: f64 = 50.0;
    let plot_h = H - TOP - BOTTOM;
    let slot = (W - LEFT - 20.0) / cmp.summary.len().max(1) as f64;
    let y_of = |acc: f64| TOP + plot_h * (1.0 - acc.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle">Top-1 test accuracy (mean ± std)</text>"#,
        W / 2.0
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{tick:.2}</text>"##,
            W - 20.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for (i, m) in cmp.summary.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let bw = slot * 0.6;
        if let Some(mean) = m.mean_accuracy {
            let y = y_of(mean);
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{y:.2}" width="{bw:.2}" height="{:.2}" fill="#4a7ab5"/>"##,
                cx - bw / 2.0,
                TOP + plot_h - y
            );
            let sd = m.std_accuracy.unwrap_or(0.0);
            let (hi, lo) = (y_of(mean + sd), y_of(mean - sd));
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{hi:.2}" x2="{cx:.2}" y2="{lo:.2}" stroke="black"/><line x1="{:.2}" y1="{hi:.2}" x2="{:.2}" y2="{hi:.2}" stroke="black"/><line x1="{:.2}" y1="{lo:.2}" x2="{:.2}" y2="{lo:.2}" stroke="black"/>"#,
                cx - 6.0,
                cx + 6.0,
                cx - 6.0,
                cx + 6.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{mean:.3}</text>"#,
                hi - 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 18.0,
            m.method
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Describes the command that produced an output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub resolved_config: serde_json::Value,
    pub input_hashes: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub tool_version: String,
    pub rng_algorithm: String,
    pub created_unix_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// `<output>.manifest.json` next to `output`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Writes `contents` to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
