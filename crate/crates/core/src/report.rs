//! Plain-text and CSV rendering of an experiment bundle.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::stats::StatRecord;

pub const INDEX_FILE: &str = "eval/index.json";

/// Which files a bundle holds, in presentation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleIndex {
    pub k: usize,
    pub variants: Vec<String>,
    /// File names under `stats/`.
    pub stats: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub index: BundleIndex,
    pub reports: Vec<EvalReport>,
    pub stats: Vec<StatRecord>,
}

impl Bundle {
    /// Read a bundle directory; every missing file is named in the error.
    pub fn load(dir: &Path) -> Result<Bundle> {
        let index_path = dir.join(INDEX_FILE);
        if !index_path.is_file() {
            return Err(missing(&[index_path]));
        }
        let index: BundleIndex = serde_json::from_slice(&fs::read(&index_path)?)?;
        let report_paths: Vec<PathBuf> = index
            .variants
            .iter()
            .map(|v| dir.join("eval").join(format!("{v}.json")))
            .collect();
        let stat_paths: Vec<PathBuf> = index
            .stats
            .iter()
            .map(|s| dir.join("stats").join(s))
            .collect();
        let absent: Vec<PathBuf> = report_paths
            .iter()
            .chain(&stat_paths)
            .filter(|p| !p.is_file())
            .cloned()
            .collect();
        if !absent.is_empty() {
            return Err(missing(&absent));
        }
        let reports = report_paths
            .iter()
            .map(|p| Ok(serde_json::from_slice(&fs::read(p)?)?))
            .collect::<Result<Vec<EvalReport>>>()?;
        let mut stats = Vec::new();
        for p in &stat_paths {
            let records: Vec<StatRecord> = serde_json::from_slice(&fs::read(p)?)?;
            stats.extend(records);
        }
        Ok(Bundle {
            index,
            reports,
            stats,
        })
    }
}

fn missing(paths: &[PathBuf]) -> Error {
    let list = paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ");
    Error::Io(io::Error::new(
        io::ErrorKind::NotFound,
        format!("missing bundle files: {list}"),
    ))
}

/// Four decimals, the precision of the summary tables.
pub fn fmt4(x: f64) -> String {
    let s = format!("{x:.4}");
    // avoid "-0.0000" for tiny negatives
    if s.trim_start_matches('-')
        .chars()
        .all(|c| c == '0' || c == '.')
    {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn fmt_stat(x: Option<f64>) -> String {
    x.map_or_else(|| "inf".to_string(), |v| format!("{v:.3}"))
}

pub fn render_text(bundle: &Bundle) -> String {
    let k = bundle.index.k;
    let name_w = bundle
        .reports
        .iter()
        .map(|r| r.variant.len())
        .chain([7])
        .max()
        .unwrap_or(7);
    let desc_w = bundle
        .reports
        .iter()
        .map(|r| r.description.len())
        .chain([5])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let ndcg = format!("NDCG@{k}");
    let _ = writeln!(
        out,
        "{:<name_w$}  {:<desc_w$}  {:>8}  {:>8}  {:>6}  {:>10}",
        "variant", "model", ndcg, "std", "folds", "params"
    );
    for r in &bundle.reports {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<desc_w$}  {:>8}  {:>8}  {:>6}  {:>10}",
            r.variant,
            r.description,
            fmt4(r.mean),
            fmt4(r.std),
            r.folds.len(),
            r.param_count
        );
    }

    for (test, title, stat) in [
        ("paired-t", "Paired t-tests", "t"),
        ("tukey-hsd", "Tukey HSD", "q"),
    ] {
        let rows: Vec<&StatRecord> = bundle.stats.iter().filter(|s| s.test == test).collect();
        if rows.is_empty() {
            continue;
        }
        let pair_w = rows
            .iter()
            .map(|s| s.pair.0.len() + s.pair.1.len() + 4)
            .chain([4])
            .max()
            .unwrap_or(4);
        let _ = writeln!(out, "\n{title}");
        let _ = writeln!(
            out,
            "{:<pair_w$}  {:>9}  {:>5}  {:>6}  flags",
            "pair", stat, "df", "p"
        );
        for s in rows {
            let pair = format!("{} vs {}", s.pair.0, s.pair.1);
            let line = format!(
                "{:<pair_w$}  {:>9}  {:>5}  {:>6}  {}",
                pair,
                fmt_stat(s.statistic),
                s.df,
                fmt4(s.p),
                s.flags.join(",")
            );
            let _ = writeln!(out, "{}", line.trim_end());
        }
    }
    out
}

pub fn render_csv(bundle: &Bundle) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "variant",
        "model",
        "k",
        "mean_ndcg",
        "std_ndcg",
        "folds",
        "param_count",
        "config_hash",
    ])?;
    for r in &bundle.reports {
        w.write_record([
            r.variant.clone(),
            r.description.clone(),
            r.k.to_string(),
            fmt4(r.mean),
            fmt4(r.std),
            r.folds.len().to_string(),
            r.param_count.to_string(),
            r.config_hash.clone(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
