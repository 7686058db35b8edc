use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::confusion::Metrics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub category: String,
    pub video: String,
    /// `None` for a video without scored pixels; it is left out of the means.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub videos: usize,
    pub metrics: Metrics,
}

/// One method run: per-category means and their overall mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub method: String,
    pub categories: Vec<CategoryRow>,
    pub overall: Metrics,
}

/// Component-wise arithmetic mean.
pub fn mean_metrics(ms: &[Metrics]) -> Result<Metrics> {
    if ms.is_empty() {
        return Err(Error::Empty("mean_metrics: nothing to average"));
    }
    let n = ms.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| ms.iter().map(f).sum::<f64>() / n;
    Ok(Metrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f_measure: mean(|m| m.f_measure),
        pwc: mean(|m| m.pwc),
    })
}

/// Category metric = mean over its videos; overall = mean over categories.
/// Categories are listed in name order.
pub fn aggregate(method: &str, videos: &[VideoResult]) -> Result<SummaryTable> {
    let mut by_cat: BTreeMap<&str, Vec<Metrics>> = BTreeMap::new();
    for v in videos {
        let entry = by_cat.entry(v.category.as_str()).or_default();
        if let Some(m) = v.metrics {
            entry.push(m);
        }
    }
    if by_cat.is_empty() {
        return Err(Error::Empty("aggregate: no videos"));
    }
    let mut categories = Vec::with_capacity(by_cat.len());
    for (name, ms) in by_cat {
        if ms.is_empty() {
            return Err(Error::invalid(alloc::format!(
                "category {name} has no video with scored pixels"
            )));
        }
        categories.push(CategoryRow {
            category: name.into(),
            videos: ms.len(),
            metrics: mean_metrics(&ms)?,
        });
    }
    let overall = mean_metrics(&categories.iter().map(|c| c.metrics).collect::<Vec<_>>())?;
    Ok(SummaryTable {
        method: method.into(),
        categories,
        overall,
    })
}

/// F-measure table: one row per method run, one column per category, then
/// `overall`. A category missing from a run leaves its cell empty.
pub fn summary_csv(tables: &[SummaryTable]) -> String {
    let mut cols: Vec<&str> = tables
        .iter()
        .flat_map(|t| t.categories.iter().map(|c| c.category.as_str()))
        .collect();
    cols.sort_unstable();
    cols.dedup();
    let mut out = String::from("method");
    for c in &cols {
        out.push(',');
        out.push_str(&csv_field(c));
    }
    out.push_str(",overall\n");
    for t in tables {
        out.push_str(&csv_field(&t.method));
        for c in &cols {
            out.push(',');
            if let Some(row) = t.categories.iter().find(|r| r.category == *c) {
                let _ = write!(out, "{:.6}", row.metrics.f_measure);
            }
        }
        let _ = writeln!(out, ",{:.6}", t.overall.f_measure);
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        alloc::format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.into()
    }
}
