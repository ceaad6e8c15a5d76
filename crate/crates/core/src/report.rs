//! Summary tables and plot data from run records. Never trains.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::{mean_std, RunRecord};
use crate::transfer::FineTunePlan;

/// `"94.59±0.110"`: mean to two decimals, spread to three.
pub fn fmt_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.3}")
}

/// Records sharing a dataset and plan, in order of first appearance.
#[derive(Debug, Clone)]
pub struct PlanGroup<'a> {
    pub dataset: &'a str,
    pub plan: &'a FineTunePlan,
    pub records: Vec<&'a RunRecord>,
}

impl PlanGroup<'_> {
    fn scores(&self, f: impl Fn(&RunRecord) -> Option<f64>) -> Vec<f64> {
        self.records.iter().filter_map(|r| f(r)).collect()
    }

    pub fn val_scores(&self) -> Vec<f64> {
        self.scores(|r| r.final_val_top1.filter(|_| r.succeeded()))
    }

    pub fn test_scores(&self) -> Vec<f64> {
        self.scores(|r| r.final_test_top1.filter(|_| r.succeeded()))
    }
}

pub fn group_records(records: &[RunRecord]) -> Vec<PlanGroup<'_>> {
    let mut index: BTreeMap<(&str, u64), usize> = BTreeMap::new();
    let mut groups: Vec<PlanGroup<'_>> = Vec::new();
    for r in records {
        let key = (r.dataset.as_str(), r.plan.fingerprint());
        let at = *index.entry(key).or_insert_with(|| {
            groups.push(PlanGroup {
                dataset: &r.dataset,
                plan: &r.plan,
                records: Vec::new(),
            });
            groups.len() - 1
        });
        groups[at].records.push(r);
    }
    groups
}

fn cell(scores: &[f64]) -> String {
    if scores.is_empty() {
        String::new()
    } else {
        let (m, s) = mean_std(scores);
        fmt_mean_std(m, s)
    }
}

const TABLE_HEADER: [&str; 13] = [
    "dataset",
    "reinit_count",
    "high_lr",
    "low_lr",
    "low_layer_count",
    "fc_lr",
    "l2sp_layer_count",
    "alpha",
    "beta",
    "runs",
    "diverged",
    "val_top1",
    "test_top1",
];

/// One row per (dataset, plan).
pub fn summary_table(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE_HEADER).map_err(csv_err)?;
    for g in group_records(records) {
        let p = g.plan;
        let diverged = g.records.iter().filter(|r| !r.succeeded()).count();
        w.write_record([
            g.dataset.to_string(),
            p.reinit_count.to_string(),
            p.high_lr.to_string(),
            p.low_lr.to_string(),
            p.low_layer_count.to_string(),
            p.fc_lr.map(|v| v.to_string()).unwrap_or_default(),
            p.l2sp_layer_count.to_string(),
            p.alpha.to_string(),
            p.beta.to_string(),
            g.records.len().to_string(),
            diverged.to_string(),
            cell(&g.val_scores()),
            cell(&g.test_scores()),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Curve data: one row per (dataset, series, x) with the mean validation top-1
/// over every record at that point.
fn curve(
    records: &[RunRecord],
    x_name: &str,
    series_name: &str,
    x: impl Fn(&FineTunePlan) -> f64,
    series: impl Fn(&FineTunePlan) -> String,
) -> Result<String> {
    let mut points: BTreeMap<(String, String), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in records {
        let Some(v) = r.final_val_top1.filter(|_| r.succeeded()) else {
            continue;
        };
        points
            .entry((r.dataset.clone(), series(&r.plan)))
            .or_default()
            .entry(x(&r.plan).to_bits())
            .or_default()
            .push(v);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", series_name, x_name, "val_top1_mean", "val_top1_std", "n"])
        .map_err(csv_err)?;
    for ((dataset, s), xs) in &points {
        let mut xs: Vec<(f64, &Vec<f64>)> = xs.iter().map(|(b, v)| (f64::from_bits(*b), v)).collect();
        xs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (xv, vals) in xs {
            let (m, sd) = mean_std(vals);
            w.write_record([
                dataset.clone(),
                s.clone(),
                xv.to_string(),
                m.to_string(),
                sd.to_string(),
                vals.len().to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Validation top-1 against the top learning rate, one series per
/// re-initialization depth.
pub fn lr_curve(records: &[RunRecord]) -> Result<String> {
    curve(records, "high_lr", "reinit_count", |p| p.high_lr, |p| p.reinit_count.to_string())
}

/// Validation top-1 against the number of anchored blocks.
pub fn l2sp_curve(records: &[RunRecord]) -> Result<String> {
    curve(
        records,
        "l2sp_layer_count",
        "reinit_count",
        |p| p.l2sp_layer_count as f64,
        |p| p.reinit_count.to_string(),
    )
}

/// Validation top-1 against the number of slow lower blocks.
pub fn low_layer_curve(records: &[RunRecord]) -> Result<String> {
    curve(
        records,
        "low_layer_count",
        "high_lr",
        |p| p.low_layer_count as f64,
        |p| p.high_lr.to_string(),
    )
}

/// Writes the table and every curve under `out_dir`.
pub fn write_report(records: &[RunRecord], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let files = [
        ("summary.csv", summary_table(records)?),
        ("curve_lr.csv", lr_curve(records)?),
        ("curve_l2sp_layers.csv", l2sp_curve(records)?),
        ("curve_low_layers.csv", low_layer_curve(records)?),
    ];
    let mut paths = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
