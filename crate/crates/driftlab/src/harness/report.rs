//! Drift report assembly and deterministic rendering.
//!
//! A report is plain data: metric rows, accuracy maps, similarity summaries,
//! and the config hashes of every stage that produced them. Rendering is a
//! pure function of the report, so identical reports yield byte-identical
//! CSV/JSON/SVG files. Wall-clock timings live in a separate sidecar file
//! that is never part of the report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SimilarityDistribution;

use super::svg;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One scalar metric: `family` groups rows into a CSV table and a chart
/// (cdi, kid, fid, diversity, fidelity, ...), `condition` is the x axis
/// (base class, buffer size, concept count), `series` is the model line.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricRow {
    pub family: String,
    pub condition: String,
    pub series: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AccuracyRow {
    pub series: String,
    pub overall: f64,
    pub per_class: BTreeMap<String, f64>,
    /// Largest per-class drop vs the base row, absent on the base row itself.
    pub worst_class: Option<String>,
    pub worst_drop: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SimilarityRow {
    pub condition: String,
    pub series: String,
    pub summary: SimilarityDistribution,
    /// Raw per-request similarities, kept so density plots render from the
    /// report alone.
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DriftReport {
    pub schema_version: u32,
    pub experiment: String,
    /// Hash of the experiment config; doubles as the experiment id.
    pub experiment_id: String,
    /// Stage label -> config hash for every artifact the numbers came from.
    pub provenance: BTreeMap<String, String>,
    pub conditions: Vec<String>,
    pub metrics: Vec<MetricRow>,
    pub accuracy: Vec<AccuracyRow>,
    pub similarity: Vec<SimilarityRow>,
    pub notes: Vec<String>,
}

impl DriftReport {
    pub fn new(experiment: impl Into<String>, experiment_id: impl Into<String>) -> Self {
        DriftReport {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: experiment.into(),
            experiment_id: experiment_id.into(),
            provenance: BTreeMap::new(),
            conditions: Vec::new(),
            metrics: Vec::new(),
            accuracy: Vec::new(),
            similarity: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push_metric(&mut self, family: &str, condition: &str, series: &str, value: f64) {
        self.metrics.push(MetricRow {
            family: family.into(),
            condition: condition.into(),
            series: series.into(),
            value,
        });
    }

    pub fn metric_families(&self) -> Vec<String> {
        let mut fams: Vec<String> = self.metrics.iter().map(|r| r.family.clone()).collect();
        fams.sort();
        fams.dedup();
        fams
    }

    pub fn family_rows(&self, family: &str) -> Vec<&MetricRow> {
        self.metrics.iter().filter(|r| r.family == family).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::config(format!(
                "unknown report format {other:?} (expected csv, json, or svg)"
            ))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Svg => "svg",
        };
        f.write_str(s)
    }
}

/// Shortest round-trip decimal; gives stable CSV cells without precision loss.
fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        format!("{v}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn metric_csv(rows: &[&MetricRow]) -> String {
    let mut sorted: Vec<&&MetricRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.condition, &a.series)
            .cmp(&(&b.condition, &b.series))
    });
    let mut out = String::from("condition,series,value\n");
    for r in sorted {
        out.push_str(&format!(
            "{},{},{}\n",
            csv_field(&r.condition),
            csv_field(&r.series),
            num(r.value)
        ));
    }
    out
}

fn accuracy_csv(rows: &[AccuracyRow]) -> (String, String) {
    let mut overall = String::from("series,overall,worst_class,worst_drop\n");
    let mut per_class = String::from("series,class,accuracy\n");
    for r in rows {
        overall.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&r.series),
            num(r.overall),
            csv_field(r.worst_class.as_deref().unwrap_or("")),
            r.worst_drop.map(num).unwrap_or_default()
        ));
        for (class, acc) in &r.per_class {
            per_class.push_str(&format!(
                "{},{},{}\n",
                csv_field(&r.series),
                csv_field(class),
                num(*acc)
            ));
        }
    }
    (overall, per_class)
}

fn similarity_csv(rows: &[SimilarityRow]) -> String {
    let mut out = String::from("condition,series,n,mean,median,q05,q95,min,max\n");
    for r in rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            csv_field(&r.condition),
            csv_field(&r.series),
            s.n,
            num(s.mean),
            num(s.median),
            num(s.q05),
            num(s.q95),
            num(s.min),
            num(s.max)
        ));
    }
    out
}

/// Writes the requested formats into `dir` and returns the file names
/// produced, in write order. A MANIFEST.txt footer lists the files plus a
/// note per empty section that was skipped.
pub fn render_report(report: &DriftReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<String> = Vec::new();
    let mut footer: Vec<String> = Vec::new();

    let emit = |name: &str, content: String, files: &mut Vec<String>| -> Result<()> {
        std::fs::write(dir.join(name), content)?;
        files.push(name.to_string());
        Ok(())
    };

    for fmt in formats {
        match fmt {
            ReportFormat::Json => {
                emit("report.json", serde_json::to_string_pretty(report)?, &mut files)?;
            }
            ReportFormat::Csv => {
                for family in report.metric_families() {
                    let rows = report.family_rows(&family);
                    emit(&format!("metric_{family}.csv"), metric_csv(&rows), &mut files)?;
                }
                if report.metrics.is_empty() {
                    footer.push("metric tables omitted: no metric rows".into());
                }
                if report.accuracy.is_empty() {
                    footer.push("accuracy tables omitted: no accuracy rows".into());
                } else {
                    let (overall, per_class) = accuracy_csv(&report.accuracy);
                    emit("accuracy_overall.csv", overall, &mut files)?;
                    emit("accuracy_per_class.csv", per_class, &mut files)?;
                }
                if report.similarity.is_empty() {
                    footer.push("similarity table omitted: no similarity rows".into());
                } else {
                    emit("similarity.csv", similarity_csv(&report.similarity), &mut files)?;
                }
            }
            ReportFormat::Svg => {
                if report.similarity.is_empty() {
                    footer.push("similarity density plot omitted: no similarity rows".into());
                } else {
                    emit(
                        "similarity_density.svg",
                        svg::density_chart(
                            "similarity to base generations",
                            &svg::similarity_series(&report.similarity),
                        ),
                        &mut files,
                    )?;
                }
                for family in report.metric_families() {
                    let rows = report.family_rows(&family);
                    let chart = svg::metric_chart(&family, &report.conditions, &rows_as_tuples(&rows));
                    emit(&format!("metric_{family}.svg"), chart, &mut files)?;
                }
                if report.metrics.is_empty() {
                    footer.push("metric charts omitted: no metric rows".into());
                }
                if report.accuracy.is_empty() {
                    footer.push("accuracy chart omitted: no accuracy rows".into());
                } else {
                    emit(
                        "accuracy_per_class.svg",
                        svg::accuracy_bars(&report.accuracy),
                        &mut files,
                    )?;
                }
            }
        }
    }

    let mut manifest = String::new();
    manifest.push_str(&format!(
        "experiment: {}\nid: {}\nschema: {}\n\nfiles:\n",
        report.experiment, report.experiment_id, report.schema_version
    ));
    for f in &files {
        manifest.push_str(&format!("  {f}\n"));
    }
    if !footer.is_empty() {
        manifest.push_str("\nnotes:\n");
        for n in &footer {
            manifest.push_str(&format!("  {n}\n"));
        }
    }
    std::fs::write(dir.join("MANIFEST.txt"), manifest)?;
    files.push("MANIFEST.txt".into());
    Ok(files)
}

fn rows_as_tuples(rows: &[&MetricRow]) -> Vec<(String, String, f64)> {
    rows.iter()
        .map(|r| (r.condition.clone(), r.series.clone(), r.value))
        .collect()
}

pub fn parse_formats(specs: &[String]) -> Result<Vec<ReportFormat>> {
    if specs.is_empty() {
        return Ok(ReportFormat::ALL.to_vec());
    }
    specs.iter().map(|s| s.parse()).collect()
}
