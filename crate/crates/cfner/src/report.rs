//! JSONL report files, CSV step curves and the text summary table.
//!
//! A report file holds one record per (seed, step) plus a terminal
//! aggregate record embedding the full configuration, the seed list and
//! the crate version, so a run is reproducible from the report alone.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CfnerError, Result};
use crate::protocol::{aggregate, ExperimentReport};

pub const CRATE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Step(StepRecord),
    Aggregate(AggregateRecord),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub baseline: String,
    pub seed: u64,
    pub step: usize,
    pub recognized: Vec<String>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_type: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub baseline: String,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub mean_micro_f1: f64,
    pub std_micro_f1: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    pub version: String,
    /// F1 is span-level with exact (type, start, end) matching; per-type
    /// 0/0 cases count as 0 in the macro average.
    pub f1_convention: String,
    pub config: ExperimentConfig,
}

pub fn to_records(report: &ExperimentReport) -> Vec<ReportRecord> {
    let baseline = report.config.baseline.name().to_string();
    let mut records = Vec::new();
    for seed in &report.seeds {
        for step in &seed.steps {
            records.push(ReportRecord::Step(StepRecord {
                baseline: baseline.clone(),
                seed: seed.seed,
                step: step.step,
                recognized: step.recognized.clone(),
                micro_f1: step.micro_f1,
                macro_f1: step.macro_f1,
                per_type: step.per_type.clone(),
            }));
        }
    }
    records.push(ReportRecord::Aggregate(AggregateRecord {
        baseline,
        seeds: report.config.seeds.clone(),
        failed_seeds: report
            .seeds
            .iter()
            .filter(|s| s.failure.is_some())
            .map(|s| s.seed)
            .collect(),
        mean_micro_f1: report.mean_micro_f1,
        std_micro_f1: report.std_micro_f1,
        mean_macro_f1: report.mean_macro_f1,
        std_macro_f1: report.std_macro_f1,
        version: CRATE_VERSION.to_string(),
        f1_convention: "span-level exact match; macro per-type 0/0 = 0".to_string(),
        config: report.config.clone(),
    }));
    records
}

pub fn write_jsonl<W: Write>(records: &[ReportRecord], w: &mut W) -> Result<()> {
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ReportRecord>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ReportRecord = serde_json::from_str(&line).map_err(|e| CfnerError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

/// Per-step cross-seed micro-F1 curve: (step, mean, std).
pub fn step_curve(records: &[ReportRecord]) -> Vec<(usize, f64, f64)> {
    let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let ReportRecord::Step(s) = r {
            by_step.entry(s.step).or_default().push(s.micro_f1);
        }
    }
    by_step
        .into_iter()
        .map(|(step, vals)| {
            let (m, s) = aggregate(&vals);
            (step, m, s)
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(curve: &[(usize, f64, f64)], w: &mut W) -> Result<()> {
    writeln!(w, "step,mean_micro_f1,std_micro_f1")?;
    for (step, m, s) in curve {
        writeln!(w, "{step},{m},{s}")?;
    }
    Ok(())
}

/// Merged curve over several reports, keyed by (step, baseline).
pub fn write_merged_curve_csv<W: Write>(
    sets: &[(String, Vec<(usize, f64, f64)>)],
    w: &mut W,
) -> Result<()> {
    writeln!(w, "step,baseline,mean_micro_f1,std_micro_f1")?;
    let max_step = sets
        .iter()
        .flat_map(|(_, c)| c.iter().map(|(s, _, _)| *s))
        .max()
        .unwrap_or(0);
    for step in 0..=max_step {
        for (name, curve) in sets {
            if let Some((_, m, s)) = curve.iter().find(|(st, _, _)| *st == step) {
                writeln!(w, "{step},{name},{m},{s}")?;
            }
        }
    }
    Ok(())
}

/// Text table: one mean +/- std row per method.
pub fn render_table(records_per_run: &[Vec<ReportRecord>]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>8} {:>18} {:>18}\n",
        "method", "seeds", "micro-F1 (%)", "macro-F1 (%)"
    ));
    for records in records_per_run {
        for r in records {
            if let ReportRecord::Aggregate(a) = r {
                out.push_str(&format!(
                    "{:<16} {:>8} {:>10.2} ± {:.2} {:>10.2} ± {:.2}\n",
                    a.baseline,
                    a.seeds.len(),
                    100.0 * a.mean_micro_f1,
                    100.0 * a.std_micro_f1,
                    100.0 * a.mean_macro_f1,
                    100.0 * a.std_macro_f1,
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{SeedOutcome, StepResult};

    fn fake_report() -> ExperimentReport {
        let step = |i: usize, f1: f64| StepResult {
            step: i,
            recognized: vec!["A".into()],
            micro_f1: f1,
            macro_f1: f1,
            per_type: vec![("A".into(), f1)],
            wall_time_s: 1.0,
        };
        ExperimentReport {
            config: ExperimentConfig::default(),
            seeds: vec![SeedOutcome {
                seed: 1,
                steps: vec![step(0, 0.5), step(1, 0.7)],
                diagnostics: vec![],
                failure: None,
            }],
            mean_micro_f1: 0.6,
            std_micro_f1: 0.0,
            mean_macro_f1: 0.6,
            std_macro_f1: 0.0,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let records = to_records(&fake_report());
        let mut buf = Vec::new();
        write_jsonl(&records, &mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(&path, &buf).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), records.len());
        assert!(matches!(back.last(), Some(ReportRecord::Aggregate(_))));
    }

    #[test]
    fn aggregate_matches_raw_records() {
        let records = to_records(&fake_report());
        let steps: Vec<f64> = records
            .iter()
            .filter_map(|r| match r {
                ReportRecord::Step(s) => Some(s.micro_f1),
                _ => None,
            })
            .collect();
        let recomputed = steps.iter().sum::<f64>() / steps.len() as f64;
        if let Some(ReportRecord::Aggregate(a)) = records.last() {
            assert!((a.mean_micro_f1 - recomputed).abs() < 1e-12);
        } else {
            panic!("missing aggregate record");
        }
    }

    #[test]
    fn curve_and_table_render() {
        let records = to_records(&fake_report());
        let curve = step_curve(&records);
        assert_eq!(curve.len(), 2);
        let mut buf = Vec::new();
        write_curve_csv(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,mean_micro_f1,std_micro_f1"));
        let table = render_table(&[records]);
        assert!(table.contains("cfner"));
    }
}
