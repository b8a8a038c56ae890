use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{aggregate_runs, permutation_test, Aggregate, SampleSet};
use crate::strategies::RunRecord;

/// Seed used for Monte Carlo relabelings in reports.
pub const COMPARISON_SEED: u64 = 0;

/// Every `*.json` run record in `dir` (the summary file is skipped), sorted
/// by seed.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter(|p| p.file_name().is_some_and(|n| n != "summary.json"))
        .collect();
    paths.sort();
    let mut records = paths
        .iter()
        .map(|p| RunRecord::from_json(&fs::read_to_string(p)?))
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(Error::Invalid(format!("no run records in {}", dir.display())));
    }
    records.sort_by_key(|r| r.seed);
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub source: String,
    pub seeds: Vec<u64>,
    pub aggregate: Aggregate,
    /// Against the baseline; `None` for the baseline itself or when either
    /// side has fewer than two seeds.
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub end_task: String,
    pub metric: String,
    pub permutations: usize,
    pub rows: Vec<MethodRow>,
}

impl ComparisonReport {
    /// Fixed-width table: `MEAN_{STD}` test accuracy in percent and the
    /// p-value against the first row, `*` marking p < 0.05.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = if self.permutations == 0 { "exhaustive".to_string() } else { format!("{} permutations", self.permutations) };
        writeln!(s, "end task `{}`, test {} (%), mean with sample std as subscript; p-values: two-sided permutation test vs baseline, {mode}", self.end_task, self.metric).unwrap();
        writeln!(s, "{:<22} {:>6} {:>16} {:>9}", "method", "seeds", "mean_{std}", "p-value").unwrap();
        for r in &self.rows {
            let p = match r.p_value {
                Some(p) => format!("{p:.4}{}", if r.significant { "*" } else { " " }),
                None => "-".to_string(),
            };
            writeln!(s, "{:<22} {:>6} {:>16} {:>9}", r.method, r.seeds.len(), r.aggregate.formatted(), p).unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,source,seeds,mean,std,formatted,p_value,significant\n");
        for r in &self.rows {
            let p = r.p_value.map(|p| format!("{p:?}")).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{:?},{:?},{},{},{}",
                r.method,
                r.source,
                r.seeds.len(),
                r.aggregate.mean,
                r.aggregate.std,
                r.aggregate.formatted(),
                p,
                r.significant
            )
            .unwrap();
        }
        s
    }
}

fn method_name(records: &[RunRecord], dir: &Path) -> String {
    let first = &records[0].strategy;
    if records.iter().all(|r| &r.strategy == first) {
        first.clone()
    } else {
        dir.display().to_string()
    }
}

/// Baseline first, then each candidate with its p-value against the baseline.
pub fn compare_methods(baseline: &Path, candidates: &[PathBuf], permutations: usize) -> Result<ComparisonReport> {
    if candidates.is_empty() {
        return Err(Error::Invalid("at least one candidate directory is needed".into()));
    }
    let base = load_records(baseline)?;
    let end_task = base[0].tasks[0].clone();
    let metric = base[0].metric.clone();
    let base_agg = aggregate_runs(&base)?;
    let base_sample = SampleSet::new("baseline", base_agg.values.clone())?;
    let mut rows = vec![MethodRow {
        method: method_name(&base, baseline),
        source: baseline.display().to_string(),
        seeds: base.iter().map(|r| r.seed).collect(),
        aggregate: base_agg,
        p_value: None,
        significant: false,
    }];
    for dir in candidates {
        let recs = load_records(dir)?;
        if recs.iter().any(|r| r.tasks[0] != end_task || r.metric != metric) {
            return Err(Error::Invalid(format!("{} does not match the baseline task or metric", dir.display())));
        }
        let agg = aggregate_runs(&recs)?;
        let p_value = if recs.len() >= 2 && base.len() >= 2 {
            let sample = SampleSet::new("candidate", agg.values.clone())?;
            Some(permutation_test(&sample, &base_sample, permutations, COMPARISON_SEED)?)
        } else {
            None
        };
        rows.push(MethodRow {
            method: method_name(&recs, dir),
            source: dir.display().to_string(),
            seeds: recs.iter().map(|r| r.seed).collect(),
            aggregate: agg,
            significant: p_value.is_some_and(|p| p < 0.05),
            p_value,
        });
    }
    Ok(ComparisonReport { end_task, metric, permutations, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::TrainerConfig;

    fn write_family(dir: &Path, strategy: &str, accs: &[f64]) {
        for (seed, a) in accs.iter().enumerate() {
            let mut r = RunRecord::new(strategy, vec!["end".into()], &TrainerConfig { seed: seed as u64, ..Default::default() });
            r.test_metric = *a;
            fs::write(dir.join(format!("{strategy}_seed{seed}.json")), r.to_json().unwrap()).unwrap();
        }
        fs::write(dir.join("summary.json"), "{}").unwrap();
    }

    #[test]
    fn identical_families_are_not_significant() {
        let a = tempfile::tempdir().unwrap();
        write_family(a.path(), "tartan_mt", &[0.6, 0.7, 0.65]);
        let rep = compare_methods(a.path(), &[a.path().to_path_buf()], 10_000).unwrap();
        assert_eq!(rep.rows[1].p_value, Some(1.0));
        assert!(!rep.to_text().contains('*'));
    }

    #[test]
    fn separated_families_get_a_marker() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_family(a.path(), "finetune", &[0.60, 0.61, 0.59, 0.62, 0.60, 0.58, 0.61, 0.60, 0.59, 0.62]);
        write_family(b.path(), "tartan_meta", &[0.70, 0.71, 0.69, 0.72, 0.70, 0.68, 0.71, 0.70, 0.69, 0.72]);
        let rep = compare_methods(a.path(), &[b.path().to_path_buf()], 10_000).unwrap();
        assert!(rep.rows[1].significant);
        let text = rep.to_text();
        assert!(text.contains("70.20_{1.32}"), "{text}");
        assert!(text.contains('*'));
        assert_eq!(rep.to_csv().lines().count(), 3);
    }

    #[test]
    fn mismatched_end_tasks_are_rejected() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_family(a.path(), "finetune", &[0.5, 0.6]);
        let r = RunRecord::new("x", vec!["other".into()], &TrainerConfig::default());
        fs::write(b.path().join("x.json"), r.to_json().unwrap()).unwrap();
        assert!(compare_methods(a.path(), &[b.path().to_path_buf()], 100).is_err());
    }
}
