//! Seed-level significance testing and aggregation.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Prng, StreamLabel};
use crate::strategies::RunRecord;

/// Exhaustive mode refuses to enumerate more relabelings than this.
pub const MAX_EXHAUSTIVE: u64 = 200_000;

/// One metric value per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub label: String,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(label: &str, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid(format!("sample `{label}` is empty")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample `{label}`")));
        }
        Ok(SampleSet { label: label.to_string(), values })
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    c as u64
}

/// Two-sided permutation test on `|mean(a) − mean(b)|`.
///
/// With `n_permutations == 0` every relabeling of the pooled values into
/// groups of the original sizes is enumerated and the exact proportion of
/// relabelings at least as extreme as the observed split is returned.
/// Otherwise `n_permutations` random relabelings are drawn from
/// `(seed, permutation, 0)` and `p = (1 + hits) / (1 + n)`.
pub fn permutation_test(a: &SampleSet, b: &SampleSet, n_permutations: usize, seed: u64) -> Result<f64> {
    let na = a.values.len();
    let pooled: Vec<f64> = a.values.iter().chain(&b.values).copied().collect();
    let total: f64 = pooled.iter().sum();
    let n = pooled.len();
    let stat = |sum_a: f64| (sum_a / na as f64 - (total - sum_a) / (n - na) as f64).abs();
    let observed = stat(a.values.iter().sum());
    // Relabelings tie with the observed split up to summation order.
    let tol = 1e-12 * observed.abs().max(pooled.iter().fold(1.0f64, |m, v| m.max(v.abs())));
    let extreme = |s: f64| s >= observed - tol;

    if n_permutations == 0 {
        let count = binomial(n as u64, na as u64);
        if count > MAX_EXHAUSTIVE {
            return Err(Error::Invalid(format!(
                "{count} relabelings exceed the exhaustive limit of {MAX_EXHAUSTIVE}"
            )));
        }
        let mut hits = 0u64;
        for combo in (0..n).combinations(na) {
            if extreme(stat(combo.iter().map(|&i| pooled[i]).sum())) {
                hits += 1;
            }
        }
        return Ok(hits as f64 / count as f64);
    }

    let mut rng = Prng::new(seed, StreamLabel::Permutation, 0);
    let mut work = pooled.clone();
    let mut hits = 0usize;
    for _ in 0..n_permutations {
        rng.shuffle(&mut work);
        if extreme(stat(work[..na].iter().sum())) {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_permutations) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub std: f64,
    pub values: Vec<f64>,
    pub note: Option<String>,
}

impl Aggregate {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("nothing to aggregate".into()));
        }
        let m = mean(&values);
        let (std, note) = if values.len() == 1 {
            (0.0, Some("single value: std reported as 0".to_string()))
        } else {
            let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
            ((ss / (values.len() - 1) as f64).sqrt(), None)
        };
        Ok(Aggregate { mean: m, std, values, note })
    }

    /// `MEAN_{STD}` with two decimals.
    pub fn formatted(&self) -> String {
        format!("{:.2}_{{{:.2}}}", self.mean, self.std)
    }
}

/// Test accuracy across runs, in percent.
pub fn aggregate_runs(records: &[RunRecord]) -> Result<Aggregate> {
    let first = records.first().ok_or_else(|| Error::Invalid("no records".into()))?;
    for r in records {
        if r.metric != first.metric {
            return Err(Error::Invalid(format!("mixed metrics `{}` and `{}`", first.metric, r.metric)));
        }
        if r.tasks.first() != first.tasks.first() {
            return Err(Error::Invalid("records target different end tasks".into()));
        }
    }
    Aggregate::from_values(records.iter().map(|r| 100.0 * r.test_metric).collect())
}
