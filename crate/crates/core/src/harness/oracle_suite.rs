//! End-to-end checks of the quadratic hypergradient oracle.
//!
//! All values follow the implicit-function-theorem sign convention
//! `−∇L_valᵀ A(w)⁻¹ ∇L_i`, confirmed against finite differences; the
//! approximations are negated to match.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::bilevel_oracle::{
    condition, exact_hypergradient, finite_difference_hypergradient, identity_hessian_approx, neumann_error,
    one_dimensional_instance, one_step_approx, random_instance, solve_inner, ProxyMode, QuadraticTaskSet,
};
use crate::error::{Error, Result};

pub const ORACLE_SCHEMA_VERSION: u32 = 1;

pub const SIGN_CONVENTION: &str =
    "hypergradients are reported as -grad(L_val)^T A(w)^-1 grad(L_i), the sign confirmed by finite differences";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub seed: u64,
    /// Random instances for the exact-vs-finite-difference check.
    pub fd_instances: usize,
    pub max_dim: usize,
    pub max_aux: usize,
    /// Spectrum of `A(w)` for the finite-difference instances.
    pub fd_spectrum: [f64; 2],
    pub fd_step: f64,
    pub fd_tolerance: f64,
    pub identity_instances: usize,
    pub identity_tolerance: f64,
    pub sign_trials: usize,
    pub sign_spectrum: [f64; 2],
    /// Only pairs with both magnitudes above this count toward agreement.
    pub sign_floor: f64,
    pub sign_threshold: f64,
    /// Descent steps of the partially converged proxy, logged next to the
    /// exact-proxy values.
    pub meta_head_steps: usize,
    pub large_eigenvalue: f64,
    pub neumann_instances: usize,
    pub neumann_spectrum: [f64; 2],
    /// Spectrum of the family expected to diverge (top above 2).
    pub divergent_spectrum: [f64; 2],
    pub neumann_ks: Vec<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            seed: 0,
            fd_instances: 100,
            max_dim: 10,
            max_aux: 3,
            fd_spectrum: [0.5, 4.0],
            fd_step: 1e-5,
            fd_tolerance: 1e-6,
            identity_instances: 20,
            identity_tolerance: 1e-12,
            sign_trials: 1000,
            sign_spectrum: [0.5, 2.0],
            sign_floor: 1e-3,
            sign_threshold: 0.9,
            meta_head_steps: 5,
            large_eigenvalue: 100.0,
            neumann_instances: 20,
            neumann_spectrum: [0.1, 1.9],
            divergent_spectrum: [1.0, 2.5],
            neumann_ks: vec![0, 1, 5, 20],
            output_dir: None,
        }
    }
}

impl OracleConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: OracleConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_dim == 0 || self.max_dim > 10 || self.max_aux > 3 {
            return Err(Error::Invalid("instances need 1 <= d <= 10 and at most 3 auxiliary tasks".into()));
        }
        let ordered = |s: [f64; 2]| s[0] > 0.0 && s[0] <= s[1];
        if !ordered(self.fd_spectrum) || !ordered(self.sign_spectrum) || !ordered(self.divergent_spectrum) {
            return Err(Error::Invalid("spectra must satisfy 0 < lo <= hi".into()));
        }
        if !(self.neumann_spectrum[0] > 0.0 && self.neumann_spectrum[0] <= self.neumann_spectrum[1] && self.neumann_spectrum[1] < 2.0) {
            return Err(Error::Invalid("the convergent Neumann spectrum must lie in (0, 2)".into()));
        }
        if self.divergent_spectrum[1] <= 2.0 {
            return Err(Error::Invalid("the divergent spectrum must reach above 2".into()));
        }
        if self.neumann_ks.len() < 2 || self.neumann_ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("neumann_ks must be at least two increasing truncation orders".into()));
        }
        if !(self.fd_step > 0.0) || !(0.0..=1.0).contains(&self.sign_threshold) {
            return Err(Error::Invalid("fd_step must be positive and sign_threshold in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One CSV row: a value of `method` for task `task` on instance `seed`, its
/// error against the exact hypergradient (or the true inverse for Neumann
/// rows) and the condition number of the total Hessian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub family: String,
    pub seed: u64,
    pub method: String,
    pub task: Option<usize>,
    pub value: f64,
    pub error: f64,
    pub condition: f64,
    pub flag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub schema_version: u32,
    pub sign_convention: String,
    pub checks: Vec<CheckResult>,
    pub max_fd_relative_error: f64,
    pub sign_agreement: f64,
    pub sign_pairs_counted: usize,
    pub config: OracleConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub summary: OracleSummary,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.summary.checks.iter().all(|c| c.passed)
    }

    /// One `PASS name: detail` or `FAIL name: detail` line per check.
    pub fn lines(&self) -> String {
        let mut s = String::new();
        for c in &self.summary.checks {
            writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail).unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,seed,method,task,value,error,condition,flag\n");
        for r in &self.rows {
            let task = r.task.map(|t| t.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{},{:?},{:?},{:?},{}", r.family, r.seed, r.method, task, r.value, r.error, r.condition, r.flag)
                .unwrap();
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("oracle.csv"), self.to_csv().as_bytes())?;
        write_atomic(&dir.join("oracle_summary.json"), serde_json::to_string_pretty(&self.summary)?.as_bytes())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

struct Suite<'a> {
    cfg: &'a OracleConfig,
    rows: Vec<OracleRow>,
    checks: Vec<CheckResult>,
}

impl Suite<'_> {
    fn row(&mut self, family: &str, seed: u64, method: &str, task: Option<usize>, value: f64, error: f64, cond: f64, flag: &str) {
        self.rows.push(OracleRow {
            family: family.into(),
            seed,
            method: method.into(),
            task,
            value,
            error,
            condition: cond,
            flag: flag.into(),
        });
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult { name: name.into(), passed, detail });
    }

    fn instance_seed(&self, k: usize) -> u64 {
        self.cfg.seed.wrapping_add(k as u64)
    }

    fn exact_vs_fd(&mut self) -> Result<f64> {
        let c = self.cfg;
        let mut worst = 0.0f64;
        let mut failures = 0usize;
        let mut compared = 0usize;
        for k in 0..c.fd_instances {
            let seed = self.instance_seed(k);
            let d = 1 + k % c.max_dim;
            let q = random_instance(seed, d, k % (c.max_aux + 1), c.fd_spectrum[0], c.fd_spectrum[1])?;
            let w = q.weights().to_vec();
            let cond = condition(&q.total_matrix(&w)?)?;
            for i in 0..q.num_tasks() {
                let e = exact_hypergradient(&q, &w, i)?;
                let f = finite_difference_hypergradient(&q, &w, i, c.fd_step)?;
                let err = rel(e, f);
                // near-zero values are compared absolutely
                if (e - f).abs() >= 1e-9 {
                    worst = worst.max(err);
                    if err > c.fd_tolerance {
                        failures += 1;
                    }
                }
                compared += 1;
                self.row("fd", seed, "exact", Some(i), e, 0.0, cond, "");
                self.row("fd", seed, "finite_difference", Some(i), f, err, cond, "");
            }
        }
        let passed = c.fd_instances >= 1 && failures == 0;
        self.check(
            "exact_vs_finite_difference",
            passed,
            format!("{compared} hypergradients on {} instances, max relative error {worst:.3e} (tolerance {:e})", c.fd_instances, c.fd_tolerance),
        );
        Ok(worst)
    }

    fn one_dimensional(&mut self) -> Result<()> {
        let q = one_dimensional_instance();
        let w = q.weights().to_vec();
        let e = exact_hypergradient(&q, &w, 1)?;
        let f = finite_difference_hypergradient(&q, &w, 1, self.cfg.fd_step)?;
        self.row("one_dimensional", 0, "exact", Some(1), e, (e + 0.5).abs(), 1.0, "");
        self.row("one_dimensional", 0, "finite_difference", Some(1), f, (f + 0.5).abs(), 1.0, "");
        let passed = (e + 0.5).abs() <= 1e-8 && (f + 0.5).abs() <= 1e-8;
        self.check("one_dimensional_closed_form", passed, format!("exact {e:.12}, finite difference {f:.12}, expected -0.5"));
        Ok(())
    }

    fn identity_family(&mut self) -> Result<()> {
        let c = self.cfg;
        let mut worst = 0.0f64;
        for k in 0..c.identity_instances {
            let seed = self.instance_seed(k);
            let q = random_instance(seed, 1 + k % c.max_dim, k % (c.max_aux + 1), 1.0, 1.0)?;
            let w = q.weights().to_vec();
            let theta = solve_inner(&q, &w)?;
            for i in 0..q.num_tasks() {
                let e = exact_hypergradient(&q, &w, i)?;
                let a = identity_hessian_approx(&q, &w, i, ProxyMode::Exact)?;
                let o = one_step_approx(&q, &theta, i, 1.0)?;
                worst = worst.max((a - e).abs()).max((o - e).abs());
                self.row("identity_hessian", seed, "exact", Some(i), e, 0.0, 1.0, "");
                self.row("identity_hessian", seed, "identity_hessian", Some(i), a, (a - e).abs(), 1.0, "");
                self.row("identity_hessian", seed, "one_step", Some(i), o, (o - e).abs(), 1.0, "");
            }
        }
        self.check(
            "identity_hessian_is_exact",
            worst <= c.identity_tolerance,
            format!("{} instances, max absolute error {worst:.3e} (tolerance {:e})", c.identity_instances, c.identity_tolerance),
        );
        Ok(())
    }

    fn sign_agreement(&mut self) -> Result<(f64, usize)> {
        let c = self.cfg;
        let (mut agree, mut counted) = (0usize, 0usize);
        for k in 0..c.sign_trials {
            let seed = self.instance_seed(k);
            let d = 1 + k % c.max_dim;
            let q = random_instance(seed, d, 1 + k % c.max_aux.max(1), c.sign_spectrum[0], c.sign_spectrum[1])?;
            let w = q.weights().to_vec();
            let cond = condition(&q.total_matrix(&w)?)?;
            for i in 1..q.num_tasks() {
                let e = exact_hypergradient(&q, &w, i)?;
                let a = identity_hessian_approx(&q, &w, i, ProxyMode::Exact)?;
                let m = identity_hessian_approx(&q, &w, i, ProxyMode::MetaHead { steps: c.meta_head_steps, seed })?;
                if e.abs() > c.sign_floor && a.abs() > c.sign_floor {
                    counted += 1;
                    if e.signum() == a.signum() {
                        agree += 1;
                    }
                }
                self.row("sign", seed, "exact", Some(i), e, 0.0, cond, "");
                self.row("sign", seed, "identity_hessian", Some(i), a, rel(a, e), cond, "");
                self.row("sign", seed, "identity_hessian_meta_head", Some(i), m, rel(m, e), cond, "");
            }
        }
        let frac = if counted == 0 { 0.0 } else { agree as f64 / counted as f64 };
        self.check(
            "identity_hessian_sign_agreement",
            counted > 0 && frac >= c.sign_threshold,
            format!(
                "{agree}/{counted} pairs agree ({:.1}%) over {} trials with spectrum [{}, {}] (threshold {:.0}%)",
                100.0 * frac,
                c.sign_trials,
                c.sign_spectrum[0],
                c.sign_spectrum[1],
                100.0 * c.sign_threshold
            ),
        );
        Ok((frac, counted))
    }

    fn large_eigenvalue(&mut self) -> Result<()> {
        let big = self.cfg.large_eigenvalue;
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, big]));
        let q = QuadraticTaskSet::new(
            vec![h.clone(), DMatrix::zeros(2, 2)],
            vec![DVector::zeros(2), DVector::from_vec(vec![0.1, 1.0])],
            h,
            DVector::from_vec(vec![0.2, 3.0]),
            vec![1.0, 1.0],
        )?;
        let e = exact_hypergradient(&q, &[1.0, 1.0], 1)?;
        let a = identity_hessian_approx(&q, &[1.0, 1.0], 1, ProxyMode::Exact)?;
        let err = rel(a, e);
        self.row("large_eigenvalue", 0, "exact", Some(1), e, 0.0, big, "");
        self.row("large_eigenvalue", 0, "identity_hessian", Some(1), a, err, big, "");
        self.check(
            "identity_hessian_degrades_at_large_eigenvalue",
            err > 0.5,
            format!("eigenvalue {big}: relative error {err:.3} (expected above 0.5)"),
        );
        Ok(())
    }

    fn neumann_family(&mut self, name: &str, spectrum: [f64; 2], divergent: bool) -> Result<()> {
        let c = self.cfg;
        let mut bad = Vec::new();
        for k in 0..c.neumann_instances {
            let seed = self.instance_seed(k);
            // small dimensions keep the top eigenvalue dominant in the divergent family
            let d = if divergent { 2 + k % 3 } else { 1 + k % c.max_dim };
            let q = random_instance(seed, d, 0, spectrum[0], spectrum[1])?;
            let h = q.total_matrix(q.weights())?;
            let ev = SymmetricEigen::new(h.clone()).eigenvalues;
            let cond = ev.max() / ev.min();
            let errs = c.neumann_ks.iter().map(|&kk| neumann_error(&h, kk)).collect::<Result<Vec<_>>>()?;
            let ok = errs.windows(2).all(|p| if divergent { p[1] > p[0] } else { p[1] < p[0] });
            if !ok {
                bad.push(seed);
            }
            let flag = if divergent { "expected_divergent" } else { "" };
            for (kk, e) in c.neumann_ks.iter().zip(&errs) {
                self.row(name, seed, &format!("neumann_k{kk}"), None, *e, *e, cond, flag);
            }
        }
        let trend = if divergent { "increasing" } else { "decreasing" };
        self.check(
            name,
            bad.is_empty(),
            format!(
                "{} instances with spectrum [{}, {}]: truncation error strictly {trend} over k = {:?}{}",
                c.neumann_instances,
                spectrum[0],
                spectrum[1],
                c.neumann_ks,
                if bad.is_empty() { String::new() } else { format!("; violated by seeds {bad:?}") }
            ),
        );
        Ok(())
    }
}

/// Runs every oracle check and writes `oracle.csv` and `oracle_summary.json`
/// when the config names an output directory.
pub fn run_oracle_suite(config: &OracleConfig) -> Result<OracleReport> {
    config.validate()?;
    let mut s = Suite { cfg: config, rows: Vec::new(), checks: Vec::new() };
    let worst = s.exact_vs_fd()?;
    s.one_dimensional()?;
    s.identity_family()?;
    let (frac, counted) = s.sign_agreement()?;
    s.large_eigenvalue()?;
    s.neumann_family("neumann_converges", config.neumann_spectrum, false)?;
    s.neumann_family("neumann_diverges", config.divergent_spectrum, true)?;
    let report = OracleReport {
        rows: s.rows,
        summary: OracleSummary {
            schema_version: ORACLE_SCHEMA_VERSION,
            sign_convention: SIGN_CONVENTION.into(),
            checks: s.checks,
            max_fd_relative_error: worst,
            sign_agreement: frac,
            sign_pairs_counted: counted,
            config: config.clone(),
        },
    };
    if let Some(dir) = &config.output_dir {
        report.write(dir)?;
    }
    Ok(report)
}
