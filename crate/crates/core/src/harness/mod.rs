//! Experiment orchestration: configuration, seed fan-out, exports, method
//! comparison, trajectory plots and the oracle suite.

pub mod benchmarks;
pub mod compare;
pub mod oracle_suite;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use benchmarks::{BenchmarkSpec, DatasetManifest, HelpfulHarmfulSpec, Instance, TaptDaptSpec};
pub use compare::{compare_methods, load_records, ComparisonReport};
pub use oracle_suite::{run_oracle_suite, OracleConfig, OracleReport};
pub use plot::render_trajectories;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, StreamLabel, PRNG_ALGORITHM};
use crate::strategies::{
    build_for_tasks, finetune, pretrain_then_finetune, train_multitask, train_tartan_meta, RunRecord, TaskWeights,
    TrainerConfig,
};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    FinetuneOnly,
    PretrainFinetune,
    TartanMt,
    TartanMeta,
}

impl StrategyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::FinetuneOnly => "finetune_only",
            StrategyKind::PretrainFinetune => "pretrain_finetune",
            StrategyKind::TartanMt => "tartan_mt",
            StrategyKind::TartanMeta => "tartan_meta",
        }
    }
}

/// Generator name and stream layout recorded with every experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrngSpec {
    pub algorithm: String,
    pub root_seed: u64,
    pub labels: Vec<StreamLabel>,
}

impl PrngSpec {
    pub fn for_seed(root_seed: u64) -> Self {
        PrngSpec {
            algorithm: PRNG_ALGORITHM.to_string(),
            root_seed,
            labels: vec![
                StreamLabel::Init,
                StreamLabel::Data,
                StreamLabel::Masking,
                StreamLabel::MetaHead,
                StreamLabel::Permutation,
            ],
        }
    }
}

/// One experiment: a benchmark, a strategy, trainer settings and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub benchmark: BenchmarkSpec,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Raw (pre-softmax) weights for `tartan_mt`, keyed by task id. Missing
    /// means uniform.
    #[serde(default)]
    pub weights: Option<IndexMap<String, f64>>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Must equal the crate's generator name when present.
    #[serde(default)]
    pub prng: Option<String>,
}

fn schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_json(&fs::read_to_string(path)?)?;
        if let BenchmarkSpec::Dataset(m) = &mut c.benchmark {
            if m.path.is_relative() {
                if let Some(dir) = path.parent() {
                    m.path = dir.join(&m.path);
                }
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Invalid(format!("config schema {}", self.schema_version)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Invalid("no seeds".into()));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(Error::Invalid(format!("seed {s} listed twice")));
            }
        }
        if let Some(p) = &self.prng {
            if p != PRNG_ALGORITHM {
                return Err(Error::Invalid(format!("unsupported generator `{p}`, expected `{PRNG_ALGORITHM}`")));
            }
        }
        if self.weights.is_some() && self.strategy != StrategyKind::TartanMt {
            return Err(Error::Invalid("fixed weights only apply to tartan_mt".into()));
        }
        if self.strategy == StrategyKind::PretrainFinetune && self.trainer.pretrain_steps == 0 {
            return Err(Error::Invalid("pretrain_finetune needs pretrain_steps > 0".into()));
        }
        self.trainer.validate()
    }

    /// Trainer settings for one seed.
    pub fn trainer_for(&self, seed: u64) -> TrainerConfig {
        TrainerConfig { seed, ..self.trainer.clone() }
    }
}

/// Runs one seed of an experiment from scratch.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    let inst = config.benchmark.build(seed)?;
    let mut model = build_for_tasks(inst.body.clone(), &inst.end, &inst.aux, derive_seed(seed, StreamLabel::Init, 0))?;
    let cfg = config.trainer_for(seed);
    match config.strategy {
        StrategyKind::FinetuneOnly => finetune(&mut model, &inst.end, &cfg),
        StrategyKind::PretrainFinetune => pretrain_then_finetune(&mut model, &inst.aux, &inst.end, &cfg),
        StrategyKind::TartanMt => {
            let ids = inst.task_ids();
            let w = match &config.weights {
                None => TaskWeights::uniform(ids)?,
                Some(map) => {
                    let raw = ids
                        .iter()
                        .map(|t| map.get(t).copied().ok_or_else(|| Error::KeyMismatch(format!("no weight for `{t}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    if map.len() != ids.len() {
                        return Err(Error::KeyMismatch("weights name unknown tasks".into()));
                    }
                    TaskWeights::from_raw(ids, raw)?
                }
            };
            train_multitask(&mut model, &inst.end, &inst.aux, &w, &cfg)
        }
        StrategyKind::TartanMeta => train_tartan_meta(&mut model, &inst.end, &inst.aux, &cfg),
    }
}

/// Outcome of one seed in the summary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub final_val_metric: Option<f64>,
    pub test_metric: Option<f64>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub benchmark: String,
    pub strategy: StrategyKind,
    pub prng: PrngSpec,
    pub val_period: usize,
    pub log_period: usize,
    pub runs: Vec<SeedOutcome>,
    pub config: ExperimentConfig,
}

impl ExperimentSummary {
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.ok)
    }
}

pub struct ExperimentOutcome {
    pub records: Vec<Result<RunRecord>>,
    pub summary: ExperimentSummary,
}

pub fn record_stem(strategy: StrategyKind, seed: u64) -> String {
    format!("{}_seed{seed}", strategy.as_str())
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs every seed (in parallel), writes `<strategy>_seed<k>.csv/.json` per
/// successful seed and a `summary.json`. A failing seed is reported in the
/// summary; the other seeds still run.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    config.validate()?;
    let out = out_dir.map(Path::to_path_buf).or_else(|| config.output_dir.clone());
    if let Some(dir) = &out {
        fs::create_dir_all(dir)?;
    }
    let records: Vec<Result<RunRecord>> = config.seeds.par_iter().map(|&s| run_single(config, s)).collect();

    let mut runs = Vec::with_capacity(records.len());
    for (seed, rec) in config.seeds.iter().zip(&records) {
        let mut outcome = SeedOutcome {
            seed: *seed,
            ok: rec.is_ok(),
            error: rec.as_ref().err().map(|e| e.to_string()),
            final_val_metric: rec.as_ref().ok().map(|r| r.final_val_metric),
            test_metric: rec.as_ref().ok().map(|r| r.test_metric),
            files: Vec::new(),
        };
        if let (Some(dir), Ok(r)) = (&out, rec) {
            let stem = record_stem(config.strategy, *seed);
            write_atomic(&dir.join(format!("{stem}.csv")), r.to_csv().as_bytes())?;
            write_atomic(&dir.join(format!("{stem}.json")), r.to_json()?.as_bytes())?;
            outcome.files = vec![format!("{stem}.csv"), format!("{stem}.json")];
        }
        runs.push(outcome);
    }
    let summary = ExperimentSummary {
        schema_version: CONFIG_SCHEMA_VERSION,
        benchmark: config.benchmark.name().to_string(),
        strategy: config.strategy,
        prng: PrngSpec::for_seed(config.seeds[0]),
        val_period: config.trainer.val_period,
        log_period: config.trainer.log_period,
        runs,
        config: config.clone(),
    };
    if let Some(dir) = &out {
        write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    }
    Ok(ExperimentOutcome { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_text(strategy: StrategyKind) -> String {
        format!(
            r#"{{
                "benchmark": {{"kind": "synth-helpful-harmful", "end_test": 64, "aux_train": 64}},
                "strategy": "{}",
                "trainer": {{"max_steps": 12, "val_period": 4, "batch_size": 8, "body_lr": 0.01, "head_lr": 0.01}},
                "seeds": [0, 1, 2]
            }}"#,
            strategy.as_str()
        )
    }

    fn small(strategy: StrategyKind) -> ExperimentConfig {
        ExperimentConfig::from_json(&small_text(strategy)).unwrap()
    }

    #[test]
    fn three_seeds_give_three_records_and_a_summary() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&small(StrategyKind::TartanMeta), Some(dir.path())).unwrap();
        assert!(out.summary.all_ok());
        let mut names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names.len(), 7);
        assert!(names.contains(&"summary.json".to_string()));
        assert!(names.contains(&"tartan_meta_seed2.csv".to_string()));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let c = small(StrategyKind::TartanMeta);
        run_experiment(&c, Some(a.path())).unwrap();
        run_experiment(&c, Some(b.path())).unwrap();
        for s in &c.seeds {
            let f = format!("tartan_meta_seed{s}.csv");
            assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap());
        }
    }

    #[test]
    fn frozen_meta_matches_uniform_multitask() {
        let mut meta = small(StrategyKind::TartanMeta);
        meta.trainer.weight_lr = 0.0;
        let mt = small(StrategyKind::TartanMt);
        let a = run_experiment(&meta, None).unwrap();
        let b = run_experiment(&mt, None).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
            for (p, q) in x.val_series().iter().zip(y.val_series()) {
                assert!((p - q).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small(StrategyKind::TartanMt);
        c.seeds = vec![1, 1];
        assert!(c.validate().is_err());
        let mut c = small(StrategyKind::TartanMeta);
        c.weights = Some(IndexMap::new());
        assert!(c.validate().is_err());
        let mut c = small(StrategyKind::TartanMt);
        c.prng = Some("mt19937".into());
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json(&small_text(StrategyKind::PretrainFinetune)).is_err());
        assert!(ExperimentConfig::from_json(r#"{"benchmark": {"kind": "synth-tapt-dapt"}, "strategy": "tartan_mt", "seeds": [0], "extra": 1}"#).is_err());
    }

    #[test]
    fn fixed_weights_must_name_every_task() {
        let mut c = small(StrategyKind::TartanMt);
        c.weights = Some([("end".to_string(), 1.0)].into_iter().collect());
        assert!(matches!(run_single(&c, 0), Err(Error::KeyMismatch(_))));
        c.weights = Some(
            [("end".to_string(), 1000.0), ("helpful".into(), -1000.0), ("random_labels".into(), -1000.0)]
                .into_iter()
                .collect(),
        );
        let r = run_single(&c, 0).unwrap();
        assert_eq!(r.steps[0].alpha, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn failing_seed_is_recorded_and_others_still_run() {
        let mut c = small(StrategyKind::FinetuneOnly);
        c.trainer.body_lr = 1e305;
        c.trainer.head_lr = 1e305;
        c.trainer.optimizer.kind = crate::strategies::OptimizerKind::Sgd;
        c.benchmark = BenchmarkSpec::SynthHelpfulHarmful(HelpfulHarmfulSpec {
            activation: crate::autodiff::Activation::Linear,
            end_test: 64,
            aux_train: 64,
            ..Default::default()
        });
        let out = run_experiment(&c, None).unwrap();
        assert_eq!(out.summary.runs.len(), 3);
        assert!(out.summary.runs.iter().all(|r| !r.ok && r.error.as_deref().unwrap().contains("diverged")));
    }
}
