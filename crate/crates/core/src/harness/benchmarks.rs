//! Built-in benchmark generators and CSV dataset manifests.
//!
//! A benchmark instance is drawn afresh for every run seed: teachers, inputs
//! and label noise all come from seeds derived from the run seed, so a seed
//! set averages over instances as well as over initializations.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::error::{Error, Result};
use crate::model::BodySpec;
use crate::rng::{derive_seed, StreamLabel};
use crate::tasks::{
    derive_domain_task, derive_masked_reconstruction_task, generate_synthetic_classification, load_csv_dataset,
    Relatedness, SyntheticSpec, Task,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HelpfulHarmfulSpec {
    pub input_dim: usize,
    pub num_classes: usize,
    pub teacher_hidden: usize,
    pub end_train: usize,
    pub end_val: usize,
    pub end_test: usize,
    pub end_noise: f64,
    pub aux_train: usize,
    pub helpful_noise: f64,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for HelpfulHarmfulSpec {
    fn default() -> Self {
        HelpfulHarmfulSpec {
            input_dim: 10,
            num_classes: 3,
            teacher_hidden: 16,
            end_train: 64,
            end_val: 64,
            end_test: 512,
            end_noise: 0.1,
            aux_train: 512,
            helpful_noise: 0.2,
            hidden_dims: vec![32],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaptDaptSpec {
    /// Domain pool size as a multiple of the end-task training size.
    pub n: usize,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub teacher_hidden: usize,
    pub end_train: usize,
    pub end_val: usize,
    pub end_test: usize,
    pub end_noise: f64,
    pub mask_prob: f64,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for TaptDaptSpec {
    fn default() -> Self {
        TaptDaptSpec {
            n: 10,
            input_dim: 32,
            latent_dim: 4,
            num_classes: 3,
            teacher_hidden: 16,
            end_train: 48,
            end_val: 64,
            end_test: 512,
            end_noise: 0.1,
            mask_prob: 0.15,
            hidden_dims: vec![32],
            activation: Activation::Tanh,
        }
    }
}

/// A header-first numeric CSV used as the end task, with a masked
/// reconstruction auxiliary task over its training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub label_column: String,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default = "default_mask_prob")]
    pub mask_prob: f64,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_fractions() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

fn default_mask_prob() -> f64 {
    0.15
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BenchmarkSpec {
    SynthHelpfulHarmful(HelpfulHarmfulSpec),
    SynthTaptDapt(TaptDaptSpec),
    Dataset(DatasetManifest),
}

/// Tasks and body of one benchmark draw. The end task comes first in
/// every listing.
#[derive(Clone, Debug)]
pub struct Instance {
    pub end: Task,
    pub aux: Vec<Task>,
    pub body: BodySpec,
}

impl Instance {
    pub fn task_ids(&self) -> Vec<String> {
        std::iter::once(&self.end).chain(&self.aux).map(|t| t.id.clone()).collect()
    }
}

fn instance_seed(seed: u64, k: u64) -> u64 {
    derive_seed(seed, StreamLabel::Teacher, 100 + k)
}

impl BenchmarkSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BenchmarkSpec::SynthHelpfulHarmful(_) => "synth-helpful-harmful",
            BenchmarkSpec::SynthTaptDapt(_) => "synth-tapt-dapt",
            BenchmarkSpec::Dataset(_) => "dataset",
        }
    }

    /// Draws the instance for one run seed.
    pub fn build(&self, seed: u64) -> Result<Instance> {
        match self {
            BenchmarkSpec::SynthHelpfulHarmful(s) => helpful_harmful(s, seed),
            BenchmarkSpec::SynthTaptDapt(s) => tapt_dapt(s, seed),
            BenchmarkSpec::Dataset(m) => dataset(m, seed),
        }
    }
}

fn helpful_harmful(s: &HelpfulHarmfulSpec, seed: u64) -> Result<Instance> {
    let teacher = instance_seed(seed, 0);
    let base = SyntheticSpec {
        teacher_seed: teacher,
        data_seed: instance_seed(seed, 1),
        input_dim: s.input_dim,
        num_classes: s.num_classes,
        train_size: s.end_train,
        val_size: s.end_val,
        test_size: s.end_test,
        label_noise: s.end_noise,
        relatedness: Relatedness::SameTeacher,
        teacher_hidden: s.teacher_hidden,
        latent_dim: None,
    };
    let aux_spec = |k: u64, noise: f64, relatedness: Relatedness| SyntheticSpec {
        data_seed: instance_seed(seed, k),
        train_size: s.aux_train,
        val_size: 0,
        test_size: 0,
        label_noise: noise,
        relatedness,
        ..base.clone()
    };
    let end = generate_synthetic_classification("end", &base)?;
    let helpful = generate_synthetic_classification("helpful", &aux_spec(2, s.helpful_noise, Relatedness::SameTeacher))?;
    let harmful = generate_synthetic_classification("random_labels", &aux_spec(3, 0.0, Relatedness::RandomLabels))?;
    Ok(Instance {
        end,
        aux: vec![helpful, harmful],
        body: BodySpec { input_dim: s.input_dim, hidden_dims: s.hidden_dims.clone(), activation: s.activation },
    })
}

fn tapt_dapt(s: &TaptDaptSpec, seed: u64) -> Result<Instance> {
    if s.n == 0 {
        return Err(Error::Invalid("domain multiple n must be at least 1".into()));
    }
    let base = SyntheticSpec {
        teacher_seed: instance_seed(seed, 0),
        data_seed: instance_seed(seed, 1),
        input_dim: s.input_dim,
        num_classes: s.num_classes,
        train_size: s.end_train,
        val_size: s.end_val,
        test_size: s.end_test,
        label_noise: s.end_noise,
        relatedness: Relatedness::SameTeacher,
        teacher_hidden: s.teacher_hidden,
        latent_dim: Some(s.latent_dim),
    };
    let end = generate_synthetic_classification("end", &base)?.with_indicator_padding(true);
    let pool_spec = SyntheticSpec {
        data_seed: instance_seed(seed, 2),
        train_size: s.n * s.end_train,
        val_size: 0,
        test_size: 0,
        ..base.clone()
    };
    let pool = generate_synthetic_classification("pool", &pool_spec)?;
    let tapt = derive_masked_reconstruction_task("tapt", &end.dataset, s.mask_prob, instance_seed(seed, 3))?;
    let dapt = derive_domain_task("dapt", &pool.dataset, s.n, s.end_train, s.mask_prob, instance_seed(seed, 4))?;
    Ok(Instance {
        end,
        aux: vec![tapt, dapt],
        body: BodySpec { input_dim: 2 * s.input_dim, hidden_dims: s.hidden_dims.clone(), activation: s.activation },
    })
}

fn dataset(m: &DatasetManifest, seed: u64) -> Result<Instance> {
    let ds = load_csv_dataset(&m.path, &m.label_column, m.fractions, seed)?;
    let d = ds.width();
    let end = Task::classification("end", ds)?.with_indicator_padding(true);
    let tapt = derive_masked_reconstruction_task("tapt", &end.dataset, m.mask_prob, instance_seed(seed, 3))?;
    Ok(Instance {
        end,
        aux: vec![tapt],
        body: BodySpec { input_dim: 2 * d, hidden_dims: m.hidden_dims.clone(), activation: m.activation },
    })
}
