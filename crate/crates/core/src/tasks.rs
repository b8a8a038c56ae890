//! Tasks: an objective paired with a dataset and its splits.
//!
//! Also holds CSV ingestion, the synthetic teacher-student generator used by
//! the built-in benchmarks, and the masked-feature reconstruction tasks that
//! stand in for task- and domain-adaptive pre-training.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{forward_mlp, Activation, LayerSpec, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{HeadSpec, MultiTaskModel, TaskId};
use crate::rng::{Prng, StreamLabel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Labels {
        labels: Vec<usize>,
        num_classes: usize,
        /// Original label strings, indexed by class id, when read from CSV.
        mapping: Option<Vec<String>>,
    },
    Values(Tensor),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    targets: Targets,
    splits: Splits,
}

impl LabeledDataset {
    pub fn new(features: Tensor, targets: Targets, splits: Splits) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Shape(format!("features {:?}", features.shape())));
        }
        let m = features.rows();
        match &targets {
            Targets::Labels { labels, num_classes, mapping } => {
                if labels.len() != m {
                    return Err(Error::Shape(format!("{} labels for {m} rows", labels.len())));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= *num_classes) {
                    return Err(Error::LabelOutOfRange { label: bad, classes: *num_classes });
                }
                if mapping.as_ref().is_some_and(|mp| mp.len() != *num_classes) {
                    return Err(Error::Invalid("label mapping size".into()));
                }
            }
            Targets::Values(t) => {
                if t.rows() != m {
                    return Err(Error::Shape(format!("{} target rows for {m} rows", t.rows())));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if i >= m {
                return Err(Error::Invalid(format!("split index {i} out of range {m}")));
            }
            if !seen.insert(i) {
                return Err(Error::Invalid(format!("row {i} appears in more than one split")));
            }
        }
        Ok(LabeledDataset { features, targets, splits })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn rows(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels { num_classes, .. } => Some(*num_classes),
            Targets::Values(_) => None,
        }
    }

    pub fn label_mapping(&self) -> Option<&[String]> {
        match &self.targets {
            Targets::Labels { mapping, .. } => mapping.as_deref(),
            Targets::Values(_) => None,
        }
    }

    /// Rows in the order given, with every row placed in the train split.
    fn subset_as_train(&self, rows: &[usize]) -> Result<LabeledDataset> {
        let features = self.features.select_rows(rows);
        let targets = Targets::Values(features.clone());
        let splits = Splits { train: (0..rows.len()).collect(), ..Default::default() };
        LabeledDataset::new(features, targets, splits)
    }
}

fn split_sizes(m: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || fractions[0] <= 0.0 {
        return Err(Error::Invalid(format!("split fractions {fractions:?}")));
    }
    if fractions.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::Invalid(format!("split fractions {fractions:?} sum above 1")));
    }
    let mut sizes = [0usize; 3];
    for (s, f) in sizes.iter_mut().zip(fractions) {
        *s = (f * m as f64 + 1e-9).floor() as usize;
        if f > 0.0 && *s == 0 {
            return Err(Error::Invalid(format!("empty split for fraction {f} of {m} rows")));
        }
    }
    Ok(sizes)
}

/// Shuffles `0..m` with `(seed, data, 0)` and cuts train/val/test.
pub fn random_splits(m: usize, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let [a, b, c] = split_sizes(m, fractions)?;
    let mut order: Vec<usize> = (0..m).collect();
    Prng::new(seed, StreamLabel::Data, 0).shuffle(&mut order);
    Ok(Splits {
        train: order[..a].to_vec(),
        val: order[a..a + b].to_vec(),
        test: order[a + b..a + b + c].to_vec(),
    })
}

/// Reads a header-first, comma-separated numeric CSV. Every column other than
/// `label_column` is a real-valued feature. Labels are mapped to contiguous
/// ids in sorted order (numeric order when every label parses as a number).
pub fn load_csv_dataset(
    path: &Path,
    label_column: &str,
    fractions: [f64; 3],
    seed: u64,
) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Csv(format!("no column named `{label_column}`")))?;
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row_no, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(format!("ragged or unreadable row: {e}")))?;
        if rec.len() != headers.len() {
            return Err(Error::Csv(format!("ragged row {}", row_no + 2)));
        }
        for (c, field) in rec.iter().enumerate() {
            if c == label_idx {
                raw_labels.push(field.trim().to_string());
            } else {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Csv(format!(
                        "non-numeric feature `{field}` at row {}, column `{}`",
                        row_no + 2,
                        &headers[c]
                    ))
                })?;
                features.push(v);
            }
        }
    }
    let m = raw_labels.len();
    if m == 0 {
        return Err(Error::Csv("no data rows".into()));
    }
    let d = headers.len() - 1;
    if d == 0 {
        return Err(Error::Csv("no feature columns".into()));
    }
    let mut classes: Vec<String> = raw_labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.iter().all(|c| c.parse::<f64>().is_ok()) {
        classes.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    let labels = raw_labels
        .iter()
        .map(|l| classes.iter().position(|c| c == l).unwrap())
        .collect();
    let splits = random_splits(m, fractions, seed)?;
    LabeledDataset::new(
        Tensor::matrix(m, d, features)?,
        Targets::Labels { labels, num_classes: classes.len(), mapping: Some(classes) },
        splits,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    Classification,
    Regression,
    MaskedReconstruction { mask_prob: f64 },
}

#[derive(Clone, Debug)]
pub struct Task {
    pub id: TaskId,
    pub objective: Objective,
    pub dataset: Arc<LabeledDataset>,
    pub head: HeadSpec,
    /// Root seed of the per-batch masking streams.
    pub mask_seed: u64,
    /// Appends an all-zero indicator block of the feature width to every
    /// input row, so plain tasks can share a body with reconstruction tasks.
    pub pad_indicator: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BatchTarget {
    Labels(Vec<usize>),
    Values(Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub target: BatchTarget,
    pub mask: Option<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub loss: f64,
}

impl Task {
    pub fn classification(id: &str, dataset: LabeledDataset) -> Result<Task> {
        let k = dataset
            .num_classes()
            .ok_or_else(|| Error::Invalid(format!("task `{id}` needs class labels")))?;
        Ok(Task {
            id: id.to_string(),
            objective: Objective::Classification,
            dataset: Arc::new(dataset),
            head: HeadSpec::classification(k),
            mask_seed: 0,
            pad_indicator: false,
        })
    }

    pub fn with_indicator_padding(mut self, on: bool) -> Self {
        self.pad_indicator = on;
        self
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.objective, Objective::Classification)
    }

    pub fn input_width(&self) -> usize {
        let d = self.dataset.width();
        match self.objective {
            Objective::MaskedReconstruction { .. } => 2 * d,
            _ if self.pad_indicator => 2 * d,
            _ => d,
        }
    }

    pub fn rows(&self, split: Split) -> &[usize] {
        self.dataset.rows(split)
    }

    /// Assembles a batch. For reconstruction tasks the masking draw comes
    /// from `(mask_seed, masking, batch_index)`; each entry is masked
    /// independently when a unit draw falls below `mask_prob`.
    pub fn make_batch(&self, rows: &[usize], batch_index: u64) -> Result<Batch> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let x = self.dataset.features.select_rows(rows);
        let (n, d) = (x.rows(), x.cols());
        match self.objective {
            Objective::MaskedReconstruction { mask_prob } => {
                let mut rng = Prng::new(self.mask_seed, StreamLabel::Masking, batch_index);
                let mask: Vec<f64> = (0..n * d)
                    .map(|_| if rng.unit() < mask_prob { 1.0 } else { 0.0 })
                    .collect();
                let mut inputs = Vec::with_capacity(n * 2 * d);
                for r in 0..n {
                    let xr = x.row(r);
                    let mr = &mask[r * d..(r + 1) * d];
                    inputs.extend(xr.iter().zip(mr).map(|(v, m)| v * (1.0 - m)));
                    inputs.extend_from_slice(mr);
                }
                Ok(Batch {
                    inputs: Tensor::matrix(n, 2 * d, inputs)?,
                    target: BatchTarget::Values(x),
                    mask: Some(Tensor::matrix(n, d, mask)?),
                })
            }
            _ => {
                let inputs = if self.pad_indicator {
                    let mut v = Vec::with_capacity(n * 2 * d);
                    for r in 0..n {
                        v.extend_from_slice(x.row(r));
                        v.extend(std::iter::repeat(0.0).take(d));
                    }
                    Tensor::matrix(n, 2 * d, v)?
                } else {
                    x
                };
                let target = match &self.dataset.targets {
                    Targets::Labels { labels, .. } => {
                        BatchTarget::Labels(rows.iter().map(|&r| labels[r]).collect())
                    }
                    Targets::Values(t) => BatchTarget::Values(t.select_rows(rows)),
                };
                Ok(Batch { inputs, target, mask: None })
            }
        }
    }

    /// Records this task's loss on `outputs` for `batch`.
    pub fn loss_on(&self, tape: &mut Tape, outputs: Var, batch: &Batch) -> Result<Var> {
        match (&self.objective, &batch.target) {
            (Objective::Classification, BatchTarget::Labels(l)) => tape.cross_entropy(outputs, l),
            (Objective::Regression, BatchTarget::Values(t)) => tape.mse(outputs, t),
            (Objective::MaskedReconstruction { .. }, BatchTarget::Values(t)) => {
                let mask = batch.mask.as_ref().ok_or_else(|| Error::Invalid("missing mask".into()))?;
                tape.masked_mse(outputs, t, mask)
            }
            _ => Err(Error::Invalid(format!("batch does not fit task `{}`", self.id))),
        }
    }

    /// Accuracy, macro-F1 and mean cross-entropy of `head_task`'s head on a
    /// whole split.
    pub fn evaluate(&self, model: &MultiTaskModel, head_task: &str, split: Split) -> Result<Metrics> {
        let rows = self.rows(split);
        let batch = self.make_batch(rows, 0)?;
        let BatchTarget::Labels(labels) = &batch.target else {
            return Err(Error::Invalid(format!("task `{}` is not a classification task", self.id)));
        };
        let mut tape = Tape::new();
        let x = tape.constant(batch.inputs.clone())?;
        let h = model.body_forward(&mut tape, x)?;
        let o = model.head_forward(&mut tape, head_task, h)?;
        let l = tape.cross_entropy(o, labels)?;
        let logits = tape.value(o);
        let preds: Vec<usize> = (0..logits.rows()).map(|r| argmax(logits.row(r))).collect();
        let k = self.dataset.num_classes().unwrap_or(1);
        Ok(Metrics {
            accuracy: accuracy(&preds, labels),
            macro_f1: macro_f1(&preds, labels, k),
            loss: tape.scalar(l),
        })
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Mean F1 over classes that occur among the labels or the predictions.
pub fn macro_f1(preds: &[usize], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..k {
        let tp = preds.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count() as f64;
        let fp = preds.iter().zip(labels).filter(|&(&p, &l)| p == c && l != c).count() as f64;
        let fneg = preds.iter().zip(labels).filter(|&(&p, &l)| p != c && l == c).count() as f64;
        if tp + fp + fneg == 0.0 {
            continue;
        }
        total += 2.0 * tp / (2.0 * tp + fp + fneg);
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Epoch-wise shuffled minibatches over one split of a task.
///
/// Rows are visited in a fresh permutation per epoch; a batch never spans two
/// epochs, so a short tail is dropped. Splits smaller than the batch size
/// yield the whole (shuffled) split every time.
#[derive(Debug)]
pub struct BatchSampler {
    split: Split,
    order: Vec<usize>,
    pos: usize,
    rng: Prng,
    drawn: u64,
}

impl BatchSampler {
    pub fn new(split: Split, seed: u64, stream_index: u64) -> Self {
        BatchSampler {
            split,
            order: Vec::new(),
            pos: 0,
            rng: Prng::new(seed, StreamLabel::Data, stream_index),
            drawn: 0,
        }
    }

    pub fn batches_drawn(&self) -> u64 {
        self.drawn
    }

    pub fn next_rows(&mut self, task: &Task, batch_size: usize) -> Result<Vec<usize>> {
        let rows = task.rows(self.split);
        if rows.is_empty() || batch_size == 0 {
            return Err(Error::EmptyBatch);
        }
        let b = batch_size.min(rows.len());
        if self.order.is_empty() || self.pos + b > self.order.len() {
            self.order = rows.to_vec();
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + b].to_vec();
        self.pos += b;
        Ok(out)
    }

    pub fn next_batch(&mut self, task: &Task, batch_size: usize) -> Result<Batch> {
        let rows = self.next_rows(task, batch_size)?;
        let batch = task.make_batch(&rows, self.drawn)?;
        self.drawn += 1;
        Ok(batch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relatedness {
    SameTeacher,
    IndependentTeacher,
    RandomLabels,
}

fn default_teacher_hidden() -> usize {
    16
}

/// Teacher-student classification task description.
///
/// Inputs come from `(data_seed, data, 0)`. With `latent_dim = Some(k)` each
/// row is `z M + 0.1 e` for standard-normal `z ∈ R^k`, `e ∈ R^d` and a mixing
/// matrix `M` fixed by the teacher seed; otherwise rows are standard normal.
/// The teacher is a `d → teacher_hidden (tanh) → classes` MLP with
/// standard-normal weights scaled by `1/sqrt(fan_in)` and zero biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub teacher_seed: u64,
    pub data_seed: u64,
    pub input_dim: usize,
    pub num_classes: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub label_noise: f64,
    pub relatedness: Relatedness,
    #[serde(default = "default_teacher_hidden")]
    pub teacher_hidden: usize,
    #[serde(default)]
    pub latent_dim: Option<usize>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 || self.train_size == 0 || self.teacher_hidden == 0 {
            return Err(Error::Invalid(format!("synthetic spec {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Invalid(format!("label noise {}", self.label_noise)));
        }
        if self.latent_dim == Some(0) {
            return Err(Error::Invalid("latent_dim must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.train_size + self.val_size + self.test_size
    }
}

fn teacher_params(seed: u64, index: u64, d: usize, hidden: usize, k: usize) -> (ParamSet, Vec<LayerSpec>) {
    let layers = vec![LayerSpec::new(d, hidden, Activation::Tanh), LayerSpec::new(hidden, k, Activation::Linear)];
    let mut rng = Prng::new(seed, StreamLabel::Teacher, index);
    let mut p = ParamSet::new();
    for (i, l) in layers.iter().enumerate() {
        let s = 1.0 / (l.in_dim as f64).sqrt();
        let w = (0..l.in_dim * l.out_dim).map(|_| s * rng.normal()).collect();
        p.insert(crate::autodiff::weight_name("", i), Tensor::matrix(l.in_dim, l.out_dim, w).unwrap())
            .unwrap();
        p.insert(crate::autodiff::bias_name("", i), Tensor::zeros(&[l.out_dim])).unwrap();
    }
    (p, layers)
}

/// Inputs for a synthetic spec, without labels.
pub fn synthetic_inputs(spec: &SyntheticSpec, rows: usize) -> Result<Tensor> {
    let d = spec.input_dim;
    let mut rng = Prng::new(spec.data_seed, StreamLabel::Data, 0);
    let values = match spec.latent_dim {
        None => (0..rows * d).map(|_| rng.normal()).collect(),
        Some(k) => {
            let mut mix_rng = Prng::new(spec.teacher_seed, StreamLabel::Teacher, 2);
            let scale = 1.0 / (k as f64).sqrt();
            let mix: Vec<f64> = (0..k * d).map(|_| scale * mix_rng.normal()).collect();
            let mut v = Vec::with_capacity(rows * d);
            for _ in 0..rows {
                let z: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
                for j in 0..d {
                    let s: f64 = (0..k).map(|i| z[i] * mix[i * d + j]).sum();
                    v.push(s + 0.1 * rng.normal());
                }
            }
            v
        }
    };
    Tensor::matrix(rows, d, values)
}

/// Generates a labelled synthetic dataset and wraps it as a classification
/// task. Rows are laid out train, then val, then test.
pub fn generate_synthetic_classification(id: &str, spec: &SyntheticSpec) -> Result<Task> {
    spec.validate()?;
    let m = spec.total();
    let k = spec.num_classes;
    let x = synthetic_inputs(spec, m)?;
    let mut label_rng = Prng::new(spec.data_seed, StreamLabel::Labels, 0);
    let mut labels: Vec<usize> = match spec.relatedness {
        Relatedness::RandomLabels => (0..m).map(|_| label_rng.below(k)).collect(),
        r => {
            let (p, layers) = match r {
                Relatedness::SameTeacher => teacher_params(spec.teacher_seed, 0, spec.input_dim, spec.teacher_hidden, k),
                _ => teacher_params(spec.data_seed, 1, spec.input_dim, spec.teacher_hidden, k),
            };
            let mut tape = Tape::new();
            let xi = tape.constant(x.clone())?;
            let o = forward_mlp(&mut tape, &p, "", &layers, xi)?;
            let logits = tape.value(o);
            (0..m).map(|r| argmax(logits.row(r))).collect()
        }
    };
    let mut noise_rng = Prng::new(spec.data_seed, StreamLabel::Labels, 1);
    for l in labels.iter_mut() {
        let flip = noise_rng.unit() < spec.label_noise;
        let shift = 1 + noise_rng.below(k - 1);
        if flip {
            *l = (*l + shift) % k;
        }
    }
    let splits = Splits {
        train: (0..spec.train_size).collect(),
        val: (spec.train_size..spec.train_size + spec.val_size).collect(),
        test: (spec.train_size + spec.val_size..m).collect(),
    };
    let ds = LabeledDataset::new(x, Targets::Labels { labels, num_classes: k, mapping: None }, splits)?;
    Task::classification(id, ds)
}

/// Masked-feature reconstruction over the training rows of `dataset`.
///
/// Inputs are `[x ⊙ (1 - m), m]` (twice the feature width); the loss is the
/// squared error averaged over masked entries only.
pub fn derive_masked_reconstruction_task(
    id: &str,
    dataset: &LabeledDataset,
    mask_prob: f64,
    seed: u64,
) -> Result<Task> {
    if !(mask_prob > 0.0 && mask_prob < 1.0) {
        return Err(Error::Invalid(format!("mask_prob {mask_prob} outside (0, 1)")));
    }
    let rows = dataset.rows(Split::Train);
    if rows.is_empty() {
        return Err(Error::Invalid("dataset has no training rows".into()));
    }
    let ds = dataset.subset_as_train(rows)?;
    let d = ds.width();
    Ok(Task {
        id: id.to_string(),
        objective: Objective::MaskedReconstruction { mask_prob },
        dataset: Arc::new(ds),
        head: HeadSpec::reconstruction(d),
        mask_seed: seed,
        pad_indicator: false,
    })
}

/// Draws exactly `n × end_task_train_size` training rows of `pool` with
/// `(seed, data, 0)` and derives a reconstruction task over them.
pub fn derive_domain_task(
    id: &str,
    pool: &LabeledDataset,
    n: usize,
    end_task_train_size: usize,
    mask_prob: f64,
    seed: u64,
) -> Result<Task> {
    let want = n
        .checked_mul(end_task_train_size)
        .filter(|&w| w > 0)
        .ok_or_else(|| Error::Invalid("domain task size must be positive".into()))?;
    let rows = pool.rows(Split::Train);
    if rows.len() < want {
        return Err(Error::Invalid(format!(
            "pool too small: {} rows, need {want}",
            rows.len()
        )));
    }
    let picks = Prng::new(seed, StreamLabel::Data, 0).sample_indices(rows.len(), want);
    let chosen: Vec<usize> = picks.into_iter().map(|i| rows[i]).collect();
    let sub = pool.subset_as_train(&chosen)?;
    derive_masked_reconstruction_task(id, &sub, mask_prob, seed)
}
