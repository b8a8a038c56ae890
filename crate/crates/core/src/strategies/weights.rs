use serde::{Deserialize, Serialize};

use super::config::AlignmentMeasure;
use crate::autodiff::GradientMap;
use crate::error::{Error, Result};
use crate::model::TaskId;

/// Raw task weights and their softmax mixture, end task first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    tasks: Vec<TaskId>,
    raw: Vec<f64>,
    normalized: Vec<f64>,
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let mx = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|w| (w - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl TaskWeights {
    pub fn from_raw(tasks: Vec<TaskId>, raw: Vec<f64>) -> Result<Self> {
        if tasks.is_empty() || tasks.len() != raw.len() {
            return Err(Error::Invalid(format!("{} tasks for {} weights", tasks.len(), raw.len())));
        }
        if raw.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("task weights".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].contains(t) {
                return Err(Error::Duplicate(t.clone()));
            }
        }
        let normalized = softmax(&raw);
        Ok(TaskWeights { tasks, raw, normalized })
    }

    /// Every raw weight set to `1 / n`.
    pub fn uniform(tasks: Vec<TaskId>) -> Result<Self> {
        let n = tasks.len();
        Self::from_raw(tasks, vec![1.0 / n as f64; n])
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn alpha(&self, task: &str) -> Option<f64> {
        self.tasks.iter().position(|t| t == task).map(|i| self.normalized[i])
    }

    pub fn raw_of(&self, task: &str) -> Option<f64> {
        self.tasks.iter().position(|t| t == task).map(|i| self.raw[i])
    }

    pub fn covers(&self, tasks: &[TaskId]) -> bool {
        tasks.len() == self.tasks.len() && tasks.iter().all(|t| self.tasks.contains(t))
    }

    /// Adds a constant to every raw weight.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::from_raw(self.tasks.clone(), self.raw.iter().map(|w| w + c).collect())
    }
}

/// `raw_i <- raw_i + eta * alignment_i` for every task, then renormalize.
/// `alignments` is `(task, value)` pairs and must cover every task.
pub fn update_task_weights(weights: &TaskWeights, alignments: &[(TaskId, f64)], eta: f64) -> Result<TaskWeights> {
    let mut raw = weights.raw.clone();
    for (i, task) in weights.tasks.iter().enumerate() {
        let a = alignments
            .iter()
            .find(|(t, _)| t == task)
            .map(|(_, a)| *a)
            .ok_or_else(|| Error::KeyMismatch(format!("no alignment for `{task}`")))?;
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("alignment for `{task}`")));
        }
        raw[i] += eta * a;
    }
    TaskWeights::from_raw(weights.tasks.clone(), raw)
}

/// Cosine or dot product of two body gradients, flattened in the order of
/// `g_meta`. Cosine is 0 when either norm is below `1e-12`.
pub fn compute_alignment(g_meta: &GradientMap, g_task: &GradientMap, measure: AlignmentMeasure) -> Result<f64> {
    if g_meta.len() != g_task.len() {
        return Err(Error::KeyMismatch(format!("{} vs {} gradient entries", g_meta.len(), g_task.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (name, a) in g_meta.iter() {
        let b = g_task.get(name).ok_or_else(|| Error::KeyMismatch(name.to_string()))?;
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!("gradient {name}")));
        }
        for (x, y) in a.values().iter().zip(b.values()) {
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    Ok(match measure {
        AlignmentMeasure::Dot => dot,
        AlignmentMeasure::Cosine => {
            let (na, nb) = (na.sqrt(), nb.sqrt());
            if na < 1e-12 || nb < 1e-12 {
                0.0
            } else {
                dot / (na * nb)
            }
        }
    })
}
