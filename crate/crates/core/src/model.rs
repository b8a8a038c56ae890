//! Shared-body multi-head model.
//!
//! Parameter names are namespaced so every component stays disjoint:
//! `body.layer{k}.*`, `head.{task}.layer{k}.*` and `meta.layer{k}.*`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{forward_mlp, init_mlp, Activation, LayerSpec, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{Prng, StreamLabel};

pub type TaskId = String;

pub const BODY_PREFIX: &str = "body.";
pub const META_PREFIX: &str = "meta.";

pub fn head_prefix(task: &str) -> String {
    format!("head.{task}.")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl BodySpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Invalid(format!("body spec {self:?}")));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.windows(2)
            .map(|w| LayerSpec::new(w[0], w[1], self.activation))
            .collect()
    }

    pub fn output_width(&self) -> usize {
        *self.hidden_dims.last().unwrap_or(&self.input_dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classification,
    Regression,
    Reconstruction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub output_dim: usize,
    #[serde(default)]
    pub hidden: Option<usize>,
    pub kind: HeadKind,
}

impl HeadSpec {
    pub fn classification(classes: usize) -> Self {
        HeadSpec { output_dim: classes, hidden: None, kind: HeadKind::Classification }
    }

    pub fn reconstruction(width: usize) -> Self {
        HeadSpec { output_dim: width, hidden: None, kind: HeadKind::Reconstruction }
    }

    /// Hidden head layers use tanh; the output layer is linear.
    pub fn layers(&self, input_width: usize) -> Vec<LayerSpec> {
        match self.hidden {
            Some(h) => vec![
                LayerSpec::new(input_width, h, Activation::Tanh),
                LayerSpec::new(h, self.output_dim, Activation::Linear),
            ],
            None => vec![LayerSpec::new(input_width, self.output_dim, Activation::Linear)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub spec: HeadSpec,
    pub params: ParamSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskModel {
    body_spec: BodySpec,
    body: ParamSet,
    heads: IndexMap<TaskId, Head>,
    end_task: Option<TaskId>,
    meta_head: Option<Head>,
}

/// Builds a body initialized uniformly in `±1/sqrt(fan_in)` from
/// `(seed, init, 0)`. No heads are registered.
pub fn build_model(body: BodySpec, seed: u64) -> Result<MultiTaskModel> {
    body.validate()?;
    let mut params = ParamSet::new();
    init_mlp(&mut params, BODY_PREFIX, &body.layers(), &mut Prng::new(seed, StreamLabel::Init, 0))?;
    Ok(MultiTaskModel {
        body_spec: body,
        body: params,
        heads: IndexMap::new(),
        end_task: None,
        meta_head: None,
    })
}

fn init_head(spec: &HeadSpec, prefix: &str, width: usize, rng: &mut Prng) -> Result<ParamSet> {
    if spec.output_dim == 0 || spec.hidden == Some(0) {
        return Err(Error::Invalid(format!("head spec {spec:?}")));
    }
    let mut p = ParamSet::new();
    init_mlp(&mut p, prefix, &spec.layers(width), rng)?;
    Ok(p)
}

impl MultiTaskModel {
    pub fn body_spec(&self) -> &BodySpec {
        &self.body_spec
    }

    pub fn body(&self) -> &ParamSet {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut ParamSet {
        &mut self.body
    }

    pub fn end_task(&self) -> Option<&str> {
        self.end_task.as_deref()
    }

    pub fn head(&self, task: &str) -> Result<&Head> {
        self.heads.get(task).ok_or_else(|| Error::Unknown(task.to_string()))
    }

    pub fn head_params_mut(&mut self, task: &str) -> Result<&mut ParamSet> {
        self.heads
            .get_mut(task)
            .map(|h| &mut h.params)
            .ok_or_else(|| Error::Unknown(task.to_string()))
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.heads.keys().map(String::as_str)
    }

    pub fn meta_head(&self) -> Option<&Head> {
        self.meta_head.as_ref()
    }

    pub fn meta_head_params_mut(&mut self) -> Option<&mut ParamSet> {
        self.meta_head.as_mut().map(|h| &mut h.params)
    }

    /// Registers a head for `task_id` initialized from `(seed, init, 1)`.
    pub fn register_task_head(&mut self, task_id: &str, head: HeadSpec, seed: u64) -> Result<TaskId> {
        if self.heads.contains_key(task_id) {
            return Err(Error::Duplicate(task_id.to_string()));
        }
        if task_id.is_empty() || task_id.contains(',') {
            return Err(Error::Invalid(format!("task id `{task_id}`")));
        }
        if head.kind == HeadKind::Reconstruction {
            // The reconstruction target is the raw feature row; with a mask
            // indicator channel the body sees twice that width.
            let d = self.body_spec.input_dim;
            if head.output_dim != d && 2 * head.output_dim != d {
                return Err(Error::Shape(format!(
                    "reconstruction head width {} for body input {d}",
                    head.output_dim
                )));
            }
        }
        let prefix = head_prefix(task_id);
        let params = init_head(
            &head,
            &prefix,
            self.body_spec.output_width(),
            &mut Prng::new(seed, StreamLabel::Init, 1),
        )?;
        let mut all = self.all_params();
        all.extend_disjoint(&params)?;
        self.heads.insert(task_id.to_string(), Head { spec: head, params });
        Ok(task_id.to_string())
    }

    pub fn set_end_task(&mut self, task_id: &str) -> Result<()> {
        if !self.heads.contains_key(task_id) {
            return Err(Error::Unknown(task_id.to_string()));
        }
        self.end_task = Some(task_id.to_string());
        Ok(())
    }

    /// Discards any previous meta head and draws a new one from
    /// `(seed, meta_head, 0)`.
    pub fn reinit_meta_head(&mut self, head: HeadSpec, seed: u64) -> Result<()> {
        let end = self.end_task.as_ref().ok_or_else(|| Error::Invalid("no end task registered".into()))?;
        let end_kind = self.heads[end].spec.kind;
        if head.kind != end_kind {
            return Err(Error::Invalid(format!(
                "meta head kind {:?} does not match end task kind {end_kind:?}",
                head.kind
            )));
        }
        let params = init_head(
            &head,
            META_PREFIX,
            self.body_spec.output_width(),
            &mut Prng::new(seed, StreamLabel::MetaHead, 0),
        )?;
        self.meta_head = Some(Head { spec: head, params });
        Ok(())
    }

    pub fn body_forward(&self, tape: &mut Tape, inputs: Var) -> Result<Var> {
        let w = tape.value(inputs).cols();
        if w != self.body_spec.input_dim {
            return Err(Error::Shape(format!(
                "input width {w}, body expects {}",
                self.body_spec.input_dim
            )));
        }
        forward_mlp(tape, &self.body, BODY_PREFIX, &self.body_spec.layers(), inputs)
    }

    pub fn head_forward(&self, tape: &mut Tape, task: &str, rep: Var) -> Result<Var> {
        let head = self.head(task)?;
        let layers = head.spec.layers(self.body_spec.output_width());
        forward_mlp(tape, &head.params, &head_prefix(task), &layers, rep)
    }

    pub fn meta_head_forward(&self, tape: &mut Tape, rep: Var) -> Result<Var> {
        let head = self.meta_head.as_ref().ok_or_else(|| Error::Invalid("no meta head".into()))?;
        let layers = head.spec.layers(self.body_spec.output_width());
        forward_mlp(tape, &head.params, META_PREFIX, &layers, rep)
    }

    /// Value-only forward through the body.
    pub fn body_representation(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone())?;
        let h = self.body_forward(&mut tape, x)?;
        Ok(tape.value(h).clone())
    }

    /// Value-only forward through body and the task's head.
    pub fn predict(&self, task: &str, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone())?;
        let h = self.body_forward(&mut tape, x)?;
        let o = self.head_forward(&mut tape, task, h)?;
        Ok(tape.value(o).clone())
    }

    /// Body, task heads and meta head merged into one set.
    pub fn all_params(&self) -> ParamSet {
        let mut all = self.body.clone();
        for h in self.heads.values() {
            all.extend_disjoint(&h.params).expect("head names are disjoint");
        }
        if let Some(m) = &self.meta_head {
            all.extend_disjoint(&m.params).expect("meta head names are disjoint");
        }
        all
    }

    /// Overwrites every parameter named in `params`. Names not present in
    /// the model, or shape changes, are errors.
    pub fn load_params(&mut self, params: &ParamSet) -> Result<()> {
        for (name, t) in params.iter() {
            let slot = if name.starts_with(BODY_PREFIX) {
                self.body.get_mut(name)
            } else if name.starts_with(META_PREFIX) {
                self.meta_head.as_mut().and_then(|h| h.params.get_mut(name))
            } else {
                self.heads.values_mut().find_map(|h| h.params.get_mut(name))
            };
            let slot = slot.ok_or_else(|| Error::Unknown(name.to_string()))?;
            if slot.shape() != t.shape() {
                return Err(Error::Shape(format!("checkpoint entry {name}")));
            }
            *slot = t.clone();
        }
        Ok(())
    }
}
