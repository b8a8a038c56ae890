//! Training regimes: pretrain-then-finetune, fixed-weight multitasking and
//! meta-learned task weighting.
//!
//! All regimes share one step engine. The end task always sits at index 0
//! and draws its training batches from data stream 0 of the run seed;
//! auxiliary task `i` uses stream `i`. The meta head and the meta-gradient
//! batches use only meta-head streams, so switching the weight step size to
//! zero leaves the data order untouched.

pub mod config;
pub mod optim;
pub mod record;
pub mod weights;

pub use config::{AlignmentMeasure, MetaObjective, OptimizerConfig, OptimizerKind, TrainerConfig};
pub use optim::Optimizer;
pub use record::{parse_trajectory_csv, Evaluation, RunRecord, StepLog, StopReason};
pub use weights::{compute_alignment, update_task_weights, TaskWeights};

use crate::autodiff::{GradientMap, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::model::{BodySpec, MultiTaskModel, TaskId};
use crate::rng::{derive_seed, Prng, StreamLabel};
use crate::tasks::{BatchSampler, Split, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stop when none of the last `patience` metrics beats the best metric seen
/// before them by more than `min_delta`. Short histories always continue.
pub fn early_stop_check(history: &[f64], patience: usize, min_delta: f64) -> StopDecision {
    let patience = patience.max(1);
    if history.len() <= patience {
        return StopDecision::Continue;
    }
    let (before, recent) = history.split_at(history.len() - patience);
    let best = before.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if recent.iter().any(|&m| m > best + min_delta) {
        StopDecision::Continue
    } else {
        StopDecision::Stop
    }
}

/// Builds a model whose body fits every task and registers one head per task,
/// end task first.
pub fn build_for_tasks(body: BodySpec, end: &Task, aux: &[Task], seed: u64) -> Result<MultiTaskModel> {
    let mut model = crate::model::build_model(body, seed)?;
    for (i, t) in std::iter::once(end).chain(aux).enumerate() {
        model.register_task_head(&t.id, t.head.clone(), derive_seed(seed, StreamLabel::Init, 1 + i as u64))?;
    }
    model.set_end_task(&end.id)?;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaHeadFit {
    pub params: ParamSet,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn meta_seed(cfg: &TrainerConfig, step: usize) -> u64 {
    derive_seed(cfg.seed, StreamLabel::MetaHead, step as u64)
}

/// Draws a fresh meta head for `step` and fits it on one end-task training
/// batch with the body frozen. Only the meta head changes.
pub fn estimate_meta_head(
    model: &mut MultiTaskModel,
    end: &Task,
    cfg: &TrainerConfig,
    step: usize,
) -> Result<MetaHeadFit> {
    let train = end.rows(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let seed = meta_seed(cfg, step);
    model.reinit_meta_head(end.head.clone(), seed)?;
    let rows: Vec<usize> = Prng::new(seed, StreamLabel::MetaHead, 1)
        .sample_indices(train.len(), cfg.meta_head_batch)
        .into_iter()
        .map(|i| train[i])
        .collect();
    let batch = end.make_batch(&rows, 0)?;
    let rep = model.body_representation(&batch.inputs)?;

    let eval = |model: &MultiTaskModel| -> Result<(f64, GradientMap)> {
        let mut tape = Tape::new();
        let r = tape.constant(rep.clone())?;
        let o = model.meta_head_forward(&mut tape, r)?;
        let l = end.loss_on(&mut tape, o, &batch)?;
        let value = tape.scalar(l);
        let params = &model.meta_head().expect("meta head was just drawn").params;
        Ok((value, tape.backward(l, params)?))
    };

    let mut opt = Optimizer::new(cfg.optimizer, cfg.meta_head_lr, cfg.meta_head_weight_decay);
    let mut initial_loss = None;
    for _ in 0..cfg.meta_head_steps {
        let (l, g) = eval(model)?;
        initial_loss.get_or_insert(l);
        opt.step(model.meta_head_params_mut().expect("meta head present"), &g)?;
    }
    let (final_loss, _) = eval(model)?;
    Ok(MetaHeadFit {
        params: model.meta_head().expect("meta head present").params.clone(),
        initial_loss: initial_loss.unwrap_or(final_loss),
        final_loss,
    })
}

/// Body gradient of the end-task validation loss on one validation batch,
/// through the meta head or through the end-task head.
fn meta_gradient(model: &mut MultiTaskModel, end: &Task, cfg: &TrainerConfig, step: usize) -> Result<GradientMap> {
    if cfg.meta_objective == MetaObjective::SeparateHead {
        estimate_meta_head(model, end, cfg, step)?;
    }
    let val = end.rows(Split::Val);
    if val.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let rows: Vec<usize> = Prng::new(meta_seed(cfg, step), StreamLabel::MetaHead, 2)
        .sample_indices(val.len(), cfg.batch_size_for(&end.id))
        .into_iter()
        .map(|i| val[i])
        .collect();
    let batch = end.make_batch(&rows, 0)?;
    let mut tape = Tape::new();
    let x = tape.constant(batch.inputs.clone())?;
    let h = model.body_forward(&mut tape, x)?;
    let o = match cfg.meta_objective {
        MetaObjective::SeparateHead => model.meta_head_forward(&mut tape, h)?,
        MetaObjective::SameHead => model.head_forward(&mut tape, &end.id, h)?,
    };
    let l = end.loss_on(&mut tape, o, &batch)?;
    tape.backward(l, model.body())
}

struct TaskGrad {
    task: usize,
    loss: f64,
    body: GradientMap,
    head: GradientMap,
}

fn diverged(step: usize, task: &str, e: Error) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Divergence { step, task: task.to_string(), detail },
        other => other,
    }
}

struct Engine<'a> {
    cfg: &'a TrainerConfig,
    tasks: Vec<&'a Task>,
    samplers: Vec<BatchSampler>,
    body_opt: Optimizer,
    head_opts: Vec<Optimizer>,
    record: RunRecord,
    history: Vec<f64>,
    best: Option<(f64, ParamSet)>,
    last_val: f64,
}

impl<'a> Engine<'a> {
    fn new(
        strategy: &str,
        model: &MultiTaskModel,
        end: &'a Task,
        aux: &'a [Task],
        cfg: &'a TrainerConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if !end.is_classification() {
            return Err(Error::Invalid(format!("end task `{}` must be a classification task", end.id)));
        }
        if end.rows(Split::Val).is_empty() {
            return Err(Error::Invalid(format!("end task `{}` has no validation rows", end.id)));
        }
        if model.end_task() != Some(end.id.as_str()) {
            return Err(Error::Invalid(format!("model end task is not `{}`", end.id)));
        }
        let tasks: Vec<&Task> = std::iter::once(end).chain(aux).collect();
        for (i, t) in tasks.iter().enumerate() {
            model.head(&t.id)?;
            if tasks[..i].iter().any(|o| o.id == t.id) {
                return Err(Error::Duplicate(t.id.clone()));
            }
            if t.rows(Split::Train).is_empty() {
                return Err(Error::Invalid(format!("task `{}` has no training rows", t.id)));
            }
        }
        let ids: Vec<TaskId> = tasks.iter().map(|t| t.id.clone()).collect();
        let samplers = (0..tasks.len())
            .map(|i| BatchSampler::new(Split::Train, cfg.seed, i as u64))
            .collect();
        let mut engine = Engine {
            cfg,
            samplers,
            body_opt: Optimizer::new(cfg.optimizer, cfg.body_lr, 0.0),
            head_opts: Vec::new(),
            record: RunRecord::new(strategy, ids, cfg),
            history: Vec::new(),
            best: None,
            last_val: 0.0,
            tasks,
        };
        engine.reset_phase();
        Ok(engine)
    }

    /// Fresh optimizers and a fresh early-stopping window.
    fn reset_phase(&mut self) {
        self.body_opt = Optimizer::new(self.cfg.optimizer, self.cfg.body_lr, 0.0);
        self.head_opts = self
            .tasks
            .iter()
            .map(|_| Optimizer::new(self.cfg.optimizer, self.cfg.head_lr, 0.0))
            .collect();
        self.history.clear();
        self.best = None;
    }

    fn trainable(&self, model: &MultiTaskModel) -> Result<ParamSet> {
        let mut p = model.body().clone();
        for t in &self.tasks {
            p.extend_disjoint(&model.head(&t.id)?.params)?;
        }
        Ok(p)
    }

    /// Scores the end task on validation rows, keeps the best parameters and
    /// reports whether the plateau rule fires.
    fn evaluate(&mut self, model: &MultiTaskModel, step: usize) -> Result<bool> {
        let end = self.tasks[0];
        let m = end.evaluate(model, &end.id, Split::Val).map_err(|e| diverged(step, &end.id, e))?;
        self.record.evaluations.push(Evaluation { step, accuracy: m.accuracy, macro_f1: m.macro_f1, loss: m.loss });
        self.last_val = m.accuracy;
        if self.best.as_ref().map_or(true, |(b, _)| m.accuracy > *b) {
            self.best = Some((m.accuracy, self.trainable(model)?));
        }
        self.history.push(m.accuracy);
        Ok(early_stop_check(&self.history, self.cfg.patience, self.cfg.min_delta) == StopDecision::Stop)
    }

    fn gradients(&mut self, model: &MultiTaskModel, step: usize, active: &[usize]) -> Result<Vec<TaskGrad>> {
        let mut out = Vec::with_capacity(active.len());
        for &i in active {
            let task = self.tasks[i];
            let wrap = |e| diverged(step, &task.id, e);
            let batch = self.samplers[i].next_batch(task, self.cfg.batch_size_for(&task.id))?;
            let mut tape = Tape::new();
            let x = tape.constant(batch.inputs.clone())?;
            let h = model.body_forward(&mut tape, x).map_err(wrap)?;
            let o = model.head_forward(&mut tape, &task.id, h).map_err(wrap)?;
            let l = task.loss_on(&mut tape, o, &batch).map_err(wrap)?;
            let loss = tape.scalar(l);
            let mut g = tape
                .backward_split(l, &[model.body(), &model.head(&task.id)?.params])
                .map_err(wrap)?;
            let head = g.pop().expect("two gradient maps");
            let body = g.pop().expect("two gradient maps");
            out.push(TaskGrad { task: i, loss, body, head });
        }
        Ok(out)
    }

    /// Body moves along `sum_i coeffs[i] * g_i`; each head along its own
    /// task gradient.
    fn apply(&mut self, model: &mut MultiTaskModel, step: usize, grads: &[TaskGrad], coeffs: &[f64]) -> Result<()> {
        let mut combined = GradientMap::zeros_like(model.body());
        for g in grads {
            combined.accumulate(&g.body, coeffs[g.task])?;
        }
        if !combined.all_finite() {
            return Err(Error::Divergence { step, task: "body".into(), detail: "combined gradient".into() });
        }
        self.body_opt
            .step(model.body_mut(), &combined)
            .map_err(|e| diverged(step, "body", e))?;
        for g in grads {
            let id = &self.tasks[g.task].id;
            self.head_opts[g.task]
                .step(model.head_params_mut(id)?, &g.head)
                .map_err(|e| diverged(step, id, e))?;
        }
        Ok(())
    }

    fn losses(&self, grads: &[TaskGrad]) -> Vec<Option<f64>> {
        let mut l = vec![None; self.tasks.len()];
        for g in grads {
            l[g.task] = Some(g.loss);
        }
        l
    }

    /// Runs steps `start+1..=stop`. With `early_stop` the end task is scored
    /// at `start`, every `val_period` steps and at the last step.
    fn run_phase<F>(
        &mut self,
        model: &mut MultiTaskModel,
        start: usize,
        stop: usize,
        early_stop: bool,
        mut step_fn: F,
    ) -> Result<StopReason>
    where
        F: FnMut(&mut Self, &mut MultiTaskModel, usize) -> Result<(Vec<f64>, Vec<Option<f64>>)>,
    {
        if early_stop {
            self.evaluate(model, start)?;
        }
        for s in start + 1..=stop {
            let (alpha, loss) = step_fn(self, model, s)?;
            let mut plateau = false;
            if early_stop && ((s - start) % self.cfg.val_period == 0 || s == stop) {
                plateau = self.evaluate(model, s)?;
            }
            if s % self.cfg.log_period == 0 || s == stop || plateau {
                self.record.steps.push(StepLog { step: s, alpha, loss, val_metric: self.last_val });
            }
            if plateau {
                return Ok(StopReason::Plateau);
            }
        }
        Ok(StopReason::MaxSteps)
    }

    /// Restores the best validated parameters and scores the test split.
    fn finish(mut self, model: &mut MultiTaskModel, reason: StopReason) -> Result<RunRecord> {
        let end = self.tasks[0];
        if let Some((acc, params)) = self.best.take() {
            model.load_params(&params)?;
            self.record.final_val_metric = acc;
        }
        let test = end.evaluate(model, &end.id, Split::Test)?;
        self.record.test_metric = test.accuracy;
        self.record.test_macro_f1 = test.macro_f1;
        self.record.stop_reason = reason;
        Ok(self.record)
    }

    fn end_only_step(&mut self, model: &mut MultiTaskModel, s: usize) -> Result<(Vec<f64>, Vec<Option<f64>>)> {
        let n = self.tasks.len();
        let mut coeffs = vec![0.0; n];
        coeffs[0] = 1.0;
        let g = self.gradients(model, s, &[0])?;
        self.apply(model, s, &g, &coeffs)?;
        Ok((coeffs, self.losses(&g)))
    }
}

/// Trains body and end-task head on the end task alone.
pub fn finetune(model: &mut MultiTaskModel, end: &Task, cfg: &TrainerConfig) -> Result<RunRecord> {
    let mut e = Engine::new("finetune", model, end, &[], cfg)?;
    let reason = e.run_phase(model, 0, cfg.max_steps, true, Engine::end_only_step)?;
    e.finish(model, reason)
}

/// Minimizes the plain sum of auxiliary losses for `cfg.pretrain_steps`,
/// then fine-tunes on the end task for the rest of `cfg.max_steps`. The end
/// task's head and batches are untouched during the first phase.
pub fn pretrain_then_finetune(
    model: &mut MultiTaskModel,
    aux: &[Task],
    end: &Task,
    cfg: &TrainerConfig,
) -> Result<RunRecord> {
    if aux.is_empty() {
        return Err(Error::Invalid("pretraining needs at least one auxiliary task".into()));
    }
    let mut e = Engine::new("pretrain_finetune", model, end, aux, cfg)?;
    let n = aux.len();
    let p = cfg.pretrain_steps;
    if p > 0 {
        e.evaluate(model, 0)?;
        let active: Vec<usize> = (1..=n).collect();
        let mut coeffs = vec![1.0; n + 1];
        coeffs[0] = 0.0;
        let mut alpha = vec![1.0 / n as f64; n + 1];
        alpha[0] = 0.0;
        e.run_phase(model, 0, p, false, |e, m, s| {
            let g = e.gradients(m, s, &active)?;
            e.apply(m, s, &g, &coeffs)?;
            Ok((alpha.clone(), e.losses(&g)))
        })?;
        e.reset_phase();
    }
    let reason = e.run_phase(model, p, cfg.max_steps, true, Engine::end_only_step)?;
    e.finish(model, reason)
}

/// Trains every task jointly with fixed mixture weights.
pub fn train_multitask(
    model: &mut MultiTaskModel,
    end: &Task,
    aux: &[Task],
    weights: &TaskWeights,
    cfg: &TrainerConfig,
) -> Result<RunRecord> {
    let mut e = Engine::new("tartan_mt", model, end, aux, cfg)?;
    if !weights.covers(&e.record.tasks) {
        return Err(Error::KeyMismatch("task weights do not cover the task set".into()));
    }
    let alpha: Vec<f64> = e.record.tasks.iter().map(|t| weights.alpha(t).expect("covered")).collect();
    let active: Vec<usize> = (0..alpha.len()).collect();
    let reason = e.run_phase(model, 0, cfg.max_steps, true, |e, m, s| {
        let g = e.gradients(m, s, &active)?;
        e.apply(m, s, &g, &alpha)?;
        Ok((alpha.clone(), e.losses(&g)))
    })?;
    e.finish(model, reason)
}

/// Trains every task jointly while learning the mixture weights online from
/// the alignment of each task's body gradient with a validation
/// meta-gradient. Weights start uniform and are updated every
/// `meta_update_period` steps, before the parameter update of that step.
pub fn train_tartan_meta(
    model: &mut MultiTaskModel,
    end: &Task,
    aux: &[Task],
    cfg: &TrainerConfig,
) -> Result<RunRecord> {
    let mut e = Engine::new("tartan_meta", model, end, aux, cfg)?;
    let mut weights = TaskWeights::uniform(e.record.tasks.clone())?;
    let active: Vec<usize> = (0..e.tasks.len()).collect();
    let reason = e.run_phase(model, 0, cfg.max_steps, true, |e, m, s| {
        let g = e.gradients(m, s, &active)?;
        if (s - 1) % cfg.meta_update_period == 0 {
            let g_meta = meta_gradient(m, end, cfg, s).map_err(|err| diverged(s, &end.id, err))?;
            let mut al = Vec::with_capacity(g.len());
            for tg in &g {
                let a = compute_alignment(&g_meta, &tg.body, cfg.alignment)?;
                al.push((e.tasks[tg.task].id.clone(), a));
            }
            weights = update_task_weights(&weights, &al, cfg.weight_lr).map_err(|err| diverged(s, "weights", err))?;
        }
        let alpha = weights.normalized().to_vec();
        e.apply(m, s, &g, &alpha)?;
        Ok((alpha, e.losses(&g)))
    })?;
    e.finish(model, reason)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use crate::tasks::{generate_synthetic_classification, Relatedness, SyntheticSpec};

    fn spec(data_seed: u64, relatedness: Relatedness) -> SyntheticSpec {
        SyntheticSpec {
            teacher_seed: 3,
            data_seed,
            input_dim: 4,
            num_classes: 2,
            train_size: 48,
            val_size: 24,
            test_size: 24,
            label_noise: 0.0,
            relatedness,
            teacher_hidden: 8,
            latent_dim: None,
        }
    }

    fn fixture() -> (Task, Vec<Task>, MultiTaskModel) {
        let end = generate_synthetic_classification("end", &spec(1, Relatedness::SameTeacher)).unwrap();
        let aux = vec![
            generate_synthetic_classification("helper", &spec(2, Relatedness::SameTeacher)).unwrap(),
            generate_synthetic_classification("noise", &spec(3, Relatedness::RandomLabels)).unwrap(),
        ];
        let body = BodySpec { input_dim: 4, hidden_dims: vec![8], activation: Activation::Tanh };
        let model = build_for_tasks(body, &end, &aux, 7).unwrap();
        (end, aux, model)
    }

    fn cfg(steps: usize) -> TrainerConfig {
        TrainerConfig {
            body_lr: 0.01,
            head_lr: 0.01,
            batch_size: 8,
            max_steps: steps,
            val_period: 5,
            patience: 100,
            seed: 11,
            ..Default::default()
        }
    }

    fn end_losses(r: &RunRecord) -> Vec<f64> {
        r.loss_series(&r.tasks[0]).unwrap().into_iter().map(Option::unwrap).collect()
    }

    #[test]
    fn early_stop_examples() {
        assert_eq!(early_stop_check(&[], 2, 0.0), StopDecision::Continue);
        assert_eq!(early_stop_check(&[0.5, 0.6, 0.7], 2, 0.0), StopDecision::Continue);
        assert_eq!(early_stop_check(&[0.7, 0.69, 0.69, 0.69], 3, 0.001), StopDecision::Stop);
        let rising: Vec<f64> = (0..50).map(|i| i as f64).collect();
        for k in 1..=rising.len() {
            assert_eq!(early_stop_check(&rising[..k], 1, 0.0), StopDecision::Continue);
        }
    }

    #[test]
    fn zero_budget_keeps_the_initial_metric_only() {
        let (end, _, mut model) = fixture();
        let before = model.clone();
        let r = finetune(&mut model, &end, &cfg(0)).unwrap();
        assert!(r.steps.is_empty());
        assert_eq!(r.evaluations.len(), 1);
        assert_eq!(r.final_val_metric, r.evaluations[0].accuracy);
        assert_eq!(model, before);
    }

    #[test]
    fn zero_pretraining_is_plain_finetuning() {
        let (end, aux, model) = fixture();
        let c = cfg(20);
        let a = finetune(&mut model.clone(), &end, &c).unwrap();
        let b = pretrain_then_finetune(&mut model.clone(), &aux, &end, &c).unwrap();
        assert_eq!(end_losses(&a), end_losses(&b));
        assert_eq!(a.final_val_metric, b.final_val_metric);
        assert_eq!(a.test_metric, b.test_metric);
    }

    #[test]
    fn pretraining_leaves_the_end_head_alone() {
        let (end, aux, mut model) = fixture();
        let head = model.head("end").unwrap().params.clone();
        let body = model.body().clone();
        let c = TrainerConfig { pretrain_steps: 15, ..cfg(15) };
        let r = pretrain_then_finetune(&mut model, &aux, &end, &c).unwrap();
        assert_eq!(model.head("end").unwrap().params, head);
        assert_ne!(model.body(), &body);
        assert!(r.steps.iter().all(|s| s.loss[0].is_none() && s.alpha[0] == 0.0));
    }

    #[test]
    fn collapsed_mixture_matches_finetuning() {
        let (end, aux, model) = fixture();
        let c = cfg(25);
        let ft = finetune(&mut model.clone(), &end, &c).unwrap();
        let ids = vec!["end".to_string(), "helper".into(), "noise".into()];
        let w = TaskWeights::from_raw(ids, vec![1000.0, -1000.0, -1000.0]).unwrap();
        assert_eq!(w.normalized(), &[1.0, 0.0, 0.0]);
        let mt = train_multitask(&mut model.clone(), &end, &aux, &w, &c).unwrap();
        for (a, b) in end_losses(&ft).iter().zip(end_losses(&mt)) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert_eq!(ft.evaluations.iter().map(|e| e.accuracy).collect::<Vec<_>>(),
                   mt.evaluations.iter().map(|e| e.accuracy).collect::<Vec<_>>());
    }

    #[test]
    fn frozen_meta_weights_match_uniform_multitask() {
        let (end, aux, model) = fixture();
        let c = TrainerConfig { weight_lr: 0.0, ..cfg(25) };
        let ids = vec!["end".to_string(), "helper".into(), "noise".into()];
        let mt = train_multitask(&mut model.clone(), &end, &aux, &TaskWeights::uniform(ids).unwrap(), &c).unwrap();
        let meta = train_tartan_meta(&mut model.clone(), &end, &aux, &c).unwrap();
        assert_eq!(mt.steps.len(), meta.steps.len());
        for (a, b) in mt.steps.iter().zip(&meta.steps) {
            for (x, y) in a.loss.iter().zip(&b.loss) {
                assert!((x.unwrap() - y.unwrap()).abs() <= 1e-10);
            }
            assert_eq!(a.val_metric, b.val_metric);
        }
    }

    #[test]
    fn shifted_weights_give_the_same_run() {
        let (end, aux, model) = fixture();
        let ids = vec!["end".to_string(), "helper".into(), "noise".into()];
        let w = TaskWeights::from_raw(ids, vec![0.3, -0.2, 0.1]).unwrap();
        let c = cfg(15);
        let a = train_multitask(&mut model.clone(), &end, &aux, &w, &c).unwrap();
        let b = train_multitask(&mut model.clone(), &end, &aux, &w.shifted(42.0).unwrap(), &c).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            for (p, q) in x.loss.iter().zip(&y.loss) {
                assert!((p.unwrap() - q.unwrap()).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn meta_run_rows_are_distributions() {
        let (end, aux, mut model) = fixture();
        let c = TrainerConfig { weight_lr: 0.5, ..cfg(20) };
        let r = train_tartan_meta(&mut model, &end, &aux, &c).unwrap();
        assert_eq!(r.steps.len(), 20);
        for (i, s) in r.steps.iter().enumerate() {
            assert_eq!(s.step, i + 1);
            assert!((s.alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(s.alpha.iter().all(|&a| a > 0.0));
        }
        assert_ne!(r.steps[0].alpha, r.steps[19].alpha);
    }

    #[test]
    fn meta_head_fit_is_isolated() {
        let (end, _, mut model) = fixture();
        let mut c = cfg(1);
        c.meta_head_lr = 0.05;
        let before = model.clone();
        let fit = estimate_meta_head(&mut model, &end, &c, 3).unwrap();
        assert!(fit.final_loss < fit.initial_loss);
        assert_eq!(model.body(), before.body());
        for t in ["end", "helper", "noise"] {
            assert_eq!(model.head(t).unwrap(), before.head(t).unwrap());
        }

        let zero = TrainerConfig { meta_head_steps: 0, ..c.clone() };
        let fit0 = estimate_meta_head(&mut model, &end, &zero, 3).unwrap();
        let mut fresh = before.clone();
        fresh.reinit_meta_head(end.head.clone(), meta_seed(&zero, 3)).unwrap();
        assert_eq!(fit0.params, fresh.meta_head().unwrap().params);
    }

    #[test]
    fn joint_update_never_touches_the_meta_head() {
        let (end, aux, model) = fixture();
        let c = TrainerConfig { meta_update_period: 1, ..cfg(1) };
        let mut trained = model.clone();
        train_tartan_meta(&mut trained, &end, &aux, &c).unwrap();
        let fit = estimate_meta_head(&mut model.clone(), &end, &c, 1).unwrap();
        assert_eq!(trained.meta_head().unwrap().params, fit.params);
    }

    #[test]
    fn huge_steps_abort_with_divergence() {
        let (end, _, _) = fixture();
        let body = BodySpec { input_dim: 4, hidden_dims: vec![8], activation: Activation::Linear };
        let mut model = build_for_tasks(body, &end, &[], 7).unwrap();
        let c = TrainerConfig {
            body_lr: 1e305,
            head_lr: 1e305,
            optimizer: OptimizerConfig { kind: OptimizerKind::Sgd, ..Default::default() },
            ..cfg(10)
        };
        match finetune(&mut model, &end, &c) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (end, aux, model) = fixture();
        let c = TrainerConfig { weight_lr: 0.3, ..cfg(12) };
        let a = train_tartan_meta(&mut model.clone(), &end, &aux, &c).unwrap();
        let b = train_tartan_meta(&mut model.clone(), &end, &aux, &c).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn plateau_stops_early_and_restores_the_best() {
        let (end, _, mut model) = fixture();
        let c = TrainerConfig { patience: 1, val_period: 1, body_lr: 1e-9, head_lr: 1e-9, ..cfg(200) };
        let r = finetune(&mut model, &end, &c).unwrap();
        assert_eq!(r.stop_reason, StopReason::Plateau);
        assert!(r.steps.len() < 200);
        let best = r.evaluations.iter().map(|e| e.accuracy).fold(0.0, f64::max);
        assert_eq!(r.final_val_metric, best);
        let again = end.evaluate(&model, "end", Split::Val).unwrap();
        assert_eq!(again.accuracy, best);
    }
}
