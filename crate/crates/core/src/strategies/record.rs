use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use crate::error::{Error, Result};
use crate::model::TaskId;
use crate::rng::PRNG_ALGORITHM;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxSteps,
}

/// One trajectory row. `alpha` and `loss` are aligned with
/// [`RunRecord::tasks`]; a task not trained at this step has no loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub alpha: Vec<f64>,
    pub loss: Vec<Option<f64>>,
    /// Most recent end-task validation accuracy.
    pub val_metric: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub step: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub strategy: String,
    pub seed: u64,
    /// End task first, then auxiliary tasks.
    pub tasks: Vec<TaskId>,
    pub metric: String,
    pub steps: Vec<StepLog>,
    pub evaluations: Vec<Evaluation>,
    pub final_val_metric: f64,
    pub test_metric: f64,
    pub test_macro_f1: f64,
    pub stop_reason: StopReason,
    pub prng: String,
    pub config: TrainerConfig,
}

impl RunRecord {
    pub fn new(strategy: &str, tasks: Vec<TaskId>, config: &TrainerConfig) -> Self {
        RunRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            strategy: strategy.to_string(),
            seed: config.seed,
            tasks,
            metric: "accuracy".into(),
            steps: Vec::new(),
            evaluations: Vec::new(),
            final_val_metric: 0.0,
            test_metric: 0.0,
            test_macro_f1: 0.0,
            stop_reason: StopReason::MaxSteps,
            prng: PRNG_ALGORITHM.into(),
            config: config.clone(),
        }
    }

    pub fn task_index(&self, task: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t == task)
    }

    /// Loss column of one task, `None` where it was not trained.
    pub fn loss_series(&self, task: &str) -> Option<Vec<Option<f64>>> {
        let i = self.task_index(task)?;
        Some(self.steps.iter().map(|s| s.loss[i]).collect())
    }

    pub fn alpha_series(&self, task: &str) -> Option<Vec<f64>> {
        let i = self.task_index(task)?;
        Some(self.steps.iter().map(|s| s.alpha[i]).collect())
    }

    pub fn val_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.val_metric).collect()
    }

    /// `step,alpha_<task>..,loss_<task>..,val_metric`, one row per logged
    /// step. Numbers use the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step");
        for t in &self.tasks {
            write!(s, ",alpha_{t}").unwrap();
        }
        for t in &self.tasks {
            write!(s, ",loss_{t}").unwrap();
        }
        s.push_str(",val_metric\n");
        for row in &self.steps {
            write!(s, "{}", row.step).unwrap();
            for a in &row.alpha {
                write!(s, ",{a:?}").unwrap();
            }
            for l in &row.loss {
                match l {
                    Some(v) => write!(s, ",{v:?}").unwrap(),
                    None => s.push(','),
                }
            }
            writeln!(s, ",{:?}", row.val_metric).unwrap();
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: RunRecord = serde_json::from_str(text)?;
        if r.schema_version != RECORD_SCHEMA_VERSION {
            return Err(Error::Invalid(format!("record schema {}", r.schema_version)));
        }
        Ok(r)
    }
}

/// Parses the CSV written by [`RunRecord::to_csv`] back into step rows.
pub fn parse_trajectory_csv(text: &str) -> Result<(Vec<TaskId>, Vec<StepLog>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let tasks: Vec<TaskId> = headers
        .iter()
        .filter_map(|h| h.strip_prefix("alpha_").map(str::to_string))
        .collect();
    let n = tasks.len();
    if headers.len() != 2 + 2 * n {
        return Err(Error::Csv("unexpected trajectory header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Csv(format!("bad number `{s}`")));
    let mut steps = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let step = rec[0].parse::<usize>().map_err(|_| Error::Csv("bad step".into()))?;
        let alpha = (0..n).map(|i| num(&rec[1 + i])).collect::<Result<Vec<_>>>()?;
        let loss = (0..n)
            .map(|i| {
                let f = &rec[1 + n + i];
                if f.is_empty() {
                    Ok(None)
                } else {
                    num(f).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let val_metric = num(&rec[1 + 2 * n])?;
        steps.push(StepLog { step, alpha, loss, val_metric });
    }
    Ok((tasks, steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_and_roundtrip() {
        let mut r = RunRecord::new("tartan_mt", vec!["end".into(), "aux".into()], &TrainerConfig::default());
        r.steps.push(StepLog { step: 1, alpha: vec![0.5, 0.5], loss: vec![Some(1.25), None], val_metric: 0.75 });
        r.steps.push(StepLog { step: 2, alpha: vec![0.6, 0.4], loss: vec![Some(0.1), Some(2.0)], val_metric: 0.75 });
        let csv = r.to_csv();
        assert!(csv.starts_with("step,alpha_end,alpha_aux,loss_end,loss_aux,val_metric\n1,0.5,0.5,1.25,,0.75\n"));
        let (tasks, steps) = parse_trajectory_csv(&csv).unwrap();
        assert_eq!(tasks, r.tasks);
        assert_eq!(steps, r.steps);
        let back = RunRecord::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
