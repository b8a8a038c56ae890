use indexmap::IndexMap;

use super::config::{OptimizerConfig, OptimizerKind};
use crate::autodiff::{GradientMap, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Plain descent or Adam over one parameter group, with optional L2 decay
/// folded into the gradient.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    lr: f64,
    weight_decay: f64,
    t: i32,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, lr: f64, weight_decay: f64) -> Self {
        Optimizer { cfg, lr, weight_decay, t: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradientMap) -> Result<()> {
        self.t += 1;
        let OptimizerConfig { kind, beta1, beta2, eps } = self.cfg;
        let (bc1, bc2) = (1.0 - beta1.powi(self.t), 1.0 - beta2.powi(self.t));
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).ok_or_else(|| Error::Unknown(name.to_string()))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient for {name}")));
            }
            match kind {
                OptimizerKind::Sgd => {
                    for (pv, gv) in p.values_mut().iter_mut().zip(g.values()) {
                        let gg = gv + self.weight_decay * *pv;
                        *pv -= self.lr * gg;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
                    for (((pv, gv), mv), vv) in p
                        .values_mut()
                        .iter_mut()
                        .zip(g.values())
                        .zip(m.values_mut())
                        .zip(v.values_mut())
                    {
                        let gg = gv + self.weight_decay * *pv;
                        *mv = beta1 * *mv + (1.0 - beta1) * gg;
                        *vv = beta2 * *vv + (1.0 - beta2) * gg * gg;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            if !p.all_finite() {
                return Err(Error::NonFinite(format!("update of {name}")));
            }
        }
        Ok(())
    }
}
