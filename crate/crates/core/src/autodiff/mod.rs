//! Dense tensors, reverse-mode differentiation and MLP building blocks.

mod tape;
mod tensor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use tape::{Tape, Var};
pub use tensor::{GradientMap, ParamSet, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec { in_dim, out_dim, activation }
    }
}

pub fn weight_name(prefix: &str, k: usize) -> String {
    format!("{prefix}layer{k}.weight")
}

pub fn bias_name(prefix: &str, k: usize) -> String {
    format!("{prefix}layer{k}.bias")
}

pub fn apply_activation(tape: &mut Tape, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Linear => Ok(x),
    }
}

/// Records `act_k(x W_k + b_k)` for each layer on `tape`.
///
/// Weights are stored `[in_dim, out_dim]` under `{prefix}layer{k}.weight`,
/// biases `[out_dim]` under `{prefix}layer{k}.bias`.
pub fn forward_mlp(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    layers: &[LayerSpec],
    inputs: Var,
) -> Result<Var> {
    for pair in layers.windows(2) {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Shape(format!(
                "layer chain {} -> {}",
                pair[0].out_dim, pair[1].in_dim
            )));
        }
    }
    let mut h = inputs;
    for (k, layer) in layers.iter().enumerate() {
        let (wn, bn) = (weight_name(prefix, k), bias_name(prefix, k));
        let w_shape = params.get(&wn).map(|t| t.shape().to_vec());
        if w_shape.as_deref() != Some(&[layer.in_dim, layer.out_dim][..]) {
            return Err(Error::Shape(format!(
                "{wn} is {w_shape:?}, layer expects [{}, {}]",
                layer.in_dim, layer.out_dim
            )));
        }
        let w = tape.param(params, &wn)?;
        let b = tape.param(params, &bn)?;
        let z = tape.matmul(h, w)?;
        let z = tape.add_row_bias(z, b)?;
        h = apply_activation(tape, z, layer.activation)?;
    }
    Ok(h)
}

/// Initializes MLP parameters with `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
/// weights and biases, drawing weights then bias layer by layer.
pub fn init_mlp(
    params: &mut ParamSet,
    prefix: &str,
    layers: &[LayerSpec],
    rng: &mut crate::rng::Prng,
) -> Result<()> {
    for (k, layer) in layers.iter().enumerate() {
        let bound = 1.0 / (layer.in_dim as f64).sqrt();
        let w = (0..layer.in_dim * layer.out_dim)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let b = (0..layer.out_dim).map(|_| rng.uniform(-bound, bound)).collect();
        params.insert(weight_name(prefix, k), Tensor::matrix(layer.in_dim, layer.out_dim, w)?)?;
        params.insert(bias_name(prefix, k), Tensor::vector(b)?)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
    MaskedMse,
}

#[derive(Clone, Copy, Debug)]
pub enum LossTarget<'a> {
    Labels(&'a [usize]),
    Values(&'a Tensor),
}

/// Dispatches to the loss named by `kind`.
pub fn loss(
    tape: &mut Tape,
    outputs: Var,
    target: LossTarget<'_>,
    kind: LossKind,
    mask: Option<&Tensor>,
) -> Result<Var> {
    if tape.value(outputs).is_empty() {
        return Err(Error::EmptyBatch);
    }
    match (kind, target) {
        (LossKind::CrossEntropy, LossTarget::Labels(l)) => tape.cross_entropy(outputs, l),
        (LossKind::Mse, LossTarget::Values(t)) => tape.mse(outputs, t),
        (LossKind::MaskedMse, LossTarget::Values(t)) => {
            let m = mask.ok_or_else(|| Error::Invalid("masked_mse needs a mask".into()))?;
            tape.masked_mse(outputs, t, m)
        }
        (k, _) => Err(Error::Invalid(format!("target kind does not fit loss {k:?}"))),
    }
}

/// Largest coordinate-wise relative error between reverse-mode gradients and
/// central differences `(f(p+h) - f(p-h)) / 2h`, with denominator
/// `max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(eval: F, params: &ParamSet, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Invalid(format!("grad_check step {step}")));
    }
    let mut tape = Tape::new();
    let out = eval(&mut tape, params)?;
    let analytic = tape.backward(out, params)?;

    let value_at = |p: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let v = eval(&mut t, p)?;
        let s = t.scalar(v);
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::NonFinite("grad_check evaluation".into()))
        }
    };

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let n = params.get(name).map(Tensor::len).unwrap_or(0);
        for i in 0..n {
            let orig = params.get(name).unwrap().values()[i];
            probe.get_mut(name).unwrap().values_mut()[i] = orig + step;
            let fp = value_at(&probe)?;
            probe.get_mut(name).unwrap().values_mut()[i] = orig - step;
            let fm = value_at(&probe)?;
            probe.get_mut(name).unwrap().values_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.get(name).unwrap().values()[i];
            let denom = 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Prng, StreamLabel};

    fn mlp_params(layers: &[LayerSpec], seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        init_mlp(&mut p, "", layers, &mut Prng::new(seed, StreamLabel::Init, 0)).unwrap();
        p
    }

    #[test]
    fn identity_layer() {
        let mut p = ParamSet::new();
        p.insert("layer0.weight", Tensor::identity(2)).unwrap();
        p.insert("layer0.bias", Tensor::zeros(&[2])).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        let y = forward_mlp(&mut t, &p, "", &[LayerSpec::new(2, 2, Activation::Linear)], x).unwrap();
        assert_eq!(t.value(y).values(), &[1.0, 2.0]);
    }

    #[test]
    fn constant_layer() {
        let mut p = ParamSet::new();
        p.insert("layer0.weight", Tensor::zeros(&[1, 1])).unwrap();
        p.insert("layer0.bias", Tensor::vector(vec![3.0]).unwrap()).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(3, 1, vec![-4.0, 0.5, 9.0]).unwrap()).unwrap();
        let y = forward_mlp(&mut t, &p, "", &[LayerSpec::new(1, 1, Activation::Relu)], x).unwrap();
        assert_eq!(t.value(y).values(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let layers = [LayerSpec::new(2, 3, Activation::Tanh), LayerSpec::new(4, 1, Activation::Linear)];
        let p = mlp_params(&layers[..1], 0);
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 2])).unwrap();
        assert!(matches!(forward_mlp(&mut t, &p, "", &layers, x), Err(Error::Shape(_))));
    }

    #[test]
    fn unknown_activation() {
        assert!(matches!("gelu".parse::<Activation>(), Err(Error::UnknownActivation(_))));
        assert_eq!("tanh".parse::<Activation>().unwrap(), Activation::Tanh);
    }

    #[test]
    fn grad_check_exact_cases() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::vector(vec![3.0]).unwrap()).unwrap();
        let sq = |t: &mut Tape, p: &ParamSet| {
            let x = t.param(p, "x")?;
            let xx = t.mul(x, x)?;
            t.sum(xx)
        };
        assert!(grad_check(sq, &p, 1e-5).unwrap() <= 1e-9);

        let lin = |t: &mut Tape, p: &ParamSet| {
            let x = t.param(p, "x")?;
            let y = t.scale(x, -2.5)?;
            t.sum(y)
        };
        assert!(grad_check(lin, &p, 1e-5).unwrap() <= 1e-10);
        assert!(grad_check(lin, &p, 0.0).is_err());
    }

    #[test]
    fn grad_check_three_layer_tanh() {
        let layers = [
            LayerSpec::new(4, 4, Activation::Tanh),
            LayerSpec::new(4, 4, Activation::Tanh),
            LayerSpec::new(4, 2, Activation::Linear),
        ];
        let p = mlp_params(&layers, 11);
        assert_eq!(p.scalar_count(), 50);
        let mut xr = Prng::new(11, StreamLabel::Data, 0);
        let x = Tensor::matrix(6, 4, (0..24).map(|_| xr.normal()).collect()).unwrap();
        let y = Tensor::matrix(6, 2, (0..12).map(|_| xr.normal()).collect()).unwrap();
        let err = grad_check(
            |t, p| {
                let xi = t.constant(x.clone())?;
                let o = forward_mlp(t, p, "", &layers, xi)?;
                t.mse(o, &y)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn non_finite_eval_is_error() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let r = grad_check(
            |t, p| {
                let x = t.param(p, "x")?;
                let y = t.scale(x, 1e308)?;
                let y = t.scale(y, 10.0)?;
                t.sum(y)
            },
            &p,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
