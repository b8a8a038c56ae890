//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Values are computed eagerly as operations are recorded. Parameters enter
//! the tape by name through [`Tape::param`]; [`Tape::backward`] walks the
//! record once in reverse and returns gradients keyed by those names.

use std::collections::HashMap;

use super::tensor::{GradientMap, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
    Mse { out: Var, target: Tensor },
    MaskedMse { out: Var, target: Tensor, mask: Tensor, count: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    consumed: bool,
}

fn check(t: Tensor, what: &str) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let (av, bv) = (a.values(), b.values());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = av[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bv[p * m..(p + 1) * m];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

/// `aᵀ · b` without materializing the transpose.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let (av, bv) = (a.values(), b.values());
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let brow = &bv[i * m..(i + 1) * m];
        for p in 0..k {
            let x = av[i * k + p];
            if x == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::from_parts(vec![k, m], out)
}

/// `a · bᵀ`.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, m, k) = (a.rows(), a.cols(), b.rows());
    let (av, bv) = (a.values(), b.values());
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let arow = &av[i * m..(i + 1) * m];
        for j in 0..k {
            let brow = &bv[j * m..(j + 1) * m];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::from_parts(vec![n, k], out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a node; panics on non-scalars.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert!(t.is_scalar(), "node is not a scalar");
        t.values()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let t = check(t, "constant")?;
        Ok(self.push(t, Op::Constant))
    }

    /// Records the named parameter as a leaf. Repeated calls with the same
    /// name return the same node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| Error::Unknown(name.to_string()))?
            .clone();
        let t = check(t, name)?;
        let v = self.push(t, Op::Param);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = check(matmul(ta, tb), "matmul")?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a length-`m` bias to every row of an `n × m` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.len() != tx.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} on {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        let m = tx.cols();
        let mut out = tx.clone();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v += tb.values()[i % m];
        }
        let out = check(out, "bias add")?;
        Ok(self.push(out, Op::AddRowBias(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!("add {:?} + {:?}", ta.shape(), tb.shape())));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        let out = check(out, "add")?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!("mul {:?} * {:?}", ta.shape(), tb.shape())));
        }
        let vals = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect();
        let out = check(Tensor::from_parts(ta.shape().to_vec(), vals), "mul")?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = check(self.value(a).map(|v| k * v), "scale")?;
        Ok(self.push(out, Op::Scale(a, k)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        Ok(self.push(out, Op::Relu(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        Ok(self.push(out, Op::Tanh(a)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).values().iter().sum::<f64>();
        let out = check(Tensor::scalar(s), "sum")?;
        Ok(self.push(out, Op::Sum(a)))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 2 {
            return Err(Error::Shape(format!("logits {:?}", t.shape())));
        }
        let (n, k) = (t.rows(), t.cols());
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::LabelOutOfRange { label: y, classes: k });
            }
            let row = t.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            total += lse - row[y];
            probs.extend(row.iter().map(|v| (v - mx).exp() / z));
        }
        let out = check(Tensor::scalar(total / n as f64), "cross_entropy")?;
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs: Tensor::from_parts(vec![n, k], probs),
            },
        ))
    }

    /// Mean squared difference over all entries.
    pub fn mse(&mut self, out: Var, target: &Tensor) -> Result<Var> {
        let t = self.value(out);
        if t.shape() != target.shape() {
            return Err(Error::Shape(format!("mse {:?} vs {:?}", t.shape(), target.shape())));
        }
        let s: f64 = t
            .values()
            .iter()
            .zip(target.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let v = check(Tensor::scalar(s / t.len() as f64), "mse")?;
        Ok(self.push(v, Op::Mse { out, target: target.clone() }))
    }

    /// Squared difference averaged over entries where `mask` is 1.
    pub fn masked_mse(&mut self, out: Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
        let t = self.value(out);
        if t.shape() != target.shape() || t.shape() != mask.shape() {
            return Err(Error::Shape(format!(
                "masked_mse {:?} vs {:?} mask {:?}",
                t.shape(),
                target.shape(),
                mask.shape()
            )));
        }
        if mask.values().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Invalid("mask entries must be 0 or 1".into()));
        }
        let count: f64 = mask.values().iter().sum();
        if count == 0.0 {
            return Err(Error::AllZeroMask);
        }
        let s: f64 = t
            .values()
            .iter()
            .zip(target.values())
            .zip(mask.values())
            .map(|((a, b), m)| m * (a - b).powi(2))
            .sum();
        let v = check(Tensor::scalar(s / count), "masked_mse")?;
        Ok(self.push(
            v,
            Op::MaskedMse {
                out,
                target: target.clone(),
                mask: mask.clone(),
                count,
            },
        ))
    }

    /// Gradient of `loss` with respect to every parameter in `params`.
    /// Parameters that did not influence the loss get zero tensors.
    pub fn backward(&mut self, loss: Var, params: &ParamSet) -> Result<GradientMap> {
        Ok(self.backward_split(loss, &[params])?.remove(0))
    }

    /// Like [`Tape::backward`], returning one map per parameter set.
    pub fn backward_split(&mut self, loss: Var, sets: &[&ParamSet]) -> Result<Vec<GradientMap>> {
        if self.consumed {
            return Err(Error::RecordConsumed);
        }
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut adj[v.0] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    adj[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, self.value(*b));
                    let gb = matmul_tn(self.value(*a), &g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::AddRowBias(x, bias) => {
                    let m = g.cols();
                    let mut gb = vec![0.0; m];
                    for (i, v) in g.values().iter().enumerate() {
                        gb[i % m] += v;
                    }
                    let bshape = self.value(*bias).shape().to_vec();
                    acc(&mut adj, *bias, Tensor::from_parts(bshape, gb));
                    acc(&mut adj, *x, g);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = Tensor::from_parts(
                        g.shape().to_vec(),
                        g.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect(),
                    );
                    let gb = Tensor::from_parts(
                        g.shape().to_vec(),
                        g.values().iter().zip(ta.values()).map(|(x, y)| x * y).collect(),
                    );
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(&mut adj, *a, g.map(|v| k * v));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let vals = g
                        .values()
                        .iter()
                        .zip(x.values())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    acc(&mut adj, *a, Tensor::from_parts(g.shape().to_vec(), vals));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let vals = g
                        .values()
                        .iter()
                        .zip(y.values())
                        .map(|(gv, yv)| gv * (1.0 - yv * yv))
                        .collect();
                    acc(&mut adj, *a, Tensor::from_parts(g.shape().to_vec(), vals));
                }
                Op::Sum(a) => {
                    let s = g.values()[0];
                    let shape = self.value(*a).shape().to_vec();
                    let n = self.value(*a).len();
                    acc(&mut adj, *a, Tensor::from_parts(shape, vec![s; n]));
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let s = g.values()[0] / labels.len() as f64;
                    let k = probs.cols();
                    let mut gl = probs.values().to_vec();
                    for (i, &y) in labels.iter().enumerate() {
                        gl[i * k + y] -= 1.0;
                    }
                    gl.iter_mut().for_each(|v| *v *= s);
                    acc(&mut adj, *logits, Tensor::from_parts(probs.shape().to_vec(), gl));
                }
                Op::Mse { out, target } => {
                    let o = self.value(*out);
                    let s = 2.0 * g.values()[0] / o.len() as f64;
                    let vals = o
                        .values()
                        .iter()
                        .zip(target.values())
                        .map(|(a, b)| s * (a - b))
                        .collect();
                    acc(&mut adj, *out, Tensor::from_parts(o.shape().to_vec(), vals));
                }
                Op::MaskedMse { out, target, mask, count } => {
                    let o = self.value(*out);
                    let s = 2.0 * g.values()[0] / count;
                    let vals = o
                        .values()
                        .iter()
                        .zip(target.values())
                        .zip(mask.values())
                        .map(|((a, b), m)| s * m * (a - b))
                        .collect();
                    acc(&mut adj, *out, Tensor::from_parts(o.shape().to_vec(), vals));
                }
            }
        }

        let mut maps = Vec::with_capacity(sets.len());
        for set in sets {
            let mut map = GradientMap::new();
            for (name, p) in set.iter() {
                let g = self
                    .params
                    .get(name)
                    .and_then(|v| adj[v.0].clone())
                    .unwrap_or_else(|| Tensor::zeros(p.shape()));
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of {name}")));
                }
                map.insert(name.to_string(), g);
            }
            maps.push(map);
        }
        Ok(maps)
    }
}
