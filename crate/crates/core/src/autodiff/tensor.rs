use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(Tensor { shape, values })
    }

    /// Internal constructor for values already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor { shape, values }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_parts(vec![1], vec![v])
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Width of a matrix; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let c = self.cols();
        let mut values = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Tensor::from_parts(vec![rows.len(), c], values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub(crate) fn add_scaled(&mut self, other: &Tensor, k: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += k * b;
        }
    }
}

/// Ordered, uniquely-named collection of parameter tensors.
///
/// Iteration order is insertion order, which also defines the canonical
/// flattening order used for gradient alignment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Duplicate(name));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Merges `other` into `self`, rejecting any name collision.
    pub fn extend_disjoint(&mut self, other: &ParamSet) -> Result<()> {
        if let Some(dup) = other.names().find(|n| self.contains(n)) {
            return Err(Error::Duplicate(dup.to_string()));
        }
        for (k, v) in other.iter() {
            self.entries.insert(k.to_string(), v.clone());
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.values().flat_map(|t| t.values().iter().copied()).collect()
    }

    /// In-place `p <- p + k * g` for every gradient entry.
    pub fn add_scaled(&mut self, grads: &GradientMap, k: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::Unknown(name.to_string()))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient for {name}")));
            }
            p.add_scaled(g, k);
        }
        Ok(())
    }
}

/// Gradients keyed by parameter name, each shaped like its parameter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientMap {
    entries: IndexMap<String, Tensor>,
}

impl GradientMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros_like(params: &ParamSet) -> Self {
        GradientMap {
            entries: params
                .iter()
                .map(|(k, v)| (k.to_string(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub(crate) fn insert(&mut self, name: String, t: Tensor) {
        self.entries.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.values().flat_map(|t| t.values().iter().copied()).collect()
    }

    /// `self += k * other`; both maps must cover the same names.
    pub fn accumulate(&mut self, other: &GradientMap, k: f64) -> Result<()> {
        for (name, g) in other.iter() {
            let mine = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::KeyMismatch(name.to_string()))?;
            mine.add_scaled(g, k);
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> GradientMap {
        GradientMap {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.map(|v| k * v)))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }
}
