//! Named tensor store for denoiser parameters, gradients, and optimizer
//! moments. Entries keep deterministic insertion order, which fixes the
//! checkpoint layout and the optimizer's update order.

use std::collections::HashMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, IxDyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<ArrayD<f64>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<f64>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        &self.tensors[*self.index.get(name).unwrap_or_else(|| panic!("no parameter {name}"))]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("no parameter {name}"));
        &mut self.tensors[i]
    }

    /// 2-D view of a matrix parameter.
    pub fn mat(&self, name: &str) -> ArrayView2<'_, f64> {
        self.get(name)
            .view()
            .into_dimensionality()
            .unwrap_or_else(|_| panic!("parameter {name} is not a matrix"))
    }

    /// 1-D view of a vector parameter.
    pub fn vec1(&self, name: &str) -> ArrayView1<'_, f64> {
        self.get(name)
            .view()
            .into_dimensionality()
            .unwrap_or_else(|_| panic!("parameter {name} is not a vector"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ArrayViewD<'_, f64>)> {
        self.names
            .iter()
            .zip(self.tensors.iter())
            .map(|(n, t)| (n.as_str(), t.view()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, ArrayViewMutD<'_, f64>)> {
        self.names
            .iter()
            .zip(self.tensors.iter_mut())
            .map(|(n, t)| (n.as_str(), t.view_mut()))
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, t) in self.iter() {
            out.insert(name, ArrayD::zeros(IxDyn(t.shape())));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Accumulates `other` scaled by `a` into `self` (matching entries).
    pub fn axpy(&mut self, a: f64, other: &ParamSet) {
        assert_eq!(self.names, other.names, "parameter sets differ");
        for (dst, src) in self.tensors.iter_mut().zip(other.tensors.iter()) {
            dst.zip_mut_with(src, |d, &s| *d += a * s);
        }
    }

    /// Accumulates a gradient contribution into the named tensor.
    pub fn add(&mut self, name: &str, delta: &ArrayD<f64>) {
        let t = self.get_mut(name);
        debug_assert_eq!(t.shape(), delta.shape(), "gradient shape for {name}");
        t.zip_mut_with(delta, |d, &s| *d += s);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Global L2 norm over every entry.
    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Checks that `other` has identical names and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Shape("parameter names differ".into()));
        }
        for (a, b) in self.tensors.iter().zip(other.tensors.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape("parameter shapes differ".into()));
            }
        }
        Ok(())
    }
}
