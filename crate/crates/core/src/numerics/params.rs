use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named learned tensor. `frozen_rows` marks embedding rows that the optimizer must not touch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_rows: Option<Vec<bool>>,
}

/// Named parameter registry. Names follow `module/layer{n}/param`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
    #[serde(skip)]
    by_name: BTreeMap<String, ParamId>,
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub(crate) by_param: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.by_param.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Adds `other` into `self`, in parameter-id order.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (id, g) in &other.by_param {
            match self.by_param.get_mut(id) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.by_param.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_param.values_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        tensor.requires_grad = true;
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            tensor,
            frozen_rows: None,
        });
        Ok(id)
    }

    /// Uniform Glorot initialisation for a `rows × cols` matrix.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn add_const(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        value: f64,
    ) -> Result<ParamId> {
        self.add(name, Tensor::matrix(rows, cols, vec![value; rows * cols])?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_frozen_rows(&mut self, id: ParamId, frozen: Vec<bool>) -> Result<()> {
        let (rows, _) = self.get(id).dims2();
        if frozen.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "set_frozen_rows",
                left: vec![rows],
                right: vec![frozen.len()],
            });
        }
        self.params[id.0].frozen_rows = Some(frozen);
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Writes `grads` into the tensors' gradient buffers; frozen rows receive zero.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            let p = &mut self.params[id.0];
            match &p.frozen_rows {
                Some(frozen) => {
                    let (_, cols) = p.tensor.dims2();
                    let mut masked = g.to_vec();
                    for (r, &fz) in frozen.iter().enumerate() {
                        if fz {
                            masked[r * cols..(r + 1) * cols].fill(0.0);
                        }
                    }
                    p.tensor.accumulate_grad(&masked)?;
                }
                None => p.tensor.accumulate_grad(g)?,
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`. Returns the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for p in &mut self.params {
                if let Some(g) = p.tensor.grad() {
                    let scaled: Vec<f64> = g.iter().map(|v| v * factor).collect();
                    // shapes are unchanged, cannot fail
                    let _ = p.tensor.set_grad(scaled);
                }
            }
        }
        norm
    }

    /// Rebuilds the name index after deserialisation.
    pub fn reindex(&mut self) {
        self.by_name = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), ParamId(i)))
            .collect();
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add_const("enc/layer0/w", 2, 2, 0.0).unwrap();
        assert!(s.add_const("enc/layer0/w", 2, 2, 0.0).is_err());
    }

    #[test]
    fn frozen_rows_get_zero_grad() {
        let mut s = ParamStore::new();
        let id = s.add_const("emb", 2, 2, 0.0).unwrap();
        s.set_frozen_rows(id, vec![true, false]).unwrap();
        let mut g = Gradients::default();
        g.by_param.insert(id, vec![1.0, 1.0, 2.0, 2.0]);
        s.accumulate(&g).unwrap();
        assert_eq!(s.get(id).grad().unwrap(), &[0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut s = ParamStore::new();
        let a = s.add_const("a", 1, 2, 0.0).unwrap();
        let mut g = Gradients::default();
        g.by_param.insert(a, vec![30.0, 40.0]);
        s.accumulate(&g).unwrap();
        assert_eq!(s.clip_grad_norm(5.0), 50.0);
        assert!((s.grad_norm() - 5.0).abs() < 1e-12);
    }
}
