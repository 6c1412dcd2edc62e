use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        let value = Arc::new(value);
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = value;
            return i;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &*self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|i| Arc::make_mut(&mut self.tensors[i]))
    }

    pub fn by_id(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    /// Mutable access; clones the tensor first if a tape still shares it.
    pub fn by_id_mut(&mut self, id: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[id])
    }

    /// Shared handle for binding a parameter into a [`Tape`](crate::Tape) without copying.
    pub fn shared(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.tensors[id])
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| &**t))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Checks that `other` has the same names, order and shapes.
    pub fn check_compatible(&self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::shape("params", "parameter names differ"));
        }
        for (name, (a, b)) in self.names.iter().zip(self.tensors.iter().zip(&other.tensors)) {
            if a.shape() != b.shape() {
                return Err(Error::shape("params", format!("{name}: {:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        Ok(())
    }
}

/// Element-wise arithmetic mean of several parameter sets with identical layout.
pub fn average_checkpoints<T: Scalar>(checkpoints: &[ParamStore<T>]) -> Result<ParamStore<T>> {
    let first = checkpoints.first().ok_or(Error::Empty { op: "average_checkpoints" })?;
    for other in &checkpoints[1..] {
        first.check_compatible(other)?;
    }
    let n = T::from_usize(checkpoints.len()).unwrap();
    let mut out = first.clone();
    for id in 0..out.len() {
        for (i, v) in out.by_id_mut(id).data_mut().iter_mut().enumerate() {
            let total: T = checkpoints.iter().map(|c| c.tensors[id].data()[i]).sum();
            *v = total / n;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn store(rng: &mut Rng) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::normal([3, 4], 1.0, rng));
        s.insert("b", Tensor::normal([4], 1.0, rng));
        s
    }

    #[test]
    fn average_of_one_is_identity() {
        let s = store(&mut Rng::new(1));
        assert_eq!(average_checkpoints(std::slice::from_ref(&s)).unwrap(), s);
    }

    #[test]
    fn average_of_opposites_is_zero() {
        let s = store(&mut Rng::new(2));
        let mut neg = s.clone();
        for id in 0..neg.len() {
            neg.by_id_mut(id).data_mut().iter_mut().for_each(|v| *v = -*v);
        }
        let avg = average_checkpoints(&[s, neg]).unwrap();
        assert!(avg.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn average_of_three_matches_direct_mean() {
        let mut rng = Rng::new(3);
        let stores: Vec<_> = (0..3).map(|_| store(&mut rng)).collect();
        let avg = average_checkpoints(&stores).unwrap();
        for (name, t) in avg.iter() {
            for (i, &v) in t.data().iter().enumerate() {
                let mut acc = 0.0;
                for s in &stores {
                    acc += s.get(name).unwrap().data()[i];
                }
                assert!((v - acc / 3.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn average_rejects_mismatched_layouts() {
        let mut rng = Rng::new(4);
        let a = store(&mut rng);
        let mut b = store(&mut rng);
        b.insert("w", Tensor::zeros([4, 3]));
        assert!(average_checkpoints(&[a.clone(), b]).is_err());
        let mut c = ParamStore::new();
        c.insert("other", Tensor::zeros([3, 4]));
        assert!(average_checkpoints(&[a, c]).is_err());
        assert!(average_checkpoints::<f64>(&[]).is_err());
    }
}
