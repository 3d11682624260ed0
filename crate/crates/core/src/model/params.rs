use std::collections::HashMap;

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`. For rank-3 temporal
    /// kernels `[k, in, out]` the fans are `k * in` and `k * out`.
    Glorot,
    Zeros,
    Ones,
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [i, o] => (*i, *o),
        _ => {
            let k: usize = shape[..shape.len() - 2].iter().product();
            (k * shape[shape.len() - 2], k * shape[shape.len() - 1])
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn init(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut Rng) -> Result<()> {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape.to_vec()),
            Init::Ones => Tensor::full(shape.to_vec(), T::one()),
            Init::Glorot => {
                let (fi, fo) = fans(shape);
                let limit = (6.0 / (fi + fo) as f64).sqrt();
                Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-limit..=limit)))
            }
        };
        self.insert(name, t)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Puts every parameter on `tape`, tracked when `trainable`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<T>, trainable: bool) -> Bound<'a, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { store: self, vars }
    }

    /// Wraps existing tape handles, one per parameter in store order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<Bound<'_, T>> {
        if vars.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "{} handles for {} parameters",
                vars.len(),
                self.tensors.len()
            )));
        }
        Ok(Bound { store: self, vars })
    }
}

/// Tape handles for a [`ParamStore`], in store order.
pub struct Bound<'a, T> {
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
}

impl<'a, T: Scalar> Bound<'a, T> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.store
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in store order; zero for parameters the loss ignores.
    pub fn grads(&self, tape: &Tape<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(self.store.tensors())
            .map(|(&v, t)| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn glorot_bounds_and_fans() {
        assert_eq!(fans(&[9, 3, 64]), (27, 576));
        assert_eq!(fans(&[4, 5]), (4, 5));
        let mut s = ParamStore::<f64>::new();
        let mut rng = Rng::seed_from_u64(0);
        s.init("w", &[9, 3, 64], Init::Glorot, &mut rng).unwrap();
        s.init("b", &[64], Init::Zeros, &mut rng).unwrap();
        let limit = (6.0f64 / (27.0 + 576.0)).sqrt();
        assert!(s.get("w").unwrap().data().iter().all(|v| v.abs() <= limit));
        assert_eq!(s.get("b").unwrap().sum(), 0.0);
        assert!(s.init("b", &[1], Init::Ones, &mut rng).is_err());
        assert_eq!(s.num_scalars(), 9 * 3 * 64 + 64);
    }
}
