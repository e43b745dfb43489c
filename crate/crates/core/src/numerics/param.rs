use std::collections::HashMap;

use super::{NumericsError, Tensor};

/// A trainable tensor with its gradient and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NumericsError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumericsError::Invalid(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        self.params[id.0].value.data()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.by_name.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Parameter> {
        self.params.iter()
    }

    pub fn as_slice(&self) -> &[Parameter] {
        &self.params
    }

    pub fn as_mut_slice(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Total number of trainable scalars.
    pub fn census(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Zeroed gradient buffers aligned with this set.
    pub fn grad_buffer(&self) -> GradBuffer {
        GradBuffer(self.params.iter().map(|p| vec![0.0; p.value.len()]).collect())
    }

    /// Adds `buffer` into the stored gradients.
    pub fn accumulate(&mut self, buffer: &GradBuffer) {
        for (p, g) in self.params.iter_mut().zip(&buffer.0) {
            p.grad.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Replaces every value; shapes must match.
    pub fn set_values(&mut self, values: &[Tensor]) -> Result<(), NumericsError> {
        if values.len() != self.params.len() {
            return Err(NumericsError::Invalid(format!(
                "expected {} tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(NumericsError::Shape {
                    op: "set_values",
                    left: p.value.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradient scratch written by backward passes.
#[derive(Clone, Debug)]
pub struct GradBuffer(pub Vec<Vec<f64>>);

impl GradBuffer {
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.0[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }
}
