use crate::error::Result;
use crate::numerics::{Matrix, Real};
use crate::transformer::{Architecture, ModelWeights};

/// One gradient tensor per model parameter, laid out like the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    inner: ModelWeights<T>,
}

impl<T: Real> Gradients<T> {
    /// All-zero gradients shaped like `model`.
    pub fn zeros_like(model: &ModelWeights<T>) -> Self {
        let mut inner = ModelWeights::zeros(model.arch(), model.dims()).expect("valid model");
        for t in inner.params_mut() {
            t.fill(T::zero());
        }
        Self { inner }
    }

    pub fn arch(&self) -> Architecture {
        self.inner.arch()
    }

    /// Structured view, indexed like the model's fields.
    pub fn as_weights(&self) -> &ModelWeights<T> {
        &self.inner
    }

    pub(crate) fn as_weights_mut(&mut self) -> &mut ModelWeights<T> {
        &mut self.inner
    }

    /// Tensors in the model's canonical parameter order.
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        self.inner.params()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.inner.params_mut()
    }

    /// Adds the gradient of a front-sliced submodel into the leading slices of
    /// this (larger) gradient; positions outside the slice are untouched.
    pub fn add_front_slices(&mut self, sub: &Gradients<T>) -> Result<()> {
        self.inner.add_front_slices(&sub.inner)
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.scale_in_place(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.inner.is_finite()
    }

    pub fn max_abs(&self) -> T {
        self.tensors()
            .into_iter()
            .fold(T::zero(), |m, t| m.max(t.max_abs()))
    }

    pub fn cast<U: Real>(&self) -> Gradients<U> {
        Gradients {
            inner: self.inner.cast(),
        }
    }
}
