//! Dense f32 tensors and the reverse-mode autodiff tape that trains the models.
//!
//! [`Tensor`] is a plain row-major buffer with an optional gradient slot.
//! Differentiable computation happens on a [`Tape`]: values are registered as
//! leaves, every op appends a node, and [`Tape::backward`] walks the nodes in
//! exact reverse order.

mod checkpoint;
pub(crate) mod kernels;
mod optim;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, NamedTensor, CHECKPOINT_MAGIC};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use tape::{softmax_row, BatchNormStats, Conv2dParams, Tape, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// A trainable tensor: `requires_grad` set and a zeroed gradient buffer.
    pub fn param(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let mut t = Self::new(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        self.grad = on.then(|| vec![0.0; self.data.len()]);
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// Overwrites the gradient buffer. Fails if the tensor is not trainable.
    pub fn set_grad(&mut self, grad: &[f32]) -> Result<()> {
        match self.grad.as_mut() {
            Some(g) if g.len() == grad.len() => {
                g.copy_from_slice(grad);
                Ok(())
            }
            Some(g) => Err(Error::shape(
                "set_grad",
                format!("expected {} elements, got {}", g.len(), grad.len()),
            )),
            None => Err(Error::Autodiff(
                "gradient assigned to a tensor without requires_grad".into(),
            )),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// A copy with gradient tracking stripped.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let k = *self.shape.last().unwrap_or(&1);
        &self.data[i * k..(i + 1) * k]
    }

    /// Concatenates equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(t.grad().is_none());
    }

    #[test]
    fn grad_present_iff_requires_grad() {
        let mut t = Tensor::zeros(&[4]);
        assert!(t.grad().is_none());
        t.set_requires_grad(true);
        assert_eq!(t.grad().unwrap().len(), 4);
        t.set_requires_grad(false);
        assert!(t.grad().is_none());
        assert!(t.set_grad(&[1.0; 4]).is_err());
    }

    #[test]
    fn non_finite_detected() {
        let t = Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(t.ensure_finite("x"), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn stack_adds_leading_axis() {
        let a = Tensor::full(&[2, 2], 1.0);
        let b = Tensor::full(&[2, 2], 2.0);
        let s = Tensor::stack(&[a, b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.data()[4], 2.0);
    }
}
