//! Dense f64 tensors. Activations are `(channels, height, width)`,
//! convolution kernels `(out_ch, in_ch, kh, kw)`, scalars `(1,)`.

use crate::error::{AdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(AdError::Shape(format!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor { dims, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { dims: vec![1], data: vec![v] }
    }

    pub fn chw(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![c, h, w], data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    /// (channels, height, width) of an activation tensor.
    pub fn chw_dims(&self) -> Result<(usize, usize, usize)> {
        match self.dims.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            other => Err(AdError::Shape(format!("expected 3-d activation, got {other:?}"))),
        }
    }

    /// (out_ch, in_ch, kh, kw) of a kernel tensor.
    pub fn kernel_dims(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims.as_slice() {
            [o, i, kh, kw] => Ok((*o, *i, *kh, *kw)),
            other => Err(AdError::Shape(format!("expected 4-d kernel, got {other:?}"))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
