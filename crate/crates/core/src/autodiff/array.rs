use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array with a gradient buffer of the same shape.
///
/// Trainable state (decoder weights, mixture parameters, representations)
/// lives in `DiffArray`s. A [`Tape`](super::Tape) copies values in on
/// binding and the resulting [`Gradients`](super::Gradients) are added back
/// into `grad`, so gradients accumulate until [`DiffArray::zero_grad`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArray")]
pub struct DiffArray {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Vec<f64>,
    requires_grad: bool,
}

impl DiffArray {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::dim("DiffArray::new", shape, &[values.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            values,
            requires_grad: true,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
            requires_grad: true,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut a = Self::zeros(shape);
        a.values.fill(value);
        a
    }

    /// An array that never receives gradients.
    pub fn constant(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut a = Self::new(shape, values)?;
        a.requires_grad = false;
        Ok(a)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    /// Splits into simultaneous mutable views of values and grad.
    pub fn values_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grad)
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Number of rows when viewed as a matrix over the first axis.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all but the first axis.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.values[i * w..(i + 1) * w]
    }

    /// Copies the listed rows into a new contiguous buffer.
    pub fn gather_rows(&self, rows: &[usize]) -> Vec<f64> {
        let w = self.row_len();
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            out.extend_from_slice(&self.values[r * w..(r + 1) * w]);
        }
        out
    }

    /// Adds `grad_rows` (one row per entry of `rows`) into the gradient.
    pub fn scatter_add_grad(&mut self, rows: &[usize], grad_rows: &[f64]) {
        if !self.requires_grad {
            return;
        }
        let w = self.row_len();
        debug_assert_eq!(grad_rows.len(), rows.len() * w);
        for (k, &r) in rows.iter().enumerate() {
            for (g, &d) in self.grad[r * w..(r + 1) * w]
                .iter_mut()
                .zip(&grad_rows[k * w..(k + 1) * w])
            {
                *g += d;
            }
        }
    }

    /// Adds `delta` into the gradient; a no-op when gradients are off.
    pub fn add_grad(&mut self, delta: &[f64]) {
        if !self.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.grad.len());
        for (g, &d) in self.grad.iter_mut().zip(delta) {
            *g += d;
        }
    }
}

#[derive(Deserialize)]
struct RawArray {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
}

impl TryFrom<RawArray> for DiffArray {
    type Error = Error;

    fn try_from(raw: RawArray) -> Result<Self> {
        Ok(Self::new(&raw.shape, raw.values)?.with_requires_grad(raw.requires_grad))
    }
}
