//! Dense tensors and elementwise/matrix kernels.
//!
//! Values are 64-bit floats in row-major order. Rank 0 (`shape == []`) is a
//! scalar, rank 1 a vector, rank 2 a matrix; nothing higher is needed here.
//! The optional `grad` buffer is populated for trainable parameters after a
//! backward pass (see [`crate::autodiff`]).

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, checking that `product(shape) == data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::BadShape {
                op: "Tensor::new",
                expected: format!("{} elements for shape", numel),
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    /// Rank-2 tensor from row slices. All rows must have equal length.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::BadShape {
                    op: "Tensor::matrix",
                    expected: format!("rows of length {}", c),
                    got: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            shape: vec![r, c],
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; numel],
            grad: None,
        }
    }

    /// Uniform draws in `[lo, hi)`; bitwise reproducible for a given seed.
    pub fn rand_uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.uniform(lo, hi)).collect();
        Tensor {
            shape,
            data,
            grad: None,
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Scalar value; panics if the tensor is not rank 0.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar tensor");
        self.data[0]
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Add `delta` into the gradient buffer, allocating zeros if absent.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        assert_eq!(delta.len(), self.data.len());
        let g = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `max(0, x)` elementwise. The subgradient at exactly 0 is taken as 0.
    pub fn relu(&self) -> Tensor {
        self.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    /// Logistic sigmoid, elementwise. Saturates without producing NaN.
    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid_scalar)
    }

    /// Hyperbolic tangent, elementwise.
    pub fn tanh(&self) -> Tensor {
        self.map(|x| x.tanh())
    }

    /// Numerically stable softmax of a rank-1 tensor (max subtraction).
    pub fn softmax(&self) -> Result<Tensor> {
        if self.rank() != 1 || self.numel() == 0 {
            return Err(Error::BadShape {
                op: "softmax",
                expected: "non-empty rank-1 tensor".into(),
                got: self.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: softmax_slice(&self.data),
            grad: None,
        })
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        Ok(Tensor {
            shape: vec![m, n],
            data: matmul_kernel(&self.data, &rhs.data, m, k, n),
            grad: None,
        })
    }

    /// Matrix-vector product `[m,k] x [k] -> [m]`.
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || v.rank() != 1 || self.shape[1] != v.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: self.shape.clone(),
                rhs: v.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        Ok(Tensor {
            shape: vec![m],
            data: matvec_kernel(&self.data, &v.data, m, k),
            grad: None,
        })
    }

    /// Concatenate along the last axis. Rank-1 operands join end to end;
    /// rank-2 operands must share the leading (batch) extent.
    pub fn concat(&self, rhs: &Tensor) -> Result<Tensor> {
        match (self.rank(), rhs.rank()) {
            (1, 1) => {
                let mut data = self.data.clone();
                data.extend_from_slice(&rhs.data);
                Ok(Tensor::vector(data))
            }
            (2, 2) if self.shape[0] == rhs.shape[0] => {
                let b = self.shape[0];
                let (ca, cb) = (self.shape[1], rhs.shape[1]);
                let mut data = Vec::with_capacity(b * (ca + cb));
                for i in 0..b {
                    data.extend_from_slice(&self.data[i * ca..(i + 1) * ca]);
                    data.extend_from_slice(&rhs.data[i * cb..(i + 1) * cb]);
                }
                Tensor::new(vec![b, ca + cb], data)
            }
            _ => Err(Error::ShapeMismatch {
                op: "concat",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            }),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            grad: None,
        }
    }

    /// Index of the largest element; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

// Accumulates over k in the middle loop (ikj order).
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

pub(crate) fn matvec_kernel(a: &[f64], v: &[f64], m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        out[i] = row.iter().zip(v).map(|(x, y)| x * y).sum();
    }
    out
}
