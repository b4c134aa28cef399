//! Dense row-major `f64` tensors and the `NFRT1` raw tensor file format.
//!
//! Tensors are immutable values: every operation returns a new tensor. The
//! only invariants are that the payload length matches the shape and that all
//! entries are finite.

use std::fmt;
use std::path::Path;

use crate::error::{NfrError, Result};

/// Axis extents of a tensor. Every extent is at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(NfrError::InvalidShape("rank must be at least 1".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(NfrError::InvalidShape(format!("extent {pos} is zero")));
        }
        Ok(Shape(dims))
    }

    pub fn vector(len: usize) -> Result<Self> {
        Shape::new(vec![len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

impl TryFrom<&[usize]> for Shape {
    type Error = NfrError;

    fn try_from(dims: &[usize]) -> Result<Self> {
        Shape::new(dims.to_vec())
    }
}

/// Dense n-dimensional array of finite `f64` values in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(NfrError::ShapeMismatch {
                expected: format!("{} elements for shape {shape}", shape.numel()),
                got: format!("{} elements", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NfrError::NonFinite(pos));
        }
        Ok(Tensor { shape, data })
    }

    /// Rank-1 tensor holding `data`.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let shape = Shape::vector(data.len())?;
        Tensor::new(shape, data)
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        let n = shape.numel();
        Tensor::new(shape, vec![value; n])
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Callers must keep entries finite.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Same payload under a new shape with equal element count.
    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        if shape.numel() != self.numel() {
            return Err(NfrError::ShapeMismatch {
                expected: format!("{} elements", self.numel()),
                got: format!("shape {shape}"),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two tensors with equal element counts.
    /// The result takes the shape of `self`.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        check_same_len(self, other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.map(|v| c * v)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    /// Flat index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Serialize to the `NFRT1` byte layout.
    pub fn to_nfrt_bytes(&self) -> Result<Vec<u8>> {
        let rank = u8::try_from(self.shape.rank())
            .map_err(|_| NfrError::InvalidShape("rank exceeds 255".into()))?;
        let mut out = Vec::with_capacity(6 + 4 * self.shape.rank() + 8 * self.numel());
        out.extend_from_slice(NFRT_MAGIC);
        out.push(rank);
        for &d in self.shape.dims() {
            let d = u32::try_from(d)
                .map_err(|_| NfrError::InvalidShape(format!("extent {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_nfrt_bytes(bytes: &[u8]) -> Result<Tensor> {
        if bytes.len() < NFRT_MAGIC.len() || &bytes[..NFRT_MAGIC.len()] != NFRT_MAGIC {
            return Err(NfrError::MagicMismatch { expected: "NFRT1" });
        }
        let mut pos = NFRT_MAGIC.len();
        let rank = *bytes
            .get(pos)
            .ok_or_else(|| NfrError::Truncated("tensor rank".into()))? as usize;
        pos += 1;
        let mut dims = Vec::with_capacity(rank);
        for axis in 0..rank {
            let raw = bytes
                .get(pos..pos + 4)
                .ok_or_else(|| NfrError::Truncated(format!("tensor extent {axis}")))?;
            dims.push(u32::from_le_bytes(raw.try_into().expect("4 bytes")) as usize);
            pos += 4;
        }
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        let payload = bytes
            .get(pos..pos + 8 * n)
            .ok_or_else(|| NfrError::Truncated("tensor payload".into()))?;
        if bytes.len() != pos + 8 * n {
            return Err(NfrError::BadHeader(format!(
                "{} trailing bytes after tensor payload",
                bytes.len() - pos - 8 * n
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_nfrt_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        Tensor::from_nfrt_bytes(&std::fs::read(path)?)
    }
}

const NFRT_MAGIC: &[u8] = b"NFRT1";

fn check_same_len(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.numel() != b.numel() {
        return Err(NfrError::ShapeMismatch {
            expected: format!("{} elements", a.numel()),
            got: format!("{} elements", b.numel()),
        });
    }
    Ok(())
}

/// Inner product of the flattened tensors.
pub fn dot(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_len(a, b)?;
    Ok(dot_slices(a.data(), b.data()))
}

/// Euclidean norm of the flattened tensor.
pub fn norm2(a: &Tensor) -> f64 {
    norm2_slice(a.data())
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2_slice(a: &[f64]) -> f64 {
    dot_slices(a, a).sqrt()
}
