use serde::Serialize;

use crate::error::{NfrError, Result};
use crate::tensor::{dot_slices, norm2_slice, Tensor};

/// Cosine between an attribution and the input, with the two norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub value: f64,
    pub r_norm: f64,
    pub x_norm: f64,
}

pub fn alignment(r: &Tensor, x: &Tensor) -> Result<AlignmentReport> {
    alignment_slices(r.data(), x.data())
}

pub(crate) fn alignment_slices(r: &[f64], x: &[f64]) -> Result<AlignmentReport> {
    if r.len() != x.len() {
        return Err(NfrError::ShapeMismatch {
            expected: format!("{} elements", x.len()),
            got: format!("{} elements", r.len()),
        });
    }
    let r_norm = norm2_slice(r);
    let x_norm = norm2_slice(x);
    if r_norm == 0.0 {
        return Err(NfrError::UndefinedAlignment("attribution"));
    }
    if x_norm == 0.0 {
        return Err(NfrError::UndefinedAlignment("input"));
    }
    let value = (dot_slices(r, x) / (r_norm * x_norm)).clamp(-1.0, 1.0);
    Ok(AlignmentReport { value, r_norm, x_norm })
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
