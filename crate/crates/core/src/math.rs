//! Dense and sparse vectors, positive diagonal metrics, and the inner
//! products every momentum coefficient is built from.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, invalid, Error, Result};

/// A fixed-length vector of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    /// Wraps `values`, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(Error::NonFinite("vector"))
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Wraps values produced by arithmetic on finite vectors. Callers are
    /// responsible for checking `is_finite` before handing the result out.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        dot_slices(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        check_dims(self.len(), other.len())?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// `self * s`, elementwise.
    pub fn scaled(&self, s: f64) -> DenseVector {
        Self(self.0.iter().map(|v| v * s).collect())
    }

    /// Elementwise product with a diagonal.
    pub fn hadamard(&self, diag: &[f64]) -> Result<DenseVector> {
        check_dims(self.len(), diag.len())?;
        Ok(Self(self.0.iter().zip(diag).map(|(a, b)| a * b).collect()))
    }

    /// Copy of the index range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> DenseVector {
        Self(self.0[start..end].to_vec())
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A sparse row: strictly increasing zero-based indices below `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseVector {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, dim: usize) -> Result<Self> {
        check_dims(indices.len(), values.len())?;
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(invalid(format!(
                "sparse indices must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(invalid(format!("sparse index {last} out of range for dimension {dim}")));
            }
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("sparse vector"));
        }
        Ok(Self { indices, values, dim })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let (indices, nonzero) = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        Self { indices, values: nonzero, dim: values.len() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Raises the declared dimension. Lowering it below the largest stored
    /// index is an error.
    pub fn widen(&mut self, dim: usize) -> Result<()> {
        match self.indices.last() {
            Some(&last) if last >= dim => {
                Err(invalid(format!("cannot shrink dimension below index {last}")))
            }
            _ => {
                self.dim = self.dim.max(dim);
                Ok(())
            }
        }
    }

    /// Sequential-sum dot product against a dense slice of length `dim`.
    pub fn dot_dense(&self, x: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, v)| v * x[i]).sum()
    }

    /// `out += alpha * self`.
    pub fn axpy_into(&self, alpha: f64, out: &mut [f64]) {
        for (&i, v) in self.indices.iter().zip(&self.values) {
            out[i] += alpha * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.axpy_into(1.0, &mut out);
        out
    }

    pub(crate) fn scale_values(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }
}

/// Strictly positive diagonal metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagPreconditioner(Vec<f64>);

impl DiagPreconditioner {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        validate_positive(&diag)?;
        Ok(Self(diag))
    }

    pub fn identity(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub(crate) fn from_raw(diag: Vec<f64>) -> Self {
        Self(diag)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.0
    }

    pub fn slice(&self, start: usize, end: usize) -> DiagPreconditioner {
        Self(self.0[start..end].to_vec())
    }
}

fn validate_positive(diag: &[f64]) -> Result<()> {
    match diag.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        Some((index, &value)) => Err(Error::NonPositive { index, value }),
        None => Ok(()),
    }
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean inner product.
pub fn dot(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(dot_slices(a.as_slice(), b.as_slice()))
}

/// `Σ a_i b_i m_i`, or `Σ a_i b_i / m_i` when `inverted`.
pub fn metric_dot(a: &DenseVector, b: &DenseVector, m: &DiagPreconditioner, inverted: bool) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    check_dims(a.len(), m.len())?;
    validate_positive(m.diag())?;
    Ok(metric_dot_slices(a.as_slice(), b.as_slice(), m.diag(), inverted))
}

pub(crate) fn metric_dot_slices(a: &[f64], b: &[f64], m: &[f64], inverted: bool) -> f64 {
    if inverted {
        a.iter().zip(b).zip(m).map(|((x, y), w)| x * y / w).sum()
    } else {
        a.iter().zip(b).zip(m).map(|((x, y), w)| x * y * w).sum()
    }
}

/// The momentum-scaled metric `(I + λP)P`.
pub fn ptilde(p: &DiagPreconditioner, lambda: f64) -> Result<DiagPreconditioner> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be a finite value >= 0, got {lambda}")));
    }
    validate_positive(p.diag())?;
    Ok(DiagPreconditioner(p.0.iter().map(|&pi| (1.0 + lambda * pi) * pi).collect()))
}

/// `min(max(x, lo), hi)`. NaN maps to `lo`.
pub fn clip_scalar(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo <= hi) {
        return Err(invalid(format!("clip bounds out of order: [{lo}, {hi}]")));
    }
    Ok(clip_unchecked(x, lo, hi))
}

pub(crate) fn clip_unchecked(x: f64, lo: f64, hi: f64) -> f64 {
    if x.is_nan() {
        lo
    } else {
        x.max(lo).min(hi)
    }
}
