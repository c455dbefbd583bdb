//! Test objectives: quadratics with a closed-form optimum and logistic
//! regression over sparse rows, plus a seeded minibatch sampler.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{check_dims, invalid, Error, Result};
use crate::math::{DenseVector, SparseVector};

/// Value and gradient of a finite sum `f(x) = mean_i f_i(x)`; deterministic
/// problems have a single component.
pub trait Objective {
    fn dim(&self) -> usize;
    fn num_samples(&self) -> usize;
    fn value_grad(&self, x: &DenseVector, batch: &[usize]) -> Result<(f64, DenseVector)>;

    fn value(&self, x: &DenseVector, batch: &[usize]) -> Result<f64> {
        Ok(self.value_grad(x, batch)?.0)
    }

    fn full_value_grad(&self, x: &DenseVector) -> Result<(f64, DenseVector)> {
        let all: Vec<usize> = (0..self.num_samples()).collect();
        self.value_grad(x, &all)
    }
}

/// How the quadratic term of a user-supplied matrix is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadConvention {
    /// `½ xᵀAx + bᵀx + c`
    Half,
    /// `xᵀAx + bᵀx + c`, stored internally with `A` doubled.
    Full,
}

#[derive(Debug, Clone)]
enum Hessian {
    Dense(DMatrix<f64>),
    Diagonal(Vec<f64>),
}

/// `f(x) = ½ xᵀAx + bᵀx + c` with `A` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    a: Hessian,
    b: Vec<f64>,
    c: f64,
    eig_min: f64,
    eig_max: f64,
}

impl QuadraticProblem {
    pub fn diagonal(a: Vec<f64>, b: Vec<f64>, c: f64, convention: QuadConvention) -> Result<Self> {
        check_dims(a.len(), b.len())?;
        if let Some((index, &value)) = a.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositive { index, value });
        }
        check_finite(&b, c)?;
        let scale = convention_scale(convention);
        let a: Vec<f64> = a.into_iter().map(|v| v * scale).collect();
        let eig_min = a.iter().copied().fold(f64::INFINITY, f64::min);
        let eig_max = a.iter().copied().fold(0.0, f64::max);
        Ok(Self { a: Hessian::Diagonal(a), b, c, eig_min, eig_max })
    }

    /// Dense `A` given row by row; must be symmetric to 1e-12 relative.
    pub fn dense(rows: Vec<Vec<f64>>, b: Vec<f64>, c: f64, convention: QuadConvention) -> Result<Self> {
        let n = rows.len();
        check_dims(n, b.len())?;
        for row in &rows {
            check_dims(n, row.len())?;
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        check_finite(&flat, c)?;
        check_finite(&b, c)?;
        let m = DMatrix::from_row_slice(n, n, &flat) * convention_scale(convention);
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return Err(invalid("quadratic matrix is not symmetric"));
        }
        let m = (&m + m.transpose()) * 0.5;
        Self::from_symmetric(m, b, c)
    }

    fn from_symmetric(m: DMatrix<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let eig = m.clone().symmetric_eigenvalues();
        let eig_min = eig.min();
        let eig_max = eig.max();
        if !(eig_min > 0.0) {
            return Err(invalid(format!("quadratic matrix is not positive definite (min eigenvalue {eig_min:e})")));
        }
        Ok(Self { a: Hessian::Dense(m), b, c, eig_min, eig_max })
    }

    /// Random `A = Q diag(s) Qᵀ` with log-spaced spectrum in `[1, cond]`, `Q`
    /// from the QR factorisation of a Gaussian matrix, and Gaussian `b`.
    pub fn random_spd(dim: usize, cond: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !(cond >= 1.0) || !cond.is_finite() {
            return Err(invalid(format!("condition number must be >= 1, got {cond}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let spectrum = DVector::from_fn(dim, |i, _| {
            if dim == 1 {
                1.0
            } else {
                cond.powf(i as f64 / (dim - 1) as f64)
            }
        });
        let m = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let b: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Self::from_symmetric(m, b, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Largest eigenvalue of `A` (the smoothness constant).
    pub fn smoothness(&self) -> f64 {
        self.eig_max
    }

    pub fn strong_convexity(&self) -> f64 {
        self.eig_min
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.a {
            Hessian::Diagonal(a) => a.iter().zip(x).map(|(ai, xi)| ai * xi).collect(),
            Hessian::Dense(m) => (m * DVector::from_column_slice(x)).as_slice().to_vec(),
        }
    }
}

fn convention_scale(convention: QuadConvention) -> f64 {
    match convention {
        QuadConvention::Half => 1.0,
        QuadConvention::Full => 2.0,
    }
}

fn check_finite(values: &[f64], c: f64) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) && c.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("quadratic coefficients"))
    }
}

pub fn quad_value_grad(p: &QuadraticProblem, x: &DenseVector) -> Result<(f64, DenseVector)> {
    check_dims(p.dim(), x.len())?;
    let ax = p.apply(x.as_slice());
    let mut f = p.c;
    let mut g = Vec::with_capacity(ax.len());
    for ((axi, bi), xi) in ax.iter().zip(&p.b).zip(x.iter()) {
        f += xi * (0.5 * axi + bi);
        g.push(axi + bi);
    }
    Ok((f, DenseVector::from_raw(g)))
}

/// Minimiser `x* = −A⁻¹b` and `f* = f(x*)`.
pub fn quad_optimum(p: &QuadraticProblem) -> Result<(DenseVector, f64)> {
    let x: Vec<f64> = match &p.a {
        Hessian::Diagonal(a) => a.iter().zip(&p.b).map(|(ai, bi)| -bi / ai).collect(),
        Hessian::Dense(m) => {
            let chol = m.clone().cholesky().ok_or_else(|| invalid("quadratic matrix is not positive definite"))?;
            let rhs = -DVector::from_column_slice(&p.b);
            chol.solve(&rhs).as_slice().to_vec()
        }
    };
    let x = DenseVector::new(x)?;
    let (f, _) = quad_value_grad(p, &x)?;
    Ok((x, f))
}

impl Objective for QuadraticProblem {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn value_grad(&self, x: &DenseVector, _batch: &[usize]) -> Result<(f64, DenseVector)> {
        quad_value_grad(self, x)
    }
}

/// Which labels count as the positive class when a dataset is turned into a
/// binary problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelTarget {
    /// Accept `{−1, +1}` or `{0, 1}` labels as they are.
    Binary,
    /// One-vs-rest: this label is `+1`, every other label `−1`.
    OneVsRest(f64),
}

/// Map raw labels to `±1`.
pub fn binarize_labels(labels: &[f64], target: LabelTarget) -> Result<Vec<f64>> {
    match target {
        LabelTarget::OneVsRest(positive) => Ok(labels.iter().map(|&l| if l == positive { 1.0 } else { -1.0 }).collect()),
        LabelTarget::Binary => {
            let signed = labels.iter().all(|&l| l == 1.0 || l == -1.0);
            let zero_one = labels.iter().all(|&l| l == 1.0 || l == 0.0);
            if signed {
                Ok(labels.to_vec())
            } else if zero_one {
                Ok(labels.iter().map(|&l| 2.0 * l - 1.0).collect())
            } else {
                Err(invalid("labels are not binary; choose a one-vs-rest positive class"))
            }
        }
    }
}

/// Mean logistic loss `log(1 + exp(−y aᵀx))` plus `(l2/2)‖x‖²`.
#[derive(Debug, Clone)]
pub struct LogRegProblem {
    rows: Vec<SparseVector>,
    labels: Vec<f64>,
    l2: f64,
    dim: usize,
}

impl LogRegProblem {
    pub fn new(rows: Vec<SparseVector>, labels: Vec<f64>, l2: f64, dim: usize) -> Result<Self> {
        check_dims(rows.len(), labels.len())?;
        if rows.is_empty() {
            return Err(invalid("logistic problem needs at least one row"));
        }
        if !(l2 >= 0.0) || !l2.is_finite() {
            return Err(invalid(format!("l2 regularisation must be >= 0, got {l2}")));
        }
        if let Some(l) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return Err(invalid(format!("label {l} is not ±1")));
        }
        if let Some(r) = rows.iter().find(|r| r.dim() > dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: r.dim() });
        }
        Ok(Self { rows, labels, l2, dim })
    }

    pub fn from_dataset(ds: &Dataset, target: LabelTarget, l2: f64) -> Result<Self> {
        let labels = binarize_labels(&ds.labels, target)?;
        Self::new(ds.rows.clone(), labels, l2, ds.dim)
    }

    pub fn rows(&self) -> &[SparseVector] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    fn check_batch(&self, x: &DenseVector, batch: &[usize]) -> Result<()> {
        check_dims(self.dim, x.len())?;
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= self.rows.len()) {
            return Err(invalid(format!("batch index {i} out of range for {} samples", self.rows.len())));
        }
        Ok(())
    }

    fn penalty(&self, x: &DenseVector) -> f64 {
        0.5 * self.l2 * x.norm_sq()
    }
}

/// `log(1 + exp(−m))` without overflow.
fn softplus_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Derivative of `log(1 + exp(−m))` with respect to `m`.
fn softplus_neg_slope(m: f64) -> f64 {
    if m > 0.0 {
        let e = (-m).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + m.exp())
    }
}

pub fn logreg_value_grad(p: &LogRegProblem, x: &DenseVector, batch: &[usize]) -> Result<(f64, DenseVector)> {
    p.check_batch(x, batch)?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut g = x.scaled(p.l2).into_vec();
    for &i in batch {
        let (row, y) = (&p.rows[i], p.labels[i]);
        let m = y * row.dot_dense(x.as_slice());
        loss += softplus_neg(m);
        row.axpy_into(scale * y * softplus_neg_slope(m), &mut g);
    }
    Ok((loss * scale + p.penalty(x), DenseVector::from_raw(g)))
}

impl Objective for LogRegProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_samples(&self) -> usize {
        self.rows.len()
    }

    fn value_grad(&self, x: &DenseVector, batch: &[usize]) -> Result<(f64, DenseVector)> {
        logreg_value_grad(self, x, batch)
    }

    fn value(&self, x: &DenseVector, batch: &[usize]) -> Result<f64> {
        self.check_batch(x, batch)?;
        let sum: f64 = batch.iter().map(|&i| softplus_neg(self.labels[i] * self.rows[i].dot_dense(x.as_slice()))).sum();
        Ok(sum * (1.0 / batch.len() as f64) + self.penalty(x))
    }
}

/// `λ_max(XᵀX)/(4n) + l2` by power iteration from a seeded start.
pub fn estimate_smoothness(p: &LogRegProblem, seed: u64) -> Result<f64> {
    const TOL: f64 = 1e-6;
    const MAX_ITER: usize = 1000;
    if p.rows.iter().all(|r| r.values().iter().all(|&v| v == 0.0)) {
        return Err(invalid("feature matrix is all zero"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..p.dim).map(|_| rng.sample::<f64, _>(StandardNormal).abs() + 0.1).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..MAX_ITER {
        let mut w = vec![0.0; p.dim];
        for row in &p.rows {
            row.axpy_into(row.dot_dense(&v), &mut w);
        }
        let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let norm = normalize(&mut w);
        if norm == 0.0 {
            // Start orthogonal to the row space; restart along a row.
            v = p.rows.iter().find(|r| r.norm_sq() > 0.0).map(|r| r.to_dense()).unwrap_or_default();
            v.resize(p.dim, 0.0);
            normalize(&mut v);
            continue;
        }
        v = w;
        let done = (next - lambda).abs() <= TOL * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    Ok(lambda / (4.0 * p.rows.len() as f64) + p.l2)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    WithReplacement,
    ShuffledEpochs,
}

/// Minibatch index sets that depend only on `(seed, t)`.
///
/// Batches are returned sorted so the summation order inside a gradient is
/// canonical. A batch the size of the dataset is always the full range.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    seed: u64,
    mode: SamplingMode,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64, mode: SamplingMode) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(invalid(format!("batch size {batch_size} must lie in [1, {n}]")));
        }
        Ok(Self { n, batch_size, seed, mode })
    }

    pub fn full(n: usize) -> Result<Self> {
        Self::new(n, n, 0, SamplingMode::ShuffledEpochs)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn is_full(&self) -> bool {
        self.batch_size == self.n
    }

    pub fn sample(&self, t: u64) -> Vec<usize> {
        if self.is_full() {
            return (0..self.n).collect();
        }
        let b = self.batch_size as u64;
        let mut out = match self.mode {
            SamplingMode::WithReplacement => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(t);
                (0..self.batch_size).map(|_| rng.random_range(0..self.n)).collect()
            }
            SamplingMode::ShuffledEpochs => {
                // Position k of the concatenation of per-epoch permutations.
                let n = self.n as u64;
                let mut out = Vec::with_capacity(self.batch_size);
                let mut cached: Option<(u64, Vec<usize>)> = None;
                for k in t * b..(t + 1) * b {
                    let epoch = k / n;
                    if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                        cached = Some((epoch, self.permutation(epoch)));
                    }
                    out.push(cached.as_ref().map(|(_, p)| p[(k % n) as usize]).unwrap_or_default());
                }
                out
            }
        };
        out.sort_unstable();
        out
    }

    fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch.wrapping_add(1 << 63));
        let mut perm: Vec<usize> = (0..self.n).collect();
        perm.shuffle(&mut rng);
        perm
    }
}
