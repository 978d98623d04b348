//! Finite-checked numeric types and the small linear-algebra surface the
//! rest of the crate is written against.
//!
//! Everything here is pure and freely shareable between threads. All
//! logarithms crate-wide are natural.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance inside which a probability vector is renormalized rather than
/// rejected.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Minimum eigenvalue for a matrix to count as positive-definite.
pub const SPD_MIN_EIG: f64 = 1e-12;

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Ordered sequence of finite reals, dimension >= 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("vector must be non-empty".into()));
        }
        if !all_finite(&values) {
            return Err(Error::InvalidInput("vector has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for RealVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<RealVector> for Vec<f64> {
    fn from(v: RealVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("matrix dimensions must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !all_finite(&data) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::InvalidInput("matrix must have at least one row".into()));
        }
        let c = rows[0].len();
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidInput("matrix rows have unequal lengths".into()));
        }
        Self::new(r, c, rows.into_iter().flatten().collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Max |M - Mᵀ| entry; zero for exactly symmetric matrices.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl TryFrom<Vec<Vec<f64>>> for RealMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<RealMatrix> for Vec<Vec<f64>> {
    fn from(m: RealMatrix) -> Self {
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }
}

/// Probability vector over C >= 2 outcomes.
///
/// Construction renormalizes when the mass is within [`PROB_SUM_TOL`] of 1
/// and rejects otherwise; divergences downstream are sensitive to mass
/// deficits, so silent acceptance of sloppier inputs is not an option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityDistribution(Vec<f64>);

impl ProbabilityDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidInput(
                "distribution needs at least 2 outcomes".into(),
            ));
        }
        if !all_finite(&probs) {
            return Err(Error::InvalidInput("distribution has non-finite entries".into()));
        }
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidInput("distribution has negative entries".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "distribution mass {sum} is not 1 within {PROB_SUM_TOL}"
            )));
        }
        let probs = probs.into_iter().map(|p| p / sum).collect();
        Ok(Self(probs))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn uniform(c: usize) -> Result<Self> {
        Self::new(vec![1.0 / c as f64; c])
    }
}

impl TryFrom<Vec<f64>> for ProbabilityDistribution {
    type Error = Error;
    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<ProbabilityDistribution> for Vec<f64> {
    fn from(p: ProbabilityDistribution) -> Self {
        p.0
    }
}

/// Seed for all randomized procedures in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSeed(pub u64);

/// Max-shifted softmax over raw scores.
pub fn softmax_distribution(scores: &RealVector) -> Result<ProbabilityDistribution> {
    if scores.dim() < 2 {
        return Err(Error::InvalidInput("softmax needs at least 2 scores".into()));
    }
    ProbabilityDistribution::new(softmax_slice(scores.as_slice()))
}

/// Softmax on a raw slice; callers guarantee finiteness and len >= 2.
pub(crate) fn softmax_slice(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Log-softmax, max-shifted for stability.
pub(crate) fn log_softmax_slice(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scores
        .iter()
        .map(|s| (s - max).exp())
        .sum::<f64>()
        .ln();
    scores.iter().map(|s| s - max - log_sum).collect()
}

/// Eigenvalues of a symmetric matrix, sorted descending.
///
/// Values in (-1e-9, 0) are clamped to zero so that positive-semidefinite
/// inputs report a nonnegative spectrum.
pub fn sym_spd_eigvals(m: &RealMatrix) -> Result<RealVector> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if m.asymmetry() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "matrix is asymmetric by {}",
            m.asymmetry()
        )));
    }
    let eig = m.to_nalgebra().symmetric_eigen();
    let mut vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| if v < 0.0 && v > -1e-9 { 0.0 } else { v })
        .collect();
    vals.sort_by(|a, b| b.partial_cmp(a).expect("eigenvalues are finite"));
    RealVector::new(vals)
}

/// Symmetric positive-definite matrix with its Cholesky factorization cached
/// at construction. The cache is immutable afterward, so values are safe to
/// share across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RealMatrix", into = "RealMatrix")]
pub struct SpdMatrix {
    matrix: RealMatrix,
    #[serde(skip)]
    factor: Cholesky<f64, nalgebra::Dyn>,
}

impl SpdMatrix {
    /// Validates symmetry and a minimum eigenvalue above [`SPD_MIN_EIG`],
    /// then factors once.
    pub fn new(matrix: RealMatrix) -> Result<Self> {
        let eigs = sym_spd_eigvals(&matrix)?;
        let min_eig = *eigs
            .as_slice()
            .last()
            .expect("eigenvalue vector is non-empty");
        if min_eig <= SPD_MIN_EIG {
            return Err(Error::SingularMatrix);
        }
        let factor = Cholesky::new(matrix.to_nalgebra()).ok_or(Error::SingularMatrix)?;
        Ok(Self { matrix, factor })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }

    /// Solves Σx = v via the cached factorization.
    pub fn solve(&self, v: &RealVector) -> Result<RealVector> {
        if v.dim() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "solve: dimension mismatch {} vs {}",
                v.dim(),
                self.dim()
            )));
        }
        let rhs = DVector::from_column_slice(v.as_slice());
        let x = self.factor.solve(&rhs);
        RealVector::new(x.iter().cloned().collect())
    }

    /// Quadratic form wᵀ Σ⁻¹ w for a raw slice argument.
    pub fn inv_quadratic(&self, w: &[f64]) -> Result<f64> {
        let wv = RealVector::new(w.to_vec())?;
        let x = self.solve(&wv)?;
        Ok(dot(w, x.as_slice()))
    }
}

impl TryFrom<RealMatrix> for SpdMatrix {
    type Error = Error;
    fn try_from(m: RealMatrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<SpdMatrix> for RealMatrix {
    fn from(s: SpdMatrix) -> Self {
        s.matrix
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

/// Solves Σx = v for symmetric positive-definite Σ.
pub fn solve_spd(sigma: &RealMatrix, v: &RealVector) -> Result<RealVector> {
    SpdMatrix::new(sigma.clone())?.solve(v)
}
