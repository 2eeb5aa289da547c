//! Core domain types: data matrices, symmetric matrices, test statistics,
//! hypothesis ground truth and p-values.
//!
//! All types are immutable after construction and validate their invariants
//! on entry, so downstream numeric code can assume finite, well-shaped input.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{FdpError, Result};

/// An n×p sample matrix, rows = observations, columns = variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
}

impl DataMatrix {
    /// Wraps an n×p matrix. Requires n ≥ 2, p ≥ 1 and finite entries.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, p) = values.dim();
        if n < 2 {
            return Err(FdpError::InsufficientData(format!(
                "need at least 2 observations, got {n}"
            )));
        }
        if p < 1 {
            return Err(FdpError::Shape("need at least one variable".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(FdpError::Domain("data matrix contains non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Column means.
    pub fn column_means(&self) -> Array1<f64> {
        self.values.mean_axis(ndarray::Axis(0)).expect("n >= 2")
    }

    /// Rows with the column mean subtracted.
    pub fn centered(&self) -> Array2<f64> {
        &self.values - &self.column_means()
    }
}

/// A p×p real symmetric matrix stored as a packed lower triangle, so
/// `get(i, j) == get(j, i)` holds exactly by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    dim: usize,
    /// Row-major packed lower triangle: entry (i, j) with j ≤ i lives at
    /// index i(i+1)/2 + j.
    data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from an explicit function of (i, j); only the lower triangle
    /// is evaluated.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    /// Builds from a dense square matrix, reading the lower triangle.
    /// Returns a shape error if the matrix is not square or the two
    /// triangles disagree by more than `tol` anywhere.
    pub fn from_dense(m: &Array2<f64>, tol: f64) -> Result<Self> {
        let (r, c) = m.dim();
        if r != c {
            return Err(FdpError::Shape(format!("expected square matrix, got {r}x{c}")));
        }
        for i in 0..r {
            for j in 0..i {
                if (m[[i, j]] - m[[j, i]]).abs() > tol {
                    return Err(FdpError::Shape(format!(
                        "matrix not symmetric at ({i},{j}): {} vs {}",
                        m[[i, j]],
                        m[[j, i]]
                    )));
                }
            }
        }
        Ok(Self::from_fn(r, |i, j| m[[i, j]]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i >= j { (i, j) } else { (j, i) };
        self.data[a * (a + 1) / 2 + b]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i >= j { (i, j) } else { (j, i) };
        self.data[a * (a + 1) / 2 + b] = v;
    }

    /// Expands to a dense p×p array.
    pub fn to_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.dim, self.dim), |(i, j)| self.get(i, j))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..=i {
                let v = self.get(i, j);
                s += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        s.sqrt()
    }
}

/// Length-p vector of standardized test statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TestVector {
    z: Vec<f64>,
}

impl TestVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if !z.iter().all(|v| v.is_finite()) {
            return Err(FdpError::Domain("test statistics contain non-finite entries".into()));
        }
        Ok(Self { z })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }
}

/// Ground truth for a simulated testing problem: which hypotheses are null
/// and the signal means on the test-statistic scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTruth {
    is_null: Vec<bool>,
    p0: usize,
    p1: usize,
    mu_star: Vec<f64>,
}

impl HypothesisTruth {
    /// Builds from the signal means; coordinate i is null iff `mu_star[i] == 0`.
    pub fn from_signal(mu_star: Vec<f64>) -> Self {
        let is_null: Vec<bool> = mu_star.iter().map(|&m| m == 0.0).collect();
        let p0 = is_null.iter().filter(|&&b| b).count();
        let p1 = is_null.len() - p0;
        Self {
            is_null,
            p0,
            p1,
            mu_star,
        }
    }

    pub fn p(&self) -> usize {
        self.is_null.len()
    }

    pub fn p0(&self) -> usize {
        self.p0
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn is_null(&self) -> &[bool] {
        &self.is_null
    }

    pub fn mu_star(&self) -> &[f64] {
        &self.mu_star
    }
}

/// Length-p vector of p-values, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PValueVector {
    values: Vec<f64>,
}

impl PValueVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FdpError::Domain(format!("p-value {v} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn data_matrix_rejects_single_row() {
        let err = DataMatrix::new(array![[1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, FdpError::InsufficientData(_)));
    }

    #[test]
    fn data_matrix_rejects_nan() {
        let err = DataMatrix::new(array![[1.0, f64::NAN], [0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, FdpError::Domain(_)));
    }

    #[test]
    fn symmetric_storage_is_exact() {
        let m = SymmetricMatrix::from_fn(4, |i, j| (i * 7 + j) as f64 / 3.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.get(i, j).to_bits(), m.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn from_dense_rejects_asymmetric() {
        let d = array![[1.0, 2.0], [2.5, 1.0]];
        assert!(SymmetricMatrix::from_dense(&d, 1e-12).is_err());
    }

    #[test]
    fn serde_round_trip_is_bit_exact() {
        let m = SymmetricMatrix::from_fn(5, |i, j| ((i + 1) as f64).ln() * 0.1 - (j as f64) / 7.0);
        let json = serde_json::to_string(&m).unwrap();
        let back: SymmetricMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(m.dim(), back.dim());
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(m.get(i, j).to_bits(), back.get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn truth_counts_partition() {
        let t = HypothesisTruth::from_signal(vec![0.0, 2.0, 0.0, -1.0]);
        assert_eq!(t.p0(), 2);
        assert_eq!(t.p1(), 2);
        assert_eq!(t.p0() + t.p1(), t.p());
        for (i, &null) in t.is_null().iter().enumerate() {
            assert_eq!(null, t.mu_star()[i] == 0.0);
        }
    }

    #[test]
    fn pvalues_validate_range() {
        assert!(PValueVector::new(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(PValueVector::new(vec![1.1]).is_err());
        assert!(PValueVector::new(vec![-0.1]).is_err());
    }
}
