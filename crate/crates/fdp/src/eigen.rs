//! Symmetric eigendecomposition with deterministic ordering and signs,
//! principal-component loading extraction, and eigen-perturbation
//! diagnostics (Weyl / sin-θ bounds).

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{EigValsh, UPLO};

use crate::error::{FdpError, Result};
use crate::types::SymmetricMatrix;

/// Threshold below which a leading eigenvector component is considered zero
/// when fixing signs.
const SIGN_EPS: f64 = 1e-12;

/// Full spectrum of a symmetric matrix: eigenvalues sorted non-increasing,
/// eigenvectors as matching orthonormal columns.
///
/// Sign convention: the first component of each eigenvector with magnitude
/// above 1e-12 is positive, so repeated decompositions of the same matrix
/// are bit-identical across runs.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    eigenvectors: Array2<f64>,
}

impl EigenSystem {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// p×p matrix whose column j is the eigenvector for eigenvalue j.
    pub fn eigenvectors(&self) -> &Array2<f64> {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

fn fix_column_sign(col: &mut ndarray::ArrayViewMut1<f64>) {
    for &v in col.iter() {
        if v.abs() > SIGN_EPS {
            if v < 0.0 {
                col.mapv_inplace(|x| -x);
            }
            return;
        }
    }
}

/// Reorders a LAPACK (ascending) eigensystem to non-increasing order and
/// applies the sign convention.
fn descending(vals: Array1<f64>, vecs: Array2<f64>) -> EigenSystem {
    let p = vals.len();
    let eigenvalues: Vec<f64> = vals.iter().rev().copied().collect();
    let mut eigenvectors = Array2::zeros((p, p));
    for j in 0..p {
        eigenvectors.column_mut(j).assign(&vecs.column(p - 1 - j));
        fix_column_sign(&mut eigenvectors.column_mut(j));
    }
    EigenSystem {
        eigenvalues,
        eigenvectors,
    }
}

/// Full symmetric eigendecomposition.
///
/// Uses the divide-and-conquer driver (dsyevd), which is several times
/// faster than the QR driver for the 1000-dimensional matrices the
/// covariance pipeline decomposes on every simulation round.
pub fn sym_eigen(m: &SymmetricMatrix) -> Result<EigenSystem> {
    use std::os::raw::{c_char, c_int};

    let p = m.dim();
    // Symmetric input, so row- and column-major layouts coincide.
    let mut a: Vec<f64> = Vec::with_capacity(p * p);
    for j in 0..p {
        for i in 0..p {
            a.push(m.get(i, j));
        }
    }
    let mut vals = vec![0.0f64; p];
    let n = p as c_int;
    let jobz = b'V' as c_char;
    let uplo = b'L' as c_char;
    let mut info: c_int = 0;

    // Workspace query, then the actual call.
    let mut work_query = [0.0f64];
    let mut iwork_query = [0 as c_int];
    let neg_one: c_int = -1;
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &n,
            a.as_mut_ptr(),
            &n,
            vals.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &neg_one,
            iwork_query.as_mut_ptr(),
            &neg_one,
            &mut info,
        );
    }
    if info != 0 {
        return Err(FdpError::Numeric(format!(
            "symmetric eigensolver workspace query failed: info = {info}"
        )));
    }
    let lwork = work_query[0] as c_int;
    let liwork = iwork_query[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0 as c_int; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &n,
            a.as_mut_ptr(),
            &n,
            vals.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(FdpError::Numeric(format!(
            "symmetric eigensolver failed: info = {info}"
        )));
    }

    // A now holds the (ascending) eigenvectors column-major.
    let vecs = Array2::from_shape_fn((p, p), |(i, j)| a[j * p + i]);
    Ok(descending(Array1::from(vals), vecs))
}

/// Eigenvalues only, sorted non-increasing.
pub fn sym_eigenvalues(m: &SymmetricMatrix) -> Result<Vec<f64>> {
    let dense = m.to_dense();
    let vals = dense
        .eigvalsh(UPLO::Lower)
        .map_err(|e| FdpError::Numeric(format!("symmetric eigensolver failed: {e}")))?;
    Ok(vals.iter().rev().copied().collect())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &SymmetricMatrix) -> Result<f64> {
    let vals = sym_eigenvalues(m)?;
    Ok(*vals.last().expect("non-empty matrix"))
}

/// Unnormalized principal-component loadings: column j of the result is
/// sqrt(λ_j)·γ_j for j = 1..k. Requires λ_k > 0.
pub fn top_k_loadings(es: &EigenSystem, k: usize) -> Result<Array2<f64>> {
    let p = es.dim();
    if k < 1 || k > p {
        return Err(FdpError::Parameter(format!("k = {k} outside 1..={p}")));
    }
    let lambda_k = es.eigenvalues[k - 1];
    if lambda_k <= 0.0 {
        return Err(FdpError::Rank(format!(
            "eigenvalue {k} is {lambda_k}; loadings require a positive spectrum"
        )));
    }
    let mut b = es.eigenvectors.slice(ndarray::s![.., ..k]).to_owned();
    for j in 0..k {
        let s = es.eigenvalues[j].sqrt();
        b.column_mut(j).mapv_inplace(|x| x * s);
    }
    Ok(b)
}

/// Eigen-perturbation diagnostics comparing two symmetric matrices.
#[derive(Debug, Clone)]
pub struct PerturbationReport {
    /// ‖A − B‖ (operator norm).
    pub op_norm_diff: f64,
    /// |λ_i(A) − λ_i(B)| for every index.
    pub eigenvalue_gaps: Vec<f64>,
    /// Per-index sin-θ right-hand bound
    /// √2‖A−B‖ / min(|λ̂_{i−1} − λ_i|, |λ_i − λ̂_{i+1}|), using the spectrum
    /// of A as λ and of B as λ̂; infinite when the gap vanishes.
    pub sin_theta_bounds: Vec<f64>,
}

/// Weyl / sin-θ report for a pair of same-dimension symmetric matrices.
pub fn eigen_perturbation_report(
    a: &SymmetricMatrix,
    b: &SymmetricMatrix,
) -> Result<PerturbationReport> {
    if a.dim() != b.dim() {
        return Err(FdpError::Shape(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let p = a.dim();
    let diff = SymmetricMatrix::from_fn(p, |i, j| a.get(i, j) - b.get(i, j));
    let dvals = sym_eigenvalues(&diff)?;
    let op_norm_diff = dvals
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));

    let la = sym_eigenvalues(a)?;
    let lb = sym_eigenvalues(b)?;
    let eigenvalue_gaps: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| (x - y).abs()).collect();

    let mut sin_theta_bounds = Vec::with_capacity(p);
    for i in 0..p {
        let left = if i == 0 {
            f64::INFINITY
        } else {
            (lb[i - 1] - la[i]).abs()
        };
        let right = if i + 1 == p {
            f64::INFINITY
        } else {
            (la[i] - lb[i + 1]).abs()
        };
        let gap = left.min(right);
        let bound = if gap > 0.0 {
            std::f64::consts::SQRT_2 * op_norm_diff / gap
        } else {
            f64::INFINITY
        };
        sin_theta_bounds.push(bound);
    }

    Ok(PerturbationReport {
        op_norm_diff,
        eigenvalue_gaps,
        sin_theta_bounds,
    })
}

/// Reconstruction Σ λ_i γ_i γ_iᵀ of an eigensystem (test/diagnostic helper).
pub fn reconstruct(es: &EigenSystem) -> Array2<f64> {
    let lambda = Array1::from(es.eigenvalues.clone());
    let scaled = &es.eigenvectors * &lambda.view().insert_axis(Axis(0));
    scaled.dot(&es.eigenvectors.t())
}
