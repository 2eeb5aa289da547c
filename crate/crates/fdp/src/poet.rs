//! Sparse-residual factor covariance estimation.
//!
//! The estimator extracts the top principal components of the sample
//! covariance, applies entry-wise adaptive thresholding to the residual
//! covariance, and returns the sum of the low-rank part and the
//! thresholded residual. When the thresholded residual is not positive
//! definite the threshold constant is doubled a bounded number of times.

use ndarray::Array2;
use ndarray_linalg::{cholesky::Cholesky, UPLO};
use serde::{Deserialize, Serialize};

use crate::eigen::{min_eigenvalue, sym_eigen};
use crate::error::{FdpError, Result};
use crate::types::{DataMatrix, SymmetricMatrix};

/// SCAD concavity parameter.
const SCAD_A: f64 = 3.7;

/// Relative floor below which a requested principal component is treated
/// as numerically rank deficient.
const RANK_EPS: f64 = 1e-12;

/// Entry-wise thresholding rule applied to the residual covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// z·1{|z| ≥ τ}.
    Hard,
    /// sgn(z)·(|z| − τ)₊.
    Soft,
    /// Soft near the threshold, identity far from it, linear blend between.
    Scad,
}

/// Number of factors: fixed by the caller or selected from the eigenvalue
/// profile of the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KChoice {
    Fixed(usize),
    Auto,
}

/// Configuration of the covariance estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoetConfig {
    pub k: KChoice,
    /// Threshold constant C; τ_ij = C·θ̂_ij·ω. C = 0 disables thresholding.
    pub c: f64,
    pub rule: ThresholdRule,
    /// Eigenvalue cutoff multiplier for automatic factor selection.
    pub epsilon_k: f64,
    /// Smallest acceptable eigenvalue of the thresholded residual.
    pub pd_floor: f64,
}

impl Default for PoetConfig {
    fn default() -> Self {
        Self {
            k: KChoice::Auto,
            c: 0.5,
            rule: ThresholdRule::Soft,
            epsilon_k: 0.1,
            pd_floor: 1e-6,
        }
    }
}

/// Principal components of the sample covariance together with residual
/// second and fourth moment statistics used by adaptive thresholding.
#[derive(Debug, Clone)]
pub struct ResidualStats {
    /// Top k sample covariance eigenvalues, non-increasing.
    eigenvalues: Vec<f64>,
    /// p×k, column j = sqrt(λ_j)·γ_j.
    loadings: Array2<f64>,
    /// n×k estimated factor scores with FᵀF/n = I.
    factors: Array2<f64>,
    /// Residual sample covariance σ̂_ij = (1/n) Σ_l û_il û_jl.
    sigma_hat: SymmetricMatrix,
    /// θ̂_ij = sqrt of (1/n) Σ_l (û_il û_jl − σ̂_ij)².
    theta_hat: SymmetricMatrix,
}

impl ResidualStats {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn loadings(&self) -> &Array2<f64> {
        &self.loadings
    }

    pub fn factors(&self) -> &Array2<f64> {
        &self.factors
    }

    pub fn sigma_hat(&self) -> &SymmetricMatrix {
        &self.sigma_hat
    }

    pub fn theta_hat(&self) -> &SymmetricMatrix {
        &self.theta_hat
    }
}

/// Output of [`poet_covariance`].
#[derive(Debug, Clone)]
pub struct PoetResult {
    pub covariance: SymmetricMatrix,
    /// Number of factors actually used.
    pub k_used: usize,
    /// Threshold constant after any escalation.
    pub c_used: f64,
    /// Rate factor ω = 1/√p + √(ln p / n).
    pub omega: f64,
    /// Smallest eigenvalue of the thresholded residual covariance.
    pub min_residual_eigenvalue: f64,
    /// Set when escalation exhausted its budget without reaching the floor.
    pub pd_warning: bool,
}

/// Sample covariance with divisor n.
pub fn sample_covariance(x: &DataMatrix) -> SymmetricMatrix {
    let xc = x.centered();
    let n = x.n() as f64;
    let s = xc.t().dot(&xc) / n;
    SymmetricMatrix::from_fn(x.p(), |i, j| s[[i, j]])
}

/// Counts eigenvalues above ε·√p. Input must be sorted non-increasing.
pub fn select_num_factors(eigenvalues: &[f64], epsilon: f64, p: usize) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(FdpError::Parameter(format!(
            "factor selection cutoff must be positive, got {epsilon}"
        )));
    }
    if p == 0 {
        return Err(FdpError::Parameter("p must be positive".into()));
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
        return Err(FdpError::Parameter(
            "eigenvalues must be sorted non-increasing".into(),
        ));
    }
    let cutoff = epsilon * (p as f64).sqrt();
    Ok(eigenvalues.iter().take_while(|&&v| v > cutoff).count())
}

/// Eigenvalues of the n×n matrix X̃X̃ᵀ/p (X̃ the row-centered data), sorted
/// non-increasing. These equal the sample covariance eigenvalues scaled by
/// n/p and separate the factor spikes from the noise bulk on the √p scale
/// used by [`select_num_factors`].
pub fn scaled_gram_eigenvalues(x: &DataMatrix) -> Result<Vec<f64>> {
    let xc = x.centered();
    let p = x.p() as f64;
    let g = xc.dot(&xc.t()) / p;
    let m = SymmetricMatrix::from_fn(x.n(), |i, j| g[[i, j]]);
    crate::eigen::sym_eigenvalues(&m)
}

/// Principal components and residual statistics for a k-factor fit.
///
/// The factor scores come from the n×n Gram matrix of the centered data:
/// its top k eigenvectors v_j give F = √n·[v_1 … v_k] and loadings
/// B = X̃ᵀV/√n, so σ̂ = Σ̂_sam − BBᵀ holds exactly. k = 0 yields the pure
/// residual case û_l = x_l − x̄.
pub fn residual_stats(x: &DataMatrix, k: usize) -> Result<ResidualStats> {
    let n = x.n();
    let p = x.p();
    if k >= n {
        return Err(FdpError::Parameter(format!(
            "k = {k} factors require at least k + 1 = {} observations, got {n}",
            k + 1
        )));
    }
    if k > p {
        return Err(FdpError::Parameter(format!("k = {k} exceeds p = {p}")));
    }

    let xc = x.centered();
    let nf = n as f64;
    let sample = xc.t().dot(&xc) / nf;

    let (eigenvalues, loadings, factors, resid) = if k == 0 {
        (Vec::new(), Array2::zeros((p, 0)), Array2::zeros((n, 0)), xc)
    } else {
        let g = xc.dot(&xc.t()) / nf;
        let m = SymmetricMatrix::from_fn(n, |i, j| g[[i, j]]);
        let es = sym_eigen(&m)?;
        let lead = es.eigenvalues()[0];
        let lam_k = es.eigenvalues()[k - 1];
        if lam_k <= RANK_EPS * lead.max(1.0) {
            return Err(FdpError::Rank(format!(
                "eigenvalue {k} of the sample covariance is {lam_k}; the data do not support {k} factors"
            )));
        }
        let v = es.eigenvectors().slice(ndarray::s![.., ..k]).to_owned();
        let factors = &v * nf.sqrt();
        let loadings = xc.t().dot(&v) / nf.sqrt();
        let resid = &xc - &factors.dot(&loadings.t());
        (
            es.eigenvalues()[..k].to_vec(),
            loadings,
            factors,
            resid,
        )
    };

    // σ̂ by subtraction keeps the decomposition Σ̂_sam = BBᵀ + σ̂ exact.
    let bbt = loadings.dot(&loadings.t());
    let sigma_hat = SymmetricMatrix::from_fn(p, |i, j| sample[[i, j]] - bbt[[i, j]]);

    // (1/n) Σ_l (û_il û_jl)² via one Gram product of squared residuals,
    // then θ̂² = that − σ̂² (variance shortcut, clamped at zero).
    let sq = resid.mapv(|v| v * v);
    let fourth = sq.t().dot(&sq) / nf;
    let theta_hat = SymmetricMatrix::from_fn(p, |i, j| {
        let s = sigma_hat.get(i, j);
        (fourth[[i, j]] - s * s).max(0.0).sqrt()
    });

    Ok(ResidualStats {
        eigenvalues,
        loadings,
        factors,
        sigma_hat,
        theta_hat,
    })
}

fn apply_rule(z: f64, tau: f64, rule: ThresholdRule) -> f64 {
    match rule {
        ThresholdRule::Hard => {
            if z.abs() >= tau {
                z
            } else {
                0.0
            }
        }
        ThresholdRule::Soft => z.signum() * (z.abs() - tau).max(0.0),
        ThresholdRule::Scad => {
            let az = z.abs();
            if az <= 2.0 * tau {
                z.signum() * (az - tau).max(0.0)
            } else if az <= SCAD_A * tau {
                ((SCAD_A - 1.0) * z - z.signum() * SCAD_A * tau) / (SCAD_A - 2.0)
            } else {
                z
            }
        }
    }
}

/// Entry-wise adaptive thresholding of σ̂ with τ_ij = c·θ̂_ij·ω.
/// The diagonal is never thresholded.
pub fn adaptive_threshold(
    sigma_hat: &SymmetricMatrix,
    theta_hat: &SymmetricMatrix,
    omega: f64,
    c: f64,
    rule: ThresholdRule,
) -> Result<SymmetricMatrix> {
    if sigma_hat.dim() != theta_hat.dim() {
        return Err(FdpError::Shape(format!(
            "σ̂ is {}-dimensional but θ̂ is {}-dimensional",
            sigma_hat.dim(),
            theta_hat.dim()
        )));
    }
    if !(c >= 0.0 && c.is_finite()) || !(omega > 0.0 && omega.is_finite()) {
        return Err(FdpError::Parameter(format!(
            "threshold requires c >= 0 and omega > 0, got c = {c}, omega = {omega}"
        )));
    }
    Ok(SymmetricMatrix::from_fn(sigma_hat.dim(), |i, j| {
        if i == j {
            sigma_hat.get(i, i)
        } else {
            apply_rule(sigma_hat.get(i, j), c * theta_hat.get(i, j) * omega, rule)
        }
    }))
}

/// Rate factor ω = 1/√p + √(ln p / n) controlling the threshold level.
pub fn threshold_rate(n: usize, p: usize) -> f64 {
    let pf = p as f64;
    1.0 / pf.sqrt() + ((pf.ln()) / n as f64).sqrt()
}

/// Thresholds the residual, doubling c up to six times until the smallest
/// eigenvalue clears `pd_floor`. Returns the matrix, the constant used and
/// whether the budget ran out. c = 0 skips escalation.
fn threshold_with_escalation(
    sigma_hat: &SymmetricMatrix,
    theta_hat: &SymmetricMatrix,
    omega: f64,
    cfg: &PoetConfig,
) -> Result<(SymmetricMatrix, f64, bool)> {
    if cfg.c == 0.0 {
        let t = adaptive_threshold(sigma_hat, theta_hat, omega, 0.0, cfg.rule)?;
        return Ok((t, 0.0, false));
    }
    let p = sigma_hat.dim();
    let mut c_try = cfg.c;
    for attempt in 0..=6 {
        let t = adaptive_threshold(sigma_hat, theta_hat, omega, c_try, cfg.rule)?;
        // λ_min(T) ≥ floor iff T − floor·I is positive semidefinite; a
        // Cholesky attempt checks that far cheaper than a full spectrum.
        let mut shifted = t.to_dense();
        for i in 0..p {
            shifted[[i, i]] -= cfg.pd_floor;
        }
        if shifted.cholesky(UPLO::Lower).is_ok() {
            return Ok((t, c_try, false));
        }
        if attempt < 6 {
            c_try *= 2.0;
        } else {
            return Ok((t, c_try, true));
        }
    }
    unreachable!("escalation loop returns on every path");
}

/// Low-rank plus thresholded-residual covariance estimate.
pub fn poet_covariance(x: &DataMatrix, cfg: &PoetConfig) -> Result<PoetResult> {
    if !(cfg.c >= 0.0 && cfg.c.is_finite()) {
        return Err(FdpError::Parameter(format!("c must be >= 0, got {}", cfg.c)));
    }
    if !(cfg.pd_floor > 0.0 && cfg.pd_floor.is_finite()) {
        return Err(FdpError::Parameter(format!(
            "pd_floor must be positive, got {}",
            cfg.pd_floor
        )));
    }
    let n = x.n();
    let p = x.p();
    let k_used = match cfg.k {
        KChoice::Fixed(k) => k,
        KChoice::Auto => {
            let vals = scaled_gram_eigenvalues(x)?;
            select_num_factors(&vals, cfg.epsilon_k, p)?.min(n - 1)
        }
    };

    let rs = residual_stats(x, k_used)?;
    let omega = threshold_rate(n, p);
    let (thresholded, c_used, pd_warning) =
        threshold_with_escalation(rs.sigma_hat(), rs.theta_hat(), omega, cfg)?;
    let min_residual_eigenvalue = min_eigenvalue(&thresholded)?;

    let bbt = rs.loadings().dot(&rs.loadings().t());
    let covariance =
        SymmetricMatrix::from_fn(p, |i, j| bbt[[i, j]] + thresholded.get(i, j));

    Ok(PoetResult {
        covariance,
        k_used,
        c_used,
        omega,
        min_residual_eigenvalue,
        pd_warning,
    })
}

/// Converts a covariance to a correlation matrix, returning the standard
/// deviations alongside. Fails on a non-positive diagonal entry.
pub fn to_correlation(m: &SymmetricMatrix) -> Result<(SymmetricMatrix, Vec<f64>)> {
    let p = m.dim();
    let mut sds = Vec::with_capacity(p);
    for i in 0..p {
        let v = m.get(i, i);
        if !(v > 0.0 && v.is_finite()) {
            return Err(FdpError::DegenerateVariance { index: i, value: v });
        }
        sds.push(v.sqrt());
    }
    let corr = SymmetricMatrix::from_fn(p, |i, j| {
        if i == j {
            1.0
        } else {
            m.get(i, j) / (sds[i] * sds[j])
        }
    });
    Ok((corr, sds))
}
