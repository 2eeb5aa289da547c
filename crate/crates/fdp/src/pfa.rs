//! Multiple-testing core: p-values, rejection counts, factor-realization
//! estimation (least squares, least absolute deviation, penalized), FDP
//! estimators, and the dependence-adjusted statistics.
//!
//! Test statistics are modeled as Z_i = μ_i + b_iᵀW + a_i^{-1}·e_i with
//! W the realized common factors. Estimating W from the observed Z and
//! plugging it into the normal tail formula yields the FDP estimate; the
//! adjusted procedure subtracts b̂_iᵀŴ from each statistic before testing.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::eigen::{sym_eigen, top_k_loadings, EigenSystem};
use crate::error::{FdpError, Result};
use crate::normal::{phi, std_normal_quantile};
use crate::types::{HypothesisTruth, PValueVector, SymmetricMatrix, TestVector};

/// Default cap δ on ‖b̂_i‖², keeping â_i = (1 − ‖b̂_i‖²)^{-1/2} at most 10.
const DEFAULT_NORM_CAP_DELTA: f64 = 0.01;

/// Smallest p-value reported; tinier tail probabilities are clamped here.
const P_VALUE_FLOOR: f64 = 1e-300;

/// Residual magnitude floor in the reweighting step of the LAD solver.
const LAD_WEIGHT_FLOOR: f64 = 1e-8;

const LAD_TOL: f64 = 1e-12;
const LAD_MAX_ITER: usize = 500;

const PENALIZED_TOL: f64 = 1e-8;
const PENALIZED_MAX_ITER: usize = 200;

/// SCAD shape parameter for the penalized factor-realization estimator.
const SCAD_A: f64 = 3.7;

/// Largest acceptable condition number of B̂ᵀB̂ in least-squares steps.
const MAX_CONDITION: f64 = 1e12;

/// Penalty applied to the incidental mean parameters in
/// [`estimate_w_penalized`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    Soft,
    Hard,
    Scad,
}

/// How a factor realization was estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WMethod {
    LeastSquares,
    Lad,
    PenalizedScad,
}

/// Estimated loadings b̂_i (rows) with the derived standardization weights.
#[derive(Debug, Clone)]
pub struct FactorRepresentation {
    /// p×k matrix whose row i is b̂_iᵀ.
    loadings: Array2<f64>,
    /// ‖b̂_i‖² after capping at 1 − δ.
    row_norm_sq: Vec<f64>,
    /// â_i = (1 − row_norm_sq[i])^{-1/2}, in [1, 1/√δ].
    a: Vec<f64>,
}

impl FactorRepresentation {
    /// Wraps an explicit p×k loading matrix using the default norm cap.
    pub fn from_loadings(loadings: Array2<f64>) -> Result<Self> {
        Self::from_loadings_with_cap(loadings, DEFAULT_NORM_CAP_DELTA)
    }

    /// Wraps a loading matrix, capping every squared row norm at 1 − delta.
    pub fn from_loadings_with_cap(loadings: Array2<f64>, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(FdpError::Parameter(format!(
                "norm cap delta must lie in (0,1), got {delta}"
            )));
        }
        if !loadings.iter().all(|v| v.is_finite()) {
            return Err(FdpError::Domain("loadings contain non-finite entries".into()));
        }
        let cap = 1.0 - delta;
        let row_norm_sq: Vec<f64> = loadings
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().min(cap))
            .collect();
        let a: Vec<f64> = row_norm_sq.iter().map(|&s| 1.0 / (1.0 - s).sqrt()).collect();
        Ok(Self {
            loadings,
            row_norm_sq,
            a,
        })
    }

    /// Top-k representation of a correlation matrix's eigensystem. k = 0
    /// gives the factor-free representation (â_i = 1).
    pub fn from_eigen(es: &EigenSystem, k: usize) -> Result<Self> {
        let b = if k == 0 {
            Array2::zeros((es.dim(), 0))
        } else {
            top_k_loadings(es, k)?
        };
        Self::from_loadings(b)
    }

    /// Convenience: eigendecompose a correlation matrix and keep k factors.
    pub fn from_correlation(corr: &SymmetricMatrix, k: usize) -> Result<Self> {
        Self::from_eigen(&sym_eigen(corr)?, k)
    }

    pub fn p(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn k(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn loadings(&self) -> &Array2<f64> {
        &self.loadings
    }

    pub fn row_norm_sq(&self) -> &[f64] {
        &self.row_norm_sq
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// b̂_iᵀw for every i.
    fn eta(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.k() {
            return Err(FdpError::Shape(format!(
                "realization has {} entries but k = {}",
                w.len(),
                self.k()
            )));
        }
        let wv = Array1::from(w.to_vec());
        Ok(self.loadings.dot(&wv).to_vec())
    }
}

/// Estimated realization Ŵ of the common factors.
#[derive(Debug, Clone, Serialize)]
pub struct FactorRealization {
    pub w: Vec<f64>,
    pub method: WMethod,
    pub iterations: usize,
    pub converged: bool,
}

/// One threshold's worth of FDP output.
#[derive(Debug, Clone, Serialize)]
pub struct FdpRow {
    pub t: f64,
    pub r: usize,
    pub v_hat: f64,
    pub fdp_hat: f64,
    pub fdp_hat_capped: f64,
    pub v_true: Option<usize>,
    pub fdp_true: Option<f64>,
    pub fdp_oracle: Option<f64>,
}

/// FDP estimates over a grid of thresholds.
#[derive(Debug, Clone, Serialize)]
pub struct FdpReport {
    pub rows: Vec<FdpRow>,
}

/// Two-sided p-values 2Φ(−|z_i|), floored at 1e-300.
pub fn pvalues(z: &TestVector) -> PValueVector {
    let vals = z
        .as_slice()
        .iter()
        .map(|&zi| (2.0 * phi(-zi.abs())).clamp(P_VALUE_FLOOR, 1.0))
        .collect();
    PValueVector::new(vals).expect("clamped to [1e-300, 1]")
}

/// Number of discoveries R(t) and, when ground truth is supplied, the
/// realized false discoveries V(t).
pub fn rejection_counts(
    p: &PValueVector,
    t: f64,
    truth: Option<&HypothesisTruth>,
) -> Result<(usize, Option<usize>)> {
    check_threshold(t)?;
    if let Some(tr) = truth {
        if tr.p() != p.len() {
            return Err(FdpError::Shape(format!(
                "truth covers {} hypotheses but {} p-values given",
                tr.p(),
                p.len()
            )));
        }
    }
    let r = p.as_slice().iter().filter(|&&v| v <= t).count();
    let v = truth.map(|tr| {
        p.as_slice()
            .iter()
            .zip(tr.is_null())
            .filter(|&(&pv, &null)| null && pv <= t)
            .count()
    });
    Ok((r, v))
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(FdpError::Parameter(format!(
            "threshold must lie in (0,1), got {t}"
        )));
    }
    Ok(())
}

/// Solves min_w Σ d_i (z_i − b_iᵀw)² through the normal equations, with a
/// spectral condition check on BᵀDB.
fn solve_weighted_ls(b: &Array2<f64>, z: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let k = b.ncols();
    if k == 0 {
        return Ok(Vec::new());
    }
    let p = b.nrows();
    let mut g = SymmetricMatrix::zeros(k);
    let mut rhs = vec![0.0; k];
    for i in 0..p {
        let d = weights.map_or(1.0, |w| w[i]);
        let row = b.row(i);
        for a in 0..k {
            rhs[a] += d * row[a] * z[i];
            for c in 0..=a {
                let v = g.get(a, c) + d * row[a] * row[c];
                g.set(a, c, v);
            }
        }
    }
    let es = sym_eigen(&g)?;
    let vals = es.eigenvalues();
    let (max, min) = (vals[0], vals[k - 1]);
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(FdpError::Rank(format!(
            "normal equations ill-conditioned: eigenvalues span [{min}, {max}]"
        )));
    }
    // w = Q diag(1/λ) Qᵀ rhs.
    let q = es.eigenvectors();
    let qtr: Vec<f64> = (0..k)
        .map(|j| (0..k).map(|i| q[[i, j]] * rhs[i]).sum::<f64>() / vals[j])
        .collect();
    Ok((0..k)
        .map(|i| (0..k).map(|j| q[[i, j]] * qtr[j]).sum())
        .collect())
}

fn check_shapes(fr: &FactorRepresentation, z: &TestVector) -> Result<()> {
    if fr.p() != z.len() {
        return Err(FdpError::Shape(format!(
            "representation covers {} hypotheses but {} statistics given",
            fr.p(),
            z.len()
        )));
    }
    Ok(())
}

/// Least-squares realization Ŵ = (B̂ᵀB̂)^{-1} B̂ᵀ Z.
pub fn estimate_w_least_squares(
    fr: &FactorRepresentation,
    z: &TestVector,
) -> Result<FactorRealization> {
    check_shapes(fr, z)?;
    let w = solve_weighted_ls(fr.loadings(), z.as_slice(), None)?;
    Ok(FactorRealization {
        w,
        method: WMethod::LeastSquares,
        iterations: 1,
        converged: true,
    })
}

fn lad_objective(fr: &FactorRepresentation, z: &[f64], w: &[f64]) -> f64 {
    let eta = fr.eta(w).expect("shape checked by caller");
    z.iter().zip(&eta).map(|(zi, ei)| (zi - ei).abs()).sum()
}

/// Least absolute deviation realization, minimizing Σ|z_i − b̂_iᵀw| by
/// iteratively reweighted least squares started from the LS solution.
/// Returns the best iterate under the LAD objective.
pub fn estimate_w_lad(fr: &FactorRepresentation, z: &TestVector) -> Result<FactorRealization> {
    check_shapes(fr, z)?;
    let k = fr.k();
    if k < 1 || fr.p() <= k {
        return Err(FdpError::Parameter(format!(
            "LAD requires 1 <= k < p, got k = {k}, p = {}",
            fr.p()
        )));
    }
    let zs = z.as_slice();
    let mut w = estimate_w_least_squares(fr, z)?.w;
    let mut best_w = w.clone();
    let mut best_obj = lad_objective(fr, zs, &w);
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=LAD_MAX_ITER {
        iterations = iter;
        let eta = fr.eta(&w)?;
        let weights: Vec<f64> = zs
            .iter()
            .zip(&eta)
            .map(|(zi, ei)| 1.0 / (zi - ei).abs().max(LAD_WEIGHT_FLOOR))
            .collect();
        let next = solve_weighted_ls(fr.loadings(), zs, Some(&weights))?;
        let obj = lad_objective(fr, zs, &next);
        if obj < best_obj {
            best_obj = obj;
            best_w = next.clone();
        }
        let prev_obj = lad_objective(fr, zs, &w);
        w = next;
        if (prev_obj - obj).abs() <= LAD_TOL * (1.0 + prev_obj.abs()) {
            converged = true;
            break;
        }
    }
    Ok(FactorRealization {
        w: best_w,
        method: WMethod::Lad,
        iterations,
        converged,
    })
}

/// Method dispatcher with the default penalty level √(2 ln p) for the
/// penalized estimator. k = 0 always degenerates to least squares.
pub fn estimate_w(
    fr: &FactorRepresentation,
    z: &TestVector,
    method: WMethod,
) -> Result<FactorRealization> {
    if fr.k() == 0 {
        return estimate_w_least_squares(fr, z);
    }
    match method {
        WMethod::LeastSquares => estimate_w_least_squares(fr, z),
        WMethod::Lad => estimate_w_lad(fr, z),
        WMethod::PenalizedScad => {
            let lambda = (2.0 * (fr.p() as f64).ln()).sqrt();
            Ok(estimate_w_penalized(fr, z, Penalty::Scad, lambda)?.0)
        }
    }
}

/// Thresholding rule solving min_μ ½(r − μ)² + penalty_λ(|μ|).
fn penalty_threshold(r: f64, lambda: f64, penalty: Penalty) -> f64 {
    match penalty {
        Penalty::Soft => r.signum() * (r.abs() - lambda).max(0.0),
        Penalty::Hard => {
            if r.abs() > lambda {
                r
            } else {
                0.0
            }
        }
        Penalty::Scad => {
            let ar = r.abs();
            if ar <= 2.0 * lambda {
                r.signum() * (ar - lambda).max(0.0)
            } else if ar <= SCAD_A * lambda {
                ((SCAD_A - 1.0) * r - r.signum() * SCAD_A * lambda) / (SCAD_A - 2.0)
            } else {
                r
            }
        }
    }
}

/// Penalized realization: minimizes ½‖z − μ − B̂w‖² + Σ penalty_λ(|μ_i|)
/// over (w, μ) by alternating a thresholding step for μ with an exact LS
/// step for w, starting from μ = 0 and w = LS.
pub fn estimate_w_penalized(
    fr: &FactorRepresentation,
    z: &TestVector,
    penalty: Penalty,
    lambda: f64,
) -> Result<(FactorRealization, Vec<f64>)> {
    check_shapes(fr, z)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(FdpError::Parameter(format!(
            "penalty level must be >= 0, got {lambda}"
        )));
    }
    let zs = z.as_slice();
    let p = fr.p();
    let mut w = estimate_w_least_squares(fr, z)?.w;
    let mut mu = vec![0.0; p];
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=PENALIZED_MAX_ITER {
        iterations = iter;
        let eta = fr.eta(&w)?;
        let new_mu: Vec<f64> = zs
            .iter()
            .zip(&eta)
            .map(|(zi, ei)| penalty_threshold(zi - ei, lambda, penalty))
            .collect();
        let adjusted: Vec<f64> = zs.iter().zip(&new_mu).map(|(zi, mi)| zi - mi).collect();
        let new_w = solve_weighted_ls(fr.loadings(), &adjusted, None)?;
        let dw = w
            .iter()
            .zip(&new_w)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        let dmu = mu
            .iter()
            .zip(&new_mu)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        w = new_w;
        mu = new_mu;
        if dw.max(dmu) <= PENALIZED_TOL {
            converged = true;
            break;
        }
    }
    Ok((
        FactorRealization {
            w,
            method: WMethod::PenalizedScad,
            iterations,
            converged,
        },
        mu,
    ))
}

/// Σ_i [Φ(a_i(z_half + η_i)) + Φ(a_i(z_half − η_i))] over the given indices.
fn tail_sum(a: &[f64], eta: &[f64], z_half: f64, keep: impl Fn(usize) -> bool) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        if keep(i) {
            sum += phi(a[i] * (z_half + eta[i])) + phi(a[i] * (z_half - eta[i]));
        }
    }
    sum
}

/// Estimated false-discovery numerator and FDP at threshold t, given the
/// realization Ŵ and the discovery count R(t). Uses the 0/0 = 0 convention.
pub fn fdp_estimate(
    fr: &FactorRepresentation,
    w: &FactorRealization,
    t: f64,
    r: usize,
) -> Result<(f64, f64)> {
    check_threshold(t)?;
    let z_half = std_normal_quantile(t / 2.0)?;
    let eta = fr.eta(&w.w)?;
    let v_hat = tail_sum(fr.a(), &eta, z_half, |_| true);
    let fdp_hat = if r == 0 { 0.0 } else { v_hat / r as f64 };
    Ok((v_hat, fdp_hat))
}

/// Same summand as [`fdp_estimate`] restricted to the true nulls.
pub fn fdp_oracle(
    fr: &FactorRepresentation,
    w: &FactorRealization,
    t: f64,
    r: usize,
    truth: &HypothesisTruth,
) -> Result<f64> {
    check_threshold(t)?;
    if truth.p() != fr.p() {
        return Err(FdpError::Shape(format!(
            "truth covers {} hypotheses but representation has {}",
            truth.p(),
            fr.p()
        )));
    }
    let z_half = std_normal_quantile(t / 2.0)?;
    let eta = fr.eta(&w.w)?;
    let nulls = truth.is_null();
    let v = tail_sum(fr.a(), &eta, z_half, |i| nulls[i]);
    Ok(if r == 0 { 0.0 } else { v / r as f64 })
}

/// Dependence-adjusted statistics â_i·(z_i − b̂_iᵀŴ).
pub fn adjusted_statistics(
    fr: &FactorRepresentation,
    w: &FactorRealization,
    z: &TestVector,
) -> Result<TestVector> {
    check_shapes(fr, z)?;
    let eta = fr.eta(&w.w)?;
    let out: Vec<f64> = z
        .as_slice()
        .iter()
        .zip(fr.a())
        .zip(&eta)
        .map(|((zi, ai), ei)| ai * (zi - ei))
        .collect();
    TestVector::new(out)
}

/// FDP estimate for the adjusted procedure:
/// Σ_i [Φ(z_{t/2}/â_i + b̂_iᵀŴ) + Φ(z_{t/2}/â_i − b̂_iᵀŴ)] / R_adj.
pub fn fdp_adjusted_estimate(
    fr: &FactorRepresentation,
    w: &FactorRealization,
    t: f64,
    r_adj: usize,
) -> Result<f64> {
    check_threshold(t)?;
    let z_half = std_normal_quantile(t / 2.0)?;
    let eta = fr.eta(&w.w)?;
    let mut v = 0.0;
    for (ai, ei) in fr.a().iter().zip(&eta) {
        v += phi(z_half / ai + ei) + phi(z_half / ai - ei);
    }
    Ok(if r_adj == 0 { 0.0 } else { v / r_adj as f64 })
}

/// FDP estimates across a sorted ascending grid of thresholds, with the
/// realized-truth columns filled in when ground truth is available.
pub fn fdp_curve(
    z: &TestVector,
    fr: &FactorRepresentation,
    w: &FactorRealization,
    thresholds: &[f64],
    truth: Option<&HypothesisTruth>,
) -> Result<FdpReport> {
    check_shapes(fr, z)?;
    if thresholds.is_empty() {
        return Err(FdpError::Parameter("threshold list is empty".into()));
    }
    if thresholds.windows(2).any(|p| p[0] >= p[1]) {
        return Err(FdpError::Parameter(
            "thresholds must be strictly ascending".into(),
        ));
    }
    let pv = pvalues(z);
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let (r, v_true) = rejection_counts(&pv, t, truth)?;
        let (v_hat, fdp_hat) = fdp_estimate(fr, w, t, r)?;
        let fdp_true = v_true.map(|v| if r == 0 { 0.0 } else { v as f64 / r as f64 });
        let fdp_oracle = match truth {
            Some(tr) => Some(fdp_oracle(fr, w, t, r, tr)?),
            None => None,
        };
        rows.push(FdpRow {
            t,
            r,
            v_hat,
            fdp_hat,
            fdp_hat_capped: fdp_hat.min(1.0),
            v_true,
            fdp_true,
            fdp_oracle,
        });
    }
    Ok(FdpReport { rows })
}
