//! Simulation harness: data generation from a latent factor model,
//! residual covariance variants, FDP estimation error metrics, and the
//! FDR-matched power comparison of the adjusted procedure.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::eigen::{sym_eigen, sym_eigenvalues};
use crate::error::{FdpError, Result};
use crate::normal::std_normal_quantile;
use crate::pfa::{
    adjusted_statistics, estimate_w, fdp_estimate, pvalues, rejection_counts,
    FactorRepresentation, WMethod,
};
use crate::poet::{poet_covariance, to_correlation, KChoice, PoetConfig};
use crate::types::{DataMatrix, HypothesisTruth, SymmetricMatrix, TestVector};

/// Half-width of the banded component of the approximate residual model.
const BAND_WIDTH: usize = 25;
/// Off-diagonal value inside the band.
const BAND_VALUE: f64 = 0.4;
/// Default eigenvalue floor for the nearest-PD projection.
pub const DEFAULT_PD_FLOOR: f64 = 1e-8;
/// Matching tolerance for the FDR-matched threshold search, as a fraction
/// (0.001 = 0.1 percentage points).
const FDR_MATCH_TOL: f64 = 1e-3;

// Stream tags separating the RNG draws of one experiment.
const TAG_SIGMA: u64 = 1;
const TAG_LOADINGS: u64 = 2;
const TAG_FACTORS: u64 = 3;
const TAG_NOISE: u64 = 4;
const TAG_SIGNAL: u64 = 5;

/// Signal pattern of the non-null coordinates (on the observation scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Constant(f64),
    Uniform(f64, f64),
}

/// Residual covariance of the generating model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaUKind {
    StrictIdentity,
    Approximate,
}

/// Full description of one simulation experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub p: usize,
    pub n: usize,
    /// Number of factors in the generating model.
    pub k_true: usize,
    /// Number of non-null coordinates (the first p1 indices).
    pub p1: usize,
    pub signal: Signal,
    pub sigma_u_kind: SigmaUKind,
    /// Multiplier applied to the projected residual covariance.
    pub sigma_u_scale: f64,
    pub rounds: usize,
    pub seed: u64,
    /// Rejection threshold for the FDP study, or the adjusted-procedure
    /// threshold in the power study.
    pub t: f64,
    /// Covariance estimator settings for the unknown-covariance path.
    pub poet: PoetConfig,
    /// Factor-realization estimator.
    pub method: WMethod,
}

impl SimulationConfig {
    /// Baseline FDP-estimation setup: 3 factors, 50 constant signals,
    /// t = 0.01, least squares, fixed k = 3.
    pub fn table2_defaults(n: usize, kind: SigmaUKind, rounds: usize, seed: u64) -> Self {
        Self {
            p: 1000,
            n,
            k_true: 3,
            p1: 50,
            signal: Signal::Constant(1.0),
            sigma_u_kind: kind,
            sigma_u_scale: 0.5,
            rounds,
            seed,
            t: 0.01,
            poet: PoetConfig {
                k: KChoice::Fixed(3),
                ..PoetConfig::default()
            },
            method: WMethod::LeastSquares,
        }
    }

    /// Power-study setup: 200 weak uniform signals, damped residual
    /// covariance, adjusted threshold t = 0.001.
    pub fn table3_defaults(n: usize, rounds: usize, seed: u64) -> Self {
        Self {
            p1: 200,
            signal: Signal::Uniform(0.1, 0.5),
            sigma_u_kind: SigmaUKind::Approximate,
            sigma_u_scale: 0.1,
            t: 0.001,
            ..Self::table2_defaults(n, SigmaUKind::Approximate, rounds, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p1 >= self.p {
            return Err(FdpError::Parameter(format!(
                "p1 = {} must be below p = {}",
                self.p1, self.p
            )));
        }
        if self.rounds < 1 {
            return Err(FdpError::Parameter("rounds must be at least 1".into()));
        }
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(FdpError::Parameter(format!(
                "threshold must lie in (0,1), got {}",
                self.t
            )));
        }
        if self.n < 2 {
            return Err(FdpError::InsufficientData(format!(
                "need at least 2 observations, got {}",
                self.n
            )));
        }
        if self.k_true < 1 || self.k_true >= self.n.min(self.p) {
            return Err(FdpError::Parameter(format!(
                "k_true = {} incompatible with n = {}, p = {}",
                self.k_true, self.n, self.p
            )));
        }
        if !(self.sigma_u_scale > 0.0 && self.sigma_u_scale.is_finite()) {
            return Err(FdpError::Parameter(format!(
                "sigma_u_scale must be positive, got {}",
                self.sigma_u_scale
            )));
        }
        if let Signal::Uniform(lo, hi) = self.signal {
            if !(lo < hi) {
                return Err(FdpError::Parameter(format!(
                    "uniform signal needs lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// One simulation round's estimates and errors (DE/RE in percent).
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub fdp_true: f64,
    /// Benchmark estimate using the true covariance's eigenstructure.
    pub fdp_a: f64,
    /// Estimate from the fitted covariance.
    pub fdp_poet: f64,
    /// (fdp_poet − fdp_true) · 100.
    pub de: f64,
    /// de / fdp_true, zero whenever fdp_true is zero.
    pub re: f64,
    /// Number of factors the covariance fit used.
    pub k_used: usize,
}

/// A round that errored out; kept alongside the successful records.
#[derive(Debug, Clone, Serialize)]
pub struct RoundFailure {
    pub round: usize,
    pub message: String,
}

/// Mean and standard deviation of DE and RE, in percent.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorAggregate {
    pub mean_de: f64,
    pub sd_de: f64,
    pub mean_re: f64,
    pub sd_re: f64,
}

/// Power-study summary: both procedures at FDR-matched thresholds.
#[derive(Debug, Clone, Serialize)]
pub struct PowerResult {
    pub t_adjusted: f64,
    pub fdr_adjusted: f64,
    pub fnr_adjusted: f64,
    pub t_fixed: f64,
    pub fdr_fixed: f64,
    pub fnr_fixed: f64,
}

/// Output of an experiment run.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub failures: Vec<RoundFailure>,
    /// DE/RE aggregates of the fitted-covariance estimator.
    pub poet: ErrorAggregate,
    /// DE/RE aggregates of the known-covariance benchmark.
    pub known: ErrorAggregate,
    pub power: Option<PowerResult>,
}

/// Per-k direct errors from a shared set of simulation rounds.
#[derive(Debug, Clone, Serialize)]
pub struct KSweepSeries {
    pub k: usize,
    /// DE in percent, one entry per successful round.
    pub de: Vec<f64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent, reproducible stream for one (tag, round) pair.
fn stream(seed: u64, tag: u64, round: u64) -> ChaCha8Rng {
    let mut state = seed
        ^ tag.wrapping_mul(0xA076_1D64_78BD_642F)
        ^ round.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw in the open interval (0, 1).
fn unit_open(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_open(rng)
}

/// Standard normal draw through the inverse CDF.
fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    std_normal_quantile(unit_open(rng)).expect("unit_open stays inside (0,1)")
}

/// Frobenius-nearest symmetric matrix with all eigenvalues at least
/// `floor` (eigenvalue clipping). Inputs already satisfying the floor are
/// returned unchanged.
pub fn nearest_positive_definite(a: &SymmetricMatrix, floor: f64) -> Result<SymmetricMatrix> {
    let es = sym_eigen(a)?;
    let p = a.dim();
    if es.eigenvalues().last().is_none_or(|&l| l >= floor) {
        return Ok(a.clone());
    }
    let clipped: Vec<f64> = es.eigenvalues().iter().map(|&l| l.max(floor)).collect();
    let q = es.eigenvectors();
    let scaled = q * &Array1::from(clipped).view().insert_axis(Axis(0));
    let dense = scaled.dot(&q.t());
    Ok(SymmetricMatrix::from_fn(p, |i, j| dense[[i, j]]))
}

/// Banded component: 0.4 for 0 < |i − j| ≤ 25, zero elsewhere including
/// the diagonal.
pub(crate) fn sigma_two_band(p: usize) -> SymmetricMatrix {
    SymmetricMatrix::from_fn(p, |i, j| {
        let d = i - j; // i ≥ j inside the packed lower triangle
        if d > 0 && d <= BAND_WIDTH {
            BAND_VALUE
        } else {
            0.0
        }
    })
}

/// One-factor-plus-heterogeneous-noise component: LLᵀ + D with the loading
/// column L and the diagonal D drawn uniformly from (0.25, 0.75).
fn sigma_one_surrogate(p: usize, seed: u64) -> SymmetricMatrix {
    let mut rng = stream(seed, TAG_SIGMA, 0);
    let l: Vec<f64> = (0..p).map(|_| uniform_in(&mut rng, 0.25, 0.75)).collect();
    let d: Vec<f64> = (0..p).map(|_| uniform_in(&mut rng, 0.25, 0.75)).collect();
    SymmetricMatrix::from_fn(p, |i, j| {
        let v = l[i] * l[j];
        if i == j {
            v + d[i]
        } else {
            v
        }
    })
}

/// Residual covariance of the generating model: the identity in the strict
/// case, or scale · nearestPD(Σ₁ + Σ₂) in the approximate case.
pub fn build_sigma_u(kind: SigmaUKind, p: usize, scale: f64, seed: u64) -> Result<SymmetricMatrix> {
    if p < 1 {
        return Err(FdpError::Parameter("p must be positive".into()));
    }
    match kind {
        SigmaUKind::StrictIdentity => Ok(SymmetricMatrix::identity(p)),
        SigmaUKind::Approximate => {
            let band = sigma_two_band(p);
            let one = sigma_one_surrogate(p, seed);
            let sum = SymmetricMatrix::from_fn(p, |i, j| band.get(i, j) + one.get(i, j));
            let pd = nearest_positive_definite(&sum, DEFAULT_PD_FLOOR)?;
            Ok(SymmetricMatrix::from_fn(p, |i, j| scale * pd.get(i, j)))
        }
    }
}

/// Precomputed per-experiment state: the residual covariance and its
/// eigen square root for sampling.
pub struct SimulationContext {
    cfg: SimulationConfig,
    sigma_u: SymmetricMatrix,
    /// None when Σ_u = I (noise sampled directly).
    root: Option<Array2<f64>>,
}

impl SimulationContext {
    pub fn new(cfg: SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let sigma_u = build_sigma_u(cfg.sigma_u_kind, cfg.p, cfg.sigma_u_scale, cfg.seed)?;
        Self::with_sigma_u(cfg, sigma_u)
    }

    /// Uses an explicit residual covariance instead of the built-in kinds.
    pub fn with_sigma_u(cfg: SimulationConfig, sigma_u: SymmetricMatrix) -> Result<Self> {
        cfg.validate()?;
        if sigma_u.dim() != cfg.p {
            return Err(FdpError::Shape(format!(
                "sigma_u is {}-dimensional but p = {}",
                sigma_u.dim(),
                cfg.p
            )));
        }
        let identity = sigma_u == SymmetricMatrix::identity(cfg.p);
        let root = if identity {
            None
        } else {
            let es = sym_eigen(&sigma_u)?;
            let sqrt = Array1::from(
                es.eigenvalues()
                    .iter()
                    .map(|&l| l.max(0.0).sqrt())
                    .collect::<Vec<_>>(),
            );
            Some(es.eigenvectors() * &sqrt.view().insert_axis(Axis(0)))
        };
        Ok(Self {
            cfg,
            sigma_u,
            root,
        })
    }

    pub fn cfg(&self) -> &SimulationConfig {
        &self.cfg
    }

    pub fn sigma_u(&self) -> &SymmetricMatrix {
        &self.sigma_u
    }

    /// Draws one round's dataset: x_l = μ + B f_l + u_l with fresh
    /// loadings B ~ U(−1,1) per round, f ~ N(0, I), u ~ N(0, Σ_u).
    /// Returns the data, ground truth on the √n-statistic scale, B, and
    /// the exact covariance BBᵀ + Σ_u.
    pub fn generate_dataset(
        &self,
        round: usize,
    ) -> Result<(DataMatrix, HypothesisTruth, Array2<f64>, SymmetricMatrix)> {
        let cfg = &self.cfg;
        let (n, p, k) = (cfg.n, cfg.p, cfg.k_true);
        let r = round as u64;

        let mut rng_b = stream(cfg.seed, TAG_LOADINGS, r);
        let b = Array2::from_shape_fn((p, k), |_| uniform_in(&mut rng_b, -1.0, 1.0));

        let mut mu = vec![0.0; p];
        let mut rng_mu = stream(cfg.seed, TAG_SIGNAL, r);
        for m in mu.iter_mut().take(cfg.p1) {
            *m = match cfg.signal {
                Signal::Constant(v) => v,
                Signal::Uniform(lo, hi) => uniform_in(&mut rng_mu, lo, hi),
            };
        }

        let mut rng_f = stream(cfg.seed, TAG_FACTORS, r);
        let f = Array2::from_shape_fn((n, k), |_| normal_draw(&mut rng_f));

        let mut rng_u = stream(cfg.seed, TAG_NOISE, r);
        let g = Array2::from_shape_fn((n, p), |_| normal_draw(&mut rng_u));
        let u = match &self.root {
            None => g,
            Some(root) => g.dot(&root.t()),
        };

        let mut x = f.dot(&b.t()) + u;
        for l in 0..n {
            for i in 0..p {
                x[[l, i]] += mu[i];
            }
        }

        let sqrt_n = (n as f64).sqrt();
        let truth = HypothesisTruth::from_signal(mu.iter().map(|&m| sqrt_n * m).collect());
        let bbt = b.dot(&b.t());
        let sigma_true =
            SymmetricMatrix::from_fn(p, |i, j| bbt[[i, j]] + self.sigma_u.get(i, j));
        Ok((DataMatrix::new(x)?, truth, b, sigma_true))
    }
}

/// Two-sample statistic Z = √(nm/(n+m))·(X̄ − Ȳ).
pub fn two_sample_statistics(x: &DataMatrix, y: &DataMatrix) -> Result<TestVector> {
    if x.p() != y.p() {
        return Err(FdpError::Shape(format!(
            "groups have {} and {} variables",
            x.p(),
            y.p()
        )));
    }
    let (n, m) = (x.n() as f64, y.n() as f64);
    let scale = (n * m / (n + m)).sqrt();
    let diff = &x.column_means() - &y.column_means();
    TestVector::new(diff.iter().map(|&d| scale * d).collect())
}

/// Standardized test statistics √n·x̄_i / d_i with d from the true
/// covariance diagonal.
fn standardized_statistics(x: &DataMatrix, sigma_true: &SymmetricMatrix) -> Result<TestVector> {
    let sqrt_n = (x.n() as f64).sqrt();
    let means = x.column_means();
    let mut z = Vec::with_capacity(x.p());
    for i in 0..x.p() {
        let v = sigma_true.get(i, i);
        if !(v > 0.0) {
            return Err(FdpError::DegenerateVariance { index: i, value: v });
        }
        z.push(sqrt_n * means[i] / v.sqrt());
    }
    TestVector::new(z)
}

/// FDP estimate at threshold t for the top-k representation of a
/// correlation matrix.
fn fdp_from_correlation(
    corr: &SymmetricMatrix,
    k: usize,
    z: &TestVector,
    t: f64,
    r: usize,
    method: WMethod,
) -> Result<f64> {
    let fr = FactorRepresentation::from_correlation(corr, k)?;
    let w = estimate_w(&fr, z, method)?;
    Ok(fdp_estimate(&fr, &w, t, r)?.1)
}

struct RoundData {
    z: TestVector,
    fdp_true: f64,
    r: usize,
    x: DataMatrix,
    sigma_true: SymmetricMatrix,
}

fn prepare_round(ctx: &SimulationContext, round: usize) -> Result<RoundData> {
    let (x, truth, _b, sigma_true) = ctx.generate_dataset(round)?;
    let z = standardized_statistics(&x, &sigma_true)?;
    let pv = pvalues(&z);
    let (r, v_true) = rejection_counts(&pv, ctx.cfg.t, Some(&truth))?;
    let v = v_true.expect("truth supplied") as f64;
    let fdp_true = if r == 0 { 0.0 } else { v / r as f64 };
    Ok(RoundData {
        z,
        fdp_true,
        r,
        x,
        sigma_true,
    })
}

fn run_round(ctx: &SimulationContext, round: usize) -> Result<RoundRecord> {
    let cfg = &ctx.cfg;
    let rd = prepare_round(ctx, round)?;

    // Benchmark path: eigenstructure of the exact covariance.
    let (corr_true, _) = to_correlation(&rd.sigma_true)?;
    let fdp_a = fdp_from_correlation(&corr_true, cfg.k_true, &rd.z, cfg.t, rd.r, cfg.method)?;

    // Estimated path: fitted covariance, then the same machinery.
    let fit = poet_covariance(&rd.x, &cfg.poet)?;
    let (corr_hat, _) = to_correlation(&fit.covariance)?;
    let fdp_poet =
        fdp_from_correlation(&corr_hat, fit.k_used, &rd.z, cfg.t, rd.r, cfg.method)?;

    let de = (fdp_poet - rd.fdp_true) * 100.0;
    let re = if rd.fdp_true == 0.0 {
        0.0
    } else {
        de / rd.fdp_true
    };
    Ok(RoundRecord {
        round,
        fdp_true: rd.fdp_true,
        fdp_a,
        fdp_poet,
        de,
        re,
        k_used: fit.k_used,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn aggregate(de: &[f64], re: &[f64]) -> ErrorAggregate {
    ErrorAggregate {
        mean_de: mean(de),
        sd_de: sample_sd(de),
        mean_re: mean(re),
        sd_re: sample_sd(re),
    }
}

/// Environment variable naming the default number of simulation worker
/// threads.
pub const THREADS_ENV_VAR: &str = "FDP_THREADS";

/// Default worker count for simulation rounds: `FDP_THREADS` when set to a
/// positive integer, otherwise the machine's available parallelism.
pub fn default_thread_count() -> usize {
    std::env::var(THREADS_ENV_VAR)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(std::num::NonZeroUsize::get)
                .unwrap_or(1)
        })
}

/// Applies `f` to every round index on up to `threads` workers and returns
/// the results sorted by round. Each round's work depends only on its
/// index, so the output is identical for every thread count.
fn map_rounds<T, F>(rounds: usize, threads: usize, f: F) -> Vec<(usize, T)>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.clamp(1, rounds.max(1));
    if threads == 1 {
        return (0..rounds).map(|r| (r, f(r))).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<(usize, T)> = std::thread::scope(|scope| {
        let workers: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let r = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if r >= rounds {
                            break;
                        }
                        local.push((r, f(r)));
                    }
                    local
                })
            })
            .collect();
        workers
            .into_iter()
            .flat_map(|w| w.join().expect("simulation worker panicked"))
            .collect()
    });
    out.sort_by_key(|&(r, _)| r);
    out
}

/// Runs the FDP-estimation experiment: per round, the realized FDP, the
/// known-covariance benchmark estimate, and the fitted-covariance
/// estimate. Rounds that fail are recorded and skipped.
pub fn run_fdp_experiment(cfg: &SimulationConfig) -> Result<ExperimentResult> {
    run_fdp_experiment_threads(cfg, default_thread_count())
}

/// As `run_fdp_experiment`, with an explicit worker count. Results are
/// identical for every `threads` value.
pub fn run_fdp_experiment_threads(
    cfg: &SimulationConfig,
    threads: usize,
) -> Result<ExperimentResult> {
    let ctx = SimulationContext::new(cfg.clone())?;
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut failures = Vec::new();
    for (round, outcome) in map_rounds(cfg.rounds, threads, |round| run_round(&ctx, round)) {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(RoundFailure {
                round,
                message: e.to_string(),
            }),
        }
    }
    let de: Vec<f64> = records.iter().map(|r| r.de).collect();
    let re: Vec<f64> = records.iter().map(|r| r.re).collect();
    let de_known: Vec<f64> = records
        .iter()
        .map(|r| (r.fdp_a - r.fdp_true) * 100.0)
        .collect();
    let re_known: Vec<f64> = records
        .iter()
        .zip(&de_known)
        .map(|(r, &d)| if r.fdp_true == 0.0 { 0.0 } else { d / r.fdp_true })
        .collect();
    Ok(ExperimentResult {
        poet: aggregate(&de, &re),
        known: aggregate(&de_known, &re_known),
        records,
        failures,
        power: None,
    })
}

/// Shares each round's dataset across several factor counts and reports
/// per-k direct errors of the fitted-covariance estimator.
///
/// The covariance is fitted once per round with the configured split; the
/// swept count k only selects how many principal components of that
/// estimate feed the factor representation. Components beyond the split
/// come from the thresholded residual and carry small eigenvalues, which
/// is what makes overestimating k cheap.
pub fn run_k_sweep(cfg: &SimulationConfig, ks: &[usize]) -> Result<Vec<KSweepSeries>> {
    if ks.is_empty() {
        return Err(FdpError::Parameter("k list is empty".into()));
    }
    let ctx = SimulationContext::new(cfg.clone())?;
    let mut series: Vec<KSweepSeries> = ks
        .iter()
        .map(|&k| KSweepSeries {
            k,
            de: Vec::with_capacity(cfg.rounds),
        })
        .collect();
    let per_round = map_rounds(cfg.rounds, default_thread_count(), |round| {
        let rd = prepare_round(&ctx, round)?;
        let fit = poet_covariance(&rd.x, &cfg.poet)?;
        let (corr_hat, _) = to_correlation(&fit.covariance)?;
        let es = sym_eigen(&corr_hat)?;
        let mut de = Vec::with_capacity(ks.len());
        for &k in ks {
            let fr = FactorRepresentation::from_eigen(&es, k)?;
            let w = estimate_w(&fr, &rd.z, cfg.method)?;
            let fdp_poet = fdp_estimate(&fr, &w, cfg.t, rd.r)?.1;
            de.push((fdp_poet - rd.fdp_true) * 100.0);
        }
        Ok::<Vec<f64>, FdpError>(de)
    });
    for (_, outcome) in per_round {
        let de = outcome?;
        for (slot, &v) in series.iter_mut().zip(&de) {
            slot.de.push(v);
        }
    }
    Ok(series)
}

/// Fraction of rounds where the data-driven factor count equals
/// `expected`, using the configured selection cutoff.
pub fn auto_k_hit_rate(cfg: &SimulationConfig, expected: usize) -> Result<f64> {
    let ctx = SimulationContext::new(cfg.clone())?;
    let per_round = map_rounds(cfg.rounds, default_thread_count(), |round| {
        let (x, _, _, _) = ctx.generate_dataset(round)?;
        let vals = crate::poet::scaled_gram_eigenvalues(&x)?;
        Ok::<bool, FdpError>(
            crate::poet::select_num_factors(&vals, cfg.poet.epsilon_k, cfg.p)? == expected,
        )
    });
    let mut hits = 0usize;
    for (_, outcome) in per_round {
        if outcome? {
            hits += 1;
        }
    }
    Ok(hits as f64 / cfg.rounds as f64)
}

/// Per-round rejection bookkeeping for one procedure at one threshold.
fn confusion(pv: &[f64], nulls: &[bool], t: f64) -> (usize, usize, usize) {
    let mut r = 0;
    let mut v = 0;
    let mut missed = 0;
    for (p, &null) in pv.iter().zip(nulls) {
        if *p <= t {
            r += 1;
            if null {
                v += 1;
            }
        } else if !null {
            missed += 1;
        }
    }
    (r, v, missed)
}

/// Mean over rounds of V/R (0/0 = 0) for the stored per-round p-values.
fn mean_fdr(pvals: &[Vec<f64>], nulls: &[Vec<bool>], t: f64) -> f64 {
    let per_round: Vec<f64> = pvals
        .iter()
        .zip(nulls)
        .map(|(pv, nl)| {
            let (r, v, _) = confusion(pv, nl, t);
            if r == 0 {
                0.0
            } else {
                v as f64 / r as f64
            }
        })
        .collect();
    mean(&per_round)
}

fn mean_fnr(pvals: &[Vec<f64>], nulls: &[Vec<bool>], t: f64) -> f64 {
    let per_round: Vec<f64> = pvals
        .iter()
        .zip(nulls)
        .map(|(pv, nl)| {
            let (r, _, missed) = confusion(pv, nl, t);
            let denom = pv.len() - r;
            if denom == 0 {
                0.0
            } else {
                missed as f64 / denom as f64
            }
        })
        .collect();
    mean(&per_round)
}

/// Finds t with mean FDR within 0.1 percentage points of `target` by
/// geometric bisection over (lo, hi).
fn matched_threshold(
    pvals: &[Vec<f64>],
    nulls: &[Vec<bool>],
    target: f64,
) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (1e-12f64, 0.999f64);
    let f_lo = mean_fdr(pvals, nulls, lo);
    let f_hi = mean_fdr(pvals, nulls, hi);
    if (f_lo - target).abs() <= FDR_MATCH_TOL {
        return Ok((lo, f_lo));
    }
    if (f_hi - target).abs() <= FDR_MATCH_TOL {
        return Ok((hi, f_hi));
    }
    if !(f_lo < target && target < f_hi) {
        return Err(FdpError::Bisection {
            lo,
            hi,
            f_lo,
            f_hi,
            target,
        });
    }
    let mut best = (f64::INFINITY, lo, f_lo);
    for _ in 0..200 {
        let mid = (lo.ln() + hi.ln()).mul_add(0.5, 0.0).exp();
        let f_mid = mean_fdr(pvals, nulls, mid);
        let diff = (f_mid - target).abs();
        if diff < best.0 {
            best = (diff, mid, f_mid);
        }
        if diff <= FDR_MATCH_TOL {
            return Ok((mid, f_mid));
        }
        if f_mid < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 <= FDR_MATCH_TOL {
        Ok((best.1, best.2))
    } else {
        Err(FdpError::Bisection {
            lo,
            hi,
            f_lo: mean_fdr(pvals, nulls, lo),
            f_hi: mean_fdr(pvals, nulls, hi),
            target,
        })
    }
}

/// Power comparison: the adjusted procedure at the configured threshold
/// versus plain p-value thresholding with its threshold chosen so both
/// procedures attain the same empirical FDR.
pub fn run_power_experiment(cfg: &SimulationConfig) -> Result<ExperimentResult> {
    let ctx = SimulationContext::new(cfg.clone())?;
    let mut adj_fdr = Vec::with_capacity(cfg.rounds);
    let mut adj_fnr = Vec::with_capacity(cfg.rounds);
    let mut raw_pvals: Vec<Vec<f64>> = Vec::with_capacity(cfg.rounds);
    let mut null_masks: Vec<Vec<bool>> = Vec::with_capacity(cfg.rounds);
    let mut failures = Vec::new();

    let per_round = map_rounds(cfg.rounds, default_thread_count(), |round| {
        (|| -> Result<(f64, f64, Vec<f64>, Vec<bool>)> {
            let (x, truth, _b, sigma_true) = ctx.generate_dataset(round)?;
            let z = standardized_statistics(&x, &sigma_true)?;
            let fit = poet_covariance(&x, &cfg.poet)?;
            let (corr_hat, _) = to_correlation(&fit.covariance)?;
            let fr = FactorRepresentation::from_correlation(&corr_hat, fit.k_used)?;
            let w = estimate_w(&fr, &z, cfg.method)?;

            let z_adj = adjusted_statistics(&fr, &w, &z)?;
            let pv_adj = pvalues(&z_adj);
            let (r, v, missed) = confusion(pv_adj.as_slice(), truth.is_null(), cfg.t);
            let fdr = if r == 0 { 0.0 } else { v as f64 / r as f64 };
            let denom = cfg.p - r;
            let fnr = if denom == 0 {
                0.0
            } else {
                missed as f64 / denom as f64
            };
            let pv_raw = pvalues(&z).as_slice().to_vec();
            Ok((fdr, fnr, pv_raw, truth.is_null().to_vec()))
        })()
    });
    for (round, outcome) in per_round {
        match outcome {
            Ok((fdr, fnr, pv, nulls)) => {
                adj_fdr.push(fdr);
                adj_fnr.push(fnr);
                raw_pvals.push(pv);
                null_masks.push(nulls);
            }
            Err(e) => failures.push(RoundFailure {
                round,
                message: e.to_string(),
            }),
        }
    }
    if raw_pvals.is_empty() {
        return Err(FdpError::Numeric("every power-study round failed".into()));
    }

    let fdr_adjusted = mean(&adj_fdr);
    let fnr_adjusted = mean(&adj_fnr);
    let (t_fixed, fdr_fixed) = matched_threshold(&raw_pvals, &null_masks, fdr_adjusted)?;
    let fnr_fixed = mean_fnr(&raw_pvals, &null_masks, t_fixed);

    Ok(ExperimentResult {
        records: Vec::new(),
        failures,
        poet: aggregate(&[], &[]),
        known: aggregate(&[], &[]),
        power: Some(PowerResult {
            t_adjusted: cfg.t,
            fdr_adjusted,
            fnr_adjusted,
            t_fixed,
            fdr_fixed,
            fnr_fixed,
        }),
    })
}

/// Smallest eigenvalue of a residual covariance candidate (test support).
pub fn min_eig(m: &SymmetricMatrix) -> Result<f64> {
    Ok(*sym_eigenvalues(m)?.last().expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimulationConfig {
        SimulationConfig {
            p: 40,
            n: 200,
            k_true: 1,
            p1: 10,
            signal: Signal::Constant(1.0),
            sigma_u_kind: SigmaUKind::StrictIdentity,
            sigma_u_scale: 0.5,
            rounds: 20,
            seed: 42,
            t: 0.01,
            poet: PoetConfig {
                k: KChoice::Fixed(1),
                ..PoetConfig::default()
            },
            method: WMethod::LeastSquares,
        }
    }

    #[test]
    fn nearest_pd_fixed_point_and_clip() {
        let id = SymmetricMatrix::identity(4);
        let out = nearest_positive_definite(&id, 0.0).unwrap();
        assert_eq!(out, id);

        let mut m = SymmetricMatrix::zeros(2);
        m.set(0, 0, 1.0);
        m.set(1, 1, -1.0);
        let out = nearest_positive_definite(&m, 0.0).unwrap();
        assert!((out.get(0, 0) - 1.0).abs() <= 1e-14);
        assert!(out.get(1, 1).abs() <= 1e-14);
        assert!(out.get(0, 1).abs() <= 1e-14);
    }

    #[test]
    fn nearest_pd_matches_clip_oracle_and_is_idempotent() {
        let mut s = 5u64;
        let m = SymmetricMatrix::from_fn(8, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        });
        let out = nearest_positive_definite(&m, 0.0).unwrap();

        // Clip oracle via a separate eigendecomposition.
        let es = sym_eigen(&m).unwrap();
        let q = es.eigenvectors();
        let clipped = Array1::from(
            es.eigenvalues()
                .iter()
                .map(|&l| l.max(0.0))
                .collect::<Vec<_>>(),
        );
        let want = (q * &clipped.view().insert_axis(Axis(0))).dot(&q.t());
        for i in 0..8 {
            for j in 0..8 {
                assert!((out.get(i, j) - want[[i, j]]).abs() <= 1e-10);
            }
        }
        assert!(min_eig(&out).unwrap() >= -1e-12);

        let again = nearest_positive_definite(&out, 0.0).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert!((again.get(i, j) - out.get(i, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn band_matrix_entries() {
        let band = sigma_two_band(30);
        for i in 0..30usize {
            for j in 0..30usize {
                let d = i.abs_diff(j);
                let want = if d > 0 && d <= 25 { 0.4 } else { 0.0 };
                assert_eq!(band.get(i, j), want, "({i},{j})");
            }
        }
    }

    #[test]
    fn sigma_u_strict_is_identity() {
        let s = build_sigma_u(SigmaUKind::StrictIdentity, 17, 0.5, 9).unwrap();
        assert_eq!(s, SymmetricMatrix::identity(17));
    }

    #[test]
    fn sigma_u_approximate_is_pd_across_seeds() {
        for seed in 0..20u64 {
            let s = build_sigma_u(SigmaUKind::Approximate, 100, 0.5, seed).unwrap();
            assert!(min_eig(&s).unwrap() > 0.0, "seed {seed}");
        }
    }

    #[test]
    fn sigma_u_scale_is_linear() {
        let a = build_sigma_u(SigmaUKind::Approximate, 40, 0.5, 3).unwrap();
        let b = build_sigma_u(SigmaUKind::Approximate, 40, 0.1, 3).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                assert!((a.get(i, j) * 0.2 - b.get(i, j)).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn dataset_truth_on_statistic_scale() {
        let cfg = SimulationConfig {
            p1: 4,
            signal: Signal::Constant(1.0),
            ..small_cfg()
        };
        let ctx = SimulationContext::new(cfg.clone()).unwrap();
        let (_, truth, b, sigma) = ctx.generate_dataset(0).unwrap();
        assert_eq!(truth.p1(), 4);
        let sqrt_n = (cfg.n as f64).sqrt();
        for i in 0..4 {
            assert_eq!(truth.mu_star()[i], sqrt_n);
        }
        for i in 4..cfg.p {
            assert_eq!(truth.mu_star()[i], 0.0);
        }
        assert_eq!(b.dim(), (cfg.p, cfg.k_true));
        // Loadings drawn from U(-1, 1).
        assert!(b.iter().all(|&v| (-1.0..1.0).contains(&v)));
        // Exact covariance is BBᵀ + I here.
        let bbt = b.dot(&b.t());
        for i in 0..cfg.p {
            let want = bbt[[i, i]] + 1.0;
            assert!((sigma.get(i, i) - want).abs() <= 1e-14);
        }
    }

    #[test]
    fn zero_noise_rows_lie_in_signal_plus_factor_space() {
        let cfg = SimulationConfig {
            rounds: 1,
            ..small_cfg()
        };
        let ctx =
            SimulationContext::with_sigma_u(cfg.clone(), SymmetricMatrix::zeros(cfg.p)).unwrap();
        let (x, truth, b, _) = ctx.generate_dataset(0).unwrap();
        let sqrt_n = (cfg.n as f64).sqrt();
        // Project each centered-by-μ row onto col(B); the residual must die.
        let btb = b.t().dot(&b);
        for l in 0..x.n() {
            let row: Vec<f64> =
                (0..cfg.p).map(|i| x.values()[[l, i]] - truth.mu_star()[i] / sqrt_n).collect();
            let rv = Array1::from(row);
            let coef = b.t().dot(&rv) / btb[[0, 0]];
            let fit = b.dot(&coef);
            for i in 0..cfg.p {
                assert!((rv[i] - fit[i]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn monte_carlo_moments_match_model_covariance() {
        let cfg = SimulationConfig {
            p: 20,
            n: 100_000,
            k_true: 2,
            p1: 2,
            rounds: 1,
            sigma_u_kind: SigmaUKind::Approximate,
            sigma_u_scale: 0.5,
            seed: 7,
            ..small_cfg()
        };
        let ctx = SimulationContext::new(cfg).unwrap();
        let (x, _, _, sigma_true) = ctx.generate_dataset(0).unwrap();
        let emp = crate::poet::sample_covariance(&x);
        for i in 0..20 {
            for j in 0..20 {
                let want = sigma_true.get(i, j);
                let tol = 0.05 * want.abs().max(1.0);
                assert!(
                    (emp.get(i, j) - want).abs() <= tol,
                    "({i},{j}): {} vs {}",
                    emp.get(i, j),
                    want
                );
            }
        }
    }

    #[test]
    fn two_sample_statistic_matches_formula() {
        let mut s = 13u64;
        let mut draw = |n: usize, p: usize| {
            DataMatrix::new(Array2::from_shape_fn((n, p), |_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            }))
            .unwrap()
        };
        let x = draw(7, 5);
        let y = draw(8, 5);
        let z = two_sample_statistics(&x, &y).unwrap();
        let scale = (56.0f64 / 15.0).sqrt();
        assert!((scale - 1.9322).abs() <= 1e-4);
        let xm = x.column_means();
        let ym = y.column_means();
        for i in 0..5 {
            assert!((z.as_slice()[i] - scale * (xm[i] - ym[i])).abs() <= 1e-14);
        }

        // Equal means give the zero vector.
        let z0 = two_sample_statistics(&x, &x).unwrap();
        assert!(z0.as_slice().iter().all(|&v| v == 0.0));

        let bad = draw(4, 6);
        assert!(two_sample_statistics(&x, &bad).is_err());
    }

    #[test]
    fn experiment_is_reproducible_and_benchmark_tracks_truth() {
        let cfg = small_cfg();
        let a = run_fdp_experiment(&cfg).unwrap();
        let b = run_fdp_experiment(&cfg).unwrap();
        assert!(a.failures.is_empty());
        assert_eq!(a.records.len(), 20);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.fdp_true.to_bits(), rb.fdp_true.to_bits());
            assert_eq!(ra.fdp_a.to_bits(), rb.fdp_a.to_bits());
            assert_eq!(ra.fdp_poet.to_bits(), rb.fdp_poet.to_bits());
        }
        // Benchmark estimate close to the realized FDP in most rounds.
        let close = a
            .records
            .iter()
            .filter(|r| (r.fdp_a - r.fdp_true).abs() <= 0.15)
            .count();
        assert!(close * 5 >= a.records.len() * 4, "only {close}/20 close");
        // RE convention.
        for r in &a.records {
            if r.fdp_true == 0.0 {
                assert_eq!(r.re, 0.0);
            }
        }
    }

    #[test]
    fn reject_everything_gives_null_fraction() {
        let cfg = SimulationConfig {
            t: 1.0 - 1e-12,
            rounds: 3,
            ..small_cfg()
        };
        let ctx = SimulationContext::new(cfg.clone()).unwrap();
        for round in 0..3 {
            let rd = prepare_round(&ctx, round).unwrap();
            assert_eq!(rd.r, cfg.p);
            let want = (cfg.p - cfg.p1) as f64 / cfg.p as f64;
            assert!((rd.fdp_true - want).abs() <= 1e-14);
        }
    }

    #[test]
    fn loadings_nest_across_k() {
        let cfg = SimulationConfig {
            k_true: 3,
            poet: PoetConfig {
                k: KChoice::Fixed(3),
                ..PoetConfig::default()
            },
            ..small_cfg()
        };
        let ctx = SimulationContext::new(cfg).unwrap();
        let (_, _, _, sigma_true) = ctx.generate_dataset(0).unwrap();
        let (corr, _) = to_correlation(&sigma_true).unwrap();
        let es = sym_eigen(&corr).unwrap();
        let b2 = crate::eigen::top_k_loadings(&es, 2).unwrap();
        let b3 = crate::eigen::top_k_loadings(&es, 3).unwrap();
        for i in 0..b2.nrows() {
            for j in 0..2 {
                assert_eq!(b2[[i, j]].to_bits(), b3[[i, j]].to_bits());
            }
        }
    }

    #[test]
    fn k_sweep_shares_rounds() {
        let cfg = SimulationConfig {
            rounds: 5,
            ..small_cfg()
        };
        let series = run_k_sweep(&cfg, &[1, 2]).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].k, 1);
        assert!(series.iter().all(|s| s.de.len() == 5));
        // k = 1 column must agree with the plain experiment.
        let base = run_fdp_experiment(&cfg).unwrap();
        for (a, b) in series[0].de.iter().zip(base.records.iter().map(|r| r.de)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn power_zero_signal_has_zero_fnr() {
        let cfg = SimulationConfig {
            p1: 0,
            rounds: 4,
            t: 0.01,
            ..small_cfg()
        };
        let res = run_power_experiment(&cfg).unwrap();
        let power = res.power.unwrap();
        assert_eq!(power.fnr_adjusted, 0.0);
        assert!((0.0..=1.0).contains(&power.fdr_adjusted));
    }

    #[test]
    fn matched_threshold_agrees_with_grid_scan() {
        let cfg = SimulationConfig {
            p: 100,
            n: 100,
            k_true: 2,
            p1: 20,
            signal: Signal::Uniform(0.1, 0.5),
            sigma_u_kind: SigmaUKind::Approximate,
            sigma_u_scale: 0.1,
            rounds: 10,
            seed: 11,
            t: 0.001,
            poet: PoetConfig {
                k: KChoice::Fixed(2),
                ..PoetConfig::default()
            },
            method: WMethod::LeastSquares,
        };
        let res = run_power_experiment(&cfg).unwrap();
        let power = res.power.unwrap();
        assert!((power.fdr_fixed - power.fdr_adjusted).abs() <= FDR_MATCH_TOL + 1e-12);

        // Exhaustive scan over a fine log grid for the same target.
        let ctx = SimulationContext::new(cfg.clone()).unwrap();
        let mut pvals = Vec::new();
        let mut nulls = Vec::new();
        for round in 0..cfg.rounds {
            let (x, truth, _, sigma_true) = ctx.generate_dataset(round).unwrap();
            let z = standardized_statistics(&x, &sigma_true).unwrap();
            pvals.push(pvalues(&z).as_slice().to_vec());
            nulls.push(truth.is_null().to_vec());
        }
        let mut best = (f64::INFINITY, 0.0);
        let mut lt = (1e-12f64).ln();
        let hi = (0.999f64).ln();
        let step = (hi - lt) / 4000.0;
        while lt <= hi {
            let t = lt.exp();
            let diff = (mean_fdr(&pvals, &nulls, t) - power.fdr_adjusted).abs();
            if diff < best.0 {
                best = (diff, t);
            }
            lt += step;
        }
        let grid_fdr = mean_fdr(&pvals, &nulls, best.1);
        assert!((grid_fdr - power.fdr_fixed).abs() <= 2.0 * FDR_MATCH_TOL);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        cfg.p1 = cfg.p;
        assert!(SimulationContext::new(cfg).is_err());
        let mut cfg = small_cfg();
        cfg.rounds = 0;
        assert!(SimulationContext::new(cfg).is_err());
        let mut cfg = small_cfg();
        cfg.t = 1.0;
        assert!(SimulationContext::new(cfg).is_err());
        let mut cfg = small_cfg();
        cfg.signal = Signal::Uniform(0.5, 0.1);
        assert!(SimulationContext::new(cfg).is_err());
    }

    #[test]
    fn map_rounds_preserves_round_order() {
        for threads in [1usize, 3, 8] {
            let out = map_rounds(17, threads, |r| r * r);
            assert_eq!(out.len(), 17);
            for (i, &(r, v)) in out.iter().enumerate() {
                assert_eq!(r, i);
                assert_eq!(v, i * i);
            }
        }
        assert!(map_rounds(0, 4, |r| r).is_empty());
    }

    #[test]
    fn experiment_results_are_identical_across_thread_counts() {
        let cfg = small_cfg();
        let serial = run_fdp_experiment_threads(&cfg, 1).unwrap();
        let parallel = run_fdp_experiment_threads(&cfg, 4).unwrap();
        assert_eq!(serial.records.len(), parallel.records.len());
        for (a, b) in serial.records.iter().zip(&parallel.records) {
            assert_eq!(a.round, b.round);
            assert!(a.fdp_true.to_bits() == b.fdp_true.to_bits());
            assert!(a.fdp_a.to_bits() == b.fdp_a.to_bits());
            assert!(a.fdp_poet.to_bits() == b.fdp_poet.to_bits());
        }
        assert!(serial.poet.mean_de.to_bits() == parallel.poet.mean_de.to_bits());
        assert!(serial.poet.sd_de.to_bits() == parallel.poet.sd_de.to_bits());
    }
}
