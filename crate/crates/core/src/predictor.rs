//! Target forecasting by sample-and-check.
//!
//! Points are sampled on the covariance contours of the most recent
//! observations, every cartesian sequence of those points is turned into a
//! smooth polynomial by a closed-form least-squares fit (one shared
//! factorization for all sequences), candidates that cannot be certified
//! clear of the obstacles are discarded, and the cheapest survivor wins.

use std::f64::consts::{PI, TAU};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::par_map;
use crate::polyalg::{count_roots_on_horizon, gram_matrix, Polynomial};
use crate::worldmodel::{pairwise_form_poly, EllipsoidObstacle, TargetObservation, Trajectory3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("invalid predictor configuration: {0}")]
    InvalidConfig(String),
    #[error("need {need} observations, got {got}")]
    NotEnoughObservations { need: usize, got: usize },
    #[error("observation timestamps must be strictly increasing and negative")]
    UnorderedObservations,
    #[error("observation covariance is not positive definite")]
    NonSPDCovariance,
    #[error("prediction system is numerically singular")]
    FactorizationFailure,
    #[error("{count} candidates exceed the cap of {cap}")]
    CandidateCapExceeded { count: usize, cap: usize },
    #[error("no candidate prediction clears the obstacles")]
    NoFeasiblePrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Observations used per prediction (most recent ones).
    pub n_obs: usize,
    /// Points sampled per observation, mean included.
    pub n_vertices: usize,
    /// Mahalanobis radius of the sampled contour.
    pub contour_radius: f64,
    /// Polynomial degree of the prediction.
    pub degree: usize,
    /// Forecast horizon in seconds.
    pub horizon: f64,
    /// Weight of the tracking residual against smoothness.
    pub tracking_weight: f64,
    /// Weight of the inverse-likelihood term when scoring.
    pub likelihood_weight: f64,
    pub candidate_cap: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            n_obs: 3,
            n_vertices: 5,
            contour_radius: 1.0,
            degree: 1,
            horizon: 5.0,
            tracking_weight: 100.0,
            likelihood_weight: 1e-3,
            candidate_cap: 100_000,
        }
    }
}

impl PredictorConfig {
    pub fn candidate_count(&self) -> Option<usize> {
        self.n_vertices.checked_pow(u32::try_from(self.n_obs).ok()?)
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        let bad = |m: &str| Err(PredictError::InvalidConfig(m.to_string()));
        if self.n_obs < 2 {
            return bad("n_obs must be at least 2");
        }
        if self.degree < 1 {
            return bad("degree must be at least 1");
        }
        if self.n_vertices < 1 {
            return bad("n_vertices must be at least 1");
        }
        if !(self.contour_radius > 0.0) {
            return bad("contour_radius must be positive");
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be positive");
        }
        if !(self.tracking_weight >= 0.0) || !(self.likelihood_weight >= 0.0) {
            return bad("weights must be nonnegative");
        }
        match self.candidate_count() {
            Some(n) if n <= self.candidate_cap => Ok(()),
            n => Err(PredictError::CandidateCapExceeded {
                count: n.unwrap_or(usize::MAX),
                cap: self.candidate_cap,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCandidate {
    pub trajectory: Trajectory3,
    pub index: usize,
    /// Set only by the predictor after certifying obstacle clearance.
    pub feasible: bool,
    pub cost: f64,
}

impl PredictionCandidate {
    /// A prediction from some other source; the chaser re-verifies it.
    pub fn external(trajectory: Trajectory3) -> Self {
        Self { trajectory, index: 0, feasible: false, cost: f64::NAN }
    }
}

/// `[1, t, …, t^m]`.
pub(crate) fn monomial_basis(m: usize, t: f64) -> DVector<f64> {
    let mut v = DVector::zeros(m + 1);
    let mut p = 1.0;
    for i in 0..=m {
        v[i] = p;
        p *= t;
    }
    v
}

pub(crate) fn coeff_vector(p: &Polynomial, m: usize) -> DVector<f64> {
    DVector::from_fn(m + 1, |i, _| p.coeffs().get(i).copied().unwrap_or(0.0))
}

/// Mean first, then `n_vertices − 1` points evenly spaced in azimuth on the
/// `contour_radius` covariance contour, in the x-y plane.
pub fn sample_contour_points(obs: &TargetObservation, cfg: &PredictorConfig) -> Result<Vec<Vec3>, PredictError> {
    let chol = obs.covariance().cholesky().ok_or(PredictError::NonSPDCovariance)?;
    let l = chol.l();
    let mean = *obs.mean();
    let ring = cfg.n_vertices.saturating_sub(1);
    let mut pts = Vec::with_capacity(cfg.n_vertices);
    pts.push(mean);
    for k in 0..ring {
        let th = TAU * k as f64 / ring as f64;
        let u = Vec3::new(th.cos(), th.sin(), 0.0);
        pts.push(mean + l * u * cfg.contour_radius);
    }
    Ok(pts)
}

/// `M_q` with its Cholesky factor, reused for every right-hand side.
#[derive(Debug, Clone)]
pub struct PredictionSystem {
    matrix: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    bases: Vec<DVector<f64>>,
    times: Vec<f64>,
    degree: usize,
    tracking_weight: f64,
    horizon: f64,
}

impl PredictionSystem {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.times
    }
}

pub fn assemble_prediction_system(cfg: &PredictorConfig, timestamps: &[f64]) -> Result<PredictionSystem, PredictError> {
    let m = cfg.degree;
    let mut matrix = gram_matrix(m, 2, cfg.horizon).map_err(|e| PredictError::InvalidConfig(e.to_string()))?;
    let bases: Vec<_> = timestamps.iter().map(|&t| monomial_basis(m, t)).collect();
    for c in &bases {
        matrix += c * c.transpose() * cfg.tracking_weight;
    }
    let factor = Cholesky::new(matrix.clone()).ok_or(PredictError::FactorizationFailure)?;
    // Cholesky accepts tiny positive pivots; reject numerically singular systems.
    let diag = factor.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0) || lo / hi < 1e-7 {
        return Err(PredictError::FactorizationFailure);
    }
    Ok(PredictionSystem { matrix, factor, bases, times: timestamps.to_vec(), degree: m, tracking_weight: cfg.tracking_weight, horizon: cfg.horizon })
}

/// Solves every sequence against the shared factorization.
///
/// Per axis the right-hand sides `h(V) = −2w Σ v_n c(t_n)` are stacked
/// column-wise and `q = −½ M⁻¹ H` is computed in one solve.
pub fn batch_solve_predictions(system: &PredictionSystem, sequences: &[Vec<Vec3>]) -> Vec<Trajectory3> {
    let n = system.degree + 1;
    let w = system.tracking_weight;
    let mut coeffs: Vec<DMatrix<f64>> = Vec::with_capacity(3);
    for axis in 0..3 {
        let mut h = DMatrix::zeros(n, sequences.len());
        for (col, seq) in sequences.iter().enumerate() {
            let mut hc = DVector::zeros(n);
            for (v, c) in seq.iter().zip(&system.bases) {
                hc += c * (-2.0 * w * v[axis]);
            }
            h.set_column(col, &hc);
        }
        let q = system.factor.solve(&h) * -0.5;
        coeffs.push(q);
    }
    (0..sequences.len())
        .map(|col| {
            let axes = [0, 1, 2].map(|a| Polynomial::new(coeffs[a].column(col).iter().copied().collect()));
            Trajectory3::from_axes(axes, system.horizon)
        })
        .collect()
}

/// `d_q(0) > 1` and `d_q − 1` root-free on `(0, horizon]` for every obstacle.
///
/// An inconclusive root count is reported as infeasible.
pub fn prediction_feasible(candidate: &Trajectory3, obstacles: &[EllipsoidObstacle], horizon: f64) -> bool {
    obstacles.iter().all(|obs| {
        let rel = candidate.sub(obs.center());
        let dq = pairwise_form_poly(&rel, &rel, obs.shape());
        dq.eval(0.0) > 1.0
            && matches!(count_roots_on_horizon(&(&dq - &Polynomial::constant(1.0)), horizon), Ok(0))
    })
}

/// `∫₀ᵀ ‖x̂''‖² dt + w_q Π_n p_N(x̂(t_n))⁻¹`, the product taken in log-domain
/// and saturated at `f64::MAX`.
pub fn prediction_cost(candidate: &Trajectory3, observations: &[TargetObservation], cfg: &PredictorConfig) -> f64 {
    let (smooth, likelihood) = prediction_cost_parts(candidate, observations, cfg);
    smooth + likelihood
}

/// `(smoothness, likelihood)` terms of [`prediction_cost`].
pub fn prediction_cost_parts(
    candidate: &Trajectory3,
    observations: &[TargetObservation],
    cfg: &PredictorConfig,
) -> (f64, f64) {
    let m = candidate.degree().max(cfg.degree);
    let g = gram_matrix(m, 2, cfg.horizon).expect("validated horizon");
    let smooth: f64 = candidate
        .axes()
        .iter()
        .map(|p| {
            let q = coeff_vector(p, m);
            q.dot(&(&g * &q))
        })
        .sum();
    let log_inv: f64 = observations
        .iter()
        .map(|o| {
            let r = candidate.eval(o.t()) - o.mean();
            let chol = o.covariance().cholesky().expect("validated covariance");
            let maha = r.dot(&chol.solve(&r));
            0.5 * maha + 0.5 * ((2.0 * PI).powi(3) * o.covariance().determinant()).ln()
        })
        .sum();
    let likelihood = if cfg.likelihood_weight == 0.0 {
        0.0
    } else {
        let v = cfg.likelihood_weight * log_inv.exp();
        if v.is_finite() { v } else { f64::MAX }
    };
    (smooth, likelihood)
}

/// Mixed-radix decoding of a sequence index, last observation fastest.
fn sequence_digits(mut index: usize, radix: usize, len: usize) -> Vec<usize> {
    let mut d = vec![0; len];
    for slot in d.iter_mut().rev() {
        *slot = index % radix;
        index /= radix;
    }
    d
}

fn recent<'a>(observations: &'a [TargetObservation], cfg: &PredictorConfig) -> Result<&'a [TargetObservation], PredictError> {
    if observations.len() < cfg.n_obs {
        return Err(PredictError::NotEnoughObservations { need: cfg.n_obs, got: observations.len() });
    }
    let window = &observations[observations.len() - cfg.n_obs..];
    if window.windows(2).any(|w| !(w[1].t() > w[0].t())) || window.iter().any(|o| !(o.t() < 0.0)) {
        return Err(PredictError::UnorderedObservations);
    }
    Ok(window)
}

/// Every candidate with its feasibility flag and cost, in sequence order.
pub fn enumerate_candidates(
    observations: &[TargetObservation],
    obstacles: &[EllipsoidObstacle],
    cfg: &PredictorConfig,
) -> Result<Vec<PredictionCandidate>, PredictError> {
    cfg.validate()?;
    let window = recent(observations, cfg)?;
    let contours = window
        .iter()
        .map(|o| sample_contour_points(o, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let times: Vec<f64> = window.iter().map(TargetObservation::t).collect();
    let system = assemble_prediction_system(cfg, &times)?;
    let count = cfg.candidate_count().expect("validated count");
    let sequences: Vec<Vec<Vec3>> = (0..count)
        .map(|i| {
            sequence_digits(i, cfg.n_vertices, cfg.n_obs)
                .iter()
                .zip(&contours)
                .map(|(&d, pts)| pts[d])
                .collect()
        })
        .collect();
    let trajectories = batch_solve_predictions(&system, &sequences);
    let indexed: Vec<(usize, Trajectory3)> = trajectories.into_iter().enumerate().collect();
    Ok(par_map(&indexed, |(i, tr)| {
        let feasible = prediction_feasible(tr, obstacles, cfg.horizon);
        let cost = if feasible { prediction_cost(tr, window, cfg) } else { f64::INFINITY };
        PredictionCandidate { trajectory: tr.clone(), index: *i, feasible, cost }
    }))
}

/// Minimum-cost certified prediction; ties go to the lowest sequence index.
pub fn predict(
    observations: &[TargetObservation],
    obstacles: &[EllipsoidObstacle],
    cfg: &PredictorConfig,
) -> Result<PredictionCandidate, PredictError> {
    let candidates = enumerate_candidates(observations, obstacles, cfg)?;
    let feasible = candidates.iter().filter(|c| c.feasible).count();
    log::debug!("prediction: {feasible}/{} candidates certified", candidates.len());
    candidates
        .into_iter()
        .filter(|c| c.feasible)
        .fold(None, |best: Option<PredictionCandidate>, c| match best {
            Some(b) if b.cost <= c.cost => Some(b),
            _ => Some(c),
        })
        .ok_or(PredictError::NoFeasiblePrediction)
}
