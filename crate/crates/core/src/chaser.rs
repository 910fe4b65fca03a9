//! Chasing-primitive generation and certification.
//!
//! View skeletons are sampled on rings around the predicted target, every
//! skeleton sequence becomes a polynomial through one shared KKT
//! factorization, and each candidate is certified for safety and visibility
//! by counting real roots of three scalar polynomials whose minimum bounds
//! the segment clearance from below. The cheapest certified candidate wins.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::par_map;
use crate::polyalg::{count_roots_on_horizon, falling_factorial, gram_matrix, Polynomial};
use crate::predictor::{coeff_vector, monomial_basis, PredictionCandidate};
use crate::worldmodel::{mahalanobis_sq, pairwise_form_poly, EllipsoidObstacle, Mat3, Trajectory3, Vec3};

/// `a₂` below this is a degenerate (point) segment.
const DEGENERATE_SEGMENT_EPS: f64 = 1e-12;
/// Planar range below which the yaw rate is singular.
const YAW_SINGULAR_RANGE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChaseError {
    #[error("invalid chaser configuration: {0}")]
    InvalidConfig(String),
    #[error("KKT system is singular: {0}")]
    SingularKKT(String),
    #[error("{count} candidates exceed the cap of {cap}")]
    CandidateCapExceeded { count: usize, cap: usize },
    #[error("degree {found} of `{what}` exceeds the chaser degree {max}")]
    DegreeConvention { what: String, found: usize, max: usize },
    #[error("no chasing candidate passed certification")]
    NoFeasibleCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaserConfig {
    /// Skeleton time steps `N` over the horizon.
    pub n_steps: usize,
    /// Ring radii in meters; `None` means `{0.7, 1.0, 1.3}·l_des`.
    pub radii: Option<Vec<f64>>,
    /// Skeleton points per radius.
    pub azimuth_count: usize,
    /// Spread skeletons over spheres instead of horizontal rings.
    pub full_sphere: bool,
    /// Polynomial degree `m_p` of the chaser.
    pub degree: usize,
    pub horizon: f64,
    /// Skeleton attraction weight `w_p`.
    pub skeleton_weight: f64,
    /// `w₁..w₄` for smoothness, obstacle, distance and yaw-rate costs.
    pub weights: [f64; 4],
    /// `ρ_k` for `k = 2, 3, …`.
    pub derivative_weights: Vec<f64>,
    pub c_max: f64,
    pub c_min: f64,
    pub l_s: f64,
    pub l_des: f64,
    /// Trapezoid nodes for the non-polynomial costs.
    pub n_eval: usize,
    /// Yaw-rate magnitude used at singular nodes (rad/s).
    pub yaw_rate_cap: f64,
    /// Re-verify `d_q` even for certified predictions.
    pub recheck_dq: bool,
    /// Certify against `1 + clearance_margin` instead of 1.
    pub clearance_margin: f64,
    pub max_speed: Option<f64>,
    pub max_accel: Option<f64>,
    pub candidate_cap: usize,
}

impl Default for ChaserConfig {
    fn default() -> Self {
        Self {
            n_steps: 3,
            radii: None,
            azimuth_count: 4,
            full_sphere: false,
            degree: 5,
            horizon: 5.0,
            skeleton_weight: 10.0,
            weights: [1.0, 1.0, 1.0, 1.0],
            derivative_weights: vec![1.0, 0.1],
            c_max: 10.0,
            c_min: 0.1,
            l_s: 2.0,
            l_des: 3.0,
            n_eval: 64,
            yaw_rate_cap: 10.0,
            recheck_dq: false,
            clearance_margin: 0.0,
            max_speed: None,
            max_accel: None,
            candidate_cap: 100_000,
        }
    }
}

impl ChaserConfig {
    pub fn ring_radii(&self) -> Vec<f64> {
        self.radii
            .clone()
            .unwrap_or_else(|| vec![0.7 * self.l_des, self.l_des, 1.3 * self.l_des])
    }

    /// `N_s`.
    pub fn skeletons_per_step(&self) -> usize {
        self.ring_radii().len() * self.azimuth_count
    }

    /// `N_p = N_s^N`.
    pub fn candidate_count(&self) -> Option<usize> {
        self.skeletons_per_step().checked_pow(u32::try_from(self.n_steps).ok()?)
    }

    pub fn validate(&self) -> Result<(), ChaseError> {
        let bad = |m: &str| Err(ChaseError::InvalidConfig(m.to_string()));
        if self.degree <= 3 {
            return Err(ChaseError::SingularKKT(format!(
                "degree {} leaves the four initial constraints without full row rank margin (need > 3)",
                self.degree
            )));
        }
        if self.n_steps < 2 {
            return Err(ChaseError::SingularKKT("at least two skeleton steps are needed".into()));
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be positive");
        }
        if self.skeletons_per_step() == 0 {
            return bad("need at least one skeleton per step");
        }
        if self.ring_radii().iter().any(|r| !(*r >= 0.0)) {
            return bad("radii must be nonnegative");
        }
        if !(self.c_max > self.c_min && self.c_min > 0.0) {
            return bad("need c_max > c_min > 0");
        }
        if !(self.l_s > 0.0) || !(self.l_des > 0.0) {
            return bad("l_s and l_des must be positive");
        }
        if self.n_eval < 2 {
            return bad("n_eval must be at least 2");
        }
        if !(self.skeleton_weight > 0.0) {
            return bad("skeleton_weight must be positive");
        }
        if self.weights.iter().chain(&self.derivative_weights).any(|w| !(*w >= 0.0)) {
            return bad("weights must be nonnegative");
        }
        if !(self.clearance_margin >= 0.0) {
            return bad("clearance_margin must be nonnegative");
        }
        match self.candidate_count() {
            Some(n) if n <= self.candidate_cap => Ok(()),
            n => Err(ChaseError::CandidateCapExceeded { count: n.unwrap_or(usize::MAX), cap: self.candidate_cap }),
        }
    }
}

/// Position, velocity, acceleration and jerk at the start of a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub derivatives: [Vec3; 4],
}

impl InitialState {
    pub fn at_rest(position: Vec3) -> Self {
        Self { derivatives: [position, Vec3::zeros(), Vec3::zeros(), Vec3::zeros()] }
    }

    pub fn position(&self) -> Vec3 {
        self.derivatives[0]
    }

    /// State of `tr` at time `t`.
    pub fn sample(tr: &Trajectory3, t: f64) -> Self {
        Self { derivatives: [0, 1, 2, 3].map(|k| tr.eval_derivative(k, t)) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CostBreakdown {
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub j4: f64,
    pub total: f64,
    /// Some node had a planar range below 1e-6 m.
    pub yaw_singular: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChasePlan {
    pub trajectory: Trajectory3,
    pub costs: CostBreakdown,
    pub index: usize,
    pub candidate_count: usize,
    pub feasible_count: usize,
    /// Minimum exact clearance per obstacle over the evaluation grid.
    pub min_clearance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaseCandidate {
    pub trajectory: Trajectory3,
    pub index: usize,
    pub feasible: bool,
    pub costs: Option<CostBreakdown>,
}

/// Yaw that points the optical axis from the chaser to the target.
pub fn yaw(chaser: &Vec3, target: &Vec3) -> f64 {
    (target.y - chaser.y).atan2(target.x - chaser.x)
}

/// `N` lists of `N_s` skeleton points around the prediction at `t_n = nT/N`.
pub fn sample_view_skeletons(prediction: &Trajectory3, cfg: &ChaserConfig) -> Vec<Vec<Vec3>> {
    let offsets = skeleton_offsets(cfg);
    (1..=cfg.n_steps)
        .map(|n| {
            let c = prediction.eval(cfg.horizon * n as f64 / cfg.n_steps as f64);
            offsets.iter().map(|o| c + o).collect()
        })
        .collect()
}

fn skeleton_offsets(cfg: &ChaserConfig) -> Vec<Vec3> {
    let k = cfg.azimuth_count;
    let mut out = Vec::with_capacity(cfg.skeletons_per_step());
    for r in cfg.ring_radii() {
        for i in 0..k {
            let dir = if cfg.full_sphere {
                // Fibonacci lattice over the sphere.
                let golden = PI * (3.0 - 5.0_f64.sqrt());
                let z = if k == 1 { 0.0 } else { 1.0 - 2.0 * (i as f64 + 0.5) / k as f64 };
                let rho = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                Vec3::new(rho * th.cos(), rho * th.sin(), z)
            } else {
                let th = TAU * i as f64 / k as f64;
                Vec3::new(th.cos(), th.sin(), 0.0)
            };
            out.push(dir * r);
        }
    }
    out
}

/// The factorized KKT matrix `[[2M_p, Aᵀ], [A, 0]]`.
#[derive(Debug, Clone)]
pub struct ChasingSystem {
    kkt: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    bases: Vec<DVector<f64>>,
    degree: usize,
    skeleton_weight: f64,
    horizon: f64,
}

impl ChasingSystem {
    pub fn kkt(&self) -> &DMatrix<f64> {
        &self.kkt
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
}

/// Rows `c_p^{(k)}(0)ᵀ` for `k = 0..3`.
pub fn initial_constraint_matrix(degree: usize) -> DMatrix<f64> {
    DMatrix::from_fn(4, degree + 1, |k, i| if i == k { falling_factorial(k, k) } else { 0.0 })
}

pub fn assemble_chasing_kkt(cfg: &ChaserConfig) -> Result<ChasingSystem, ChaseError> {
    cfg.validate()?;
    let m = cfg.degree;
    let n = m + 1;
    let mut mp = gram_matrix(m, 2, cfg.horizon).map_err(|e| ChaseError::InvalidConfig(e.to_string()))?;
    let bases: Vec<_> = (1..=cfg.n_steps)
        .map(|s| monomial_basis(m, cfg.horizon * s as f64 / cfg.n_steps as f64))
        .collect();
    for c in &bases {
        mp += c * c.transpose() * cfg.skeleton_weight;
    }
    let a = initial_constraint_matrix(m);
    let mut kkt = DMatrix::zeros(n + 4, n + 4);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(mp * 2.0));
    kkt.view_mut((n, 0), (4, n)).copy_from(&a);
    kkt.view_mut((0, n), (n, 4)).copy_from(&a.transpose());
    let lu = kkt.clone().lu();
    let u = lu.u();
    let diag = u.diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
    if !lu.is_invertible() || !(lo > 1e-14 * hi) {
        return Err(ChaseError::SingularKKT("LU pivot underflow".into()));
    }
    Ok(ChasingSystem { kkt, lu, bases, degree: m, skeleton_weight: cfg.skeleton_weight, horizon: cfg.horizon })
}

/// Solves all skeleton sequences at once: per axis the columns
/// `[−h_p(U_i); b]` are stacked and solved against the shared LU factor;
/// the multipliers are discarded.
pub fn batch_solve_chasing(system: &ChasingSystem, sequences: &[Vec<Vec3>], init: &InitialState) -> Vec<Trajectory3> {
    let n = system.degree + 1;
    let w = system.skeleton_weight;
    let mut per_axis = Vec::with_capacity(3);
    for axis in 0..3 {
        let mut y = DMatrix::zeros(n + 4, sequences.len());
        for (col, seq) in sequences.iter().enumerate() {
            let mut mh = DVector::zeros(n);
            for (u, c) in seq.iter().zip(&system.bases) {
                mh += c * (2.0 * w * u[axis]);
            }
            y.view_mut((0, col), (n, 1)).copy_from(&mh);
            for k in 0..4 {
                y[(n + k, col)] = init.derivatives[k][axis];
            }
        }
        per_axis.push(system.lu.solve(&y).expect("invertibility checked at assembly"));
    }
    (0..sequences.len())
        .map(|col| {
            let axes = [0, 1, 2].map(|a| Polynomial::new(per_axis[a].view((0, col), (n, 1)).iter().copied().collect()));
            Trajectory3::from_axes(axes, system.horizon)
        })
        .collect()
}

/// Exact segment clearance at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clearance {
    pub value: f64,
    /// Chaser and target coincide; `value` is the point clearance.
    pub degenerate: bool,
}

/// `min_{s∈[0,1]} ‖(1−s)p + s q − r‖²_R` in closed form.
pub fn segment_clearance(p: &Vec3, q: &Vec3, r: &Vec3, shape: &Mat3) -> Clearance {
    let rp = r - p;
    let qp = q - p;
    let a0 = rp.dot(&(shape * rp));
    let a1 = -2.0 * rp.dot(&(shape * qp));
    let a2 = qp.dot(&(shape * qp));
    if a2 <= DEGENERATE_SEGMENT_EPS {
        return Clearance { value: a0, degenerate: true };
    }
    let vertex = -a1 / (2.0 * a2);
    let value = if vertex < 0.0 {
        a0
    } else if vertex < 1.0 {
        a0 - a1 * a1 / (4.0 * a2)
    } else {
        a2 + a1 + a0
    };
    Clearance { value, degenerate: false }
}

/// Exact feasibility function `d(t)` for one obstacle.
pub fn exact_clearance(x_p: &Trajectory3, x_q: &Trajectory3, obstacle: &EllipsoidObstacle, t: f64) -> Clearance {
    segment_clearance(&x_p.eval(t), &x_q.eval(t), &obstacle.center_at(t), obstacle.shape())
}

/// The three polynomials whose pointwise minimum lower-bounds `d(t)`:
/// `(d_p, d_q, d_s)`.
pub fn lower_bound_polys(x_p: &Trajectory3, x_q: &Trajectory3, obstacle: &EllipsoidObstacle) -> (Polynomial, Polynomial, Polynomial) {
    let pr = x_p.sub(obstacle.center());
    let qr = x_q.sub(obstacle.center());
    let shape = obstacle.shape();
    (
        pairwise_form_poly(&pr, &pr, shape),
        pairwise_form_poly(&qr, &qr, shape),
        pairwise_form_poly(&qr, &pr, shape),
    )
}

/// `d_low(t) = min(d_p, d_q, d_s)` evaluated at `t`.
pub fn lower_bound_clearance(x_p: &Trajectory3, x_q: &Trajectory3, obstacle: &EllipsoidObstacle, t: f64) -> f64 {
    let (p, q, r) = (x_p.eval(t), x_q.eval(t), obstacle.center_at(t));
    let shape = obstacle.shape();
    let dp = mahalanobis_sq(&p, &r, shape);
    let dq = mahalanobis_sq(&q, &r, shape);
    let ds = (q - r).dot(&(shape * (p - r)));
    dp.min(dq).min(ds)
}

/// Options for [`chasing_feasible`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Certification {
    pub recheck_dq: bool,
    pub margin: f64,
}

fn crosses(poly: &Polynomial, level: f64, horizon: f64) -> bool {
    !matches!(count_roots_on_horizon(&(poly - &Polynomial::constant(level)), horizon), Ok(0))
}

/// Sufficient safety-and-visibility test over `(0, horizon]`.
///
/// Accepts only if `d_low(0) > 1` and none of `d_p, d_s` (and `d_q` when
/// requested) reaches 1 on the interval. Inconclusive root counts reject.
pub fn chasing_feasible(
    x_p: &Trajectory3,
    x_q: &Trajectory3,
    obstacles: &[EllipsoidObstacle],
    horizon: f64,
    opts: Certification,
) -> bool {
    let level = 1.0 + opts.margin;
    obstacles.iter().all(|obs| {
        let (dp, dq, ds) = lower_bound_polys(x_p, x_q, obs);
        dp.eval(0.0).min(dq.eval(0.0)).min(ds.eval(0.0)) > level
            && !crosses(&dp, level, horizon)
            && !crosses(&ds, level, horizon)
            && !(opts.recheck_dq && crosses(&dq, level, horizon))
    })
}

/// Piecewise-quadratic obstacle cost shaping `c(l)`.
pub fn shaping_cost(l: f64, cfg: &ChaserConfig) -> f64 {
    if l <= cfg.l_s {
        let u = (l - cfg.l_s) / cfg.l_s;
        cfg.c_min + (cfg.c_max - cfg.c_min) * u * u
    } else {
        cfg.c_min
    }
}

/// Precomputed Gram matrices and sampled environment for scoring many
/// candidates over the same horizon.
struct CostModel<'a> {
    cfg: &'a ChaserConfig,
    grams: Vec<(f64, DMatrix<f64>)>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    target_pos: Vec<Vec3>,
    target_vel: Vec<Vec3>,
    obstacle_centers: Vec<Vec<Vec3>>,
    shapes: Vec<Mat3>,
}

impl<'a> CostModel<'a> {
    fn new(x_q: &Trajectory3, obstacles: &[EllipsoidObstacle], cfg: &'a ChaserConfig, degree: usize) -> Self {
        let grams = cfg
            .derivative_weights
            .iter()
            .enumerate()
            .filter(|(_, rho)| **rho != 0.0)
            .map(|(i, &rho)| (rho, gram_matrix(degree, i + 2, cfg.horizon).expect("validated horizon")))
            .collect();
        let n = cfg.n_eval;
        let h = cfg.horizon / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| h * i as f64).collect();
        let weights = (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect();
        let vq = x_q.derivative(1);
        Self {
            cfg,
            grams,
            target_pos: nodes.iter().map(|&t| x_q.eval(t)).collect(),
            target_vel: nodes.iter().map(|&t| vq.eval(t)).collect(),
            obstacle_centers: obstacles.iter().map(|o| nodes.iter().map(|&t| o.center_at(t)).collect()).collect(),
            shapes: obstacles.iter().map(|o| *o.shape()).collect(),
            nodes,
            weights,
        }
    }

    fn score(&self, x_p: &Trajectory3) -> CostBreakdown {
        let cfg = self.cfg;
        let j1 = self
            .grams
            .iter()
            .map(|(rho, g)| {
                rho * x_p
                    .axes()
                    .iter()
                    .map(|p| {
                        let c = coeff_vector(p, g.nrows() - 1);
                        c.dot(&(g * &c))
                    })
                    .sum::<f64>()
            })
            .sum();
        let vp = x_p.derivative(1);
        let (mut j2, mut j3, mut j4) = (0.0, 0.0, 0.0);
        let mut yaw_singular = false;
        for (i, (&t, &w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let p = x_p.eval(t);
            for (centers, shape) in self.obstacle_centers.iter().zip(&self.shapes) {
                j2 += w * shaping_cost(mahalanobis_sq(&p, &centers[i], shape).sqrt(), cfg);
            }
            let rel = self.target_pos[i] - p;
            j3 += w * (rel.norm() - cfg.l_des).powi(2);
            let drel = self.target_vel[i] - vp.eval(t);
            let range_sq = rel.x * rel.x + rel.y * rel.y;
            let rate = if range_sq.sqrt() < YAW_SINGULAR_RANGE {
                yaw_singular = true;
                cfg.yaw_rate_cap
            } else {
                (rel.x * drel.y - rel.y * drel.x) / range_sq
            };
            j4 += w * rate * rate;
        }
        let [w1, w2, w3, w4] = cfg.weights;
        CostBreakdown { j1, j2, j3, j4, total: w1 * j1 + w2 * j2 + w3 * j3 + w4 * j4, yaw_singular }
    }
}

/// `J₁..J₄` and their weighted sum for one chasing candidate.
pub fn chasing_cost(x_p: &Trajectory3, x_q: &Trajectory3, obstacles: &[EllipsoidObstacle], cfg: &ChaserConfig) -> CostBreakdown {
    CostModel::new(x_q, obstacles, cfg, x_p.degree().max(cfg.degree)).score(x_p)
}

fn within_dynamic_limits(x_p: &Trajectory3, cfg: &ChaserConfig) -> bool {
    if cfg.max_speed.is_none() && cfg.max_accel.is_none() {
        return true;
    }
    let (v, a) = (x_p.derivative(1), x_p.derivative(2));
    (0..cfg.n_eval).all(|i| {
        let t = cfg.horizon * i as f64 / (cfg.n_eval - 1) as f64;
        cfg.max_speed.is_none_or(|m| v.eval(t).norm() <= m) && cfg.max_accel.is_none_or(|m| a.eval(t).norm() <= m)
    })
}

fn sequence_digits(mut index: usize, radix: usize, len: usize) -> Vec<usize> {
    let mut d = vec![0; len];
    for slot in d.iter_mut().rev() {
        *slot = index % radix;
        index /= radix;
    }
    d
}

fn check_degrees(prediction: &Trajectory3, obstacles: &[EllipsoidObstacle], cfg: &ChaserConfig) -> Result<(), ChaseError> {
    if prediction.degree() > cfg.degree {
        return Err(ChaseError::DegreeConvention { what: "prediction".into(), found: prediction.degree(), max: cfg.degree });
    }
    for o in obstacles {
        if o.center().degree() > cfg.degree {
            return Err(ChaseError::DegreeConvention { what: o.label().into(), found: o.center().degree(), max: cfg.degree });
        }
    }
    Ok(())
}

/// Every candidate in sequence order, certified and (when feasible) scored.
pub fn enumerate_chasing_candidates(
    prediction: &PredictionCandidate,
    obstacles: &[EllipsoidObstacle],
    init: &InitialState,
    cfg: &ChaserConfig,
) -> Result<Vec<ChaseCandidate>, ChaseError> {
    let system = assemble_chasing_kkt(cfg)?;
    let x_q = &prediction.trajectory;
    check_degrees(x_q, obstacles, cfg)?;
    let skeletons = sample_view_skeletons(x_q, cfg);
    let ns = cfg.skeletons_per_step();
    let count = cfg.candidate_count().expect("validated count");
    let sequences: Vec<Vec<Vec3>> = (0..count)
        .map(|i| sequence_digits(i, ns, cfg.n_steps).iter().zip(&skeletons).map(|(&d, s)| s[d]).collect())
        .collect();
    let trajectories = batch_solve_chasing(&system, &sequences, init);
    let opts = Certification { recheck_dq: cfg.recheck_dq || !prediction.feasible, margin: cfg.clearance_margin };
    let model = CostModel::new(x_q, obstacles, cfg, cfg.degree);
    let indexed: Vec<(usize, Trajectory3)> = trajectories.into_iter().enumerate().collect();
    Ok(par_map(&indexed, |(i, tr)| {
        let feasible = chasing_feasible(tr, x_q, obstacles, cfg.horizon, opts) && within_dynamic_limits(tr, cfg);
        ChaseCandidate { trajectory: tr.clone(), index: *i, feasible, costs: feasible.then(|| model.score(tr)) }
    }))
}

/// Cheapest certified chasing primitive, ties to the lowest index.
pub fn plan(
    prediction: &PredictionCandidate,
    obstacles: &[EllipsoidObstacle],
    init: &InitialState,
    cfg: &ChaserConfig,
) -> Result<ChasePlan, ChaseError> {
    let candidates = enumerate_chasing_candidates(prediction, obstacles, init, cfg)?;
    let candidate_count = candidates.len();
    let feasible_count = candidates.iter().filter(|c| c.feasible).count();
    log::debug!("chasing: {feasible_count}/{candidate_count} candidates certified");
    let best = candidates
        .into_iter()
        .filter_map(|c| c.costs.map(|k| (c, k)))
        .fold(None, |best: Option<(ChaseCandidate, CostBreakdown)>, (c, k)| match best {
            Some((b, bk)) if bk.total <= k.total => Some((b, bk)),
            _ => Some((c, k)),
        })
        .ok_or(ChaseError::NoFeasibleCandidate)?;
    let (cand, costs) = best;
    let x_q = &prediction.trajectory;
    let min_clearance = obstacles
        .iter()
        .map(|o| {
            (0..cfg.n_eval)
                .map(|i| exact_clearance(&cand.trajectory, x_q, o, cfg.horizon * i as f64 / (cfg.n_eval - 1) as f64).value)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(ChasePlan { trajectory: cand.trajectory, costs, index: cand.index, candidate_count, feasible_count, min_clearance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn skeleton_ring_example() {
        let cfg = ChaserConfig { radii: Some(vec![2.0]), azimuth_count: 4, ..Default::default() };
        let pred = Trajectory3::constant(Vec3::zeros(), 5.0);
        let sk = sample_view_skeletons(&pred, &cfg);
        assert_eq!(sk.len(), 3);
        let want = [v(2.0, 0.0, 0.0), v(0.0, 2.0, 0.0), v(-2.0, 0.0, 0.0), v(0.0, -2.0, 0.0)];
        for (a, b) in sk[0].iter().zip(want) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn skeleton_distances_match_radii() {
        for full_sphere in [false, true] {
            let cfg = ChaserConfig { radii: Some(vec![1.0, 2.0]), azimuth_count: 6, full_sphere, ..Default::default() };
            assert_eq!(cfg.skeletons_per_step(), 12);
            let pred = Trajectory3::linear(v(1.0, -1.0, 0.5), v(0.3, 0.2, 0.0), 5.0);
            for (n, step) in sample_view_skeletons(&pred, &cfg).iter().enumerate() {
                let c = pred.eval(5.0 * (n + 1) as f64 / 3.0);
                assert_eq!(step.len(), 12);
                for (k, p) in step.iter().enumerate() {
                    let r = if k < 6 { 1.0 } else { 2.0 };
                    assert!(((p - c).norm() - r).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn kkt_shape_and_symmetry() {
        let sys = assemble_chasing_kkt(&ChaserConfig::default()).unwrap();
        assert_eq!(sys.kkt().shape(), (10, 10));
        assert!((sys.kkt() - sys.kkt().transpose()).amax() <= 1e-12);
    }

    #[test]
    fn kkt_rejects_low_degree() {
        for degree in [1, 2, 3] {
            let cfg = ChaserConfig { degree, ..Default::default() };
            assert!(matches!(assemble_chasing_kkt(&cfg), Err(ChaseError::SingularKKT(_))));
        }
        let cfg = ChaserConfig { n_steps: 1, ..Default::default() };
        assert!(matches!(assemble_chasing_kkt(&cfg), Err(ChaseError::SingularKKT(_))));
    }

    #[test]
    fn homogeneous_kkt_gives_zero() {
        let cfg = ChaserConfig::default();
        let sys = assemble_chasing_kkt(&cfg).unwrap();
        let out = batch_solve_chasing(&sys, &[vec![Vec3::zeros(); 3]], &InitialState::at_rest(Vec3::zeros()));
        for p in out[0].axes() {
            assert!(p.max_abs_coeff() < 1e-14);
        }
    }

    #[test]
    fn constraint_residual() {
        let cfg = ChaserConfig::default();
        let sys = assemble_chasing_kkt(&cfg).unwrap();
        let init = InitialState { derivatives: [v(1.0, -2.0, 0.5), v(0.3, 0.1, -0.2), v(-0.5, 0.2, 0.0), v(0.1, 0.0, 0.3)] };
        let seqs: Vec<Vec<Vec3>> = (0..20).map(|i| (0..3).map(|n| v(i as f64, n as f64, -(i as f64))).collect()).collect();
        for tr in batch_solve_chasing(&sys, &seqs, &init) {
            for k in 0..4 {
                assert!((tr.eval_derivative(k, 0.0) - init.derivatives[k]).amax() <= 1e-8);
            }
        }
    }

    #[test]
    fn clearance_middle_branch() {
        let c = segment_clearance(&Vec3::zeros(), &v(4.0, 0.0, 0.0), &v(2.0, 2.0, 0.0), &Mat3::identity());
        assert!(!c.degenerate);
        assert!((c.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn clearance_first_and_last_branch() {
        let c = segment_clearance(&Vec3::zeros(), &v(4.0, 0.0, 0.0), &v(-5.0, 0.0, 0.0), &Mat3::identity());
        assert_eq!(c.value, 25.0);
        let c = segment_clearance(&Vec3::zeros(), &v(4.0, 0.0, 0.0), &v(7.0, 0.0, 0.0), &Mat3::identity());
        assert_eq!(c.value, 9.0);
    }

    #[test]
    fn clearance_degenerate_segment() {
        let p = v(1.0, 1.0, 1.0);
        let c = segment_clearance(&p, &p, &Vec3::zeros(), &Mat3::identity());
        assert!(c.degenerate);
        assert_eq!(c.value, 3.0);
    }

    #[test]
    fn clearance_matches_dense_s_grid() {
        let mut seed = 99u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 8.0 - 4.0
        };
        for _ in 0..50 {
            let (p, q, r) = (v(rnd(), rnd(), rnd()), v(rnd(), rnd(), rnd()), v(rnd(), rnd(), rnd()));
            let b = Mat3::new(rnd(), rnd(), rnd(), rnd(), rnd(), rnd(), rnd(), rnd(), rnd()) * 0.25;
            let shape = b * b.transpose() + Mat3::identity() * 0.2;
            let exact = segment_clearance(&p, &q, &r, &shape).value;
            let grid = (0..=100_000)
                .map(|i| {
                    let s = i as f64 / 100_000.0;
                    mahalanobis_sq(&(p * (1.0 - s) + q * s), &r, &shape)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(exact <= grid + 1e-9);
            assert!(grid - exact <= 1e-6 * grid.max(1.0));
        }
    }

    fn static_case(center: Vec3) -> (Trajectory3, Trajectory3, EllipsoidObstacle) {
        (
            Trajectory3::constant(Vec3::zeros(), 5.0),
            Trajectory3::constant(v(4.0, 0.0, 0.0), 5.0),
            EllipsoidObstacle::sphere(center, 1.0, "o").unwrap(),
        )
    }

    #[test]
    fn feasible_static_example() {
        let (p, q, o) = static_case(v(2.0, 5.0, 0.0));
        let (dp, dq, ds) = lower_bound_polys(&p, &q, &o);
        assert_eq!((dp.eval(0.0), dq.eval(0.0), ds.eval(0.0)), (29.0, 29.0, 21.0));
        assert!(chasing_feasible(&p, &q, &[o], 5.0, Certification::default()));
    }

    #[test]
    fn conservative_rejection_example() {
        let (p, q, o) = static_case(v(2.0, 2.0, 0.0));
        let (_, _, ds) = lower_bound_polys(&p, &q, &o);
        assert_eq!(ds.eval(0.0), 0.0);
        assert!(!chasing_feasible(&p, &q, std::slice::from_ref(&o), 5.0, Certification::default()));
        assert!((exact_clearance(&p, &q, &o, 1.0).value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_obstacle_rejected_and_truly_occludes() {
        let p = Trajectory3::constant(Vec3::zeros(), 5.0);
        let q = Trajectory3::constant(v(6.0, 0.0, 0.0), 5.0);
        // sweeps across the segment at x = 3 around t = 2.5
        let center = Trajectory3::linear(v(3.0, 5.0, 0.0), v(0.0, -2.0, 0.0), 5.0);
        let o = EllipsoidObstacle::new(Mat3::identity(), center, "mover").unwrap();
        assert!(!chasing_feasible(&p, &q, std::slice::from_ref(&o), 5.0, Certification::default()));
        let dip = (0..4096).map(|i| exact_clearance(&p, &q, &o, 5.0 * i as f64 / 4095.0).value).fold(f64::INFINITY, f64::min);
        assert!(dip < 1.0);
    }

    #[test]
    fn shaping_endpoints() {
        let cfg = ChaserConfig::default();
        assert_eq!(shaping_cost(0.0, &cfg), cfg.c_max);
        assert_eq!(shaping_cost(cfg.l_s, &cfg), cfg.c_min);
        assert!((shaping_cost(cfg.l_s - 1e-9, &cfg) - cfg.c_min).abs() < 1e-9);
        assert_eq!(shaping_cost(cfg.l_s + 5.0, &cfg), cfg.c_min);
    }

    #[test]
    fn cost_of_ideal_hover() {
        let cfg = ChaserConfig::default();
        let p = Trajectory3::constant(v(cfg.l_des, 0.0, 0.0), 5.0);
        let q = Trajectory3::constant(Vec3::zeros(), 5.0);
        let c = chasing_cost(&p, &q, &[], &cfg);
        assert!(c.j1.abs() < 1e-15 && c.j2 == 0.0 && c.j3.abs() < 1e-20 && c.j4 == 0.0);
    }

    #[test]
    fn far_obstacles_cost_flat() {
        let cfg = ChaserConfig::default();
        let p = Trajectory3::constant(v(3.0, 0.0, 0.0), 5.0);
        let q = Trajectory3::constant(Vec3::zeros(), 5.0);
        let obs = vec![
            EllipsoidObstacle::sphere(v(50.0, 0.0, 0.0), 1.0, "a").unwrap(),
            EllipsoidObstacle::sphere(v(-50.0, 9.0, 0.0), 2.0, "b").unwrap(),
        ];
        let c = chasing_cost(&p, &q, &obs, &cfg);
        assert!((c.j2 - 2.0 * cfg.c_min * cfg.horizon).abs() < 1e-12);
    }

    #[test]
    fn yaw_singularity_is_flagged_and_capped() {
        let cfg = ChaserConfig::default();
        let p = Trajectory3::constant(v(1.0, 1.0, 0.0), 5.0);
        let q = Trajectory3::constant(v(1.0, 1.0, 3.0), 5.0);
        let c = chasing_cost(&p, &q, &[], &cfg);
        assert!(c.yaw_singular);
        assert!((c.j4 - cfg.yaw_rate_cap.powi(2) * cfg.horizon).abs() < 1e-9);
    }

    #[test]
    fn candidate_count_matches_sampling() {
        let cfg = ChaserConfig::default();
        assert_eq!(cfg.skeletons_per_step(), 12);
        assert_eq!(cfg.candidate_count(), Some(1728));
    }

    #[test]
    fn degree_convention_enforced() {
        let cfg = ChaserConfig::default();
        let high = Trajectory3::new(Polynomial::monomial(6, 1e-6), Polynomial::zero(), Polynomial::zero(), 5.0);
        let err = plan(&PredictionCandidate::external(high), &[], &InitialState::at_rest(Vec3::zeros()), &cfg);
        assert!(matches!(err, Err(ChaseError::DegreeConvention { .. })));
    }
}
