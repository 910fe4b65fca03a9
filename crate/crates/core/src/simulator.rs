//! Receding-horizon closed loop with kinematic playback.
//!
//! Each step the loop senses obstacles, decides whether to replan, executes
//! the active plan exactly, records the true world state and takes a noisy
//! target observation when one is due. Metrics are computed afterwards from
//! the executed timeline against the true target and obstacle motion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaser::{self, chasing_feasible, segment_clearance, yaw, Certification, ChaseError, ChaserConfig, InitialState};
use crate::predictor::{self, PredictError, PredictorConfig};
use crate::worldmodel::{mahalanobis_sq, EllipsoidObstacle, Mat3, TargetObservation, Trajectory3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error(transparent)]
    Predictor(#[from] PredictError),
    #[error(transparent)]
    Chaser(#[from] ChaseError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Fixed loop step in seconds.
    pub dt_sim: f64,
    /// Distance between prediction and a fresh observation that forces a replan.
    pub pred_err_threshold: f64,
    /// Meters by which known obstacles are grown before planning.
    pub planning_inflation: f64,
    /// Replan once less than this much certified horizon remains.
    pub replan_reserve: f64,
    /// Time to brake to a stop along the last plan when replanning fails.
    pub brake_time: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt_sim: 0.02, pred_err_threshold: 0.3, planning_inflation: 0.0, replan_reserve: 1.0, brake_time: 2.0 }
    }
}

/// Piecewise-linear target motion through timed waypoints, extended
/// linearly before the first and held after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScript {
    waypoints: Vec<(f64, Vec3)>,
}

impl TargetScript {
    pub fn new(waypoints: Vec<(f64, Vec3)>) -> Result<Self, SimError> {
        if waypoints.is_empty() {
            return Err(SimError::ScenarioInvalid("target needs at least one waypoint".into()));
        }
        if waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(SimError::ScenarioInvalid("target waypoint times must increase".into()));
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[(f64, Vec3)] {
        &self.waypoints
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints[0].0
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].0
    }

    pub fn position(&self, t: f64) -> Vec3 {
        let w = &self.waypoints;
        if w.len() == 1 {
            return w[0].1;
        }
        if t <= w[0].0 {
            let v = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            return w[0].1 + v * (t - w[0].0);
        }
        if t >= w[w.len() - 1].0 {
            return w[w.len() - 1].1;
        }
        let i = w.partition_point(|p| p.0 <= t) - 1;
        let (t0, p0) = w[i];
        let (t1, p1) = w[i + 1];
        p0 + (p1 - p0) * ((t - t0) / (t1 - t0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub period: f64,
    pub covariance: Mat3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub target: TargetScript,
    /// Centers in scenario (global) time.
    pub obstacles: Vec<EllipsoidObstacle>,
    pub observation: ObservationModel,
    /// Obstacles farther than this from the chaser stay unknown.
    pub sensing_radius: Option<f64>,
    pub init: InitialState,
    pub predictor: PredictorConfig,
    pub chaser: ChaserConfig,
    pub sim: SimConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ScenarioInvalid(m));
        if !(self.duration > 0.0) {
            return bad("duration must be positive".into());
        }
        if self.target.start_time() > 0.0 || self.target.end_time() < self.duration {
            return bad(format!("target script must cover [0, {}]", self.duration));
        }
        if !(self.observation.period > 0.0) {
            return bad("observation period must be positive".into());
        }
        if !crate::worldmodel::is_spd(&self.observation.covariance) {
            return bad("observation covariance is not SPD".into());
        }
        if !(self.sim.dt_sim > 0.0) || !(self.sim.brake_time > 0.0) || !(self.sim.replan_reserve >= 0.0) {
            return bad("dt_sim and brake_time must be positive, replan_reserve nonnegative".into());
        }
        if (self.predictor.horizon - self.chaser.horizon).abs() > 1e-12 {
            return bad("predictor and chaser must share the horizon".into());
        }
        if self.sim.replan_reserve >= self.chaser.horizon {
            return bad("replan_reserve must be shorter than the horizon".into());
        }
        self.predictor.validate()?;
        self.chaser.validate()?;
        if self.predictor.degree > self.chaser.degree {
            return bad("prediction degree exceeds chaser degree".into());
        }
        for o in &self.obstacles {
            if o.center().degree() > self.chaser.degree {
                return bad(format!("obstacle `{}` center degree exceeds chaser degree", o.label()));
            }
        }
        if let Some(r) = self.sensing_radius {
            if !(r > 0.0) {
                return bad("sensing_radius must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanCause {
    Init,
    PredictionError,
    Infeasible,
    Horizon,
    FallbackRecovery,
}

impl ReplanCause {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Init => "init",
            Self::PredictionError => "prediction_error",
            Self::Infeasible => "infeasible",
            Self::Horizon => "horizon",
            Self::FallbackRecovery => "fallback_recovery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Replan,
    ReplanFailed,
    Fallback,
    ObstacleSensed,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Replan => "replan",
            Self::ReplanFailed => "replan_failed",
            Self::Fallback => "fallback",
            Self::ObstacleSensed => "obstacle_sensed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub cause: Option<ReplanCause>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineSample {
    pub t: f64,
    pub chaser: Vec3,
    pub chaser_acc: Vec3,
    pub target: Vec3,
    pub yaw: f64,
    /// Exact segment clearance to each true obstacle.
    pub clearance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub safe_ratio: f64,
    pub visible_ratio: f64,
    pub accel_cost: f64,
    pub distance_tracking_ratio: f64,
    /// Chaser path length over target path length; `None` for a still target.
    pub path_length_ratio: Option<f64>,
    pub min_safety_clearance: Option<f64>,
    pub min_visibility_clearance: Option<f64>,
    pub replans: usize,
    pub replan_failures: usize,
    pub fallbacks: usize,
    pub candidate_count: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TimingStats {
    pub replans: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
}

impl TimingStats {
    pub fn from_samples(ms: &[f64]) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        let mut s = ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        Self { replans: n, mean_ms: s.iter().sum::<f64>() / n as f64, median_ms: median, max_ms: s[n - 1] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub timeline: Vec<TimelineSample>,
    pub events: Vec<Event>,
    pub metrics: Metrics,
    pub timing: TimingStats,
    /// Ended without a certified plan (never planned, or still braking).
    pub unrecovered: bool,
}

/// Wall-clock milliseconds; unavailable on bare wasm, where it reads zero.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        return Self(std::time::Instant::now());
        #[cfg(target_arch = "wasm32")]
        return Self();
    }

    fn elapsed_ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64() * 1e3;
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

struct ActivePlan {
    trajectory: Trajectory3,
    prediction: Trajectory3,
    start: f64,
}

/// Braking along a previous plan: plan-local time `σ(t)` decelerates
/// linearly from rate 1 to 0 over `duration`.
struct Braking {
    trajectory: Trajectory3,
    sigma0: f64,
    start: f64,
    duration: f64,
}

impl Braking {
    fn state(&self, t: f64) -> InitialState {
        let e = (t - self.start).clamp(0.0, self.duration);
        let (rate, rate_dot) = if self.duration > 0.0 && t - self.start < self.duration {
            (1.0 - e / self.duration, -1.0 / self.duration)
        } else {
            (0.0, 0.0)
        };
        let sigma = self.sigma0 + if self.duration > 0.0 { e - e * e / (2.0 * self.duration) } else { 0.0 };
        let d = |k| self.trajectory.eval_derivative(k, sigma);
        let (d1, d2, d3) = (d(1), d(2), d(3));
        InitialState {
            derivatives: [
                d(0),
                d1 * rate,
                d2 * rate * rate + d1 * rate_dot,
                d3 * rate.powi(3) + d2 * (3.0 * rate * rate_dot),
            ],
        }
    }
}

enum Motion {
    Plan(ActivePlan),
    Brake(Braking),
    Hold(Vec3),
}

fn noise_sample(rng: &mut ChaCha8Rng, chol_l: &Mat3) -> Vec3 {
    let z = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
    chol_l * z
}

/// Runs the closed loop; identical scenario and seed give identical reports
/// apart from wall-clock timing.
pub fn run(scenario: &Scenario, seed: u64) -> Result<SimReport, SimError> {
    scenario.validate()?;
    let sc = scenario;
    let horizon = sc.chaser.horizon;
    let dt = sc.sim.dt_sim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chol_l = sc.observation.covariance.cholesky().expect("validated covariance").l();

    let mut observations: Vec<(f64, Vec3)> = Vec::new();
    for k in (1..=sc.predictor.n_obs).rev() {
        let t = -(k as f64) * sc.observation.period;
        observations.push((t, sc.target.position(t) + noise_sample(&mut rng, &chol_l)));
    }
    let mut next_obs = 0.0;

    let mut known: Vec<bool> = vec![false; sc.obstacles.len()];
    let mut motion = Motion::Hold(sc.init.position());
    let mut state = sc.init;
    let mut ever_planned = false;
    let mut pending_pred_err = false;
    let mut events = Vec::new();
    let mut timeline = Vec::new();
    let mut replan_ms = Vec::new();

    let steps = (sc.duration / dt).round() as usize;
    for step in 0..=steps {
        let t = step as f64 * dt;

        // Executed state at t under the current motion.
        state = match &motion {
            Motion::Plan(p) => InitialState::sample(&p.trajectory, t - p.start),
            Motion::Brake(b) => b.state(t),
            Motion::Hold(x) => if ever_planned { InitialState::at_rest(*x) } else { state },
        };

        let mut newly_known = false;
        for (j, o) in sc.obstacles.iter().enumerate() {
            if !known[j] && sc.sensing_radius.is_none_or(|r| (o.center_at(t) - state.position()).norm() <= r) {
                known[j] = true;
                newly_known = true;
                if step > 0 {
                    events.push(Event { t, kind: EventKind::ObstacleSensed, cause: None, detail: o.label().to_string() });
                }
            }
        }
        let planning_obstacles = |t: f64, h: f64| -> Vec<EllipsoidObstacle> {
            sc.obstacles
                .iter()
                .zip(&known)
                .filter(|(_, k)| **k)
                .map(|(o, _)| o.inflated(sc.sim.planning_inflation).shifted(t, h))
                .collect()
        };

        let cause = match &motion {
            Motion::Hold(_) if !ever_planned => Some(ReplanCause::Init),
            Motion::Hold(_) | Motion::Brake(_) => Some(ReplanCause::FallbackRecovery),
            Motion::Plan(p) => {
                let elapsed = t - p.start;
                if pending_pred_err {
                    Some(ReplanCause::PredictionError)
                } else if newly_known && {
                    let rest = horizon - elapsed;
                    rest <= 0.0
                        || !chasing_feasible(
                            &p.trajectory.shifted(elapsed, rest),
                            &p.prediction.shifted(elapsed, rest),
                            &planning_obstacles(t, rest),
                            rest,
                            Certification { recheck_dq: true, margin: sc.chaser.clearance_margin },
                        )
                } {
                    Some(ReplanCause::Infeasible)
                } else if elapsed >= horizon - sc.sim.replan_reserve - 1e-9 {
                    Some(ReplanCause::Horizon)
                } else {
                    None
                }
            }
        };

        if let Some(cause) = cause {
            let window: Vec<TargetObservation> = observations[observations.len() - sc.predictor.n_obs..]
                .iter()
                .map(|(to, m)| TargetObservation::new(to - t, *m, sc.observation.covariance))
                .collect::<Result<_, _>>()
                .map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
            let obstacles = planning_obstacles(t, horizon);
            let watch = Stopwatch::start();
            let outcome = predictor::predict(&window, &obstacles, &sc.predictor)
                .map_err(SimError::from)
                .and_then(|pred| {
                    chaser::plan(&pred, &obstacles, &state, &sc.chaser)
                        .map(|plan| (pred, plan))
                        .map_err(SimError::from)
                });
            replan_ms.push(watch.elapsed_ms());
            match outcome {
                Ok((pred, plan)) => {
                    events.push(Event {
                        t,
                        kind: EventKind::Replan,
                        cause: Some(cause),
                        detail: format!("{} of {} candidates feasible", plan.feasible_count, plan.candidate_count),
                    });
                    motion = Motion::Plan(ActivePlan { trajectory: plan.trajectory, prediction: pred.trajectory, start: t });
                    ever_planned = true;
                    pending_pred_err = false;
                }
                Err(e) => {
                    log::info!("t = {t:.2}: replan ({}) failed: {e}", cause.as_str());
                    events.push(Event { t, kind: EventKind::ReplanFailed, cause: Some(cause), detail: e.to_string() });
                    if let Motion::Plan(p) = &motion {
                        let sigma0 = t - p.start;
                        let duration = sc.sim.brake_time.min(2.0 * (horizon - sigma0)).max(0.0);
                        events.push(Event {
                            t,
                            kind: EventKind::Fallback,
                            cause: None,
                            detail: format!("braking over {duration:.2} s"),
                        });
                        motion = Motion::Brake(Braking { trajectory: p.trajectory.clone(), sigma0, start: t, duration });
                    }
                }
            }
        }
        if let Motion::Brake(b) = &motion {
            if t - b.start >= b.duration {
                motion = Motion::Hold(b.state(t).position());
            }
        }

        let target = sc.target.position(t);
        let look_at = match &motion {
            Motion::Plan(p) => p.prediction.eval(t - p.start),
            _ => target,
        };
        timeline.push(TimelineSample {
            t,
            chaser: state.position(),
            chaser_acc: state.derivatives[2],
            target,
            yaw: yaw(&state.position(), &look_at),
            clearance: sc
                .obstacles
                .iter()
                .map(|o| segment_clearance(&state.position(), &target, &o.center_at(t), o.shape()).value)
                .collect(),
        });

        if t >= next_obs - 1e-9 {
            let m = target + noise_sample(&mut rng, &chol_l);
            if let Motion::Plan(p) = &motion {
                if (p.prediction.eval(t - p.start) - m).norm() > sc.sim.pred_err_threshold {
                    pending_pred_err = true;
                }
            }
            observations.push((t, m));
            next_obs += sc.observation.period;
        }
    }

    let unrecovered = !matches!(motion, Motion::Plan(_));
    let mut metrics = compute_metrics(&timeline, sc);
    metrics.replans = events.iter().filter(|e| e.kind == EventKind::Replan).count();
    metrics.replan_failures = events.iter().filter(|e| e.kind == EventKind::ReplanFailed).count();
    metrics.fallbacks = events.iter().filter(|e| e.kind == EventKind::Fallback).count();
    Ok(SimReport { timeline, events, metrics, timing: TimingStats::from_samples(&replan_ms), unrecovered })
}

/// Safety, visibility, smoothness and tracking measures of an executed
/// timeline against the true obstacles and target. Event counters are left
/// at zero.
pub fn compute_metrics(timeline: &[TimelineSample], scenario: &Scenario) -> Metrics {
    let n = timeline.len();
    let mut safe = 0usize;
    let mut visible = 0usize;
    let mut min_safe = None::<f64>;
    let mut min_vis = None::<f64>;
    let mut dist_sum = 0.0;
    for s in timeline {
        let mut all_safe = true;
        let mut all_visible = true;
        for o in &scenario.obstacles {
            let r = o.center_at(s.t);
            let ds = mahalanobis_sq(&s.chaser, &r, o.shape());
            let dv = segment_clearance(&s.chaser, &s.target, &r, o.shape()).value;
            all_safe &= ds > 1.0;
            all_visible &= dv > 1.0;
            min_safe = Some(min_safe.map_or(ds, |m| m.min(ds)));
            min_vis = Some(min_vis.map_or(dv, |m| m.min(dv)));
        }
        safe += usize::from(all_safe);
        visible += usize::from(all_visible);
        dist_sum += (s.chaser - s.target).norm();
    }
    let mut accel_cost = 0.0;
    let mut chaser_len = 0.0;
    let mut target_len = 0.0;
    for w in timeline.windows(2) {
        let h = w[1].t - w[0].t;
        accel_cost += 0.5 * h * (w[0].chaser_acc.norm_squared() + w[1].chaser_acc.norm_squared());
        chaser_len += (w[1].chaser - w[0].chaser).norm();
        target_len += (w[1].target - w[0].target).norm();
    }
    let ratio = |k: usize| if n == 0 { 1.0 } else { k as f64 / n as f64 };
    Metrics {
        safe_ratio: ratio(safe),
        visible_ratio: ratio(visible),
        accel_cost,
        distance_tracking_ratio: if n == 0 { 0.0 } else { dist_sum / n as f64 / scenario.chaser.l_des },
        path_length_ratio: (target_len > 0.0).then(|| chaser_len / target_len),
        min_safety_clearance: min_safe,
        min_visibility_clearance: min_vis,
        replans: 0,
        replan_failures: 0,
        fallbacks: 0,
        candidate_count: scenario.chaser.candidate_count().unwrap_or(0),
        samples: n,
    }
}
