//! Geometric vocabulary shared by prediction and chasing: polynomial 3-D
//! trajectories, ellipsoidal obstacles and Gaussian target observations.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::polyalg::Polynomial;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("shape matrix of obstacle `{0}` is not symmetric positive definite")]
    NonSPDShape(String),
    #[error("observation covariance at t = {0} is not symmetric positive definite")]
    NonSPDCovariance(f64),
    #[error("observation timestamp {0} must be negative")]
    NonNegativeTimestamp(f64),
    #[error("waypoint fit needs at least one waypoint")]
    NoWaypoints,
    #[error("waypoint times must be strictly increasing")]
    UnorderedWaypoints,
}

/// Symmetric (to 1e-9 relative) and Cholesky-factorizable.
pub fn is_spd(m: &Mat3) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    m.iter().all(|v| v.is_finite()) && asym <= 1e-9 * scale && m.cholesky().is_some()
}

/// `(x − c)ᵀ R (x − c)`.
pub fn mahalanobis_sq(x: &Vec3, c: &Vec3, shape: &Mat3) -> f64 {
    let d = x - c;
    d.dot(&(shape * d))
}

/// Three axis polynomials over a shared horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory3 {
    axes: [Polynomial; 3],
    horizon: f64,
}

impl Trajectory3 {
    pub fn new(x: Polynomial, y: Polynomial, z: Polynomial, horizon: f64) -> Self {
        Self { axes: [x, y, z], horizon }
    }

    pub fn from_axes(axes: [Polynomial; 3], horizon: f64) -> Self {
        Self { axes, horizon }
    }

    /// Stationary point.
    pub fn constant(p: Vec3, horizon: f64) -> Self {
        Self::new(
            Polynomial::constant(p.x),
            Polynomial::constant(p.y),
            Polynomial::constant(p.z),
            horizon,
        )
    }

    /// `p0 + v·t`.
    pub fn linear(p0: Vec3, v: Vec3, horizon: f64) -> Self {
        Self::new(
            Polynomial::new(vec![p0.x, v.x]),
            Polynomial::new(vec![p0.y, v.y]),
            Polynomial::new(vec![p0.z, v.z]),
            horizon,
        )
    }

    pub fn axis(&self, i: usize) -> &Polynomial {
        &self.axes[i]
    }

    pub fn axes(&self) -> &[Polynomial; 3] {
        &self.axes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn degree(&self) -> usize {
        self.axes.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        Vec3::new(self.axes[0].eval(t), self.axes[1].eval(t), self.axes[2].eval(t))
    }

    pub fn derivative(&self, k: usize) -> Self {
        Self {
            axes: self.axes.clone().map(|p| p.differentiate(k)),
            horizon: self.horizon,
        }
    }

    /// k-th derivative evaluated at `t`.
    pub fn eval_derivative(&self, k: usize, t: f64) -> Vec3 {
        let d = |p: &Polynomial| p.differentiate(k).eval(t);
        Vec3::new(d(&self.axes[0]), d(&self.axes[1]), d(&self.axes[2]))
    }

    /// Re-expresses the trajectory in a clock that starts at `t0`.
    pub fn shifted(&self, t0: f64, horizon: f64) -> Self {
        Self {
            axes: self.axes.clone().map(|p| p.shift(t0)),
            horizon,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn sub(&self, other: &Trajectory3) -> Self {
        Self {
            axes: [
                &self.axes[0] - &other.axes[0],
                &self.axes[1] - &other.axes[1],
                &self.axes[2] - &other.axes[2],
            ],
            horizon: self.horizon,
        }
    }

    /// Least-squares polynomial fit of `degree` through `(t, point)` samples.
    ///
    /// The degree is capped at `waypoints.len() − 1`.
    pub fn fit_waypoints(
        waypoints: &[(f64, Vec3)],
        degree: usize,
        horizon: f64,
    ) -> Result<Self, WorldError> {
        if waypoints.is_empty() {
            return Err(WorldError::NoWaypoints);
        }
        if waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(WorldError::UnorderedWaypoints);
        }
        let degree = degree.min(waypoints.len() - 1);
        // Fit in normalized time for conditioning, then map back.
        let tscale = waypoints.iter().map(|w| w.0.abs()).fold(1.0_f64, f64::max);
        let n = waypoints.len();
        let vander = DMatrix::from_fn(n, degree + 1, |r, c| (waypoints[r].0 / tscale).powi(c as i32));
        let svd = vander.svd(true, true);
        let mut axes: [Polynomial; 3] = [Polynomial::zero(), Polynomial::zero(), Polynomial::zero()];
        for (a, axis) in axes.iter_mut().enumerate() {
            let rhs = DVector::from_iterator(n, waypoints.iter().map(|w| w.1[a]));
            let sol = svd.solve(&rhs, 1e-12).expect("SVD was computed with U and V");
            *axis = Polynomial::new(sol.iter().copied().collect()).compose_scale(1.0 / tscale);
        }
        Ok(Self { axes, horizon })
    }
}

/// Component-wise Horner evaluation.
pub fn eval_trajectory(tr: &Trajectory3, t: f64) -> Vec3 {
    tr.eval(t)
}

/// The scalar polynomial `t ↦ u(t)ᵀ R v(t)`.
pub fn pairwise_form_poly(u: &Trajectory3, v: &Trajectory3, shape: &Mat3) -> Polynomial {
    let mut acc = Polynomial::zero();
    for i in 0..3 {
        // (R v)_i = Σ_j R_ij v_j
        let mut rv = Polynomial::zero();
        for j in 0..3 {
            if shape[(i, j)] != 0.0 {
                rv = &rv + &v.axis(j).scale(shape[(i, j)]);
            }
        }
        acc = &acc + &(u.axis(i) * &rv);
    }
    acc
}

/// Ellipsoid `{x : ‖x − center(t)‖²_R ≤ 1}` with constant shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidObstacle {
    shape: Mat3,
    center: Trajectory3,
    label: String,
}

impl EllipsoidObstacle {
    pub fn new(shape: Mat3, center: Trajectory3, label: impl Into<String>) -> Result<Self, WorldError> {
        let label = label.into();
        if !is_spd(&shape) {
            return Err(WorldError::NonSPDShape(label));
        }
        Ok(Self { shape, center, label })
    }

    /// Sphere of `radius` around a fixed point.
    pub fn sphere(center: Vec3, radius: f64, label: impl Into<String>) -> Result<Self, WorldError> {
        let r = 1.0 / (radius * radius);
        Self::new(Mat3::from_diagonal_element(r), Trajectory3::constant(center, f64::INFINITY), label)
    }

    pub fn shape(&self) -> &Mat3 {
        &self.shape
    }

    pub fn center(&self) -> &Trajectory3 {
        &self.center
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn center_at(&self, t: f64) -> Vec3 {
        self.center.eval(t)
    }

    pub fn clearance_sq(&self, x: &Vec3, t: f64) -> f64 {
        mahalanobis_sq(x, &self.center.eval(t), &self.shape)
    }

    pub fn contains(&self, x: &Vec3, t: f64) -> bool {
        self.clearance_sq(x, t) <= 1.0
    }

    /// Shortest semi-axis in meters.
    pub fn min_semi_axis(&self) -> f64 {
        let lmax = self.shape.symmetric_eigenvalues().max();
        1.0 / lmax.sqrt()
    }

    /// Uniformly scaled copy containing every point within `margin` meters
    /// of the original.
    pub fn inflated(&self, margin: f64) -> Self {
        if margin <= 0.0 {
            return self.clone();
        }
        let amin = self.min_semi_axis();
        let k = 1.0 + margin / amin;
        Self {
            shape: self.shape / (k * k),
            center: self.center.clone(),
            label: self.label.clone(),
        }
    }

    /// Same obstacle with its center trajectory expressed in a clock
    /// starting at global time `t0`.
    pub fn shifted(&self, t0: f64, horizon: f64) -> Self {
        Self {
            shape: self.shape,
            center: self.center.shifted(t0, horizon),
            label: self.label.clone(),
        }
    }
}

/// Gaussian position estimate `N(mean, covariance)` at a past time `t < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetObservation {
    t: f64,
    mean: Vec3,
    covariance: Mat3,
}

impl TargetObservation {
    pub fn new(t: f64, mean: Vec3, covariance: Mat3) -> Result<Self, WorldError> {
        if !(t < 0.0) {
            return Err(WorldError::NonNegativeTimestamp(t));
        }
        if !is_spd(&covariance) {
            return Err(WorldError::NonSPDCovariance(t));
        }
        Ok(Self { t, mean, covariance })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn mean(&self) -> &Vec3 {
        &self.mean
    }

    pub fn covariance(&self) -> &Mat3 {
        &self.covariance
    }
}
