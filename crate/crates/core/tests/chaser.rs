use chase_core::chaser::{
    assemble_chasing_kkt, batch_solve_chasing, chasing_cost, chasing_feasible, exact_clearance, lower_bound_clearance, plan,
    segment_clearance, Certification, ChaserConfig, InitialState,
};
use chase_core::predictor::PredictionCandidate;
use chase_core::worldmodel::{EllipsoidObstacle, Mat3, Trajectory3, Vec3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn shape() -> impl Strategy<Value = Mat3> {
    (vec3(std::f64::consts::PI), 0.3..2.0f64, 0.3..2.0f64, 0.3..2.0f64).prop_map(|(axis, a, b, c)| {
        let rot = nalgebra::Rotation3::from_scaled_axis(axis).into_inner();
        let m = rot * Mat3::from_diagonal(&Vec3::new(1.0 / (a * a), 1.0 / (b * b), 1.0 / (c * c))) * rot.transpose();
        (m + m.transpose()) * 0.5
    })
}

fn quadratic(p: Vec3, v: Vec3, a: Vec3, horizon: f64) -> Trajectory3 {
    let axis = |i: usize| chase_core::polyalg::Polynomial::new(vec![p[i], v[i], 0.5 * a[i]]);
    Trajectory3::new(axis(0), axis(1), axis(2), horizon)
}

fn scene_obstacles(offset: Vec3) -> Vec<EllipsoidObstacle> {
    vec![
        EllipsoidObstacle::sphere(Vec3::new(4.0, 2.5, 1.0) + offset, 0.8, "a").unwrap(),
        EllipsoidObstacle::new(
            Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 0.5)),
            Trajectory3::linear(Vec3::new(1.0, -3.5, 1.0) + offset, Vec3::new(0.3, 0.0, 0.0), 5.0),
            "b",
        )
        .unwrap(),
    ]
}

fn scene(offset: Vec3) -> (PredictionCandidate, Vec<EllipsoidObstacle>, InitialState) {
    let pred = Trajectory3::linear(Vec3::new(0.0, 0.0, 1.0) + offset, Vec3::new(1.2, 0.2, 0.0), 5.0);
    let init = InitialState {
        derivatives: [Vec3::new(-3.0, 0.0, 1.0) + offset, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0), Vec3::zeros()],
    };
    (PredictionCandidate::external(pred), scene_obstacles(offset), init)
}

proptest! {
    #[test]
    fn segment_clearance_is_the_segment_minimum(p in vec3(4.0), q in vec3(4.0), r in vec3(4.0), m in shape()) {
        let exact = segment_clearance(&p, &q, &r, &m).value;
        let grid = (0..=20_000)
            .map(|i| {
                let s = i as f64 / 20_000.0;
                let x = p * (1.0 - s) + q * s - r;
                x.dot(&(m * x))
            })
            .fold(f64::INFINITY, f64::min);
        prop_assert!(exact <= grid + 1e-9 * grid.max(1.0));
        prop_assert!(grid - exact <= 1e-6 * grid.max(1.0), "exact {} grid {}", exact, grid);
    }

    #[test]
    fn lower_bound_never_exceeds_exact(
        p0 in vec3(4.0), pv in vec3(1.0), q0 in vec3(4.0), qv in vec3(1.0), r0 in vec3(4.0), rv in vec3(0.5),
        m in shape(), t in 0.0..5.0f64,
    ) {
        let xp = quadratic(p0, pv, Vec3::zeros(), 5.0);
        let xq = quadratic(q0, qv, Vec3::zeros(), 5.0);
        let o = EllipsoidObstacle::new(m, Trajectory3::linear(r0, rv, 5.0), "o").unwrap();
        let low = lower_bound_clearance(&xp, &xq, &o, t);
        let d = exact_clearance(&xp, &xq, &o, t).value;
        prop_assert!(low <= d + 1e-9 * d.abs().max(1.0), "d_low {} > d {}", low, d);
    }

    #[test]
    fn certified_pairs_stay_clear(
        p0 in vec3(4.0), pv in vec3(1.0), pa in vec3(0.3), q0 in vec3(4.0), qv in vec3(1.0),
        r0 in vec3(4.0), rv in vec3(0.5), m in shape(), margin in 0.0..0.5f64,
    ) {
        let xp = quadratic(p0, pv, pa, 5.0);
        let xq = quadratic(q0, qv, Vec3::zeros(), 5.0);
        let o = EllipsoidObstacle::new(m, Trajectory3::linear(r0, rv, 5.0), "o").unwrap();
        let opts = Certification { recheck_dq: true, margin };
        if chasing_feasible(&xp, &xq, std::slice::from_ref(&o), 5.0, opts) {
            for i in 0..=2000 {
                let t = 5.0 * i as f64 / 2000.0;
                prop_assert!(exact_clearance(&xp, &xq, &o, t).value > 1.0 + margin);
            }
        }
    }
}

#[test]
fn plan_is_translation_invariant() {
    let cfg = ChaserConfig::default();
    let (pred, obs, init) = scene(Vec3::zeros());
    let base = plan(&pred, &obs, &init, &cfg).unwrap();
    let offset = Vec3::new(7.5, -3.0, 2.0);
    let (pred2, obs2, init2) = scene(offset);
    let moved = plan(&pred2, &obs2, &init2, &cfg).unwrap();
    assert_eq!(base.index, moved.index);
    assert_eq!(base.feasible_count, moved.feasible_count);
    for (a, b) in [(base.costs.j1, moved.costs.j1), (base.costs.j2, moved.costs.j2), (base.costs.j3, moved.costs.j3), (base.costs.j4, moved.costs.j4)] {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
    }
    for t in [0.0, 1.7, 5.0] {
        assert!((moved.trajectory.eval(t) - base.trajectory.eval(t) - offset).norm() < 1e-8);
    }
}

#[test]
fn selection_is_invariant_under_weight_scaling() {
    let (pred, obs, init) = scene(Vec3::zeros());
    let cfg = ChaserConfig { weights: [1.0, 2.0, 0.5, 0.3], ..Default::default() };
    let base = plan(&pred, &obs, &init, &cfg).unwrap();
    for alpha in [1e-3, 0.5, 7.0, 250.0] {
        let scaled = ChaserConfig { weights: cfg.weights.map(|w| w * alpha), ..cfg.clone() };
        let p = plan(&pred, &obs, &init, &scaled).unwrap();
        assert_eq!(p.index, base.index, "alpha {alpha}");
        assert!((p.costs.total - alpha * base.costs.total).abs() <= 1e-9 * p.costs.total.abs().max(1.0));
    }
}

#[test]
fn skeleton_tracking_improves_with_weight() {
    let init = InitialState { derivatives: [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::zeros(), Vec3::zeros()] };
    let seq = vec![Vec3::new(2.0, 1.5, 0.0), Vec3::new(3.0, -1.0, 0.5), Vec3::new(6.0, 0.0, 0.0)];
    let mut last = f64::INFINITY;
    let mut first = None;
    for w in [0.01, 0.1, 1.0, 10.0, 100.0, 1e4] {
        let cfg = ChaserConfig { skeleton_weight: w, ..Default::default() };
        let sys = assemble_chasing_kkt(&cfg).unwrap();
        let tr = batch_solve_chasing(&sys, std::slice::from_ref(&seq), &init).remove(0);
        let residual: f64 = seq.iter().enumerate().map(|(n, u)| (tr.eval(5.0 * (n + 1) as f64 / 3.0) - u).norm_squared()).sum();
        assert!(residual <= last + 1e-12, "w {w}: {residual} > {last}");
        first.get_or_insert(residual);
        last = residual;
    }
    assert!(last < first.unwrap());
}

#[test]
fn chosen_plan_has_minimum_cost_among_certified() {
    let cfg = ChaserConfig::default();
    let (pred, obs, init) = scene(Vec3::zeros());
    let best = plan(&pred, &obs, &init, &cfg).unwrap();
    let all = chase_core::chaser::enumerate_chasing_candidates(&pred, &obs, &init, &cfg).unwrap();
    let min = all.iter().filter_map(|c| c.costs.as_ref().map(|k| k.total)).fold(f64::INFINITY, f64::min);
    assert_eq!(best.costs.total, min);
    let recomputed = chasing_cost(&best.trajectory, &pred.trajectory, &obs, &cfg);
    assert!((recomputed.total - best.costs.total).abs() <= 1e-9 * min.abs().max(1.0));
    assert!(best.min_clearance.iter().all(|&d| d > 1.0));
}
