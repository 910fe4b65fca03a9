//! JSON-in, JSON-out operations behind the wasm exports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use chase_core::chaser::{
    enumerate_chasing_candidates, exact_clearance, lower_bound_clearance, ChaseCandidate, ChaserConfig, InitialState,
};
use chase_core::predictor::PredictionCandidate;
use chase_core::scenario::parse_scenario_file;
use chase_core::simulator;
use chase_core::worldmodel::{EllipsoidObstacle, Mat3, Trajectory3, Vec3};
use nalgebra::Matrix2;
use serde::Deserialize;
use serde_json::{json, Value};

pub const EXAMPLE_SCENE: &str = r#"{
  "target": { "position": [0, 0, 1], "velocity": [1.2, 0.3, 0] },
  "chaser": { "position": [-3, -0.5, 1], "velocity": [1, 0, 0] },
  "obstacles": [
    { "label": "pillar", "center": [2.5, 2.2, 1], "radii": [0.6, 0.6, 3] },
    { "label": "drone", "center": [3, -2.5, 1], "velocity": [0, 0.6, 0], "radii": [0.5, 0.5, 0.5] }
  ]
}"#;

pub const EXAMPLE_SCENARIO: &str = include_str!("../../core/scenarios/bench/bench_2.json");

const PROFILE_SAMPLES: usize = 201;
const PATH_SAMPLES: usize = 16;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Body {
    position: [f64; 3],
    #[serde(default)]
    velocity: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneObstacle {
    #[serde(default)]
    label: Option<String>,
    center: [f64; 3],
    #[serde(default)]
    velocity: [f64; 3],
    /// Semi-axes along x, y, z.
    radii: [f64; 3],
}

/// Target and obstacles move at constant velocity over one planning horizon.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Scene {
    target: Body,
    chaser: Body,
    #[serde(default)]
    obstacles: Vec<SceneObstacle>,
    #[serde(default)]
    config: ChaserConfig,
}

struct Built {
    prediction: PredictionCandidate,
    obstacles: Vec<EllipsoidObstacle>,
    init: InitialState,
    cfg: ChaserConfig,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn build(text: &str) -> Result<Built, String> {
    let scene: Scene = serde_json::from_str(text).map_err(|e| format!("scene: {e}"))?;
    let cfg = scene.config;
    cfg.validate().map_err(|e| e.to_string())?;
    let h = cfg.horizon;
    let obstacles = scene
        .obstacles
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if o.radii.iter().any(|&r| !(r > 0.0)) {
                return Err(format!("obstacles[{i}].radii must be positive"));
            }
            let shape = Mat3::from_diagonal(&Vec3::new(1.0 / o.radii[0].powi(2), 1.0 / o.radii[1].powi(2), 1.0 / o.radii[2].powi(2)));
            let label = o.label.clone().unwrap_or_else(|| format!("obstacle_{i}"));
            EllipsoidObstacle::new(shape, Trajectory3::linear(v3(o.center), v3(o.velocity), h), label).map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let prediction = PredictionCandidate::external(Trajectory3::linear(v3(scene.target.position), v3(scene.target.velocity), h));
    let init = InitialState { derivatives: [v3(scene.chaser.position), v3(scene.chaser.velocity), Vec3::zeros(), Vec3::zeros()] };
    Ok(Built { prediction, obstacles, init, cfg })
}

fn samples(horizon: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| horizon * i as f64 / (n - 1) as f64)
}

fn xy_path(tr: &Trajectory3, n: usize) -> Vec<[f64; 2]> {
    samples(tr.horizon(), n).map(|t| tr.eval(t)).map(|p| [p.x, p.y]).collect()
}

/// Horizontal cross-section of `xᵀ M x = 1` through the center.
fn section(shape: &Mat3) -> Value {
    let m = Matrix2::new(shape[(0, 0)], shape[(0, 1)], shape[(1, 0)], shape[(1, 1)]);
    let eig = m.symmetric_eigen();
    let v = eig.eigenvectors.column(0);
    json!({
        "rx": 1.0 / eig.eigenvalues[0].sqrt(),
        "ry": 1.0 / eig.eigenvalues[1].sqrt(),
        "angle": v[1].atan2(v[0]),
    })
}

fn cheapest(candidates: &[ChaseCandidate]) -> Option<usize> {
    candidates
        .iter()
        .filter_map(|c| c.costs.map(|k| (c.index, k.total)))
        .fold(None, |best: Option<(usize, f64)>, (i, k)| match best {
            Some((_, b)) if b <= k => best,
            _ => Some((i, k)),
        })
        .map(|(i, _)| i)
}

fn obstacle_json(o: &EllipsoidObstacle) -> Value {
    json!({ "label": o.label(), "section": section(o.shape()), "path": xy_path(o.center(), PATH_SAMPLES) })
}

/// Every candidate's planar path with its certification result, plus the
/// cheapest certified one.
pub fn plan_scene(scene: &str) -> Result<String, String> {
    let b = build(scene)?;
    let candidates = enumerate_chasing_candidates(&b.prediction, &b.obstacles, &b.init, &b.cfg).map_err(|e| e.to_string())?;
    let chosen = cheapest(&candidates);
    let out = json!({
        "horizon": b.cfg.horizon,
        "candidate_count": candidates.len(),
        "feasible_count": candidates.iter().filter(|c| c.feasible).count(),
        "chosen": chosen,
        "costs": chosen.and_then(|i| candidates[i].costs),
        "prediction": xy_path(&b.prediction.trajectory, PATH_SAMPLES),
        "obstacles": b.obstacles.iter().map(obstacle_json).collect::<Vec<_>>(),
        "candidates": candidates
            .iter()
            .map(|c| json!({ "feasible": c.feasible, "path": xy_path(&c.trajectory, PATH_SAMPLES) }))
            .collect::<Vec<_>>(),
    });
    Ok(out.to_string())
}

/// `d(t)` and `d_low(t)` per obstacle along candidate `candidate`, or the
/// chosen one (candidate 0 when nothing is certified).
pub fn clearance_profile(scene: &str, candidate: Option<usize>) -> Result<String, String> {
    let b = build(scene)?;
    let candidates = enumerate_chasing_candidates(&b.prediction, &b.obstacles, &b.init, &b.cfg).map_err(|e| e.to_string())?;
    let index = match candidate {
        Some(i) if i >= candidates.len() => return Err(format!("candidate {i} out of range (0..{})", candidates.len())),
        Some(i) => i,
        None => cheapest(&candidates).unwrap_or(0),
    };
    let c = &candidates[index];
    let x_q = &b.prediction.trajectory;
    let t: Vec<f64> = samples(b.cfg.horizon, PROFILE_SAMPLES).collect();
    let profiles: Vec<Value> = b
        .obstacles
        .iter()
        .map(|o| {
            let exact: Vec<f64> = t.iter().map(|&t| exact_clearance(&c.trajectory, x_q, o, t).value).collect();
            let lower: Vec<f64> = t.iter().map(|&t| lower_bound_clearance(&c.trajectory, x_q, o, t)).collect();
            json!({ "label": o.label(), "exact": exact, "lower": lower })
        })
        .collect();
    Ok(json!({ "candidate": index, "feasible": c.feasible, "t": t, "obstacles": profiles }).to_string())
}

/// Timeline, events and metrics of one simulated run.
pub fn simulate(scenario: &str, seed: u64) -> Result<String, String> {
    let file = parse_scenario_file(scenario).map_err(|e| e.to_string())?;
    let sc = file.to_scenario("scenario", Some(scenario)).map_err(|e| e.to_string())?;
    let report = simulator::run(&sc, seed).map_err(|e| e.to_string())?;
    let timeline: Vec<Value> = report
        .timeline
        .iter()
        .map(|s| {
            json!({
                "t": s.t,
                "chaser": [s.chaser.x, s.chaser.y, s.chaser.z],
                "target": [s.target.x, s.target.y, s.target.z],
                "yaw": s.yaw,
                "clearance": s.clearance,
                "obstacles": sc.obstacles.iter().map(|o| { let c = o.center_at(s.t); [c.x, c.y] }).collect::<Vec<_>>(),
            })
        })
        .collect();
    let events: Vec<Value> = report
        .events
        .iter()
        .map(|e| json!({ "t": e.t, "kind": e.kind.as_str(), "cause": e.cause.map(|c| c.as_str()), "detail": e.detail }))
        .collect();
    let obstacles: Vec<Value> = sc.obstacles.iter().map(|o| json!({ "label": o.label(), "section": section(o.shape()) })).collect();
    Ok(json!({
        "name": sc.name,
        "seed": seed,
        "unrecovered": report.unrecovered,
        "metrics": report.metrics,
        "obstacles": obstacles,
        "timeline": timeline,
        "events": events,
    })
    .to_string())
}
