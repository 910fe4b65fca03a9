//! JSON scenario files.
//!
//! ```json
//! {
//!   "name": "open_field",
//!   "duration": 10.0,
//!   "target": { "waypoints": [[0, 0, 0, 0], [10, 10, 0, 0]] },
//!   "obstacles": [
//!     { "label": "rock", "shape": [1,0,0, 0,1,0, 0,0,1], "center": { "static": [5, 4, 0] } },
//!     { "shape": [0.25,0,0, 0,0.25,0, 0,0,0.25],
//!       "center": { "waypoints": [[0, 8, -6, 0], [10, 8, 6, 0]], "degree": 1 } }
//!   ],
//!   "observation": { "period": 0.1, "covariance": [1e-4,0,0, 0,1e-4,0, 0,0,1e-4] },
//!   "sensing_radius": 15.0,
//!   "chaser": { "init": { "position": [-3, 0, 0] }, "l_des": 3.0 },
//!   "predictor": { "n_vertices": 5 },
//!   "sim": { "pred_err_threshold": 0.3 }
//! }
//! ```
//!
//! Matrices are row-major. Unknown keys are rejected. `chaser` takes `init`
//! plus any [`ChaserConfig`] field; `predictor` and `sim` mirror
//! [`PredictorConfig`] and [`SimConfig`].

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::chaser::{ChaserConfig, InitialState};
use crate::predictor::PredictorConfig;
use crate::simulator::{ObservationModel, Scenario, SimConfig, TargetScript};
use crate::worldmodel::{is_spd, EllipsoidObstacle, Mat3, Trajectory3, Vec3};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} (line {line}, column {column}): {message}")]
    Schema { path: String, line: usize, column: usize, message: String },
    #[error("{path}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Invalid { path: String, line: Option<usize>, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub duration: f64,
    pub target: TargetSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub observation: ObservationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensing_radius: Option<f64>,
    pub chaser: ChaserSection,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// `[t, x, y, z]` rows.
    pub waypoints: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Row-major 3×3 shape matrix in 1/m².
    pub shape: [f64; 9],
    pub center: CenterSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterSpec {
    #[serde(default, rename = "static", skip_serializing_if = "Option::is_none")]
    pub fixed: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<Vec<[f64; 4]>>,
    /// Fit degree for waypoint centers.
    #[serde(default = "default_center_degree")]
    pub degree: usize,
}

fn default_center_degree() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    #[serde(default = "default_period")]
    pub period: f64,
    pub covariance: [f64; 9],
}

fn default_period() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub acceleration: [f64; 3],
    #[serde(default)]
    pub jerk: [f64; 3],
}

/// `chaser` object: `init` next to the flattened [`ChaserConfig`] fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaserSection {
    pub init: InitSpec,
    pub config: ChaserConfig,
}

impl<'de> Deserialize<'de> for ChaserSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut map = serde_json::Map::deserialize(d)?;
        let init = map.remove("init").ok_or_else(|| D::Error::missing_field("init"))?;
        let init: InitSpec = serde_path_to_error::deserialize(init)
            .map_err(|e| D::Error::custom(format!("init.{}: {}", e.path(), e.inner())))?;
        let config: ChaserConfig = serde_path_to_error::deserialize(serde_json::Value::Object(map))
            .map_err(|e| D::Error::custom(format!("{}: {}", e.path(), e.inner())))?;
        Ok(Self { init, config })
    }
}

impl Serialize for ChaserSection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let config = serde_json::to_value(&self.config).map_err(serde::ser::Error::custom)?;
        let serde_json::Value::Object(fields) = config else {
            return Err(serde::ser::Error::custom("chaser config must serialize to an object"));
        };
        let mut map = s.serialize_map(Some(fields.len() + 1))?;
        map.serialize_entry("init", &self.init)?;
        for (k, v) in &fields {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

/// 1-based line of the `nth` occurrence of `"key"` in the source.
fn line_of_key(text: &str, key: &str, nth: usize) -> Option<usize> {
    let needle = format!("\"{key}\"");
    let (pos, _) = text.match_indices(&needle).nth(nth)?;
    Some(text[..pos].matches('\n').count() + 1)
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn mat(a: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(a)
}

fn timed(rows: &[[f64; 4]]) -> Vec<(f64, Vec3)> {
    rows.iter().map(|r| (r[0], Vec3::new(r[1], r[2], r[3]))).collect()
}

/// Parses and schema-checks a scenario document.
pub fn parse_scenario_file(text: &str) -> Result<ScenarioFile, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        ScenarioError::Schema {
            path: e.path().to_string(),
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })
}

impl ScenarioFile {
    /// Builds the simulator scenario. `source` is the original text, used to
    /// point semantic errors at a line.
    pub fn to_scenario(&self, default_name: &str, source: Option<&str>) -> Result<Scenario, ScenarioError> {
        let line = |key: &str, nth: usize| source.and_then(|s| line_of_key(s, key, nth));
        let invalid = |path: String, line: Option<usize>, message: String| ScenarioError::Invalid { path, line, message };

        let target = TargetScript::new(timed(&self.target.waypoints))
            .map_err(|e| invalid("target.waypoints".into(), line("waypoints", 0), e.to_string()))?;

        let mut obstacles = Vec::with_capacity(self.obstacles.len());
        for (j, spec) in self.obstacles.iter().enumerate() {
            let path = |f: &str| format!("obstacles[{j}].{f}");
            let shape = mat(&spec.shape);
            if !is_spd(&shape) {
                return Err(invalid(path("shape"), line("shape", j), "shape matrix is not symmetric positive definite".into()));
            }
            let center = match (&spec.center.fixed, &spec.center.waypoints) {
                (Some(p), None) => Trajectory3::constant(v3(*p), self.duration),
                (None, Some(w)) => Trajectory3::fit_waypoints(&timed(w), spec.center.degree, self.duration)
                    .map_err(|e| invalid(path("center.waypoints"), None, e.to_string()))?,
                _ => {
                    return Err(invalid(path("center"), None, "exactly one of `static` or `waypoints` is required".into()));
                }
            };
            let label = spec.label.clone().unwrap_or_else(|| format!("obstacle{j}"));
            obstacles.push(EllipsoidObstacle::new(shape, center, label).map_err(|e| invalid(path("shape"), line("shape", j), e.to_string()))?);
        }

        let covariance = mat(&self.observation.covariance);
        if !is_spd(&covariance) {
            return Err(invalid(
                "observation.covariance".into(),
                line("covariance", 0),
                "covariance is not symmetric positive definite".into(),
            ));
        }
        let i = &self.chaser.init;
        let scenario = Scenario {
            name: self.name.clone().unwrap_or_else(|| default_name.to_string()),
            duration: self.duration,
            target,
            obstacles,
            observation: ObservationModel { period: self.observation.period, covariance },
            sensing_radius: self.sensing_radius,
            init: InitialState { derivatives: [v3(i.position), v3(i.velocity), v3(i.acceleration), v3(i.jerk)] },
            predictor: self.predictor.clone(),
            chaser: self.chaser.config.clone(),
            sim: self.sim.clone(),
        };
        scenario.validate().map_err(|e| invalid("scenario".into(), None, e.to_string()))?;
        Ok(scenario)
    }
}

/// Reads, parses and validates a scenario file; the file stem is the default
/// scenario name.
pub fn load_scenario(path: &std::path::Path) -> Result<(ScenarioFile, Scenario), ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    let file = parse_scenario_file(&text)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    let scenario = file.to_scenario(stem, Some(&text))?;
    Ok((file, scenario))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "duration": 5.0,
        "target": { "waypoints": [[0, 0, 0, 0], [5, 5, 0, 0]] },
        "obstacles": [
            { "shape": [1,0,0, 0,1,0, 0,0,1], "center": { "static": [2, 6, 0] } }
        ],
        "observation": { "covariance": [1e-4,0,0, 0,1e-4,0, 0,0,1e-4] },
        "chaser": { "init": { "position": [-3, 0, 0] }, "l_des": 3.0 }
    }"#;

    #[test]
    fn minimal_file_parses() {
        let f = parse_scenario_file(MINIMAL).unwrap();
        let sc = f.to_scenario("minimal", Some(MINIMAL)).unwrap();
        assert_eq!(sc.name, "minimal");
        assert_eq!(sc.obstacles[0].label(), "obstacle0");
        assert_eq!(sc.observation.period, 0.1);
        assert_eq!(sc.chaser, ChaserConfig::default());
    }

    #[test]
    fn unknown_key_rejected_with_path() {
        let text = MINIMAL.replace("\"l_des\": 3.0", "\"l_dez\": 3.0");
        let err = parse_scenario_file(&text).unwrap_err().to_string();
        assert!(err.contains("chaser") && err.contains("l_dez"), "{err}");
        let text = MINIMAL.replace("\"duration\"", "\"durration\"");
        let err = parse_scenario_file(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Schema { line: 2, .. }), "{err}");
    }

    #[test]
    fn non_spd_shape_reports_path_and_line() {
        let text = MINIMAL.replace("[1,0,0, 0,1,0, 0,0,1]", "[1,0,0, 0,-1,0, 0,0,1]");
        let f = parse_scenario_file(&text).unwrap();
        let err = f.to_scenario("x", Some(&text)).unwrap_err().to_string();
        assert!(err.contains("obstacles[0].shape"), "{err}");
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn center_needs_exactly_one_form() {
        let text = MINIMAL.replace(r#"{ "static": [2, 6, 0] }"#, r#"{ "degree": 1 }"#);
        let err = parse_scenario_file(&text).unwrap().to_scenario("x", None).unwrap_err().to_string();
        assert!(err.contains("obstacles[0].center"), "{err}");
    }

    #[test]
    fn serialization_round_trips() {
        let f = parse_scenario_file(MINIMAL).unwrap();
        let text = serde_json::to_string_pretty(&f).unwrap();
        assert_eq!(parse_scenario_file(&text).unwrap(), f);
    }
}
