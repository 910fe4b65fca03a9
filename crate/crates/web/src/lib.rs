//! wasm-bindgen front end for the browser demo in `www/`.
//!
//! Every export takes and returns JSON strings. The same functions without
//! the `wasm_bindgen` wrapper live in [`api`] so they can be tested natively.

use wasm_bindgen::prelude::*;

pub mod api;

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Samples and certifies every chasing candidate for a single-step scene.
#[wasm_bindgen]
pub fn plan_scene(scene: &str) -> Result<String, JsError> {
    js(api::plan_scene(scene))
}

/// Exact segment clearance against its polynomial lower bound along one
/// candidate.
#[wasm_bindgen]
pub fn clearance_profile(scene: &str, candidate: Option<usize>) -> Result<String, JsError> {
    js(api::clearance_profile(scene, candidate))
}

/// Runs a scenario file through the receding-horizon simulator.
#[wasm_bindgen]
pub fn simulate(scenario: &str, seed: u64) -> Result<String, JsError> {
    js(api::simulate(scenario, seed))
}

#[wasm_bindgen]
pub fn example_scene() -> String {
    api::EXAMPLE_SCENE.to_string()
}

#[wasm_bindgen]
pub fn example_scenario() -> String {
    api::EXAMPLE_SCENARIO.to_string()
}
