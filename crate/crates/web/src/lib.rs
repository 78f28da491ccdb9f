//! Browser bindings: render a synthetic flow frame for a pose, decode FGMV
//! payloads to RGBA the way a remote client would, and list network layer
//! tables.

use serde_json::json;
use wasm_bindgen::prelude::*;

use flowguard::flowcore::{hsv_pixels, mv_to_flowfield, preset_mask};
use flowguard::harness::{scenario_setup, MASK_ROWS};
use flowguard::mvcodec::{parse_mv_frame, serialize_mv_frame, GridSpec};
use flowguard::simworld::{VehicleParams, VehicleState, DEFAULT_DT};
use flowguard::synthflow::{CameraRig, FrameRenderer};
use flowguard::tinynet::{final_architecture, layer_variant, masked_architecture, ArchSpec, Shape};
use flowguard::Result;

fn js(e: flowguard::Error) -> JsError {
    JsError::new(&e.to_string())
}

pub fn world(name: &str) -> Result<String> {
    let w = scenario_setup(name)?.world;
    Ok(serde_json::to_string(&w).expect("worlds serialize"))
}

/// FGMV payload (rig grid, pad column included) seen while driving from the
/// given pose for one tick.
pub fn frame_payload(scenario: &str, x: f64, y: f64, heading_deg: f64, speed: f64, steer: f64, seed: u64) -> Result<Vec<u8>> {
    let w = scenario_setup(scenario)?.world;
    let mut state = VehicleState::at(x, y, heading_deg.to_radians());
    state.speed = speed;
    let mut r = FrameRenderer::new(CameraRig::default(), VehicleParams::default(), seed);
    let mut frame = r.render(&state, steer, speed, &w, DEFAULT_DT).frame;
    frame.seq = seed as u32;
    Ok(serialize_mv_frame(&frame))
}

/// One RGBA pixel per macroblock, HSV-coded (hue = direction).
pub fn payload_rgba(payload: &[u8], cols: usize, rows: usize, pad: bool, max_magnitude: f64) -> Result<Vec<u8>> {
    if !(max_magnitude > 0.0) {
        return Err(flowguard::Error::InvalidArgument("max_magnitude must be > 0".into()));
    }
    let frame = parse_mv_frame(payload, GridSpec::new(cols, rows, pad)?)?;
    let px = hsv_pixels(&mv_to_flowfield(&frame, 1.0), max_magnitude);
    Ok(px.iter().flat_map(|p| [p[0], p[1], p[2], 255]).collect())
}

fn arch_for(id: &str) -> Result<ArchSpec> {
    if id == "final" {
        return Ok(final_architecture());
    }
    if let Some((name, pad, pool)) = MASK_ROWS.iter().find(|(n, _, _)| *n == id) {
        let (h, w) = preset_mask(name)?.output_shape();
        return Ok(masked_architecture(h, w, *pad, *pool));
    }
    layer_variant(id)
}

/// Layer rows of a variant id, `final`, or a mask preset, as JSON.
pub fn layers(id: &str) -> Result<String> {
    let arch = arch_for(id)?;
    let rows: Vec<_> = arch
        .rows()?
        .iter()
        .map(|r| {
            let shape = match r.shape {
                Shape::Spatial { h, w, c } => format!("{h}x{w}x{c}"),
                Shape::Flat(n) => n.to_string(),
            };
            json!({"kind": r.kind, "shape": shape, "params": r.params})
        })
        .collect();
    Ok(json!({"id": id, "total": arch.param_count()?, "rows": rows}).to_string())
}

#[wasm_bindgen(js_name = gridInfo)]
pub fn grid_info() -> String {
    let g = CameraRig::default().grid();
    json!({"cols": g.cols, "rows": g.rows, "pad": g.has_pad_column}).to_string()
}

#[wasm_bindgen(js_name = worldJson)]
pub fn world_json(name: &str) -> std::result::Result<String, JsError> {
    world(name).map_err(js)
}

#[wasm_bindgen(js_name = renderFrame)]
pub fn render_frame(scenario: &str, x: f64, y: f64, heading_deg: f64, speed: f64, steer: f64, seed: u32) -> std::result::Result<Vec<u8>, JsError> {
    frame_payload(scenario, x, y, heading_deg, speed, steer, seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = decodeRgba)]
pub fn decode_rgba(payload: &[u8], cols: usize, rows: usize, pad: bool, max_magnitude: f64) -> std::result::Result<Vec<u8>, JsError> {
    payload_rgba(payload, cols, rows, pad, max_magnitude).map_err(js)
}

#[wasm_bindgen(js_name = layerTable)]
pub fn layer_table(id: &str) -> std::result::Result<String, JsError> {
    layers(id).map_err(js)
}
