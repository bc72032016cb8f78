//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The functions in [`demo`] are plain Rust and are what the tests exercise;
//! the exported wrappers only translate errors into JavaScript exceptions.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: stegnet_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Row-major pixels of a square procedural cover.
#[wasm_bindgen(js_name = syntheticCover)]
pub fn synthetic_cover(size: usize, grain: f64, seed: u32) -> Result<Vec<u8>, JsError> {
    demo::synthetic_cover(size, grain, seed.into()).map_err(js)
}

/// The 30 residual planes of the fixed SRM layer, channel-major.
#[wasm_bindgen(js_name = srmResiduals)]
pub fn srm_residuals(pixels: &[u8], width: usize, height: usize) -> Result<Vec<f32>, JsError> {
    demo::srm_residuals(pixels, width, height).map_err(js)
}

#[wasm_bindgen(js_name = srmFilterNames)]
pub fn srm_filter_names() -> Vec<String> {
    demo::srm_filter_names()
}

/// `stego - cover` per pixel, each -1, 0 or 1.
#[wasm_bindgen(js_name = changeMap)]
pub fn change_map(pixels: &[u8], width: usize, height: usize, payload: f64, seed: u32) -> Result<Vec<i8>, JsError> {
    demo::change_map(pixels, width, height, payload, seed.into()).map_err(js)
}

/// `[map_side, bins, win, stride, bins, win, stride, ...]` for the final
/// feature map of a square input of side `input_size`.
#[wasm_bindgen(js_name = sppLayout)]
pub fn spp_layout(input_size: usize, levels: &[u32]) -> Result<Vec<u32>, JsError> {
    let levels: Vec<usize> = levels.iter().map(|&l| l as usize).collect();
    let layout = demo::spp_layout(input_size, &levels).map_err(js)?;
    let mut out = vec![layout.map_side as u32];
    for g in &layout.levels {
        out.extend([g.bins as u32, g.win as u32, g.stride as u32]);
    }
    Ok(out)
}
