//! wasm-bindgen wrappers for the static page in `www/`.
//!
//! Every export has a plain Rust counterpart returning `Result<_, String>`
//! so the logic can be tested natively.

use polarhmm::codec::{self, BlockSampling};
use polarhmm::hmm::{build_bernoulli, build_gilbert_elliott};
use polarhmm::preprocess::{approx_entropy, polar_preprocess, ConditionalDistribution, PreprocessParams, SimplexPoint, SupportCap};
use polarhmm::{MixingKernel, TensorTransform};
use wasm_bindgen::prelude::*;

/// Largest tensor power the page accepts; t = 5 already takes a few seconds.
pub const MAX_T: u32 = 5;

fn check_t(t: u32) -> Result<(), String> {
    if t == 0 || t > MAX_T {
        return Err(format!("t must be between 1 and {MAX_T}"));
    }
    Ok(())
}

/// Normalized conditional entropies of the `2^t` outputs of the binary
/// transform applied to i.i.d. Bernoulli(`p1`) bits, in index order.
pub fn polarization_profile(p1: f64, t: u32, gamma: f64) -> Result<Vec<f64>, String> {
    check_t(t)?;
    let src = build_bernoulli(p1).map_err(|e| e.to_string())?;
    let kernel = MixingKernel::standard(src.modulus(), 2).map_err(|e| e.to_string())?;
    let point = SimplexPoint::new(vec![1.0 - p1, p1]).map_err(|e| e.to_string())?;
    let base = ConditionalDistribution::point_mass(point);
    let est = approx_entropy(&base, gamma, t, &kernel, SupportCap::Coarsen(256)).map_err(|e| e.to_string())?;
    Ok(est.0)
}

/// `n` symbols of Gilbert-Elliott noise.
pub fn gilbert_elliott_noise(delta: f64, p: f64, q_switch: f64, n: usize, seed: u64) -> Result<Vec<u8>, String> {
    let src = build_gilbert_elliott(delta, p, q_switch).map_err(|e| e.to_string())?;
    Ok(src.sample_sequence(n, seed).as_slice().iter().map(|&s| s as u8).collect())
}

/// Preprocesses a Gilbert-Elliott source, then compresses and decompresses
/// `trials` independent blocks. Returns a JSON summary.
pub fn round_trip(delta: f64, p: f64, q_switch: f64, t: u32, eps: f64, trials: usize, seed: u64) -> Result<String, String> {
    check_t(t)?;
    let src = build_gilbert_elliott(delta, p, q_switch).map_err(|e| e.to_string())?;
    let kernel = MixingKernel::standard(src.modulus(), 2).map_err(|e| e.to_string())?;
    let m = 1usize << t;
    let mut params = PreprocessParams::new(m, eps, seed);
    params.samples = 300;
    let report = polar_preprocess(&src, &kernel, t, &params).map_err(|e| e.to_string())?;
    let tt = TensorTransform::new(kernel, t).map_err(|e| e.to_string())?;
    let probe = codec::decompress_success_probe(&src, &report.sets, &tt, trials, seed, BlockSampling::Stream)
        .map_err(|e| e.to_string())?;
    let summary = serde_json::json!({
        "m": m,
        "rate": report.sets.rate(),
        "entropy_estimate": report.entropy_estimate(),
        "trials": probe.trials,
        "failures": probe.failures,
        "selected": report.sets.sets().iter().map(|s| s.count()).collect::<Vec<_>>(),
    });
    Ok(summary.to_string())
}

#[wasm_bindgen(js_name = polarizationProfile)]
pub fn polarization_profile_js(p1: f64, t: u32, gamma: f64) -> Result<Vec<f64>, JsValue> {
    polarization_profile(p1, t, gamma).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = gilbertElliottNoise)]
pub fn gilbert_elliott_noise_js(delta: f64, p: f64, q_switch: f64, n: u32, seed: u32) -> Result<Vec<u8>, JsValue> {
    gilbert_elliott_noise(delta, p, q_switch, n as usize, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = roundTrip)]
pub fn round_trip_js(delta: f64, p: f64, q_switch: f64, t: u32, eps: f64, trials: u32, seed: u32) -> Result<String, JsValue> {
    round_trip(delta, p, q_switch, t, eps, trials as usize, seed as u64).map_err(|e| JsValue::from_str(&e))
}
