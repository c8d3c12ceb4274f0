//! wasm-bindgen entry points for the static page in `www/`.
//!
//! Heatmaps come back as RGBA bytes, row-major over the patch grid.

use attnmod::render::heatmap_pixels;
use attnmod::{parse_prompt, trace_step, CrossMode, Matrix, StepRecord, TraceConfig};
use wasm_bindgen::prelude::*;

// Dark blue through orange to pale yellow.
const RAMP: [[f64; 3]; 5] = [
    [13.0, 8.0, 48.0],
    [84.0, 24.0, 130.0],
    [190.0, 55.0, 82.0],
    [248.0, 149.0, 64.0],
    [252.0, 253.0, 191.0],
];

fn colorize(level: u8) -> [u8; 4] {
    let x = f64::from(level) / 255.0 * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (RAMP[i][k] + (RAMP[i + 1][k] - RAMP[i][k]) * f).round() as u8;
    [c(0), c(1), c(2), 255]
}

fn rgba(slice: &Matrix) -> Result<Vec<u8>, String> {
    let gray = heatmap_pixels(slice).map_err(|e| e.to_string())?;
    Ok(gray.into_iter().flat_map(colorize).collect())
}

fn config(prompt: &str, seed: u64) -> TraceConfig {
    let mut cfg = TraceConfig::default();
    cfg.trace.prompt = prompt.to_string();
    cfg.trace.seed = seed;
    cfg
}

fn record(cfg: &TraceConfig, step: usize) -> Result<StepRecord, String> {
    let parsed = cfg
        .parser(attnmod::Lexicon::bundled())
        .parse(&cfg.trace.prompt)
        .map_err(|e| e.to_string())?;
    trace_step(cfg, &parsed, step).map_err(|e| e.to_string())
}

/// Side length of the square patch grid the heatmaps are drawn on.
#[wasm_bindgen]
pub fn grid_size() -> usize {
    TraceConfig::default().trace.height
}

/// Parses `prompt` and returns the result as JSON.
#[wasm_bindgen]
pub fn parse(prompt: &str) -> Result<String, String> {
    let parsed = parse_prompt(prompt).map_err(|e| e.to_string())?;
    serde_json::to_string(&parsed).map_err(|e| e.to_string())
}

/// Cross-attention map of one prompt token at `step`, under `mode`
/// (`off`, `mask_only`, `reweight_only`, `both`).
#[wasm_bindgen]
pub fn cross_heatmap(
    prompt: &str,
    seed: u64,
    step: usize,
    mode: &str,
    token: usize,
) -> Result<Vec<u8>, String> {
    let mut cfg = config(prompt, seed);
    cfg.cross_mod.mode = mode.parse::<CrossMode>()?;
    let rec = record(&cfg, step)?;
    if token >= rec.modulated.tokens() {
        return Err(format!("token {token} out of range"));
    }
    rgba(&rec.modulated.token_slice(token))
}

/// Head-averaged self-attention row of patch `(h, w)` at `step`, with the
/// early-phase temperature set to `tau`.
#[wasm_bindgen]
pub fn self_heatmap(
    prompt: &str,
    seed: u64,
    step: usize,
    tau: f64,
    h: usize,
    w: usize,
) -> Result<Vec<u8>, String> {
    let mut cfg = config(prompt, seed);
    cfg.self_mod.tau = tau;
    let p = &cfg.trace;
    if h >= p.height || w >= p.width {
        return Err(format!("patch ({h}, {w}) outside the {}x{} grid", p.height, p.width));
    }
    let (height, width, patches) = (p.height, p.width, p.patches());
    let rec = record(&cfg, step)?;
    let row = h * width + w;
    let n = rec.self_weights.len() as f64;
    let data = (0..patches)
        .map(|j| rec.self_weights.iter().map(|m| m[(row, j)]).sum::<f64>() / n)
        .collect();
    rgba(&Matrix::from_vec(height, width, data).map_err(|e| e.to_string())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(colorize(0), [13, 8, 48, 255]);
        assert_eq!(colorize(255), [252, 253, 191, 255]);
    }

    #[test]
    fn parse_returns_json() {
        let v: serde_json::Value = serde_json::from_str(&parse("a boy in front of a female").unwrap()).unwrap();
        assert_eq!(v["entities"].as_array().unwrap().len(), 2);
        assert!(parse("of the in").is_err());
    }

    #[test]
    fn heatmaps_cover_the_grid() {
        let n = grid_size();
        let prompt = "a boy in front of a female";
        let masked = cross_heatmap(prompt, 42, 0, "both", 1).unwrap();
        assert_eq!(masked.len(), n * n * 4);
        assert_ne!(masked, cross_heatmap(prompt, 42, 0, "off", 1).unwrap());
        assert_eq!(self_heatmap(prompt, 42, 0, 0.8, 8, 8).unwrap().len(), n * n * 4);
    }

    #[test]
    fn tau_only_matters_early() {
        let prompt = "a boy in front of a female";
        assert_ne!(
            self_heatmap(prompt, 7, 0, 0.5, 3, 3).unwrap(),
            self_heatmap(prompt, 7, 0, 1.0, 3, 3).unwrap()
        );
        assert_eq!(
            self_heatmap(prompt, 7, 20, 0.5, 3, 3).unwrap(),
            self_heatmap(prompt, 7, 20, 1.0, 3, 3).unwrap()
        );
    }

    #[test]
    fn bad_inputs_are_errors() {
        let prompt = "a boy in front of a female";
        assert!(cross_heatmap(prompt, 1, 0, "sideways", 1).is_err());
        assert!(cross_heatmap(prompt, 1, 30, "both", 1).is_err());
        assert!(cross_heatmap(prompt, 1, 0, "both", 99).is_err());
        assert!(self_heatmap(prompt, 1, 0, 0.0, 0, 0).is_err());
        assert!(self_heatmap(prompt, 1, 0, 0.8, 16, 0).is_err());
    }
}
