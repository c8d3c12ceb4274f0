//! Deterministic toy trace generator standing in for the denoising loop.
//!
//! Each step synthesizes self-attention heads and a cross-attention field from
//! a ChaCha stream derived from `(seed, step)`, runs both modulators, and
//! records leakage metrics. No pixels are produced.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atnf::Tensor;
use crate::attention::{
    normalize_field, row_entropy, softmax_into, top_mass_count, AttentionField, AttentionOutput,
    AttnError, Matrix, SelfAttentionBatch,
};
use crate::config::{ConfigError, TraceConfig, TraceParams};
use crate::cross_mod::{
    argmax_first, assign_patches, entity_scores, modulate_with_assignment, renormalize_rows,
    CrossError, CrossMode, PatchAssignment, PhaseSchedule,
};
use crate::parser::{Lexicon, ParseError, ParsedPrompt, PromptParser, SpanLayout};
use crate::render::{sha256_hex, write_atomic};
use crate::self_mod::modulate_heads;

/// Share of a row's mass the top-mass region must cover.
pub const TOP_MASS_FRACTION: f64 = 0.9;

/// Timing repetitions for the overhead report.
pub const OVERHEAD_SAMPLES: usize = 9;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Attn(#[from] AttnError),
    #[error(transparent)]
    Cross(#[from] CrossError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("prompt has {tokens} tokens but the field holds {capacity}")]
    PromptTooLong { tokens: usize, capacity: usize },
    #[error("overlap needs at least two entities")]
    SingleEntity,
    #[error("step {step} out of range for a {steps}-step trace")]
    StepOutOfRange { step: usize, steps: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    c: f64,
    n: usize,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
        self.n += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.sum + self.c) / self.n as f64)
    }
}

fn mean_of<I: IntoIterator<Item = f64>>(xs: I) -> Option<f64> {
    let mut acc = CompensatedSum::default();
    xs.into_iter().for_each(|x| acc.add(x));
    acc.mean()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    /// `None` when the prompt has fewer than two entities.
    pub inter_entity_overlap: Option<f64>,
    pub mean_patch_entropy: f64,
    pub winner_region_sizes: Vec<usize>,
    /// Patches holding 90% of the reference self-attention row, averaged over heads.
    pub top_mass_region_size: f64,
}

/// Mass on non-winning entity tokens over total entity mass, averaged over
/// patches that carry any entity mass.
pub fn inter_entity_overlap(a: &AttentionField, layout: &SpanLayout) -> Result<f64, HarnessError> {
    if layout.entity_count() < 2 {
        return Err(HarnessError::SingleEntity);
    }
    let scores = entity_scores(a, layout)?;
    let mut acc = CompensatedSum::default();
    for p in 0..a.patches() {
        let s = scores.patch(p);
        let total: f64 = s.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let win = argmax_first(s);
        let leak: f64 = s
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != win)
            .map(|(_, v)| v)
            .sum();
        acc.add(leak / total);
    }
    Ok(acc.mean().unwrap_or(0.0))
}

/// Mean entropy of the patch rows after rescaling each to unit mass.
pub fn mean_patch_entropy(a: &AttentionField) -> f64 {
    mean_of(a.patch_rows().filter_map(|row| {
        let sum: f64 = row.iter().sum();
        (sum > 0.0).then(|| {
            let p: Vec<f64> = row.iter().map(|v| v / sum).collect();
            row_entropy(&p).unwrap_or(0.0)
        })
    }))
    .unwrap_or(0.0)
}

pub fn leakage_report(
    a: &AttentionField,
    layout: &SpanLayout,
    ref_rows: &[Vec<f64>],
) -> Result<LeakageReport, HarnessError> {
    let overlap = match inter_entity_overlap(a, layout) {
        Ok(v) => Some(v),
        Err(HarnessError::SingleEntity) => None,
        Err(e) => return Err(e),
    };
    let scores = entity_scores(a, layout)?;
    let mut sizes = vec![0; layout.entity_count()];
    for p in 0..a.patches() {
        let s = scores.patch(p);
        if s.iter().any(|&v| v > 0.0) {
            sizes[argmax_first(s)] += 1;
        }
    }
    let top = mean_of(ref_rows.iter().map(|r| top_mass_count(r, TOP_MASS_FRACTION) as f64));
    Ok(LeakageReport {
        inter_entity_overlap: overlap,
        mean_patch_entropy: mean_patch_entropy(a),
        winner_region_sizes: sizes,
        top_mass_region_size: top.unwrap_or(0.0),
    })
}

/// Synthesized attention inputs for one step.
#[derive(Debug, Clone)]
pub struct SynthStep {
    pub heads: Vec<SelfAttentionBatch>,
    /// Normalized cross-attention field.
    pub cross: AttentionField,
}

struct Geometry {
    centers: Vec<(f64, f64)>,
    /// Per head, per feature dimension: (freq_h, freq_w, phase).
    features: Vec<Vec<(f64, f64, f64)>>,
}

fn step_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn geometry(p: &TraceParams, entities: usize) -> Geometry {
    let mut rng = step_rng(p.seed, 0);
    let min_sep = p.height.max(p.width) as f64 / 4.0;
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(entities);
    for _ in 0..entities {
        let mut c = (0.0, 0.0);
        for _ in 0..32 {
            c = (
                rng.random_range(0.0..p.height as f64),
                rng.random_range(0.0..p.width as f64),
            );
            let clear = centers
                .iter()
                .all(|&(h, w)| ((h - c.0).powi(2) + (w - c.1).powi(2)).sqrt() >= min_sep);
            if clear {
                break;
            }
        }
        centers.push(c);
    }
    let features = (0..p.heads)
        .map(|_| {
            (0..p.head_dim)
                .map(|_| {
                    let fh = normal(&mut rng) / p.sigma;
                    let fw = normal(&mut rng) / p.sigma;
                    (fh, fw, rng.random_range(0.0..std::f64::consts::TAU))
                })
                .collect()
        })
        .collect();
    Geometry { centers, features }
}

/// 3x3 box blur of each channel over the patch grid, clamped at the edges.
fn smooth(noise: &Matrix, height: usize, width: usize) -> Matrix {
    let d = noise.cols();
    let mut out = Matrix::zeros(noise.rows(), d);
    for h in 0..height {
        for w in 0..width {
            let mut count = 0.0;
            let dst = h * width + w;
            for nh in h.saturating_sub(1)..(h + 2).min(height) {
                for nw in w.saturating_sub(1)..(w + 2).min(width) {
                    count += 1.0;
                    let src = nh * width + nw;
                    for j in 0..d {
                        out[(dst, j)] += noise[(src, j)];
                    }
                }
            }
            out.row_mut(dst).iter_mut().for_each(|v| *v /= count);
        }
    }
    out
}

fn noise_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("noise shape")
}

/// Generates the step's attention inputs. Bump centers and positional
/// features come from the trace-level stream; jitter and noise from the
/// `(seed, step)` stream, so each step is reproducible on its own.
pub fn synth_attention(
    params: &TraceParams,
    parsed: &ParsedPrompt,
    step: usize,
) -> Result<SynthStep, HarnessError> {
    let n_tokens = parsed.tokens.len();
    if n_tokens > params.tokens {
        return Err(HarnessError::PromptTooLong {
            tokens: n_tokens,
            capacity: params.tokens,
        });
    }
    let layout = parsed.layout();
    let geo = geometry(params, layout.entity_count());
    let mut rng = step_rng(params.seed, step as u64 + 1);
    let theta = params.theta(step).min(1.0);
    let (hh, ww, tt) = (params.height, params.width, params.tokens);

    let decay = params.jitter * (1.0 - theta);
    let centers: Vec<(f64, f64)> = geo
        .centers
        .iter()
        .map(|&(h, w)| (h + decay * normal(&mut rng), w + decay * normal(&mut rng)))
        .collect();

    let live: Vec<bool> = (0..tt)
        .map(|t| parsed.tokens.get(t).is_some_and(|tok| !tok.is_punct()))
        .collect();
    let owner: Vec<Option<usize>> = (0..tt).map(|t| layout.entity_of(t)).collect();
    let two_sigma_sq = 2.0 * params.sigma * params.sigma;
    let mut values = Vec::with_capacity(hh * ww * tt);
    for h in 0..hh {
        for w in 0..ww {
            let bumps: Vec<f64> = centers
                .iter()
                .map(|&(ch, cw)| {
                    let d2 = (h as f64 - ch).powi(2) + (w as f64 - cw).powi(2);
                    params.bump * (-d2 / two_sigma_sq).exp()
                })
                .collect();
            for t in 0..tt {
                let u: f64 = rng.random();
                let v = if live[t] {
                    let base = params.floor + owner[t].map_or(0.0, |i| bumps[i]);
                    base * (1.0 + params.noise * u)
                } else {
                    0.0
                };
                values.push(v);
            }
        }
    }
    let cross = normalize_field(&AttentionField::new(hh, ww, tt, values)?)?;

    let n = params.patches();
    let d = params.head_dim;
    let amp = (2.0 / d as f64).sqrt();
    let mut heads = Vec::with_capacity(params.heads);
    for feats in &geo.features {
        let mut pos = Matrix::zeros(n, d);
        for h in 0..hh {
            for w in 0..ww {
                for (j, &(fh, fw, ph)) in feats.iter().enumerate() {
                    pos[(h * ww + w, j)] =
                        params.self_gain * amp * (fh * h as f64 + fw * w as f64 + ph).cos();
                }
            }
        }
        let qn = smooth(&noise_matrix(&mut rng, n, d), hh, ww);
        let kn = smooth(&noise_matrix(&mut rng, n, d), hh, ww);
        let v = noise_matrix(&mut rng, n, d);
        let mix = |noise: &Matrix| {
            let data = pos
                .as_slice()
                .iter()
                .zip(noise.as_slice())
                .map(|(p, z)| p + params.self_noise * z)
                .collect();
            Matrix::from_vec(n, d, data).expect("same shape")
        };
        heads.push(SelfAttentionBatch::new(mix(&qn), mix(&kn), v)?);
    }
    Ok(SynthStep { heads, cross })
}

/// Modulator outputs for one step.
#[derive(Debug, Clone)]
pub struct ModulatedStep {
    pub self_out: Vec<AttentionOutput>,
    pub cross: AttentionField,
    pub assignment: Option<PatchAssignment>,
}

/// The attention path timed by the harness: per-head self-attention with the
/// effective temperature, then cross-attention control.
pub fn attention_path(
    config: &TraceConfig,
    layout: &SpanLayout,
    sched: &PhaseSchedule,
    synth: &SynthStep,
    theta: f64,
    frozen: Option<&PatchAssignment>,
) -> Result<ModulatedStep, HarnessError> {
    let self_out = modulate_heads(&synth.heads, &config.self_mod, theta)?;
    let mode = config.cross_mod.mode;
    let assignment = if mode.masks() {
        match frozen {
            Some(a) => Some(a.clone()),
            None => Some(assign_patches(&entity_scores(&synth.cross, layout)?)),
        }
    } else {
        None
    };
    let mut cross = if mode == CrossMode::Off {
        synth.cross.clone()
    } else {
        modulate_with_assignment(&synth.cross, layout, assignment.as_ref(), sched, theta, mode)?
    };
    if config.cross_mod.renormalize && mode != CrossMode::Off {
        cross = renormalize_rows(&cross);
    }
    Ok(ModulatedStep {
        self_out,
        cross,
        assignment,
    })
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub theta: f64,
    pub temperature: f64,
    pub self_weights: Vec<Matrix>,
    pub raw: AttentionField,
    pub modulated: AttentionField,
    pub assignment: Option<PatchAssignment>,
    pub raw_metrics: LeakageReport,
    pub metrics: LeakageReport,
    /// Wall-clock of the attention path; zero when not measured.
    pub attention_ns: u64,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub config: TraceConfig,
    pub parsed: ParsedPrompt,
    pub steps: Vec<StepRecord>,
}

fn reference_rows(synth: &SynthStep, patch: usize, temperature: f64) -> Vec<Vec<f64>> {
    synth
        .heads
        .iter()
        .map(|b| {
            let scale = 1.0 / (b.head_dim() as f64).sqrt();
            let q = b.q().row(patch);
            let scores: Vec<f64> = (0..b.k().rows())
                .map(|j| q.iter().zip(b.k().row(j)).map(|(x, y)| x * y).sum::<f64>() * scale)
                .collect();
            let mut out = vec![0.0; scores.len()];
            softmax_into(&scores, temperature, &mut out);
            out
        })
        .collect()
}

fn build_record(
    config: &TraceConfig,
    layout: &SpanLayout,
    step: usize,
    synth: SynthStep,
    modulated: ModulatedStep,
    attention_ns: u64,
) -> Result<StepRecord, HarnessError> {
    let p = &config.trace;
    let theta = p.theta(step);
    let temperature = config.self_mod.effective_temperature(theta);
    let [rh, rw] = p.ref_patch();
    let ref_patch = rh * p.width + rw;
    let raw_rows = reference_rows(&synth, ref_patch, 1.0);
    let mod_rows: Vec<Vec<f64>> = modulated
        .self_out
        .iter()
        .map(|o| o.weights.row(ref_patch).to_vec())
        .collect();
    Ok(StepRecord {
        step,
        theta,
        temperature,
        raw_metrics: leakage_report(&synth.cross, layout, &raw_rows)?,
        metrics: leakage_report(&modulated.cross, layout, &mod_rows)?,
        self_weights: modulated.self_out.into_iter().map(|o| o.weights).collect(),
        raw: synth.cross,
        modulated: modulated.cross,
        assignment: modulated.assignment,
        attention_ns,
    })
}

/// Computes a single step without timing (and without assignment freezing).
pub fn trace_step(
    config: &TraceConfig,
    parsed: &ParsedPrompt,
    step: usize,
) -> Result<StepRecord, HarnessError> {
    config.validate()?;
    if step >= config.trace.steps {
        return Err(HarnessError::StepOutOfRange {
            step,
            steps: config.trace.steps,
        });
    }
    let layout = parsed.layout();
    let sched = config.cross_mod.schedule().expect("validated");
    let synth = synth_attention(&config.trace, parsed, step)?;
    let theta = config.trace.theta(step);
    let modulated = attention_path(config, &layout, &sched, &synth, theta, None)?;
    build_record(config, &layout, step, synth, modulated, 0)
}

pub fn run_trace(config: &TraceConfig) -> Result<Trace, HarnessError> {
    run_trace_with(config, &config.parser(Lexicon::bundled()))
}

pub fn run_trace_with(config: &TraceConfig, parser: &PromptParser) -> Result<Trace, HarnessError> {
    config.validate()?;
    let parsed = parser.parse(&config.trace.prompt)?;
    let layout = parsed.layout();
    let sched = config.cross_mod.schedule().expect("validated");
    let mut steps = Vec::with_capacity(config.trace.steps);
    let mut last_assignment: Option<PatchAssignment> = None;
    for step in 0..config.trace.steps {
        let theta = config.trace.theta(step);
        let synth = synth_attention(&config.trace, &parsed, step)?;
        let frozen = match config.cross_mod.freeze_after {
            Some(f) if theta >= f => last_assignment.as_ref(),
            _ => None,
        };
        let start = Instant::now();
        let modulated = attention_path(config, &layout, &sched, &synth, theta, frozen)?;
        let ns = start.elapsed().as_nanos() as u64;
        if modulated.assignment.is_some() {
            last_assignment.clone_from(&modulated.assignment);
        }
        steps.push(build_record(config, &layout, step, synth, modulated, ns)?);
    }
    Ok(Trace {
        config: config.clone(),
        parsed,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub modulated_ns: u64,
    pub baseline_ns: u64,
    pub ratio: f64,
    pub samples: usize,
}

fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

/// Times the attention path over every step with `config` and with modulation
/// off, `samples` back-to-back pairs. `ratio` is the median of the per-pair
/// ratios. Synthesis happens once, outside the timed region.
pub fn overhead_report_with(
    config: &TraceConfig,
    parser: &PromptParser,
    samples: usize,
) -> Result<OverheadReport, HarnessError> {
    config.validate()?;
    let samples = samples.max(1);
    let parsed = parser.parse(&config.trace.prompt)?;
    let layout = parsed.layout();
    let sched = config.cross_mod.schedule().expect("validated");
    let baseline = config.unmodulated();
    let inputs = (0..config.trace.steps)
        .map(|s| synth_attention(&config.trace, &parsed, s))
        .collect::<Result<Vec<_>, _>>()?;

    let pass = |cfg: &TraceConfig| -> Result<u64, HarnessError> {
        let start = Instant::now();
        let mut last: Option<PatchAssignment> = None;
        for (step, synth) in inputs.iter().enumerate() {
            let theta = cfg.trace.theta(step);
            let frozen = match cfg.cross_mod.freeze_after {
                Some(f) if theta >= f => last.as_ref(),
                _ => None,
            };
            let out = attention_path(cfg, &layout, &sched, synth, theta, frozen)?;
            if out.assignment.is_some() {
                last = out.assignment.clone();
            }
            std::hint::black_box(out);
        }
        Ok(start.elapsed().as_nanos() as u64)
    };

    pass(config)?;
    pass(&baseline)?;
    let mut modulated = Vec::with_capacity(samples);
    let mut base = Vec::with_capacity(samples);
    for i in 0..samples {
        if i % 2 == 0 {
            modulated.push(pass(config)?);
            base.push(pass(&baseline)?);
        } else {
            base.push(pass(&baseline)?);
            modulated.push(pass(config)?);
        }
    }
    let mut ratios: Vec<f64> = modulated
        .iter()
        .zip(&base)
        .map(|(&m, &b)| m as f64 / b.max(1) as f64)
        .collect();
    ratios.sort_by(f64::total_cmp);
    Ok(OverheadReport {
        modulated_ns: median(modulated),
        baseline_ns: median(base),
        ratio: ratios[ratios.len() / 2],
        samples,
    })
}

pub fn overhead_report(config: &TraceConfig) -> Result<OverheadReport, HarnessError> {
    overhead_report_with(config, &config.parser(Lexicon::bundled()), OVERHEAD_SAMPLES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub step: usize,
    pub theta: f64,
    pub temperature: f64,
    pub raw_field: FileRef,
    pub modulated_field: FileRef,
    pub raw_metrics: LeakageReport,
    pub metrics: LeakageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean_overlap: Option<f64>,
    pub max_overlap: Option<f64>,
    pub mean_entropy: f64,
    pub mean_top_mass: f64,
}

impl MetricSummary {
    pub fn from_reports<'a, I>(reports: I) -> Self
    where
        I: IntoIterator<Item = &'a LeakageReport>,
        I::IntoIter: Clone,
    {
        let it = reports.into_iter();
        let overlaps: Vec<f64> = it.clone().filter_map(|r| r.inter_entity_overlap).collect();
        Self {
            mean_overlap: mean_of(overlaps.iter().copied()),
            max_overlap: overlaps.iter().copied().reduce(f64::max),
            mean_entropy: mean_of(it.clone().map(|r| r.mean_patch_entropy)).unwrap_or(0.0),
            mean_top_mass: mean_of(it.map(|r| r.top_mass_region_size)).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub raw: MetricSummary,
    pub modulated: MetricSummary,
}

impl Trace {
    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            raw: MetricSummary::from_reports(self.steps.iter().map(|s| &s.raw_metrics)),
            modulated: MetricSummary::from_reports(self.steps.iter().map(|s| &s.metrics)),
        }
    }
}

/// Manifest written next to the tensors. Holds nothing run-dependent besides
/// the config, so a fixed config reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub status: String,
    pub prompt: String,
    pub config: TraceConfig,
    pub parse: ParsedPrompt,
    pub steps: Vec<StepEntry>,
    pub summary: TraceSummary,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("manifest serializes");
        serde_json::to_string_pretty(&value).expect("value serializes") + "\n"
    }

    pub fn output_paths(&self) -> impl Iterator<Item = &str> {
        self.steps
            .iter()
            .flat_map(|s| [s.raw_field.path.as_str(), s.modulated_field.path.as_str()])
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub attention_ns: Vec<u64>,
    pub total_ns: u64,
}

fn write_tensor(dir: &Path, name: String, field: &AttentionField) -> std::io::Result<FileRef> {
    let bytes = Tensor::from(field).to_bytes();
    write_atomic(&dir.join(&name), &bytes)?;
    Ok(FileRef {
        path: name,
        sha256: sha256_hex(&bytes),
    })
}

/// Writes per-step `ATNF` tensors, `manifest.json`, and `timing.json` into `dir`.
pub fn write_trace(trace: &Trace, dir: &Path) -> Result<RunManifest, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut steps = Vec::with_capacity(trace.steps.len());
    for rec in &trace.steps {
        steps.push(StepEntry {
            step: rec.step,
            theta: rec.theta,
            temperature: rec.temperature,
            raw_field: write_tensor(dir, format!("step_{:03}_raw.atnf", rec.step), &rec.raw)?,
            modulated_field: write_tensor(
                dir,
                format!("step_{:03}_modulated.atnf", rec.step),
                &rec.modulated,
            )?,
            raw_metrics: rec.raw_metrics.clone(),
            metrics: rec.metrics.clone(),
        });
    }
    let manifest = RunManifest {
        artifact: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: "ok".to_string(),
        prompt: trace.config.trace.prompt.clone(),
        config: trace.config.clone(),
        parse: trace.parsed.clone(),
        steps,
        summary: trace.summary(),
    };
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    let timing = TimingReport {
        attention_ns: trace.steps.iter().map(|s| s.attention_ns).collect(),
        total_ns: trace.steps.iter().map(|s| s.attention_ns).sum(),
    };
    let timing = serde_json::to_string_pretty(&timing).expect("timing serializes") + "\n";
    write_atomic(&dir.join(TIMING_FILE), timing.as_bytes())?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    SelfOnly,
    MaskOnly,
    ReweightOnly,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 5] = [
        Arm::Baseline,
        Arm::SelfOnly,
        Arm::MaskOnly,
        Arm::ReweightOnly,
        Arm::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::SelfOnly => "self_only",
            Arm::MaskOnly => "mask_only",
            Arm::ReweightOnly => "reweight_only",
            Arm::Full => "full",
        }
    }

    /// `base` with the arm's modulators switched on. Everything else,
    /// including tau and the schedule, is taken from `base`.
    pub fn configure(self, base: &TraceConfig) -> TraceConfig {
        let mut c = base.clone();
        let (self_on, mode) = match self {
            Arm::Baseline => (false, CrossMode::Off),
            Arm::SelfOnly => (true, CrossMode::Off),
            Arm::MaskOnly => (false, CrossMode::MaskOnly),
            Arm::ReweightOnly => (false, CrossMode::ReweightOnly),
            Arm::Full => (true, CrossMode::Both),
        };
        c.self_mod.enabled = self_on;
        c.cross_mod.mode = mode;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub overlap_per_step: Vec<Option<f64>>,
    pub raw_overlap_per_step: Vec<Option<f64>>,
    pub summary: MetricSummary,
    pub overhead: Option<OverheadReport>,
}

/// Runs the five ablation arms on the same seed.
pub fn run_ablation(
    config: &TraceConfig,
    parser: &PromptParser,
    overhead_samples: Option<usize>,
) -> Result<Vec<ArmSummary>, HarnessError> {
    Arm::ALL
        .iter()
        .map(|&arm| {
            let cfg = arm.configure(config);
            let trace = run_trace_with(&cfg, parser)?;
            let overhead = overhead_samples
                .map(|n| overhead_report_with(&cfg, parser, n))
                .transpose()?;
            Ok(ArmSummary {
                arm,
                overlap_per_step: trace.steps.iter().map(|s| s.metrics.inter_entity_overlap).collect(),
                raw_overlap_per_step: trace
                    .steps
                    .iter()
                    .map(|s| s.raw_metrics.inter_entity_overlap)
                    .collect(),
                summary: MetricSummary::from_reports(trace.steps.iter().map(|s| &s.metrics)),
                overhead,
            })
        })
        .collect()
}
