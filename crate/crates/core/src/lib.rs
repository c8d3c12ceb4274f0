//! Training-free attention modulation for text-to-image diffusion, at desk scale.
//!
//! The pieces:
//!
//! - [`parser`]: splits a prompt into entity groups and other spans.
//! - [`attention`]: softmax with temperature, scaled dot-product attention,
//!   entropy, and the [`AttentionField`] container.
//! - [`self_mod`]: temperature-sharpened self-attention inside an early gate window.
//! - [`cross_mod`]: per-patch entity masking and timestep-dependent reweighting.
//! - [`harness`]: a seeded synthetic trace that drives both, plus leakage metrics.
//! - [`oracle`]: an independent loop implementation used to cross-check `cross_mod`.
//! - [`render`], [`atnf`]: PGM heatmaps and the binary tensor format.

pub mod atnf;
pub mod attention;
pub mod config;
pub mod cross_mod;
pub mod harness;
pub mod oracle;
pub mod parser;
pub mod render;
pub mod self_mod;

pub use attention::{
    normalize_field, row_entropy, softmax_rows, tempered_self_attention, AttentionField,
    AttentionOutput, AttnError, Matrix, PatchDistribution, SelfAttentionBatch,
};
pub use config::{ConfigError, CrossModConfig, TraceConfig, TraceParams};
pub use cross_mod::{
    apply_mask, apply_weighted_mask, assign_patches, build_object_mask, build_weighted_mask,
    entity_scores, modulate_cross_attention, schedule_weights, CrossError, CrossMode, Curve,
    CurveKind, EntityScoreMap, ObjectMask, PatchAssignment, PhaseSchedule, WeightedMask,
};
pub use harness::{
    inter_entity_overlap, overhead_report, run_ablation, run_trace, synth_attention, trace_step,
    write_trace, Arm, HarnessError, LeakageReport, OverheadReport, RunManifest, StepRecord, Trace,
};
pub use oracle::oracle_pipeline;
pub use parser::{
    parse_prompt, tokenize, EntityGroup, Lexicon, ParseError, ParsedPrompt, PromptParser,
    SpanLayout, Tag, Token,
};
pub use self_mod::{effective_temperature, modulate_self_attention, SelfModConfig};
