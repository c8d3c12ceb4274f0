//! Run configuration file: UTF-8 JSON with `trace`, `self_mod`, `cross_mod`
//! and `parser` sections. Every key is optional and falls back to its default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cross_mod::{Curve, CurveKind, CrossMode, PhaseSchedule};
use crate::parser::{Lexicon, PromptParser, DEFAULT_ATTACH};
use crate::self_mod::SelfModConfig;

pub const DEFAULT_PROMPT: &str = "a boy in front of a female";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("config is not valid JSON: {0}")]
    Syntax(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

impl ConfigError {
    fn invalid(section: &str, field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: format!("{section}.{field}"),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceParams {
    pub prompt: String,
    pub height: usize,
    pub width: usize,
    /// Token capacity `T`; positions past the prompt act as padding.
    pub tokens: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub steps: usize,
    pub seed: u64,
    /// Uniform attention every prompt token receives.
    pub floor: f64,
    /// Peak height of each entity's spatial bump.
    pub bump: f64,
    /// Bump width in patches.
    pub sigma: f64,
    /// Initial bump-center jitter in patches; decays linearly to 0.
    pub jitter: f64,
    /// Multiplicative noise amplitude on cross-attention entries.
    pub noise: f64,
    /// Scale of positional features in the self-attention scores.
    pub self_gain: f64,
    /// Amplitude of smoothed noise added to queries and keys.
    pub self_noise: f64,
    /// Patch `[h, w]` whose self-attention row feeds the top-mass metric.
    pub ref_patch: Option<[usize; 2]>,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            prompt: DEFAULT_PROMPT.to_string(),
            height: 16,
            width: 16,
            tokens: 16,
            heads: 4,
            head_dim: 16,
            steps: 30,
            seed: 42,
            floor: 1.0,
            bump: 6.0,
            sigma: 3.0,
            jitter: 2.0,
            noise: 0.2,
            self_gain: 5.0,
            self_noise: 0.5,
            ref_patch: None,
        }
    }
}

impl TraceParams {
    pub fn patches(&self) -> usize {
        self.height * self.width
    }

    pub fn ref_patch(&self) -> [usize; 2] {
        self.ref_patch.unwrap_or([self.height / 2, self.width / 2])
    }

    pub fn theta(&self, step: usize) -> f64 {
        step as f64 / self.steps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossModConfig {
    pub mode: CrossMode,
    pub entity_curve: CurveKind,
    pub entity_w0: f64,
    pub entity_w1: f64,
    pub other_curve: CurveKind,
    pub other_w0: f64,
    pub other_w1: f64,
    /// Experimental: rescale masked rows back to unit mass.
    pub renormalize: bool,
    /// Experimental: reuse the last patch assignment once theta reaches this fraction.
    pub freeze_after: Option<f64>,
}

impl Default for CrossModConfig {
    fn default() -> Self {
        Self {
            mode: CrossMode::Both,
            entity_curve: CurveKind::LinearUp,
            entity_w0: 0.5,
            entity_w1: 1.5,
            other_curve: CurveKind::LinearDown,
            other_w0: 1.5,
            other_w1: 0.5,
            renormalize: false,
            freeze_after: None,
        }
    }
}

impl CrossModConfig {
    pub fn off() -> Self {
        Self {
            mode: CrossMode::Off,
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> Result<PhaseSchedule, String> {
        PhaseSchedule::new(
            Curve::new(self.entity_curve, self.entity_w0, self.entity_w1),
            Curve::new(self.other_curve, self.other_w0, self.other_w1),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParserConfig {
    pub attach: Vec<String>,
}

impl Default for ParserConfig {
    fn default() -> Self {
        Self {
            attach: DEFAULT_ATTACH.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Everything a trace run depends on. A fixed config yields a byte-identical trace.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub trace: TraceParams,
    pub self_mod: SelfModConfig,
    pub cross_mod: CrossModConfig,
    pub parser: ParserConfig,
}

impl TraceConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_data() && field != "." {
                ConfigError::Invalid {
                    field,
                    message: inner.to_string(),
                }
            } else {
                ConfigError::Syntax(inner.to_string())
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn parser(&self, lexicon: Lexicon) -> PromptParser {
        PromptParser::new(lexicon).with_attach(self.parser.attach.iter().cloned())
    }

    /// Same run with both modulators switched off.
    pub fn unmodulated(&self) -> Self {
        let mut c = self.clone();
        c.self_mod.enabled = false;
        c.cross_mod.mode = CrossMode::Off;
        c
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.trace;
        let positive = [
            ("height", t.height),
            ("width", t.width),
            ("tokens", t.tokens),
            ("heads", t.heads),
            ("head_dim", t.head_dim),
            ("steps", t.steps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::invalid("trace", name, "must be >= 1"));
            }
        }
        if t.prompt.trim().is_empty() {
            return Err(ConfigError::invalid("trace", "prompt", "must not be empty"));
        }
        let nonneg = [
            ("floor", t.floor),
            ("bump", t.bump),
            ("jitter", t.jitter),
            ("noise", t.noise),
            ("self_gain", t.self_gain),
            ("self_noise", t.self_noise),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid("trace", name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if t.floor + t.bump <= 0.0 {
            return Err(ConfigError::invalid("trace", "floor", "floor and bump cannot both be 0"));
        }
        if !(t.sigma.is_finite() && t.sigma > 0.0) {
            return Err(ConfigError::invalid("trace", "sigma", format!("must be positive, got {}", t.sigma)));
        }
        if let Some([h, w]) = t.ref_patch {
            if h >= t.height || w >= t.width {
                return Err(ConfigError::invalid("trace", "ref_patch", format!("[{h}, {w}] outside the grid")));
            }
        }
        self.self_mod
            .validate()
            .map_err(|(f, m)| ConfigError::invalid("self_mod", f, m))?;
        if let Err(e) = self.cross_mod.schedule() {
            let (field, msg) = e.split_once(": ").unwrap_or(("entity_curve", e.as_str()));
            return Err(ConfigError::invalid("cross_mod", field, msg));
        }
        if let Some(f) = self.cross_mod.freeze_after {
            if !(0.0..=1.0).contains(&f) {
                return Err(ConfigError::invalid("cross_mod", "freeze_after", format!("must lie in [0, 1], got {f}")));
            }
        }
        if self.parser.attach.iter().any(|w| w.trim().is_empty()) {
            return Err(ConfigError::invalid("parser", "attach", "entries must be non-empty words"));
        }
        Ok(())
    }
}
