//! Early-phase temperature control of self-attention.

use serde::{Deserialize, Serialize};

use crate::attention::{tempered_self_attention, AttentionOutput, AttnError, SelfAttentionBatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfModConfig {
    pub tau: f64,
    /// Window start as a trajectory fraction, inclusive.
    pub gate_start: f64,
    /// Window end as a trajectory fraction, exclusive.
    pub gate_end: f64,
    pub enabled: bool,
}

impl Default for SelfModConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            gate_start: 0.0,
            gate_end: 0.3,
            enabled: true,
        }
    }
}

impl SelfModConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Returns the offending field name and reason on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(("tau", format!("must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.gate_start) {
            return Err(("gate_start", format!("must lie in [0, 1], got {}", self.gate_start)));
        }
        if !(0.0..=1.0).contains(&self.gate_end) {
            return Err(("gate_end", format!("must lie in [0, 1], got {}", self.gate_end)));
        }
        if self.gate_start >= self.gate_end {
            return Err((
                "gate_end",
                format!("must exceed gate_start ({} >= {})", self.gate_start, self.gate_end),
            ));
        }
        Ok(())
    }

    pub fn in_window(&self, theta: f64) -> bool {
        self.gate_start <= theta && theta < self.gate_end
    }

    pub fn effective_temperature(&self, theta: f64) -> f64 {
        if self.enabled && self.in_window(theta) {
            self.tau
        } else {
            1.0
        }
    }
}

pub fn effective_temperature(config: &SelfModConfig, theta: f64) -> f64 {
    config.effective_temperature(theta)
}

pub fn modulate_self_attention(
    batch: &SelfAttentionBatch,
    config: &SelfModConfig,
    theta: f64,
) -> Result<AttentionOutput, AttnError> {
    tempered_self_attention(batch, config.effective_temperature(theta))
}

/// Applies the temperature to every head separately, before any head merge.
pub fn modulate_heads(
    heads: &[SelfAttentionBatch],
    config: &SelfModConfig,
    theta: f64,
) -> Result<Vec<AttentionOutput>, AttnError> {
    heads
        .iter()
        .map(|b| modulate_self_attention(b, config, theta))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_window() {
        let c = SelfModConfig::default();
        assert_eq!(c.effective_temperature(0.0), 0.8);
        assert_eq!(c.effective_temperature(0.1), 0.8);
        assert_eq!(c.effective_temperature(0.3), 1.0);
        assert_eq!(c.effective_temperature(0.5), 1.0);
        let off = SelfModConfig::disabled();
        for th in [0.0, 0.1, 0.9] {
            assert_eq!(effective_temperature(&off, th), 1.0);
        }
    }

    #[test]
    fn validation() {
        assert!(SelfModConfig::default().validate().is_ok());
        let bad = |f: fn(&mut SelfModConfig)| {
            let mut c = SelfModConfig::default();
            f(&mut c);
            c.validate().unwrap_err().0
        };
        assert_eq!(bad(|c| c.tau = 0.0), "tau");
        assert_eq!(bad(|c| c.gate_start = -0.1), "gate_start");
        assert_eq!(bad(|c| c.gate_end = 1.5), "gate_end");
        assert_eq!(bad(|c| c.gate_start = 0.3), "gate_end");
    }
}
