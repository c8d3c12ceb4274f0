//! Object-focused cross-attention masking and phase-wise reweighting.
//!
//! Per patch, the entity group with the largest summed attention wins; the
//! mask keeps that group's tokens plus every other-span token and zeroes the
//! rest. The weighted variant replaces the ones with `f_entity(theta)` and
//! `f_other(theta)`. Neither variant renormalizes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{normalize_field, AttentionField, AttnError};
use crate::parser::SpanLayout;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrossError {
    #[error("token index {index} outside field with {tokens} tokens")]
    SpanOutOfRange { index: usize, tokens: usize },
    #[error("prompt has no entity groups")]
    NoEntities,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Attn(#[from] AttnError),
}

/// Per-patch summed attention of each entity group, shape `H x W x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityScoreMap {
    h: usize,
    w: usize,
    m: usize,
    scores: Vec<f64>,
}

impl EntityScoreMap {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.m)
    }

    pub fn patch(&self, p: usize) -> &[f64] {
        &self.scores[p * self.m..(p + 1) * self.m]
    }

    pub fn get(&self, h: usize, w: usize, i: usize) -> f64 {
        self.scores[(h * self.w + w) * self.m + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.scores
    }
}

/// Winning entity per patch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchAssignment {
    h: usize,
    w: usize,
    winner: Vec<usize>,
}

impl PatchAssignment {
    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn winner(&self, p: usize) -> usize {
        self.winner[p]
    }

    pub fn winners(&self) -> &[usize] {
        &self.winner
    }

    /// Patch count won by each of `m` entities.
    pub fn region_sizes(&self, m: usize) -> Vec<usize> {
        let mut sizes = vec![0; m];
        for &i in &self.winner {
            sizes[i] += 1;
        }
        sizes
    }
}

/// Binary `H x W x T` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMask {
    h: usize,
    w: usize,
    t: usize,
    mask: Vec<u8>,
}

impl ObjectMask {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.t)
    }

    pub fn values(&self) -> &[u8] {
        &self.mask
    }

    pub fn patch_row(&self, p: usize) -> &[u8] {
        &self.mask[p * self.t..(p + 1) * self.t]
    }
}

/// Nonnegative `H x W x T` mask evaluated at one trajectory fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMask {
    h: usize,
    w: usize,
    t: usize,
    mask: Vec<f64>,
    pub theta: f64,
}

impl WeightedMask {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.t)
    }

    pub fn values(&self) -> &[f64] {
        &self.mask
    }

    pub fn patch_row(&self, p: usize) -> &[f64] {
        &self.mask[p * self.t..(p + 1) * self.t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    LinearUp,
    CosineUp,
    LinearDown,
    CosineDown,
    Constant,
}

impl CurveKind {
    pub const ENTITY: [CurveKind; 3] = [CurveKind::LinearUp, CurveKind::CosineUp, CurveKind::Constant];
    pub const OTHER: [CurveKind; 3] = [
        CurveKind::LinearDown,
        CurveKind::CosineDown,
        CurveKind::Constant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CurveKind::LinearUp => "linear_up",
            CurveKind::CosineUp => "cosine_up",
            CurveKind::LinearDown => "linear_down",
            CurveKind::CosineDown => "cosine_down",
            CurveKind::Constant => "constant",
        }
    }
}

/// A timestep weight curve between two endpoint weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub w0: f64,
    pub w1: f64,
}

impl Curve {
    pub fn new(kind: CurveKind, w0: f64, w1: f64) -> Self {
        Self { kind, w0, w1 }
    }

    pub fn constant(w: f64) -> Self {
        Self::new(CurveKind::Constant, w, w)
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let theta = theta.clamp(0.0, 1.0);
        match self.kind {
            CurveKind::Constant => self.w0,
            CurveKind::LinearUp | CurveKind::LinearDown => self.w0 + (self.w1 - self.w0) * theta,
            CurveKind::CosineUp | CurveKind::CosineDown => {
                self.w0 + (self.w1 - self.w0) * (1.0 - (PI * theta).cos()) / 2.0
            }
        }
    }

    fn check(&self, allowed: &[CurveKind], increasing: bool) -> Result<(), String> {
        if !allowed.contains(&self.kind) {
            return Err(format!("curve {} not allowed here", self.kind.name()));
        }
        let ws = [self.w0, self.w1];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(format!("weights must be finite and >= 0, got {ws:?}"));
        }
        let ordered = match self.kind {
            CurveKind::Constant => true,
            _ if increasing => self.w1 >= self.w0,
            _ => self.w1 <= self.w0,
        };
        if !ordered {
            let dir = if increasing { "w1 >= w0" } else { "w1 <= w0" };
            return Err(format!("{} requires {dir}", self.kind.name()));
        }
        Ok(())
    }
}

/// The pair of weight curves: entity weight rises, other-span weight falls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    entity: Curve,
    other: Curve,
}

impl PhaseSchedule {
    pub fn new(entity: Curve, other: Curve) -> Result<Self, String> {
        entity
            .check(&CurveKind::ENTITY, true)
            .map_err(|e| format!("entity_curve: {e}"))?;
        other
            .check(&CurveKind::OTHER, false)
            .map_err(|e| format!("other_curve: {e}"))?;
        Ok(Self { entity, other })
    }

    /// Both curves fixed at `w`.
    pub fn constant(w: f64) -> Self {
        Self::new(Curve::constant(w), Curve::constant(w)).expect("constant schedule")
    }

    pub fn unit() -> Self {
        Self::constant(1.0)
    }

    pub fn entity(&self) -> Curve {
        self.entity
    }

    pub fn other(&self) -> Curve {
        self.other
    }

    /// `(f_entity(theta), f_other(theta))`.
    pub fn weights(&self, theta: f64) -> (f64, f64) {
        (self.entity.eval(theta), self.other.eval(theta))
    }
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self::new(
            Curve::new(CurveKind::LinearUp, 0.5, 1.5),
            Curve::new(CurveKind::LinearDown, 1.5, 0.5),
        )
        .expect("default schedule")
    }
}

pub fn schedule_weights(sched: &PhaseSchedule, theta: f64) -> (f64, f64) {
    sched.weights(theta)
}

/// Which parts of the cross-attention control run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossMode {
    Off,
    MaskOnly,
    ReweightOnly,
    #[default]
    Both,
}

impl CrossMode {
    pub fn name(self) -> &'static str {
        match self {
            CrossMode::Off => "off",
            CrossMode::MaskOnly => "mask_only",
            CrossMode::ReweightOnly => "reweight_only",
            CrossMode::Both => "both",
        }
    }

    pub fn masks(self) -> bool {
        matches!(self, CrossMode::MaskOnly | CrossMode::Both)
    }
}

impl std::str::FromStr for CrossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            CrossMode::Off,
            CrossMode::MaskOnly,
            CrossMode::ReweightOnly,
            CrossMode::Both,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

fn check_layout(layout: &SpanLayout, tokens: usize) -> Result<(), CrossError> {
    if layout.entities.is_empty() {
        return Err(CrossError::NoEntities);
    }
    match layout.extent() {
        e if e > tokens => Err(CrossError::SpanOutOfRange {
            index: e - 1,
            tokens,
        }),
        _ => Ok(()),
    }
}

pub fn entity_scores(a: &AttentionField, layout: &SpanLayout) -> Result<EntityScoreMap, CrossError> {
    let (h, w, t) = a.shape();
    check_layout(layout, t)?;
    let m = layout.entity_count();
    let mut scores = Vec::with_capacity(h * w * m);
    for row in a.patch_rows() {
        scores.extend(layout.entities.iter().map(|s| row[s.clone()].iter().sum::<f64>()));
    }
    Ok(EntityScoreMap { h, w, m, scores })
}

/// Index of the first maximum, so ties go to the earliest entity.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn assign_patches(scores: &EntityScoreMap) -> PatchAssignment {
    let winner = (0..scores.h * scores.w)
        .map(|p| argmax_first(scores.patch(p)))
        .collect();
    PatchAssignment {
        h: scores.h,
        w: scores.w,
        winner,
    }
}

fn check_assignment(assign: &PatchAssignment, layout: &SpanLayout) -> Result<(), CrossError> {
    if assign.winner.iter().any(|&i| i >= layout.entity_count()) {
        return Err(CrossError::ShapeMismatch(
            "assignment references a missing entity".into(),
        ));
    }
    Ok(())
}

pub fn build_object_mask(
    assign: &PatchAssignment,
    layout: &SpanLayout,
    tokens: usize,
) -> Result<ObjectMask, CrossError> {
    check_layout(layout, tokens)?;
    check_assignment(assign, layout)?;
    let mut base = vec![0u8; tokens];
    for &o in &layout.other {
        base[o] = 1;
    }
    let mut mask = Vec::with_capacity(assign.winner.len() * tokens);
    for &win in &assign.winner {
        let start = mask.len();
        mask.extend_from_slice(&base);
        mask[start..][layout.entities[win].clone()].fill(1);
    }
    Ok(ObjectMask {
        h: assign.h,
        w: assign.w,
        t: tokens,
        mask,
    })
}

fn check_shape(
    a: &AttentionField,
    shape: (usize, usize, usize),
) -> Result<(), CrossError> {
    if a.shape() != shape {
        return Err(CrossError::ShapeMismatch(format!(
            "field {:?} vs mask {:?}",
            a.shape(),
            shape
        )));
    }
    Ok(())
}

pub fn apply_mask(a: &AttentionField, mask: &ObjectMask) -> Result<AttentionField, CrossError> {
    check_shape(a, mask.shape())?;
    let values = a
        .values()
        .iter()
        .zip(&mask.mask)
        .map(|(v, &m)| v * f64::from(m))
        .collect();
    let (h, w, t) = a.shape();
    Ok(AttentionField::from_parts(h, w, t, values, false))
}

pub fn build_weighted_mask(
    assign: &PatchAssignment,
    layout: &SpanLayout,
    tokens: usize,
    sched: &PhaseSchedule,
    theta: f64,
) -> Result<WeightedMask, CrossError> {
    check_layout(layout, tokens)?;
    check_assignment(assign, layout)?;
    let (fe, fo) = sched.weights(theta);
    let mut base = vec![0.0; tokens];
    for &o in &layout.other {
        base[o] = fo;
    }
    let mut mask = Vec::with_capacity(assign.winner.len() * tokens);
    for &win in &assign.winner {
        let start = mask.len();
        mask.extend_from_slice(&base);
        mask[start..][layout.entities[win].clone()].fill(fe);
    }
    Ok(WeightedMask {
        h: assign.h,
        w: assign.w,
        t: tokens,
        mask,
        theta,
    })
}

/// Reweighting without entity selection: every entity span gets
/// `f_entity(theta)` on every patch.
pub fn build_reweight_mask(
    h: usize,
    w: usize,
    layout: &SpanLayout,
    tokens: usize,
    sched: &PhaseSchedule,
    theta: f64,
) -> Result<WeightedMask, CrossError> {
    check_layout(layout, tokens)?;
    let (fe, fo) = sched.weights(theta);
    let mut row = vec![0.0; tokens];
    for &o in &layout.other {
        row[o] = fo;
    }
    for span in &layout.entities {
        row[span.clone()].fill(fe);
    }
    Ok(WeightedMask {
        h,
        w,
        t: tokens,
        mask: row.repeat(h * w),
        theta,
    })
}

pub fn apply_weighted_mask(
    a: &AttentionField,
    wmask: &WeightedMask,
) -> Result<AttentionField, CrossError> {
    check_shape(a, wmask.shape())?;
    let values = a.values().iter().zip(&wmask.mask).map(|(v, m)| v * m).collect();
    let (h, w, t) = a.shape();
    Ok(AttentionField::from_parts(h, w, t, values, false))
}

/// Returns `a` unchanged if already normalized, otherwise its normalization.
pub fn ensure_normalized(a: &AttentionField) -> Result<AttentionField, CrossError> {
    if a.is_normalized() {
        Ok(a.clone())
    } else {
        Ok(normalize_field(a)?)
    }
}

/// Full cross-attention control. Entity scores are taken on the normalized
/// field; `Off` returns the input untouched.
pub fn modulate_cross_attention(
    a: &AttentionField,
    layout: &SpanLayout,
    sched: &PhaseSchedule,
    theta: f64,
    mode: CrossMode,
) -> Result<AttentionField, CrossError> {
    if mode == CrossMode::Off {
        return Ok(a.clone());
    }
    let norm = ensure_normalized(a)?;
    let assign = match mode {
        CrossMode::MaskOnly | CrossMode::Both => Some(assign_patches(&entity_scores(&norm, layout)?)),
        _ => None,
    };
    modulate_with_assignment(&norm, layout, assign.as_ref(), sched, theta, mode)
}

/// Applies `mode` to an already normalized field with a precomputed patch
/// assignment (required for the masking modes).
pub fn modulate_with_assignment(
    norm: &AttentionField,
    layout: &SpanLayout,
    assign: Option<&PatchAssignment>,
    sched: &PhaseSchedule,
    theta: f64,
    mode: CrossMode,
) -> Result<AttentionField, CrossError> {
    let t = norm.tokens();
    let need = || CrossError::ShapeMismatch("masking mode needs a patch assignment".into());
    match mode {
        CrossMode::Off => Ok(norm.clone()),
        CrossMode::MaskOnly => {
            let assign = assign.ok_or_else(need)?;
            apply_mask(norm, &build_object_mask(assign, layout, t)?)
        }
        CrossMode::Both => {
            let assign = assign.ok_or_else(need)?;
            apply_weighted_mask(norm, &build_weighted_mask(assign, layout, t, sched, theta)?)
        }
        CrossMode::ReweightOnly => {
            let (h, w, _) = norm.shape();
            apply_weighted_mask(norm, &build_reweight_mask(h, w, layout, t, sched, theta)?)
        }
    }
}

/// Rescales each patch row to sum to 1; all-zero rows stay zero.
pub fn renormalize_rows(a: &AttentionField) -> AttentionField {
    let (h, w, t) = a.shape();
    let mut values = a.values().to_vec();
    for row in values.chunks_exact_mut(t) {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
    AttentionField::from_parts(h, w, t, values, false)
}
