//! Loop-by-loop recomputation of the cross-attention control, sharing no code
//! with [`crate::cross_mod`]. Meant for small instances only.

use std::f64::consts::PI;

use crate::attention::AttentionField;
use crate::cross_mod::{Curve, CurveKind, PhaseSchedule};
use crate::parser::SpanLayout;

fn curve_value(c: &Curve, theta: f64) -> f64 {
    let theta = theta.clamp(0.0, 1.0);
    match c.kind {
        CurveKind::Constant => c.w0,
        CurveKind::LinearUp | CurveKind::LinearDown => c.w0 + (c.w1 - c.w0) * theta,
        CurveKind::CosineUp | CurveKind::CosineDown => {
            c.w0 + (c.w1 - c.w0) * (1.0 - (PI * theta).cos()) / 2.0
        }
    }
}

/// Normalize, score entities, pick the winner per patch, weight the winner's
/// tokens by `f_entity(theta)` and other-span tokens by `f_other(theta)`.
/// All-zero patch rows stay zero.
pub fn oracle_pipeline(
    a: &AttentionField,
    layout: &SpanLayout,
    sched: &PhaseSchedule,
    theta: f64,
) -> AttentionField {
    let (hh, ww, tt) = a.shape();
    let fe = curve_value(&sched.entity(), theta);
    let fo = curve_value(&sched.other(), theta);
    let m = layout.entities.len();
    let mut out = vec![0.0; hh * ww * tt];
    for h in 0..hh {
        for w in 0..ww {
            let mut row = vec![0.0; tt];
            let mut total = 0.0;
            for (t, r) in row.iter_mut().enumerate() {
                *r = a.get(h, w, t);
                total += *r;
            }
            if !a.is_normalized() {
                for r in row.iter_mut() {
                    *r = if total > 0.0 { *r / total } else { 0.0 };
                }
            }
            let mut scores = vec![0.0; m];
            for (i, span) in layout.entities.iter().enumerate() {
                let mut acc = 0.0;
                for (t, r) in row.iter().enumerate() {
                    if t >= span.start && t < span.end {
                        acc += r;
                    }
                }
                scores[i] = acc;
            }
            let mut best = 0;
            for i in 1..m {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            for t in 0..tt {
                let win = &layout.entities[best];
                let in_winner = t >= win.start && t < win.end;
                let in_other = layout.other.contains(&t);
                out[(h * ww + w) * tt + t] = if in_winner {
                    row[t] * fe
                } else if in_other {
                    row[t] * fo
                } else {
                    0.0
                };
            }
        }
    }
    AttentionField::new(hh, ww, tt, out).expect("oracle output is nonnegative")
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;
    use crate::attention::normalize_field;

    #[test]
    fn zero_field_stays_zero() {
        let a = AttentionField::zeros(2, 2, 4);
        let l = SpanLayout::new(vec![0..2], vec![3]).unwrap();
        let out = oracle_pipeline(&a, &l, &PhaseSchedule::default(), 0.3);
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_full_span_is_normalization() {
        let a = AttentionField::new(1, 2, 3, vec![1.0, 2.0, 1.0, 0.5, 0.5, 3.0]).unwrap();
        let l = SpanLayout::new(vec![0..3], vec![]).unwrap();
        let out = oracle_pipeline(&a, &l, &PhaseSchedule::unit(), 0.0);
        assert_eq!(out.values(), normalize_field(&a).unwrap().values());
    }
}
