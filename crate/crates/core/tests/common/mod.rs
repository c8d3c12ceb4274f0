#![allow(dead_code)]

use attnmod::{AttentionField, Matrix, SelfAttentionBatch, SpanLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, dk: usize, dv: usize) -> SelfAttentionBatch {
    SelfAttentionBatch::new(
        random_matrix(rng, n, dk),
        random_matrix(rng, n, dk),
        random_matrix(rng, n, dv),
    )
    .unwrap()
}

/// Untempered scaled dot-product attention written out scalar by scalar.
pub fn reference_attention(b: &SelfAttentionBatch) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (q, k, v) = (b.q(), b.k(), b.v());
    let n = q.rows();
    let dk = q.cols();
    let dv = v.cols();
    let mut weights = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = vec![0.0; k.rows()];
        for (j, sj) in s.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..dk {
                acc += q[(i, c)] * k[(j, c)];
            }
            *sj = acc / (dk as f64).sqrt();
        }
        let m = s.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let w: Vec<f64> = e.iter().map(|x| x / z).collect();
        let mut o = vec![0.0; dv];
        for (j, wj) in w.iter().enumerate() {
            for c in 0..dv {
                o[c] += wj * v[(j, c)];
            }
        }
        weights.push(w);
        outputs.push(o);
    }
    (weights, outputs)
}

/// Small random cross-attention instance: `H, W <= 3`, `T <= 6`, `m <= 3`,
/// values on a quarter grid with every patch row carrying some mass.
pub struct Instance {
    pub field: AttentionField,
    pub layout: SpanLayout,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let h = rng.random_range(1..=3);
    let w = rng.random_range(1..=3);
    let t = rng.random_range(1..=6);
    let m = rng.random_range(1..=t.min(3));
    // gap0, span1, gap1, ..., span_m, gap_m
    let mut slots = vec![0usize; 2 * m + 1];
    for i in 0..m {
        slots[2 * i + 1] = 1;
    }
    for _ in 0..t - m {
        let s = rng.random_range(0..slots.len());
        slots[s] += 1;
    }
    let mut spans = Vec::new();
    let mut other = Vec::new();
    let mut pos = 0;
    for (i, &len) in slots.iter().enumerate() {
        if i % 2 == 1 {
            spans.push(pos..pos + len);
        } else {
            for tok in pos..pos + len {
                if rng.random_bool(0.5) {
                    other.push(tok);
                }
            }
        }
        pos += len;
    }
    let mut values: Vec<f64> = (0..h * w * t)
        .map(|_| f64::from(rng.random_range(0..=4u8)) * 0.25)
        .collect();
    for row in values.chunks_exact_mut(t) {
        if row.iter().all(|&v| v == 0.0) {
            let i = rng.random_range(0..t);
            row[i] = 0.25;
        }
    }
    Instance {
        field: AttentionField::new(h, w, t, values).unwrap(),
        layout: SpanLayout::new(spans, other).unwrap(),
    }
}
