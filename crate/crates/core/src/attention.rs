//! Dense attention kernels and the containers the modulators operate on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums of a normalized field must hit 1 within this bound.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttnError {
    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTemperature(f64),
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("negative value in attention field")]
    NegativeValue,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("distribution is not normalized (sum {0})")]
    NotNormalized(f64),
    #[error("patch ({h}, {w}) has zero attention mass")]
    ZeroRow { h: usize, w: usize },
}

/// Row-major dense matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AttnError> {
        if data.len() != rows * cols {
            return Err(AttnError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AttnError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AttnError::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn scale(mut self, k: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= k);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, AttnError> {
        if self.cols != other.rows {
            return Err(AttnError::ShapeMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix, AttnError> {
        if self.cols != other.cols {
            return Err(AttnError::ShapeMismatch(format!(
                "{}x{} * ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One attention head: queries and keys over `N = H*W` patches plus values.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionBatch {
    q: Matrix,
    k: Matrix,
    v: Matrix,
}

impl SelfAttentionBatch {
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self, AttnError> {
        if q.cols() == 0 || q.rows() == 0 {
            return Err(AttnError::ShapeMismatch("empty query matrix".into()));
        }
        if q.cols() != k.cols() {
            return Err(AttnError::ShapeMismatch(format!(
                "query dim {} vs key dim {}",
                q.cols(),
                k.cols()
            )));
        }
        if k.rows() != v.rows() {
            return Err(AttnError::ShapeMismatch(format!(
                "{} keys vs {} values",
                k.rows(),
                v.rows()
            )));
        }
        if !(q.is_finite() && k.is_finite() && v.is_finite()) {
            return Err(AttnError::NonFiniteInput);
        }
        Ok(Self { q, k, v })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn k(&self) -> &Matrix {
        &self.k
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn head_dim(&self) -> usize {
        self.q.cols()
    }

    pub fn patches(&self) -> usize {
        self.q.rows()
    }

    /// `QK^T / sqrt(d_k)`.
    pub fn scaled_scores(&self) -> Matrix {
        let s = self.q.matmul_t(&self.k).expect("shapes checked in new");
        s.scale(1.0 / (self.head_dim() as f64).sqrt())
    }
}

fn check_temperature(t: f64) -> Result<(), AttnError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(AttnError::NonPositiveTemperature(t))
    }
}

/// Softmax of `row / temperature`, written into `out`. Uses max subtraction.
pub fn softmax_into(row: &[f64], temperature: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = ((x - max) / temperature).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Row-wise softmax with temperature.
pub fn softmax_rows(scores: &Matrix, temperature: f64) -> Result<Matrix, AttnError> {
    check_temperature(temperature)?;
    if !scores.is_finite() {
        return Err(AttnError::NonFiniteInput);
    }
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        softmax_into(scores.row(r), temperature, out.row_mut(r));
    }
    Ok(out)
}

/// Output of one self-attention evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub weights: Matrix,
    pub output: Matrix,
}

/// `softmax(QK^T / (tau * sqrt(d_k))) V`. The temperature divides the
/// already scaled scores, so `tau = 1` runs the plain attention path.
pub fn tempered_self_attention(
    batch: &SelfAttentionBatch,
    temperature: f64,
) -> Result<AttentionOutput, AttnError> {
    check_temperature(temperature)?;
    let weights = softmax_rows(&batch.scaled_scores(), temperature)?;
    let output = weights.matmul(batch.v())?;
    Ok(AttentionOutput { weights, output })
}

/// A single patch's distribution over tokens (or patches).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDistribution(Vec<f64>);

impl PatchDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, AttnError> {
        check_simplex(&probs)?;
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn entropy(&self) -> f64 {
        entropy_unchecked(&self.0)
    }
}

fn check_simplex(p: &[f64]) -> Result<(), AttnError> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(AttnError::NonFiniteInput);
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(AttnError::NotNormalized(sum));
    }
    Ok(())
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn row_entropy(probs: &[f64]) -> Result<f64, AttnError> {
    check_simplex(probs)?;
    Ok(entropy_unchecked(probs).max(0.0))
}

/// Number of largest entries needed to cover `fraction` of the row's mass.
pub fn top_mass_count(row: &[f64], fraction: f64) -> usize {
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut sorted = row.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let target = fraction * total;
    let mut acc = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        acc += v;
        if acc >= target {
            return i + 1;
        }
    }
    sorted.len()
}

/// Cross-attention map of shape `H x W x T`, stored with the token axis
/// innermost so each patch row is contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionField {
    h: usize,
    w: usize,
    t: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl AttentionField {
    pub fn new(h: usize, w: usize, t: usize, values: Vec<f64>) -> Result<Self, AttnError> {
        if h == 0 || w == 0 || t == 0 {
            return Err(AttnError::ShapeMismatch(format!("degenerate shape {h}x{w}x{t}")));
        }
        if values.len() != h * w * t {
            return Err(AttnError::ShapeMismatch(format!(
                "{} values for a {h}x{w}x{t} field",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AttnError::NonFiniteInput);
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(AttnError::NegativeValue);
        }
        Ok(Self {
            h,
            w,
            t,
            values,
            normalized: false,
        })
    }

    pub fn zeros(h: usize, w: usize, t: usize) -> Self {
        Self {
            h,
            w,
            t,
            values: vec![0.0; h * w * t],
            normalized: false,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.t)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn tokens(&self) -> usize {
        self.t
    }

    pub fn patches(&self) -> usize {
        self.h * self.w
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, h: usize, w: usize, t: usize) -> f64 {
        self.values[(h * self.w + w) * self.t + t]
    }

    /// Token row of patch `p = h * W + w`.
    pub fn patch_row(&self, p: usize) -> &[f64] {
        &self.values[p * self.t..(p + 1) * self.t]
    }

    pub fn patch_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.t)
    }

    /// The `H x W` slice for token `t`.
    pub fn token_slice(&self, t: usize) -> Matrix {
        let data = (0..self.patches()).map(|p| self.values[p * self.t + t]).collect();
        Matrix::from_vec(self.h, self.w, data).expect("slice shape")
    }

    pub(crate) fn from_parts(
        h: usize,
        w: usize,
        t: usize,
        values: Vec<f64>,
        normalized: bool,
    ) -> Self {
        debug_assert_eq!(values.len(), h * w * t);
        Self {
            h,
            w,
            t,
            values,
            normalized,
        }
    }

    /// Sets the `normalized` flag after checking every patch row sums to 1.
    pub fn mark_normalized(mut self) -> Result<Self, AttnError> {
        for row in self.patch_rows() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(AttnError::NotNormalized(sum));
            }
        }
        self.normalized = true;
        Ok(self)
    }
}

/// Divides every patch row by its sum.
pub fn normalize_field(field: &AttentionField) -> Result<AttentionField, AttnError> {
    let (h, w, t) = field.shape();
    let mut values = field.values.clone();
    for (p, row) in values.chunks_exact_mut(t).enumerate() {
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            return Err(AttnError::ZeroRow { h: p / w, w: p % w });
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(AttentionField::from_parts(h, w, t, values, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        let s = Matrix::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap();
        assert!(close(softmax_rows(&s, 1.0).unwrap().row(0), &[0.25, 0.75], 1e-15));
        assert!(close(softmax_rows(&s, 0.5).unwrap().row(0), &[0.1, 0.9], 1e-15));
        let c = Matrix::from_rows(&[vec![7.0; 3]]).unwrap();
        for t in [0.1, 1.0, 5.0] {
            assert!(close(softmax_rows(&c, t).unwrap().row(0), &[1.0 / 3.0; 3], 1e-15));
        }
    }

    #[test]
    fn softmax_errors() {
        let s = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(softmax_rows(&s, 0.0), Err(AttnError::NonPositiveTemperature(0.0)));
        assert!(softmax_rows(&s, -1.0).is_err());
        assert!(softmax_rows(&s, f64::NAN).is_err());
        let bad = Matrix::from_rows(&[vec![0.0, f64::INFINITY]]).unwrap();
        assert_eq!(softmax_rows(&bad, 1.0), Err(AttnError::NonFiniteInput));
    }

    #[test]
    fn softmax_survives_tiny_temperature() {
        let s = Matrix::from_rows(&[vec![100.0, 99.0, -50.0]]).unwrap();
        let p = softmax_rows(&s, 1e-3).unwrap();
        assert!(p.is_finite());
        assert!(close(p.row(0), &[1.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn saturation_to_identity() {
        let q = Matrix::identity(3).scale(10.0);
        let v = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let b = SelfAttentionBatch::new(q.clone(), q, v).unwrap();
        let out = tempered_self_attention(&b, 0.05).unwrap();
        assert!(close(out.weights.as_slice(), Matrix::identity(3).as_slice(), 1e-12));
        assert!(close(out.output.as_slice(), b.v().as_slice(), 1e-10));
    }

    #[test]
    fn batch_shape_checks() {
        let a = Matrix::zeros(4, 2);
        let b = Matrix::zeros(4, 3);
        assert!(matches!(
            SelfAttentionBatch::new(a.clone(), b.clone(), b.clone()),
            Err(AttnError::ShapeMismatch(_))
        ));
        assert!(SelfAttentionBatch::new(a.clone(), a.clone(), Matrix::zeros(3, 2)).is_err());
        let b = SelfAttentionBatch::new(a.clone(), a.clone(), a).unwrap();
        assert!(tempered_self_attention(&b, 0.0).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(row_entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((row_entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((row_entropy(&[0.1, 0.9]).unwrap() - 0.3251).abs() < 1e-4);
        assert!(matches!(row_entropy(&[0.5, 0.6]), Err(AttnError::NotNormalized(_))));
        let d = PatchDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!((d.entropy() - 2f64.ln()).abs() < 1e-15);
        assert!(PatchDistribution::new(vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let f = AttentionField::new(1, 1, 3, vec![1.0, 1.0, 2.0]).unwrap();
        let n = normalize_field(&f).unwrap();
        assert!(n.is_normalized());
        assert_eq!(n.values(), &[0.25, 0.25, 0.5]);
        let n2 = normalize_field(&n).unwrap();
        assert!(close(n.values(), n2.values(), 1e-12));

        let z = AttentionField::new(1, 2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(normalize_field(&z), Err(AttnError::ZeroRow { h: 0, w: 1 }));
    }

    #[test]
    fn field_validation() {
        assert_eq!(
            AttentionField::new(1, 1, 2, vec![-1.0, 1.0]),
            Err(AttnError::NegativeValue)
        );
        assert!(AttentionField::new(1, 1, 2, vec![1.0]).is_err());
        assert!(AttentionField::new(0, 1, 2, vec![]).is_err());
        let f = AttentionField::new(1, 1, 2, vec![0.3, 0.3]).unwrap();
        assert!(f.mark_normalized().is_err());
    }

    #[test]
    fn top_mass() {
        assert_eq!(top_mass_count(&[0.05, 0.9, 0.05], 0.9), 1);
        assert_eq!(top_mass_count(&[0.25; 4], 0.9), 4);
        assert_eq!(top_mass_count(&[0.0; 4], 0.9), 0);
    }

    #[test]
    fn token_slice_layout() {
        let vals: Vec<f64> = (0..12).map(f64::from).collect();
        let f = AttentionField::new(2, 2, 3, vals).unwrap();
        assert_eq!(f.token_slice(1).as_slice(), &[1.0, 4.0, 7.0, 10.0]);
        assert_eq!(f.get(1, 0, 2), 8.0);
    }
}
