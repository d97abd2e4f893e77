//! Minimal deterministic tensor math with hand-derived gradients.
//!
//! Everything the model needs is implemented here in plain `f64` so that
//! every analytic gradient can be checked against central finite
//! differences. There is no autodiff graph: each operation that needs a
//! backward pass carries its own explicitly derived one.

mod adam;
mod lstm;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use lstm::{lstm_backward, lstm_forward, LstmGrads, LstmParams, LstmTrace};
pub(crate) use lstm::lstm_backward_acc;

use crate::error::{Error, Result};
use rand::Rng;
use std::ops::{Deref, DerefMut};

/// Probability floor applied before taking logs in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Train/eval switch for operations whose behavior differs between the two
/// (currently only dropout).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Dense vector of `f64` with a fixed length.
#[derive(Clone, Debug, PartialEq)]
pub struct Vec1(Vec<f64>);

impl Vec1 {
    /// Builds a vector, rejecting NaN/Inf anywhere.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericsError("non-finite entry in vector".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Construction without the finiteness check, for internal hot paths
    /// whose inputs are already validated.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn fill(&mut self, value: f64) {
        self.0.iter_mut().for_each(|v| *v = value);
    }
}

impl Deref for Vec1 {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vec1 {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Dense row-major matrix of `f64` with a fixed shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::NumericsError(format!(
                "matrix data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericsError("non-finite entry in matrix".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// out = m . v
pub(crate) fn matvec_into(m: &Mat2, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    for (o, row) in out.iter_mut().zip(m.rows_iter()) {
        *o = dot(row, v);
    }
}

/// out += m . v
pub(crate) fn matvec_acc(m: &Mat2, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    for (o, row) in out.iter_mut().zip(m.rows_iter()) {
        *o += dot(row, v);
    }
}

/// out += m^T . v
pub(crate) fn matvec_transposed_acc(m: &Mat2, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, out.len());
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        for (o, &mrc) in out.iter_mut().zip(m.row(r)) {
            *o += vr * mrc;
        }
    }
}

/// acc += u (outer) v
pub(crate) fn outer_acc(acc: &mut Mat2, u: &[f64], v: &[f64]) {
    debug_assert_eq!(acc.rows, u.len());
    debug_assert_eq!(acc.cols, v.len());
    for (r, &ur) in u.iter().enumerate() {
        if ur == 0.0 {
            continue;
        }
        for (a, &vc) in acc.row_mut(r).iter_mut().zip(v) {
            *a += ur * vc;
        }
    }
}

fn norms_checked(a: &Vec1, b: &Vec1) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::NumericsError(format!(
            "cosine similarity of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::NumericsError("cosine similarity of empty vectors".into()));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((na, nb))
}

/// Cosine similarity a.b / (|a||b|), clamped into [-1, 1].
///
/// Bitwise-identical inputs short-circuit to exactly 1.0: the identity
/// cos(v, v) = 1 must hold exactly (the divergence loss relies on it at run
/// start), and rounding in norm * norm cannot guarantee that.
pub fn cosine_similarity(a: &Vec1, b: &Vec1) -> Result<f64> {
    let (na, nb) = norms_checked(a, b)?;
    if a.as_ref() == b.as_ref() {
        return Ok(1.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Analytic gradient of [`cosine_similarity`] w.r.t. both arguments.
///
/// d cos / d a_i = b_i / (|a||b|) - cos . a_i / |a|^2, and symmetrically
/// for b.
pub fn cosine_similarity_grad(a: &Vec1, b: &Vec1) -> Result<(Vec1, Vec1)> {
    let (na, nb) = norms_checked(a, b)?;
    let s = if a.as_ref() == b.as_ref() {
        1.0
    } else {
        (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
    };
    let cross = na * nb;
    let aa = na * na;
    let bb = nb * nb;
    let grad_a: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(&ai, &bi)| bi / cross - s * ai / aa)
        .collect();
    let grad_b: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(&ai, &bi)| ai / cross - s * bi / bb)
        .collect();
    Ok((Vec1::from_raw(grad_a), Vec1::from_raw(grad_b)))
}

/// Numerically stable softmax (max subtraction before exponentiation).
pub fn softmax(logits: &Vec1) -> Vec1 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Vec1::from_raw(exps.iter().map(|&e| e / sum).collect())
}

/// Cross-entropy -log p[label], with probabilities clamped below at
/// [`PROB_FLOOR`] before the log.
pub fn cross_entropy(probs: &Vec1, label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::LabelError {
            label,
            classes: probs.len(),
        });
    }
    Ok(-(probs[label].max(PROB_FLOOR)).ln())
}

/// Inverted dropout. In train mode each entry is zeroed with probability
/// `p` and survivors are scaled by 1/(1-p); eval mode is the identity. The
/// returned mask holds the per-entry scale factor so the backward pass is
/// an elementwise product with it.
pub fn dropout<R: Rng>(v: &Vec1, p: f64, phase: Phase, rng: &mut R) -> Result<(Vec1, Vec1)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::ConfigError(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    match phase {
        Phase::Eval => {
            let mask = Vec1::from_raw(vec![1.0; v.len()]);
            Ok((v.clone(), mask))
        }
        Phase::Train => {
            if p == 0.0 {
                let mask = Vec1::from_raw(vec![1.0; v.len()]);
                return Ok((v.clone(), mask));
            }
            let keep_scale = 1.0 / (1.0 - p);
            let mask: Vec<f64> = (0..v.len())
                .map(|_| {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep_scale
                    }
                })
                .collect();
            let out: Vec<f64> = v.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
            Ok((Vec1::from_raw(out), Vec1::from_raw(mask)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_identity_is_exactly_one() {
        let v = Vec1::new(vec![0.3, -1.7, 2.9]).unwrap();
        assert_eq!(cosine_similarity(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        let a = Vec1::new(vec![1.0, 0.0]).unwrap();
        let b = Vec1::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn cosine_hand_oracle() {
        // (1,2,3).(4,5,6) = 32, norms sqrt(14) and sqrt(77)
        let a = Vec1::new(vec![1.0, 2.0, 3.0]).unwrap();
        let b = Vec1::new(vec![4.0, 5.0, 6.0]).unwrap();
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        assert!((cosine_similarity(&a, &b).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.974_631_846).abs() < 1e-9);
    }

    #[test]
    fn cosine_zero_norm_is_degenerate() {
        let a = Vec1::new(vec![0.0, 0.0]).unwrap();
        let b = Vec1::new(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            cosine_similarity(&a, &b),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn cosine_length_mismatch_errors() {
        let a = Vec1::new(vec![1.0]).unwrap();
        let b = Vec1::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            cosine_similarity(&a, &b),
            Err(Error::NumericsError(_))
        ));
    }

    #[test]
    fn cosine_grad_zero_at_identity() {
        let v = Vec1::new(vec![0.5, -2.0, 1.25]).unwrap();
        let (ga, gb) = cosine_similarity_grad(&v, &v).unwrap();
        assert!(ga.iter().all(|&g| g == 0.0));
        assert!(gb.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cosine_grad_symmetric_under_swap() {
        let a = Vec1::new(vec![1.0, 2.0, -0.5]).unwrap();
        let b = Vec1::new(vec![0.3, -1.0, 2.0]).unwrap();
        let (ga, gb) = cosine_similarity_grad(&a, &b).unwrap();
        let (gb2, ga2) = cosine_similarity_grad(&b, &a).unwrap();
        assert_eq!(ga.as_ref(), ga2.as_ref());
        assert_eq!(gb.as_ref(), gb2.as_ref());
    }

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&Vec1::new(vec![0.0, 0.0]).unwrap());
        assert_eq!(p.as_ref(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let logits = Vec1::new(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        let p = softmax(&logits);
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_logits_stable() {
        let p = softmax(&Vec1::new(vec![1000.0, 0.0]).unwrap());
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p[0] > 1.0 - 1e-12);
        assert!(p[1] < 1e-12);
    }

    #[test]
    fn cross_entropy_certain_label_is_zero() {
        let p = Vec1::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&p, 1).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_four_classes() {
        let p = Vec1::new(vec![0.25; 4]).unwrap();
        assert!((cross_entropy(&p, 2).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_quarter_probability() {
        let p = Vec1::new(vec![0.25, 0.5, 0.25]).unwrap();
        assert!((cross_entropy(&p, 0).unwrap() - (-0.25f64.ln())).abs() < 1e-12);
        assert!((cross_entropy(&p, 0).unwrap() - 1.386_294).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let p = Vec1::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            cross_entropy(&p, 2),
            Err(Error::LabelError { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn dropout_p_zero_is_identity() {
        let v = Vec1::new(vec![1.0, -2.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, mask) = dropout(&v, 0.0, Phase::Train, &mut rng).unwrap();
        assert_eq!(out.as_ref(), v.as_ref());
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let v = Vec1::new(vec![1.0, -2.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, mask) = dropout(&v, 0.5, Phase::Eval, &mut rng).unwrap();
        assert_eq!(out.as_ref(), v.as_ref());
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn dropout_p_one_rejected() {
        let v = Vec1::new(vec![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            dropout(&v, 1.0, Phase::Train, &mut rng),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn dropout_mean_preserved() {
        // Inverted dropout preserves the expectation; check the empirical
        // mean over 1e5 applications to a constant vector.
        let v = Vec1::new(vec![2.0; 8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut sums = vec![0.0; 8];
        for _ in 0..n {
            let (out, _) = dropout(&v, 0.5, Phase::Train, &mut rng).unwrap();
            for (s, o) in sums.iter_mut().zip(out.iter()) {
                *s += o;
            }
        }
        for s in sums {
            let mean = s / n as f64;
            assert!((mean - 2.0).abs() < 0.02, "mean {mean} drifted");
        }
    }

    #[test]
    fn vec1_rejects_non_finite() {
        assert!(Vec1::new(vec![1.0, f64::NAN]).is_err());
        assert!(Vec1::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn mat2_shape_checked() {
        assert!(Mat2::new(2, 3, vec![0.0; 5]).is_err());
        assert!(Mat2::new(2, 3, vec![0.0; 6]).is_ok());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-50.0f64..50.0, 1..16)) {
            let p = softmax(&Vec1::new(logits).unwrap());
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn softmax_permutation_equivariant(logits in proptest::collection::vec(-20.0f64..20.0, 2..10)) {
            let p = softmax(&Vec1::new(logits.clone()).unwrap());
            let mut reversed = logits.clone();
            reversed.reverse();
            let pr = softmax(&Vec1::new(reversed).unwrap());
            for (i, &v) in p.iter().enumerate() {
                prop_assert!((v - pr[logits.len() - 1 - i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_in_unit_interval(
            a in proptest::collection::vec(-10.0f64..10.0, 3..8),
            b in proptest::collection::vec(-10.0f64..10.0, 3..8),
        ) {
            let n = a.len().min(b.len());
            let va = Vec1::new(a[..n].to_vec()).unwrap();
            let vb = Vec1::new(b[..n].to_vec()).unwrap();
            if va.norm() > 0.0 && vb.norm() > 0.0 {
                let s = cosine_similarity(&va, &vb).unwrap();
                prop_assert!((-1.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn cosine_positive_scalar_multiple(
            v in proptest::collection::vec(0.1f64..10.0, 3..8),
            scale in 0.1f64..25.0,
        ) {
            let a = Vec1::new(v.clone()).unwrap();
            let b = Vec1::new(v.iter().map(|x| x * scale).collect()).unwrap();
            let s = cosine_similarity(&a, &b).unwrap();
            prop_assert!(s > 1.0 - 1e-12);
        }
    }
}
