//! Sign operators: deterministic sign, the two randomized sign operators and
//! the majority vote.
//!
//! `sign(0) = 0` everywhere. With that convention both randomized operators
//! also return 0 on a zero component, and a tied vote is neutral.

use thiserror::Error;

use crate::rng::RngStream;
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignError {
    #[error("randomized sign requires ||v||_2 <= B, got ||v||_2 = {norm} > B = {bound}")]
    BoundExceeded { norm: f64, bound: f64 },
    #[error("randomized sign bound must be positive and finite, got {0}")]
    InvalidBound(f64),
    #[error("majority vote over an empty set of workers")]
    EmptyVote,
    #[error("vote dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignVariant {
    Hard,
    /// `±sign(v_j)` with probabilities `1/2 ± |v_j| / (2B)`.
    RandomizedBipolar,
    /// `sign(v_j)` with probability `|v_j| / B`, otherwise 0.
    RandomizedSparse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignMode {
    pub variant: SignVariant,
    /// Norm bound `B`; only read by the randomized variants.
    pub bound: f64,
}

impl SignMode {
    pub const HARD: SignMode = SignMode {
        variant: SignVariant::Hard,
        bound: f64::INFINITY,
    };

    pub fn randomized(variant: SignVariant, bound: f64) -> Self {
        Self { variant, bound }
    }

    pub fn is_randomized(&self) -> bool {
        self.variant != SignVariant::Hard
    }

    /// Applies the operator. `rng` is only consumed by the randomized variants.
    pub fn apply(&self, v: &ParamVector, rng: &mut RngStream) -> Result<ParamVector, SignError> {
        match self.variant {
            SignVariant::Hard => Ok(hard_sign(v)),
            _ => randomized_sign(v, self, rng),
        }
    }
}

#[inline]
pub fn sign_scalar(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn hard_sign(v: &ParamVector) -> ParamVector {
    v.map(sign_scalar)
}

/// Randomized sign with `E[S_r(v)] = v / B`. One uniform draw per component,
/// in index order. Errors (never clips) when `||v||_2 > B`.
pub fn randomized_sign(
    v: &ParamVector,
    mode: &SignMode,
    rng: &mut RngStream,
) -> Result<ParamVector, SignError> {
    let bound = mode.bound;
    if !(bound.is_finite() && bound > 0.0) {
        return Err(SignError::InvalidBound(bound));
    }
    let norm = v.norm_l2();
    if norm > bound {
        return Err(SignError::BoundExceeded { norm, bound });
    }
    let mut out = ParamVector::zeros(v.len());
    for (j, &x) in v.iter().enumerate() {
        let u = rng.uniform();
        let s = sign_scalar(x);
        let ratio = x.abs() / bound;
        out[j] = match mode.variant {
            SignVariant::RandomizedBipolar => {
                if u < 0.5 + 0.5 * ratio {
                    s
                } else {
                    -s
                }
            }
            SignVariant::RandomizedSparse => {
                if u < ratio {
                    s
                } else {
                    0.0
                }
            }
            SignVariant::Hard => s,
        };
    }
    Ok(out)
}

/// `hard_sign` of the componentwise sum of the workers' signs.
pub fn majority_vote_sign(signs: &[ParamVector]) -> Result<ParamVector, SignError> {
    let first = signs.first().ok_or(SignError::EmptyVote)?;
    let mut sum = first.clone();
    for s in &signs[1..] {
        if s.len() != sum.len() {
            return Err(SignError::DimensionMismatch {
                expected: sum.len(),
                found: s.len(),
            });
        }
        sum.axpy(1.0, s);
    }
    Ok(hard_sign(&sum))
}

/// Exact `E||S_r(v) - v/B||^2` for the given variant.
pub fn randomized_sign_second_moment(v: &ParamVector, variant: SignVariant, bound: f64) -> f64 {
    let rel = v.norm_l2_sq() / (bound * bound);
    match variant {
        SignVariant::RandomizedBipolar => v.count_nonzero() as f64 - rel,
        SignVariant::RandomizedSparse => v.norm_l1() / bound - rel,
        SignVariant::Hard => {
            let h = hard_sign(v);
            h.sub(&v.scale(1.0 / bound)).norm_l2_sq()
        }
    }
}

/// Exact per-component variance of the randomized operator's output.
pub fn randomized_sign_component_variance(x: f64, variant: SignVariant, bound: f64) -> f64 {
    let r = x.abs() / bound;
    match variant {
        SignVariant::RandomizedBipolar => {
            if x == 0.0 {
                0.0
            } else {
                1.0 - r * r
            }
        }
        SignVariant::RandomizedSparse => r - r * r,
        SignVariant::Hard => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, Phase};
    use alloc::vec;
    use alloc::vec::Vec;

    fn rng() -> RngStream {
        derive_stream(11, 0, 0, Phase::Check)
    }

    #[test]
    fn hard_sign_definition() {
        let v = ParamVector::from([3.2, -0.1, 0.0]);
        assert_eq!(hard_sign(&v), ParamVector::from([1.0, -1.0, 0.0]));
        assert_eq!(hard_sign(&ParamVector::zeros(4)), ParamVector::zeros(4));
    }

    #[test]
    fn randomized_sign_saturates_at_the_bound() {
        for variant in [SignVariant::RandomizedBipolar, SignVariant::RandomizedSparse] {
            let mode = SignMode::randomized(variant, 2.5);
            let mut r = rng();
            for _ in 0..1000 {
                let s = randomized_sign(&ParamVector::from([-2.5]), &mode, &mut r).unwrap();
                assert_eq!(s, ParamVector::from([-1.0]));
            }
        }
    }

    #[test]
    fn randomized_sign_of_zero_is_zero() {
        for variant in [SignVariant::RandomizedBipolar, SignVariant::RandomizedSparse] {
            let mode = SignMode::randomized(variant, 1.0);
            let mut r = rng();
            for _ in 0..1000 {
                let s = randomized_sign(&ParamVector::zeros(2), &mode, &mut r).unwrap();
                assert_eq!(s, ParamVector::zeros(2));
            }
        }
    }

    #[test]
    fn randomized_sign_rejects_oversized_input() {
        let mode = SignMode::randomized(SignVariant::RandomizedSparse, 1.0);
        let err = randomized_sign(&ParamVector::from([0.8, 0.8]), &mode, &mut rng()).unwrap_err();
        assert!(matches!(err, SignError::BoundExceeded { .. }));
    }

    #[test]
    fn sparse_frequency_matches_probability() {
        // P(output = 1) = |v|/B = 0.5; 10^6 draws, 4 standard errors.
        let mode = SignMode::randomized(SignVariant::RandomizedSparse, 1.0);
        let v = ParamVector::from([0.5]);
        let mut r = rng();
        let n = 1_000_000;
        let mut hits = 0u64;
        for _ in 0..n {
            if randomized_sign(&v, &mode, &mut r).unwrap()[0] == 1.0 {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        let se = libm::sqrt(0.25 / n as f64);
        assert!((freq - 0.5).abs() < 4.0 * se, "{freq}");
    }

    #[test]
    fn bipolar_mean_is_v_over_b() {
        let mode = SignMode::randomized(SignVariant::RandomizedBipolar, 1.0);
        let v = ParamVector::from([0.6, -0.8]);
        let mut r = rng();
        let n = 1_000_000;
        let mut sum = ParamVector::zeros(2);
        for _ in 0..n {
            sum.axpy(1.0, &randomized_sign(&v, &mode, &mut r).unwrap());
        }
        let mean = sum.scale(1.0 / n as f64);
        for j in 0..2 {
            let var = randomized_sign_component_variance(v[j], SignVariant::RandomizedBipolar, 1.0);
            let se = libm::sqrt(var / n as f64);
            assert!((mean[j] - v[j]).abs() < 4.0 * se, "{mean:?}");
        }
    }

    #[test]
    fn majority_vote_examples() {
        let vote = |xs: Vec<ParamVector>| majority_vote_sign(&xs).unwrap();
        assert_eq!(
            vote(vec![[1.0].into(), [1.0].into(), [-1.0].into()]),
            ParamVector::from([1.0])
        );
        assert_eq!(vote(vec![[1.0].into(), [-1.0].into()]), ParamVector::from([0.0]));
        assert_eq!(
            vote(vec![[1.0, 0.0].into(), [0.0, -1.0].into(), [1.0, -1.0].into()]),
            ParamVector::from([1.0, -1.0])
        );
        assert_eq!(majority_vote_sign(&[]), Err(SignError::EmptyVote));
    }

    #[test]
    fn closed_form_second_moments() {
        let v = ParamVector::from([0.5, 0.0, -0.25]);
        let b = 1.0;
        let bip = randomized_sign_second_moment(&v, SignVariant::RandomizedBipolar, b);
        let sp = randomized_sign_second_moment(&v, SignVariant::RandomizedSparse, b);
        assert!((bip - (2.0 - 0.3125)).abs() < 1e-15);
        assert!((sp - (0.75 - 0.3125)).abs() < 1e-15);
    }
}
