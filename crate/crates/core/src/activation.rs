//! SiLU, ReLU and magnitude thresholding of activations.

use serde::{Deserialize, Serialize};

use crate::error::{CatsError, Result};
use crate::kernel::Mask;
use crate::linalg::Vector;

/// Half-width of the band around the cutoff where the thresholded SiLU has
/// no derivative.
pub const KINK_WINDOW: f32 = 1e-4;

/// Beyond this magnitude the logistic function is saturated to 0 or 1.
const SIGMOID_SATURATION: f32 = 80.0;

/// A fitted magnitude cutoff for one thresholding site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub t: f32,
    pub target_sparsity: f64,
    pub layer_id: usize,
    pub sample_count: usize,
}

impl Threshold {
    pub fn new(t: f32, target_sparsity: f64, layer_id: usize, sample_count: usize) -> Result<Self> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(CatsError::InvalidConfig(format!(
                "threshold must be finite and non-negative, got {t}"
            )));
        }
        if !(0.0..1.0).contains(&target_sparsity) {
            return Err(CatsError::InvalidSparsity(target_sparsity));
        }
        Ok(Self {
            t,
            target_sparsity,
            layer_id,
            sample_count,
        })
    }

    /// A cutoff of exactly `t` with no calibration behind it.
    pub fn fixed(t: f32) -> Self {
        assert!(t >= 0.0, "threshold must be non-negative");
        Self {
            t,
            target_sparsity: 0.0,
            layer_id: 0,
            sample_count: 0,
        }
    }

    /// Keeps everything.
    pub fn zero() -> Self {
        Self::fixed(0.0)
    }

    #[inline]
    pub fn keeps(&self, value: f32) -> bool {
        value.abs() >= self.t
    }
}

/// Elementwise nonlinearity feeding the gate of a Gated-MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[default]
    Silu,
    Relu,
}

impl ActivationKind {
    #[inline]
    pub fn apply_scalar(self, u: f32) -> f32 {
        match self {
            ActivationKind::Silu => silu_scalar(u),
            ActivationKind::Relu => u.max(0.0),
        }
    }

    pub fn apply(self, u: &[f32]) -> Vector {
        u.iter().map(|&x| self.apply_scalar(x)).collect()
    }
}

#[inline]
pub fn sigmoid(u: f32) -> f32 {
    if u > SIGMOID_SATURATION {
        1.0
    } else if u < -SIGMOID_SATURATION {
        0.0
    } else if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu_scalar(u: f32) -> f32 {
    u * sigmoid(u)
}

pub fn silu(v: &[f32]) -> Vector {
    v.iter().map(|&x| silu_scalar(x)).collect()
}

pub fn relu(v: &[f32]) -> Vector {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Zeroes every entry whose magnitude is below the cutoff; `|v| == t` survives.
pub fn cats_apply(v: &[f32], t: &Threshold) -> Vector {
    v.iter().map(|&x| if t.keeps(x) { x } else { 0.0 }).collect()
}

pub fn cats_silu(u: &[f32], t: &Threshold) -> Vector {
    cats_apply(&silu(u), t)
}

pub fn mask_from(v: &[f32], t: &Threshold) -> Mask {
    Mask::from_fn(v.len(), |j| t.keeps(v[j]))
}

/// Derivative of `cats_silu` with respect to its pre-activation input.
///
/// Rejects inputs whose |silu(u)| lies within [`KINK_WINDOW`] of a positive
/// cutoff, where the function jumps.
pub fn cats_silu_derivative(u: &[f32], t: &Threshold) -> Result<Vector> {
    u.iter()
        .enumerate()
        .map(|(j, &x)| {
            let s = sigmoid(x);
            let mag = (x * s).abs();
            if t.t > 0.0 && (mag - t.t).abs() < KINK_WINDOW {
                return Err(CatsError::NearThreshold {
                    index: j,
                    magnitude: mag,
                    threshold: t.t,
                    window: KINK_WINDOW,
                });
            }
            Ok(if mag >= t.t { s * (1.0 + x * (1.0 - s)) } else { 0.0 })
        })
        .collect::<Result<Vec<f32>>>()
        .map(Vector::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn silu_examples() {
        assert_eq!(silu_scalar(0.0), 0.0);
        assert!((silu_scalar(1.0) - 0.731_058_6).abs() < 1e-6);
        let s = silu_scalar(20.0);
        assert!((19.9999..=20.0).contains(&s), "{s}");
        assert_eq!(silu_scalar(100.0), 100.0);
        assert_eq!(silu_scalar(-100.0), -0.0);
        assert!(silu_scalar(-30.0).abs() < 1e-10);
    }

    #[test]
    fn relu_examples() {
        assert_eq!(&*relu(&[-1.0, 2.0, 0.0]), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn cats_apply_examples() {
        let t = Threshold::fixed(0.15);
        assert_eq!(&*cats_apply(&[0.1, -0.2, 0.0, 0.16], &t), &[0.0, -0.2, 0.0, 0.16]);
        let v = [0.3, -0.01, 5.0];
        assert_eq!(&*cats_apply(&v, &Threshold::zero()), &v);
        assert_eq!(&*cats_apply(&[-0.15, 0.15], &t), &[-0.15, 0.15]);
    }

    #[test]
    fn cats_silu_examples() {
        let u = [-3.0, -0.5, 0.0, 0.4, 2.5];
        assert_eq!(cats_silu(&u, &Threshold::zero()), silu(&u));
        let big = Threshold::fixed(10.0);
        assert!(cats_silu(&u, &big).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cats_silu_median_zeroes_lower_half() {
        let u = crate::linalg::random_vector(101, 77, 1.5);
        let s = silu(&u);
        let mut mags: Vec<f32> = s.iter().map(|x| x.abs()).collect();
        mags.sort_by(f32::total_cmp);
        let median = mags[50];
        let out = cats_silu(&u, &Threshold::fixed(median));
        for j in 0..u.len() {
            if s[j].abs() < median {
                assert_eq!(out[j], 0.0);
            } else {
                assert_eq!(out[j], s[j]);
            }
        }
        assert_eq!(out.iter().filter(|&&x| x == 0.0).count(), 50);
    }

    #[test]
    fn mask_examples() {
        let m = mask_from(&[0.1, -0.2, 0.0, 0.16], &Threshold::fixed(0.15));
        assert_eq!(m.to_bits(), vec![false, true, false, true]);
        assert_eq!(m.popcount(), 2);
        assert_eq!(mask_from(&[0.0, -1.0], &Threshold::zero()).popcount(), 2);
        assert_eq!(mask_from(&[0.0; 5], &Threshold::fixed(0.1)).popcount(), 0);
    }

    #[test]
    fn derivative_examples() {
        let d = cats_silu_derivative(&[0.0], &Threshold::zero()).unwrap();
        assert_eq!(d[0], 0.5);
        let d = cats_silu_derivative(&[0.05], &Threshold::fixed(0.5)).unwrap();
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn derivative_rejects_kink() {
        let t = Threshold::fixed(silu_scalar(1.0));
        let err = cats_silu_derivative(&[0.2, 1.0], &t).unwrap_err();
        assert!(matches!(err, CatsError::NearThreshold { index: 1, .. }));
    }

    #[test]
    fn threshold_validation() {
        assert!(Threshold::new(-0.1, 0.5, 0, 1).is_err());
        assert!(Threshold::new(0.1, 1.0, 0, 1).is_err());
        assert!(Threshold::new(0.1, 0.99, 0, 1).is_ok());
    }

    proptest! {
        #[test]
        fn idempotent(v in prop::collection::vec(-5.0f32..5.0, 0..64), t in 0.0f32..3.0) {
            let t = Threshold::fixed(t);
            let once = cats_apply(&v, &t);
            prop_assert_eq!(cats_apply(&once, &t), once);
        }

        #[test]
        fn monotone_sparsity(v in prop::collection::vec(-5.0f32..5.0, 0..64), a in 0.0f32..3.0, b in 0.0f32..3.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let m_lo = mask_from(&v, &Threshold::fixed(lo));
            let m_hi = mask_from(&v, &Threshold::fixed(hi));
            prop_assert!(m_lo.popcount() >= m_hi.popcount());
        }

        #[test]
        fn nonzero_only_under_mask_and_sign_kept(v in prop::collection::vec(-5.0f32..5.0, 0..64), t in 0.0f32..3.0) {
            let t = Threshold::fixed(t);
            let out = cats_apply(&v, &t);
            let mask = mask_from(&v, &t);
            for j in 0..v.len() {
                if out[j] != 0.0 {
                    prop_assert!(mask.is_set(j));
                    prop_assert_eq!(out[j].signum(), v[j].signum());
                }
                if mask.is_set(j) {
                    prop_assert_eq!(out[j], v[j]);
                }
            }
        }

        #[test]
        fn zero_threshold_is_bit_exact_silu(u in prop::collection::vec(-100.0f32..100.0, 0..64)) {
            let a = cats_silu(&u, &Threshold::zero());
            let b = silu(&u);
            prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
