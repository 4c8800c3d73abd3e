//! Minimal reverse-mode differentiation over a strict chain of layers.
//!
//! A [`Tape`] records every intermediate activation of one forward pass so
//! that [`Tape::backward`] can return gradients for all parameters *and* for
//! the input tensor. The input gradient is what landmark discovery and the
//! saliency baseline consume; training consumes the parameter gradients.

mod layer;
mod network;

pub use layer::LayerSpec;
pub use network::{Gradients, Layer, LossBackward, Network, Tape};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(scores: &[T]) -> Vec<T> {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Negative log-softmax of class `class`: `-log(exp(S_c) / sum_c' exp(S_c'))`.
pub fn softmax_loss<T: Scalar>(scores: &[T], class: usize) -> Result<T> {
    check_scores(scores, class)?;
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + scores.iter().map(|&s| (s - max).exp()).sum::<T>().ln();
    // Rounding can leave a tiny negative value when one class dominates.
    Ok((lse - scores[class]).max(T::zero()))
}

/// Loss together with its gradient w.r.t. the scores, `p - onehot(class)`.
pub fn softmax_loss_grad<T: Scalar>(scores: &[T], class: usize) -> Result<(T, Vec<T>, Vec<T>)> {
    let loss = softmax_loss(scores, class)?;
    let probs = softmax(scores);
    let mut grad = probs.clone();
    grad[class] -= T::one();
    Ok((loss, probs, grad))
}

fn check_scores<T: Scalar>(scores: &[T], class: usize) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::invalid("empty score vector"));
    }
    if class >= scores.len() {
        return Err(Error::LabelOutOfRange {
            label: class,
            classes: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("class scores"));
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_on_uniform_scores() {
        let l = softmax_loss(&[0.0f64, 0.0], 0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let l = softmax_loss(&[1.0f64, 1.0, 1.0], 2).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_on_dominant_score() {
        // log(1 + e^-10) evaluated independently with ln_1p.
        let expected = (-10f64).exp().ln_1p();
        let l = softmax_loss(&[10.0f64, 0.0], 0).unwrap();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 4.5398e-5).abs() < 1e-9);
    }

    #[test]
    fn loss_gradient_at_uniform_scores() {
        let (_, probs, g) = softmax_loss_grad(&[0.0f64, 0.0], 0).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
        assert_eq!(g, vec![-0.5, 0.5]);
    }

    #[test]
    fn loss_errors() {
        assert!(softmax_loss::<f64>(&[], 0).is_err());
        assert!(softmax_loss(&[1.0f64, f64::NAN], 0).is_err());
        assert!(softmax_loss(&[1.0f64, f64::INFINITY], 0).is_err());
        assert!(matches!(
            softmax_loss(&[1.0f64, 2.0], 2),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn large_scores_do_not_overflow() {
        let l = softmax_loss(&[1000.0f64, 0.0], 1).unwrap();
        assert!((l - 1000.0).abs() < 1e-9);
        let p = softmax(&[1000.0f64, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[1.0]), 0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn shift_invariance(
                scores in prop::collection::vec(-20.0f64..20.0, 2..10),
                shift in -50.0f64..50.0,
                pick in 0usize..10,
            ) {
                let c = pick % scores.len();
                let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
                let a = softmax_loss(&scores, c).unwrap();
                let b = softmax_loss(&shifted, c).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(a >= 0.0);
            }

            #[test]
            fn probabilities_sum_to_one(scores in prop::collection::vec(-30.0f64..30.0, 1..20)) {
                let total: f64 = softmax(&scores).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
