//! Cross-entropy, the naive Bob-minus-Eve difference loss, and the security
//! loss that trains Eve's view towards cluster-uniform label distributions.
//!
//! Every loss is averaged over the batch. The `*_logit_gradients` helpers
//! return the gradients with respect to the decoder logits, assuming the
//! probabilities came from a softmax over those logits.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Result, WiretapError};

/// Lower clamp applied to probabilities inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// A batch loss: its mean and the per-sample values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub scalar: f64,
    pub per_sample: Array1<f64>,
}

impl LossValue {
    fn from_per_sample(per_sample: Array1<f64>) -> Self {
        let scalar = per_sample.mean().unwrap_or(0.0);
        LossValue { scalar, per_sample }
    }
}

fn check_pair(targets: ArrayView2<f64>, probs: ArrayView2<f64>) -> Result<()> {
    if targets.dim() != probs.dim() {
        return Err(WiretapError::shape(
            "loss inputs",
            format!("{:?}", targets.dim()),
            format!("{:?}", probs.dim()),
        ));
    }
    if targets.nrows() == 0 {
        return Err(WiretapError::Input("empty batch".into()));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(WiretapError::Parameter(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )))
    }
}

/// Per-sample `-sum_i t_i log p_i`, with `p_i` clamped to [`LOG_FLOOR`].
pub fn cross_entropy(targets: ArrayView2<f64>, probs: ArrayView2<f64>) -> Result<LossValue> {
    check_pair(targets, probs)?;
    let per_sample = targets
        .rows()
        .into_iter()
        .zip(probs.rows())
        .map(|(t, p)| {
            -t.iter()
                .zip(p.iter())
                .filter(|(&ti, _)| ti != 0.0)
                .map(|(&ti, &pi)| ti * pi.max(LOG_FLOOR).ln())
                .sum::<f64>()
        })
        .collect();
    Ok(LossValue::from_per_sample(per_sample))
}

/// Gradient of the batch-mean cross-entropy with respect to softmax logits.
pub fn cross_entropy_logit_gradients(
    targets: ArrayView2<f64>,
    probs: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_pair(targets, probs)?;
    let n = targets.nrows() as f64;
    Ok((&probs - &targets) / n)
}

/// `H(targets, bob) - H(targets, eve)`. Unbounded below; diagnostic only.
pub fn naive_difference_loss(
    targets: ArrayView2<f64>,
    bob_probs: ArrayView2<f64>,
    eve_probs: ArrayView2<f64>,
) -> Result<LossValue> {
    let bob = cross_entropy(targets, bob_probs)?;
    let eve = cross_entropy(targets, eve_probs)?;
    Ok(LossValue::from_per_sample(bob.per_sample - eve.per_sample))
}

/// Logit gradients `(bob, eve)` of [`naive_difference_loss`].
pub fn naive_difference_logit_gradients(
    targets: ArrayView2<f64>,
    bob_probs: ArrayView2<f64>,
    eve_probs: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let bob = cross_entropy_logit_gradients(targets, bob_probs)?;
    let eve = cross_entropy_logit_gradients(targets, eve_probs)?;
    Ok((bob, -eve))
}

/// `(1 - alpha) H(targets, bob) + alpha H(equalized, eve)`.
pub fn security_loss(
    targets: ArrayView2<f64>,
    equalized_targets: ArrayView2<f64>,
    bob_probs: ArrayView2<f64>,
    eve_probs: ArrayView2<f64>,
    alpha: f64,
) -> Result<LossValue> {
    check_alpha(alpha)?;
    let bob = cross_entropy(targets, bob_probs)?;
    let eve = cross_entropy(equalized_targets, eve_probs)?;
    Ok(LossValue::from_per_sample(
        bob.per_sample * (1.0 - alpha) + eve.per_sample * alpha,
    ))
}

/// Logit gradients `(bob, eve)` of [`security_loss`].
pub fn security_logit_gradients(
    targets: ArrayView2<f64>,
    equalized_targets: ArrayView2<f64>,
    bob_probs: ArrayView2<f64>,
    eve_probs: ArrayView2<f64>,
    alpha: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_alpha(alpha)?;
    let bob = cross_entropy_logit_gradients(targets, bob_probs)? * (1.0 - alpha);
    let eve = cross_entropy_logit_gradients(equalized_targets, eve_probs)? * alpha;
    Ok((bob, eve))
}

/// Rows of `targets` that sum to one within `tol`.
pub fn rows_are_distributions(targets: ArrayView2<f64>, tol: f64) -> bool {
    targets
        .sum_axis(Axis(1))
        .iter()
        .all(|s| (s - 1.0).abs() <= tol)
        && targets.iter().all(|&v| v >= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let t = array![[0.0, 1.0, 0.0]];
        let l = cross_entropy(t.view(), t.view()).unwrap();
        assert_eq!(l.scalar, 0.0);
    }

    #[test]
    fn uniform_prediction_over_sixteen() {
        let mut t = Array2::zeros((1, 16));
        t[[0, 4]] = 1.0;
        let p = Array2::from_elem((1, 16), 1.0 / 16.0);
        let l = cross_entropy(t.view(), p.view()).unwrap();
        assert!((l.scalar - 16f64.ln()).abs() < 1e-12);
        assert!((l.scalar - 2.7726).abs() < 1e-4);
    }

    #[test]
    fn soft_target_closed_form() {
        let t = array![[0.5, 0.5, 0.0, 0.0]];
        let p = array![[0.25, 0.25, 0.25, 0.25]];
        let l = cross_entropy(t.view(), p.view()).unwrap();
        assert!((l.scalar - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let t = array![[1.0, 0.0]];
        let p = array![[0.0, 1.0]];
        let l = cross_entropy(t.view(), p.view()).unwrap();
        assert!(l.scalar.is_finite());
        assert!((l.scalar + LOG_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_mean_of_per_sample() {
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let p = array![[0.5, 0.5], [0.1, 0.9]];
        let l = cross_entropy(t.view(), p.view()).unwrap();
        assert!((l.scalar - (l.per_sample[0] + l.per_sample[1]) / 2.0).abs() < 1e-15);
        assert!(cross_entropy(t.view(), array![[1.0, 0.0]].view()).is_err());
    }

    #[test]
    fn naive_loss_cases() {
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let p = array![[0.7, 0.3], [0.4, 0.6]];
        assert_eq!(naive_difference_loss(t.view(), p.view(), p.view()).unwrap().scalar, 0.0);

        let mut t16 = Array2::zeros((1, 16));
        t16[[0, 0]] = 1.0;
        let uniform = Array2::from_elem((1, 16), 1.0 / 16.0);
        let l = naive_difference_loss(t16.view(), t16.view(), uniform.view()).unwrap();
        assert!((l.scalar + 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn security_loss_endpoints() {
        let t = array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let e = array![[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]];
        let bob = array![[0.7, 0.1, 0.1, 0.1], [0.2, 0.2, 0.5, 0.1]];
        let eve = array![[0.3, 0.3, 0.2, 0.2], [0.1, 0.1, 0.4, 0.4]];
        let l0 = security_loss(t.view(), e.view(), bob.view(), eve.view(), 0.0).unwrap();
        let ce_bob = cross_entropy(t.view(), bob.view()).unwrap();
        assert_eq!(l0, ce_bob);
        let l1 = security_loss(t.view(), e.view(), bob.view(), eve.view(), 1.0).unwrap();
        let ce_eve = cross_entropy(e.view(), eve.view()).unwrap();
        assert_eq!(l1, ce_eve);
    }

    #[test]
    fn security_loss_two_message_hand_value() {
        let t = array![[1.0, 0.0]];
        let e = array![[0.5, 0.5]];
        let bob = array![[0.9, 0.1]];
        let eve = array![[0.5, 0.5]];
        let l = security_loss(t.view(), e.view(), bob.view(), eve.view(), 0.5).unwrap();
        // Independent scalar evaluation of 0.5 * (-ln 0.9) + 0.5 * (-(0.5 ln 0.5 + 0.5 ln 0.5)).
        let expected = 0.5 * -(0.9f64.ln()) + 0.5 * -(0.5 * 0.5f64.ln() + 0.5 * 0.5f64.ln());
        assert!((l.scalar - expected).abs() < 1e-15);
        assert!((l.scalar - 0.3993).abs() < 1e-4);
    }

    #[test]
    fn security_loss_is_affine_in_alpha() {
        let t = array![[0.0, 1.0, 0.0]];
        let e = array![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]];
        let bob = array![[0.2, 0.5, 0.3]];
        let eve = array![[0.6, 0.3, 0.1]];
        let at = |a| {
            security_loss(t.view(), e.view(), bob.view(), eve.view(), a)
                .unwrap()
                .scalar
        };
        let (l0, l1) = (at(0.0), at(1.0));
        for a in [0.1, 0.3, 0.5, 0.7, 0.9] {
            assert!((at(a) - ((1.0 - a) * l0 + a * l1)).abs() < 1e-14);
        }
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        let t = array![[1.0, 0.0]];
        for a in [-0.1, 1.5, f64::NAN] {
            assert!(matches!(
                security_loss(t.view(), t.view(), t.view(), t.view(), a),
                Err(WiretapError::Parameter(_))
            ));
        }
    }

    #[test]
    fn eve_term_minimized_at_equalized_row() {
        // Grid search over the 2-simplex of Eve's prediction for a 3-message row.
        let target = array![[0.5, 0.5, 0.0]];
        let mut best = (f64::INFINITY, (0.0, 0.0));
        let steps = 200;
        for i in 1..steps {
            for j in 1..(steps - i) {
                let (a, b) = (i as f64 / steps as f64, j as f64 / steps as f64);
                let p = array![[a, b, 1.0 - a - b]];
                let l = cross_entropy(target.view(), p.view()).unwrap().scalar;
                if l < best.0 {
                    best = (l, (a, b));
                }
            }
        }
        let (a, b) = best.1;
        assert!((a - 0.5).abs() < 1e-2 && (b - 0.5).abs() < 1e-2, "{best:?}");
    }
}
