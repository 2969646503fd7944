//! Loss heads. Every function returns the scalar loss together with the
//! gradient w.r.t. its logit/prediction argument, averaged over elements.

use ndarray::Array3;

use crate::nets::scalar::Scalar;

/// Numerically stable binary cross-entropy on raw logits against a constant
/// target map (0 or 1). Used by the paired-regime discriminator/generator.
pub fn bce_with_logits<T: Scalar>(logits: &Array3<T>, target: f64) -> (T, Array3<T>) {
    let y = T::from_real(target);
    let n = T::from_real(logits.len() as f64);
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for g in grad.iter_mut() {
        let z = *g;
        let abs = z.abs();
        loss = loss + z.max(T::zero()) - z * y + (T::one() + (-abs).exp()).ln();
        *g = (sigmoid(z) - y) / n;
    }
    (loss / n, grad)
}

/// Least-squares adversarial loss `mean((z - target)^2)`. Used by the
/// unpaired regime.
pub fn lsgan<T: Scalar>(logits: &Array3<T>, target: f64) -> (T, Array3<T>) {
    let y = T::from_real(target);
    let n = T::from_real(logits.len() as f64);
    let two = T::from_real(2.0);
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for g in grad.iter_mut() {
        let d = *g - y;
        loss = loss + d * d;
        *g = two * d / n;
    }
    (loss / n, grad)
}

/// Mean absolute error and its gradient w.r.t. `a`.
pub fn mae<T: Scalar>(a: &Array3<T>, b: &Array3<T>) -> (T, Array3<T>) {
    let n = T::from_real(a.len() as f64);
    let mut grad = Array3::zeros(a.dim());
    let mut loss = T::zero();
    ndarray::Zip::from(&mut grad).and(a).and(b).for_each(|g, &av, &bv| {
        let d = av - bv;
        loss = loss + d.abs();
        *g = if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        };
    });
    (loss / n, grad)
}

/// Weighted binary cross-entropy on a scalar logit.
/// Returns `(weight * bce, weight * (sigmoid(z) - y))`.
pub fn weighted_bce_logit<T: Scalar>(logit: T, target: T, weight: T) -> (T, T) {
    let z = logit;
    let loss = z.max(T::zero()) - z * target + (T::one() + (-z.abs()).exp()).ln();
    (weight * loss, weight * (sigmoid(z) - target))
}

/// Logit clamp used before converting to a probability; keeps predictions
/// strictly inside (0,1) even for badly saturated classifiers.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Probability from a logit, clamped away from exact 0 and 1.
pub fn logit_to_probability<T: Scalar>(logit: T) -> f64 {
    let z = logit.to_real().clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-z).exp())
}

fn sigmoid<T: Scalar>(v: T) -> T {
    let one = T::one();
    if v >= T::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let logits = Array3::from_shape_fn((1, 2, 3), |(_, y, x)| (y as f64 - x as f64) * 0.7);
        for target in [0.0, 1.0] {
            let (_, grad) = bce_with_logits(&logits, target);
            let h = 1e-6;
            for idx in [[0usize, 0, 0], [0, 1, 2]] {
                let mut lp = logits.clone();
                lp[idx] += h;
                let mut lm = logits.clone();
                lm[idx] -= h;
                let fd =
                    (bce_with_logits(&lp, target).0 - bce_with_logits(&lm, target).0) / (2.0 * h);
                assert!((fd - grad[idx]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lsgan_is_zero_at_target() {
        let logits = Array3::from_elem((1, 2, 2), 1.0);
        let (loss, grad) = lsgan(&logits, 1.0);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mae_of_identical_arrays_is_zero() {
        let a = Array3::from_elem((2, 2, 2), 0.3);
        let (loss, grad) = mae(&a, &a);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn probability_stays_strictly_inside_unit_interval() {
        assert!(logit_to_probability(1e9f64) < 1.0);
        assert!(logit_to_probability(-1e9f64) > 0.0);
        assert_eq!(logit_to_probability(0.0f64), 0.5);
    }

    #[test]
    fn weighted_bce_at_zero_logit_is_ln2() {
        let (loss, _) = weighted_bce_logit(0.0f64, 1.0, 1.0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let (loss5, _) = weighted_bce_logit(0.0f64, 0.0, 5.0);
        assert!((loss5 - 5.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }
}
