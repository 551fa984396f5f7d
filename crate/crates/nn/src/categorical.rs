use crate::error::{Error, Result};
use crate::real::Real;

/// Log-sum-exp stabilized log-softmax of one row of logits.
pub fn log_softmax_row<T: Real>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln() + max;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

pub fn softmax_row<T: Real>(logits: &[T], out: &mut [T]) {
    log_softmax_row(logits, out);
    out.iter_mut().for_each(|v| *v = v.exp());
}

/// `log softmax(logits)[action]`.
pub fn categorical_log_prob<T: Real>(logits: &[T], action: usize) -> Result<T> {
    if action >= logits.len() {
        return Err(Error::Argument(format!(
            "action {action} out of range for {} categories",
            logits.len()
        )));
    }
    let mut lp = vec![T::zero(); logits.len()];
    log_softmax_row(logits, &mut lp);
    Ok(lp[action])
}

pub fn entropy_row<T: Real>(logits: &[T]) -> T {
    let mut lp = vec![T::zero(); logits.len()];
    log_softmax_row(logits, &mut lp);
    -lp.iter().map(|&l| l.exp() * l).sum::<T>()
}

/// Inverse-CDF draw given a uniform sample `u` in `[0, 1)`.
pub fn sample_row<T: Real>(logits: &[T], u: f64) -> usize {
    let mut p = vec![T::zero(); logits.len()];
    softmax_row(logits, &mut p);
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi.as_f64();
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let lp = categorical_log_prob(&[0.3f64; 5], 4).unwrap();
        assert!((lp - (0.2f64).ln()).abs() < 1e-15);
        assert!((lp + 1.6094).abs() < 1e-4);
    }

    #[test]
    fn dominant_logit_does_not_overflow() {
        let lp = categorical_log_prob(&[1000.0f64, 0.0], 0).unwrap();
        assert!(lp.abs() < 1e-300 || lp == 0.0);
        let lp1 = categorical_log_prob(&[1000.0f64, 0.0], 1).unwrap();
        assert!((lp1 + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn hand_log_sum_exp() {
        let lp = categorical_log_prob(&[1.0f64, 2.0, 3.0], 2).unwrap();
        let e = std::f64::consts::E;
        let want = (e.powi(3) / (e + e * e + e.powi(3))).ln();
        assert!((lp - want).abs() < 1e-15);
        assert!((lp + 0.4076).abs() < 1e-4);
    }

    #[test]
    fn out_of_range_action_is_an_error() {
        assert!(categorical_log_prob(&[0.0f64, 0.0], 2).is_err());
    }

    #[test]
    fn sampling_follows_cdf() {
        let logits = [0.0f64, (3.0f64).ln()]; // p = [0.25, 0.75]
        assert_eq!(sample_row(&logits, 0.1), 0);
        assert_eq!(sample_row(&logits, 0.26), 1);
        assert_eq!(sample_row(&logits, 0.999_999), 1);
    }

    proptest! {
        #[test]
        fn log_prob_is_shift_invariant(
            logits in prop::collection::vec(-20.0f64..20.0, 2..8),
            shift in -100.0f64..100.0,
            pick in 0usize..8,
        ) {
            let a = pick % logits.len();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let x = categorical_log_prob(&logits, a).unwrap();
            let y = categorical_log_prob(&shifted, a).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
        }

        #[test]
        fn entropy_bounded_by_log_k(logits in prop::collection::vec(-20.0f64..20.0, 2..8)) {
            let h = entropy_row(&logits);
            prop_assert!(h >= -1e-12);
            prop_assert!(h <= (logits.len() as f64).ln() + 1e-12);
        }
    }
}
