/// Numerically stable log-softmax: subtracts the max logit before exponentiating.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&z| z - max).collect();
    let lse = shifted.iter().map(|&z| z.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let out = log_softmax(&[0.3; 16]);
        for v in out {
            assert!((v - (1.0f64 / 16.0).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_evaluated_pair() {
        let out = log_softmax(&[0.0, 3.0f64.ln()]);
        assert!((out[0] - 0.25f64.ln()).abs() < 1e-15);
        assert!((out[1] - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let out = softmax(&[1000.0, 0.0]);
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!(out[1] >= 0.0);
    }

    proptest! {
        #[test]
        fn normalized(logits in prop::collection::vec(-30.0f64..30.0, 1..20)) {
            let s: f64 = softmax(&logits).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn shift_invariant(logits in prop::collection::vec(-30.0f64..30.0, 1..20), c in -100.0f64..100.0) {
            let a = log_softmax(&logits);
            let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
            let b = log_softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn bit_identical_after_max_subtraction(logits in prop::collection::vec(-30.0f64..30.0, 1..20)) {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let centered: Vec<f64> = logits.iter().map(|z| z - max).collect();
            let a = log_softmax(&logits);
            let b = log_softmax(&centered);
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
