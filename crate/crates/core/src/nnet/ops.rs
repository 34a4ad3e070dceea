use crate::error::{Error, Result};

/// Probabilities below this are floored before taking logs, so early
/// behavior cloning on off-support actions cannot produce -inf.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax over action logits.
pub fn action_distribution(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Stable log-softmax: `z - max - ln(sum(exp(z - max)))`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - max - lse).collect()
}

/// Natural log of the selected action probability, floored at
/// [`LOG_PROB_FLOOR`].
pub fn log_prob(probabilities: &[f64], action: usize) -> Result<f64> {
    if action >= probabilities.len() {
        return Err(Error::contract(format!(
            "action {action} out of range for {} probabilities",
            probabilities.len()
        )));
    }
    let p = probabilities[action];
    if !p.is_finite() || p < 0.0 {
        return Err(Error::numerical(format!("invalid probability {p}")));
    }
    Ok(p.max(LOG_PROB_FLOOR).ln())
}

/// Shannon entropy of a categorical distribution, in nats.
pub fn entropy(probabilities: &[f64]) -> f64 {
    probabilities
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_over_six() {
        let p = action_distribution(&[0.3; 6]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_of_ln2_logit() {
        // Exact rational evaluation: e^{ln 2} = 2, so p = (2, 1, 1, 1, 1, 1)/7.
        let logits = [2.0f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.0];
        let p = action_distribution(&logits).unwrap();
        assert!((p[0] - 2.0 / 7.0).abs() < 1e-14);
        for v in &p[1..] {
            assert!((v - 1.0 / 7.0).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = [0.1, -2.0, 3.5, 0.0, 1.2, -0.7];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.456).collect();
        let a = action_distribution(&logits).unwrap();
        let b = action_distribution(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(action_distribution(&[f64::NAN, 0.0]).is_err());
        assert!(action_distribution(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn log_prob_reference_values() {
        assert_eq!(log_prob(&[1.0, 0.0], 0).unwrap(), 0.0);
        let uniform = [1.0 / 6.0; 6];
        assert!((log_prob(&uniform, 3).unwrap() - (-1.791_759_469_228_055)).abs() < 1e-12);
        assert!((log_prob(&[0.5, 0.5], 1).unwrap() - (-0.693_147_180_559_945_3)).abs() < 1e-12);
    }

    #[test]
    fn log_prob_floors_zero() {
        let lp = log_prob(&[0.0, 1.0], 0).unwrap();
        assert_eq!(lp, LOG_PROB_FLOOR.ln());
        assert!(log_prob(&[0.5, 0.5], 2).is_err());
    }
}
