use crate::error::{Error, Result};

/// Floor applied inside logarithms so degenerate probabilities stay finite.
pub const LOG_EPS: f64 = 1e-12;

/// Numerically stabilized softmax (max-subtraction). Entries are strictly
/// positive and sum to one within 1e-9 for any finite logits: entries whose
/// exponent underflows are floored at 1e-300 rather than collapsing to an
/// exact zero.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input must be finite".into()));
    }
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v = (*v / sum).max(1e-300);
    }
    Ok(out)
}

/// `log softmax(z)_i = (z_i - max) - log sum exp(z - max)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

fn check_distribution(p: &[f64], context: &'static str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Numeric(format!(
            "{context} is not a valid distribution"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Numeric(format!(
            "{context} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// `-log p[label]`, with the epsilon floor keeping the result finite when
/// the label has zero probability.
pub fn cross_entropy(probabilities: &[f64], label: usize) -> Result<f64> {
    check_distribution(probabilities, "cross-entropy input")?;
    if label >= probabilities.len() {
        return Err(Error::Shape {
            context: "cross-entropy label",
            expected: probabilities.len(),
            actual: label,
        });
    }
    Ok(-probabilities[label].max(LOG_EPS).ln())
}

/// `sum_i target_i (log target_i - log predicted_i)` with `0 log 0 = 0`.
pub fn kl_divergence(target: &[f64], predicted: &[f64]) -> Result<f64> {
    check_distribution(target, "KL target")?;
    check_distribution(predicted, "KL prediction")?;
    if target.len() != predicted.len() {
        return Err(Error::Shape {
            context: "KL divergence",
            expected: target.len(),
            actual: predicted.len(),
        });
    }
    let mut acc = 0.0;
    for (&t, &p) in target.iter().zip(predicted) {
        if t > 0.0 {
            acc += t * (t.ln() - p.max(LOG_EPS).ln());
        }
    }
    Ok(acc)
}

/// One weighted objective term evaluated on the softmax of the logits.
#[derive(Debug, Clone, PartialEq)]
pub enum LossTerm {
    /// `weight * H(label, softmax(logits))`.
    CrossEntropy { label: usize, weight: f64 },
    /// `weight * KL(target || softmax(logits))`.
    KlDivergence { target: Vec<f64>, weight: f64 },
}

/// An input paired with the loss terms applied to its prediction.
#[derive(Debug, Clone)]
pub struct LossSample {
    pub input: Vec<f64>,
    pub terms: Vec<LossTerm>,
}

impl LossSample {
    pub fn cross_entropy(input: Vec<f64>, label: usize) -> Self {
        Self {
            input,
            terms: vec![LossTerm::CrossEntropy { label, weight: 1.0 }],
        }
    }

    pub fn kl(input: Vec<f64>, target: Vec<f64>) -> Self {
        Self {
            input,
            terms: vec![LossTerm::KlDivergence {
                target,
                weight: 1.0,
            }],
        }
    }
}

/// Loss of one sample's terms given the log-softmax of its logits.
pub(crate) fn terms_loss(terms: &[LossTerm], log_probs: &[f64]) -> Result<f64> {
    let classes = log_probs.len();
    let mut acc = 0.0;
    for term in terms {
        match term {
            LossTerm::CrossEntropy { label, weight } => {
                if *label >= classes {
                    return Err(Error::Shape {
                        context: "loss term label",
                        expected: classes,
                        actual: *label,
                    });
                }
                acc += weight * -log_probs[*label];
            }
            LossTerm::KlDivergence { target, weight } => {
                if target.len() != classes {
                    return Err(Error::Shape {
                        context: "loss term target",
                        expected: classes,
                        actual: target.len(),
                    });
                }
                let mut kl = 0.0;
                for (&t, &lp) in target.iter().zip(log_probs) {
                    if t > 0.0 {
                        kl += t * (t.ln() - lp);
                    }
                }
                acc += weight * kl;
            }
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_logits_no_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p[0] > 1.0 - 1e-9);
        assert!(p[1] < 1e-9);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_matches_direct_exponentiation() {
        // High-precision oracle: plain exp/normalize (safe at this scale).
        let z = [1.0_f64, 2.0, 3.0];
        let exps: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let sum: f64 = exps.iter().sum();
        let p = softmax(&z).unwrap();
        for (a, e) in p.iter().zip(&exps) {
            assert!((a - e / sum).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_zero() {
        let mut p = vec![0.0; 4];
        p[0] = 1.0;
        assert_eq!(cross_entropy(&p, 0).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_is_log_k() {
        let p = vec![0.1; 10];
        let loss = cross_entropy(&p, 3).unwrap();
        assert!((loss - 10.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let p = softmax(&[0.3, -1.2, 0.9, 0.1]).unwrap();
        for label in 0..4 {
            let loss = cross_entropy(&p, label).unwrap();
            assert!((loss - (-p[label].ln())).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_zero_probability_is_clamped() {
        let p = vec![1.0, 0.0];
        let loss = cross_entropy(&p, 1).unwrap();
        assert!(loss.is_finite());
        assert!((loss - (-LOG_EPS.ln())).abs() < 1e-9);
    }

    #[test]
    fn kl_identity_is_zero() {
        let p = softmax(&[0.5, 1.5, -0.3]).unwrap();
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_one_hot_vs_uniform_is_log_two() {
        let kl = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_direct_formula() {
        let t = softmax(&[0.2, -0.5, 1.0]).unwrap();
        let p = softmax(&[-1.0, 0.3, 0.4]).unwrap();
        let expect: f64 = t
            .iter()
            .zip(&p)
            .map(|(&ti, &pi)| ti * (ti.ln() - pi.ln()))
            .sum();
        assert!((kl_divergence(&t, &p).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn kl_non_negative_on_random_pairs() {
        use rand::Rng;
        let mut rng = crate::seed::child_rng(3, "kl-prop", 0, 0);
        for _ in 0..200 {
            let z1: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let z2: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = softmax(&z1).unwrap();
            let p = softmax(&z2).unwrap();
            assert!(kl_divergence(&t, &p).unwrap() >= -1e-12);
        }
    }
}
