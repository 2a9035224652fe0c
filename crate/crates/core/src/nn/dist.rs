use crate::error::{Error, Result};

/// Probability floor applied before logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// A discrete probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid("probabilities", "entries must be non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("probabilities", format!("sum is {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Temperature softmax with max-subtraction; entries are floored at
/// [`PROB_FLOOR`].
pub fn softmax(logits: &[f64], temperature: f64) -> ProbDist {
    assert!(temperature > 0.0, "softmax temperature must be positive");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbDist(exps.into_iter().map(|e| (e / sum).max(PROB_FLOOR)).collect())
}

/// KL(p || q) with both sides clamped at [`PROB_FLOOR`].
pub fn kl_divergence(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { context: "kl_divergence", expected: p.len(), actual: q.len() });
    }
    let kl: f64 =
        p.0.iter()
            .zip(&q.0)
            .map(|(&pi, &qi)| {
                let (pi, qi) = (pi.max(PROB_FLOOR), qi.max(PROB_FLOOR));
                pi * (pi / qi).ln()
            })
            .sum();
    Ok(kl.max(0.0))
}

/// Gradient of `KL(softmax(z/T) || q)` with respect to the logits `z`,
/// treating `q` as a constant. Returns `(kl, grad)`.
pub fn softmax_kl_grad(logits: &[f64], target: &ProbDist, temperature: f64) -> (f64, Vec<f64>) {
    let p = softmax(logits, temperature);
    let log_ratio: Vec<f64> = p.0.iter().zip(&target.0).map(|(&pi, &qi)| (pi / qi.max(PROB_FLOOR)).ln()).collect();
    let kl: f64 = p.0.iter().zip(&log_ratio).map(|(pi, r)| pi * r).sum();
    let grad = p.0.iter().zip(&log_ratio).map(|(pi, r)| pi * (r - kl) / temperature).collect();
    (kl.max(0.0), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_for_equal_logits() {
        for t in [0.1, 1.0, 7.0] {
            let p = softmax(&[3.0, 3.0, 3.0, 3.0], t);
            assert!(p.probs().iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn closed_form_two_thirds() {
        let p = softmax(&[2f64.ln(), 0.0], 1.0);
        assert!((p.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        let l = [0.3, -1.2, 2.5];
        let shifted: Vec<f64> = l.iter().map(|v| v + 41.0).collect();
        let (a, b) = (softmax(&l, 0.7), softmax(&shifted, 0.7));
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_examples() {
        let p = ProbDist::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);

        let one_hot = ProbDist::new(vec![1.0, 0.0]).unwrap();
        let half = ProbDist::new(vec![0.5, 0.5]).unwrap();
        assert!((kl_divergence(&one_hot, &half).unwrap() - 2f64.ln()).abs() < 1e-6);

        // 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75)
        let q = ProbDist::new(vec![0.25, 0.75]).unwrap();
        let oracle = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((kl_divergence(&half, &q).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn kl_length_mismatch() {
        let a = ProbDist::new(vec![1.0]).unwrap();
        let b = ProbDist::new(vec![0.5, 0.5]).unwrap();
        assert!(kl_divergence(&a, &b).is_err());
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(ProbDist::new(vec![0.5, 0.6]).is_err());
        assert!(ProbDist::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbDist::new(vec![]).is_err());
    }
}
