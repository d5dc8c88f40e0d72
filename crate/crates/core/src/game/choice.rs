use super::ladder::CostLadder;
use crate::error::{Error, Result};
use crate::normal;

/// Summands below this are dropped from infinite sums over outcomes.
pub const TAIL_TOL: f64 = 1e-16;

/// Distance below the latent index beyond which `Φ(u − a_r) < TAIL_TOL`.
pub(crate) const TAIL_Z: f64 = 8.3;

/// Outcome probabilities `p_0, …, p_{r_max}` plus the mass beyond `r_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceProbabilities {
    pub probs: Vec<f64>,
    pub tail: f64,
}

impl ChoiceProbabilities {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.tail
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(r, p)| r as f64 * p)
            .sum()
    }
}

/// `p_r = Φ(u − a_r) − Φ(u − a_{r+1})` with `u = λ·ȳᵉ + ψ` and `a_0 = −∞`.
pub fn choice_probabilities(
    psi: f64,
    ybar_e: f64,
    ladder: &CostLadder,
    r_max: usize,
) -> Result<ChoiceProbabilities> {
    let u = ladder.lambda() * ybar_e + psi;
    if !u.is_finite() {
        return Err(Error::invalid(format!("latent index {u} is not finite")));
    }
    let a = ladder.cut_points(r_max + 1)?;
    Ok(probabilities_from_cuts(u, &a, r_max))
}

/// As [`choice_probabilities`], enlarging `r_max` until the tail mass is below `tail_tol`.
pub fn choice_probabilities_to_tol(
    psi: f64,
    ybar_e: f64,
    ladder: &CostLadder,
    tail_tol: f64,
) -> Result<ChoiceProbabilities> {
    let u = ladder.lambda() * ybar_e + psi;
    if !u.is_finite() {
        return Err(Error::invalid(format!("latent index {u} is not finite")));
    }
    let z = -normal::quantile(tail_tol.clamp(1e-300, 0.5));
    let a = ladder.cut_points_until(u + z, 2)?;
    Ok(probabilities_from_cuts(u, &a, a.len() - 1))
}

/// `a[k]` holds `a_{k+1}`; needs `a.len() ≥ r_max + 1`.
pub(crate) fn probabilities_from_cuts(u: f64, a: &[f64], r_max: usize) -> ChoiceProbabilities {
    let probs = (0..=r_max)
        .map(|r| {
            let lower = if r == 0 {
                f64::NEG_INFINITY
            } else {
                a[r - 1] - u
            };
            normal::interval_mass(a[r] - u, lower).max(0.0)
        })
        .collect();
    ChoiceProbabilities {
        probs,
        tail: normal::sf(a[r_max] - u),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_index_at_first_cut_point_splits_evenly() {
        let ladder = CostLadder::new(0.1, vec![0.5], 0.3, 1.0).unwrap();
        let p = choice_probabilities(0.0, 0.0, &ladder, 10).unwrap();
        assert_eq!(p.probs[0], 0.5);
    }

    #[test]
    fn telescopes_to_one() {
        let ladder = CostLadder::new(0.1, vec![0.5, 0.4], 0.3, 1.2).unwrap();
        let p = choice_probabilities(1.3, 2.0, &ladder, 5).unwrap();
        assert_abs_diff_eq!(p.total(), 1.0, epsilon = 1e-14);
        let q = choice_probabilities_to_tol(1.3, 2.0, &ladder, TAIL_TOL).unwrap();
        assert!(q.tail < TAIL_TOL);
        assert_abs_diff_eq!(q.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn rejects_non_finite_index() {
        let ladder = CostLadder::new(0.1, vec![], 0.3, 1.0).unwrap();
        assert!(choice_probabilities(f64::NAN, 0.0, &ladder, 3).is_err());
    }
}
