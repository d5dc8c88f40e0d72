use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of cut points ever materialized; a flatter tail is treated as invalid.
pub const CUT_POINT_CAP: usize = 200_000;

/// Convex cost ladder: cut-point increments `δ_r`, free for `2 ≤ r ≤ R̄` and
/// `(r − 1)^ρ · δ̄ + λ` beyond. `δ_1 = 0` and the location is pinned by `a_1 = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostLadder {
    lambda: f64,
    free_increments: Vec<f64>,
    delta_bar: f64,
    rho: f64,
}

impl CostLadder {
    /// `free_increments` holds `δ_2, …, δ_R̄` on the natural scale (each must exceed `λ`).
    pub fn new(lambda: f64, free_increments: Vec<f64>, delta_bar: f64, rho: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "peer effect λ = {lambda} must be finite and non-negative"
            )));
        }
        if !(delta_bar.is_finite() && delta_bar > 0.0) {
            return Err(Error::invalid(format!(
                "tail scale δ̄ = {delta_bar} must be positive"
            )));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::invalid(format!(
                "tail exponent ρ = {rho} must be positive"
            )));
        }
        for (k, &d) in free_increments.iter().enumerate() {
            if !(d.is_finite() && d > lambda) {
                return Err(Error::invalid(format!(
                    "increment δ_{} = {d} must exceed λ = {lambda}",
                    k + 2
                )));
            }
        }
        Ok(Self {
            lambda,
            free_increments,
            delta_bar,
            rho,
        })
    }

    /// Builds a ladder from `δ̃_r = δ_r − λ`, the form used by the estimator.
    ///
    /// Each `δ̃_r` must be positive; `δ̃_r + λ` may round to `λ` when `δ̃_r` is tiny.
    pub fn from_excess(lambda: f64, delta_tilde: &[f64], delta_bar: f64, rho: f64) -> Result<Self> {
        for (k, &d) in delta_tilde.iter().enumerate() {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::invalid(format!(
                    "excess increment δ̃_{} = {d} must be positive",
                    k + 2
                )));
            }
        }
        let base = Self::new(lambda, Vec::new(), delta_bar, rho)?;
        Ok(Self {
            free_increments: delta_tilde.iter().map(|d| d + lambda).collect(),
            ..base
        })
    }

    /// Ladder used for derivative probes, where λ may dip slightly below zero.
    /// Only requires every increment to stay positive.
    pub(crate) fn probe(
        lambda: f64,
        delta_tilde: &[f64],
        delta_bar: f64,
        rho: f64,
    ) -> Result<Self> {
        let ladder = Self {
            lambda,
            free_increments: delta_tilde.iter().map(|d| d + lambda).collect(),
            delta_bar,
            rho,
        };
        let first_tail = ladder.increment(ladder.r_bar() + 1);
        let ok = lambda.is_finite()
            && delta_bar > 0.0
            && rho > 0.0
            && first_tail > 0.0
            && ladder
                .free_increments
                .iter()
                .all(|&d| d.is_finite() && d > 0.0);
        if ok {
            Ok(ladder)
        } else {
            Err(Error::invalid("probe ladder has non-positive increments"))
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn free_increments(&self) -> &[f64] {
        &self.free_increments
    }

    pub fn delta_bar(&self) -> f64 {
        self.delta_bar
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn r_bar(&self) -> usize {
        self.free_increments.len() + 1
    }

    /// `δ_r` for `r ≥ 1`.
    pub fn increment(&self, r: usize) -> f64 {
        assert!(r >= 1, "increments start at r = 1");
        if r == 1 {
            0.0
        } else if r <= self.r_bar() {
            self.free_increments[r - 2]
        } else {
            (self.rho * ((r - 1) as f64).ln() + self.delta_bar.ln()).exp() + self.lambda
        }
    }

    /// `a_1, …, a_{r_max}` with `a_1 = 0`; element `k` holds `a_{k+1}`.
    pub fn cut_points(&self, r_max: usize) -> Result<Vec<f64>> {
        if r_max == 0 {
            return Err(Error::invalid("r_max must be at least 1"));
        }
        if r_max > CUT_POINT_CAP {
            return Err(Error::invalid(format!(
                "r_max = {r_max} exceeds the cap of {CUT_POINT_CAP}"
            )));
        }
        let mut a = Vec::with_capacity(r_max);
        a.push(0.0);
        for r in 2..=r_max {
            a.push(a[r - 2] + self.increment(r));
        }
        Ok(a)
    }

    /// Cut points extended until at least `min_len` are present and the last exceeds `threshold`.
    pub fn cut_points_until(&self, threshold: f64, min_len: usize) -> Result<Vec<f64>> {
        let mut a = vec![0.0];
        while a.len() < min_len.max(1) || a[a.len() - 1] <= threshold {
            if a.len() >= CUT_POINT_CAP {
                return Err(Error::Numerical(format!(
                    "cost ladder tail too flat: {CUT_POINT_CAP} cut points do not reach {threshold:.3}"
                )));
            }
            let r = a.len() + 1;
            a.push(a[a.len() - 1] + self.increment(r));
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_evaluated_cut_points() {
        // δ_2 = 0.5 free; δ_3 = (3 − 1)^1 · 0.3 + 0.1 = 0.7; δ_4 = 3 · 0.3 + 0.1 = 1.0
        let ladder = CostLadder::new(0.1, vec![0.5], 0.3, 1.0).unwrap();
        let a = ladder.cut_points(4).unwrap();
        assert_abs_diff_eq!(a[0], 0.0);
        assert_abs_diff_eq!(a[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(a[2], 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(a[3], 2.2, epsilon = 1e-15);
    }

    #[test]
    fn single_cut_point() {
        let ladder = CostLadder::new(0.0, vec![], 7.0, 2.0).unwrap();
        assert_eq!(ladder.cut_points(1).unwrap(), vec![0.0]);
        assert!(ladder.cut_points(0).is_err());
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(CostLadder::new(0.1, vec![0.5], 0.0, 1.0).is_err());
        assert!(CostLadder::new(0.1, vec![0.5], 0.3, -1.0).is_err());
        assert!(CostLadder::new(0.1, vec![0.1], 0.3, 1.0).is_err());
        assert!(CostLadder::new(-0.1, vec![], 0.3, 1.0).is_err());
        assert!(CostLadder::from_excess(0.1, &[0.4], 0.3, 1.0).is_ok());
    }

    #[test]
    fn cut_points_until_reaches_threshold() {
        let ladder = CostLadder::new(0.2, vec![0.5, 0.6], 0.1, 0.5).unwrap();
        let a = ladder.cut_points_until(25.0, 3).unwrap();
        assert!(a[a.len() - 1] > 25.0);
        assert!(a[a.len() - 2] <= 25.0);
        assert_eq!(a, ladder.cut_points(a.len()).unwrap());
    }

    #[test]
    fn increments_strictly_positive_when_lambda_positive() {
        let ladder = CostLadder::new(0.05, vec![0.3, 0.2], 0.01, 0.1).unwrap();
        let a = ladder.cut_points(200).unwrap();
        assert!(a.windows(2).all(|w| w[1] > w[0]));
    }
}
