use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::choice::TAIL_Z;
use super::ladder::CostLadder;
use crate::error::{Error, Result};
use crate::netbuild::InteractionNetwork;
use crate::normal;

const PAR_MIN_AGENTS: usize = 512;

/// Structural parameters on the natural scale: the cost ladder (which carries λ) and `Γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub ladder: CostLadder,
    pub gamma: Vec<f64>,
}

impl GameParams {
    pub fn new(ladder: CostLadder, gamma: Vec<f64>) -> Self {
        Self { ladder, gamma }
    }

    /// `ψ = Z Γ`.
    pub fn psi(&self, z: &DMatrix<f64>) -> Result<Vec<f64>> {
        psi(z, &self.gamma)
    }
}

pub fn psi(z: &DMatrix<f64>, gamma: &[f64]) -> Result<Vec<f64>> {
    if z.ncols() != gamma.len() {
        return Err(Error::invalid(format!(
            "Z has {} columns but Γ has {} entries",
            z.ncols(),
            gamma.len()
        )));
    }
    Ok((0..z.nrows())
        .map(|i| gamma.iter().enumerate().map(|(c, g)| z[(i, c)] * g).sum())
        .collect())
}

/// Rational expected outcomes `yᵉ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Beliefs {
    pub y_e: Vec<f64>,
}

impl Beliefs {
    pub fn zeros(n: usize) -> Self {
        Self { y_e: vec![0.0; n] }
    }

    pub fn from_outcomes(y: &[u32]) -> Self {
        Self {
            y_e: y.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// `l_i = Σ_{r≥1} Φ(λ·ȳᵉ_i + ψ_i − a_r)` for every agent, summands below the tail tolerance dropped.
pub fn expected_outcome_map(
    params: &GameParams,
    g: &InteractionNetwork,
    z: &DMatrix<f64>,
    y_e: &[f64],
) -> Result<Vec<f64>> {
    let psi = params.psi(z)?;
    expected_outcomes(&params.ladder, g, &psi, y_e)
}

/// [`expected_outcome_map`] with a precomputed `ψ`.
pub fn expected_outcomes(
    ladder: &CostLadder,
    g: &InteractionNetwork,
    psi: &[f64],
    y_e: &[f64],
) -> Result<Vec<f64>> {
    let n = g.n();
    if psi.len() != n || y_e.len() != n {
        return Err(Error::invalid(format!(
            "network has {n} agents but ψ has {} and yᵉ has {} entries",
            psi.len(),
            y_e.len()
        )));
    }
    let ybar = g.mul_vec(y_e);
    let lambda = ladder.lambda();
    let u: Vec<f64> = psi
        .iter()
        .zip(&ybar)
        .map(|(p, yb)| p + lambda * yb)
        .collect();
    let u_max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !u_max.is_finite() || u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "non-finite latent index in expected-outcome map".into(),
        ));
    }
    let a = ladder.cut_points_until(u_max + TAIL_Z, 1)?;
    let eval = |&ui: &f64| expected_outcome_at(ui, &a);
    Ok(if n >= PAR_MIN_AGENTS {
        u.par_iter().map(eval).collect()
    } else {
        u.iter().map(eval).collect()
    })
}

/// `Σ_{r≥1} Φ(u − a_r)` over the supplied cut points (`a[k] = a_{k+1}`).
pub(crate) fn expected_outcome_at(u: f64, a: &[f64]) -> f64 {
    let mut s = 0.0;
    for &ar in a {
        let d = u - ar;
        if d < -TAIL_Z {
            break;
        }
        s += normal::cdf(d);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumOptions {
    /// Stop once `‖L(yᵉ) − yᵉ‖₁` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight on the previous iterate once residuals start oscillating.
    pub damping: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
            damping: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumSolution {
    pub beliefs: Beliefs,
    pub iterations: usize,
    pub residual: f64,
    pub damped: bool,
    /// L1 residual after each iteration.
    pub residuals: Vec<f64>,
}

/// Fixed point of the expected-outcome map by successive substitution.
pub fn solve_equilibrium(
    params: &GameParams,
    g: &InteractionNetwork,
    z: &DMatrix<f64>,
    init: &Beliefs,
    options: &EquilibriumOptions,
) -> Result<EquilibriumSolution> {
    let psi = params.psi(z)?;
    solve_equilibrium_psi(&params.ladder, g, &psi, init, options)
}

/// [`solve_equilibrium`] with a precomputed `ψ`.
pub fn solve_equilibrium_psi(
    ladder: &CostLadder,
    g: &InteractionNetwork,
    psi: &[f64],
    init: &Beliefs,
    options: &EquilibriumOptions,
) -> Result<EquilibriumSolution> {
    if init.y_e.len() != g.n() {
        return Err(Error::invalid(format!(
            "initial beliefs have {} entries for {} agents",
            init.y_e.len(),
            g.n()
        )));
    }
    let mut y = init.y_e.clone();
    let mut residuals = Vec::new();
    let mut damped = false;
    let mut rises = 0;
    for it in 1..=options.max_iter {
        let mapped = expected_outcomes(ladder, g, psi, &y)?;
        let residual: f64 = mapped.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        if let Some(&prev) = residuals.last() {
            if residual >= prev && residual > options.tol {
                rises += 1;
            } else {
                rises = 0;
            }
        }
        residuals.push(residual);
        if !damped && rises >= 2 {
            log::debug!("equilibrium residuals oscillating at iteration {it}; damping engaged");
            damped = true;
        }
        if damped {
            let w = options.damping;
            for (yi, mi) in y.iter_mut().zip(&mapped) {
                *yi = w * *yi + (1.0 - w) * mi;
            }
        } else {
            y = mapped;
        }
        if residual < options.tol {
            return Ok(EquilibriumSolution {
                beliefs: Beliefs { y_e: y },
                iterations: it,
                residual,
                damped,
                residuals,
            });
        }
    }
    Err(Error::EquilibriumNonConvergence {
        iterations: options.max_iter,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
        last: y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netbuild::{row_normalize, Adjacency};
    use approx::assert_abs_diff_eq;

    fn star() -> InteractionNetwork {
        row_normalize(&Adjacency::from_undirected_pairs(3, [(0, 1), (0, 2)]).unwrap())
    }

    #[test]
    fn zero_peer_effect_ignores_beliefs_and_network() {
        let ladder = CostLadder::new(0.0, vec![0.5], 0.3, 1.0).unwrap();
        let psi = [0.3, -0.2, 1.0];
        let a = expected_outcomes(&ladder, &star(), &psi, &[0.0, 0.0, 0.0]).unwrap();
        let b = expected_outcomes(
            &ladder,
            &InteractionNetwork::empty(3),
            &psi,
            &[5.0, 1.0, 9.0],
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn very_negative_index_gives_zero() {
        let ladder = CostLadder::new(0.1, vec![0.5], 0.3, 1.0).unwrap();
        let v =
            expected_outcomes(&ladder, &star(), &[-40.0, -40.0, -40.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(v.iter().all(|&x| x < 1e-300));
    }

    #[test]
    fn matches_mean_of_choice_probabilities() {
        let ladder = CostLadder::new(0.2, vec![0.6, 0.5], 0.25, 1.1).unwrap();
        let g = star();
        let y_e = [1.5, 0.4, 2.2];
        let psi = [0.7, 1.9, -0.3];
        let l = expected_outcomes(&ladder, &g, &psi, &y_e).unwrap();
        let ybar = g.mul_vec(&y_e);
        for i in 0..3 {
            let p =
                super::super::choice_probabilities_to_tol(psi[i], ybar[i], &ladder, 1e-14).unwrap();
            assert_abs_diff_eq!(l[i], p.mean(), epsilon = 1e-10);
        }
    }

    #[test]
    fn solver_reports_non_convergence_with_last_iterate() {
        let ladder = CostLadder::new(0.5, vec![0.6], 0.3, 1.0).unwrap();
        let opts = EquilibriumOptions {
            max_iter: 2,
            ..Default::default()
        };
        let err = solve_equilibrium_psi(
            &ladder,
            &star(),
            &[3.0, 3.0, 3.0],
            &Beliefs::zeros(3),
            &opts,
        )
        .unwrap_err();
        match err {
            Error::EquilibriumNonConvergence {
                iterations, last, ..
            } => {
                assert_eq!(iterations, 2);
                assert_eq!(last.len(), 3);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn closed_form_when_lambda_is_zero() {
        let ladder = CostLadder::new(0.0, vec![0.5], 0.3, 1.0).unwrap();
        let psi = [0.3, -0.2, 1.0];
        let sol = solve_equilibrium_psi(
            &ladder,
            &star(),
            &psi,
            &Beliefs::zeros(3),
            &EquilibriumOptions::default(),
        )
        .unwrap();
        let a = ladder.cut_points(200).unwrap();
        for i in 0..3 {
            let closed: f64 = a.iter().map(|ar| normal::cdf(psi[i] - ar)).sum();
            assert_abs_diff_eq!(sol.beliefs.y_e[i], closed, epsilon = 1e-12);
        }
        assert!(sol.iterations <= 2);
    }
}
