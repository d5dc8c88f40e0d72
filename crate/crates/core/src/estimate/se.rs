use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::EstimationData;
use super::likelihood::PseudoLikelihood;
use super::npl::{npl_fit, EstimateResult, NplOptions};
use super::params::NaturalParams;
use crate::error::{Error, Result};
use crate::game::{self, Beliefs, CostLadder, EquilibriumOptions};
use crate::simulate::draw_outcomes;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SeMethod {
    /// Resimulate outcomes from the fitted model on the observed network and design, refit.
    Bootstrap { reps: usize, seed: u64 },
    /// `A⁻¹ B A⁻ᵀ / n` from the NPL first-order conditions, with `A` by finite differences
    /// through the equilibrium beliefs.
    Sandwich,
}

impl SeMethod {
    pub fn label(&self) -> &'static str {
        match self {
            SeMethod::Bootstrap { .. } => "bootstrap",
            SeMethod::Sandwich => "sandwich",
        }
    }
}

/// Natural-scale covariance of the estimates.
#[derive(Clone, Debug)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    pub standard_errors: Vec<f64>,
    pub method: SeMethod,
    pub used: usize,
    pub dropped: usize,
    pub warnings: Vec<String>,
}

/// Share of failed bootstrap replications above which a warning is attached.
pub const MAX_DROP_SHARE: f64 = 0.2;

pub fn standard_errors(
    fit: &EstimateResult,
    data: &EstimationData,
    method: SeMethod,
    options: &NplOptions,
) -> Result<Covariance> {
    if !fit.converged {
        return Err(Error::invalid("standard errors require a converged fit"));
    }
    match method {
        SeMethod::Bootstrap { reps, seed } => bootstrap(fit, data, reps, seed, options),
        SeMethod::Sandwich => sandwich(fit, data),
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
}

fn finish(
    mut matrix: DMatrix<f64>,
    method: SeMethod,
    used: usize,
    dropped: usize,
    warnings: Vec<String>,
) -> Covariance {
    symmetrize(&mut matrix);
    let standard_errors = (0..matrix.nrows())
        .map(|k| {
            if matrix[(k, k)].is_nan() {
                f64::NAN
            } else {
                matrix[(k, k)].max(0.0).sqrt()
            }
        })
        .collect();
    Covariance {
        matrix,
        standard_errors,
        method,
        used,
        dropped,
        warnings,
    }
}

fn bootstrap(
    fit: &EstimateResult,
    data: &EstimationData,
    reps: usize,
    seed: u64,
    options: &NplOptions,
) -> Result<Covariance> {
    if reps < 2 {
        return Err(Error::invalid(format!(
            "bootstrap needs at least 2 replications, got {reps}"
        )));
    }
    let nat = fit.natural();
    let ladder = nat.ladder()?;
    let psi = game::psi(&data.z, &nat.gamma)?;
    let eq = game::solve_equilibrium_psi(
        &ladder,
        &data.g,
        &psi,
        &Beliefs {
            y_e: fit.beliefs.clone(),
        },
        &EquilibriumOptions::default(),
    )?;
    let theta_hat = fit.param_vector();

    let draws: Vec<Option<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let y = draw_outcomes(&ladder, &data.g, &psi, &eq.beliefs, &mut rng).ok()?;
            let star = data.with_outcomes(y);
            match npl_fit(&star, fit.r_bar, Some(&theta_hat), None, options) {
                Ok(r) if r.converged => Some(r.estimates),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("bootstrap replication {b} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let kept: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let dropped = reps - kept.len();
    let mut warnings = Vec::new();
    if dropped as f64 > MAX_DROP_SHARE * reps as f64 {
        let msg = format!("{dropped} of {reps} bootstrap replications failed to converge");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if kept.len() < 2 {
        return Err(Error::Numerical(format!(
            "only {} bootstrap replications converged",
            kept.len()
        )));
    }
    let p = kept[0].len();
    let m = kept.len() as f64;
    let mean: Vec<f64> = (0..p)
        .map(|k| kept.iter().map(|v| v[k]).sum::<f64>() / m)
        .collect();
    let mut cov = DMatrix::zeros(p, p);
    for v in &kept {
        for r in 0..p {
            for c in 0..p {
                cov[(r, c)] += (v[r] - mean[r]) * (v[c] - mean[c]);
            }
        }
    }
    cov /= m - 1.0;
    Ok(finish(
        cov,
        SeMethod::Bootstrap { reps, seed },
        kept.len(),
        dropped,
        warnings,
    ))
}

/// Mean natural-scale score at `nat`, with beliefs at the equilibrium of `nat`.
fn mean_score_at_equilibrium(
    data: &EstimationData,
    nat: &NaturalParams,
    r_bar: usize,
    warm: &[f64],
) -> Result<Vec<f64>> {
    let ladder = CostLadder::probe(nat.lambda, &nat.delta_tilde, nat.delta_bar, nat.rho)?;
    let psi = game::psi(&data.z, &nat.gamma)?;
    let opts = EquilibriumOptions {
        tol: 1e-12,
        ..Default::default()
    };
    let eq = game::solve_equilibrium_psi(
        &ladder,
        &data.g,
        &psi,
        &Beliefs { y_e: warm.to_vec() },
        &opts,
    )?;
    let lik = PseudoLikelihood::new(data, &eq.beliefs.y_e, r_bar)?;
    Ok(lik.value_grad_natural(nat).1)
}

fn sandwich(fit: &EstimateResult, data: &EstimationData) -> Result<Covariance> {
    let nat = fit.natural();
    let layout = fit.layout;
    let p = layout.len();
    let n = data.n() as f64;
    let base = nat.to_vec();

    let ladder = nat.ladder()?;
    let psi = game::psi(&data.z, &nat.gamma)?;
    let eq = game::solve_equilibrium_psi(
        &ladder,
        &data.g,
        &psi,
        &Beliefs {
            y_e: fit.beliefs.clone(),
        },
        &EquilibriumOptions {
            tol: 1e-12,
            ..Default::default()
        },
    )?;
    let lik = PseudoLikelihood::new(data, &eq.beliefs.y_e, fit.r_bar)?;
    let scores = lik.scores_natural(&nat)?;
    let meat = scores.transpose() * &scores / n;

    let mut jac = DMatrix::zeros(p, p);
    let mut free = vec![true; p];
    for k in 0..p {
        let h = 1e-5 * base[k].abs().max(1.0);
        let shifted = |delta: f64| -> Option<Vec<f64>> {
            let mut v = base.clone();
            v[k] += delta;
            let np = NaturalParams::from_vec(layout, &v).ok()?;
            let s = mean_score_at_equilibrium(data, &np, fit.r_bar, &eq.beliefs.y_e).ok()?;
            s.iter().all(|x| x.is_finite()).then_some(s)
        };
        let column: Option<Vec<f64>> = match (shifted(h), shifted(-h)) {
            (Some(up), Some(dn)) => Some(
                up.iter()
                    .zip(&dn)
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect(),
            ),
            (Some(up), None) => {
                shifted(0.0).map(|mid| up.iter().zip(&mid).map(|(a, b)| (a - b) / h).collect())
            }
            (None, Some(dn)) => {
                shifted(0.0).map(|mid| mid.iter().zip(&dn).map(|(a, b)| (a - b) / h).collect())
            }
            (None, None) => None,
        };
        match column {
            Some(col) => {
                for (r, v) in col.into_iter().enumerate() {
                    jac[(r, k)] = v;
                }
            }
            None => free[k] = false,
        }
    }
    for k in 0..p {
        if meat.row(k).iter().any(|v| !v.is_finite()) {
            free[k] = false;
        }
    }
    let idx: Vec<usize> = (0..p).filter(|&k| free[k]).collect();
    if idx.is_empty() {
        return Err(Error::Numerical("sandwich covariance is not finite".into()));
    }
    let sub = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]);
    let inv = sub(&jac).try_inverse().ok_or_else(|| {
        Error::Numerical("score Jacobian is singular; parameters are not locally identified".into())
    })?;
    let reduced = &inv * sub(&meat) * inv.transpose() / n;
    if reduced.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("sandwich covariance is not finite".into()));
    }
    let mut cov = DMatrix::from_element(p, p, f64::NAN);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            cov[(i, j)] = reduced[(r, c)];
        }
    }
    let mut warnings = Vec::new();
    if idx.len() < p {
        let names = layout.names(&data.names);
        let held: Vec<&str> = (0..p)
            .filter(|&k| !free[k])
            .map(|k| names[k].as_str())
            .collect();
        let msg = format!(
            "score is not differentiable at the estimate in {}; sandwich computed with these held fixed and their standard errors left undefined",
            held.join(", ")
        );
        warnings.push(msg);
    }
    Ok(finish(cov, SeMethod::Sandwich, 0, 0, warnings))
}
