use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::data::{ColumnKind, EstimationData};
use super::likelihood::PseudoLikelihood;
use super::params::{NaturalParams, ParamLayout, ParamVector};
use crate::error::{Error, Result};
use crate::game::{self, Beliefs};
use crate::normal;
use crate::optim::{self, BfgsOptions, BfgsStatus};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NplOptions {
    /// Joint stopping rule on `‖Δθ‖₁` and `‖Δyᵉ‖₁`.
    pub tol: f64,
    pub max_outer: usize,
    pub inner: BfgsOptions,
    /// An inner run that stalls with a larger gradient than this is reported as a failure.
    pub stall_grad_tol: f64,
}

impl Default for NplOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_outer: 200,
            inner: BfgsOptions {
                grad_tol: 1e-10,
                f_tol: 0.0,
                ..BfgsOptions::default()
            },
            stall_grad_tol: 1e-4,
        }
    }
}

/// One outer NPL step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NplIteration {
    pub iteration: usize,
    /// Transformed parameters after the step.
    pub theta: Vec<f64>,
    pub theta_change_l1: f64,
    pub belief_change_l1: f64,
    /// `L_n` at the previous θ and at the new θ, both at the previous beliefs.
    pub loglik_start: f64,
    pub loglik: f64,
    pub inner_iterations: usize,
    pub inner_status: BfgsStatus,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateResult {
    pub names: Vec<String>,
    pub layout: ParamLayout,
    /// Transformed parameters.
    pub theta: Vec<f64>,
    /// Natural-scale estimates in layout order.
    pub estimates: Vec<f64>,
    pub standard_errors: Option<Vec<f64>>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub se_method: Option<String>,
    pub converged: bool,
    pub npl_iterations: usize,
    pub loglik: f64,
    pub r_bar: usize,
    pub beliefs: Vec<f64>,
    pub trace: Vec<NplIteration>,
}

impl EstimateResult {
    pub fn param_vector(&self) -> ParamVector {
        ParamVector {
            layout: self.layout,
            values: self.theta.clone(),
        }
    }

    pub fn natural(&self) -> NaturalParams {
        self.param_vector().to_natural()
    }

    pub fn lambda(&self) -> f64 {
        self.estimates[self.layout.lambda()]
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.estimates[k])
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        let k = self.names.iter().position(|n| n == name)?;
        self.standard_errors.as_ref().map(|se| se[k])
    }

    pub fn set_covariance(&mut self, cov: &DMatrix<f64>, method: &str) {
        self.standard_errors = Some(
            (0..cov.nrows())
                .map(|k| {
                    if cov[(k, k)].is_nan() {
                        f64::NAN
                    } else {
                        cov[(k, k)].max(0.0).sqrt()
                    }
                })
                .collect(),
        );
        self.covariance = Some(
            (0..cov.nrows())
                .map(|r| cov.row(r).iter().copied().collect())
                .collect(),
        );
        self.se_method = Some(method.to_string());
    }
}

/// Starting values from outcome frequencies with λ small and the other slopes at zero.
///
/// With `u` equal to the intercept, `P(y ≥ r) = Φ(u − a_r)`, so empirical tail frequencies
/// give the intercept and the free cut points directly.
pub fn initial_theta(data: &EstimationData, r_bar: usize) -> Result<ParamVector> {
    let layout = ParamLayout::new(data.z.ncols(), r_bar)?;
    let n = data.n() as f64;
    let lambda = LAMBDA_START;
    let clamp = |p: f64| p.clamp(0.5 / n, 1.0 - 0.5 / n);
    let tail = |r: u32| clamp(data.y.iter().filter(|&&v| v >= r).count() as f64 / n);
    let intercept = normal::quantile(tail(1));
    let cut = |r: u32| intercept - normal::quantile(tail(r));

    let mut gamma = vec![0.0; layout.n_gamma];
    if let Some(c) = data.kinds.iter().position(|&k| k == ColumnKind::Intercept) {
        gamma[c] = intercept;
    }
    let mut delta_tilde = Vec::with_capacity(r_bar - 1);
    let mut prev = 0.0;
    for r in 2..=r_bar as u32 {
        let a = cut(r).max(prev + lambda + 0.05);
        delta_tilde.push((a - prev - lambda).max(0.05));
        prev = a;
    }
    let next = cut(r_bar as u32 + 1).max(prev + lambda + 0.05);
    let delta_bar = ((next - prev - lambda) / r_bar as f64).max(0.05);
    ParamVector::from_natural(&NaturalParams {
        lambda,
        gamma,
        delta_tilde,
        delta_bar,
        rho: 1.0,
    })
}

/// Starting peer effect, also used to restart an inner solve stuck at `λ ≈ 0`.
const LAMBDA_START: f64 = 0.01;

/// Below this `λ` the log-scale gradient `λ·∂L/∂λ` is too small to move the optimizer.
const LAMBDA_FLOOR: f64 = 1e-8;

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Inverse of the outer-product-of-scores information in θ coordinates, as a BFGS start.
fn bhhh_inverse(lik: &PseudoLikelihood<'_>, theta: &ParamVector) -> Option<DMatrix<f64>> {
    let nat = theta.to_natural();
    let mut s = lik.scores_natural(&nat).ok()?;
    let chain = nat.to_vec();
    for k in 0..theta.layout.len() {
        if theta.layout.is_log(k) {
            s.column_mut(k).scale_mut(chain[k]);
        }
    }
    let n = s.nrows() as f64;
    let mut info = s.transpose() * &s / n;
    let ridge = 1e-8 * (1.0 + info.diagonal().amax());
    for k in 0..info.nrows() {
        info[(k, k)] += ridge;
    }
    info.cholesky().map(|c| c.inverse())
}

/// Nested pseudo-likelihood: alternate `θ ← argmax L_n(θ, yᵉ)` and `yᵉ ← L(θ, yᵉ)` until both
/// move by less than `tol` in L1.
///
/// Hitting `max_outer` returns a result with `converged = false` and the full trace.
pub fn npl_fit(
    data: &EstimationData,
    r_bar: usize,
    init_theta: Option<&ParamVector>,
    init_beliefs: Option<&Beliefs>,
    options: &NplOptions,
) -> Result<EstimateResult> {
    let layout = ParamLayout::new(data.z.ncols(), r_bar)?;
    let mut theta = match init_theta {
        Some(t) if t.layout == layout => t.values.clone(),
        Some(_) => return Err(Error::invalid("initial θ does not match the design and R̄")),
        None => initial_theta(data, r_bar)?.values,
    };
    let mut y_e = match init_beliefs {
        Some(b) if b.y_e.len() == data.n() => b.y_e.clone(),
        Some(_) => {
            return Err(Error::invalid(
                "initial beliefs do not match the number of agents",
            ))
        }
        None => Beliefs::from_outcomes(&data.y).y_e,
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut loglik = f64::NEG_INFINITY;
    for t in 1..=options.max_outer {
        let lik = PseudoLikelihood::new(data, &y_e, r_bar)?;
        let start = lik.value(&ParamVector::new(layout, theta.clone())?);
        let objective = |x: &[f64], g: &mut [f64]| {
            let pv = ParamVector {
                layout,
                values: x.to_vec(),
            };
            let (v, grad) = lik.value_grad(&pv);
            for (gi, v) in g.iter_mut().zip(grad) {
                *gi = -v;
            }
            -v
        };
        let h0 = bhhh_inverse(&lik, &ParamVector::new(layout, theta.clone())?);
        let mut res = optim::minimize_from(objective, &theta, h0, &options.inner)?;
        let lam = layout.lambda();
        let nat = ParamVector::new(layout, res.x.clone())?.to_natural();
        if nat.lambda < LAMBDA_FLOOR && lik.value_grad_natural(&nat).1[lam] > 0.0 {
            let mut restart = res.x.clone();
            restart[lam] = LAMBDA_START.ln();
            let h0 = bhhh_inverse(&lik, &ParamVector::new(layout, restart.clone())?);
            let alt = optim::minimize_from(objective, &restart, h0, &options.inner)?;
            if alt.f < res.f {
                log::debug!("NPL {t}: restarted λ off the boundary");
                res = alt;
            }
        }
        if res.status == BfgsStatus::LineSearchStalled && res.grad_norm() > options.stall_grad_tol {
            return Err(Error::Optimizer {
                message: format!("line search stalled in NPL iteration {t}"),
                iterations: res.iterations,
                grad_norm: res.grad_norm(),
                last_step: l1(&res.x, &theta),
            });
        }
        let new_theta = res.x;
        let pv = ParamVector::new(layout, new_theta.clone())?;
        let nat = pv.to_natural();
        let ladder =
            crate::game::CostLadder::probe(nat.lambda, &nat.delta_tilde, nat.delta_bar, nat.rho)?;
        let psi = game::psi(&data.z, &nat.gamma)?;
        let new_y_e = game::expected_outcomes(&ladder, &data.g, &psi, &y_e)?;

        let d_theta = l1(&new_theta, &theta);
        let d_y = l1(&new_y_e, &y_e);
        loglik = -res.f;
        trace.push(NplIteration {
            iteration: t,
            theta: new_theta.clone(),
            theta_change_l1: d_theta,
            belief_change_l1: d_y,
            loglik_start: start,
            loglik,
            inner_iterations: res.iterations,
            inner_status: res.status,
        });
        log::debug!("NPL {t}: L_n = {loglik:.8}, |Δθ|₁ = {d_theta:.3e}, |Δyᵉ|₁ = {d_y:.3e}");
        theta = new_theta;
        y_e = new_y_e;
        if d_theta < options.tol && d_y < options.tol {
            converged = true;
            break;
        }
    }

    let pv = ParamVector::new(layout, theta.clone())?;
    Ok(EstimateResult {
        names: layout.names(&data.names),
        layout,
        estimates: pv.to_natural().to_vec(),
        theta,
        standard_errors: None,
        covariance: None,
        se_method: None,
        converged,
        npl_iterations: trace.len(),
        loglik,
        r_bar,
        beliefs: y_e,
        trace,
    })
}
