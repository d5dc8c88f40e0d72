use nalgebra::DMatrix;
use rayon::prelude::*;

use super::data::EstimationData;
use super::params::{NaturalParams, ParamLayout, ParamVector};
use crate::error::{Error, Result};
use crate::game::CostLadder;
use crate::netbuild::InteractionNetwork;
use crate::normal;

/// Floor applied to outcome probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

const CHUNK: usize = 256;

/// Derivatives of the cut points `a_1..a_m` with respect to the natural parameters.
struct CutPoints {
    d_lambda: Vec<f64>,
    /// `∂a_r/∂ log δ̄` and `∂a_r/∂ log ρ`; finite even when `δ̄` underflows.
    d_log_delta_bar: Vec<f64>,
    d_log_rho: Vec<f64>,
    delta_bar: f64,
    rho: f64,
}

impl CutPoints {
    fn new(ladder: &CostLadder, m: usize) -> Self {
        let r_bar = ladder.r_bar();
        let (dbar, rho) = (ladder.delta_bar(), ladder.rho());
        let mut d_log_delta_bar = Vec::with_capacity(m);
        let mut d_log_rho = Vec::with_capacity(m);
        let (mut s_pow, mut s_log) = (0.0, 0.0);
        for r in 1..=m {
            if r > r_bar {
                let lb = ((r - 1) as f64).ln();
                let t = (rho * lb + dbar.ln()).exp();
                s_pow += t;
                s_log += t * lb;
            }
            d_log_delta_bar.push(s_pow);
            d_log_rho.push(rho * s_log);
        }
        Self {
            d_lambda: (0..m).map(|k| k as f64).collect(),
            d_log_delta_bar,
            d_log_rho,
            delta_bar: dbar,
            rho,
        }
    }

    fn d_delta_bar(&self, k: usize) -> f64 {
        self.d_log_delta_bar[k] / self.delta_bar
    }

    fn d_rho(&self, k: usize) -> f64 {
        self.d_log_rho[k] / self.rho
    }
}

/// `L_n(θ, yᵉ) = (1/n) Σ_i log p_{i, y_i}` with the beliefs held fixed.
pub struct PseudoLikelihood<'a> {
    y: &'a [u32],
    z: &'a DMatrix<f64>,
    ybar: Vec<f64>,
    layout: ParamLayout,
    max_y: usize,
}

struct Partial {
    value: f64,
    grad_u_lambda: f64,
    grad_gamma: Vec<f64>,
    /// Coefficient on `∂a_r` for `r = 1..=max_y + 1` (index `r − 1`).
    coef_a: Vec<f64>,
}

impl<'a> PseudoLikelihood<'a> {
    pub fn new(data: &'a EstimationData, y_e: &[f64], r_bar: usize) -> Result<Self> {
        Self::from_parts(&data.y, &data.g, &data.z, y_e, r_bar)
    }

    pub fn from_parts(
        y: &'a [u32],
        g: &InteractionNetwork,
        z: &'a DMatrix<f64>,
        y_e: &[f64],
        r_bar: usize,
    ) -> Result<Self> {
        let n = g.n();
        if y.len() != n || z.nrows() != n || y_e.len() != n {
            return Err(Error::invalid(
                "outcomes, beliefs, design and network sizes disagree",
            ));
        }
        Ok(Self {
            y,
            z,
            ybar: g.mul_vec(y_e),
            layout: ParamLayout::new(z.ncols(), r_bar)?,
            max_y: y.iter().copied().max().unwrap_or(0) as usize,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn ladder(&self, nat: &NaturalParams) -> Option<CostLadder> {
        if nat.layout() != self.layout {
            return None;
        }
        CostLadder::probe(nat.lambda, &nat.delta_tilde, nat.delta_bar, nat.rho).ok()
    }

    /// Value only; `−∞` if the parameters do not define a valid ladder.
    pub fn value(&self, theta: &ParamVector) -> f64 {
        self.value_natural(&theta.to_natural())
    }

    pub fn value_natural(&self, nat: &NaturalParams) -> f64 {
        match self.ladder(nat) {
            Some(ladder) => self.accumulate(nat, &ladder, false).value / self.n() as f64,
            None => f64::NEG_INFINITY,
        }
    }

    /// Value and gradient with respect to the natural parameters.
    pub fn value_grad_natural(&self, nat: &NaturalParams) -> (f64, Vec<f64>) {
        self.value_grad_impl(nat, false)
    }

    /// With `log_tail`, the `δ̄` and `ρ` entries are derivatives with respect to their logs.
    fn value_grad_impl(&self, nat: &NaturalParams, log_tail: bool) -> (f64, Vec<f64>) {
        let Some(ladder) = self.ladder(nat) else {
            return (f64::NEG_INFINITY, vec![f64::NAN; self.layout.len()]);
        };
        let part = self.accumulate(nat, &ladder, true);
        let cuts = CutPoints::new(&ladder, self.max_y + 1);
        let l = self.layout;
        let mut grad = vec![0.0; l.len()];
        grad[l.lambda()] = part.grad_u_lambda;
        grad[l.gamma()].copy_from_slice(&part.grad_gamma);
        for (k, &c) in part.coef_a.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let r = k + 1;
            grad[l.lambda()] += c * cuts.d_lambda[k];
            for (m, idx) in l.delta_tilde().enumerate() {
                // δ̃_{m+2} enters a_r for r ≥ m + 2
                if r >= m + 2 {
                    grad[idx] += c;
                }
            }
            if log_tail {
                grad[l.delta_bar()] += c * cuts.d_log_delta_bar[k];
                grad[l.rho()] += c * cuts.d_log_rho[k];
            } else {
                grad[l.delta_bar()] += c * cuts.d_delta_bar(k);
                grad[l.rho()] += c * cuts.d_rho(k);
            }
        }
        let n = self.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (part.value / n, grad)
    }

    /// Value and gradient on the transformed scale used by the optimizer.
    pub fn value_grad(&self, theta: &ParamVector) -> (f64, Vec<f64>) {
        let nat = theta.to_natural();
        let (v, mut g) = self.value_grad_impl(&nat, true);
        let natv = nat.to_vec();
        let l = self.layout;
        for (k, gk) in g.iter_mut().enumerate() {
            if l.is_log(k) && k != l.delta_bar() && k != l.rho() {
                *gk *= natv[k];
            }
        }
        (v, g)
    }

    fn accumulate(&self, nat: &NaturalParams, ladder: &CostLadder, with_grad: bool) -> Partial {
        let a = ladder
            .cut_points(self.max_y + 1)
            .expect("bounded by MAX_OUTCOME");
        let n = self.n();
        let chunks: Vec<Partial> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let range = c * CHUNK..((c + 1) * CHUNK).min(n);
                self.chunk(range, nat, &a, with_grad)
            })
            .collect();
        let mut total = Partial {
            value: 0.0,
            grad_u_lambda: 0.0,
            grad_gamma: vec![0.0; self.layout.n_gamma],
            coef_a: vec![0.0; self.max_y + 1],
        };
        for p in chunks {
            total.value += p.value;
            if with_grad {
                total.grad_u_lambda += p.grad_u_lambda;
                for (t, v) in total.grad_gamma.iter_mut().zip(&p.grad_gamma) {
                    *t += v;
                }
                for (t, v) in total.coef_a.iter_mut().zip(&p.coef_a) {
                    *t += v;
                }
            }
        }
        total
    }

    fn chunk(
        &self,
        range: std::ops::Range<usize>,
        nat: &NaturalParams,
        a: &[f64],
        with_grad: bool,
    ) -> Partial {
        let k = self.layout.n_gamma;
        let mut p = Partial {
            value: 0.0,
            grad_u_lambda: 0.0,
            grad_gamma: vec![0.0; if with_grad { k } else { 0 }],
            coef_a: vec![0.0; if with_grad { self.max_y + 1 } else { 0 }],
        };
        for i in range {
            let (lp, w_u, c_lo, c_hi) = self.agent_terms(i, nat, a);
            p.value += lp;
            if with_grad {
                let y = self.y[i] as usize;
                p.grad_u_lambda += w_u * self.ybar[i];
                for c in 0..k {
                    p.grad_gamma[c] += w_u * self.z[(i, c)];
                }
                if y >= 1 {
                    p.coef_a[y - 1] -= c_lo;
                }
                p.coef_a[y] += c_hi;
            }
        }
        p
    }

    /// `(log p_i, ∂log p/∂u, φ_lo/p, φ_hi/p)` for agent `i`.
    fn agent_terms(&self, i: usize, nat: &NaturalParams, a: &[f64]) -> (f64, f64, f64, f64) {
        let mut u = nat.lambda * self.ybar[i];
        for (c, g) in nat.gamma.iter().enumerate() {
            u += self.z[(i, c)] * g;
        }
        let y = self.y[i] as usize;
        let upper = a[y] - u;
        let lower = if y == 0 {
            f64::NEG_INFINITY
        } else {
            a[y - 1] - u
        };
        let prob = normal::interval_mass(upper, lower);
        if !(prob > PROB_FLOOR) {
            return (PROB_FLOOR.ln(), 0.0, 0.0, 0.0);
        }
        let c_lo = if y == 0 {
            0.0
        } else {
            normal::pdf(lower) / prob
        };
        let c_hi = normal::pdf(upper) / prob;
        (prob.ln(), c_lo - c_hi, c_lo, c_hi)
    }

    /// Per-agent gradients of `log p_{i, y_i}` with respect to the natural parameters (`n × p`).
    pub fn scores_natural(&self, nat: &NaturalParams) -> Result<DMatrix<f64>> {
        let ladder = self.ladder(nat).ok_or_else(|| {
            Error::Numerical("parameters do not define a valid cost ladder".into())
        })?;
        let a = ladder.cut_points(self.max_y + 1)?;
        let cuts = CutPoints::new(&ladder, self.max_y + 1);
        let l = self.layout;
        let mut s = DMatrix::zeros(self.n(), l.len());
        let da = |row: &mut Vec<f64>, r: usize, coef: f64| {
            let k = r - 1;
            row[l.lambda()] += coef * cuts.d_lambda[k];
            for (m, idx) in l.delta_tilde().enumerate() {
                if r >= m + 2 {
                    row[idx] += coef;
                }
            }
            row[l.delta_bar()] += coef * cuts.d_delta_bar(k);
            row[l.rho()] += coef * cuts.d_rho(k);
        };
        for i in 0..self.n() {
            let (_, w_u, c_lo, c_hi) = self.agent_terms(i, nat, &a);
            let y = self.y[i] as usize;
            let mut row = vec![0.0; l.len()];
            row[l.lambda()] = w_u * self.ybar[i];
            for c in 0..l.n_gamma {
                row[1 + c] = w_u * self.z[(i, c)];
            }
            if y >= 1 {
                da(&mut row, y, -c_lo);
            }
            da(&mut row, y + 1, c_hi);
            for (c, v) in row.into_iter().enumerate() {
                s[(i, c)] = v;
            }
        }
        Ok(s)
    }
}

/// `L_n(θ, yᵉ)` for transformed parameters `theta`.
pub fn pseudo_loglik(
    theta: &ParamVector,
    y_e: &[f64],
    y: &[u32],
    g: &InteractionNetwork,
    z: &DMatrix<f64>,
) -> Result<f64> {
    let lik = PseudoLikelihood::from_parts(y, g, z, y_e, theta.layout.r_bar)?;
    if lik.layout() != theta.layout {
        return Err(Error::invalid("parameter layout does not match the design"));
    }
    Ok(lik.value(theta))
}
