use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dyads::DyadFrame;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationOptions {
    /// Converged once no coefficient moves by more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Block-coordinate sweeps run before switching to joint Newton steps.
    pub alternating_sweeps: usize,
    /// Fixed effects of scholars with no (or only) links are pinned at ± this value.
    pub cap: f64,
    pub compute_se: bool,
}

impl Default for FormationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 500,
            alternating_sweeps: 10,
            cap: 15.0,
            compute_se: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormationFit {
    pub names: Vec<String>,
    pub beta_bar: Vec<f64>,
    /// Standard errors of `β̄` with the fixed effects profiled out.
    pub beta_se: Option<Vec<f64>>,
    /// Sender effects, normalized to sum to zero over uncapped scholars.
    pub mu: Vec<f64>,
    /// Receiver effects.
    pub nu: Vec<f64>,
    pub mu_capped: Vec<bool>,
    pub nu_capped: Vec<bool>,
    pub converged: bool,
    pub sweeps: usize,
    /// Mean log-likelihood per ordered pair.
    pub loglik: f64,
    /// Max-norm gradient of the mean log-likelihood over the free parameters.
    pub gradient_max_norm: f64,
}

impl FormationFit {
    pub fn any_capped(&self) -> bool {
        self.mu_capped.iter().chain(&self.nu_capped).any(|&c| c)
    }

    pub fn fitted_probability(&self, frame: &DyadFrame, i: usize, j: usize) -> f64 {
        let mut x = vec![0.0; frame.dim()];
        frame.covariates().fill(i, j, &mut x);
        sigmoid(dot(&x, &self.beta_bar) + self.mu[i] + self.nu[j])
    }
}

/// Starting point for the alternating updates.
#[derive(Clone, Debug, PartialEq)]
pub struct FormationStart {
    pub beta_bar: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

#[inline]
fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct State<'a> {
    frame: &'a DyadFrame,
    beta: Vec<f64>,
    mu: Vec<f64>,
    nu: Vec<f64>,
    /// Pairs with a capped sender or receiver are decided and carry no likelihood.
    mu_capped: &'a [bool],
    nu_capped: &'a [bool],
}

struct RowStats {
    ll: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl State<'_> {
    fn active(&self, i: usize, j: usize) -> bool {
        i != j && !self.mu_capped[i] && !self.nu_capped[j]
    }

    fn row_xb(&self, i: usize, beta: &[f64], buf: &mut [f64], out: &mut [f64]) {
        let cov = self.frame.covariates();
        for j in 0..self.frame.n() {
            if j == i {
                continue;
            }
            cov.fill(i, j, buf);
            out[j] = dot(buf, beta);
        }
    }

    fn loglik(&self, beta: &[f64]) -> f64 {
        let n = self.frame.n();
        let p = self.frame.dim();
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut buf = vec![0.0; p];
                let cov = self.frame.covariates();
                let mut ll = 0.0;
                for j in (0..n).filter(|&j| self.active(i, j)) {
                    cov.fill(i, j, &mut buf);
                    let eta = dot(&buf, beta) + self.mu[i] + self.nu[j];
                    ll += if self.frame.link(i, j) { eta } else { 0.0 } - softplus(eta);
                }
                ll
            })
            .collect();
        rows.iter().sum()
    }

    fn beta_stats(&self) -> RowStats {
        let n = self.frame.n();
        let p = self.frame.dim();
        let rows: Vec<RowStats> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut s = RowStats {
                    ll: 0.0,
                    grad: vec![0.0; p],
                    hess: vec![0.0; p * p],
                };
                let mut buf = vec![0.0; p];
                let cov = self.frame.covariates();
                for j in (0..n).filter(|&j| self.active(i, j)) {
                    cov.fill(i, j, &mut buf);
                    let eta = dot(&buf, &self.beta) + self.mu[i] + self.nu[j];
                    let pr = sigmoid(eta);
                    let w = f64::from(u8::from(self.frame.link(i, j)));
                    s.ll += w * eta - softplus(eta);
                    let v = pr * (1.0 - pr);
                    for a in 0..p {
                        s.grad[a] += (w - pr) * buf[a];
                        for b in 0..p {
                            s.hess[a * p + b] += v * buf[a] * buf[b];
                        }
                    }
                }
                s
            })
            .collect();
        let mut total = RowStats {
            ll: 0.0,
            grad: vec![0.0; p],
            hess: vec![0.0; p * p],
        };
        for r in rows {
            total.ll += r.ll;
            total
                .grad
                .iter_mut()
                .zip(&r.grad)
                .for_each(|(t, v)| *t += v);
            total
                .hess
                .iter_mut()
                .zip(&r.hess)
                .for_each(|(t, v)| *t += v);
        }
        total
    }
}

/// Newton solve of one fixed effect: `Σ_k (w_k − σ(offset_k + e)) = 0`.
fn solve_effect(mut e: f64, offsets: &[f64], links: usize) -> f64 {
    let target = links as f64;
    for _ in 0..25 {
        let (mut s, mut h) = (0.0, 0.0);
        for &o in offsets {
            let pr = sigmoid(o + e);
            s += pr;
            h += pr * (1.0 - pr);
        }
        if h <= 0.0 {
            break;
        }
        let step = ((target - s) / h).clamp(-2.0, 2.0);
        e += step;
        if step.abs() < 1e-13 {
            break;
        }
    }
    e
}

/// `β̄ | μ, ν` Newton step with step-halving, then per-scholar solves for `μ` and `ν`.
fn alternating_sweep(st: &mut State) -> Result<f64> {
    let n = st.frame.n();
    let p = st.frame.dim();
    let mut max_change = 0.0f64;
    if p > 0 {
        let stats = st.beta_stats();
        let h = DMatrix::from_row_slice(p, p, &stats.hess);
        let g = DVector::from_vec(stats.grad);
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                h.pseudo_inverse(1e-12).map_err(|e| {
                    Error::Numerical(format!("singular dyad covariate information: {e}"))
                })? * &g
            }
        };
        let mut t = 1.0;
        for _ in 0..30 {
            let cand: Vec<f64> = st
                .beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + t * s)
                .collect();
            if st.loglik(&cand) >= stats.ll - 1e-12 * stats.ll.abs() {
                for (b, c) in st.beta.iter_mut().zip(&cand) {
                    max_change = max_change.max((c - *b).abs());
                    *b = *c;
                }
                break;
            }
            t *= 0.5;
        }
    }

    let frame = st.frame;
    let new_mu: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            if st.mu_capped[i] {
                return st.mu[i];
            }
            let mut buf = vec![0.0; p];
            let mut xb = vec![0.0; n];
            st.row_xb(i, &st.beta, &mut buf, &mut xb);
            let js: Vec<usize> = (0..n).filter(|&j| st.active(i, j)).collect();
            let links = js.iter().filter(|&&j| frame.link(i, j)).count();
            let offsets: Vec<f64> = js.iter().map(|&j| xb[j] + st.nu[j]).collect();
            solve_effect(st.mu[i], &offsets, links)
        })
        .collect();
    for (m, v) in st.mu.iter_mut().zip(new_mu) {
        max_change = max_change.max((v - *m).abs());
        *m = v;
    }

    let new_nu: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            if st.nu_capped[j] {
                return st.nu[j];
            }
            let mut buf = vec![0.0; p];
            let cov = frame.covariates();
            let is: Vec<usize> = (0..n).filter(|&i| st.active(i, j)).collect();
            let links = is.iter().filter(|&&i| frame.link(i, j)).count();
            let offsets: Vec<f64> = is
                .iter()
                .map(|&i| {
                    cov.fill(i, j, &mut buf);
                    dot(&buf, &st.beta) + st.mu[i]
                })
                .collect();
            solve_effect(st.nu[j], &offsets, links)
        })
        .collect();
    for (m, v) in st.nu.iter_mut().zip(new_nu) {
        max_change = max_change.max((v - *m).abs());
        *m = v;
    }
    Ok(max_change)
}

/// Newton step on all free parameters at once, halved until the likelihood does not fall.
fn joint_newton_step(st: &mut State, idx: &FreeIndex) -> Result<f64> {
    let (ll, grad, info) = joint_system(st, idx);
    let step = match info.clone().cholesky() {
        Some(ch) => ch.solve(&grad),
        None => {
            let ridge = 1e-8 * info.diagonal().max().max(1.0);
            let shifted = &info + DMatrix::identity(idx.len, idx.len) * ridge;
            shifted
                .cholesky()
                .ok_or_else(|| {
                    Error::Numerical("dyadic logit information is not positive definite".into())
                })?
                .solve(&grad)
        }
    };
    let full = step.amax();
    let mut t = if full > 5.0 { 5.0 / full } else { 1.0 };
    for _ in 0..40 {
        let mut cand = State {
            beta: st.beta.clone(),
            mu: st.mu.clone(),
            nu: st.nu.clone(),
            ..*st
        };
        cand.apply(idx, &step, t);
        let cand_ll = cand.loglik(&cand.beta);
        if cand_ll >= ll - 1e-12 * ll.abs() {
            *st = cand;
            return Ok(t * full);
        }
        t *= 0.5;
    }
    Ok(0.0)
}

/// Σ μ = 0 over uncapped senders, offset absorbed by the uncapped receivers.
fn normalize(st: &mut State) {
    let n = st.mu.len();
    let free: Vec<usize> = (0..n).filter(|&i| !st.mu_capped[i]).collect();
    if free.is_empty() {
        return;
    }
    let c = free.iter().map(|&i| st.mu[i]).sum::<f64>() / free.len() as f64;
    for &i in &free {
        st.mu[i] -= c;
    }
    for j in (0..n).filter(|&j| !st.nu_capped[j]) {
        st.nu[j] += c;
    }
}

/// Effects with no finite maximum: a sender (receiver) whose remaining pairs are all links or
/// all non-links. Capping one side can decide pairs of the other, so this repeats until stable.
fn capped_effects(frame: &DyadFrame, cap: f64) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let n = frame.n();
    let mut mu: Vec<Option<f64>> = vec![None; n];
    let mut nu: Vec<Option<f64>> = vec![None; n];
    let decide = |links: usize, total: usize| {
        if links == 0 {
            Some(-cap)
        } else if links == total {
            Some(cap)
        } else {
            None
        }
    };
    loop {
        let mut changed = false;
        for i in 0..n {
            if mu[i].is_some() {
                continue;
            }
            let js = (0..n).filter(|&j| j != i && nu[j].is_none());
            let (links, total) = js.fold((0, 0), |(l, t), j| {
                (l + usize::from(frame.link(i, j)), t + 1)
            });
            if let Some(c) = decide(links, total) {
                mu[i] = Some(c);
                changed = true;
            }
        }
        for j in 0..n {
            if nu[j].is_some() {
                continue;
            }
            let is = (0..n).filter(|&i| i != j && mu[i].is_none());
            let (links, total) = is.fold((0, 0), |(l, t), i| {
                (l + usize::from(frame.link(i, j)), t + 1)
            });
            if let Some(c) = decide(links, total) {
                nu[j] = Some(c);
                changed = true;
            }
        }
        if !changed {
            return (mu, nu);
        }
    }
}

pub fn fit_dyadic_logit(frame: &DyadFrame, options: &FormationOptions) -> Result<FormationFit> {
    fit_dyadic_logit_from(frame, None, options)
}

/// Dyadic logit `P(w_ij = 1) = σ(ẍ_ij β̄ + μ_i + ν_j)` by alternating a Newton step on `β̄`
/// with per-scholar Newton solves for `μ` and `ν`.
pub fn fit_dyadic_logit_from(
    frame: &DyadFrame,
    start: Option<FormationStart>,
    options: &FormationOptions,
) -> Result<FormationFit> {
    let n = frame.n();
    let p = frame.dim();
    if n < 3 {
        return Err(Error::invalid("the dyadic logit needs at least 3 scholars"));
    }
    let links = frame.link_count();
    let pairs = n * (n - 1);
    if links == 0 || links == pairs {
        return Err(Error::invalid(
            "dyadic logit needs at least one link and one non-link",
        ));
    }
    let out_deg: Vec<usize> = (0..n).map(|i| frame.out_links(i).len()).collect();
    let in_deg = frame.in_degrees();
    let (mu_cap, nu_cap) = capped_effects(frame, options.cap);
    if mu_cap.iter().all(Option::is_some) || nu_cap.iter().all(Option::is_some) {
        return Err(Error::invalid(
            "every scholar's links are fully determined; the dyadic logit has no free effects",
        ));
    }

    let logit = |d: usize| {
        let q = (d as f64 + 0.5) / (n as f64);
        (q / (1.0 - q)).ln() / 2.0
    };
    let start = start.unwrap_or_else(|| FormationStart {
        beta_bar: vec![0.0; p],
        mu: out_deg.iter().map(|&d| logit(d)).collect(),
        nu: in_deg.iter().map(|&d| logit(d)).collect(),
    });
    if start.beta_bar.len() != p || start.mu.len() != n || start.nu.len() != n {
        return Err(Error::invalid(
            "starting values do not match the dyad frame",
        ));
    }
    let mu_capped: Vec<bool> = mu_cap.iter().map(Option::is_some).collect();
    let nu_capped: Vec<bool> = nu_cap.iter().map(Option::is_some).collect();
    let mut st = State {
        frame,
        beta: start.beta_bar,
        mu: start.mu,
        nu: start.nu,
        mu_capped: &mu_capped,
        nu_capped: &nu_capped,
    };
    for i in 0..n {
        if let Some(c) = mu_cap[i] {
            st.mu[i] = c;
        }
        if let Some(c) = nu_cap[i] {
            st.nu[i] = c;
        }
    }

    let idx = FreeIndex::new(p, &mu_capped, &nu_capped);

    let mut converged = false;
    let mut sweeps = 0;
    let mut max_change = f64::INFINITY;
    while sweeps < options.max_sweeps {
        sweeps += 1;
        max_change = if sweeps <= options.alternating_sweeps {
            alternating_sweep(&mut st)?
        } else {
            joint_newton_step(&mut st, &idx)?
        };
        normalize(&mut st);
        if max_change < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FormationNonConvergence {
            iterations: sweeps,
            max_change,
        });
    }

    let (loglik, gradient_max_norm) = gradient_summary(&st, &idx);
    let beta_se = if options.compute_se && p > 0 {
        beta_standard_errors(&st, &mu_capped, &nu_capped)
    } else {
        None
    };
    if mu_capped.iter().chain(&nu_capped).any(|&c| c) {
        log::warn!("some scholars have no links or link to everyone; their fixed effects are capped at ±{}", options.cap);
    }
    Ok(FormationFit {
        names: frame.names(),
        beta_bar: st.beta,
        beta_se,
        mu: st.mu,
        nu: st.nu,
        mu_capped,
        nu_capped,
        converged,
        sweeps,
        loglik,
        gradient_max_norm,
    })
}

/// Mean log-likelihood and max-norm of its gradient over the free parameters.
fn gradient_summary(st: &State, idx: &FreeIndex) -> (f64, f64) {
    let n = st.frame.n();
    let p = st.frame.dim();
    let mut grad = vec![0.0; idx.len];
    let mut ll = 0.0;
    let mut buf = vec![0.0; p];
    let cov = st.frame.covariates();
    for i in 0..n {
        for j in (0..n).filter(|&j| st.active(i, j)) {
            cov.fill(i, j, &mut buf);
            let eta = dot(&buf, &st.beta) + st.mu[i] + st.nu[j];
            let link = f64::from(u8::from(st.frame.link(i, j)));
            ll += link * eta - softplus(eta);
            let r = link - sigmoid(eta);
            for a in 0..p {
                grad[a] += r * buf[a];
            }
            if let Some(k) = idx.mu[i] {
                grad[k] += r;
            }
            if let Some(l) = idx.nu[j] {
                grad[l] += r;
            }
        }
    }
    let pairs = (n * (n - 1)) as f64;
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    (ll / pairs, gmax / pairs)
}

/// Positions of the free parameters in the joint vector `[β̄, μ_free, ν_free]`; one receiver
/// effect is left out for the location normalization.
struct FreeIndex {
    p: usize,
    mu: Vec<Option<usize>>,
    nu: Vec<Option<usize>>,
    len: usize,
}

impl FreeIndex {
    fn new(p: usize, mu_capped: &[bool], nu_capped: &[bool]) -> Self {
        let n = mu_capped.len();
        let mut len = p;
        let mut mu = vec![None; n];
        for i in 0..n {
            if !mu_capped[i] {
                mu[i] = Some(len);
                len += 1;
            }
        }
        let dropped = (0..n).rev().find(|&j| !nu_capped[j]);
        let mut nu = vec![None; n];
        for j in 0..n {
            if !nu_capped[j] && Some(j) != dropped {
                nu[j] = Some(len);
                len += 1;
            }
        }
        Self { p, mu, nu, len }
    }
}

/// Log-likelihood, gradient and information over the free parameters.
fn joint_system(st: &State, idx: &FreeIndex) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n = st.frame.n();
    let p = idx.p;
    let mut grad = DVector::<f64>::zeros(idx.len);
    let mut info = DMatrix::<f64>::zeros(idx.len, idx.len);
    let mut ll = 0.0;
    let mut buf = vec![0.0; p];
    let cov = st.frame.covariates();
    for i in 0..n {
        for j in (0..n).filter(|&j| st.active(i, j)) {
            cov.fill(i, j, &mut buf);
            let eta = dot(&buf, &st.beta) + st.mu[i] + st.nu[j];
            let pr = sigmoid(eta);
            let link = f64::from(u8::from(st.frame.link(i, j)));
            ll += link * eta - softplus(eta);
            let r = link - pr;
            let w = pr * (1.0 - pr);
            for a in 0..p {
                grad[a] += r * buf[a];
                for b in 0..=a {
                    info[(a, b)] += w * buf[a] * buf[b];
                }
            }
            let (km, kn) = (idx.mu[i], idx.nu[j]);
            if let Some(k) = km {
                grad[k] += r;
                info[(k, k)] += w;
                for a in 0..p {
                    info[(k, a)] += w * buf[a];
                }
            }
            if let Some(l) = kn {
                grad[l] += r;
                info[(l, l)] += w;
                for a in 0..p {
                    info[(l, a)] += w * buf[a];
                }
            }
            if let (Some(k), Some(l)) = (km, kn) {
                info[(k.max(l), k.min(l))] += w;
            }
        }
    }
    info.fill_upper_triangle_with_lower_triangle();
    (ll, grad, info)
}

impl State<'_> {
    fn apply(&mut self, idx: &FreeIndex, step: &DVector<f64>, t: f64) {
        for a in 0..idx.p {
            self.beta[a] += t * step[a];
        }
        for i in 0..self.mu.len() {
            if let Some(k) = idx.mu[i] {
                self.mu[i] += t * step[k];
            }
            if let Some(l) = idx.nu[i] {
                self.nu[i] += t * step[l];
            }
        }
    }
}

/// Inverse of the Schur complement of the fixed-effect block of the information matrix.
fn beta_standard_errors(st: &State, mu_capped: &[bool], nu_capped: &[bool]) -> Option<Vec<f64>> {
    let p = st.frame.dim();
    let idx = FreeIndex::new(p, mu_capped, nu_capped);
    let (_, _, info) = joint_system(st, &idx);
    let m = idx.len - p;
    let i_bb = info.view((0, 0), (p, p)).into_owned();
    let i_ba = info.view((0, p), (p, m)).into_owned();
    let i_aa = info.view((p, p), (m, m)).into_owned();
    let chol = i_aa.cholesky()?;
    let solved = chol.solve(&i_ba.transpose());
    let schur = i_bb - &i_ba * solved;
    let inv = schur.try_inverse()?;
    Some((0..p).map(|k| inv[(k, k)].max(0.0).sqrt()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::dyads::DyadCovariates;
    use std::sync::Arc;

    struct Constant;
    impl DyadCovariates for Constant {
        fn names(&self) -> Vec<String> {
            vec!["c".into()]
        }
        fn fill(&self, i: usize, j: usize, out: &mut [f64]) {
            out[0] = ((i + j) % 2) as f64;
        }
    }

    #[test]
    fn rejects_frames_without_links() {
        let frame = DyadFrame::from_out_links(4, Arc::new(Constant), vec![vec![]; 4]).unwrap();
        assert!(matches!(
            fit_dyadic_logit(&frame, &FormationOptions::default()),
            Err(Error::Invalid(_))
        ));
    }

    fn random_links(n: usize, seed: u64) -> Vec<Vec<usize>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && rng.random::<f64>() < 0.2)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn isolated_sender_is_capped() {
        let mut links = random_links(40, 5);
        links[0].clear();
        let frame = DyadFrame::from_out_links(40, Arc::new(Constant), links).unwrap();
        let fit = fit_dyadic_logit(&frame, &FormationOptions::default()).unwrap();
        assert!(fit.mu_capped[0]);
        assert_eq!(fit.mu[0], -15.0);
        assert!(fit.any_capped());
        assert!(fit.converged);
        assert!(fit.gradient_max_norm < 1e-6);
        let free_sum: f64 = (0..40)
            .filter(|&i| !fit.mu_capped[i])
            .map(|i| fit.mu[i])
            .sum();
        assert!(free_sum.abs() < 1e-10);
    }

    #[test]
    fn stable_link_functions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
