use nalgebra::{DMatrix, DVector};

use super::logit::FormationFit;
use crate::error::{Error, Result};
use crate::netbuild::InteractionNetwork;

/// Standardized polynomial terms in the estimated fixed effects and their peer averages.
#[derive(Clone, Debug, PartialEq)]
pub struct SieveTerms {
    pub names: Vec<String>,
    /// n × terms, every non-constant column with mean 0 and unit standard deviation.
    pub columns: DMatrix<f64>,
    pub warnings: Vec<String>,
}

const BASE_NAMES: [&str; 4] = ["mu", "nu", "mu_bar", "nu_bar"];

/// Multisets of `0..vars` with size 1..=degree, in graded lexicographic order.
fn monomials(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut level: Vec<Vec<usize>> = (0..vars).map(|v| vec![v]).collect();
    for _ in 0..degree {
        out.extend(level.iter().cloned());
        let mut next = Vec::new();
        for m in &level {
            let last = *m.last().unwrap();
            for v in last..vars {
                let mut e = m.clone();
                e.push(v);
                next.push(e);
            }
        }
        level = next;
    }
    out
}

fn monomial_name(m: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut k = 0;
    while k < m.len() {
        let v = m[k];
        let power = m[k..].iter().take_while(|&&w| w == v).count();
        parts.push(if power == 1 {
            BASE_NAMES[v].to_string()
        } else {
            format!("{}^{power}", BASE_NAMES[v])
        });
        k += power;
    }
    parts.join("*")
}

/// Number of sieve columns for a given polynomial degree (4 for degree 1, 14 for degree 2).
pub fn sieve_len(degree: usize) -> usize {
    monomials(BASE_NAMES.len(), degree).len()
}

pub fn sieve_terms(
    fit: &FormationFit,
    g: &InteractionNetwork,
    degree: usize,
) -> Result<SieveTerms> {
    let n = g.n();
    if fit.mu.len() != n || fit.nu.len() != n {
        return Err(Error::invalid(format!(
            "fixed effects cover {} scholars but the network has {n}",
            fit.mu.len()
        )));
    }
    let mu = clamp_capped(&fit.mu, &fit.mu_capped);
    let nu = clamp_capped(&fit.nu, &fit.nu_capped);
    Ok(sieve_from_effects(&mu, &nu, g, degree)?.prune_collinear(1e-6))
}

impl SieveTerms {
    /// Drops columns lying (up to relative residual `tol`) in the span of the earlier kept ones,
    /// zero columns included. On an undirected network `μ̂ − ν̂` is constant, which makes half of
    /// the terms exact duplicates.
    pub fn prune_collinear(self, tol: f64) -> Self {
        let n = self.columns.nrows();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut keep = Vec::new();
        let mut warnings = self.warnings;
        for (c, name) in self.names.iter().enumerate() {
            let col = self.columns.column(c).into_owned();
            let norm = col.norm();
            let mut r = col.clone();
            for q in &basis {
                let p = q.dot(&r);
                r.axpy(-p, q, 1.0);
            }
            let rn = r.norm();
            if norm > 0.0 && rn > tol * norm {
                basis.push(r / rn);
                keep.push(c);
            } else if norm > 0.0 {
                warnings.push(format!(
                    "sieve term `{name}` is collinear with earlier terms and is dropped"
                ));
            }
        }
        let columns = DMatrix::from_fn(n, keep.len(), |i, k| self.columns[(i, keep[k])]);
        Self {
            names: keep.iter().map(|&c| self.names[c].clone()).collect(),
            columns,
            warnings,
        }
    }
}

/// Moves capped effects to the matching end of the range of the uncapped ones.
fn clamp_capped(v: &[f64], capped: &[bool]) -> Vec<f64> {
    let (lo, hi) = v
        .iter()
        .zip(capped)
        .filter(|(_, c)| !**c)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| {
            (lo.min(*x), hi.max(*x))
        });
    if lo > hi {
        return v.to_vec();
    }
    v.iter()
        .zip(capped)
        .map(|(&x, &c)| match (c, x < 0.0) {
            (false, _) => x,
            (true, true) => lo,
            (true, false) => hi,
        })
        .collect()
}

pub fn sieve_from_effects(
    mu: &[f64],
    nu: &[f64],
    g: &InteractionNetwork,
    degree: usize,
) -> Result<SieveTerms> {
    let n = g.n();
    if degree == 0 {
        return Err(Error::invalid("sieve degree must be at least 1"));
    }
    if mu.len() != n || nu.len() != n {
        return Err(Error::invalid("fixed effects and network differ in size"));
    }
    let base = [mu.to_vec(), nu.to_vec(), g.mul_vec(mu), g.mul_vec(nu)];
    let terms = monomials(base.len(), degree);
    let mut columns = DMatrix::zeros(n, terms.len());
    let mut names = Vec::with_capacity(terms.len());
    let mut warnings = Vec::new();
    for (c, m) in terms.iter().enumerate() {
        let name = monomial_name(m);
        let raw: Vec<f64> = (0..n)
            .map(|i| m.iter().map(|&v| base[v][i]).product())
            .collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            warnings.push(format!(
                "sieve term `{name}` has no variation and is set to zero"
            ));
        } else {
            for i in 0..n {
                columns[(i, c)] = (raw[i] - mean) / sd;
            }
        }
        names.push(name);
    }
    Ok(SieveTerms {
        names,
        columns,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_counts() {
        assert_eq!(sieve_len(1), 4);
        assert_eq!(sieve_len(2), 14);
        assert_eq!(sieve_len(3), 34);
    }

    #[test]
    fn names_are_readable() {
        let names: Vec<String> = monomials(4, 2).iter().map(|m| monomial_name(m)).collect();
        assert_eq!(names[0], "mu");
        assert_eq!(names[4], "mu^2");
        assert_eq!(names[5], "mu*nu");
        assert_eq!(names[13], "nu_bar^2");
    }

    #[test]
    fn constant_column_is_zeroed() {
        let g = InteractionNetwork::empty(4);
        let s = sieve_from_effects(&[1.0, 2.0, 3.0, 4.0], &[0.5; 4], &g, 1).unwrap();
        assert!(s.columns.column(1).iter().all(|&v| v == 0.0));
        assert_eq!(s.warnings.len(), 3);
        let col = s.columns.column(0);
        assert!(col.sum().abs() < 1e-12);
        assert!((col.norm_squared() / 4.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_effects_are_pruned() {
        let w = crate::netbuild::Adjacency::from_undirected_pairs(
            4,
            [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)],
        )
        .unwrap();
        let g = crate::netbuild::row_normalize(&w);
        let mu = [0.3, -1.0, 0.4, 0.3];
        let nu: Vec<f64> = mu.iter().map(|m| m + 0.5).collect();
        let s = sieve_from_effects(&mu, &nu, &g, 1)
            .unwrap()
            .prune_collinear(1e-6);
        assert_eq!(s.names, ["mu", "mu_bar"]);
        assert_eq!(s.warnings.len(), 2);
    }
}
