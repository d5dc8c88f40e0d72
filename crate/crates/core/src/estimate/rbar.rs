use serde::{Deserialize, Serialize};

use super::data::EstimationData;
use super::npl::{npl_fit, EstimateResult, NplOptions};
use crate::error::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RBarSelection {
    pub r_bar: usize,
    /// `(R̄, max-norm change of the shared parameters when moving to R̄ + 1)`.
    pub steps: Vec<(usize, f64)>,
}

/// Parameters that keep their meaning across `R̄`: λ, Γ and the free increments up to `R̄`.
fn shared(fit: &EstimateResult, upto: usize) -> Vec<f64> {
    let l = fit.layout;
    let mut v = vec![fit.estimates[l.lambda()]];
    v.extend(&fit.estimates[l.gamma()]);
    v.extend(
        fit.estimates[l.delta_tilde()]
            .iter()
            .take(upto.saturating_sub(1)),
    );
    v
}

/// Largest admissible `R̄`: at most `max(y) − 2`, and every category `1..=R̄` must be observed.
pub fn r_bar_cap(y: &[u32]) -> usize {
    let max = y.iter().copied().max().unwrap_or(0) as usize;
    let mut seen = vec![false; max + 1];
    for &v in y {
        seen[v as usize] = true;
    }
    let first_gap = (1..=max).find(|&k| !seen[k]).unwrap_or(max + 1);
    (max as i64 - 2).min(first_gap as i64 - 1).max(1) as usize
}

/// Smallest `R̄ ≥ start` whose estimates change by less than `stability_tol` (max norm) when
/// `R̄` grows by one, capped at `max(y) − 2` and below the first empty category (never below 1).
pub fn select_r_bar(
    data: &EstimationData,
    start: usize,
    stability_tol: f64,
    options: &NplOptions,
) -> Result<RBarSelection> {
    let cap = r_bar_cap(&data.y);
    let start = start.max(1);
    if cap <= start {
        return Ok(RBarSelection {
            r_bar: cap.min(start),
            steps: Vec::new(),
        });
    }
    let mut steps = Vec::new();
    let mut r = start;
    let mut current = npl_fit(data, r, None, None, options)?;
    while r < cap {
        let next = npl_fit(data, r + 1, None, None, options)?;
        let a = shared(&current, r);
        let b = shared(&next, r);
        let change = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        steps.push((r, change));
        log::debug!("R̄ = {r}: shared-parameter change {change:.4}");
        if change < stability_tol {
            return Ok(RBarSelection { r_bar: r, steps });
        }
        r += 1;
        current = next;
    }
    Ok(RBarSelection { r_bar: cap, steps })
}
