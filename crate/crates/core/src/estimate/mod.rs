//! Nested pseudo-likelihood estimation of the peer effect, own and contextual effects and the
//! cost ladder, with standard errors and selection of the number of free increments.

mod data;
mod likelihood;
mod npl;
mod params;
mod rbar;
mod se;

pub use data::{ColumnKind, EstimationData, MAX_OUTCOME};
pub use likelihood::{pseudo_loglik, PseudoLikelihood, PROB_FLOOR};
pub use npl::{initial_theta, npl_fit, EstimateResult, NplIteration, NplOptions};
pub use params::{NaturalParams, ParamLayout, ParamVector};
pub use rbar::{r_bar_cap, select_r_bar, RBarSelection};
pub use se::{standard_errors, Covariance, SeMethod, MAX_DROP_SHARE};

/// Significance stars for a two-sided normal test: `***` p<0.01, `**` p<0.05, `*` p<0.1.
pub fn significance_stars(estimate: f64, se: f64) -> &'static str {
    if !(se > 0.0) || !estimate.is_finite() {
        return "";
    }
    let p = 2.0 * crate::normal::sf((estimate / se).abs());
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}
