//! Dyadic network formation with sender and receiver fixed effects.

mod dyads;
mod logit;
mod sieve;

pub use dyads::{dyad_covariates, DyadCovariates, DyadFrame, ScholarDyadCovariates};
pub use logit::{
    fit_dyadic_logit, fit_dyadic_logit_from, FormationFit, FormationOptions, FormationStart,
};
pub use sieve::{sieve_from_effects, sieve_len, sieve_terms, SieveTerms};
