//! Count-outcome network games with incomplete information.
//!
//! Agents on a co-authorship network choose integer outcomes (publication counts) under a
//! conformity cost towards their peers' expected outcomes. The crate computes the game's
//! Bayesian Nash equilibrium, simulates from it, estimates peer, own and contextual effects by
//! nested pseudo-likelihood, and corrects for endogenous network formation with a dyadic logit
//! and a sieve control function.

pub mod error;
pub mod estimate;
pub mod formation;
pub mod game;
pub mod io;
pub mod netbuild;
pub mod normal;
pub mod optim;
pub mod pipeline;
pub mod report;
pub mod simulate;

pub use error::{Error, Result};
