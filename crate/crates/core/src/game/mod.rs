//! Count-outcome network game: cost ladder, cut points, choice probabilities, the
//! expected-outcome map and its equilibrium, and the uniqueness bound on the peer effect.

mod bound;
mod choice;
mod equilibrium;
mod ladder;

pub use bound::{max_density_sum, peer_effect_bound, uniqueness_constant};
pub(crate) use choice::TAIL_Z;
pub use choice::{
    choice_probabilities, choice_probabilities_to_tol, ChoiceProbabilities, TAIL_TOL,
};
pub use equilibrium::{
    expected_outcome_map, expected_outcomes, psi, solve_equilibrium, solve_equilibrium_psi,
    Beliefs, EquilibriumOptions, EquilibriumSolution, GameParams,
};
pub use ladder::{CostLadder, CUT_POINT_CAP};

use std::io::Write;

use crate::error::Result;
use crate::netbuild::InteractionNetwork;

/// Writes `r, a_r, δ_r` rows for `r = 1..=r_max` followed by a comment line with the bound.
pub fn write_ladder_diagnostics<W: Write>(
    mut out: W,
    ladder: &CostLadder,
    g: &InteractionNetwork,
    r_max: usize,
) -> Result<()> {
    let a = ladder.cut_points(r_max)?;
    writeln!(out, "r,a_r,delta_r")?;
    for (k, ar) in a.iter().enumerate() {
        writeln!(out, "{},{},{}", k + 1, ar, ladder.increment(k + 1))?;
    }
    writeln!(out, "# peer_effect_bound,{}", peer_effect_bound(ladder, g)?)?;
    Ok(())
}
