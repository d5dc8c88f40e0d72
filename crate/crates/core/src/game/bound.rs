use super::ladder::{CostLadder, CUT_POINT_CAP};
use crate::error::Result;
use crate::netbuild::InteractionNetwork;
use crate::normal;

const GRID_STEP: f64 = 0.01;
const GRID_PAD: f64 = 6.0;
/// Once tail increments exceed this, further cut points only add isolated bumps of height ≈ φ(0).
const SPREAD_GAP: f64 = 12.0;
const DENSITY_REACH: f64 = 9.0;

/// `max_u Σ_r φ(u − a_r)` and its maximizer.
///
/// Dense grid over `[a_1 − 6, a_last + 6]` at step 0.01, then golden-section refinement
/// around the best grid point.
pub fn max_density_sum(ladder: &CostLadder) -> Result<(f64, f64)> {
    // Tail increments grow with r, so cut points past the start of the tail are sparser
    // than the ones before them; a window of 30 beyond it covers every candidate maximum.
    let mut a = vec![0.0];
    let mut tail_start = None;
    let mut r = 2;
    loop {
        let d = ladder.increment(r);
        if r > ladder.r_bar() {
            let start = *tail_start.get_or_insert(a[a.len() - 1]);
            if r > ladder.r_bar() + 1 && (d >= SPREAD_GAP || a[a.len() - 1] > start + 30.0) {
                break;
            }
        }
        if a.len() >= CUT_POINT_CAP {
            break;
        }
        a.push(a[a.len() - 1] + d);
        r += 1;
    }
    let sum_at = |u: f64| density_sum(u, &a);

    let lo = a[0] - GRID_PAD;
    let hi = a[a.len() - 1] + GRID_PAD;
    let steps = ((hi - lo) / GRID_STEP).ceil() as usize;
    let (mut best_u, mut best) = (lo, f64::NEG_INFINITY);
    for k in 0..=steps {
        let u = lo + k as f64 * GRID_STEP;
        let v = sum_at(u);
        if v > best {
            best = v;
            best_u = u;
        }
    }

    // golden-section on the bracketing grid cell pair
    let (mut x0, mut x3) = (best_u - GRID_STEP, best_u + GRID_STEP);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = x3 - phi * (x3 - x0);
    let mut x2 = x0 + phi * (x3 - x0);
    let (mut f1, mut f2) = (sum_at(x1), sum_at(x2));
    while x3 - x0 > 1e-10 {
        if f1 > f2 {
            x3 = x2;
            x2 = x1;
            f2 = f1;
            x1 = x3 - phi * (x3 - x0);
            f1 = sum_at(x1);
        } else {
            x0 = x1;
            x1 = x2;
            f1 = f2;
            x2 = x0 + phi * (x3 - x0);
            f2 = sum_at(x2);
        }
    }
    let u_star = 0.5 * (x0 + x3);
    let refined = sum_at(u_star);
    Ok(if refined >= best {
        (u_star, refined)
    } else {
        (best_u, best)
    })
}

fn density_sum(u: f64, a: &[f64]) -> f64 {
    let start = a.partition_point(|&ar| ar < u - DENSITY_REACH);
    a[start..]
        .iter()
        .take_while(|&&ar| ar <= u + DENSITY_REACH)
        .map(|&ar| normal::pdf(u - ar))
        .sum()
}

/// `B_c = (max_u Σ_r φ(u − a_r))⁻¹`.
pub fn uniqueness_constant(ladder: &CostLadder) -> Result<f64> {
    Ok(1.0 / max_density_sum(ladder)?.1)
}

/// Largest peer effect guaranteeing a unique equilibrium: `B_c / ‖G‖`, with the norm read as
/// the maximum row sum. Infinite for a network without links.
pub fn peer_effect_bound(ladder: &CostLadder, g: &InteractionNetwork) -> Result<f64> {
    let norm = g.max_row_sum();
    let bc = uniqueness_constant(ladder)?;
    Ok(if norm > 0.0 { bc / norm } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netbuild::{row_normalize, Adjacency};
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_isolated_cut_point_gives_normal_mode() {
        // every increment ≥ 12, so each bump stands alone
        let ladder = CostLadder::new(0.0, vec![], 20.0, 1.0).unwrap();
        let (u, m) = max_density_sum(&ladder).unwrap();
        assert_abs_diff_eq!(m, normal::pdf(0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(
            u.rem_euclid(20.0).min(20.0 - u.rem_euclid(20.0)),
            0.0,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            uniqueness_constant(&ladder).unwrap(),
            (2.0 * std::f64::consts::PI).sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn wide_gaps_approach_normal_mode() {
        let ladder = CostLadder::new(0.0, vec![10.0], 10.0, 1.0).unwrap();
        let bound = peer_effect_bound(
            &ladder,
            &row_normalize(&Adjacency::from_undirected_pairs(2, [(0, 1)]).unwrap()),
        )
        .unwrap();
        // neighbours 10 apart add about 2·φ(10) ≈ 1.5e-22
        assert_abs_diff_eq!(bound, 2.5066, epsilon = 1e-4);
    }

    #[test]
    fn dense_cut_points_shrink_the_bound() {
        let ladder = CostLadder::new(0.05, vec![0.3, 0.35], 0.1, 1.0).unwrap();
        let bc = uniqueness_constant(&ladder).unwrap();
        assert!(bc < 1.0, "{bc}");
    }

    #[test]
    fn empty_network_has_no_bound() {
        let ladder = CostLadder::new(0.05, vec![0.3], 0.1, 1.0).unwrap();
        assert!(peer_effect_bound(&ladder, &InteractionNetwork::empty(3))
            .unwrap()
            .is_infinite());
    }
}
