use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

use peergame::estimate::{npl_fit, EstimationData, NplOptions};
use peergame::formation::{
    fit_dyadic_logit_from, sieve_from_effects, DyadFrame, FormationOptions, FormationStart,
};
use peergame::game::{
    choice_probabilities, expected_outcomes, peer_effect_bound, solve_equilibrium_psi, Beliefs,
    CostLadder, EquilibriumOptions,
};
use peergame::netbuild::{
    build_adjacency, covid_index, row_normalize, Adjacency, Covariates, InteractionNetwork,
    PeriodSpec, PublicationRecord, Roster,
};
use peergame::normal;
use peergame::simulate::{
    simulate_dataset, simulate_network, NetworkSpec, SimConfig, SimDyadCovariates,
};

fn er_network(n: usize, p: f64, seed: u64) -> InteractionNetwork {
    let spec = NetworkSpec::ErdosRenyi {
        mean_degree: p * (n - 1) as f64,
    };
    simulate_network(&spec, n, seed).unwrap().g
}

fn ladder_strategy() -> impl Strategy<Value = CostLadder> {
    (
        0.0..0.5f64,
        prop::collection::vec(0.05..1.5f64, 0..4),
        0.05..1.0f64,
        0.3..2.5f64,
    )
        .prop_map(|(lambda, excess, delta_bar, rho)| {
            CostLadder::from_excess(lambda, &excess, delta_bar, rho).unwrap()
        })
}

fn records_strategy() -> impl Strategy<Value = (usize, Vec<(i32, Vec<usize>)>)> {
    (3usize..9).prop_flat_map(|n| {
        let paper = (
            2015..2022i32,
            prop::collection::btree_set(0..n, 1..4).prop_map(|s| s.into_iter().collect()),
        );
        (Just(n), prop::collection::vec(paper, 0..40))
    })
}

fn records_from(papers: &[(i32, Vec<usize>)]) -> Vec<PublicationRecord> {
    papers
        .iter()
        .enumerate()
        .map(|(k, (year, authors))| PublicationRecord {
            paper_id: format!("p{k}"),
            year: *year,
            author_ids: authors.iter().map(|a| format!("s{a}")).collect(),
            covid_topic_prob: None,
        })
        .collect()
}

fn roster(n: usize) -> Roster {
    Roster::new((0..n).map(|i| format!("s{i}")).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_is_symmetric_with_empty_diagonal((n, papers) in records_strategy(), min_joint in 1u32..4) {
        let w = build_adjacency(&records_from(&papers), &roster(n), &PeriodSpec::new(2016, 2020).unwrap(), min_joint).unwrap();
        let d = w.to_dense();
        prop_assert_eq!(d.nrows(), n);
        for i in 0..n {
            prop_assert_eq!(d[(i, i)], 0.0);
            for j in 0..n {
                prop_assert_eq!(d[(i, j)], d[(j, i)]);
            }
        }
    }

    #[test]
    fn row_normalize_is_idempotent(n in 2usize..30, p in 0.0..0.6f64, seed in any::<u64>()) {
        let g = er_network(n, p, seed);
        let again = row_normalize(&g.as_adjacency());
        for i in 0..n {
            prop_assert_eq!(g.row(i).len(), again.row(i).len());
            for (a, b) in g.row(i).iter().zip(again.row(i)) {
                prop_assert_eq!(a.0, b.0);
                prop_assert!((a.1 - b.1).abs() <= 1e-15);
            }
            let s: f64 = again.row(i).iter().map(|e| e.1).sum();
            prop_assert!(again.row(i).is_empty() || (s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn contextual_block_vanishes_for_isolated_agents(n in 2usize..25, k in 1usize..4, p in 0.0..0.3f64, seed in any::<u64>()) {
        let g = er_network(n, p, seed);
        let x = DMatrix::from_fn(n, k, |i, c| ((i * 7 + c * 3) % 5) as f64 - 1.5);
        let names = (0..k).map(|c| format!("x{c}")).collect();
        let cov = Covariates::from_own(names, x, &g).unwrap();
        prop_assert_eq!(cov.z.ncols(), 2 * k);
        for i in (0..n).filter(|&i| g.is_isolated(i)) {
            for c in k..2 * k {
                prop_assert_eq!(cov.z[(i, c)], 0.0);
            }
        }
    }

    #[test]
    fn covid_index_grows_with_covid_papers(total in 1usize..12, covid in 0usize..12) {
        let covid = covid.min(total - 1);
        let paper = |k: usize, hot: bool| PublicationRecord {
            paper_id: format!("p{k}"),
            year: 2020,
            author_ids: vec!["a".into()],
            covid_topic_prob: Some(if hot { 0.9 } else { 0.1 }),
        };
        let before: Vec<_> = (0..total).map(|k| paper(k, k < covid)).collect();
        let after: Vec<_> = (0..total).map(|k| paper(k, k <= covid)).collect();
        let a = covid_index(&before, "a", (2019, 2021), 0.5);
        let b = covid_index(&after, "a", (2019, 2021), 0.5);
        prop_assert!(b > a);
        prop_assert!((a - covid as f64 / total as f64).abs() < 1e-15);
    }

    #[test]
    fn probabilities_sum_to_one(ladder in ladder_strategy(), psi in -4.0..6.0f64, ybar in 0.0..8.0f64, r_max in 0usize..12) {
        let p = choice_probabilities(psi, ybar, &ladder, r_max).unwrap();
        prop_assert_eq!(p.probs.len(), r_max + 1);
        prop_assert!(p.probs.iter().all(|&v| v >= 0.0) && p.tail >= 0.0);
        prop_assert!((p.total() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn shifting_cuts_and_index_leaves_probabilities(ladder in ladder_strategy(), psi in -3.0..5.0f64, c in -5.0..5.0f64) {
        let r_max = 8;
        let p = choice_probabilities(psi, 0.0, &ladder, r_max).unwrap();
        let a = ladder.cut_points(r_max + 1).unwrap();
        let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
        let u = psi + c;
        for r in 0..=r_max {
            let lower = if r == 0 { 1.0 } else { normal::cdf(u - shifted[r - 1]) };
            let upper = normal::cdf(u - shifted[r]);
            prop_assert!((p.probs[r] - (lower - upper)).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_outcome_formulas_agree(ladder in ladder_strategy(), psi in -3.0..5.0f64, ybar in 0.0..4.0f64) {
        let g = InteractionNetwork::empty(1);
        let u = psi + ladder.lambda() * ybar;
        let via_map = expected_outcomes(&ladder, &g, &[u], &[0.0]).unwrap()[0];
        let p = peergame::game::choice_probabilities_to_tol(u, 0.0, &ladder, 1e-14).unwrap();
        prop_assert!((via_map - p.mean()).abs() < 1e-9);
    }

    #[test]
    fn expected_outcomes_are_monotone(ladder in ladder_strategy(), seed in any::<u64>(), bump in 0.01..1.0f64) {
        let n = 12;
        let g = er_network(n, 0.3, seed);
        let psi: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let y_e: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64).collect();
        let base = expected_outcomes(&ladder, &g, &psi, &y_e).unwrap();
        let mut psi2 = psi.clone();
        psi2[0] += bump;
        let up = expected_outcomes(&ladder, &g, &psi2, &y_e).unwrap();
        prop_assert!(up[0] > base[0]);
        for j in 0..n {
            let mut y2 = y_e.clone();
            y2[j] += bump;
            let m = expected_outcomes(&ladder, &g, &psi, &y2).unwrap();
            for i in 0..n {
                prop_assert!(m[i] >= base[i] - 1e-15);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fixed_point_residuals_shrink_below_the_bound(ladder in ladder_strategy(), seed in any::<u64>(), frac in 0.1..0.9f64) {
        let n = 60;
        let g = er_network(n, 0.1, seed);
        let bound = peer_effect_bound(&ladder, &g).unwrap();
        let lambda = frac * bound.min(2.0);
        let excess: Vec<f64> = ladder.free_increments().iter().map(|d| d - ladder.lambda()).collect();
        let ladder = CostLadder::from_excess(lambda, &excess, ladder.delta_bar(), ladder.rho()).unwrap();
        let psi: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.3 + seed as f64).sin()).collect();
        let opts = EquilibriumOptions { tol: 1e-12, damping: 1.0, ..Default::default() };
        let sol = solve_equilibrium_psi(&ladder, &g, &psi, &Beliefs::zeros(n), &opts).unwrap();
        prop_assert!(!sol.damped);
        for w in sol.residuals.windows(2).skip(1) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-13);
        }
    }

    #[test]
    fn sieve_is_relabeling_equivariant(seed in any::<u64>(), perm_seed in any::<u64>(), degree in 1usize..3) {
        let n = 15;
        let g = er_network(n, 0.3, seed);
        let mu: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.7 + seed as f64).sin()).collect();
        let nu: Vec<f64> = (0..n).map(|i| ((i as f64 + 2.0) * 1.1 + seed as f64).cos()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = perm_seed;
        for k in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(k, (s >> 33) as usize % (k + 1));
        }
        let base = sieve_from_effects(&mu, &nu, &g, degree).unwrap();
        let pmu: Vec<f64> = perm.iter().map(|&o| mu[o]).collect();
        let pnu: Vec<f64> = perm.iter().map(|&o| nu[o]).collect();
        let moved = sieve_from_effects(&pmu, &pnu, &g.permute(&perm), degree).unwrap();
        prop_assert_eq!(&base.names, &moved.names);
        for (k, &old) in perm.iter().enumerate() {
            for c in 0..base.columns.ncols() {
                prop_assert!((moved.columns[(k, c)] - base.columns[(old, c)]).abs() < 1e-9);
            }
        }
    }
}

fn small_config(seed: u64) -> SimConfig {
    SimConfig::from_toml(&format!(
        r#"
n = 300
seed = {seed}
[truth]
lambda = 0.1
gamma = [0.0, 1.0, 0.3, 1.0, 0.3]
delta_tilde = [0.2]
delta_bar = 0.1
rho = 1.0
[network]
kind = "erdos_renyi"
mean_degree = 5.0
"#
    ))
    .unwrap()
}

fn estimation_data(cfg: &SimConfig, rep: u64) -> EstimationData {
    let d = simulate_dataset(cfg, rep).unwrap();
    EstimationData::build(d.y, d.network.g, &d.x, &d.x_names, None, false).unwrap()
}

#[test]
fn simulation_is_deterministic() {
    let cfg = small_config(5);
    let a = simulate_dataset(&cfg, 3).unwrap();
    let b = simulate_dataset(&cfg, 3).unwrap();
    assert_eq!(a.y, b.y);
    assert_eq!(a.design, b.design);
    assert_eq!(a.network.g, b.network.g);
    let c = simulate_dataset(&cfg, 4).unwrap();
    assert_ne!(a.y, c.y);
}

#[test]
fn npl_traces_are_bit_identical_and_monotone() {
    let data = estimation_data(&small_config(8), 0);
    let a = npl_fit(&data, 2, None, None, &NplOptions::default()).unwrap();
    let b = npl_fit(&data, 2, None, None, &NplOptions::default()).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.estimates, b.estimates);
    for step in &a.trace {
        assert!(
            step.loglik >= step.loglik_start - 1e-10,
            "step {} lowered L_n",
            step.iteration
        );
    }
}

#[test]
fn permuting_covariate_columns_permutes_gamma() {
    let cfg = small_config(9);
    let d = simulate_dataset(&cfg, 0).unwrap();
    let data = EstimationData::build(
        d.y.clone(),
        d.network.g.clone(),
        &d.x,
        &d.x_names,
        None,
        false,
    )
    .unwrap();
    let swapped_x = DMatrix::from_fn(d.x.nrows(), 2, |i, c| d.x[(i, 1 - c)]);
    let swapped_names = vec![d.x_names[1].clone(), d.x_names[0].clone()];
    let swapped =
        EstimationData::build(d.y, d.network.g, &swapped_x, &swapped_names, None, false).unwrap();
    let a = npl_fit(&data, 2, None, None, &NplOptions::default()).unwrap();
    let b = npl_fit(&swapped, 2, None, None, &NplOptions::default()).unwrap();
    for name in &a.names {
        assert_relative_eq!(
            a.estimate(name).unwrap(),
            b.estimate(name).unwrap(),
            epsilon = 1e-5
        );
    }
}

#[test]
fn relabeling_agents_leaves_the_fit_unchanged() {
    let cfg = small_config(10);
    let d = simulate_dataset(&cfg, 0).unwrap();
    let n = d.y.len();
    let perm: Vec<usize> = (0..n).map(|k| (k * 7 + 3) % n).collect();
    let data = EstimationData::build(
        d.y.clone(),
        d.network.g.clone(),
        &d.x,
        &d.x_names,
        None,
        false,
    )
    .unwrap();
    let py: Vec<u32> = perm.iter().map(|&o| d.y[o]).collect();
    let px = DMatrix::from_fn(n, d.x.ncols(), |k, c| d.x[(perm[k], c)]);
    let moved = EstimationData::build(py, d.network.g.permute(&perm), &px, &d.x_names, None, false)
        .unwrap();
    let a = npl_fit(&data, 2, None, None, &NplOptions::default()).unwrap();
    let b = npl_fit(&moved, 2, None, None, &NplOptions::default()).unwrap();
    assert_relative_eq!(a.loglik, b.loglik, epsilon = 1e-8);
    for (x, y) in a.estimates.iter().zip(&b.estimates) {
        assert_relative_eq!(*x, *y, epsilon = 1e-5);
    }
}

fn dyadic_frame(seed: u64) -> DyadFrame {
    let spec = NetworkSpec::Dyadic {
        beta_bar: vec![1.0, -0.5],
        n_groups: 4,
        mu_mean: -1.5,
        mu_sd: 0.7,
        nu_mean: -1.5,
        nu_sd: 0.7,
        trait_loading: 0.0,
    };
    let net = simulate_network(&spec, 80, seed).unwrap();
    let latent = net.latent.unwrap();
    let cov: SimDyadCovariates = latent.covariates();
    DyadFrame::new(Arc::new(cov), &net.adjacency).unwrap()
}

#[test]
fn fixed_effect_shift_does_not_change_the_fit() {
    let frame = dyadic_frame(21);
    let opts = FormationOptions::default();
    let n = frame.n();
    let a = fit_dyadic_logit_from(&frame, None, &opts).unwrap();
    let start = FormationStart {
        beta_bar: vec![0.3, 0.1],
        mu: vec![2.0; n],
        nu: vec![-2.5; n],
    };
    let b = fit_dyadic_logit_from(&frame, Some(start), &opts).unwrap();
    assert!(a.converged && b.converged);
    assert!(a.gradient_max_norm < 1e-6 && b.gradient_max_norm < 1e-6);
    for i in 0..n {
        assert!((a.mu[i] - b.mu[i]).abs() < 1e-6);
        for j in (0..n).filter(|&j| j != i) {
            assert!(
                (a.fitted_probability(&frame, i, j) - b.fitted_probability(&frame, i, j)).abs()
                    < 1e-8
            );
        }
    }
    let uncapped: f64 =
        a.mu.iter()
            .zip(&a.mu_capped)
            .filter(|(_, &c)| !c)
            .map(|(m, _)| m)
            .sum();
    assert!(uncapped.abs() < 1e-8);
}

#[test]
fn undirected_adjacency_round_trips_through_row_normalization() {
    let w = Adjacency::from_undirected_pairs(4, [(0, 1), (1, 2), (2, 0)]).unwrap();
    let g = row_normalize(&w);
    assert!(g.is_isolated(3));
    assert_eq!(g.get(0, 1), 0.5);
    assert_eq!(row_normalize(&g.as_adjacency()), g);
}

#[test]
fn npl_leaves_a_near_zero_peer_effect_start() {
    let data = estimation_data(&small_config(12), 0);
    let free = npl_fit(&data, 2, None, None, &NplOptions::default()).unwrap();
    let mut start = free.param_vector();
    start.values[start.layout.lambda()] = 1e-12f64.ln();
    let stuck = npl_fit(&data, 2, Some(&start), None, &NplOptions::default()).unwrap();
    assert!(stuck.converged);
    assert!(stuck.lambda() > 1e-3, "lambda stayed at {}", stuck.lambda());
    assert_relative_eq!(stuck.lambda(), free.lambda(), epsilon = 1e-4);
}
