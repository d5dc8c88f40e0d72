//! Synthetic networks, covariates and outcomes drawn from the model.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson, StandardNormal};
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::NaturalParams;
use crate::formation::{DyadCovariates, DyadFrame};
use crate::game::{
    expected_outcomes, peer_effect_bound, psi as linear_index, solve_equilibrium_psi, Beliefs,
    CostLadder, EquilibriumOptions, GameParams, TAIL_Z,
};
use crate::netbuild::{
    default_fields, row_normalize, Adjacency, InteractionNetwork, PublicationRecord, RankingBucket,
    ScholarProfile,
};
use crate::normal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateDist {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

impl CovariateDist {
    fn label(&self, k: usize) -> String {
        match self {
            CovariateDist::Normal { .. } => format!("x{k}_normal"),
            CovariateDist::Bernoulli { .. } => format!("x{k}_binary"),
        }
    }
}

pub fn default_covariates() -> Vec<CovariateDist> {
    vec![
        CovariateDist::Normal { mean: 0.0, sd: 1.0 },
        CovariateDist::Bernoulli { p: 0.5 },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// Undirected links, each present with probability `mean_degree / (n − 1)`.
    ErdosRenyi { mean_degree: f64 },
    /// Directed links from the dyadic logit with dyad covariates `[same_group, |c_i − c_j|]`,
    /// where `c` is a standard normal node trait.
    Dyadic {
        beta_bar: Vec<f64>,
        #[serde(default = "default_groups")]
        n_groups: usize,
        mu_mean: f64,
        mu_sd: f64,
        nu_mean: f64,
        nu_sd: f64,
        /// Loading of both fixed effects on the node trait.
        #[serde(default)]
        trait_loading: f64,
    },
}

fn default_groups() -> usize {
    5
}

/// Simulation design. `truth.gamma` is ordered `[intercept, X, GX]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_covariates")]
    pub covariates: Vec<CovariateDist>,
    pub truth: NaturalParams,
    pub network: NetworkSpec,
    /// Adds `shock_loading_mu · μ_i` to every agent's latent index (dyadic networks only).
    #[serde(default)]
    pub shock_loading_mu: f64,
    /// Proceed with a warning when λ is at or above the uniqueness bound.
    #[serde(default)]
    pub allow_above_bound: bool,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text)
            .map_err(|e| Error::parse("simulation config", e.to_string().trim()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("simulation needs n ≥ 2"));
        }
        let k = self.covariates.len();
        if self.truth.gamma.len() != 1 + 2 * k {
            return Err(Error::invalid(format!(
                "truth.gamma needs {} entries (intercept, {k} own, {k} contextual), got {}",
                1 + 2 * k,
                self.truth.gamma.len()
            )));
        }
        for c in &self.covariates {
            match *c {
                CovariateDist::Normal { sd, .. } if !(sd >= 0.0) => {
                    return Err(Error::invalid("covariate sd must be ≥ 0"))
                }
                CovariateDist::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                    return Err(Error::invalid("Bernoulli p must lie in [0, 1]"))
                }
                _ => {}
            }
        }
        match &self.network {
            NetworkSpec::ErdosRenyi { mean_degree } => {
                if !(*mean_degree >= 0.0 && *mean_degree <= (self.n - 1) as f64) {
                    return Err(Error::invalid("mean_degree must lie in [0, n − 1]"));
                }
            }
            NetworkSpec::Dyadic {
                beta_bar, n_groups, ..
            } => {
                if beta_bar.len() != 2 {
                    return Err(Error::invalid(
                        "dyadic beta_bar needs 2 entries (same_group, trait distance)",
                    ));
                }
                if *n_groups == 0 {
                    return Err(Error::invalid("n_groups must be positive"));
                }
            }
        }
        if self.shock_loading_mu != 0.0 && matches!(self.network, NetworkSpec::ErdosRenyi { .. }) {
            return Err(Error::invalid("shock_loading_mu requires a dyadic network"));
        }
        self.truth.ladder()?;
        Ok(())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates
            .iter()
            .enumerate()
            .map(|(k, c)| c.label(k + 1))
            .collect()
    }
}

/// Node-level data behind the dyadic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicLatent {
    pub group: Vec<usize>,
    pub trait_value: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl DyadicLatent {
    pub fn covariates(&self) -> SimDyadCovariates {
        SimDyadCovariates {
            group: self.group.clone(),
            trait_value: self.trait_value.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimDyadCovariates {
    pub group: Vec<usize>,
    pub trait_value: Vec<f64>,
}

impl DyadCovariates for SimDyadCovariates {
    fn names(&self) -> Vec<String> {
        vec!["same_group".into(), "abs_trait_diff".into()]
    }

    fn fill(&self, i: usize, j: usize, out: &mut [f64]) {
        out[0] = f64::from(u8::from(self.group[i] == self.group[j]));
        out[1] = (self.trait_value[i] - self.trait_value[j]).abs();
    }
}

#[derive(Clone, Debug)]
pub struct SimNetwork {
    pub adjacency: Adjacency,
    pub g: InteractionNetwork,
    pub latent: Option<DyadicLatent>,
}

impl SimNetwork {
    /// Dyad frame for refitting the formation model (dyadic networks only).
    pub fn dyad_frame(&self) -> Option<Result<DyadFrame>> {
        self.latent
            .as_ref()
            .map(|l| DyadFrame::new(Arc::new(l.covariates()), &self.adjacency))
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

pub fn simulate_network(spec: &NetworkSpec, n: usize, seed: u64) -> Result<SimNetwork> {
    simulate_network_with(spec, n, &mut rng_for(seed, 0))
}

fn simulate_network_with<R: Rng>(spec: &NetworkSpec, n: usize, rng: &mut R) -> Result<SimNetwork> {
    if n < 2 {
        return Err(Error::invalid("simulate_network needs n ≥ 2"));
    }
    match spec {
        NetworkSpec::ErdosRenyi { mean_degree } => {
            let p = mean_degree / (n - 1) as f64;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("mean_degree must lie in [0, n − 1]"));
            }
            let mut pairs = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < p {
                        pairs.push((i, j));
                    }
                }
            }
            let adjacency = Adjacency::from_undirected_pairs(n, pairs)?;
            let g = row_normalize(&adjacency);
            Ok(SimNetwork {
                adjacency,
                g,
                latent: None,
            })
        }
        NetworkSpec::Dyadic {
            beta_bar,
            n_groups,
            mu_mean,
            mu_sd,
            nu_mean,
            nu_sd,
            trait_loading,
        } => {
            if beta_bar.len() != 2 || *n_groups == 0 {
                return Err(Error::invalid(
                    "dyadic network needs 2 β̄ entries and at least one group",
                ));
            }
            let group: Vec<usize> = (0..n).map(|_| rng.random_range(0..*n_groups)).collect();
            let trait_value: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mu: Vec<f64> = trait_value
                .iter()
                .map(|c| mu_mean + trait_loading * c + mu_sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let nu: Vec<f64> = trait_value
                .iter()
                .map(|c| nu_mean + trait_loading * c + nu_sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let latent = DyadicLatent {
                group,
                trait_value,
                mu,
                nu,
            };
            let cov = latent.covariates();
            let mut x = [0.0; 2];
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let mut row = Vec::new();
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    cov.fill(i, j, &mut x);
                    let eta = beta_bar[0] * x[0] + beta_bar[1] * x[1] + latent.mu[i] + latent.nu[j];
                    if rng.random::<f64>() < sigmoid(eta) {
                        row.push((j, 1.0));
                    }
                }
                rows.push(row);
            }
            let adjacency = Adjacency::from_rows(rows)?;
            let g = row_normalize(&adjacency);
            Ok(SimNetwork {
                adjacency,
                g,
                latent: Some(latent),
            })
        }
    }
}

/// Outcome chosen by an agent with index `u` and shock `eps`: the `r` with `a_r ≤ u + ε < a_{r+1}`.
pub fn outcome_from_shock(u: f64, eps: f64, a: &[f64]) -> u32 {
    let v = u + eps;
    a.iter().take_while(|&&ar| ar <= v).count() as u32
}

/// One outcome per agent at the beliefs `y_e`, by inverse-CDF sampling of the choice distribution.
pub fn draw_outcomes<R: Rng + ?Sized>(
    ladder: &CostLadder,
    g: &InteractionNetwork,
    psi: &[f64],
    beliefs: &Beliefs,
    rng: &mut R,
) -> Result<Vec<u32>> {
    let n = g.n();
    if psi.len() != n || beliefs.y_e.len() != n {
        return Err(Error::invalid("ψ, beliefs and network differ in size"));
    }
    let ybar = g.mul_vec(&beliefs.y_e);
    let u: Vec<f64> = psi
        .iter()
        .zip(&ybar)
        .map(|(p, yb)| p + ladder.lambda() * yb)
        .collect();
    let u_max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !u_max.is_finite() {
        return Err(Error::Numerical(
            "non-finite latent index while drawing outcomes".into(),
        ));
    }
    // P(y ≥ r) = Φ(u − a_r) falls below 2⁻⁵³ beyond u + TAIL_Z
    let a = ladder.cut_points_until(u_max + TAIL_Z, 1)?;
    Ok(u.iter()
        .map(|&ui| {
            let v: f64 = rng.random();
            a.iter().take_while(|&&ar| v < normal::sf(ar - ui)).count() as u32
        })
        .collect())
}

/// Equilibrium outcomes for a parameter set on a given network and design.
pub fn simulate_outcomes(
    params: &GameParams,
    g: &InteractionNetwork,
    z: &DMatrix<f64>,
    seed: u64,
) -> Result<Vec<u32>> {
    let psi = params.psi(z)?;
    let eq = solve_equilibrium_psi(
        &params.ladder,
        g,
        &psi,
        &Beliefs::zeros(g.n()),
        &EquilibriumOptions::default(),
    )?;
    draw_outcomes(&params.ladder, g, &psi, &eq.beliefs, &mut rng_for(seed, 0))
}

/// One simulated replication.
#[derive(Clone, Debug)]
pub struct SimDataset {
    pub network: SimNetwork,
    pub x: DMatrix<f64>,
    pub x_names: Vec<String>,
    /// `[1, X, GX]`, matching `truth.gamma`.
    pub design: DMatrix<f64>,
    pub psi: Vec<f64>,
    pub beliefs: Beliefs,
    pub y: Vec<u32>,
    pub peer_effect_bound: f64,
    pub warnings: Vec<String>,
}

fn draw_covariates<R: Rng>(dists: &[CovariateDist], n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::zeros(n, dists.len());
    for (k, d) in dists.iter().enumerate() {
        match *d {
            CovariateDist::Normal { mean, sd } => {
                let dist = Normal::new(mean, sd).map_err(|e| Error::invalid(e.to_string()))?;
                for i in 0..n {
                    x[(i, k)] = dist.sample(rng);
                }
            }
            CovariateDist::Bernoulli { p } => {
                let dist = Bernoulli::new(p).map_err(|e| Error::invalid(e.to_string()))?;
                for i in 0..n {
                    x[(i, k)] = f64::from(u8::from(dist.sample(rng)));
                }
            }
        }
    }
    Ok(x)
}

/// Replication `rep` of a design; every replication has its own random stream.
pub fn simulate_dataset(config: &SimConfig, rep: u64) -> Result<SimDataset> {
    config.validate()?;
    let mut rng = rng_for(config.seed, rep);
    let n = config.n;
    let network = simulate_network_with(&config.network, n, &mut rng)?;
    let x = draw_covariates(&config.covariates, n, &mut rng)?;
    let gx = network.g.mul_dense(&x);
    let k = x.ncols();
    let design = DMatrix::from_fn(n, 1 + 2 * k, |i, c| match c {
        0 => 1.0,
        c if c <= k => x[(i, c - 1)],
        c => gx[(i, c - 1 - k)],
    });
    let ladder = config.truth.ladder()?;
    let mut warnings = Vec::new();
    let bound = peer_effect_bound(&ladder, &network.g)?;
    if ladder.lambda() >= bound {
        let msg = format!(
            "λ = {} is not below the uniqueness bound {bound:.4}",
            ladder.lambda()
        );
        if !config.allow_above_bound {
            return Err(Error::invalid(msg));
        }
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut psi = linear_index(&design, &config.truth.gamma)?;
    if config.shock_loading_mu != 0.0 {
        let latent = network
            .latent
            .as_ref()
            .ok_or_else(|| Error::invalid("shock_loading_mu requires a dyadic network"))?;
        for (p, m) in psi.iter_mut().zip(&latent.mu) {
            *p += config.shock_loading_mu * m;
        }
    }
    let eq = solve_equilibrium_psi(
        &ladder,
        &network.g,
        &psi,
        &Beliefs::zeros(n),
        &EquilibriumOptions::default(),
    )?;
    let y = draw_outcomes(&ladder, &network.g, &psi, &eq.beliefs, &mut rng)?;
    Ok(SimDataset {
        network,
        x_names: config.covariate_names(),
        x,
        design,
        psi,
        beliefs: eq.beliefs,
        y,
        peer_effect_bound: bound,
        warnings,
    })
}

/// Expected outcomes at the equilibrium of a simulated dataset, recomputed from its parts.
pub fn equilibrium_residual(config: &SimConfig, data: &SimDataset) -> Result<f64> {
    let ladder = config.truth.ladder()?;
    let mapped = expected_outcomes(&ladder, &data.network.g, &data.psi, &data.beliefs.y_e)?;
    Ok(mapped
        .iter()
        .zip(&data.beliefs.y_e)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Synthetic scholar profiles and publication records for exercising the full pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BibliographyConfig {
    pub n_scholars: usize,
    pub n_departments: usize,
    pub first_year: i32,
    pub last_year: i32,
    /// Mean lead-authored papers per scholar and year.
    pub papers_per_year: f64,
    /// Number of regular collaborators per scholar.
    pub circle_size: usize,
    pub max_coauthors: usize,
    /// Share of papers from `covid_start` on with a Covid topic probability above one half.
    pub covid_share: f64,
    pub covid_start: i32,
    /// Probability that a paper also lists an author outside the roster.
    pub outside_author_share: f64,
    pub seed: u64,
}

impl Default for BibliographyConfig {
    fn default() -> Self {
        Self {
            n_scholars: 150,
            n_departments: 10,
            first_year: 2012,
            last_year: 2021,
            papers_per_year: 1.0,
            circle_size: 4,
            max_coauthors: 3,
            covid_share: 0.3,
            covid_start: 2020,
            outside_author_share: 0.1,
            seed: 0,
        }
    }
}

impl BibliographyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("bibliography config", e.to_string().trim()))
    }
}

const BUCKETS: [RankingBucket; 5] = [
    RankingBucket::Top10,
    RankingBucket::R11To20,
    RankingBucket::R21To30,
    RankingBucket::R31To40,
    RankingBucket::R41To50,
];

pub fn synthetic_bibliography(
    cfg: &BibliographyConfig,
) -> Result<(Vec<ScholarProfile>, Vec<PublicationRecord>)> {
    if cfg.n_scholars < 2
        || cfg.n_departments == 0
        || cfg.first_year > cfg.last_year
        || !(cfg.papers_per_year > 0.0)
    {
        return Err(Error::invalid("bibliography needs ≥ 2 scholars, ≥ 1 department, ordered years and a positive paper rate"));
    }
    let mut rng = rng_for(cfg.seed, 0);
    let n = cfg.n_scholars;
    let fields = default_fields();
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:04}")).collect();
    let dept: Vec<usize> = (0..n).map(|i| i % cfg.n_departments).collect();
    let rate: Vec<f64> = (0..n)
        .map(|_| cfg.papers_per_year * (0.5 * rng.sample::<f64, _>(StandardNormal) - 0.125).exp())
        .collect();
    let mut profiles = Vec::with_capacity(n);
    for i in 0..n {
        let first_pub_year = cfg.last_year - rng.random_range(1..=40);
        let mut tags = BTreeSet::new();
        for _ in 0..rng.random_range(1..=2) {
            tags.insert(fields[rng.random_range(0..fields.len())].clone());
        }
        let mut citations = BTreeMap::new();
        let mut total = 0u64;
        for year in (cfg.first_year - 5)..=cfg.last_year {
            let exp = f64::from((year - first_pub_year).max(0));
            let mean = rate[i] * 8.0 * exp;
            if mean > 0.0 {
                total += Poisson::new(mean)
                    .map_err(|e| Error::invalid(e.to_string()))?
                    .sample(&mut rng) as u64;
            }
            citations.insert(year, total);
        }
        profiles.push(ScholarProfile {
            scholar_id: ids[i].clone(),
            female: rng.random_bool(0.2),
            african_american: rng.random_bool(0.05),
            first_pub_year,
            citations_by_year: citations,
            fields: tags,
            department_id: format!("d{:02}", dept[i]),
            ranking_bucket: BUCKETS[dept[i] % BUCKETS.len()],
        });
    }
    let circles: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut c = Vec::new();
            while c.len() < cfg.circle_size.min(n - 1) {
                let j = if rng.random_bool(0.7) {
                    let same: Vec<usize> =
                        (0..n).filter(|&j| dept[j] == dept[i] && j != i).collect();
                    if same.is_empty() {
                        rng.random_range(0..n)
                    } else {
                        same[rng.random_range(0..same.len())]
                    }
                } else {
                    rng.random_range(0..n)
                };
                if j != i && !c.contains(&j) {
                    c.push(j);
                }
            }
            c
        })
        .collect();
    let mut records = Vec::new();
    for year in cfg.first_year..=cfg.last_year {
        for i in 0..n {
            if year < profiles[i].first_pub_year {
                continue;
            }
            let count = Poisson::new(rate[i])
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng) as usize;
            for _ in 0..count {
                let mut authors = vec![ids[i].clone()];
                let k = rng.random_range(0..=cfg.max_coauthors.min(circles[i].len()));
                let mut pool = circles[i].clone();
                for _ in 0..k {
                    let j = pool.swap_remove(rng.random_range(0..pool.len()));
                    authors.push(ids[j].clone());
                }
                if rng.random_bool(cfg.outside_author_share.clamp(0.0, 1.0)) {
                    authors.push(format!("ext{:05}", rng.random_range(0..100_000)));
                }
                let prob = if year >= cfg.covid_start
                    && rng.random_bool(cfg.covid_share.clamp(0.0, 1.0))
                {
                    rng.random_range(0.5..1.0)
                } else {
                    rng.random_range(0.0..0.4)
                };
                records.push(PublicationRecord {
                    paper_id: format!("p{:06}", records.len()),
                    year,
                    author_ids: authors,
                    covid_topic_prob: Some(prob),
                });
            }
        }
    }
    Ok((profiles, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_open_boundary() {
        let a = [0.0, 0.5, 1.2];
        assert_eq!(outcome_from_shock(0.0, 0.0, &a), 1);
        assert_eq!(outcome_from_shock(0.0, -1e-12, &a), 0);
        assert_eq!(outcome_from_shock(0.5, 0.0, &a), 2);
        assert_eq!(outcome_from_shock(5.0, 0.0, &a), 3);
    }

    #[test]
    fn zero_degree_is_empty() {
        let net = simulate_network(&NetworkSpec::ErdosRenyi { mean_degree: 0.0 }, 50, 3).unwrap();
        assert_eq!(net.adjacency.edge_count(), 0);
        assert_eq!(net.g.isolated_count(), 50);
    }

    #[test]
    fn strongly_negative_index_gives_zeros() {
        let ladder = CostLadder::new(0.0, vec![0.5], 0.3, 1.0).unwrap();
        let g = InteractionNetwork::empty(1000);
        let psi = vec![-10.0; 1000];
        let mut rng = rng_for(1, 0);
        let y = draw_outcomes(&ladder, &g, &psi, &Beliefs::zeros(1000), &mut rng).unwrap();
        assert!(y.iter().all(|&v| v == 0));
    }
}
