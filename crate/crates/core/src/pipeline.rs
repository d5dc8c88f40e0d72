//! Per-period workflow: network and covariates, formation and sieve, NPL fits, reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    npl_fit, select_r_bar, standard_errors, EstimateResult, EstimationData, NplOptions, SeMethod,
};
use crate::formation::{
    dyad_covariates, fit_dyadic_logit, sieve_terms, DyadFrame, FormationOptions,
};
use crate::io;
use crate::netbuild::{
    build_adjacency, build_covariates, filter_to_roster, publication_counts, row_normalize,
    CovariateOptions, PeriodSpec, PublicationRecord, Roster, ScholarProfile,
};
use crate::report::{render_table, FitReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub publications: PathBuf,
    pub scholars: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    pub label: String,
    pub start: i32,
    pub end: i32,
    #[serde(default = "default_lookback")]
    pub lookback_years: u32,
    /// Adds a second fit with the Covid-index column.
    #[serde(default)]
    pub covid_index: bool,
}

fn default_lookback() -> u32 {
    3
}

impl PeriodConfig {
    pub fn spec(&self) -> Result<PeriodSpec> {
        Ok(PeriodSpec::new(self.start, self.end)?.with_lookback(self.lookback_years))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Years whose papers define links; defaults to each outcome period.
    #[serde(default)]
    pub window: Option<(i32, i32)>,
    #[serde(default = "default_min_joint")]
    pub min_joint_papers: u32,
}

fn default_min_joint() -> u32 {
    2
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            window: None,
            min_joint_papers: default_min_joint(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_sieve_degree")]
    pub sieve_degree: usize,
    /// Also add the sieve columns' peer averages to the contextual block.
    #[serde(default)]
    pub contextual_sieve: bool,
    #[serde(default)]
    pub options: FormationOptions,
}

fn yes() -> bool {
    true
}

fn default_sieve_degree() -> usize {
    2
}

impl Default for FormationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            sieve_degree: default_sieve_degree(),
            contextual_sieve: false,
            options: FormationOptions::default(),
        }
    }
}

/// `R̄` as a number or `"auto"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RBarSetting {
    Fixed(usize),
    Named(String),
}

impl RBarSetting {
    pub fn fixed(&self) -> Result<Option<usize>> {
        match self {
            RBarSetting::Fixed(0) => Err(Error::invalid("estimation.r_bar must be at least 1")),
            RBarSetting::Fixed(r) => Ok(Some(*r)),
            RBarSetting::Named(s) if s == "auto" => Ok(None),
            RBarSetting::Named(s) => Err(Error::invalid(format!(
                "estimation.r_bar: expected an integer or \"auto\", got `{s}`"
            ))),
        }
    }
}

impl std::str::FromStr for RBarSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.trim().parse::<usize>() {
            Ok(r) => RBarSetting::Fixed(r),
            Err(_) => RBarSetting::Named(s.trim().to_string()),
        };
        v.fixed()?;
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeChoice {
    Bootstrap,
    Sandwich,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    #[serde(default = "default_r_bar")]
    pub r_bar: RBarSetting,
    #[serde(default = "default_stability_tol")]
    pub stability_tol: f64,
    #[serde(default = "default_npl_tol")]
    pub tol: f64,
    #[serde(default = "default_se")]
    pub standard_errors: SeChoice,
    #[serde(default = "default_reps")]
    pub bootstrap_reps: usize,
}

fn default_r_bar() -> RBarSetting {
    RBarSetting::Named("auto".into())
}

fn default_stability_tol() -> f64 {
    0.01
}

fn default_npl_tol() -> f64 {
    1e-4
}

fn default_se() -> SeChoice {
    SeChoice::Bootstrap
}

fn default_reps() -> usize {
    199
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            r_bar: default_r_bar(),
            stability_tol: default_stability_tol(),
            tol: default_npl_tol(),
            standard_errors: default_se(),
            bootstrap_reps: default_reps(),
        }
    }
}

/// Pipeline configuration, read from TOML. Relative paths are resolved against the config
/// file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataPaths,
    pub periods: Vec<PeriodConfig>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub covariates: CovariateOptions,
    #[serde(default)]
    pub formation: FormationConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::parse("run config", e.to_string().trim()))?;
        for p in [
            &mut cfg.data.publications,
            &mut cfg.data.scholars,
            &mut cfg.output,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("data.publications", &self.data.publications),
            ("data.scholars", &self.data.scholars),
        ] {
            if !p.exists() {
                return Err(Error::invalid(format!(
                    "{name}: `{}` does not exist",
                    p.display()
                )));
            }
        }
        if self.periods.is_empty() {
            return Err(Error::invalid("at least one period is required"));
        }
        let specs = self
            .periods
            .iter()
            .map(PeriodConfig::spec)
            .collect::<Result<Vec<_>>>()?;
        for a in 0..specs.len() {
            for b in a + 1..specs.len() {
                if specs[a].overlaps(&specs[b]) {
                    return Err(Error::invalid(format!(
                        "periods `{}` and `{}` overlap",
                        self.periods[a].label, self.periods[b].label
                    )));
                }
                if self.periods[a].label == self.periods[b].label {
                    return Err(Error::invalid(format!(
                        "duplicate period label `{}`",
                        self.periods[a].label
                    )));
                }
            }
        }
        if let Some((s, e)) = self.network.window {
            PeriodSpec::new(s, e)?;
        }
        if self.network.min_joint_papers == 0 {
            return Err(Error::invalid(
                "network.min_joint_papers must be at least 1",
            ));
        }
        self.covariates.buckets.validate()?;
        if self.formation.sieve_degree == 0 {
            return Err(Error::invalid("formation.sieve_degree must be at least 1"));
        }
        self.estimation.r_bar.fixed()?;
        if !(self.estimation.tol > 0.0) || !(self.estimation.stability_tol > 0.0) {
            return Err(Error::invalid("estimation tolerances must be positive"));
        }
        if self.estimation.standard_errors == SeChoice::Bootstrap
            && self.estimation.bootstrap_reps < 2
        {
            return Err(Error::invalid(
                "estimation.bootstrap_reps must be at least 2",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormationSummary {
    pub names: Vec<String>,
    pub beta_bar: Vec<f64>,
    pub beta_se: Option<Vec<f64>>,
    pub sweeps: usize,
    pub gradient_max_norm: f64,
    pub capped_scholars: usize,
    pub sieve_columns: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodResult {
    pub label: String,
    pub start: i32,
    pub end: i32,
    pub agents: usize,
    pub links: usize,
    pub isolated: usize,
    pub formation: Option<FormationSummary>,
    pub reports: Vec<FitReport>,
    pub warnings: Vec<String>,
    /// Set when the period was aborted.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub periods: Vec<PeriodResult>,
}

impl RunSummary {
    pub fn reports(&self) -> Vec<&FitReport> {
        self.periods.iter().flat_map(|p| &p.reports).collect()
    }

    pub fn table(&self) -> String {
        render_table(&self.reports())
    }

    pub fn failed(&self) -> Vec<&PeriodResult> {
        self.periods.iter().filter(|p| p.error.is_some()).collect()
    }
}

fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    s.split('_')
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

struct Inputs<'a> {
    profiles: &'a [ScholarProfile],
    records: &'a [PublicationRecord],
    roster: &'a Roster,
}

/// R̄ selection, NPL fit and standard errors for one dataset under `est`; warnings are prefixed
/// with `label`.
pub fn fit_dataset(
    data: &EstimationData,
    est: &EstimationConfig,
    label: &str,
    seed: u64,
) -> Result<(FitReport, EstimateResult, Vec<String>)> {
    let mut warnings = Vec::new();
    let options = NplOptions {
        tol: est.tol,
        ..NplOptions::default()
    };
    let r_bar = match est.r_bar.fixed()? {
        Some(r) => r,
        None => select_r_bar(data, 1, est.stability_tol, &options)?.r_bar,
    };
    let mut fit = npl_fit(data, r_bar, None, None, &options)?;
    if !fit.converged {
        warnings.push(format!(
            "{label}: NPL did not converge in {} iterations",
            fit.npl_iterations
        ));
    }
    let method = match est.standard_errors {
        SeChoice::Bootstrap => Some(SeMethod::Bootstrap {
            reps: est.bootstrap_reps,
            seed,
        }),
        SeChoice::Sandwich => Some(SeMethod::Sandwich),
        SeChoice::None => None,
    };
    if let (Some(method), true) = (method, fit.converged) {
        let cov = standard_errors(&fit, data, method, &options)?;
        warnings.extend(cov.warnings.iter().map(|w| format!("{label}: {w}")));
        fit.set_covariance(&cov.matrix, method.label());
    }
    let report = FitReport::new(label, &fit, &data.kinds, data.n());
    Ok((report, fit, warnings))
}

fn fit_one(
    cfg: &RunConfig,
    label: &str,
    data: &EstimationData,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<(FitReport, EstimateResult)> {
    let (report, fit, w) = fit_dataset(data, &cfg.estimation, label, seed)?;
    warnings.extend(w);
    Ok((report, fit))
}

fn note_dropped(label: &str, dropped: Vec<String>, warnings: &mut Vec<String>) {
    if !dropped.is_empty() {
        warnings.push(format!(
            "{label}: dropped constant columns {}",
            dropped.join(", ")
        ));
    }
}

fn run_period(cfg: &RunConfig, k: usize, inputs: &Inputs) -> Result<PeriodResult> {
    let pc = &cfg.periods[k];
    let period = pc.spec()?;
    let net_period = match cfg.network.window {
        Some((s, e)) => PeriodSpec::new(s, e)?,
        None => period,
    };
    let dir = cfg.output.join(slug(&pc.label));
    fs::create_dir_all(&dir)?;

    let w = build_adjacency(
        inputs.records,
        inputs.roster,
        &net_period,
        cfg.network.min_joint_papers,
    )?;
    let g = row_normalize(&w);
    let y = publication_counts(inputs.records, inputs.roster, &period)?;
    let mut options = cfg.covariates.clone();
    options.include_covid_index = false;
    let cov = build_covariates(
        inputs.profiles,
        inputs.roster,
        inputs.records,
        &period,
        &g,
        &options,
    )?;
    io::write_network(&dir.join("G.txt"), &g)?;
    io::write_matrix_csv(&dir.join("X.csv"), &cov.names, &cov.x)?;
    io::write_matrix_csv(&dir.join("Z.csv"), &cov.z_names(), &cov.z)?;
    io::write_roster(&dir.join("roster.csv"), inputs.roster)?;
    io::write_outcomes(&dir.join("outcomes.csv"), inputs.roster.ids(), &y)?;

    let mut warnings = Vec::new();
    let mut formation = None;
    let mut controls = None;
    if cfg.formation.enabled {
        let dyads = dyad_covariates(inputs.profiles, inputs.roster, inputs.records, &period)?;
        let frame = DyadFrame::new(Arc::new(dyads), &w)?;
        let fit = fit_dyadic_logit(&frame, &cfg.formation.options)?;
        let sieve = sieve_terms(&fit, &g, cfg.formation.sieve_degree)?;
        let capped = fit
            .mu_capped
            .iter()
            .zip(&fit.nu_capped)
            .filter(|(a, b)| **a || **b)
            .count();
        if capped > 0 {
            warnings.push(format!(
                "{}: {capped} scholars have capped fixed effects (no links or linked to everyone)",
                pc.label
            ));
        }
        warnings.extend(sieve.warnings.iter().map(|w| format!("{}: {w}", pc.label)));
        io::write_matrix_csv(&dir.join("sieve.csv"), &sieve.names, &sieve.columns)?;
        io::write_json(&dir.join("formation.json"), &fit)?;
        formation = Some(FormationSummary {
            names: fit.names.clone(),
            beta_bar: fit.beta_bar.clone(),
            beta_se: fit.beta_se.clone(),
            sweeps: fit.sweeps,
            gradient_max_norm: fit.gradient_max_norm,
            capped_scholars: capped,
            sieve_columns: sieve.names.clone(),
        });
        controls = Some((sieve.columns, sieve.names));
    }
    let ctrl = controls.as_ref().map(|(m, n)| (m, n.as_slice()));
    let base_seed = cfg.seed.wrapping_add(1000 * k as u64);

    let mut data = EstimationData::build(
        y.clone(),
        g.clone(),
        &cov.x,
        &cov.names,
        ctrl,
        cfg.formation.contextual_sieve,
    )?;
    note_dropped(&pc.label, data.drop_constant_columns(), &mut warnings);
    let (report, fit) = fit_one(cfg, &pc.label, &data, base_seed, &mut warnings)?;
    io::write_json(&dir.join("fit.json"), &fit)?;
    let mut reports = vec![report];

    if pc.covid_index {
        options.include_covid_index = true;
        let cov_ci = build_covariates(
            inputs.profiles,
            inputs.roster,
            inputs.records,
            &period,
            &g,
            &options,
        )?;
        let mut data_ci = EstimationData::build(
            y,
            g.clone(),
            &cov_ci.x,
            &cov_ci.names,
            ctrl,
            cfg.formation.contextual_sieve,
        )?;
        let label = format!("{} + Covid Index", pc.label);
        note_dropped(&label, data_ci.drop_constant_columns(), &mut warnings);
        let (report, fit) = fit_one(cfg, &label, &data_ci, base_seed + 1, &mut warnings)?;
        io::write_json(&dir.join("fit_covid_index.json"), &fit)?;
        reports.push(report);
    }
    let refs: Vec<&FitReport> = reports.iter().collect();
    fs::write(dir.join("table.txt"), render_table(&refs))?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(PeriodResult {
        label: pc.label.clone(),
        start: pc.start,
        end: pc.end,
        agents: g.n(),
        links: w.edge_count(),
        isolated: g.isolated_count(),
        formation,
        reports,
        warnings,
        error: None,
    })
}

/// Runs every period; a failing period is reported with its error while the others continue.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let profiles = io::read_scholars(&cfg.data.scholars)?;
    let raw = io::read_publications(&cfg.data.publications)?;
    let roster = Roster::from_profiles(&profiles)?;
    let (records, dropped) = filter_to_roster(&raw, &roster);
    if dropped > 0 {
        log::info!("ignored {dropped} author entries outside the roster");
    }
    fs::create_dir_all(&cfg.output)?;
    let inputs = Inputs {
        profiles: &profiles,
        records: &records,
        roster: &roster,
    };
    let periods: Vec<PeriodResult> = (0..cfg.periods.len())
        .into_par_iter()
        .map(|k| {
            run_period(cfg, k, &inputs).unwrap_or_else(|e| {
                let pc = &cfg.periods[k];
                log::error!("period `{}` aborted: {e}", pc.label);
                PeriodResult {
                    label: pc.label.clone(),
                    start: pc.start,
                    end: pc.end,
                    agents: roster.len(),
                    links: 0,
                    isolated: 0,
                    formation: None,
                    reports: Vec::new(),
                    warnings: Vec::new(),
                    error: Some(e.to_string()),
                }
            })
        })
        .collect();
    let summary = RunSummary { periods };
    io::write_json(&cfg.output.join("results.json"), &summary)?;
    fs::write(cfg.output.join("table.txt"), summary.table())?;
    io::write_json(
        &cfg.output.join("manifest.json"),
        &Manifest::new(cfg, &summary),
    )?;
    Ok(summary)
}

/// Every setting used in a run, defaults included, plus fixed numerical tolerances.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub npl: NplOptions,
    pub equilibrium: crate::game::EquilibriumOptions,
    pub tail_tolerance: f64,
    pub period_seeds: Vec<(String, u64)>,
    pub failed_periods: Vec<String>,
}

impl<'a> Manifest<'a> {
    pub fn new(cfg: &'a RunConfig, summary: &RunSummary) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            npl: NplOptions {
                tol: cfg.estimation.tol,
                ..NplOptions::default()
            },
            equilibrium: crate::game::EquilibriumOptions::default(),
            tail_tolerance: crate::game::TAIL_TOL,
            period_seeds: cfg
                .periods
                .iter()
                .enumerate()
                .map(|(k, p)| (p.label.clone(), cfg.seed.wrapping_add(1000 * k as u64)))
                .collect(),
            failed_periods: summary.failed().iter().map(|p| p.label.clone()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output = "out"
[data]
publications = "p.csv"
scholars = "s.csv"
[[periods]]
label = "Pre-Covid"
start = 2018
end = 2019
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/tmp/x")).unwrap();
        assert_eq!(cfg.network.min_joint_papers, 2);
        assert_eq!(cfg.formation.sieve_degree, 2);
        assert_eq!(cfg.estimation.r_bar, RBarSetting::Named("auto".into()));
        assert_eq!(cfg.data.scholars, Path::new("/tmp/x/s.csv"));
    }

    #[test]
    fn unknown_bucket_name_is_rejected() {
        let text = format!(
            "{MINIMAL}\n[covariates.buckets.publications]\nbounds = [1.0]\nlabels = [\"a\"]\n"
        );
        let err = RunConfig::from_toml(&text, Path::new(".")).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("publications"), "{err}");
    }

    #[test]
    fn r_bar_setting_parses() {
        assert_eq!("3".parse::<RBarSetting>().unwrap(), RBarSetting::Fixed(3));
        assert!("auto".parse::<RBarSetting>().is_ok());
        assert!("often".parse::<RBarSetting>().is_err());
        assert!("0".parse::<RBarSetting>().is_err());
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("Covid + Covid Index"), "covid_covid_index");
        assert_eq!(slug("Pre-Covid"), "pre_covid");
    }
}
