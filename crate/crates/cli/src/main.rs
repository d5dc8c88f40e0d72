use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::warn;

use peergame::error::{Error, Result};
use peergame::estimate::EstimationData;
use peergame::formation::{
    dyad_covariates, fit_dyadic_logit, sieve_terms, DyadFrame, FormationOptions,
};
use peergame::io;
use peergame::netbuild::{
    build_adjacency, build_covariates, filter_to_roster, publication_counts, row_normalize,
    CovariateOptions, PeriodSpec, Roster,
};
use peergame::pipeline::{
    fit_dataset, run_pipeline, EstimationConfig, RBarSetting, RunConfig, SeChoice,
};
use peergame::report::render_table;
use peergame::simulate::{simulate_dataset, synthetic_bibliography, BibliographyConfig, SimConfig};

#[derive(Parser, Debug)]
#[command(
    name = "peergame",
    version,
    about = "Peer effects in count outcomes on co-authorship networks"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the interaction network, covariates and outcomes for one period.
    Build(BuildArgs),
    /// Draw synthetic datasets from a simulation design.
    Simulate(SimulateArgs),
    /// Fit the dyadic link model and write the sieve control columns.
    Formation(FormationArgs),
    /// Estimate the peer-effect model on prepared files.
    Fit(FitArgs),
    /// Run every period of a configuration file end to end.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct PeriodArgs {
    #[arg(long)]
    publications: PathBuf,
    #[arg(long)]
    scholars: PathBuf,
    /// Outcome period as START:END (inclusive years).
    #[arg(long, value_parser = parse_years)]
    period: (i32, i32),
    /// Years used for links; defaults to the outcome period.
    #[arg(long, value_parser = parse_years)]
    network_window: Option<(i32, i32)>,
    #[arg(long, default_value_t = 2)]
    min_joint_papers: u32,
    /// Years before the period used for recent productivity.
    #[arg(long, default_value_t = 3)]
    lookback: u32,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    period: PeriodArgs,
    /// Add the Covid-index column to X.
    #[arg(long)]
    covid_index: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation design (TOML); optional with `--bibliography`.
    #[arg(long, required_unless_present = "bibliography")]
    config: Option<PathBuf>,
    /// Write synthetic scholars.json and publications.json instead of model draws.
    #[arg(long)]
    bibliography: bool,
    #[arg(long, default_value_t = 1)]
    reps: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FormationArgs {
    #[command(flatten)]
    period: PeriodArgs,
    /// Interaction network (G.txt from `build`); rebuilt from the records when omitted.
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    sieve_degree: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    network: PathBuf,
    /// Own covariates X (CSV with header); the intercept and GX are added here.
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long)]
    outcomes: PathBuf,
    /// Extra own-block columns such as the sieve terms from `formation`.
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Also add G·controls to the contextual block.
    #[arg(long)]
    contextual_controls: bool,
    /// Number of free cost increments, or `auto`.
    #[arg(long, default_value = "auto")]
    r_bar: RBarSetting,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, value_enum, default_value = "bootstrap")]
    se: SeArg,
    #[arg(long, default_value_t = 199)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "fit")]
    label: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum SeArg {
    Bootstrap,
    Sandwich,
    None,
}

impl From<SeArg> for SeChoice {
    fn from(s: SeArg) -> Self {
        match s {
            SeArg::Bootstrap => SeChoice::Bootstrap,
            SeArg::Sandwich => SeChoice::Sandwich,
            SeArg::None => SeChoice::None,
        }
    }
}

fn parse_years(s: &str) -> std::result::Result<(i32, i32), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected START:END, got `{s}`"))?;
    let a = a
        .trim()
        .parse::<i32>()
        .map_err(|e| format!("bad start year `{a}`: {e}"))?;
    let b = b
        .trim()
        .parse::<i32>()
        .map_err(|e| format!("bad end year `{b}`: {e}"))?;
    Ok((a, b))
}

struct Inputs {
    roster: Roster,
    profiles: Vec<peergame::netbuild::ScholarProfile>,
    records: Vec<peergame::netbuild::PublicationRecord>,
    period: PeriodSpec,
    net_period: PeriodSpec,
}

fn load(args: &PeriodArgs) -> Result<Inputs> {
    let profiles = io::read_scholars(&args.scholars)?;
    let raw = io::read_publications(&args.publications)?;
    let roster = Roster::from_profiles(&profiles)?;
    let (records, dropped) = filter_to_roster(&raw, &roster);
    if dropped > 0 {
        log::info!("ignored {dropped} author entries outside the roster");
    }
    let period = PeriodSpec::new(args.period.0, args.period.1)?.with_lookback(args.lookback);
    let net_period = match args.network_window {
        Some((s, e)) => PeriodSpec::new(s, e)?,
        None => period,
    };
    Ok(Inputs {
        roster,
        profiles,
        records,
        period,
        net_period,
    })
}

fn build(args: &BuildArgs) -> Result<()> {
    let inp = load(&args.period)?;
    let w = build_adjacency(
        &inp.records,
        &inp.roster,
        &inp.net_period,
        args.period.min_joint_papers,
    )?;
    let g = row_normalize(&w);
    let y = publication_counts(&inp.records, &inp.roster, &inp.period)?;
    let options = CovariateOptions {
        include_covid_index: args.covid_index,
        ..CovariateOptions::default()
    };
    let cov = build_covariates(
        &inp.profiles,
        &inp.roster,
        &inp.records,
        &inp.period,
        &g,
        &options,
    )?;
    fs::create_dir_all(&args.out)?;
    io::write_network(&args.out.join("G.txt"), &g)?;
    io::write_matrix_csv(&args.out.join("X.csv"), &cov.names, &cov.x)?;
    io::write_matrix_csv(&args.out.join("Z.csv"), &cov.z_names(), &cov.z)?;
    io::write_roster(&args.out.join("roster.csv"), &inp.roster)?;
    io::write_outcomes(&args.out.join("outcomes.csv"), inp.roster.ids(), &y)?;
    println!(
        "{} scholars, {} links, {} isolated; wrote {}",
        g.n(),
        w.edge_count(),
        g.isolated_count(),
        args.out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct SimManifest<'a> {
    config: &'a SimConfig,
    reps: Vec<SimRep>,
}

#[derive(serde::Serialize)]
struct SimRep {
    rep: u64,
    dir: String,
    peer_effect_bound: f64,
    mean_outcome: f64,
    warnings: Vec<String>,
}

fn bibliography(args: &SimulateArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => BibliographyConfig::from_toml(&fs::read_to_string(path)?)?,
        None => BibliographyConfig::default(),
    };
    let (profiles, records) = synthetic_bibliography(&cfg)?;
    fs::create_dir_all(&args.out)?;
    io::write_scholars(&args.out.join("scholars.json"), &profiles)?;
    io::write_publications(&args.out.join("publications.json"), &records)?;
    println!(
        "{} scholars, {} publications; wrote {}",
        profiles.len(),
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    if args.bibliography {
        return bibliography(args);
    }
    let Some(path) = &args.config else {
        return Err(Error::invalid("--config is required"));
    };
    let cfg = SimConfig::from_path(path)?;
    fs::create_dir_all(&args.out)?;
    let mut reps = Vec::new();
    for rep in 0..args.reps {
        let data = simulate_dataset(&cfg, rep)?;
        let name = format!("rep_{rep:03}");
        let dir = args.out.join(&name);
        fs::create_dir_all(&dir)?;
        let ids: Vec<String> = (0..cfg.n).map(|i| format!("a{i:05}")).collect();
        let roster = Roster::new(ids.clone())?;
        let g = &data.network.g;
        let gx = g.mul_dense(&data.x);
        let mut z_names: Vec<String> = data.x_names.clone();
        z_names.extend(data.x_names.iter().map(|n| format!("G_{n}")));
        let z = nalgebra::DMatrix::from_fn(cfg.n, 2 * data.x.ncols(), |i, c| {
            if c < data.x.ncols() {
                data.x[(i, c)]
            } else {
                gx[(i, c - data.x.ncols())]
            }
        });
        io::write_network(&dir.join("G.txt"), g)?;
        io::write_matrix_csv(&dir.join("X.csv"), &data.x_names, &data.x)?;
        io::write_matrix_csv(&dir.join("Z.csv"), &z_names, &z)?;
        io::write_roster(&dir.join("roster.csv"), &roster)?;
        io::write_outcomes(&dir.join("outcomes.csv"), &ids, &data.y)?;
        if let Some(l) = &data.network.latent {
            let names: Vec<String> = ["group", "trait", "mu", "nu"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let m = nalgebra::DMatrix::from_fn(cfg.n, 4, |i, c| match c {
                0 => l.group[i] as f64,
                1 => l.trait_value[i],
                2 => l.mu[i],
                _ => l.nu[i],
            });
            io::write_matrix_csv(&dir.join("latent.csv"), &names, &m)?;
        }
        for w in &data.warnings {
            warn!("{name}: {w}");
        }
        reps.push(SimRep {
            rep,
            dir: name,
            peer_effect_bound: data.peer_effect_bound,
            mean_outcome: data.y.iter().map(|&v| f64::from(v)).sum::<f64>() / cfg.n as f64,
            warnings: data.warnings,
        });
    }
    io::write_json(
        &args.out.join("truth.json"),
        &SimManifest { config: &cfg, reps },
    )?;
    println!(
        "wrote {} replication(s) to {}",
        args.reps,
        args.out.display()
    );
    Ok(())
}

fn formation(args: &FormationArgs) -> Result<()> {
    let inp = load(&args.period)?;
    let w = match &args.network {
        Some(path) => {
            let g = io::read_network(path)?;
            if g.n() != inp.roster.len() {
                return Err(Error::Invalid(format!(
                    "network has {} nodes but the roster has {} scholars",
                    g.n(),
                    inp.roster.len()
                )));
            }
            g.as_adjacency()
        }
        None => build_adjacency(
            &inp.records,
            &inp.roster,
            &inp.net_period,
            args.period.min_joint_papers,
        )?,
    };
    let g = row_normalize(&w);
    let dyads = dyad_covariates(&inp.profiles, &inp.roster, &inp.records, &inp.period)?;
    let frame = DyadFrame::new(Arc::new(dyads), &w)?;
    let fit = fit_dyadic_logit(&frame, &FormationOptions::default())?;
    let sieve = sieve_terms(&fit, &g, args.sieve_degree)?;
    for w in &sieve.warnings {
        warn!("{w}");
    }
    fs::create_dir_all(&args.out)?;
    io::write_json(&args.out.join("formation.json"), &fit)?;
    io::write_matrix_csv(&args.out.join("sieve.csv"), &sieve.names, &sieve.columns)?;
    let names: Vec<String> = ["mu", "nu"].iter().map(|s| s.to_string()).collect();
    let effects =
        nalgebra::DMatrix::from_fn(g.n(), 2, |i, c| if c == 0 { fit.mu[i] } else { fit.nu[i] });
    io::write_matrix_csv(&args.out.join("effects.csv"), &names, &effects)?;
    println!("beta_bar:");
    for (k, name) in fit.names.iter().enumerate() {
        let se = fit
            .beta_se
            .as_ref()
            .map(|s| format!(" ({:.4})", s[k]))
            .unwrap_or_default();
        println!("  {name:<28} {:>9.4}{se}", fit.beta_bar[k]);
    }
    println!(
        "{} sweeps, {} sieve columns; wrote {}",
        fit.sweeps,
        sieve.names.len(),
        args.out.display()
    );
    Ok(())
}

fn fit(args: &FitArgs) -> Result<()> {
    let g = io::read_network(&args.network)?;
    let (x_names, x) = io::read_matrix_csv(&args.covariates)?;
    let (_, y) = io::read_outcomes(&args.outcomes)?;
    let controls = args
        .controls
        .as_deref()
        .map(io::read_matrix_csv)
        .transpose()?;
    let ctrl = controls.as_ref().map(|(n, m)| (m, n.as_slice()));
    let mut data = EstimationData::build(y, g, &x, &x_names, ctrl, args.contextual_controls)?;
    let dropped = data.drop_constant_columns();
    if !dropped.is_empty() {
        warn!("dropped constant columns {}", dropped.join(", "));
    }
    let est = EstimationConfig {
        r_bar: args.r_bar.clone(),
        tol: args.tol,
        standard_errors: args.se.into(),
        bootstrap_reps: args.bootstrap,
        ..EstimationConfig::default()
    };
    let (report, result, warnings) = fit_dataset(&data, &est, &args.label, args.seed)?;
    for w in &warnings {
        warn!("{w}");
    }
    fs::create_dir_all(&args.out)?;
    io::write_json(&args.out.join("fit.json"), &result)?;
    io::write_json(&args.out.join("report.json"), &report)?;
    let table = render_table(&[&report]);
    fs::write(args.out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = RunConfig::from_path(&args.config)?;
    let summary = run_pipeline(&cfg)?;
    print!("{}", summary.table());
    let failed = summary.failed();
    for p in &failed {
        eprintln!(
            "period {} failed: {}",
            p.label,
            p.error.as_deref().unwrap_or("unknown error")
        );
    }
    if !failed.is_empty() && failed.len() == summary.periods.len() {
        return Err(Error::Numerical("every period failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Build(a) => build(a),
        Command::Simulate(a) => simulate(a),
        Command::Formation(a) => formation(a),
        Command::Fit(a) => fit(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
