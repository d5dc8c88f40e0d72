use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn peergame(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peergame"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn bibliography(dir: &Path) {
    fs::write(dir.join("bib.toml"), "n_scholars = 120\nseed = 4\n").unwrap();
    let out = peergame(
        &[
            "simulate",
            "--bibliography",
            "--config",
            "bib.toml",
            "--out",
            "raw",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

const RUN: &str = r#"
seed = 11
output = "out"

[data]
publications = "raw/publications.json"
scholars = "raw/scholars.json"

[[periods]]
label = "Pre-Covid"
start = 2018
end = 2019

[[periods]]
label = "Covid"
start = 2020
end = 2021
covid_index = true

[estimation]
standard_errors = "none"
"#;

#[test]
fn help_and_version_exit_zero() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&peergame(&["--help"], tmp.path())), 0);
    assert_eq!(code(&peergame(&["--version"], tmp.path())), 0);
    assert_eq!(code(&peergame(&["fit", "--help"], tmp.path())), 0);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&peergame(&[], tmp.path())), 1);
    assert_eq!(code(&peergame(&["bogus"], tmp.path())), 1);
    let out = peergame(
        &[
            "build",
            "--publications",
            "p",
            "--scholars",
            "s",
            "--period",
            "2018",
            "--out",
            "o",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("START:END"));
}

#[test]
fn missing_input_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let out = peergame(
        &[
            "build",
            "--publications",
            "none.json",
            "--scholars",
            "none.json",
            "--period",
            "2018:2019",
            "--out",
            "o",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn reversed_period_is_rejected() {
    let tmp = TempDir::new().unwrap();
    bibliography(tmp.path());
    let out = peergame(
        &[
            "build",
            "--publications",
            "raw/publications.json",
            "--scholars",
            "raw/scholars.json",
            "--period",
            "2019:2018",
            "--out",
            "o",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn build_formation_fit_chain() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    bibliography(dir);
    let period = [
        "--publications",
        "raw/publications.json",
        "--scholars",
        "raw/scholars.json",
        "--period",
        "2018:2019",
    ];

    let mut args = vec!["build"];
    args.extend(period);
    args.extend(["--covid-index", "--out", "b"]);
    let out = peergame(&args, dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["G.txt", "X.csv", "Z.csv", "roster.csv", "outcomes.csv"] {
        assert!(dir.join("b").join(f).exists(), "missing {f}");
    }
    let header = fs::read_to_string(dir.join("b/X.csv")).unwrap();
    assert!(header.lines().next().unwrap().contains("Covid"));
    assert_eq!(
        fs::read_to_string(dir.join("b/outcomes.csv"))
            .unwrap()
            .lines()
            .count(),
        121
    );

    let mut args = vec!["formation"];
    args.extend(period);
    args.extend(["--network", "b/G.txt", "--sieve-degree", "1", "--out", "f"]);
    let out = peergame(&args, dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["formation.json", "effects.csv", "sieve.csv"] {
        assert!(dir.join("f").join(f).exists(), "missing {f}");
    }

    let out = peergame(
        &[
            "fit",
            "--network",
            "b/G.txt",
            "--covariates",
            "b/X.csv",
            "--outcomes",
            "b/outcomes.csv",
            "--controls",
            "f/sieve.csv",
            "--se",
            "none",
            "--out",
            "fit",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(dir.join("fit/table.txt")).unwrap();
    assert!(table.contains("lambda"));
    assert!(table.contains("Controls"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("fit/fit.json")).unwrap()).unwrap();
    assert!(json["converged"].as_bool().unwrap());
}

#[test]
fn fit_rejects_mismatched_sizes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("G.txt"), "# n 3\n0 1 1\n1 0 1\n").unwrap();
    fs::write(dir.join("X.csv"), "x\n1\n2\n").unwrap();
    fs::write(dir.join("y.csv"), "scholar_id,y\na,1\nb,0\nc,2\n").unwrap();
    let out = peergame(
        &[
            "fit",
            "--network",
            "G.txt",
            "--covariates",
            "X.csv",
            "--outcomes",
            "y.csv",
            "--out",
            "o",
        ],
        dir,
    );
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn simulate_writes_replications_and_truth() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("sim.toml"),
        r#"
n = 200
seed = 2
[truth]
lambda = 0.1
gamma = [0.0, 1.0, 0.3, 1.0, 0.3]
delta_tilde = [0.2]
delta_bar = 0.1
rho = 1.0
[network]
kind = "dyadic"
beta_bar = [1.0, -0.5]
mu_mean = -2.0
mu_sd = 1.0
nu_mean = -2.0
nu_sd = 1.0
"#,
    )
    .unwrap();
    let out = peergame(
        &[
            "simulate", "--config", "sim.toml", "--reps", "2", "--out", "s",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for rep in ["rep_000", "rep_001"] {
        for f in [
            "G.txt",
            "X.csv",
            "Z.csv",
            "roster.csv",
            "outcomes.csv",
            "latent.csv",
        ] {
            assert!(
                dir.join("s").join(rep).join(f).exists(),
                "missing {rep}/{f}"
            );
        }
    }
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("s/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["reps"].as_array().unwrap().len(), 2);
    assert_eq!(truth["config"]["truth"]["lambda"].as_f64(), Some(0.1));
    let a = fs::read_to_string(dir.join("s/rep_000/outcomes.csv")).unwrap();
    let b = fs::read_to_string(dir.join("s/rep_001/outcomes.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn simulate_rejects_bad_gamma_length() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("sim.toml"),
        "n = 50\nseed = 1\n[truth]\nlambda = 0.1\ngamma = [0.0, 1.0]\ndelta_tilde = []\ndelta_bar = 0.1\nrho = 1.0\n[network]\nkind = \"erdos_renyi\"\nmean_degree = 3.0\n",
    )
    .unwrap();
    let out = peergame(&["simulate", "--config", "sim.toml", "--out", "s"], dir);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("gamma"));
}

#[test]
fn run_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    bibliography(dir);
    fs::write(dir.join("run.toml"), RUN).unwrap();
    let out = peergame(&["run", "--config", "run.toml"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = String::from_utf8_lossy(&out.stdout).into_owned();
    for col in ["Pre-Covid", "Covid", "Covid + Covid Index"] {
        assert!(table.contains(col), "missing column {col}");
    }
    assert!(dir.join("out/manifest.json").exists());
    let first = fs::read(dir.join("out/results.json")).unwrap();
    let out = peergame(&["run", "--config", "run.toml"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(first, fs::read(dir.join("out/results.json")).unwrap());
}

#[test]
fn unknown_bucket_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    bibliography(dir);
    let cfg = format!("{RUN}\n[covariates.buckets.age]\nbounds = [30.0]\nlabels = [\"Old\"]\n");
    fs::write(dir.join("run.toml"), cfg).unwrap();
    let out = peergame(&["run", "--config", "run.toml"], dir);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("age"), "{}", stderr(&out));
}
