//! Result tables: a JSON record per fit and a text table with one column per fit.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::estimate::{significance_stars, ColumnKind, EstimateResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Peer,
    Own,
    Control,
    Contextual,
    Intercept,
    Threshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub kind: RowKind,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub stars: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub label: String,
    pub n: usize,
    pub r_bar: usize,
    pub loglik: f64,
    pub converged: bool,
    pub npl_iterations: usize,
    pub se_method: Option<String>,
    pub parameters: Vec<ParameterRow>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn new(label: &str, fit: &EstimateResult, kinds: &[ColumnKind], n: usize) -> Self {
        let layout = fit.layout;
        let se = fit.standard_errors.as_ref();
        let parameters = fit
            .names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let kind = if k == layout.lambda() {
                    RowKind::Peer
                } else if layout.gamma().contains(&k) {
                    match kinds.get(k - layout.gamma().start) {
                        Some(ColumnKind::Intercept) => RowKind::Intercept,
                        Some(ColumnKind::Own) => RowKind::Own,
                        Some(ColumnKind::Control) => RowKind::Control,
                        Some(ColumnKind::Contextual) => RowKind::Contextual,
                        None => RowKind::Own,
                    }
                } else {
                    RowKind::Threshold
                };
                let estimate = fit.estimates[k];
                let std_error = se.map(|s| s[k]).filter(|s| s.is_finite());
                ParameterRow {
                    name: name.clone(),
                    kind,
                    estimate,
                    std_error,
                    stars: std_error
                        .map(|s| significance_stars(estimate, s))
                        .unwrap_or("")
                        .to_string(),
                }
            })
            .collect();
        Self {
            label: label.to_string(),
            n,
            r_bar: fit.r_bar,
            loglik: fit.loglik,
            converged: fit.converged,
            npl_iterations: fit.npl_iterations,
            se_method: fit.se_method.clone(),
            parameters,
            warnings: Vec::new(),
        }
    }

    pub fn row(&self, name: &str) -> Option<&ParameterRow> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

const SECTIONS: [(&str, &[RowKind]); 5] = [
    ("Peer effect", &[RowKind::Peer]),
    ("Own effects", &[RowKind::Intercept, RowKind::Own]),
    ("Controls", &[RowKind::Control]),
    ("Contextual effects", &[RowKind::Contextual]),
    ("Cost ladder", &[RowKind::Threshold]),
];

fn cell(row: Option<&ParameterRow>) -> (String, String) {
    match row {
        None => (String::new(), String::new()),
        Some(r) => (
            format!("{:.3}{}", r.estimate, r.stars),
            r.std_error.map(|s| format!("({s:.3})")).unwrap_or_default(),
        ),
    }
}

/// Side-by-side table, one column per report, estimates over standard errors.
pub fn render_table(reports: &[&FitReport]) -> String {
    let mut rows: Vec<(RowKind, String)> = Vec::new();
    for r in reports {
        for p in &r.parameters {
            if !rows.iter().any(|(_, n)| *n == p.name) {
                rows.push((p.kind, p.name.clone()));
            }
        }
    }
    let name_w = rows
        .iter()
        .map(|(_, n)| n.chars().count())
        .max()
        .unwrap_or(0)
        .max(12);
    let col_w = reports
        .iter()
        .map(|r| r.label.chars().count())
        .max()
        .unwrap_or(0)
        .max(14);
    let mut out = String::new();
    let _ = write!(out, "{:name_w$}", "");
    for r in reports {
        let _ = write!(out, "  {:>col_w$}", r.label);
    }
    out.push('\n');
    let rule = "-".repeat(name_w + reports.len() * (col_w + 2));
    out.push_str(&rule);
    out.push('\n');
    for (title, kinds) in SECTIONS {
        let section: Vec<&String> = rows
            .iter()
            .filter(|(k, _)| kinds.contains(k))
            .map(|(_, n)| n)
            .collect();
        if section.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{title}");
        for name in section {
            let cells: Vec<(String, String)> = reports.iter().map(|r| cell(r.row(name))).collect();
            let _ = write!(out, "{name:name_w$}");
            for (est, _) in &cells {
                let _ = write!(out, "  {est:>col_w$}");
            }
            out.push('\n');
            if cells.iter().any(|(_, se)| !se.is_empty()) {
                let _ = write!(out, "{:name_w$}", "");
                for (_, se) in &cells {
                    let _ = write!(out, "  {se:>col_w$}");
                }
                out.push('\n');
            }
        }
    }
    out.push_str(&rule);
    out.push('\n');
    for (label, f) in [
        (
            "Observations",
            &(|r: &FitReport| r.n.to_string()) as &dyn Fn(&FitReport) -> String,
        ),
        ("Log-likelihood", &|r: &FitReport| {
            format!("{:.4}", r.loglik)
        }),
        ("NPL iterations", &|r: &FitReport| {
            r.npl_iterations.to_string()
        }),
        ("Converged", &|r: &FitReport| r.converged.to_string()),
    ] {
        let _ = write!(out, "{label:name_w$}");
        for r in reports {
            let _ = write!(out, "  {:>col_w$}", f(r));
        }
        out.push('\n');
    }
    out.push_str("Note: *p<0.1; **p<0.05; ***p<0.01\n");
    out
}
