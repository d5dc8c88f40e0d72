use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netbuild::InteractionNetwork;

/// Role of a design column in `ψ = ZΓ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Intercept,
    Own,
    /// Correction terms for network endogeneity, entered alongside the own effects.
    Control,
    Contextual,
}

/// Outcomes, peer network, and the design matrix `Z` with one named column per entry of `Γ`.
#[derive(Clone, Debug)]
pub struct EstimationData {
    pub y: Vec<u32>,
    pub g: InteractionNetwork,
    pub z: DMatrix<f64>,
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
}

/// Largest outcome accepted; larger counts are rejected rather than truncated.
pub const MAX_OUTCOME: u32 = 100_000;

impl EstimationData {
    pub fn from_parts(
        y: Vec<u32>,
        g: InteractionNetwork,
        z: DMatrix<f64>,
        names: Vec<String>,
        kinds: Vec<ColumnKind>,
    ) -> Result<Self> {
        let n = g.n();
        if y.len() != n || z.nrows() != n {
            return Err(Error::invalid(format!(
                "dimension mismatch: network has {n} agents, outcomes {}, design rows {}",
                y.len(),
                z.nrows()
            )));
        }
        if names.len() != z.ncols() || kinds.len() != z.ncols() {
            return Err(Error::invalid(
                "column names/kinds must match the design width",
            ));
        }
        if n == 0 {
            return Err(Error::invalid("no agents"));
        }
        if let Some(&m) = y.iter().find(|&&v| v > MAX_OUTCOME) {
            return Err(Error::invalid(format!(
                "outcome {m} exceeds the supported maximum {MAX_OUTCOME}"
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("design matrix contains non-finite values"));
        }
        Ok(Self {
            y,
            g,
            z,
            names,
            kinds,
        })
    }

    /// Design `[1, X, C, GX]`, with `GC` appended too when `contextual_controls` is set.
    pub fn build(
        y: Vec<u32>,
        g: InteractionNetwork,
        x: &DMatrix<f64>,
        x_names: &[String],
        controls: Option<(&DMatrix<f64>, &[String])>,
        contextual_controls: bool,
    ) -> Result<Self> {
        let n = g.n();
        if x.nrows() != n || x_names.len() != x.ncols() {
            return Err(Error::invalid(format!(
                "covariates are {}×{} with {} names for {n} agents",
                x.nrows(),
                x.ncols(),
                x_names.len()
            )));
        }
        let mut cols: Vec<(String, ColumnKind, Vec<f64>)> =
            vec![("Intercept".into(), ColumnKind::Intercept, vec![1.0; n])];
        for (c, name) in x_names.iter().enumerate() {
            cols.push((
                name.clone(),
                ColumnKind::Own,
                x.column(c).iter().copied().collect(),
            ));
        }
        if let Some((cm, cn)) = controls {
            if cm.nrows() != n || cn.len() != cm.ncols() {
                return Err(Error::invalid("control matrix shape does not match"));
            }
            for (c, name) in cn.iter().enumerate() {
                cols.push((
                    name.clone(),
                    ColumnKind::Control,
                    cm.column(c).iter().copied().collect(),
                ));
            }
        }
        let gx = g.mul_dense(x);
        for (c, name) in x_names.iter().enumerate() {
            cols.push((
                format!("{name} (Coauthors)"),
                ColumnKind::Contextual,
                gx.column(c).iter().copied().collect(),
            ));
        }
        if let (Some((cm, cn)), true) = (controls, contextual_controls) {
            let gc = g.mul_dense(cm);
            for (c, name) in cn.iter().enumerate() {
                cols.push((
                    format!("{name} (Coauthors)"),
                    ColumnKind::Contextual,
                    gc.column(c).iter().copied().collect(),
                ));
            }
        }
        let z = DMatrix::from_fn(n, cols.len(), |i, c| cols[c].2[i]);
        let names = cols.iter().map(|c| c.0.clone()).collect();
        let kinds = cols.iter().map(|c| c.1).collect();
        Self::from_parts(y, g, z, names, kinds)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn max_outcome(&self) -> u32 {
        self.y.iter().copied().max().unwrap_or(0)
    }

    /// Removes non-intercept columns without variation; returns their names.
    pub fn drop_constant_columns(&mut self) -> Vec<String> {
        let n = self.z.nrows();
        let keep: Vec<usize> = (0..self.z.ncols())
            .filter(|&c| {
                let col = self.z.column(c);
                let first = col[0];
                self.kinds[c] == ColumnKind::Intercept
                    || n == 0
                    || col
                        .iter()
                        .any(|&v| (v - first).abs() > 1e-12 * (1.0 + first.abs()))
            })
            .collect();
        if keep.len() == self.z.ncols() {
            return Vec::new();
        }
        let dropped = (0..self.z.ncols())
            .filter(|c| !keep.contains(c))
            .map(|c| self.names[c].clone())
            .collect();
        self.z = self.z.select_columns(&keep);
        self.names = keep.iter().map(|&c| self.names[c].clone()).collect();
        self.kinds = keep.iter().map(|&c| self.kinds[c]).collect();
        dropped
    }

    pub fn with_outcomes(&self, y: Vec<u32>) -> Self {
        Self { y, ..self.clone() }
    }
}
