use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sparse non-negative adjacency matrix with an empty diagonal.
///
/// Rows hold `(column, weight)` pairs sorted by column with strictly positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut clean = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let mut row: Vec<(usize, f64)> = row.into_iter().filter(|&(_, w)| w != 0.0).collect();
            row.sort_by_key(|&(j, _)| j);
            for win in row.windows(2) {
                if win[0].0 == win[1].0 {
                    return Err(Error::invalid(format!(
                        "duplicate entry ({i}, {})",
                        win[0].0
                    )));
                }
            }
            for &(j, w) in &row {
                if j >= n {
                    return Err(Error::invalid(format!(
                        "column {j} out of range for n = {n}"
                    )));
                }
                if j == i {
                    return Err(Error::invalid(format!("non-zero diagonal at row {i}")));
                }
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::invalid(format!(
                        "weight {w} at ({i}, {j}) must be finite and non-negative"
                    )));
                }
            }
            clean.push(row);
        }
        Ok(Self { n, rows: clean })
    }

    /// Binary adjacency from undirected pairs. Self-pairs are rejected.
    pub fn from_undirected_pairs(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "pair ({i}, {j}) out of range for n = {n}"
                )));
            }
            if i == j {
                return Err(Error::invalid(format!("self-link at {i}")));
            }
            rows[i].push((j, 1.0));
            rows[j].push((i, 1.0));
        }
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
            row.dedup_by_key(|&mut (j, _)| j);
        }
        Ok(Self { n, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.rows[i].iter().all(|&(j, w)| self.get(j, i) == w))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }
}

/// Row-stochastic peer matrix `G`: zero diagonal, rows summing to one, isolated rows empty.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionNetwork {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

pub const ROW_SUM_TOL: f64 = 1e-12;

impl InteractionNetwork {
    /// Validates the row-stochastic invariants. Use [`row_normalize`] to build one from raw weights.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let adj = Adjacency::from_rows(rows)?;
        for (i, row) in adj.rows.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let s: f64 = row.iter().map(|&(_, w)| w).sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("row {i} sums to {s}, expected 1")));
            }
        }
        Ok(Self {
            n: adj.n,
            rows: adj.rows,
        })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.rows[i].is_empty()
    }

    pub fn isolated_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_empty()).count()
    }

    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// ‖G‖ read as the maximum absolute row sum.
    pub fn max_row_sum(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(_, w)| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Peer averages `G v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "vector length must match network size");
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, w)| w * v[j]).sum())
            .collect()
    }

    /// `G M` for a dense `n × k` matrix.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.n, "matrix rows must match network size");
        let mut out = DMatrix::zeros(self.n, m.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                for c in 0..m.ncols() {
                    out[(i, c)] += w * m[(j, c)];
                }
            }
        }
        out
    }

    /// Reorders agents: new index `k` holds old agent `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; self.n];
        for (k, &old) in perm.iter().enumerate() {
            inv[old] = k;
        }
        let rows = perm
            .iter()
            .map(|&old| {
                let mut r: Vec<(usize, f64)> =
                    self.rows[old].iter().map(|&(j, w)| (inv[j], w)).collect();
                r.sort_by_key(|&(j, _)| j);
                r
            })
            .collect();
        Self { n: self.n, rows }
    }

    pub fn as_adjacency(&self) -> Adjacency {
        Adjacency {
            n: self.n,
            rows: self.rows.clone(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.as_adjacency().to_dense()
    }
}

/// Divides each row with positive sum by that sum; empty rows stay empty.
pub fn row_normalize(w: &Adjacency) -> InteractionNetwork {
    let rows = w
        .rows
        .iter()
        .map(|row| {
            let s: f64 = row.iter().map(|&(_, v)| v).sum();
            if s > 0.0 {
                row.iter().map(|&(j, v)| (j, v / s)).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    InteractionNetwork { n: w.n, rows }
}
