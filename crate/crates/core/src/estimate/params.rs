use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{CostLadder, GameParams};

/// Shape of the parameter vector for a given design width and `R̄`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_gamma: usize,
    pub r_bar: usize,
}

impl ParamLayout {
    pub fn new(n_gamma: usize, r_bar: usize) -> Result<Self> {
        if r_bar == 0 {
            return Err(Error::invalid("R̄ must be at least 1"));
        }
        Ok(Self { n_gamma, r_bar })
    }

    pub fn len(&self) -> usize {
        1 + self.n_gamma + (self.r_bar - 1) + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lambda(&self) -> usize {
        0
    }

    pub fn gamma(&self) -> std::ops::Range<usize> {
        1..1 + self.n_gamma
    }

    pub fn delta_tilde(&self) -> std::ops::Range<usize> {
        let s = 1 + self.n_gamma;
        s..s + self.r_bar - 1
    }

    pub fn delta_bar(&self) -> usize {
        self.n_gamma + self.r_bar
    }

    pub fn rho(&self) -> usize {
        self.n_gamma + self.r_bar + 1
    }

    /// Whether coordinate `k` is stored as a logarithm.
    pub fn is_log(&self, k: usize) -> bool {
        !self.gamma().contains(&k)
    }

    pub fn names(&self, gamma_names: &[String]) -> Vec<String> {
        let mut v = vec!["lambda".to_string()];
        v.extend(gamma_names.iter().cloned());
        v.extend((2..=self.r_bar).map(|r| format!("delta_tilde_{r}")));
        v.push("delta_bar".into());
        v.push("rho".into());
        v
    }
}

/// Parameters on the natural scale. `δ_r = δ̃_r + λ` for `2 ≤ r ≤ R̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaturalParams {
    pub lambda: f64,
    pub gamma: Vec<f64>,
    pub delta_tilde: Vec<f64>,
    pub delta_bar: f64,
    pub rho: f64,
}

impl NaturalParams {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_gamma: self.gamma.len(),
            r_bar: self.delta_tilde.len() + 1,
        }
    }

    pub fn ladder(&self) -> Result<CostLadder> {
        CostLadder::from_excess(self.lambda, &self.delta_tilde, self.delta_bar, self.rho)
    }

    pub fn game(&self) -> Result<GameParams> {
        Ok(GameParams::new(self.ladder()?, self.gamma.clone()))
    }

    /// Flat vector in layout order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.lambda];
        v.extend(&self.gamma);
        v.extend(&self.delta_tilde);
        v.push(self.delta_bar);
        v.push(self.rho);
        v
    }

    pub fn from_vec(layout: ParamLayout, v: &[f64]) -> Result<Self> {
        if v.len() != layout.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                layout.len(),
                v.len()
            )));
        }
        Ok(Self {
            lambda: v[layout.lambda()],
            gamma: v[layout.gamma()].to_vec(),
            delta_tilde: v[layout.delta_tilde()].to_vec(),
            delta_bar: v[layout.delta_bar()],
            rho: v[layout.rho()],
        })
    }

    pub fn from_ladder(ladder: &CostLadder, gamma: Vec<f64>) -> Self {
        Self {
            lambda: ladder.lambda(),
            gamma,
            delta_tilde: ladder
                .free_increments()
                .iter()
                .map(|d| d - ladder.lambda())
                .collect(),
            delta_bar: ladder.delta_bar(),
            rho: ladder.rho(),
        }
    }
}

/// Transformed parameter vector `(log λ, Γ, log δ̃, log δ̄, log ρ)` searched by the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                layout.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("parameter vector contains NaN"));
        }
        Ok(Self { layout, values })
    }

    pub fn from_natural(p: &NaturalParams) -> Result<Self> {
        let layout = p.layout();
        let nat = p.to_vec();
        for (k, v) in nat.iter().enumerate() {
            if layout.is_log(k) && !(*v > 0.0) {
                return Err(Error::invalid(format!(
                    "parameter {k} = {v} must be positive on the natural scale"
                )));
            }
        }
        let values = nat
            .iter()
            .enumerate()
            .map(|(k, &v)| if layout.is_log(k) { v.ln() } else { v })
            .collect();
        Ok(Self { layout, values })
    }

    pub fn to_natural(&self) -> NaturalParams {
        let nat: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                if self.layout.is_log(k) {
                    v.exp().max(f64::MIN_POSITIVE)
                } else {
                    v
                }
            })
            .collect();
        // lengths agree by construction
        NaturalParams::from_vec(self.layout, &nat).expect("layout-consistent vector")
    }

    pub fn ladder(&self) -> Result<CostLadder> {
        self.to_natural().ladder()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_transformed_scale() {
        let nat = NaturalParams {
            lambda: 0.1,
            gamma: vec![1.0, -0.5],
            delta_tilde: vec![0.4, 0.7],
            delta_bar: 0.3,
            rho: 1.5,
        };
        let t = ParamVector::from_natural(&nat).unwrap();
        assert_eq!(t.layout.len(), 7);
        assert!((t.values[0] - 0.1f64.ln()).abs() < 1e-15);
        let back = t.to_natural();
        for (a, b) in back.to_vec().iter().zip(nat.to_vec()) {
            assert!((a - b).abs() < 1e-14);
        }
        let ladder = t.ladder().unwrap();
        assert!((ladder.increment(2) - 0.5).abs() < 1e-14);
        assert!((ladder.increment(3) - 0.8).abs() < 1e-14);
    }

    #[test]
    fn layout_names_and_ranges() {
        let l = ParamLayout::new(2, 3).unwrap();
        let names = l.names(&["a".into(), "b".into()]);
        assert_eq!(
            names,
            [
                "lambda",
                "a",
                "b",
                "delta_tilde_2",
                "delta_tilde_3",
                "delta_bar",
                "rho"
            ]
        );
        assert_eq!(l.delta_tilde(), 3..5);
        assert_eq!(l.delta_bar(), 5);
        assert_eq!(l.rho(), 6);
        assert!(ParamLayout::new(2, 0).is_err());
    }

    #[test]
    fn rejects_non_positive_natural_values() {
        let nat = NaturalParams {
            lambda: 0.0,
            gamma: vec![],
            delta_tilde: vec![],
            delta_bar: 0.3,
            rho: 1.0,
        };
        assert!(ParamVector::from_natural(&nat).is_err());
    }
}
