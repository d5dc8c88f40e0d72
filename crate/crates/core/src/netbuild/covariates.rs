use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::network::InteractionNetwork;
use super::records::{
    covid_index, scholar_papers, PeriodSpec, PublicationRecord, Roster, ScholarProfile,
};
use crate::error::{Error, Result};

/// Lower bounds of the non-reference buckets of one discretized feature.
///
/// With bounds `[b1, b2, …]` values below `b1` fall in the omitted reference bucket,
/// `[b1, b2)` in the first dummy, and so on; the last bucket is open-ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketSpec {
    pub bounds: Vec<f64>,
    pub labels: Vec<String>,
}

impl BucketSpec {
    pub fn new(bounds: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        let spec = Self { bounds, labels };
        spec.validate("bucket")?;
        Ok(spec)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.bounds.len() != self.labels.len() {
            return Err(Error::invalid(format!(
                "buckets.{name}: {} bounds but {} labels",
                self.bounds.len(),
                self.labels.len()
            )));
        }
        if self.bounds.windows(2).any(|w| w[1] <= w[0])
            || self.bounds.iter().any(|b| !b.is_finite())
        {
            return Err(Error::invalid(format!(
                "buckets.{name}: bounds must be finite and strictly increasing"
            )));
        }
        Ok(())
    }

    /// Index of the dummy that fires for `value`, `None` for the reference bucket.
    pub fn bucket(&self, value: f64) -> Option<usize> {
        self.bounds.iter().rposition(|&b| value >= b)
    }
}

fn labels(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketConfig {
    /// Average publications per year over the look-back window (reference: 0–1).
    pub productivity: BucketSpec,
    /// Cumulative citations through the period's first year (reference: < 100).
    pub citations: BucketSpec,
    /// Years since first publication at the period start (reference: < 10).
    pub experience: BucketSpec,
}

impl Default for BucketConfig {
    fn default() -> Self {
        Self {
            productivity: BucketSpec {
                bounds: vec![2.0, 5.0, 10.0],
                labels: labels(&[
                    "2-4 Publications Per Year",
                    "5-9 Publications Per Year",
                    "10+ Publications Per Year",
                ]),
            },
            citations: BucketSpec {
                bounds: vec![100.0, 500.0, 2000.0, 5000.0, 10000.0, 20000.0],
                labels: labels(&[
                    "100-499 Citations",
                    "500-1,999 Citations",
                    "2,000-4,999 Citations",
                    "5,000-9,999 Citations",
                    "10,000-19,999 Citations",
                    "20,000+ Citations",
                ]),
            },
            experience: BucketSpec {
                bounds: vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
                labels: labels(&[
                    "Experience 10-20 Years",
                    "Experience 20-30 Years",
                    "Experience 30-40 Years",
                    "Experience 40-50 Years",
                    "Experience 50-60 Years",
                    "Experience 60+ Years",
                ]),
            },
        }
    }
}

impl BucketConfig {
    pub fn validate(&self) -> Result<()> {
        self.productivity.validate("productivity")?;
        self.citations.validate("citations")?;
        self.experience.validate("experience")
    }
}

pub fn default_fields() -> Vec<String> {
    labels(&[
        "Theory",
        "Macro",
        "Labor",
        "Metrics",
        "Industrial Organization",
        "Development",
        "Health",
        "Finance",
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateOptions {
    #[serde(default)]
    pub buckets: BucketConfig,
    /// Sub-field tags that receive a dummy; other tags are ignored.
    #[serde(default = "default_fields")]
    pub fields: Vec<String>,
    #[serde(default)]
    pub include_covid_index: bool,
    #[serde(default = "default_covid_window")]
    pub covid_window: (i32, i32),
    #[serde(default = "default_covid_threshold")]
    pub covid_threshold: f64,
}

fn default_covid_window() -> (i32, i32) {
    (2019, 2021)
}

fn default_covid_threshold() -> f64 {
    0.5
}

impl Default for CovariateOptions {
    fn default() -> Self {
        Self {
            buckets: BucketConfig::default(),
            fields: default_fields(),
            include_covid_index: false,
            covid_window: default_covid_window(),
            covid_threshold: default_covid_threshold(),
        }
    }
}

/// Own characteristics `X`, peer averages `GX`, and `Z = [X GX]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl Covariates {
    /// Builds `GX` and `Z` from an own-characteristics block.
    pub fn from_own(names: Vec<String>, x: DMatrix<f64>, g: &InteractionNetwork) -> Result<Self> {
        if x.nrows() != g.n() {
            return Err(Error::invalid(format!(
                "X has {} rows but the network has {} agents",
                x.nrows(),
                g.n()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::invalid(format!(
                "{} names for {} covariate columns",
                names.len(),
                x.ncols()
            )));
        }
        let gx = g.mul_dense(&x);
        let mut z = DMatrix::zeros(x.nrows(), 2 * x.ncols());
        z.columns_mut(0, x.ncols()).copy_from(&x);
        z.columns_mut(x.ncols(), x.ncols()).copy_from(&gx);
        Ok(Self { names, x, gx, z })
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Column names of `Z`; contextual columns carry a ` (Coauthors)` suffix.
    pub fn z_names(&self) -> Vec<String> {
        self.names
            .iter()
            .cloned()
            .chain(self.names.iter().map(|n| format!("{n} (Coauthors)")))
            .collect()
    }
}

/// Per-scholar numeric features for a period, before discretization.
#[derive(Clone, Debug, PartialEq)]
pub struct ScholarFeatures {
    pub avg_recent_pubs: f64,
    pub total_pubs_before: f64,
    pub citations: f64,
    pub experience: f64,
}

pub fn scholar_features(
    profile: &ScholarProfile,
    records: &[PublicationRecord],
    period: &PeriodSpec,
) -> ScholarFeatures {
    let recent = scholar_papers(records, &profile.scholar_id, period.lookback_range()).len();
    let before = scholar_papers(
        records,
        &profile.scholar_id,
        i32::MIN..=period.start_year - 1,
    )
    .len();
    ScholarFeatures {
        avg_recent_pubs: recent as f64 / f64::from(period.lookback_years),
        total_pubs_before: before as f64,
        citations: profile.citations_through(period.start_year) as f64,
        experience: profile.experience_at(period.start_year),
    }
}

/// Orders `profiles` by roster index, rejecting scholars without a profile.
pub(crate) fn profiles_by_roster<'a>(
    profiles: &'a [ScholarProfile],
    roster: &Roster,
) -> Result<Vec<&'a ScholarProfile>> {
    let mut slots: Vec<Option<&ScholarProfile>> = vec![None; roster.len()];
    for p in profiles {
        if let Some(i) = roster.index_of(&p.scholar_id) {
            slots[i] = Some(p);
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::MissingProfile(roster.ids()[i].clone())))
        .collect()
}

/// Discretized characteristics for every roster scholar plus their peer averages.
///
/// Column order: productivity dummies, citation dummies, experience dummies, the
/// optional Covid index, African American, female, then one dummy per listed field.
/// Reference categories are omitted; the intercept is added at estimation time.
pub fn build_covariates(
    profiles: &[ScholarProfile],
    roster: &Roster,
    records: &[PublicationRecord],
    period: &PeriodSpec,
    g: &InteractionNetwork,
    options: &CovariateOptions,
) -> Result<Covariates> {
    options.buckets.validate()?;
    period.validate()?;
    let ordered = profiles_by_roster(profiles, roster)?;
    let b = &options.buckets;

    let mut names: Vec<String> = Vec::new();
    names.extend(b.productivity.labels.iter().cloned());
    names.extend(b.citations.labels.iter().cloned());
    names.extend(b.experience.labels.iter().cloned());
    if options.include_covid_index {
        names.push("Covid Index".into());
    }
    names.push("African American".into());
    names.push("Female".into());
    names.extend(options.fields.iter().map(|f| format!("Field: {f}")));

    let n = roster.len();
    let mut x = DMatrix::zeros(n, names.len());
    for (i, p) in ordered.iter().enumerate() {
        let f = scholar_features(p, records, period);
        let mut col = 0;
        for (spec, value) in [
            (&b.productivity, f.avg_recent_pubs),
            (&b.citations, f.citations),
            (&b.experience, f.experience),
        ] {
            if let Some(k) = spec.bucket(value) {
                x[(i, col + k)] = 1.0;
            }
            col += spec.labels.len();
        }
        if options.include_covid_index {
            x[(i, col)] = covid_index(
                records,
                &p.scholar_id,
                options.covid_window,
                options.covid_threshold,
            );
            col += 1;
        }
        x[(i, col)] = f64::from(u8::from(p.african_american));
        x[(i, col + 1)] = f64::from(u8::from(p.female));
        col += 2;
        for (k, field) in options.fields.iter().enumerate() {
            if p.fields.contains(field) {
                x[(i, col + k)] = 1.0;
            }
        }
    }
    Covariates::from_own(names, x, g)
}
