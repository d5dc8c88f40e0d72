use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::netbuild::{
    profiles_by_roster, scholar_features, Adjacency, PeriodSpec, PublicationRecord, RankingBucket,
    Roster, ScholarProfile,
};

/// Source of pair covariates `ẍ_ij`, computed on demand so the dyad matrix is never stored.
pub trait DyadCovariates: Send + Sync {
    fn names(&self) -> Vec<String>;

    fn dim(&self) -> usize {
        self.names().len()
    }

    /// Writes `ẍ_ij` into `out` (length [`dim`](Self::dim)).
    fn fill(&self, i: usize, j: usize, out: &mut [f64]);
}

/// Ordered pairs `(i, j)`, `i ≠ j`, with their link indicators and covariates.
#[derive(Clone)]
pub struct DyadFrame {
    n: usize,
    covariates: Arc<dyn DyadCovariates>,
    out_links: Vec<Vec<usize>>,
}

impl std::fmt::Debug for DyadFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DyadFrame")
            .field("n", &self.n)
            .field("covariates", &self.covariates.names())
            .field("links", &self.link_count())
            .finish()
    }
}

impl DyadFrame {
    /// Link indicator `w_ij > 0`. An undirected adjacency yields both `(i, j)` and `(j, i)`.
    pub fn new(covariates: Arc<dyn DyadCovariates>, links: &Adjacency) -> Result<Self> {
        let out_links = (0..links.n())
            .map(|i| links.row(i).iter().map(|&(j, _)| j).collect())
            .collect();
        Self::from_out_links(links.n(), covariates, out_links)
    }

    pub fn from_out_links(
        n: usize,
        covariates: Arc<dyn DyadCovariates>,
        mut out_links: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if out_links.len() != n {
            return Err(Error::invalid("one link list per scholar required"));
        }
        for (i, row) in out_links.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if row.iter().any(|&j| j == i || j >= n) {
                return Err(Error::invalid(format!("invalid link in row {i}")));
            }
        }
        let mut buf = vec![0.0; covariates.dim()];
        if n >= 2 {
            covariates.fill(0, 1, &mut buf);
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("dyad covariates must be finite"));
            }
        }
        Ok(Self {
            n,
            covariates,
            out_links,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.covariates.dim()
    }

    pub fn names(&self) -> Vec<String> {
        self.covariates.names()
    }

    pub fn covariates(&self) -> &dyn DyadCovariates {
        self.covariates.as_ref()
    }

    pub fn out_links(&self, i: usize) -> &[usize] {
        &self.out_links[i]
    }

    pub fn link(&self, i: usize, j: usize) -> bool {
        self.out_links[i].binary_search(&j).is_ok()
    }

    pub fn link_count(&self) -> usize {
        self.out_links.iter().map(Vec::len).sum()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for row in &self.out_links {
            for &j in row {
                d[j] += 1;
            }
        }
        d
    }
}

/// Per-scholar attributes behind the pair covariates.
#[derive(Clone, Debug, PartialEq)]
struct ScholarAttrs {
    department: String,
    ranking: RankingBucket,
    experience: f64,
    citations_thousands: f64,
    avg_pubs: f64,
    total_pubs: f64,
    female: bool,
    african_american: bool,
    fields: BTreeSet<String>,
}

/// Homophily covariates between two scholars.
#[derive(Clone, Debug)]
pub struct ScholarDyadCovariates {
    attrs: Vec<ScholarAttrs>,
}

impl DyadCovariates for ScholarDyadCovariates {
    fn names(&self) -> Vec<String> {
        [
            "same_department",
            "same_ranking_bucket",
            "abs_experience_diff",
            "abs_citations_diff_thousands",
            "abs_avg_publications_diff",
            "abs_total_publications_diff",
            "any_female",
            "any_african_american",
            "common_fields",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn fill(&self, i: usize, j: usize, out: &mut [f64]) {
        let (a, b) = (&self.attrs[i], &self.attrs[j]);
        let ind = |c: bool| if c { 1.0 } else { 0.0 };
        out[0] = ind(a.department == b.department);
        out[1] = ind(a.ranking == b.ranking);
        out[2] = (a.experience - b.experience).abs();
        out[3] = (a.citations_thousands - b.citations_thousands).abs();
        out[4] = (a.avg_pubs - b.avg_pubs).abs();
        out[5] = (a.total_pubs - b.total_pubs).abs();
        out[6] = ind(a.female || b.female);
        out[7] = ind(a.african_american || b.african_american);
        out[8] = a.fields.intersection(&b.fields).count() as f64;
    }
}

/// Pair covariates for every roster scholar, measured at the start of `period`.
pub fn dyad_covariates(
    profiles: &[ScholarProfile],
    roster: &Roster,
    records: &[PublicationRecord],
    period: &PeriodSpec,
) -> Result<ScholarDyadCovariates> {
    let ordered = profiles_by_roster(profiles, roster)?;
    let attrs = ordered
        .into_iter()
        .map(|p| {
            let f = scholar_features(p, records, period);
            ScholarAttrs {
                department: p.department_id.clone(),
                ranking: p.ranking_bucket,
                experience: f.experience,
                citations_thousands: f.citations / 1000.0,
                avg_pubs: f.avg_recent_pubs,
                total_pubs: f.total_pubs_before,
                female: p.female,
                african_american: p.african_american,
                fields: p.fields.clone(),
            }
        })
        .collect();
    Ok(ScholarDyadCovariates { attrs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(id: &str, dept: &str, female: bool, fields: &[&str]) -> ScholarProfile {
        ScholarProfile {
            scholar_id: id.into(),
            female,
            african_american: false,
            first_pub_year: 2005,
            citations_by_year: [(2017, 1200)].into_iter().collect(),
            fields: fields.iter().map(|s| s.to_string()).collect(),
            department_id: dept.into(),
            ranking_bucket: RankingBucket::R11To20,
        }
    }

    fn covs(profiles: &[ScholarProfile]) -> (ScholarDyadCovariates, Vec<String>) {
        let roster = Roster::from_profiles(profiles).unwrap();
        let c = dyad_covariates(
            profiles,
            &roster,
            &[],
            &PeriodSpec::new(2018, 2019).unwrap(),
        )
        .unwrap();
        let names = c.names();
        (c, names)
    }

    #[test]
    fn identical_profiles_in_same_department() {
        let (c, names) = covs(&[
            profile("a", "d1", false, &["Labor"]),
            profile("b", "d1", false, &["Labor"]),
        ]);
        let mut x = vec![0.0; c.dim()];
        c.fill(0, 1, &mut x);
        let col = |n: &str| names.iter().position(|m| m == n).unwrap();
        assert_eq!(x[col("same_department")], 1.0);
        for n in [
            "abs_experience_diff",
            "abs_citations_diff_thousands",
            "abs_avg_publications_diff",
            "abs_total_publications_diff",
        ] {
            assert_eq!(x[col(n)], 0.0);
        }
    }

    #[test]
    fn common_fields_and_any_female() {
        let (c, names) = covs(&[
            profile("a", "d1", false, &["Metrics", "Labor"]),
            profile("b", "d2", true, &["Metrics", "Industrial Organization"]),
            profile("c", "d2", false, &[]),
        ]);
        let col = |n: &str| names.iter().position(|m| m == n).unwrap();
        let mut x = vec![0.0; c.dim()];
        c.fill(0, 1, &mut x);
        assert_eq!(x[col("common_fields")], 1.0);
        assert_eq!(x[col("any_female")], 1.0);
        assert_eq!(x[col("same_department")], 0.0);
        c.fill(0, 2, &mut x);
        assert_eq!(x[col("any_female")], 0.0);
        c.fill(2, 1, &mut x);
        assert_eq!(x[col("any_female")], 1.0);
    }

    #[test]
    fn missing_profile_rejected() {
        let roster = Roster::new(vec!["a".into(), "z".into()]).unwrap();
        let err = dyad_covariates(
            &[profile("a", "d", false, &[])],
            &roster,
            &[],
            &PeriodSpec::new(2018, 2019).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingProfile(_)));
    }
}
