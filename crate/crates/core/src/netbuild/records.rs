use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::network::Adjacency;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublicationRecord {
    pub paper_id: String,
    pub year: i32,
    pub author_ids: Vec<String>,
    /// Probability that the paper belongs to the Covid topic, when a topic model labelled it.
    #[serde(default)]
    pub covid_topic_prob: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RankingBucket {
    #[serde(rename = "Top10")]
    Top10,
    #[serde(rename = "11-20")]
    R11To20,
    #[serde(rename = "21-30")]
    R21To30,
    #[serde(rename = "31-40")]
    R31To40,
    #[serde(rename = "41-50")]
    R41To50,
}

impl std::str::FromStr for RankingBucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Top10" | "Top 10" | "1-10" => Ok(Self::Top10),
            "11-20" => Ok(Self::R11To20),
            "21-30" => Ok(Self::R21To30),
            "31-40" => Ok(Self::R31To40),
            "41-50" => Ok(Self::R41To50),
            other => Err(Error::invalid(format!("unknown ranking bucket `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScholarProfile {
    pub scholar_id: String,
    pub female: bool,
    pub african_american: bool,
    pub first_pub_year: i32,
    /// Cumulative citation count observed at the end of each year.
    pub citations_by_year: BTreeMap<i32, u64>,
    pub fields: BTreeSet<String>,
    pub department_id: String,
    pub ranking_bucket: RankingBucket,
}

impl ScholarProfile {
    pub fn validate(&self, current_year: i32) -> Result<()> {
        if self.first_pub_year > current_year {
            return Err(Error::invalid(format!(
                "scholar {}: first publication year {} is after {current_year}",
                self.scholar_id, self.first_pub_year
            )));
        }
        let counts: Vec<u64> = self.citations_by_year.values().copied().collect();
        if counts.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid(format!(
                "scholar {}: cumulative citations decrease over time",
                self.scholar_id
            )));
        }
        Ok(())
    }

    /// Years between the first publication and `year`.
    pub fn experience_at(&self, year: i32) -> f64 {
        f64::from(year - self.first_pub_year)
    }

    /// Cumulative citations up to and including `year` (latest observation not after it).
    pub fn citations_through(&self, year: i32) -> u64 {
        self.citations_by_year
            .range(..=year)
            .next_back()
            .map(|(_, &c)| c)
            .unwrap_or(0)
    }
}

/// Inclusive range of years plus the look-back window for recent-productivity features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSpec {
    pub start_year: i32,
    pub end_year: i32,
    #[serde(default = "default_lookback")]
    pub lookback_years: u32,
}

fn default_lookback() -> u32 {
    3
}

impl PeriodSpec {
    pub fn new(start_year: i32, end_year: i32) -> Result<Self> {
        let p = Self {
            start_year,
            end_year,
            lookback_years: default_lookback(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_lookback(mut self, years: u32) -> Self {
        self.lookback_years = years;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_year > self.end_year {
            return Err(Error::invalid(format!(
                "period start {} is after end {}",
                self.start_year, self.end_year
            )));
        }
        if self.lookback_years == 0 {
            return Err(Error::invalid("lookback_years must be at least 1"));
        }
        Ok(())
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start_year..=self.end_year).contains(&year)
    }

    /// Years `[start − lookback, start − 1]`.
    pub fn lookback_range(&self) -> std::ops::RangeInclusive<i32> {
        (self.start_year - self.lookback_years as i32)..=(self.start_year - 1)
    }

    pub fn overlaps(&self, other: &PeriodSpec) -> bool {
        self.start_year <= other.end_year && other.start_year <= self.end_year
    }
}

impl std::str::FromStr for PeriodSpec {
    type Err = Error;

    /// Parses `start:end`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("period `{s}` must look like START:END")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<i32>()
                .map_err(|e| Error::invalid(format!("period `{s}`: {e}")))
        };
        PeriodSpec::new(parse(a)?, parse(b)?)
    }
}

/// Ordered list of scholar ids defining agent indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Roster {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Roster {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate scholar id `{id}` in roster"
                )));
            }
        }
        Ok(Self { ids, index })
    }

    pub fn from_profiles(profiles: &[ScholarProfile]) -> Result<Self> {
        Self::new(profiles.iter().map(|p| p.scholar_id.clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

/// Drops authors outside the roster and records left without any roster author.
///
/// Returns the filtered records and the number of author slots removed.
pub fn filter_to_roster(
    records: &[PublicationRecord],
    roster: &Roster,
) -> (Vec<PublicationRecord>, usize) {
    let mut dropped = 0;
    let out = records
        .iter()
        .filter_map(|r| {
            let authors: Vec<String> = r
                .author_ids
                .iter()
                .filter(|a| roster.index_of(a).is_some())
                .cloned()
                .collect();
            dropped += r.author_ids.len() - authors.len();
            (!authors.is_empty()).then(|| PublicationRecord {
                author_ids: authors,
                ..r.clone()
            })
        })
        .collect();
    (out, dropped)
}

fn validate_records(records: &[PublicationRecord], roster: &Roster) -> Result<()> {
    let mut unknown = BTreeSet::new();
    for r in records {
        if r.author_ids.is_empty() {
            return Err(Error::invalid(format!(
                "paper `{}` has no authors",
                r.paper_id
            )));
        }
        if let Some(p) = r.covid_topic_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "paper `{}`: covid topic probability {p} outside [0, 1]",
                    r.paper_id
                )));
            }
        }
        for a in &r.author_ids {
            if roster.index_of(a).is_none() {
                unknown.insert(a.clone());
            }
        }
    }
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::UnknownScholar(unknown.into_iter().collect()))
    }
}

/// Distinct roster authors of each distinct paper published inside `period`.
fn papers_in_period(
    records: &[PublicationRecord],
    roster: &Roster,
    period: &PeriodSpec,
) -> BTreeMap<String, BTreeSet<usize>> {
    let mut papers: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for r in records.iter().filter(|r| period.contains(r.year)) {
        let entry = papers.entry(r.paper_id.clone()).or_default();
        entry.extend(r.author_ids.iter().filter_map(|a| roster.index_of(a)));
    }
    papers
}

/// Binary symmetric co-authorship adjacency: `w_ij = 1` iff `i` and `j` co-appear on at least
/// `min_joint_papers` distinct papers dated inside `period`.
pub fn build_adjacency(
    records: &[PublicationRecord],
    roster: &Roster,
    period: &PeriodSpec,
    min_joint_papers: u32,
) -> Result<Adjacency> {
    if min_joint_papers == 0 {
        return Err(Error::invalid("min_joint_papers must be at least 1"));
    }
    period.validate()?;
    validate_records(records, roster)?;

    let mut joint: HashMap<(usize, usize), u32> = HashMap::new();
    for authors in papers_in_period(records, roster, period).values() {
        let a: Vec<usize> = authors.iter().copied().collect();
        for (k, &i) in a.iter().enumerate() {
            for &j in &a[k + 1..] {
                *joint.entry((i, j)).or_insert(0) += 1;
            }
        }
    }
    let pairs = joint
        .into_iter()
        .filter(|&(_, c)| c >= min_joint_papers)
        .map(|(pair, _)| pair);
    Adjacency::from_undirected_pairs(roster.len(), pairs)
}

/// Number of distinct papers per roster scholar dated inside `period`.
pub fn publication_counts(
    records: &[PublicationRecord],
    roster: &Roster,
    period: &PeriodSpec,
) -> Result<Vec<u32>> {
    validate_records(records, roster)?;
    let mut counts = vec![0u32; roster.len()];
    for authors in papers_in_period(records, roster, period).values() {
        for &i in authors {
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Distinct papers by `scholar_id` with year in `years`.
pub(crate) fn scholar_papers<'a>(
    records: &'a [PublicationRecord],
    scholar_id: &str,
    years: std::ops::RangeInclusive<i32>,
) -> Vec<&'a PublicationRecord> {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| years.contains(&r.year) && r.author_ids.iter().any(|a| a == scholar_id))
        .filter(|r| seen.insert(r.paper_id.as_str()))
        .collect()
}

/// Share of a scholar's papers in `window` whose Covid-topic probability exceeds `threshold`.
///
/// Zero when the scholar has no papers in the window. Papers without a topic
/// probability count in the denominator only.
pub fn covid_index(
    records: &[PublicationRecord],
    scholar_id: &str,
    window: (i32, i32),
    threshold: f64,
) -> f64 {
    let papers = scholar_papers(records, scholar_id, window.0..=window.1);
    if papers.is_empty() {
        return 0.0;
    }
    let covid = papers
        .iter()
        .filter(|r| r.covid_topic_prob.is_some_and(|p| p > threshold))
        .count();
    covid as f64 / papers.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, year: i32, authors: &[&str]) -> PublicationRecord {
        PublicationRecord {
            paper_id: id.into(),
            year,
            author_ids: authors.iter().map(|s| s.to_string()).collect(),
            covid_topic_prob: None,
        }
    }

    fn roster(ids: &[&str]) -> Roster {
        Roster::new(ids.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn single_joint_paper_is_not_a_link() {
        let r = roster(&["i", "j", "l"]);
        let recs = vec![
            rec("P1", 2018, &["i", "j"]),
            rec("P2", 2019, &["i", "j"]),
            rec("P3", 2019, &["i", "l"]),
        ];
        let w = build_adjacency(&recs, &r, &PeriodSpec::new(2018, 2019).unwrap(), 2).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(1, 0), 1.0);
        assert_eq!(w.get(0, 2), 0.0);
    }

    #[test]
    fn empty_records_give_empty_network() {
        let r = roster(&["a", "b"]);
        let w = build_adjacency(&[], &r, &PeriodSpec::new(2018, 2019).unwrap(), 2).unwrap();
        assert_eq!(w.edge_count(), 0);
    }

    #[test]
    fn duplicated_paper_rows_count_once_and_years_outside_are_ignored() {
        let r = roster(&["a", "b"]);
        let recs = vec![
            rec("P1", 2018, &["a", "b"]),
            rec("P1", 2018, &["a", "b"]),
            rec("P2", 2017, &["a", "b"]),
        ];
        let w = build_adjacency(&recs, &r, &PeriodSpec::new(2018, 2019).unwrap(), 2).unwrap();
        assert_eq!(w.edge_count(), 0);
        let w1 = build_adjacency(&recs, &r, &PeriodSpec::new(2017, 2019).unwrap(), 2).unwrap();
        assert_eq!(w1.get(0, 1), 1.0);
    }

    #[test]
    fn unknown_author_is_reported() {
        let r = roster(&["a"]);
        let err = build_adjacency(
            &[rec("P", 2018, &["a", "zed"])],
            &r,
            &PeriodSpec::new(2018, 2019).unwrap(),
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("zed"), "{err}");
        let (kept, dropped) = filter_to_roster(
            &[rec("P", 2018, &["a", "zed"]), rec("Q", 2018, &["zed"])],
            &r,
        );
        assert_eq!(dropped, 2);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].author_ids, vec!["a".to_string()]);
    }

    #[test]
    fn min_joint_papers_zero_rejected() {
        let r = roster(&["a"]);
        assert!(build_adjacency(&[], &r, &PeriodSpec::new(2018, 2019).unwrap(), 0).is_err());
    }

    #[test]
    fn covid_index_counts_strictly_above_threshold() {
        let mut recs = Vec::new();
        for k in 0..10 {
            let mut p = rec(&format!("P{k}"), 2019 + (k % 3) as i32, &["s"]);
            p.covid_topic_prob = Some(if k < 3 {
                0.8
            } else if k == 3 {
                0.5
            } else {
                0.1
            });
            recs.push(p);
        }
        assert!((covid_index(&recs, "s", (2019, 2021), 0.5) - 0.3).abs() < 1e-15);
        assert_eq!(covid_index(&recs, "nobody", (2019, 2021), 0.5), 0.0);
    }

    #[test]
    fn period_parsing() {
        let p: PeriodSpec = "2018:2019".parse().unwrap();
        assert_eq!(
            (p.start_year, p.end_year, p.lookback_years),
            (2018, 2019, 3)
        );
        assert!("2020:2019".parse::<PeriodSpec>().is_err());
        assert!("2020".parse::<PeriodSpec>().is_err());
        assert_eq!(p.lookback_range(), 2015..=2017);
    }

    #[test]
    fn citations_lookup_uses_latest_year_not_after() {
        let p = ScholarProfile {
            scholar_id: "s".into(),
            female: false,
            african_american: false,
            first_pub_year: 2000,
            citations_by_year: [(2015, 10), (2017, 50), (2019, 90)].into_iter().collect(),
            fields: BTreeSet::new(),
            department_id: "d".into(),
            ranking_bucket: RankingBucket::Top10,
        };
        assert_eq!(p.citations_through(2018), 50);
        assert_eq!(p.citations_through(2010), 0);
        assert!(p.validate(2022).is_ok());
        let mut bad = p.clone();
        bad.citations_by_year.insert(2020, 5);
        assert!(bad.validate(2022).is_err());
    }
}
