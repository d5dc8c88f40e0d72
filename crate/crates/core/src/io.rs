//! Text formats for networks, matrices and raw records.
//!
//! * Networks: coordinate list, one `i j weight` line per non-zero entry, 0-based, preceded by
//!   a `# n <agents>` header so trailing isolated agents survive a round trip.
//! * Matrices: CSV with a header row of column names.
//! * Roster: CSV `index,scholar_id`. Outcomes: CSV `scholar_id,y` in roster order.
//! * Publications and scholars: CSV or JSON (by file extension). In CSV, author ids and fields
//!   are `;`-separated and citations are `year:count` pairs separated by `;`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netbuild::{
    InteractionNetwork, PublicationRecord, RankingBucket, Roster, ScholarProfile,
};

fn context(path: &Path) -> String {
    path.display().to_string()
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn write_network(path: &Path, g: &InteractionNetwork) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# n {}", g.n())?;
    for i in 0..g.n() {
        for &(j, w) in g.row(i) {
            writeln!(out, "{i} {j} {w}")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a coordinate-list network; rows must already be normalized.
pub fn read_network(path: &Path) -> Result<InteractionNetwork> {
    let text = fs::read_to_string(path)?;
    parse_network(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(context(path), message),
        other => other,
    })
}

pub fn parse_network(text: &str) -> Result<InteractionNetwork> {
    let mut n: Option<usize> = None;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.split_whitespace();
            if parts.next() == Some("n") {
                let v = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| {
                    Error::parse("network", format!("line {}: bad `# n` header", lineno + 1))
                })?;
                n = Some(v);
            }
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::parse(
                "network",
                format!("line {}: expected `i j weight`", lineno + 1),
            ));
        }
        let bad = |what: &str| Error::parse("network", format!("line {}: bad {what}", lineno + 1));
        let i: usize = parts[0].parse().map_err(|_| bad("row index"))?;
        let j: usize = parts[1].parse().map_err(|_| bad("column index"))?;
        let w: f64 = parts[2].parse().map_err(|_| bad("weight"))?;
        entries.push((i, j, w));
    }
    let max_index = entries
        .iter()
        .map(|&(i, j, _)| i.max(j) + 1)
        .max()
        .unwrap_or(0);
    let n = n.unwrap_or(max_index);
    if max_index > n {
        return Err(Error::parse(
            "network",
            format!("index {} out of range for n = {n}", max_index - 1),
        ));
    }
    let mut rows = vec![Vec::new(); n];
    for (i, j, w) in entries {
        rows[i].push((j, w));
    }
    InteractionNetwork::from_rows(rows)
}

pub fn write_matrix_csv(path: &Path, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    if names.len() != m.ncols() {
        return Err(Error::invalid("matrix header does not match its width"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(context(path), e))?;
    w.write_record(names)
        .map_err(|e| Error::parse(context(path), e))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| Error::parse(context(path), e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let ctx = context(path);
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
    let names: Vec<String> = r
        .headers()
        .map_err(|e| Error::parse(&ctx, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(&ctx, e))?;
        if rec.len() != names.len() {
            return Err(Error::parse(
                &ctx,
                format!(
                    "row {} has {} fields, header has {}",
                    k + 1,
                    rec.len(),
                    names.len()
                ),
            ));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(
                    &ctx,
                    format!("row {}, column `{}`: not a number", k + 1, names[c]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    &ctx,
                    format!("row {}, column `{}`: non-finite value", k + 1, names[c]),
                ));
            }
            data.push(v);
        }
        rows += 1;
    }
    Ok((
        names.clone(),
        DMatrix::from_row_slice(rows, names.len(), &data),
    ))
}

pub fn write_roster(path: &Path, roster: &Roster) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(context(path), e))?;
    w.write_record(["index", "scholar_id"])
        .map_err(|e| Error::parse(context(path), e))?;
    for (i, id) in roster.ids().iter().enumerate() {
        w.write_record([i.to_string(), id.clone()])
            .map_err(|e| Error::parse(context(path), e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_roster(path: &Path) -> Result<Roster> {
    let ctx = context(path);
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
    let mut ids = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(&ctx, e))?;
        let idx: usize = rec
            .get(0)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::parse(&ctx, format!("row {}: bad index", k + 1)))?;
        if idx != k {
            return Err(Error::parse(
                &ctx,
                format!("row {}: indices must run 0, 1, … in order", k + 1),
            ));
        }
        ids.push(rec.get(1).unwrap_or_default().trim().to_string());
    }
    Roster::new(ids)
}

pub fn write_outcomes(path: &Path, ids: &[String], y: &[u32]) -> Result<()> {
    if ids.len() != y.len() {
        return Err(Error::invalid("outcome ids and values differ in length"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(context(path), e))?;
    w.write_record(["scholar_id", "y"])
        .map_err(|e| Error::parse(context(path), e))?;
    for (id, v) in ids.iter().zip(y) {
        w.write_record([id.clone(), v.to_string()])
            .map_err(|e| Error::parse(context(path), e))?;
    }
    w.flush()?;
    Ok(())
}

/// Outcomes in file order, with their scholar ids.
pub fn read_outcomes(path: &Path) -> Result<(Vec<String>, Vec<u32>)> {
    let ctx = context(path);
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
    let (mut ids, mut y) = (Vec::new(), Vec::new());
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(&ctx, e))?;
        if rec.len() != 2 {
            return Err(Error::parse(
                &ctx,
                format!("row {}: expected `scholar_id,y`", k + 1),
            ));
        }
        ids.push(rec[0].trim().to_string());
        y.push(rec[1].trim().parse().map_err(|_| {
            Error::parse(
                &ctx,
                format!("row {}: outcome must be a non-negative integer", k + 1),
            )
        })?);
    }
    Ok((ids, y))
}

#[derive(Debug, Serialize, Deserialize)]
struct PublicationRow {
    paper_id: String,
    year: i32,
    author_ids: String,
    #[serde(default)]
    covid_topic_prob: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScholarRow {
    scholar_id: String,
    female: String,
    african_american: String,
    first_pub_year: i32,
    citations_by_year: String,
    fields: String,
    department_id: String,
    ranking_bucket: String,
}

fn split_list(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

fn validate_publication(p: &PublicationRecord, ctx: &str) -> Result<()> {
    if p.author_ids.is_empty() {
        return Err(Error::parse(
            ctx,
            format!("paper `{}` has no authors", p.paper_id),
        ));
    }
    if let Some(q) = p.covid_topic_prob {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::parse(
                ctx,
                format!("paper `{}`: covid_topic_prob outside [0, 1]", p.paper_id),
            ));
        }
    }
    Ok(())
}

pub fn read_publications(path: &Path) -> Result<Vec<PublicationRecord>> {
    let ctx = context(path);
    let out: Vec<PublicationRecord> = if is_json(path) {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::parse(&ctx, e))?
    } else {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
        let mut out = Vec::new();
        for row in r.deserialize::<PublicationRow>() {
            let row = row.map_err(|e| Error::parse(&ctx, e))?;
            out.push(PublicationRecord {
                paper_id: row.paper_id,
                year: row.year,
                author_ids: split_list(&row.author_ids).collect(),
                covid_topic_prob: row.covid_topic_prob,
            });
        }
        out
    };
    for p in &out {
        validate_publication(p, &ctx)?;
    }
    Ok(out)
}

pub fn write_publications(path: &Path, records: &[PublicationRecord]) -> Result<()> {
    let ctx = context(path);
    if is_json(path) {
        fs::write(
            path,
            serde_json::to_string_pretty(records).map_err(|e| Error::parse(&ctx, e))?,
        )?;
        return Ok(());
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
    for p in records {
        w.serialize(PublicationRow {
            paper_id: p.paper_id.clone(),
            year: p.year,
            author_ids: p.author_ids.join(";"),
            covid_topic_prob: p.covid_topic_prob,
        })
        .map_err(|e| Error::parse(&ctx, e))?;
    }
    w.flush()?;
    Ok(())
}

fn scholar_from_row(row: ScholarRow, ctx: &str) -> Result<ScholarProfile> {
    let id = row.scholar_id.trim().to_string();
    let flag = |v: &str, name: &str| {
        parse_bool(v).ok_or_else(|| {
            Error::parse(
                ctx,
                format!("scholar `{id}`: `{name}` must be true/false or 1/0"),
            )
        })
    };
    let mut citations = BTreeMap::new();
    for pair in split_list(&row.citations_by_year) {
        let (y, c) = pair.split_once(':').ok_or_else(|| {
            Error::parse(
                ctx,
                format!("scholar `{id}`: citation entry `{pair}` is not `year:count`"),
            )
        })?;
        let y: i32 = y
            .trim()
            .parse()
            .map_err(|_| Error::parse(ctx, format!("scholar `{id}`: bad citation year `{y}`")))?;
        let c: u64 = c
            .trim()
            .parse()
            .map_err(|_| Error::parse(ctx, format!("scholar `{id}`: bad citation count `{c}`")))?;
        citations.insert(y, c);
    }
    Ok(ScholarProfile {
        female: flag(&row.female, "female")?,
        african_american: flag(&row.african_american, "african_american")?,
        first_pub_year: row.first_pub_year,
        citations_by_year: citations,
        fields: split_list(&row.fields).collect::<BTreeSet<_>>(),
        department_id: row.department_id.trim().to_string(),
        ranking_bucket: row.ranking_bucket.parse()?,
        scholar_id: id,
    })
}

pub fn read_scholars(path: &Path) -> Result<Vec<ScholarProfile>> {
    let ctx = context(path);
    if is_json(path) {
        return serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::parse(&ctx, e));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<ScholarRow>() {
        out.push(scholar_from_row(
            row.map_err(|e| Error::parse(&ctx, e))?,
            &ctx,
        )?);
    }
    Ok(out)
}

fn bucket_label(b: RankingBucket) -> String {
    serde_json::to_value(b)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn write_scholars(path: &Path, profiles: &[ScholarProfile]) -> Result<()> {
    let ctx = context(path);
    if is_json(path) {
        fs::write(
            path,
            serde_json::to_string_pretty(profiles).map_err(|e| Error::parse(&ctx, e))?,
        )?;
        return Ok(());
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
    for p in profiles {
        w.serialize(ScholarRow {
            scholar_id: p.scholar_id.clone(),
            female: p.female.to_string(),
            african_american: p.african_american.to_string(),
            first_pub_year: p.first_pub_year,
            citations_by_year: p
                .citations_by_year
                .iter()
                .map(|(y, c)| format!("{y}:{c}"))
                .collect::<Vec<_>>()
                .join(";"),
            fields: p.fields.iter().cloned().collect::<Vec<_>>().join(";"),
            department_id: p.department_id.clone(),
            ranking_bucket: bucket_label(p.ranking_bucket),
        })
        .map_err(|e| Error::parse(&ctx, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(context(path), e))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_round_trip_keeps_isolates() {
        let g = InteractionNetwork::from_rows(vec![
            vec![(1, 0.5), (2, 0.5)],
            vec![(0, 1.0)],
            vec![(0, 1.0)],
            vec![],
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.txt");
        write_network(&p, &g).unwrap();
        let back = read_network(&p).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.n(), 4);
    }

    #[test]
    fn malformed_network_line() {
        assert!(matches!(parse_network("0 1\n"), Err(Error::Parse { .. })));
        assert!(parse_network("# n 2\n0 5 1.0\n").is_err());
    }

    #[test]
    fn scholar_csv_round_trip() {
        let p = ScholarProfile {
            scholar_id: "s1".into(),
            female: true,
            african_american: false,
            first_pub_year: 2001,
            citations_by_year: [(2017, 50), (2018, 120)].into_iter().collect(),
            fields: ["Labor".to_string(), "Theory".to_string()]
                .into_iter()
                .collect(),
            department_id: "d1".into(),
            ranking_bucket: RankingBucket::R11To20,
        };
        let dir = tempfile::tempdir().unwrap();
        for name in ["s.csv", "s.json"] {
            let path = dir.path().join(name);
            write_scholars(&path, std::slice::from_ref(&p)).unwrap();
            assert_eq!(read_scholars(&path).unwrap(), vec![p.clone()]);
        }
    }

    #[test]
    fn publication_csv_round_trip() {
        let recs = vec![
            PublicationRecord {
                paper_id: "p1".into(),
                year: 2019,
                author_ids: vec!["a".into(), "b".into()],
                covid_topic_prob: Some(0.7),
            },
            PublicationRecord {
                paper_id: "p2".into(),
                year: 2020,
                author_ids: vec!["b".into()],
                covid_topic_prob: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_publications(&path, &recs).unwrap();
        assert_eq!(read_publications(&path).unwrap(), recs);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1 + 0.2, -3.5e-12, 4.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_matrix_csv(&path, &["a".into(), "b".into()], &m).unwrap();
        let (names, back) = read_matrix_csv(&path).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(back, m);
    }
}
