//! Country-level complexity: pageview shares per country weight the ECI of
//! each language edition.

mod iso;

pub use iso::{is_iso_alpha2, ISO_ALPHA2};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::complexity::ComplexityScores;
use crate::error::{Error, Result, RowError};
use crate::output::fmt_f64;

/// Countries below this matched view share are flagged.
pub const LOW_COVERAGE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRow {
    pub country: String,
    pub language: String,
    pub views: u64,
}

/// Row-stochastic country x language weights from one snapshot year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewershipWeights {
    pub snapshot_year: i32,
    weights: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightsReport {
    /// Countries whose views sum to zero.
    pub zero_total: Vec<String>,
    /// Codes not in the bundled ISO list.
    pub unknown_countries: Vec<String>,
}

impl ViewershipWeights {
    pub fn countries(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    pub fn languages(&self) -> BTreeSet<&str> {
        self.weights
            .values()
            .flat_map(|m| m.keys().map(String::as_str))
            .collect()
    }

    pub fn row(&self, country: &str) -> Option<&BTreeMap<String, f64>> {
        self.weights.get(country)
    }

    pub fn get(&self, country: &str, language: &str) -> f64 {
        self.weights
            .get(country)
            .and_then(|r| r.get(language))
            .copied()
            .unwrap_or(0.0)
    }
}

/// `w[c][l] = views[c][l] / sum_l' views[c][l']`.
pub fn build_weights(rows: &[ViewRow], snapshot_year: i32) -> Result<(ViewershipWeights, WeightsReport)> {
    let mut views: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut unknown = BTreeSet::new();
    for r in rows {
        let country = r.country.to_ascii_uppercase();
        if !is_iso_alpha2(&country) {
            unknown.insert(r.country.clone());
            continue;
        }
        let row = views.entry(country.clone()).or_default();
        if row.insert(r.language.clone(), r.views).is_some() {
            return Err(Error::DuplicateKey(format!("({country},{})", r.language)));
        }
    }
    let mut report = WeightsReport {
        unknown_countries: unknown.into_iter().collect(),
        ..Default::default()
    };
    let mut weights = BTreeMap::new();
    for (country, row) in views {
        let total: u128 = row.values().map(|&v| v as u128).sum();
        if total == 0 {
            report.zero_total.push(country);
            continue;
        }
        let w: BTreeMap<String, f64> = row
            .into_iter()
            .filter(|&(_, v)| v > 0)
            .map(|(l, v)| (l, v as f64 / total as f64))
            .collect();
        weights.insert(country, w);
    }
    Ok((
        ViewershipWeights {
            snapshot_year,
            weights,
        },
        report,
    ))
}

pub fn read_views<R: Read>(reader: R) -> Result<Vec<ViewRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["country", "language", "views"]) {
        return Err(Error::Rows(vec![RowError {
            line: 1,
            message: "expected header `country,language,views`".into(),
        }]));
    }
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        match (rec.len(), rec.get(2).and_then(|v| v.parse::<u64>().ok())) {
            (3, Some(views)) if !rec[0].is_empty() && !rec[1].is_empty() => out.push(ViewRow {
                country: rec[0].to_string(),
                language: rec[1].to_string(),
                views,
            }),
            _ => errors.push(RowError {
                line,
                message: "expected country,language,views with integer views".into(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Rows(errors))
    }
}

pub fn views_csv(rows: &[ViewRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["country", "language", "views"])?;
    for r in rows {
        w.write_record([r.country.as_str(), r.language.as_str(), &r.views.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountryComplexity {
    pub value: f64,
    /// Share of the country's view weight that falls on scored languages.
    pub coverage: f64,
}

impl CountryComplexity {
    pub fn low_coverage(&self) -> bool {
        self.coverage < LOW_COVERAGE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryScores {
    pub snapshot_year: i32,
    pub values: BTreeMap<String, CountryComplexity>,
    /// Countries with no scored language.
    pub omitted: Vec<String>,
}

pub fn weighted_eci(weights: &ViewershipWeights, scores: &ComplexityScores) -> Result<CountryScores> {
    weighted_eci_from_map(weights, &scores.eci_map())
}

/// Restricts each country's weights to scored languages, renormalizes, and
/// averages the ECI.
pub fn weighted_eci_from_map(
    weights: &ViewershipWeights,
    eci: &BTreeMap<String, f64>,
) -> Result<CountryScores> {
    if !weights.languages().iter().any(|l| eci.contains_key(*l)) {
        return Err(Error::Precondition(
            "no language is shared between the weights and the scores".into(),
        ));
    }
    let mut values = BTreeMap::new();
    let mut omitted = Vec::new();
    for (country, row) in &weights.weights {
        let (mut mass, mut acc) = (0.0, 0.0);
        for (lang, &w) in row {
            if let Some(&e) = eci.get(lang) {
                mass += w;
                acc += w * e;
            }
        }
        if mass > 0.0 {
            values.insert(
                country.clone(),
                CountryComplexity {
                    value: acc / mass,
                    coverage: mass.min(1.0),
                },
            );
        } else {
            omitted.push(country.clone());
        }
    }
    Ok(CountryScores {
        snapshot_year: weights.snapshot_year,
        values,
        omitted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub country: String,
    pub value: f64,
    pub coverage: f64,
}

/// Descending by value; equal values fall back to ISO-code order.
pub fn rank_countries(values: &BTreeMap<String, CountryComplexity>, top_n: usize) -> Result<Vec<RankRow>> {
    if values.is_empty() {
        return Err(Error::Invalid("no countries to rank".into()));
    }
    let mut rows: Vec<(&String, &CountryComplexity)> = values.iter().collect();
    // BTreeMap order is ISO order, so the stable sort keeps the tie rule.
    rows.sort_by(|a, b| b.1.value.total_cmp(&a.1.value));
    Ok(rows
        .into_iter()
        .take(top_n)
        .enumerate()
        .map(|(i, (c, v))| RankRow {
            rank: i + 1,
            country: c.clone(),
            value: v.value,
            coverage: v.coverage,
        })
        .collect())
}

pub fn ranking_csv(rows: &[RankRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "country_iso2", "value", "coverage"])?;
    for r in rows {
        w.write_record([
            &r.rank.to_string(),
            &r.country,
            &fmt_f64(r.value),
            &fmt_f64(r.coverage),
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

/// Long table `slice,country,rank` for bump charts across slices.
pub fn rank_transition_csv<'a>(slices: impl IntoIterator<Item = (&'a str, &'a [RankRow])>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["slice", "country", "rank"])?;
    for (slice, rows) in slices {
        for r in rows {
            w.write_record([slice, r.country.as_str(), &r.rank.to_string()])?;
        }
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

/// `country_iso2,value,coverage,flag` with flag `ok` or `low_coverage`.
pub fn map_csv(values: &BTreeMap<String, CountryComplexity>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["country_iso2", "value", "coverage", "flag"])?;
    for (c, v) in values {
        w.write_record([
            c.as_str(),
            &fmt_f64(v.value),
            &fmt_f64(v.coverage),
            if v.low_coverage() { "low_coverage" } else { "ok" },
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

pub fn read_map_csv<R: Read>(reader: R) -> Result<BTreeMap<String, CountryComplexity>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["country_iso2", "value", "coverage", "flag"]) {
        return Err(Error::Rows(vec![RowError {
            line: 1,
            message: "expected header `country_iso2,value,coverage,flag`".into(),
        }]));
    }
    let mut out = BTreeMap::new();
    let mut errors = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parsed = (|| {
            let value = rec.get(1)?.parse::<f64>().ok()?;
            let coverage = rec.get(2)?.parse::<f64>().ok()?;
            Some(CountryComplexity { value, coverage })
        })();
        match parsed {
            Some(v) if !rec[0].is_empty() => {
                out.insert(rec[0].to_string(), v);
            }
            _ => errors.push(RowError {
                line,
                message: "bad map row".into(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Rows(errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(c: &str, l: &str, v: u64) -> ViewRow {
        ViewRow {
            country: c.into(),
            language: l.into(),
            views: v,
        }
    }

    fn eci(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|&(l, v)| (l.to_string(), v)).collect()
    }

    #[test]
    fn single_language_weight_is_one() {
        let (w, _) = build_weights(&[row("DE", "de", 100)], 2016).unwrap();
        assert_eq!(w.get("DE", "de"), 1.0);
    }

    #[test]
    fn sixty_forty_split() {
        let (w, _) = build_weights(&[row("CH", "de", 60), row("CH", "fr", 40)], 2016).unwrap();
        assert_eq!(w.get("CH", "de"), 0.6);
        assert_eq!(w.get("CH", "fr"), 0.4);
    }

    #[test]
    fn duplicates_and_reports() {
        assert!(matches!(
            build_weights(&[row("DE", "de", 1), row("DE", "de", 2)], 2016),
            Err(Error::DuplicateKey(_))
        ));
        let (w, rep) = build_weights(&[row("DE", "de", 0), row("--", "en", 5), row("fr", "fr", 3)], 2016)
            .unwrap();
        assert_eq!(rep.zero_total, ["DE"]);
        assert_eq!(rep.unknown_countries, ["--"]);
        assert_eq!(w.countries().collect::<Vec<_>>(), ["FR"]);
    }

    #[test]
    fn weighted_values() {
        let (w, _) = build_weights(
            &[row("AT", "de", 1), row("CH", "de", 50), row("CH", "fr", 50), row("BE", "nl", 60), row("BE", "fr", 40)],
            2016,
        )
        .unwrap();
        let s = weighted_eci_from_map(&w, &eci(&[("de", 1.0), ("fr", -1.0), ("xx", 3.0)])).unwrap();
        assert_eq!(s.values["AT"].value, 1.0);
        assert_eq!(s.values["CH"].value, 0.0);
        // Only fr is scored in BE: coverage 0.4 and the value is fr's ECI.
        assert_eq!(s.values["BE"].value, -1.0);
        assert_eq!(s.values["BE"].coverage, 0.4);
        let s = weighted_eci_from_map(&w, &eci(&[("nl", 2.0)])).unwrap();
        assert_eq!(s.omitted, ["AT", "CH"]);
        assert!(weighted_eci_from_map(&w, &eci(&[("zz", 2.0)])).is_err());
    }

    #[test]
    fn ranking_order_and_ties() {
        let mut v = BTreeMap::new();
        v.insert("AA".to_string(), CountryComplexity { value: 0.5, coverage: 1.0 });
        v.insert("BB".to_string(), CountryComplexity { value: 0.7, coverage: 1.0 });
        let r = rank_countries(&v, 10).unwrap();
        assert_eq!(r[0].country, "BB");
        v.insert("AB".to_string(), CountryComplexity { value: 0.5, coverage: 0.01 });
        let r = rank_countries(&v, 10).unwrap();
        assert_eq!(r.iter().map(|x| x.country.as_str()).collect::<Vec<_>>(), ["BB", "AA", "AB"]);
        assert_eq!(rank_countries(&v, 1).unwrap().len(), 1);
        let map = String::from_utf8(map_csv(&v).unwrap()).unwrap();
        assert!(map.contains("AB,0.5,0.01,low_coverage"));
        assert_eq!(read_map_csv(map.as_bytes()).unwrap(), v);
        let t = rank_transition_csv([("s1", r.as_slice())]).unwrap();
        assert!(std::str::from_utf8(&t).unwrap().starts_with("slice,country,rank\ns1,BB,1\n"));
    }
}
