//! Simple least squares of country complexity against external indicators.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};
use crate::geo::{rank_countries, CountryComplexity};
use crate::output::fmt_f64;
use crate::stats::t_two_sided_p;

pub const DEFAULT_TOP_N: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Two-sided t-test on the slope with `n - 2` degrees of freedom.
    pub p_slope: f64,
    pub se_slope: f64,
    pub n: usize,
}

/// Closed-form fit of `y = intercept + slope * x`.
pub fn ols_fit(pairs: &[(f64, f64)]) -> Result<OlsFit> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::Precondition(format!("regression needs at least 3 points, got {n}")));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Invalid("non-finite regression input".into()));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= f64::EPSILON * pairs.iter().map(|p| p.0 * p.0).sum::<f64>() {
        return Err(Error::DegenerateRegressor);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // Constant y leaves r2 undefined; report no explained variance.
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 0.0 };
    let sse = (syy - slope * sxy).max(0.0);
    let se_slope = (sse / (nf - 2.0) / sxx).sqrt();
    let p_slope = if se_slope > 0.0 {
        t_two_sided_p(slope / se_slope, nf - 2.0)
    } else if slope != 0.0 {
        0.0
    } else {
        1.0
    };
    Ok(OlsFit {
        slope,
        intercept,
        r2,
        p_slope,
        se_slope,
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub country: String,
    pub indicator: String,
    pub year: i32,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndicatorTable {
    values: BTreeMap<(String, String, i32), f64>,
}

impl IndicatorTable {
    pub fn from_rows(rows: impl IntoIterator<Item = IndicatorRow>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for r in rows {
            if !r.value.is_finite() {
                return Err(Error::Invalid(format!(
                    "non-finite value for ({},{},{})",
                    r.country, r.indicator, r.year
                )));
            }
            let key = (r.country, r.indicator, r.year);
            if values.contains_key(&key) {
                return Err(Error::DuplicateKey(format!("({},{},{})", key.0, key.1, key.2)));
            }
            values.insert(key, r.value);
        }
        Ok(IndicatorTable { values })
    }

    pub fn get(&self, country: &str, indicator: &str, year: i32) -> Option<f64> {
        self.values
            .get(&(country.to_string(), indicator.to_string(), year))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = IndicatorRow> + '_ {
        self.values.iter().map(|((c, i, y), &v)| IndicatorRow {
            country: c.clone(),
            indicator: i.clone(),
            year: *y,
            value: v,
        })
    }
}

pub fn read_indicators<R: Read>(reader: R) -> Result<IndicatorTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["country_iso2", "indicator", "year", "value"]) {
        return Err(Error::Rows(vec![RowError {
            line: 1,
            message: "expected header `country_iso2,indicator,year,value`".into(),
        }]));
    }
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let year = rec.get(2).and_then(|s| s.parse::<i32>().ok());
        let value = rec.get(3).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
        match (year, value) {
            (Some(year), Some(value)) if rec.len() == 4 && !rec[0].is_empty() && !rec[1].is_empty() => {
                rows.push(IndicatorRow {
                    country: rec[0].to_string(),
                    indicator: rec[1].to_string(),
                    year,
                    value,
                })
            }
            _ => errors.push(RowError {
                line,
                message: "expected country_iso2,indicator,integer year,finite value".into(),
            }),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Rows(errors));
    }
    IndicatorTable::from_rows(rows)
}

pub fn indicators_csv(table: &IndicatorTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["country_iso2", "indicator", "year", "value"])?;
    for r in table.rows() {
        w.write_record([r.country, r.indicator, r.year.to_string(), fmt_f64(r.value)])?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log10,
    /// Log10 for income-level indicators, identity otherwise.
    #[default]
    Auto,
}

impl Transform {
    pub fn resolve(self, indicator: &str) -> Transform {
        match self {
            Transform::Auto => {
                let i = indicator.to_ascii_lowercase();
                if ["gni", "gdp", "ny.gnp.pcap", "ny.gdp.pcap"].iter().any(|k| i.contains(k)) {
                    Transform::Log10
                } else {
                    Transform::Identity
                }
            }
            t => t,
        }
    }

    fn apply(self, v: f64) -> Option<f64> {
        match self {
            Transform::Log10 => (v > 0.0).then(|| v.log10()),
            _ => Some(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub country: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub indicator: String,
    pub year: i32,
    pub transform: Transform,
    pub top_n: Option<usize>,
    pub fit: OlsFit,
    pub points: Vec<ScatterPoint>,
    /// Countries without a usable indicator value.
    pub unmatched: Vec<String>,
}

/// Regresses country complexity (y) on an indicator (x), optionally keeping
/// only the `top_n` countries by complexity.
pub fn regress_eci(
    countries: &BTreeMap<String, CountryComplexity>,
    table: &IndicatorTable,
    indicator: &str,
    year: i32,
    top_n: Option<usize>,
    transform: Transform,
) -> Result<Regression> {
    let transform = transform.resolve(indicator);
    let selected: Vec<(String, f64)> = match top_n {
        Some(k) => rank_countries(countries, k)?
            .into_iter()
            .map(|r| (r.country, r.value))
            .collect(),
        None => countries.iter().map(|(c, v)| (c.clone(), v.value)).collect(),
    };
    let mut points = Vec::new();
    let mut unmatched = Vec::new();
    for (country, y) in selected {
        match table.get(&country, indicator, year).and_then(|v| transform.apply(v)) {
            Some(x) => points.push(ScatterPoint { country, x, y }),
            None => unmatched.push(country),
        }
    }
    points.sort_by(|a, b| a.country.cmp(&b.country));
    unmatched.sort();
    if points.len() < 3 {
        return Err(Error::InsufficientOverlap {
            matched: points.len(),
            unmatched,
        });
    }
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    Ok(Regression {
        indicator: indicator.to_string(),
        year,
        transform,
        top_n,
        fit: ols_fit(&pairs)?,
        points,
        unmatched,
    })
}

pub fn scatter_csv(reg: &Regression) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["country", "x", "y"])?;
    for p in &reg.points {
        w.write_record([p.country.clone(), fmt_f64(p.x), fmt_f64(p.y)])?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}
