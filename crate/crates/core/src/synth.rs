//! Seeded synthetic corpus with planted structure: nested language
//! capabilities that widen each year, heavy-tailed editors, identity reverts,
//! clustered article embeddings, viewership and indicators tied to capability.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::ViewRow;
use crate::matrix::EditEvent;
use crate::regress::{IndicatorRow, IndicatorTable};

const LANGUAGE_CODES: [&str; 12] = ["en", "de", "fr", "es", "ja", "it", "pl", "pt", "ru", "nl", "sv", "zh"];
const COUNTRIES: [&str; 24] = [
    "US", "GB", "CA", "AU", "DE", "AT", "CH", "FR", "BE", "ES", "MX", "AR", "JP", "IT", "PL", "BR", "PT",
    "RU", "NL", "SE", "CN", "TW", "IN", "NG",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub languages: usize,
    pub articles: usize,
    pub first_year: i32,
    pub years: usize,
    pub events: usize,
    pub genres: Vec<String>,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            languages: 5,
            articles: 20,
            first_year: 2014,
            years: 3,
            events: 10_000,
            genres: vec!["cooking".into(), "science".into()],
            embedding_dim: 8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub events: Vec<EditEvent>,
    pub views: Vec<ViewRow>,
    pub indicators: IndicatorTable,
    /// Article id and unit vector, sorted by id.
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub snapshot_year: i32,
}

pub fn language_codes(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match LANGUAGE_CODES.get(i) {
            Some(c) => c.to_string(),
            None => format!("x{i:02}"),
        })
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.languages < 2 || cfg.articles < 2 || cfg.years == 0 || cfg.events == 0 || cfg.genres.is_empty() {
        return Err(Error::Config("synthetic corpus needs >= 2 languages and articles, a year, events and a genre".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let langs = language_codes(cfg.languages);
    let articles: Vec<String> = (0..cfg.articles).map(|j| format!("Q{}", 1001 + j)).collect();
    let genre_of = |j: usize| &cfg.genres[j % cfg.genres.len()];
    // Capability in (0, 1]; article difficulty in [0, 1).
    let capability: Vec<f64> = (0..cfg.languages).map(|i| (i + 1) as f64 / cfg.languages as f64).collect();
    let difficulty: Vec<f64> = (0..cfg.articles).map(|j| j as f64 / cfg.articles as f64).collect();
    let popularity: Vec<f64> = (0..cfg.articles).map(|_| 0.5 + rng.random::<f64>()).collect();
    let size: Vec<f64> = (0..cfg.languages).map(|i| 1.0 + (cfg.languages - i) as f64).collect();
    let growth = 0.3 / cfg.years as f64;
    let reach = |i: usize, y: usize| 0.25 + 0.55 * capability[i] + growth * (y + 1) as f64;

    let pareto = Pareto::new(1.0, 1.3).expect("valid Pareto");
    let editors: Vec<Vec<f64>> = (0..cfg.languages)
        .map(|_| (0..40).map(|_| pareto.sample(&mut rng)).collect())
        .collect();
    let editor_pick: Vec<WeightedIndex<f64>> = editors
        .iter()
        .map(|w| WeightedIndex::new(w).expect("positive weights"))
        .collect();

    let per_year = cfg.events / cfg.years;
    let mut events = Vec::with_capacity(cfg.events);
    for y in 0..cfg.years {
        let year = cfg.first_year + y as i32;
        let n = if y + 1 == cfg.years { cfg.events - per_year * (cfg.years - 1) } else { per_year };
        let mut cells = Vec::new();
        let mut weights = Vec::new();
        for i in 0..cfg.languages {
            let reach = reach(i, y);
            for j in 0..cfg.articles {
                if difficulty[j] <= reach {
                    // Specialization peaks near the edge of a language's reach.
                    let focus = 1.0 + 3.0 * (-(reach - difficulty[j]).powi(2) / 0.02).exp();
                    cells.push((i, j));
                    weights.push(size[i] * popularity[j] * focus);
                }
            }
        }
        let pick = WeightedIndex::new(&weights).expect("positive weights");
        let start = Utc.with_ymd_and_hms(year, 1, 1, 0, 0, 0).single().expect("valid year");
        let secs = (Utc.with_ymd_and_hms(year + 1, 1, 1, 0, 0, 0).single().expect("valid year") - start).num_seconds();
        let mut e = 0;
        while e < n {
            let (i, j) = cells[pick.sample(&mut rng)];
            let editor = editor_pick[i].sample(&mut rng);
            // Editors work in short bursts on related articles.
            let burst = 1 + rng.random_range(0..3usize).min(n - e - 1);
            let mut t = start + Duration::seconds(rng.random_range(0..secs - 3 * 3600));
            for k in 0..burst {
                let jj = if k == 0 { j } else { (j + rng.random_range(0..3usize)).min(cfg.articles - 1) };
                let jj = if difficulty[jj] <= reach(i, y) { jj } else { j };
                let ev = EditEvent::new(&langs[i], &articles[jj], format!("{}-e{editor:02}", langs[i]), t)
                    .bot(editor == 0)
                    .with_tags([genre_of(jj).clone()]);
                events.push(ev);
                t += Duration::minutes(rng.random_range(1..40));
                e += 1;
            }
        }
    }
    assign_checksums(&mut events, &mut rng);
    events.sort_by(|a, b| (a.timestamp, &a.language, &a.article, &a.editor).cmp(&(b.timestamp, &b.language, &b.article, &b.editor)));

    let snapshot_year = cfg.first_year + cfg.years as i32 - 1;
    let mut views = Vec::new();
    let mut country_cap = BTreeMap::new();
    for (k, &country) in COUNTRIES.iter().enumerate() {
        let home = k * cfg.languages / COUNTRIES.len();
        let mut total = 0.0;
        let mut mass = 0.0;
        for (i, lang) in langs.iter().enumerate() {
            let v: u64 = if i == home {
                rng.random_range(5_000..50_000)
            } else if rng.random::<f64>() < 0.5 {
                rng.random_range(10..3_000)
            } else {
                continue;
            };
            views.push(ViewRow { country: country.to_string(), language: lang.clone(), views: v });
            total += v as f64 * capability[i];
            mass += v as f64;
        }
        country_cap.insert(country, total / mass);
    }
    views.sort_by(|a, b| (&a.country, &a.language).cmp(&(&b.country, &b.language)));

    let noise = Normal::new(0.0, 0.08).expect("valid normal");
    let mut rows = Vec::new();
    for (&country, &cap) in &country_cap {
        let gni = 10f64.powf(3.2 + 1.5 * cap + noise.sample(&mut rng));
        let internet = (30.0 + 60.0 * cap + 100.0 * noise.sample(&mut rng)).clamp(1.0, 99.0);
        for (name, v) in [("gni_per_capita", gni), ("internet_users_pct", internet)] {
            rows.push(IndicatorRow {
                country: country.to_string(),
                indicator: name.into(),
                year: snapshot_year,
                value: (v * 100.0).round() / 100.0,
            });
        }
    }
    let indicators = IndicatorTable::from_rows(rows)?;

    let centroids: Vec<Vec<f64>> = (0..cfg.genres.len())
        .map(|_| (0..cfg.embedding_dim).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    let embeddings = articles
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let c = &centroids[j % cfg.genres.len()];
            let v: Vec<f64> = c.iter().map(|x| x + 0.3 * (rng.random::<f64>() - 0.5)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (a.clone(), v.iter().map(|x| round6(x / norm)).collect())
        })
        .collect();

    Ok(SynthCorpus {
        events,
        views,
        indicators,
        embeddings,
        snapshot_year,
    })
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Per (language, article) history: most revisions produce a new state, some
/// restore the state from two revisions back.
fn assign_checksums(events: &mut [EditEvent], rng: &mut ChaCha8Rng) {
    events.sort_by(|a, b| (&a.language, &a.article, a.timestamp).cmp(&(&b.language, &b.article, b.timestamp)));
    let mut counter = 0u64;
    let mut i = 0;
    while i < events.len() {
        let mut history: Vec<String> = Vec::new();
        let key = (events[i].language.clone(), events[i].article.clone());
        while i < events.len() && (events[i].language.as_str(), events[i].article.as_str()) == (key.0.as_str(), key.1.as_str()) {
            let sum = if history.len() >= 2 && rng.random::<f64>() < 0.12 {
                history[history.len() - 2].clone()
            } else {
                counter += 1;
                format!("{counter:012x}")
            };
            history.push(sum.clone());
            events[i].checksum = Some(sum);
            i += 1;
        }
    }
}

pub fn embeddings_csv(embeddings: &[(String, Vec<f64>)]) -> Result<Vec<u8>> {
    let dim = embeddings.first().map_or(0, |e| e.1.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["article".to_string()];
    header.extend((1..=dim).map(|k| format!("v{k}")));
    w.write_record(&header)?;
    for (a, v) in embeddings {
        let mut rec = vec![a.clone()];
        rec.extend(v.iter().map(|&x| crate::output::fmt_f64(x)));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

/// Distinct genres appearing in the corpus.
pub fn genres(events: &[EditEvent]) -> BTreeSet<String> {
    events.iter().flat_map(|e| e.genre_tags.iter().cloned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{build_activity_matrix, CorpusSlice};

    #[test]
    fn deterministic_and_sized() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.events.len(), 10_000);
        let m = build_activity_matrix(&a.events, &CorpusSlice::all(), false).unwrap();
        assert_eq!((m.languages().len(), m.articles().len()), (5, 20));
        assert!(a.events.iter().filter(|e| e.is_bot).count() > 0);
        assert_eq!(a.embeddings.len(), 20);
    }
}

