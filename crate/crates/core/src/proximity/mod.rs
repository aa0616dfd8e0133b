//! Article proximity, language-article relatedness density and the yearly
//! new-article-creation prediction harness.
//!
//! Proximity is the minimum conditional probability of co-specialization,
//! `phi[a][b] = sum_l M[l][a] M[l][b] / max(ubiquity_a, ubiquity_b)`, and
//! relatedness density is
//! `omega[l][a] = sum_{b != a} M[l][b] phi[b][a] / sum_{b != a} phi[b][a]`.

mod auc;
mod harness;
mod logistic;

pub use auc::{auc, mann_whitney_null_se};
pub use harness::{
    auc_series, auc_series_csv, predict_creation, Evaluation, PredictOptions, PredictionRun,
    SkipReason, YearOutcome,
};
pub use logistic::{fit_logistic, fit_logistic_with, log_likelihood, LogisticFit, LogisticOptions};

use crate::complexity::diversity_ubiquity;
use crate::error::{Error, Result};
use crate::matrix::Index;
use crate::output::fmt_f64;
use crate::rca::AdvantageMatrix;
use crate::sparse::Csr;

/// Symmetric article-article proximity with unit diagonal. Only pairs with
/// at least one co-specializing language are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    articles: Index,
    values: Csr<f64>,
}

impl ProximityMatrix {
    pub fn articles(&self) -> &Index {
        &self.articles
    }

    pub fn values(&self) -> &Csr<f64> {
        &self.values
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values.get(a, b).unwrap_or(0.0)
    }

    /// Upper-triangle triplets `article_a,article_b,phi` (diagonal included).
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["article_a", "article_b", "phi"])?;
        for (a, b, v) in self.values.iter() {
            if a <= b {
                w.write_record([self.articles.label(a), self.articles.label(b), &fmt_f64(v)])?;
            }
        }
        w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
    }
}

pub fn proximity(m: &AdvantageMatrix) -> Result<ProximityMatrix> {
    let (_, ubiquity) = diversity_ubiquity(m)?;
    let bits = m.bits();
    let by_article = bits.transpose();
    let n = ubiquity.len();
    let mut co = vec![0u64; n];
    let mut touched = Vec::new();
    let mut triplets = Vec::new();
    for a in 0..n {
        for (l, _) in by_article.row(a) {
            for (b, _) in bits.row(l) {
                if co[b] == 0 {
                    touched.push(b);
                }
                co[b] += 1;
            }
        }
        touched.sort_unstable();
        for &b in &touched {
            let phi = if a == b {
                1.0
            } else {
                co[b] as f64 / ubiquity[a].max(ubiquity[b]) as f64
            };
            triplets.push((a, b, phi));
            co[b] = 0;
        }
        touched.clear();
    }
    Ok(ProximityMatrix {
        articles: m.articles().clone(),
        values: Csr::from_sorted_triplets(n, n, triplets),
    })
}

/// Dense `omega[language][article]` for every pair of the advantage matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RelatednessDensity {
    pub languages: Index,
    pub articles: Index,
    values: Vec<f64>,
}

impl RelatednessDensity {
    pub fn compute(m: &AdvantageMatrix, phi: &ProximityMatrix) -> Result<Self> {
        check_shared_index(m, phi)?;
        let n_lang = m.languages().len();
        let n_art = m.articles().len();
        let by_article = m.bits().transpose();
        let mut values = vec![0.0; n_lang * n_art];
        let mut num = vec![0.0; n_lang];
        for a in 0..n_art {
            num.iter_mut().for_each(|v| *v = 0.0);
            let mut den = 0.0;
            for (b, p) in phi.values.row(a) {
                if b == a {
                    continue;
                }
                den += p;
                for (l, _) in by_article.row(b) {
                    num[l] += p;
                }
            }
            if den > 0.0 {
                for l in 0..n_lang {
                    values[l * n_art + a] = (num[l] / den).clamp(0.0, 1.0);
                }
            }
        }
        Ok(RelatednessDensity {
            languages: m.languages().clone(),
            articles: m.articles().clone(),
            values,
        })
    }

    pub fn get(&self, l: usize, a: usize) -> f64 {
        self.values[l * self.articles.len() + a]
    }

    /// `language,article,omega` for every pair, row-major.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["language", "article", "omega"])?;
        for (l, lang) in self.languages.iter().enumerate() {
            for (a, art) in self.articles.iter().enumerate() {
                w.write_record([lang, art, &fmt_f64(self.get(l, a))])?;
            }
        }
        w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
    }
}

fn check_shared_index(m: &AdvantageMatrix, phi: &ProximityMatrix) -> Result<()> {
    if m.articles() != phi.articles() {
        return Err(Error::Invalid(
            "proximity and advantage matrices index different articles".into(),
        ));
    }
    Ok(())
}

/// `omega` for a single (language, article); 0 when the article has no
/// proximate neighbours.
pub fn relatedness_density(
    m: &AdvantageMatrix,
    phi: &ProximityMatrix,
    language: &str,
    article: &str,
) -> Result<f64> {
    check_shared_index(m, phi)?;
    let l = m.languages().position(language).ok_or_else(|| Error::Lookup {
        kind: "language",
        key: language.to_string(),
    })?;
    let a = m.articles().position(article).ok_or_else(|| Error::Lookup {
        kind: "article",
        key: article.to_string(),
    })?;
    let (mut num, mut den) = (0.0, 0.0);
    for (b, p) in phi.values.row(a) {
        if b == a {
            continue;
        }
        den += p;
        if m.is_set(l, b) {
            num += p;
        }
    }
    Ok(if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 })
}
