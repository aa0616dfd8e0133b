//! Diversity, ubiquity, ECI and PCI.
//!
//! Two routes produce the same scores: the method of reflections (alternating
//! averages between languages and articles) and a direct eigen-solve of the
//! language-space operator
//! `Mt[l][l'] = (1/diversity_l) * sum_a M[l][a] M[l'][a] / ubiquity_a`.
//! ECI is the standardized eigenvector of the second-largest eigenvalue,
//! oriented to correlate nonnegatively with diversity. PCI is the article-side
//! average of the raw ECI vector, standardized the same way.

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};
use crate::matrix::Index;
use crate::output::fmt_f64;
use crate::rca::AdvantageMatrix;
use crate::sparse::Csr;
use crate::stats::{mean, pearson, pop_variance};

pub const DEFAULT_ITERATIONS: usize = 200;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Raw scores whose population variance is below this are treated as a tie.
const TIE_VARIANCE: f64 = 1e-15;
/// Eigenvalues closer than this are considered equal.
const SPECTRAL_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Reflections { iterations: usize, tolerance: f64 },
    Eigenvector,
}

impl Default for Method {
    fn default() -> Self {
        Method::Eigenvector
    }
}

impl Method {
    pub fn reflections() -> Self {
        Method::Reflections {
            iterations: DEFAULT_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityScores {
    pub languages: Index,
    pub articles: Index,
    pub eci: Vec<f64>,
    pub pci: Vec<f64>,
    pub diversity: Vec<u64>,
    pub ubiquity: Vec<u64>,
    pub method: Method,
    /// Full reflection steps taken (0 for the eigen route).
    pub iterations_run: usize,
    pub converged: bool,
    /// Digest of the advantage matrix the scores were computed from.
    pub provenance: String,
}

pub fn diversity_ubiquity(m: &AdvantageMatrix) -> Result<(Vec<u64>, Vec<u64>)> {
    let bits = m.bits();
    let diversity: Vec<u64> = (0..bits.rows()).map(|r| bits.row_len(r) as u64).collect();
    let mut ubiquity = vec![0u64; bits.cols()];
    for (_, c, _) in bits.iter() {
        ubiquity[c] += 1;
    }
    if diversity.is_empty() || ubiquity.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if let Some(r) = diversity.iter().position(|&d| d == 0) {
        return Err(Error::Precondition(format!(
            "language `{}` has no advantage; prune first",
            m.languages().label(r)
        )));
    }
    if let Some(c) = ubiquity.iter().position(|&u| u == 0) {
        return Err(Error::Precondition(format!(
            "article `{}` has no advantage; prune first",
            m.articles().label(c)
        )));
    }
    Ok((diversity, ubiquity))
}

pub fn compute(m: &AdvantageMatrix, method: Method) -> Result<ComplexityScores> {
    match method {
        Method::Eigenvector => eci_eigen(m),
        Method::Reflections {
            iterations,
            tolerance,
        } => eci_reflections(m, iterations, tolerance),
    }
}

/// Mean-zero, unit population variance; `None` for a tie.
fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let var = pop_variance(x);
    if !(var >= TIE_VARIANCE) {
        return None;
    }
    let mu = mean(x);
    let sd = var.sqrt();
    Some(x.iter().map(|v| (v - mu) / sd).collect())
}

/// Article-side average: `(1/ubiquity_a) * sum_l M[l][a] x_l`.
fn to_articles(by_article: &Csr<u8>, ubiquity: &[u64], x: &[f64]) -> Vec<f64> {
    (0..by_article.rows())
        .map(|a| by_article.row(a).map(|(l, _)| x[l]).sum::<f64>() / ubiquity[a] as f64)
        .collect()
}

/// Language-side average: `(1/diversity_l) * sum_a M[l][a] y_a`.
fn to_languages(bits: &Csr<u8>, diversity: &[u64], y: &[f64]) -> Vec<f64> {
    (0..bits.rows())
        .map(|l| bits.row(l).map(|(a, _)| y[a]).sum::<f64>() / diversity[l] as f64)
        .collect()
}

fn finish(
    m: &AdvantageMatrix,
    raw_eci: Option<Vec<f64>>,
    diversity: Vec<u64>,
    ubiquity: Vec<u64>,
    method: Method,
    iterations_run: usize,
    converged: bool,
) -> ComplexityScores {
    let n_lang = diversity.len();
    let n_art = ubiquity.len();
    let (eci, pci) = match raw_eci.as_deref().and_then(standardize) {
        None => (vec![0.0; n_lang], vec![0.0; n_art]),
        Some(mut eci) => {
            let by_article = m.bits().transpose();
            let raw_pci = to_articles(&by_article, &ubiquity, &eci);
            let mut pci = standardize(&raw_pci).unwrap_or_else(|| vec![0.0; n_art]);
            if should_flip(&eci, &diversity) {
                eci.iter_mut().for_each(|v| *v = -*v);
                pci.iter_mut().for_each(|v| *v = -*v);
            }
            (eci, pci)
        }
    };
    ComplexityScores {
        languages: m.languages().clone(),
        articles: m.articles().clone(),
        eci,
        pci,
        diversity,
        ubiquity,
        method,
        iterations_run,
        converged,
        provenance: m.digest(),
    }
}

/// Orientation: nonnegative correlation with diversity; when that is zero or
/// undefined, the first nonzero score is made positive.
fn should_flip(eci: &[f64], diversity: &[u64]) -> bool {
    let div: Vec<f64> = diversity.iter().map(|&d| d as f64).collect();
    match pearson(eci, &div) {
        Some(r) if r != 0.0 => r < 0.0,
        _ => eci.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0),
    }
}

pub fn eci_reflections(
    m: &AdvantageMatrix,
    iterations: usize,
    tolerance: f64,
) -> Result<ComplexityScores> {
    if iterations == 0 {
        return Err(Error::Invalid("iterations must be at least 1".into()));
    }
    let (diversity, ubiquity) = diversity_ubiquity(m)?;
    let method = Method::Reflections {
        iterations,
        tolerance,
    };
    let bits = m.bits();
    let by_article = bits.transpose();
    let start: Vec<f64> = diversity.iter().map(|&d| d as f64).collect();
    let Some(mut x) = standardize(&start) else {
        return Ok(finish(m, None, diversity, ubiquity, method, 0, true));
    };
    let mut converged = false;
    let mut run = 0;
    // Each pass is one article step followed by one language step; the
    // recursion is linear and preserves constants, so standardizing between
    // passes leaves the standardized sequence unchanged.
    for step in 1..=iterations {
        run = step;
        let k_a = to_articles(&by_article, &ubiquity, &x);
        let k_l = to_languages(bits, &diversity, &k_a);
        let Some(next) = standardize(&k_l) else {
            return Ok(finish(m, None, diversity, ubiquity, method, run, true));
        };
        let delta = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if delta < tolerance {
            converged = true;
            break;
        }
    }
    Ok(finish(m, Some(x), diversity, ubiquity, method, run, converged))
}

/// Symmetric form `D^-1/2 M U^-1 M^T D^-1/2`, similar to the language-space
/// operator and so sharing its eigenvalues.
fn symmetric_operator(m: &AdvantageMatrix, diversity: &[u64], ubiquity: &[u64]) -> DMatrix<f64> {
    let n = diversity.len();
    let inv_sqrt: Vec<f64> = diversity.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
    let by_article = m.bits().transpose();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for a in 0..by_article.rows() {
        let w = 1.0 / ubiquity[a] as f64;
        let langs: Vec<usize> = by_article.row(a).map(|(l, _)| l).collect();
        for &i in &langs {
            for &j in &langs {
                s[(i, j)] += w * inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    s
}

/// Dense language-space operator, exposed for inspection and tests.
pub fn language_operator(m: &AdvantageMatrix) -> Result<Vec<Vec<f64>>> {
    let (diversity, ubiquity) = diversity_ubiquity(m)?;
    let by_article = m.bits().transpose();
    let n = diversity.len();
    let mut op = vec![vec![0.0; n]; n];
    for a in 0..by_article.rows() {
        let langs: Vec<usize> = by_article.row(a).map(|(l, _)| l).collect();
        for &i in &langs {
            for &j in &langs {
                op[i][j] += 1.0 / ubiquity[a] as f64;
            }
        }
    }
    for (row, &d) in op.iter_mut().zip(&diversity) {
        row.iter_mut().for_each(|v| *v /= d as f64);
    }
    Ok(op)
}

pub fn eci_eigen(m: &AdvantageMatrix) -> Result<ComplexityScores> {
    let (diversity, ubiquity) = diversity_ubiquity(m)?;
    if diversity.len() < 2 || ubiquity.len() < 2 {
        return Err(Error::Precondition(
            "eigenvector route needs at least 2 languages and 2 articles".into(),
        ));
    }
    let s = symmetric_operator(m, &diversity, &ubiquity);
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let tie = |m: &AdvantageMatrix, d: Vec<u64>, u: Vec<u64>| {
        Ok(finish(m, None, d, u, Method::Eigenvector, 0, true))
    };
    // Rank-one operator: every language averages to the same value.
    if lambda[1] <= SPECTRAL_GAP {
        return tie(m, diversity, ubiquity);
    }
    let degenerate = (lambda[0] - lambda[1]).abs() <= SPECTRAL_GAP
        || lambda.get(2).is_some_and(|l3| (lambda[1] - l3).abs() <= SPECTRAL_GAP);
    if degenerate {
        let div: Vec<f64> = diversity.iter().map(|&d| d as f64).collect();
        if pop_variance(&div) < TIE_VARIANCE {
            return tie(m, diversity, ubiquity);
        }
        return Err(Error::DegenerateSpectrum {
            eigenvalues: lambda.iter().take(3).copied().collect(),
        });
    }
    let u = eig.eigenvectors.column(order[1]);
    let raw: Vec<f64> = u
        .iter()
        .zip(&diversity)
        .map(|(v, &d)| v / (d as f64).sqrt())
        .collect();
    Ok(finish(m, Some(raw), diversity, ubiquity, Method::Eigenvector, 0, true))
}

/// Articles in descending PCI, ties broken by article id.
pub fn rank_articles_by_pci(scores: &ComplexityScores, top_n: usize) -> Result<Vec<(String, f64)>> {
    if top_n == 0 {
        return Err(Error::Invalid("top_n must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..scores.pci.len()).collect();
    // Index order is lexicographic, so a stable sort keeps the tie rule.
    idx.sort_by(|&a, &b| scores.pci[b].total_cmp(&scores.pci[a]));
    Ok(idx
        .into_iter()
        .take(top_n)
        .map(|i| (scores.articles.label(i).to_string(), scores.pci[i]))
        .collect())
}

/// Serialized summary written next to the score tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityManifest {
    pub method: Method,
    pub iterations_run: usize,
    pub converged: bool,
    pub provenance: String,
    pub n_languages: usize,
    pub n_articles: usize,
}

impl ComplexityScores {
    pub fn eci_of(&self, language: &str) -> Option<f64> {
        self.languages.position(language).map(|i| self.eci[i])
    }

    pub fn eci_map(&self) -> BTreeMap<String, f64> {
        self.languages
            .iter()
            .zip(&self.eci)
            .map(|(l, &v)| (l.to_string(), v))
            .collect()
    }

    pub fn eci_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["language", "eci", "diversity"])?;
        for (i, l) in self.languages.iter().enumerate() {
            w.write_record([l, &fmt_f64(self.eci[i]), &self.diversity[i].to_string()])?;
        }
        w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
    }

    pub fn pci_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["article", "pci", "ubiquity"])?;
        for (i, a) in self.articles.iter().enumerate() {
            w.write_record([a, &fmt_f64(self.pci[i]), &self.ubiquity[i].to_string()])?;
        }
        w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
    }

    pub fn manifest(&self) -> ComplexityManifest {
        ComplexityManifest {
            method: self.method,
            iterations_run: self.iterations_run,
            converged: self.converged,
            provenance: self.provenance.clone(),
            n_languages: self.languages.len(),
            n_articles: self.articles.len(),
        }
    }
}

pub fn ranking_csv(ranking: &[(String, f64)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "article", "pci"])?;
    for (i, (a, v)) in ranking.iter().enumerate() {
        w.write_record([&(i + 1).to_string(), a, &fmt_f64(*v)])?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

/// Reads a `language,eci,diversity` table into a language -> ECI map.
pub fn read_eci_csv<R: Read>(reader: R) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["language", "eci", "diversity"]) {
        return Err(Error::Rows(vec![RowError {
            line: 1,
            message: "expected header `language,eci,diversity`".into(),
        }]));
    }
    let mut out = BTreeMap::new();
    let mut errors = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        match rec.get(1).and_then(|s| s.parse::<f64>().ok()) {
            Some(v) if v.is_finite() && !rec[0].is_empty() => {
                if out.insert(rec[0].to_string(), v).is_some() {
                    errors.push(RowError {
                        line,
                        message: format!("duplicate language `{}`", &rec[0]),
                    });
                }
            }
            _ => errors.push(RowError {
                line,
                message: "bad eci row".into(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Rows(errors))
    }
}
