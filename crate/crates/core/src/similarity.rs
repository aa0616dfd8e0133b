//! Pairwise language similarity: cosine of edit portfolios and Pearson
//! correlation of log-RCA profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{ActivityMatrix, Index};
use crate::output::fmt_opt_f64;
use crate::rca::RcaMatrix;
use crate::sparse::Csr;
use crate::stats::pearson;

/// Minimum number of shared articles for a log-RCA correlation.
pub const MIN_SUPPORT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    PortfolioCosine,
    /// Cosine over RCA vectors instead of raw counts.
    RcaCosine,
    LogRcaPearson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub labels: Index,
    pub kind: SimilarityKind,
    /// Row-major `n x n`; `None` marks an undefined pair.
    values: Vec<Option<f64>>,
    support: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.len() + j]
    }

    pub fn support(&self, i: usize, j: usize) -> usize {
        self.support[i * self.len() + j]
    }

    /// Builds from a full table; used by fixtures and readers.
    pub fn from_rows(labels: Index, kind: SimilarityKind, rows: Vec<Vec<Option<f64>>>) -> Self {
        let n = labels.len();
        assert!(rows.len() == n && rows.iter().all(|r| r.len() == n));
        SimilarityMatrix {
            labels,
            kind,
            values: rows.into_iter().flatten().collect(),
            support: vec![0; n * n],
        }
    }

    fn filled(labels: Index, kind: SimilarityKind, mut pair: impl FnMut(usize, usize) -> (Option<f64>, usize)) -> Self {
        let n = labels.len();
        let mut values = vec![None; n * n];
        let mut support = vec![0; n * n];
        for i in 0..n {
            for j in i..n {
                let (v, s) = pair(i, j);
                values[i * n + j] = v;
                values[j * n + i] = v;
                support[i * n + j] = s;
                support[j * n + i] = s;
            }
        }
        SimilarityMatrix {
            labels,
            kind,
            values,
            support,
        }
    }
}

fn dot_sorted(a: &[(usize, f64)], b: &[(usize, f64)]) -> (f64, usize) {
    let (mut i, mut j) = (0, 0);
    let mut dot = 0.0;
    let mut union = 0;
    while i < a.len() || j < b.len() {
        union += 1;
        match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x.0 == y.0 => {
                dot += x.1 * y.1;
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x.0 < y.0 => i += 1,
            (Some(_), None) => i += 1,
            _ => j += 1,
        }
    }
    (dot, union)
}

fn cosine_rows(labels: &Index, rows: &Csr<f64>, kind: SimilarityKind) -> Result<SimilarityMatrix> {
    let vecs: Vec<Vec<(usize, f64)>> = (0..rows.rows()).map(|r| rows.row(r).collect()).collect();
    let norms: Vec<f64> = vecs
        .iter()
        .map(|v| v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&n| n <= 0.0) {
        return Err(Error::Precondition(format!(
            "language `{}` has a zero-norm portfolio",
            labels.label(i)
        )));
    }
    Ok(SimilarityMatrix::filled(labels.clone(), kind, |i, j| {
        let (dot, union) = dot_sorted(&vecs[i], &vecs[j]);
        if i == j {
            return (Some(1.0), union);
        }
        (Some((dot / (norms[i] * norms[j])).clamp(0.0, 1.0)), union)
    }))
}

/// Cosine of raw edit-count vectors over the shared article index.
pub fn portfolio_cosine(matrix: &ActivityMatrix) -> Result<SimilarityMatrix> {
    let rows = matrix.counts().map(|_, _, c| c as f64);
    cosine_rows(matrix.languages(), &rows, SimilarityKind::PortfolioCosine)
}

/// Cosine of RCA vectors.
pub fn rca_cosine(rca: &RcaMatrix) -> Result<SimilarityMatrix> {
    cosine_rows(rca.languages(), rca.values(), SimilarityKind::RcaCosine)
}

/// Pearson correlation of `ln RCA` profiles.
///
/// Without `epsilon`, each pair is restricted to articles where both RCA
/// values are positive. With `epsilon`, every article is used and absent
/// entries contribute `ln(epsilon)`. Pairs with fewer than [`MIN_SUPPORT`]
/// articles or a constant side are undefined.
pub fn log_rca_pearson(rca: &RcaMatrix, epsilon: Option<f64>) -> Result<SimilarityMatrix> {
    let values = rca.values();
    let n_art = values.cols();
    let kind = SimilarityKind::LogRcaPearson;
    match epsilon {
        Some(eps) => {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Invalid(format!("log-rca epsilon must be positive, got {eps}")));
            }
            let dense: Vec<Vec<f64>> = (0..values.rows())
                .map(|r| {
                    let mut v = vec![eps.ln(); n_art];
                    for (c, x) in values.row(r) {
                        v[c] = (x + eps).ln();
                    }
                    v
                })
                .collect();
            Ok(SimilarityMatrix::filled(rca.languages().clone(), kind, |i, j| {
                let r = if n_art < MIN_SUPPORT {
                    None
                } else if i == j {
                    pearson(&dense[i], &dense[j]).map(|_| 1.0)
                } else {
                    pearson(&dense[i], &dense[j])
                };
                (r, n_art)
            }))
        }
        None => {
            let logs: Vec<Vec<(usize, f64)>> = (0..values.rows())
                .map(|r| {
                    values
                        .row(r)
                        .filter(|&(_, x)| x > 0.0)
                        .map(|(c, x)| (c, x.ln()))
                        .collect()
                })
                .collect();
            Ok(SimilarityMatrix::filled(rca.languages().clone(), kind, |i, j| {
                let (xs, ys) = intersect(&logs[i], &logs[j]);
                let support = xs.len();
                if support < MIN_SUPPORT {
                    return (None, support);
                }
                let r = pearson(&xs, &ys);
                (if i == j { r.map(|_| 1.0) } else { r }, support)
            }))
        }
    }
}

fn intersect(a: &[(usize, f64)], b: &[(usize, f64)]) -> (Vec<f64>, Vec<f64>) {
    let (mut i, mut j) = (0, 0);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Equal => {
                xs.push(a[i].1);
                ys.push(b[j].1);
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    (xs, ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    Input,
    Seriation,
}

/// Leaf order of deterministic average-linkage clustering on `1 - similarity`.
/// Undefined pairs count as distance 1. Ties merge the pair whose smallest
/// member labels come first; the cluster with the smaller label goes left.
pub fn seriate(sim: &SimilarityMatrix) -> Vec<usize> {
    let n = sim.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 1.0 - sim.get(i, j).unwrap_or(0.0)).collect())
        .collect();
    // cluster slot -> (leaf order, size); None once merged away.
    let mut clusters: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    for _ in 1..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if clusters[i].is_none() {
                continue;
            }
            for j in (i + 1)..n {
                if clusters[j].is_none() {
                    continue;
                }
                // Slot i always holds the cluster's smallest leaf, and slots are
                // scanned in order, so strict `<` keeps the lexicographic tie rule.
                if best.is_none_or(|(d, _, _)| dist[i][j] < d) {
                    best = Some((dist[i][j], i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two clusters");
        let right = clusters[j].take().expect("live");
        let left = clusters[i].as_mut().expect("live");
        let (ni, nj) = (left.len() as f64, right.len() as f64);
        left.extend(right);
        for k in 0..n {
            if k == i || clusters[k].is_none() {
                continue;
            }
            let d = (ni * dist[k][i] + nj * dist[k][j]) / (ni + nj);
            dist[k][i] = d;
            dist[i][k] = d;
        }
    }
    clusters.into_iter().flatten().next().expect("one cluster left")
}

/// Square CSV with language codes on the first row and column; undefined
/// cells are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapExport {
    pub csv: Vec<u8>,
    pub support_csv: Vec<u8>,
    pub order: Vec<String>,
    pub ordering: Ordering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapManifest {
    pub kind: SimilarityKind,
    pub ordering: Ordering,
    pub order: Vec<String>,
    pub support_path: String,
}

pub fn similarity_heatmap_export(sim: &SimilarityMatrix, ordering: Ordering) -> Result<HeatmapExport> {
    let order = match ordering {
        Ordering::Input => (0..sim.len()).collect(),
        Ordering::Seriation => seriate(sim),
    };
    let labels: Vec<String> = order.iter().map(|&i| sim.labels.label(i).to_string()).collect();
    let table = |cell: &dyn Fn(usize, usize) -> String| -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["language".to_string()];
        header.extend(labels.iter().cloned());
        w.write_record(&header)?;
        for (&i, label) in order.iter().zip(&labels) {
            let mut row = vec![label.clone()];
            row.extend(order.iter().map(|&j| cell(i, j)));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
    };
    Ok(HeatmapExport {
        csv: table(&|i, j| fmt_opt_f64(sim.get(i, j)))?,
        support_csv: table(&|i, j| sim.support(i, j).to_string())?,
        order: labels.clone(),
        ordering,
    })
}
