//! Revealed comparative advantage and its binarization.
//!
//! `RCA[l][a] = (E[l][a] / sum_a' E[l][a']) / (sum_l' E[l'][a] / sum E)`;
//! the advantage bit is set when `RCA >= threshold` (1.0 by default).

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::io::{self, MatrixKind, MatrixManifest, FORMAT_VERSION};
use crate::matrix::{ActivityMatrix, Index, PruneReport, SliceMeta};
use crate::output::{fmt_f64, sha256_hex};
use crate::sparse::Csr;

pub const DEFAULT_THRESHOLD: f64 = 1.0;

/// RCA values sharing the source matrix's indices; present exactly where the
/// edit count is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct RcaMatrix {
    languages: Index,
    articles: Index,
    values: Csr<f64>,
    slice_meta: Option<SliceMeta>,
}

pub fn compute_rca(matrix: &ActivityMatrix) -> Result<RcaMatrix> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let rows = matrix.row_totals();
    let cols = matrix.col_totals();
    if rows.contains(&0) || cols.contains(&0) {
        return Err(Error::Precondition("activity matrix has an all-zero row or column".into()));
    }
    let total = total as f64;
    let values = matrix.counts().map(|r, c, e| {
        let language_share = e as f64 / rows[r] as f64;
        let global_share = cols[c] as f64 / total;
        language_share / global_share
    });
    Ok(RcaMatrix {
        languages: matrix.languages().clone(),
        articles: matrix.articles().clone(),
        values,
        slice_meta: matrix.slice_meta().cloned(),
    })
}

impl RcaMatrix {
    pub fn languages(&self) -> &Index {
        &self.languages
    }

    pub fn articles(&self) -> &Index {
        &self.articles
    }

    pub fn values(&self) -> &Csr<f64> {
        &self.values
    }

    pub fn get(&self, language: &str, article: &str) -> f64 {
        match (self.languages.position(language), self.articles.position(article)) {
            (Some(r), Some(c)) => self.values.get(r, c).unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        io::write_triplet_csv(
            MatrixKind::Rca,
            self.values.iter().map(|(r, c, v)| {
                (
                    self.languages.label(r).to_string(),
                    self.articles.label(c).to_string(),
                    fmt_f64(v),
                )
            }),
        )
    }

    pub fn manifest(&self) -> MatrixManifest {
        MatrixManifest {
            format_version: FORMAT_VERSION,
            kind: MatrixKind::Rca,
            languages: self.languages.clone(),
            articles: self.articles.clone(),
            slice_meta: self.slice_meta.clone(),
            prune_report: PruneReport::default(),
        }
    }

    pub fn from_csv<R: Read>(reader: R, manifest: Option<&MatrixManifest>) -> Result<Self> {
        let raw = io::read_triplets(reader, MatrixKind::Rca)?;
        let vals = io::parse_values(&raw, |s| match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
            _ => Err(format!("bad rca value `{s}`")),
        })?;
        let (languages, articles, keys) = io::resolve_indices(&raw, manifest)?;
        let values = Csr::from_sorted_triplets(
            languages.len(),
            articles.len(),
            keys.iter().map(|&(r, c, i)| (r, c, vals[i])).collect::<Vec<_>>(),
        );
        Ok(RcaMatrix {
            languages,
            articles,
            values,
            slice_meta: manifest.and_then(|m| m.slice_meta.clone()),
        })
    }
}

/// Binary specialization matrix. Entries are stored as `1u8`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageMatrix {
    languages: Index,
    articles: Index,
    bits: Csr<u8>,
    prune_report: PruneReport,
}

impl AdvantageMatrix {
    /// Builds from explicit set bits. Rows/columns without bits are kept, so
    /// the result may need [`AdvantageMatrix::pruned`].
    pub fn new(
        languages: Index,
        articles: Index,
        set: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut cells: Vec<(usize, usize)> = set.into_iter().collect();
        cells.sort_unstable();
        cells.dedup();
        let bits = Csr::from_sorted_triplets(
            languages.len(),
            articles.len(),
            cells.into_iter().map(|(r, c)| (r, c, 1u8)).collect::<Vec<_>>(),
        );
        AdvantageMatrix {
            languages,
            articles,
            bits,
            prune_report: PruneReport::default(),
        }
    }

    /// Test-friendly constructor with generated, sortable labels.
    pub fn from_dense(rows: &[Vec<u8>]) -> Self {
        let lw = rows.len().saturating_sub(1).to_string().len();
        let n_art = rows.first().map_or(0, Vec::len);
        let aw = n_art.saturating_sub(1).to_string().len();
        let languages = Index::from_labels((0..rows.len()).map(|i| format!("l{i:0lw$}")));
        let articles = Index::from_labels((0..n_art).map(|j| format!("a{j:0aw$}")));
        let set = rows.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &b)| b != 0)
                .map(move |(j, _)| (i, j))
        });
        Self::new(languages, articles, set)
    }

    pub fn languages(&self) -> &Index {
        &self.languages
    }

    pub fn articles(&self) -> &Index {
        &self.articles
    }

    pub fn bits(&self) -> &Csr<u8> {
        &self.bits
    }

    pub fn prune_report(&self) -> &PruneReport {
        &self.prune_report
    }

    pub fn is_set(&self, l: usize, a: usize) -> bool {
        self.bits.get(l, a).is_some()
    }

    pub fn n_set(&self) -> usize {
        self.bits.nnz()
    }

    /// Dense row-major copy, `[language][article]`.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut d = vec![vec![0u8; self.articles.len()]; self.languages.len()];
        for (r, c, _) in self.bits.iter() {
            d[r][c] = 1;
        }
        d
    }

    /// Drops languages and articles without any set bit.
    pub fn pruned(&self) -> Result<AdvantageMatrix> {
        let mut row_keep = vec![false; self.languages.len()];
        let mut col_keep = vec![false; self.articles.len()];
        for (r, c, _) in self.bits.iter() {
            row_keep[r] = true;
            col_keep[c] = true;
        }
        let (languages, lmap, dl) = self.languages.restrict(&row_keep);
        let (articles, amap, da) = self.articles.restrict(&col_keep);
        if languages.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let bits = self
            .bits
            .filter_remap(|_| true, &lmap, &amap, languages.len(), articles.len());
        let mut prune_report = self.prune_report.clone();
        prune_report.absorb(dl, da);
        Ok(AdvantageMatrix {
            languages,
            articles,
            bits,
            prune_report,
        })
    }

    /// Content digest of the canonical triplet form.
    pub fn digest(&self) -> String {
        let csv = self.to_csv().expect("in-memory csv");
        sha256_hex(&csv)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        io::write_triplet_csv(
            MatrixKind::Advantage,
            self.bits.iter().map(|(r, c, _)| {
                (
                    self.languages.label(r).to_string(),
                    self.articles.label(c).to_string(),
                    "1".to_string(),
                )
            }),
        )
    }

    pub fn manifest(&self) -> MatrixManifest {
        MatrixManifest {
            format_version: FORMAT_VERSION,
            kind: MatrixKind::Advantage,
            languages: self.languages.clone(),
            articles: self.articles.clone(),
            slice_meta: None,
            prune_report: self.prune_report.clone(),
        }
    }

    pub fn from_csv<R: Read>(reader: R, manifest: Option<&MatrixManifest>) -> Result<Self> {
        let raw = io::read_triplets(reader, MatrixKind::Advantage)?;
        let vals = io::parse_values(&raw, |s| match s {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(format!("bad advantage bit `{s}`")),
        })?;
        let (languages, articles, keys) = io::resolve_indices(&raw, manifest)?;
        let set: Vec<_> = keys
            .iter()
            .filter(|&&(_, _, i)| vals[i])
            .map(|&(r, c, _)| (r, c))
            .collect();
        let mut m = AdvantageMatrix::new(languages, articles, set);
        if let Some(man) = manifest {
            m.prune_report = man.prune_report.clone();
        }
        Ok(m)
    }
}

/// Sets the bit where `RCA >= threshold` and prunes languages/articles left
/// without any bit.
pub fn binarize(rca: &RcaMatrix, threshold: f64) -> Result<AdvantageMatrix> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Invalid(format!("threshold must be positive, got {threshold}")));
    }
    let set: Vec<(usize, usize)> = rca
        .values
        .iter()
        .filter(|&(_, _, v)| v >= threshold)
        .map(|(r, c, _)| (r, c))
        .collect();
    if set.is_empty() {
        return Err(Error::EmptyAdvantage { threshold });
    }
    AdvantageMatrix::new(rca.languages.clone(), rca.articles.clone(), set).pruned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_rca(m: &RcaMatrix) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; m.articles.len()]; m.languages.len()];
        for (r, c, v) in m.values.iter() {
            d[r][c] = v;
        }
        d
    }

    #[test]
    fn uniform_counts_give_unit_rca() {
        let m = ActivityMatrix::from_dense(&[vec![1, 1], vec![1, 1]]).unwrap();
        let rca = compute_rca(&m).unwrap();
        assert!(rca.values.iter().all(|(_, _, v)| v == 1.0));
    }

    #[test]
    fn two_by_two_hand_evaluation() {
        // Row shares 4/5 and 1/5; global shares 1/2 each.
        let m = ActivityMatrix::from_dense(&[vec![4, 1], vec![1, 4]]).unwrap();
        let d = dense_rca(&compute_rca(&m).unwrap());
        let want = [[1.6, 0.4], [0.4, 1.6]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((d[i][j] - want[i][j]).abs() < 1e-15, "{i}{j}: {}", d[i][j]);
            }
        }
        let adv = binarize(&compute_rca(&m).unwrap(), 1.0).unwrap();
        assert_eq!(adv.to_dense(), vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = ActivityMatrix::from_dense(&[vec![1, 1], vec![1, 1]]).unwrap();
        let adv = binarize(&compute_rca(&m).unwrap(), 1.0).unwrap();
        assert_eq!(adv.n_set(), 4);
    }

    #[test]
    fn all_below_threshold_errors() {
        let m = ActivityMatrix::from_dense(&[vec![1, 1], vec![1, 1]]).unwrap();
        let rca = compute_rca(&m).unwrap();
        assert!(matches!(binarize(&rca, 1.5), Err(Error::EmptyAdvantage { .. })));
        assert!(binarize(&rca, 0.0).is_err());
    }

    #[test]
    fn binarize_prunes_and_reports() {
        // l2 edits in proportion to the global shares and a2 is edited in
        // proportion to every language's size, so both sit at RCA 1 < 1.2.
        let m = ActivityMatrix::from_dense(&[vec![9, 1, 5], vec![1, 9, 5], vec![10, 10, 10]])
            .unwrap();
        let rca = compute_rca(&m).unwrap();
        let adv = binarize(&rca, 1.2).unwrap();
        assert_eq!(adv.languages().labels(), ["l0", "l1"]);
        assert_eq!(adv.articles().labels(), ["a0", "a1"]);
        assert_eq!(adv.prune_report().dropped_languages, ["l2"]);
        assert_eq!(adv.prune_report().dropped_articles, ["a2"]);
    }

    #[test]
    fn advantage_csv_round_trip() {
        let adv = AdvantageMatrix::from_dense(&[vec![1, 0], vec![1, 1]]);
        let csv = adv.to_csv().unwrap();
        let back = AdvantageMatrix::from_csv(csv.as_slice(), Some(&adv.manifest())).unwrap();
        assert_eq!(back, adv);
        assert_eq!(back.digest(), adv.digest());
    }

    #[test]
    fn rca_csv_round_trip_is_bit_exact() {
        let m = ActivityMatrix::from_dense(&[vec![7, 1, 3], vec![2, 11, 5]]).unwrap();
        let rca = compute_rca(&m).unwrap();
        let back = RcaMatrix::from_csv(rca.to_csv().unwrap().as_slice(), Some(&rca.manifest()))
            .unwrap();
        assert_eq!(back, rca);
    }
}
