use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::{DateTime, Datelike, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::event::EditEvent;
use super::io::{self, MatrixKind, MatrixManifest, FORMAT_VERSION};
use super::Index;
use crate::error::{Error, Result};
use crate::sparse::Csr;

/// Selection of events feeding one matrix: a genre/topic label and an
/// inclusive year range, both optional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSlice {
    #[serde(default)]
    pub genre_or_topic: Option<String>,
    #[serde(default)]
    pub year_range: Option<(i32, i32)>,
    /// Parent topic of a child-topic slice, carried as metadata.
    #[serde(default)]
    pub parent_topic: Option<String>,
}

impl CorpusSlice {
    pub fn all() -> Self {
        CorpusSlice::default()
    }

    pub fn genre(label: impl Into<String>) -> Self {
        CorpusSlice {
            genre_or_topic: Some(label.into()),
            ..Default::default()
        }
    }

    pub fn years(mut self, from: i32, to: i32) -> Self {
        self.year_range = Some((from, to));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((from, to)) = self.year_range {
            if from > to {
                return Err(Error::Invalid(format!("year range {from}..{to} is reversed")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, ev: &EditEvent) -> bool {
        if let Some(label) = &self.genre_or_topic {
            if !ev.genre_tags.contains(label) {
                return false;
            }
        }
        match self.year_range {
            Some((from, to)) => (from..=to).contains(&ev.timestamp.year()),
            None => true,
        }
    }

    fn meta(&self) -> Option<SliceMeta> {
        if self.genre_or_topic.is_none() && self.year_range.is_none() {
            return None;
        }
        Some(SliceMeta {
            label: self.genre_or_topic.clone(),
            parent_topic: self.parent_topic.clone(),
            window: self
                .year_range
                .map(|(from, to)| TimeWindow::years(from, to + 1)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeWindow {
    /// `[Jan 1 from, Jan 1 until)`.
    pub fn years(from: i32, until: i32) -> Self {
        TimeWindow {
            start: year_start(from),
            end: year_start(until),
        }
    }
}

fn year_start(year: i32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(year, 1, 1, 0, 0, 0)
        .single()
        .expect("valid year")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceMeta {
    pub label: Option<String>,
    #[serde(default)]
    pub parent_topic: Option<String>,
    pub window: Option<TimeWindow>,
}

/// Labels removed by pruning, accumulated across pruning passes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    pub dropped_languages: Vec<String>,
    pub dropped_articles: Vec<String>,
}

impl PruneReport {
    pub fn is_empty(&self) -> bool {
        self.dropped_languages.is_empty() && self.dropped_articles.is_empty()
    }

    pub(crate) fn absorb(&mut self, langs: Vec<String>, arts: Vec<String>) {
        self.dropped_languages.extend(langs);
        self.dropped_articles.extend(arts);
        self.dropped_languages.sort();
        self.dropped_articles.sort();
    }
}

/// Edit counts `E[language][article]`. Only positive counts are stored and
/// every row and column has at least one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMatrix {
    languages: Index,
    articles: Index,
    counts: Csr<u64>,
    slice_meta: Option<SliceMeta>,
    prune_report: PruneReport,
}

/// Output of [`prune`]: the narrowed matrix plus old -> new index maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub matrix: ActivityMatrix,
    pub language_map: Vec<Option<usize>>,
    pub article_map: Vec<Option<usize>>,
}

impl ActivityMatrix {
    /// Builds from `(language, article) -> count`. Zero counts are dropped;
    /// labels with no positive count do not enter the index.
    pub fn from_counts<L, A>(counts: impl IntoIterator<Item = ((L, A), u64)>) -> Result<Self>
    where
        L: Into<String>,
        A: Into<String>,
    {
        let mut map: BTreeMap<(String, String), u64> = BTreeMap::new();
        for ((l, a), c) in counts {
            if c > 0 {
                *map.entry((l.into(), a.into())).or_default() += c;
            }
        }
        Self::from_map(map, None)
    }

    fn from_map(map: BTreeMap<(String, String), u64>, slice_meta: Option<SliceMeta>) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let languages = Index::from_labels(map.keys().map(|(l, _)| l.as_str()));
        let articles = Index::from_labels(map.keys().map(|(_, a)| a.as_str()));
        let mut triplets: Vec<(usize, usize, u64)> = map
            .iter()
            .map(|((l, a), &c)| {
                (
                    languages.position(l).expect("indexed"),
                    articles.position(a).expect("indexed"),
                    c,
                )
            })
            .collect();
        triplets.sort_unstable();
        let counts = Csr::from_sorted_triplets(languages.len(), articles.len(), triplets);
        Ok(ActivityMatrix {
            languages,
            articles,
            counts,
            slice_meta,
            prune_report: PruneReport::default(),
        })
    }

    /// Dense constructor for small fixtures: `rows[l][a]` with generated
    /// labels `l0, l1, ...` and `a0, a1, ...` zero-padded to sort correctly.
    pub fn from_dense(rows: &[Vec<u64>]) -> Result<Self> {
        let lw = digits(rows.len());
        let aw = digits(rows.first().map_or(0, Vec::len));
        Self::from_counts(rows.iter().enumerate().flat_map(|(i, row)| {
            row.iter().enumerate().map(move |(j, &c)| {
                ((format!("l{i:0lw$}"), format!("a{j:0aw$}")), c)
            })
        }))
    }

    pub fn languages(&self) -> &Index {
        &self.languages
    }

    pub fn articles(&self) -> &Index {
        &self.articles
    }

    pub fn counts(&self) -> &Csr<u64> {
        &self.counts
    }

    pub fn slice_meta(&self) -> Option<&SliceMeta> {
        self.slice_meta.as_ref()
    }

    pub fn prune_report(&self) -> &PruneReport {
        &self.prune_report
    }

    pub fn get(&self, language: &str, article: &str) -> u64 {
        match (self.languages.position(language), self.articles.position(article)) {
            (Some(r), Some(c)) => self.counts.get(r, c).unwrap_or(0),
            _ => 0,
        }
    }

    pub fn total(&self) -> u128 {
        self.counts.iter().map(|(_, _, c)| c as u128).sum()
    }

    pub fn row_totals(&self) -> Vec<u128> {
        (0..self.counts.rows())
            .map(|r| self.counts.row(r).map(|(_, c)| c as u128).sum())
            .collect()
    }

    pub fn col_totals(&self) -> Vec<u128> {
        let mut t = vec![0u128; self.counts.cols()];
        for (_, c, v) in self.counts.iter() {
            t[c] += v as u128;
        }
        t
    }

    /// Iterates `(language, article, count)` in canonical order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, u64)> + '_ {
        self.counts
            .iter()
            .map(|(r, c, v)| (self.languages.label(r), self.articles.label(c), v))
    }

    /// Entrywise sum of two shards. Slice metadata of `self` is kept.
    pub fn merge(&self, other: &ActivityMatrix) -> ActivityMatrix {
        let mut map: BTreeMap<(String, String), u64> = BTreeMap::new();
        for m in [self, other] {
            for (l, a, c) in m.entries() {
                *map.entry((l.to_string(), a.to_string())).or_default() += c;
            }
        }
        let mut merged = Self::from_map(map, self.slice_meta.clone()).expect("non-empty inputs");
        merged.prune_report = self.prune_report.clone();
        merged
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        io::write_triplet_csv(
            MatrixKind::Activity,
            self.entries()
                .map(|(l, a, c)| (l.to_string(), a.to_string(), c.to_string())),
        )
    }

    pub fn manifest(&self) -> MatrixManifest {
        MatrixManifest {
            format_version: FORMAT_VERSION,
            kind: MatrixKind::Activity,
            languages: self.languages.clone(),
            articles: self.articles.clone(),
            slice_meta: self.slice_meta.clone(),
            prune_report: self.prune_report.clone(),
        }
    }

    /// Parses triplets, taking indices and metadata from `manifest` when given.
    pub fn from_csv<R: Read>(reader: R, manifest: Option<&MatrixManifest>) -> Result<Self> {
        if let Some(m) = manifest {
            if m.kind != MatrixKind::Activity {
                return Err(Error::Invalid(format!("manifest kind {:?} is not activity", m.kind)));
            }
        }
        let raw = io::read_triplets(reader, MatrixKind::Activity)?;
        let values = io::parse_values(&raw, |s| match s.parse::<u64>() {
            Ok(0) => Err("zero count stored".to_string()),
            Ok(v) => Ok(v),
            Err(_) => Err(format!("bad count `{s}`")),
        })?;
        let (languages, articles, keys) = io::resolve_indices(&raw, manifest)?;
        if keys.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let counts = Csr::from_sorted_triplets(
            languages.len(),
            articles.len(),
            keys.iter().map(|&(r, c, i)| (r, c, values[i])).collect::<Vec<_>>(),
        );
        let m = ActivityMatrix {
            languages,
            articles,
            counts,
            slice_meta: manifest.and_then(|m| m.slice_meta.clone()),
            prune_report: manifest.map(|m| m.prune_report.clone()).unwrap_or_default(),
        };
        if m.row_totals().contains(&0) || m.col_totals().contains(&0) {
            return Err(Error::Invalid("manifest index has an all-zero row or column".into()));
        }
        Ok(m)
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

/// Counts non-excluded events inside `slice` per (language, article).
pub fn build_activity_matrix<'a>(
    events: impl IntoIterator<Item = &'a EditEvent>,
    slice: &CorpusSlice,
    exclude_bots: bool,
) -> Result<ActivityMatrix> {
    slice.validate()?;
    let mut map: BTreeMap<(String, String), u64> = BTreeMap::new();
    for ev in events {
        if (exclude_bots && ev.is_bot) || !slice.contains(ev) {
            continue;
        }
        // Avoid allocating for keys already present.
        let key = (ev.language.clone(), ev.article.clone());
        *map.entry(key).or_default() += 1;
    }
    ActivityMatrix::from_map(map, slice.meta())
}

/// Removes rows with total below `min_row_total` and columns below
/// `min_col_total`, repeating until nothing changes.
pub fn prune(matrix: &ActivityMatrix, min_row_total: u64, min_col_total: u64) -> Result<Pruned> {
    if min_row_total == 0 || min_col_total == 0 {
        return Err(Error::Invalid("prune thresholds must be at least 1".into()));
    }
    let counts = &matrix.counts;
    let mut row_alive = vec![true; counts.rows()];
    let mut col_alive = vec![true; counts.cols()];
    loop {
        let mut rows = vec![0u128; counts.rows()];
        let mut cols = vec![0u128; counts.cols()];
        for (r, c, v) in counts.iter() {
            if row_alive[r] && col_alive[c] {
                rows[r] += v as u128;
                cols[c] += v as u128;
            }
        }
        let mut changed = false;
        for (alive, total) in row_alive.iter_mut().zip(&rows) {
            if *alive && *total < min_row_total as u128 {
                *alive = false;
                changed = true;
            }
        }
        for (alive, total) in col_alive.iter_mut().zip(&cols) {
            if *alive && *total < min_col_total as u128 {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let (languages, language_map, dropped_l) = matrix.languages.restrict(&row_alive);
    let (articles, article_map, dropped_a) = matrix.articles.restrict(&col_alive);
    if languages.is_empty() || articles.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let new_counts = counts.filter_remap(
        |_| true,
        &language_map,
        &article_map,
        languages.len(),
        articles.len(),
    );
    let mut prune_report = matrix.prune_report.clone();
    prune_report.absorb(dropped_l, dropped_a);
    Ok(Pruned {
        matrix: ActivityMatrix {
            languages,
            articles,
            counts: new_counts,
            slice_meta: matrix.slice_meta.clone(),
            prune_report,
        },
        language_map,
        article_map,
    })
}

/// Events whose timestamp lies in `[Jan 1 year, Jan 1 year+1)` UTC.
pub fn slice_by_year<'a, I>(events: I, year: i32) -> impl Iterator<Item = &'a EditEvent>
where
    I: IntoIterator<Item = &'a EditEvent>,
{
    let window = TimeWindow::years(year, year + 1);
    events
        .into_iter()
        .filter(move |ev| ev.timestamp >= window.start && ev.timestamp < window.end)
}

/// Years spanned by the events, in order.
pub fn event_years<'a>(events: impl IntoIterator<Item = &'a EditEvent>) -> BTreeSet<i32> {
    events.into_iter().map(|e| e.timestamp.year()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> DateTime<Utc> {
        crate::matrix::parse_timestamp(s).unwrap()
    }

    fn ev(l: &str, a: &str) -> EditEvent {
        EditEvent::new(l, a, "ed", ts("2016-05-05T00:00:00Z"))
    }

    #[test]
    fn counts_three_events() {
        let evs = vec![ev("en", "Q1"), ev("en", "Q1"), ev("de", "Q2")];
        let m = build_activity_matrix(&evs, &CorpusSlice::all(), true).unwrap();
        assert_eq!(m.get("en", "Q1"), 2);
        assert_eq!(m.get("de", "Q2"), 1);
        assert_eq!(m.get("de", "Q1"), 0);
        assert_eq!(m.counts().nnz(), 2);
        assert_eq!(m.languages().labels(), ["de", "en"]);
    }

    #[test]
    fn only_bot_events_is_empty() {
        let evs = vec![ev("en", "Q1").bot(true)];
        assert!(matches!(
            build_activity_matrix(&evs, &CorpusSlice::all(), true),
            Err(Error::EmptyMatrix)
        ));
        assert!(build_activity_matrix(&evs, &CorpusSlice::all(), false).is_ok());
    }

    #[test]
    fn genre_and_year_slicing() {
        let evs = vec![
            ev("en", "Q1").with_tags(["science"]),
            ev("en", "Q2").with_tags(["cooking"]),
            EditEvent::new("en", "Q1", "x", ts("2019-01-01T00:00:00Z")).with_tags(["science"]),
        ];
        let m = build_activity_matrix(&evs, &CorpusSlice::genre("science").years(2016, 2018), true)
            .unwrap();
        assert_eq!(m.total(), 1);
        let meta = m.slice_meta().unwrap();
        assert_eq!(meta.label.as_deref(), Some("science"));
        assert_eq!(meta.window.as_ref().unwrap().end, ts("2019-01-01T00:00:00Z"));
        assert!(CorpusSlice::all().years(2019, 2016).validate().is_err());
    }

    #[test]
    fn year_slice_is_half_open() {
        let inside = EditEvent::new("en", "Q1", "e", ts("2015-12-31T23:59:59Z"));
        let outside = EditEvent::new("en", "Q1", "e", ts("2016-01-01T00:00:00Z"));
        let evs = [inside.clone(), outside];
        let got: Vec<_> = slice_by_year(&evs, 2015).cloned().collect();
        assert_eq!(got, vec![inside]);
    }

    #[test]
    fn prune_with_unit_thresholds_is_identity() {
        let m = ActivityMatrix::from_dense(&[vec![1, 0, 3], vec![0, 2, 0]]).unwrap();
        let p = prune(&m, 1, 1).unwrap();
        assert_eq!(p.matrix, m);
        assert!(p.language_map.iter().all(Option::is_some));
    }

    #[test]
    fn prune_fixpoint_hand_trace() {
        // Column a2 has total 1 and goes first; row l2 then only had that
        // entry, so it empties and is removed in the second pass.
        let m = ActivityMatrix::from_dense(&[vec![2, 1, 0], vec![1, 3, 0], vec![0, 0, 1]]).unwrap();
        let p = prune(&m, 1, 2).unwrap();
        assert_eq!(p.matrix.languages().labels(), ["l0", "l1"]);
        assert_eq!(p.matrix.articles().labels(), ["a0", "a1"]);
        assert_eq!(p.article_map, vec![Some(0), Some(1), None]);
        assert_eq!(p.language_map, vec![Some(0), Some(1), None]);
        assert_eq!(p.matrix.prune_report().dropped_articles, ["a2"]);
        assert_eq!(p.matrix.prune_report().dropped_languages, ["l2"]);
    }

    #[test]
    fn prune_cascades_across_passes() {
        // Dropping l1 (total 2 < 3) leaves a1 with total 1 < 2.
        let m = ActivityMatrix::from_dense(&[vec![5, 1], vec![1, 1]]).unwrap();
        let p = prune(&m, 3, 2).unwrap();
        assert_eq!(p.matrix.languages().labels(), ["l0"]);
        assert_eq!(p.matrix.articles().labels(), ["a0"]);
    }

    #[test]
    fn prune_to_nothing_errors() {
        let m = ActivityMatrix::from_dense(&[vec![1]]).unwrap();
        assert!(matches!(prune(&m, 2, 1), Err(Error::EmptyMatrix)));
        assert!(prune(&m, 0, 1).is_err());
    }

    #[test]
    fn csv_round_trip_with_manifest() {
        let m = ActivityMatrix::from_dense(&[vec![1, 0, 3], vec![0, 2, 0]]).unwrap();
        let csv = m.to_csv().unwrap();
        assert_eq!(
            std::str::from_utf8(&csv).unwrap(),
            "language,article,count\nl0,a0,1\nl0,a2,3\nl1,a1,2\n"
        );
        let back = ActivityMatrix::from_csv(csv.as_slice(), Some(&m.manifest())).unwrap();
        assert_eq!(back, m);
        let bare = ActivityMatrix::from_csv(csv.as_slice(), None).unwrap();
        assert_eq!(bare, m);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let bad = "language,article,count\nen,Q1,x\nen,Q2,0\nen,Q3,2\nen,Q3,1\n";
        match ActivityMatrix::from_csv(bad.as_bytes(), None) {
            Err(Error::Rows(rows)) => {
                assert_eq!(rows.iter().map(|r| r.line).collect::<Vec<_>>(), vec![5]);
            }
            other => panic!("{other:?}"),
        }
        let bad = "language,article,count\nen,Q1,x\nen,Q2,0\n";
        match ActivityMatrix::from_csv(bad.as_bytes(), None) {
            Err(Error::Rows(rows)) => {
                assert_eq!(rows.iter().map(|r| r.line).collect::<Vec<_>>(), vec![2, 3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn merge_sums_entrywise() {
        let a = ActivityMatrix::from_counts([(("en", "Q1"), 2u64)]).unwrap();
        let b = ActivityMatrix::from_counts([(("en", "Q1"), 1u64), (("de", "Q1"), 4)]).unwrap();
        let m = a.merge(&b);
        assert_eq!(m.get("en", "Q1"), 3);
        assert_eq!(m.get("de", "Q1"), 4);
        assert_eq!(m, b.merge(&a));
    }
}
