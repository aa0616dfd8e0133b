//! CSV-triplet + JSON-manifest interchange shared by every labeled matrix.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Index, PruneReport, SliceMeta};
use crate::error::{Error, Result, RowError};
use crate::output::{sidecar_path, to_json_pretty, write_atomic};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Activity,
    Rca,
    Advantage,
}

impl MatrixKind {
    pub fn value_column(self) -> &'static str {
        match self {
            MatrixKind::Activity => "count",
            MatrixKind::Rca => "rca",
            MatrixKind::Advantage => "m",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixManifest {
    pub format_version: u32,
    pub kind: MatrixKind,
    pub languages: Index,
    pub articles: Index,
    #[serde(default)]
    pub slice_meta: Option<SliceMeta>,
    #[serde(default)]
    pub prune_report: PruneReport,
}

/// A parsed triplet with the line it came from.
pub(crate) struct RawTriplet {
    pub line: u64,
    pub language: String,
    pub article: String,
    pub value: String,
}

pub(crate) fn read_triplets<R: Read>(reader: R, kind: MatrixKind) -> Result<Vec<RawTriplet>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let expected = ["language", "article", kind.value_column()];
    if header.iter().ne(expected) {
        return Err(Error::Rows(vec![RowError {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        }]));
    }
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    line: e.position().map(|p| p.line()).unwrap_or(0),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            errors.push(RowError {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
            continue;
        }
        if rec[0].is_empty() || rec[1].is_empty() {
            errors.push(RowError {
                line,
                message: "empty language or article".into(),
            });
            continue;
        }
        if !seen.insert((rec[0].to_string(), rec[1].to_string())) {
            errors.push(RowError {
                line,
                message: format!("duplicate entry ({},{})", &rec[0], &rec[1]),
            });
            continue;
        }
        out.push(RawTriplet {
            line,
            language: rec[0].to_string(),
            article: rec[1].to_string(),
            value: rec[2].to_string(),
        });
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Rows(errors))
    }
}

/// Parses triplet values, collecting failures per line.
pub(crate) fn parse_values<T>(
    raw: &[RawTriplet],
    mut parse: impl FnMut(&str) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let mut vals = Vec::with_capacity(raw.len());
    let mut errors = Vec::new();
    for t in raw {
        match parse(&t.value) {
            Ok(v) => vals.push(v),
            Err(message) => errors.push(RowError {
                line: t.line,
                message,
            }),
        }
    }
    if errors.is_empty() {
        Ok(vals)
    } else {
        Err(Error::Rows(errors))
    }
}

/// Resolves the row/column indices, either from the manifest or from the
/// labels present in the triplets, and returns sorted `(row, col, position)`
/// keys into `raw`.
pub(crate) fn resolve_indices(
    raw: &[RawTriplet],
    manifest: Option<&MatrixManifest>,
) -> Result<(Index, Index, Vec<(usize, usize, usize)>)> {
    let (languages, articles) = match manifest {
        Some(m) => (m.languages.clone(), m.articles.clone()),
        None => (
            Index::from_labels(raw.iter().map(|t| t.language.clone())),
            Index::from_labels(raw.iter().map(|t| t.article.clone())),
        ),
    };
    let mut keys = Vec::with_capacity(raw.len());
    let mut errors = Vec::new();
    for (i, t) in raw.iter().enumerate() {
        match (languages.position(&t.language), articles.position(&t.article)) {
            (Some(r), Some(c)) => keys.push((r, c, i)),
            _ => errors.push(RowError {
                line: t.line,
                message: format!("({},{}) not in manifest index", t.language, t.article),
            }),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Rows(errors));
    }
    keys.sort_unstable();
    Ok((languages, articles, keys))
}

pub(crate) fn write_triplet_csv(
    kind: MatrixKind,
    rows: impl Iterator<Item = (String, String, String)>,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["language", "article", kind.value_column()])?;
    for (l, a, v) in rows {
        w.write_record([l, a, v])?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<csv>", e.into_error()))
}

pub fn read_manifest(path: &Path) -> Result<MatrixManifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let m: MatrixManifest = serde_json::from_slice(&bytes)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Invalid(format!(
            "{}: unsupported format_version {}",
            path.display(),
            m.format_version
        )));
    }
    Ok(m)
}

/// Loads the sidecar manifest next to `csv_path` if one exists.
pub fn read_sidecar(csv_path: &Path) -> Result<Option<MatrixManifest>> {
    let side = sidecar_path(csv_path);
    if side.exists() {
        read_manifest(&side).map(Some)
    } else {
        Ok(None)
    }
}

pub fn write_with_sidecar(csv_path: &Path, csv: &[u8], manifest: &MatrixManifest) -> Result<()> {
    write_atomic(csv_path, csv)?;
    write_atomic(&sidecar_path(csv_path), &to_json_pretty(manifest)?)
}
