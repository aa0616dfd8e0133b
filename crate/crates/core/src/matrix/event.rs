//! Edit-event records and their tab-separated interchange format.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};

pub const EVENT_HEADER: [&str; 7] = [
    "language",
    "article",
    "editor",
    "timestamp",
    "checksum",
    "is_bot",
    "genre_tags",
];

/// One revision. `article` is the cross-lingual key (QID-style); per-language
/// titles live in the article listing produced at ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditEvent {
    pub language: String,
    pub article: String,
    pub editor: String,
    pub timestamp: DateTime<Utc>,
    pub checksum: Option<String>,
    pub is_bot: bool,
    pub genre_tags: BTreeSet<String>,
}

impl EditEvent {
    pub fn new(
        language: impl Into<String>,
        article: impl Into<String>,
        editor: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        EditEvent {
            language: language.into(),
            article: article.into(),
            editor: editor.into(),
            timestamp,
            checksum: None,
            is_bot: false,
            genre_tags: BTreeSet::new(),
        }
    }

    pub fn with_checksum(mut self, checksum: impl Into<String>) -> Self {
        self.checksum = Some(checksum.into());
        self
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.genre_tags = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn bot(mut self, is_bot: bool) -> Self {
        self.is_bot = is_bot;
        self
    }
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "TRUE" | "True" => Some(true),
        "false" | "0" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

fn parse_row(fields: &csv::StringRecord) -> std::result::Result<EditEvent, String> {
    if fields.len() != EVENT_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            EVENT_HEADER.len(),
            fields.len()
        ));
    }
    let language = &fields[0];
    let article = &fields[1];
    if language.is_empty() {
        return Err("empty language".into());
    }
    if article.is_empty() {
        return Err("empty article".into());
    }
    let timestamp =
        parse_timestamp(&fields[3]).ok_or_else(|| format!("bad timestamp `{}`", &fields[3]))?;
    let is_bot = parse_bool(&fields[5]).ok_or_else(|| format!("bad is_bot `{}`", &fields[5]))?;
    let checksum = (!fields[4].is_empty()).then(|| fields[4].to_string());
    let genre_tags = fields[6]
        .split('|')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    Ok(EditEvent {
        language: language.to_string(),
        article: article.to_string(),
        editor: fields[2].to_string(),
        timestamp,
        checksum,
        is_bot,
        genre_tags,
    })
}

/// Reads the edit-event TSV. All malformed rows are collected and reported
/// together with their line numbers.
pub fn read_events<R: Read>(reader: R) -> Result<Vec<EditEvent>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(EVENT_HEADER.iter().copied()) {
        return Err(Error::Rows(vec![RowError {
            line: 1,
            message: format!("expected header `{}`", EVENT_HEADER.join("\t")),
        }]));
    }
    let mut events = Vec::new();
    let mut errors = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                match parse_row(&record) {
                    Ok(ev) => events.push(ev),
                    Err(message) => errors.push(RowError { line, message }),
                }
            }
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    if errors.is_empty() {
        Ok(events)
    } else {
        Err(Error::Rows(errors))
    }
}

pub fn write_events<'a, W: Write>(
    writer: W,
    events: impl IntoIterator<Item = &'a EditEvent>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(writer);
    w.write_record(EVENT_HEADER)?;
    for ev in events {
        let tags = ev.genre_tags.iter().cloned().collect::<Vec<_>>().join("|");
        w.write_record([
            ev.language.as_str(),
            ev.article.as_str(),
            ev.editor.as_str(),
            &format_timestamp(&ev.timestamp),
            ev.checksum.as_deref().unwrap_or(""),
            if ev.is_bot { "true" } else { "false" },
            &tags,
        ])?;
    }
    w.flush().map_err(|e| Error::io("<events>", e))?;
    Ok(())
}

/// Parent/child topic labels for an article, as ingested from
/// `article,parent_topic,child_topic`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicLabel {
    pub parent: String,
    pub child: String,
}

pub fn read_topics<R: Read>(reader: R) -> Result<BTreeMap<String, TopicLabel>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["article", "parent_topic", "child_topic"]) {
        return Err(Error::Rows(vec![RowError {
            line: 1,
            message: "expected header `article,parent_topic,child_topic`".into(),
        }]));
    }
    let mut out = BTreeMap::new();
    let mut errors = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 || rec[0].is_empty() {
            errors.push(RowError {
                line,
                message: "expected article,parent_topic,child_topic".into(),
            });
            continue;
        }
        let label = TopicLabel {
            parent: rec[1].to_string(),
            child: rec[2].to_string(),
        };
        if out.insert(rec[0].to_string(), label).is_some() {
            errors.push(RowError {
                line,
                message: format!("duplicate article `{}`", &rec[0]),
            });
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Rows(errors))
    }
}

/// Adds each article's parent and child topic as genre tags, so topic slices
/// select events the same way genre slices do.
pub fn apply_topic_labels(events: &mut [EditEvent], topics: &BTreeMap<String, TopicLabel>) {
    for ev in events {
        if let Some(t) = topics.get(&ev.article) {
            if !t.parent.is_empty() {
                ev.genre_tags.insert(t.parent.clone());
            }
            if !t.child.is_empty() {
                ev.genre_tags.insert(t.child.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "language\tarticle\teditor\ttimestamp\tchecksum\tis_bot\tgenre_tags\n\
en\tQ1\talice\t2016-03-01T10:00:00Z\tabc\tfalse\tcooking|science\n\
de\tQ2\tbob\t2017-01-01T00:00:00Z\t\ttrue\t\n";

    #[test]
    fn parses_sample() {
        let evs = read_events(SAMPLE.as_bytes()).unwrap();
        assert_eq!(evs.len(), 2);
        assert_eq!(evs[0].genre_tags.len(), 2);
        assert_eq!(evs[0].checksum.as_deref(), Some("abc"));
        assert!(evs[1].checksum.is_none());
        assert!(evs[1].is_bot);
        assert!(evs[1].genre_tags.is_empty());
    }

    #[test]
    fn write_then_read_is_identity() {
        let evs = read_events(SAMPLE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_events(&mut buf, &evs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), SAMPLE);
    }

    #[test]
    fn aggregates_row_errors_with_line_numbers() {
        let bad = "language\tarticle\teditor\ttimestamp\tchecksum\tis_bot\tgenre_tags\n\
en\tQ1\ta\tnot-a-date\t\tfalse\t\n\
en\tQ1\ta\t2016-01-01T00:00:00Z\t\tfalse\t\n\
\tQ1\ta\t2016-01-01T00:00:00Z\t\tmaybe\t\n";
        match read_events(bad.as_bytes()) {
            Err(Error::Rows(rows)) => {
                assert_eq!(rows.len(), 2);
                assert_eq!(rows[0].line, 2);
                assert_eq!(rows[1].line, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(read_events("a\tb\n".as_bytes()).is_err());
    }

    #[test]
    fn topic_labels_become_tags() {
        let topics = read_topics("article,parent_topic,child_topic\nQ1,STEM,Physics\n".as_bytes())
            .unwrap();
        let mut evs = read_events(SAMPLE.as_bytes()).unwrap();
        apply_topic_labels(&mut evs, &topics);
        assert!(evs[0].genre_tags.contains("STEM"));
        assert!(evs[0].genre_tags.contains("Physics"));
        assert!(!evs[1].genre_tags.contains("STEM"));
    }
}
