//! Editing sessions and the dancer score: mean semantic distance between
//! consecutively edited articles.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};
use crate::matrix::EditEvent;

pub const DEFAULT_SESSION_TIMEOUT_MINUTES: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub language: String,
    pub editor: String,
    pub edits: Vec<(String, DateTime<Utc>)>,
    pub timeout_minutes: i64,
}

/// Splits each editor's edits wherever the gap reaches `timeout`.
pub fn sessionize(events: &[EditEvent], timeout: Duration) -> Vec<Session> {
    let mut by_editor: BTreeMap<(&str, &str), Vec<&EditEvent>> = BTreeMap::new();
    for e in events {
        by_editor.entry((&e.language, &e.editor)).or_default().push(e);
    }
    let mut out = Vec::new();
    for ((lang, editor), mut evs) in by_editor {
        evs.sort_by_key(|e| e.timestamp);
        let mut current: Vec<(String, DateTime<Utc>)> = Vec::new();
        for e in evs {
            if current.last().is_some_and(|&(_, t)| e.timestamp - t >= timeout) {
                out.push(Session {
                    language: lang.to_string(),
                    editor: editor.to_string(),
                    edits: std::mem::take(&mut current),
                    timeout_minutes: timeout.num_minutes(),
                });
            }
            current.push((e.article.clone(), e.timestamp));
        }
        out.push(Session {
            language: lang.to_string(),
            editor: editor.to_string(),
            edits: current,
            timeout_minutes: timeout.num_minutes(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DancerScore {
    /// `None` when no step could be scored.
    pub score: Option<f64>,
    pub steps: usize,
    pub skipped: usize,
}

/// Mean of `1 - cos(e_prev, e_next)` over consecutive steps between distinct
/// articles. Steps touching an article without an embedding are skipped.
pub fn dancer_score(articles: &[&str], embeddings: &HashMap<String, Vec<f64>>) -> DancerScore {
    let (mut sum, mut steps, mut skipped) = (0.0, 0, 0);
    for w in articles.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        match (embeddings.get(w[0]), embeddings.get(w[1])) {
            (Some(a), Some(b)) => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                sum += 1.0 - dot.clamp(-1.0, 1.0);
                steps += 1;
            }
            _ => skipped += 1,
        }
    }
    DancerScore {
        score: (steps > 0).then(|| sum / steps as f64),
        steps,
        skipped,
    }
}

pub fn session_dancer_score(session: &Session, embeddings: &HashMap<String, Vec<f64>>) -> DancerScore {
    let articles: Vec<&str> = session.edits.iter().map(|(a, _)| a.as_str()).collect();
    dancer_score(&articles, embeddings)
}

/// Reads `article,v1,...,vd` and scales each vector to unit length.
pub fn read_embeddings<R: Read>(reader: R) -> Result<HashMap<String, Vec<f64>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let dim = header.len().saturating_sub(1);
    if header.get(0) != Some("article") || dim == 0 {
        return Err(Error::Rows(vec![RowError {
            line: 1,
            message: "expected header `article,v1,...,vd`".into(),
        }]));
    }
    let mut out = HashMap::new();
    let mut errors = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let v: Option<Vec<f64>> = rec.iter().skip(1).map(|s| s.parse().ok().filter(|x: &f64| x.is_finite())).collect();
        let norm = v.as_ref().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).unwrap_or(0.0);
        match v {
            Some(v) if v.len() == dim && norm > 0.0 => {
                if out.insert(rec[0].to_string(), v.iter().map(|x| x / norm).collect()).is_some() {
                    errors.push(RowError {
                        line,
                        message: format!("duplicate article `{}`", &rec[0]),
                    });
                }
            }
            _ => errors.push(RowError {
                line,
                message: format!("expected {dim} finite components with nonzero norm"),
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
    use chrono::TimeZone;

    fn emb(pairs: &[(&str, Vec<f64>)]) -> HashMap<String, Vec<f64>> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn shared_embedding_scores_zero() {
        let e = emb(&[("a", vec![1.0, 0.0]), ("b", vec![1.0, 0.0])]);
        assert_eq!(dancer_score(&["a", "b", "a"], &e).score, Some(0.0));
    }

    #[test]
    fn orthogonal_alternation_scores_one() {
        let e = emb(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        assert_eq!(dancer_score(&["a", "b", "a", "b"], &e).score, Some(1.0));
    }

    #[test]
    fn sixty_degree_triangle() {
        // Three unit vectors in 3-D, pairwise at 60 degrees.
        let s = 1.0 / 2f64.sqrt();
        let e = emb(&[("a", vec![s, s, 0.0]), ("b", vec![s, 0.0, s]), ("c", vec![0.0, s, s])]);
        let d = dancer_score(&["a", "b", "c", "a"], &e);
        assert!((d.score.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn skipped_and_undefined() {
        let e = emb(&[("a", vec![1.0, 0.0])]);
        let d = dancer_score(&["a", "x", "a"], &e);
        assert_eq!((d.score, d.steps, d.skipped), (None, 0, 2));
        assert_eq!(dancer_score(&["a", "a"], &e).score, None);
    }

    #[test]
    fn sessions_split_on_timeout() {
        let t = |m: i64| Utc.timestamp_opt(m * 60, 0).unwrap();
        let events = vec![
            EditEvent::new("en", "a", "x", t(0)),
            EditEvent::new("en", "b", "x", t(59)),
            EditEvent::new("en", "c", "x", t(119)),
            EditEvent::new("en", "d", "y", t(5)),
        ];
        let s = sessionize(&events, Duration::minutes(60));
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].edits.len(), 2);
        assert_eq!(s[1].edits[0].0, "c");
    }

    #[test]
    fn embeddings_are_normalized() {
        let e = read_embeddings("article,v1,v2\na,3,4\n".as_bytes()).unwrap();
        assert_eq!(e["a"], [0.6, 0.8]);
        assert!(read_embeddings("article,v1,v2\na,3\n".as_bytes()).is_err());
        assert!(read_embeddings("article,v1\na,0\n".as_bytes()).is_err());
    }
}
