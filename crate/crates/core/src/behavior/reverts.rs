//! Identity reverts: a revision whose checksum matches an earlier revision of
//! the same article restores that state, so everything in between was undone.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::matrix::EditEvent;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevertFlags {
    /// `None` for revisions without a checksum.
    pub reverted: Vec<Option<bool>>,
    pub is_revert: Vec<bool>,
    pub missing_checksums: usize,
}

/// Flags one article's time-ordered history. `lookback` bounds how many
/// revisions back a match may lie; `None` is unbounded.
pub fn detect_reverts<S: AsRef<str>>(checksums: &[Option<S>], lookback: Option<usize>) -> RevertFlags {
    let n = checksums.len();
    let mut reverted: Vec<Option<bool>> = checksums.iter().map(|c| c.as_ref().map(|_| false)).collect();
    let mut is_revert = vec![false; n];
    let mut last_seen: HashMap<&str, usize> = HashMap::new();
    for (i, c) in checksums.iter().enumerate() {
        let Some(c) = c.as_ref().map(AsRef::as_ref) else {
            continue;
        };
        if let Some(&j) = last_seen.get(c) {
            if lookback.is_none_or(|k| i - j <= k) {
                if j + 1 < i {
                    is_revert[i] = true;
                }
                for flag in reverted[j + 1..i].iter_mut().flatten() {
                    *flag = true;
                }
            }
        }
        last_seen.insert(c, i);
    }
    RevertFlags {
        reverted,
        is_revert,
        missing_checksums: checksums.iter().filter(|c| c.is_none()).count(),
    }
}

/// Per-article edit and reverted counts for one editor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleTally {
    pub edits: u64,
    pub reverted: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditorTally {
    pub editor: String,
    /// Keyed by `language:article`.
    pub articles: BTreeMap<String, ArticleTally>,
}

impl EditorTally {
    pub fn total(&self) -> u64 {
        self.articles.values().map(|a| a.edits).sum()
    }

    pub fn reverted(&self) -> u64 {
        self.articles.values().map(|a| a.reverted).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyReport {
    pub tallies: Vec<EditorTally>,
    pub missing_checksums: usize,
}

/// Runs revert detection per (language, article) and tallies per editor.
/// Editor ids are scoped to their language edition. Revisions without a
/// checksum count toward neither edits nor reverts.
pub fn tally_editors(events: &[EditEvent], lookback: Option<usize>, exclude_bots: bool) -> TallyReport {
    let mut by_article: BTreeMap<(&str, &str), Vec<&EditEvent>> = BTreeMap::new();
    for e in events.iter().filter(|e| !(exclude_bots && e.is_bot)) {
        by_article.entry((&e.language, &e.article)).or_default().push(e);
    }
    let mut tallies: BTreeMap<String, EditorTally> = BTreeMap::new();
    let mut missing = 0;
    for ((lang, article), mut revs) in by_article {
        revs.sort_by_key(|e| e.timestamp);
        let checksums: Vec<Option<&str>> = revs.iter().map(|e| e.checksum.as_deref()).collect();
        let flags = detect_reverts(&checksums, lookback);
        missing += flags.missing_checksums;
        for (e, flag) in revs.iter().zip(&flags.reverted) {
            let Some(flag) = flag else { continue };
            let editor = format!("{lang}:{}", e.editor);
            let t = tallies.entry(editor.clone()).or_insert_with(|| EditorTally {
                editor,
                articles: BTreeMap::new(),
            });
            let a = t.articles.entry(format!("{lang}:{article}")).or_default();
            a.edits += 1;
            a.reverted += u64::from(*flag);
        }
    }
    TallyReport {
        tallies: tallies.into_values().collect(),
        missing_checksums: missing,
    }
}
