use serde::{Deserialize, Serialize};

/// Lexicographically sorted, duplicate-free list of labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Index(Vec<String>);

impl Index {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v: Vec<String> = labels.into_iter().map(Into::into).collect();
        v.sort();
        v.dedup();
        Index(v)
    }

    /// Accepts an already sorted list, returning `None` when it is not
    /// strictly increasing.
    pub fn from_sorted(labels: Vec<String>) -> Option<Self> {
        labels
            .windows(2)
            .all(|w| w[0] < w[1])
            .then_some(Index(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.0.binary_search_by(|p| p.as_str().cmp(label)).ok()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.0[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// Keeps the labels whose map entry is `Some`, returning the narrowed index.
    pub(crate) fn restrict(&self, keep: &[bool]) -> (Index, Vec<Option<usize>>, Vec<String>) {
        let mut kept = Vec::new();
        let mut map = Vec::with_capacity(self.0.len());
        let mut dropped = Vec::new();
        for (label, &k) in self.0.iter().zip(keep) {
            if k {
                map.push(Some(kept.len()));
                kept.push(label.clone());
            } else {
                map.push(None);
                dropped.push(label.clone());
            }
        }
        (Index(kept), map, dropped)
    }
}
