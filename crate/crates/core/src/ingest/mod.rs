//! Harvesting from the MediaWiki Action API and the pageviews REST API.
//!
//! Every operation runs against any [`Transport`]; tests replay recorded
//! fixtures and live runs stack [`CachedTransport`] over [`PoliteTransport`]
//! over the HTTP transport.

#[cfg(feature = "http")]
mod http;
mod mediawiki;
mod transport;

#[cfg(feature = "http")]
pub use http::HttpTransport;
pub use mediawiki::{
    article_listing_csv, fetch_pageviews_by_country, fetch_revisions, harvest_revisions,
    read_article_listing, resolve_genre_articles, ApiConfig, GenreArticle, GenreResolution,
    GenreSpec, MediaWikiClient, Pageviews, RevisionBatch, RevisionOptions, DEFAULT_DEPTH,
};
pub use transport::{
    CachedTransport, Clock, FixtureTransport, MockClock, PoliteTransport, RateLimiter, Request,
    Response, RetryPolicy, SystemClock, Transport, DEFAULT_REQUESTS_PER_MINUTE,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::{to_json_pretty, write_atomic};

/// Progress of one harvest task. A failed task's cursor names the
/// continuation token it stopped at; re-running replays finished pages from
/// the cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestCursor {
    pub task_id: String,
    pub continuation: Option<String>,
    pub completed: u64,
    pub total: Option<u64>,
    pub updated: DateTime<Utc>,
}

impl HarvestCursor {
    pub fn new(task_id: impl Into<String>) -> Self {
        HarvestCursor {
            task_id: task_id.into(),
            continuation: None,
            completed: 0,
            total: None,
            updated: Utc::now(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.total == Some(self.completed)
    }
}

/// Cursor manifest kept next to the response cache.
#[derive(Debug)]
pub struct CursorStore {
    path: PathBuf,
    cursors: Mutex<BTreeMap<String, HarvestCursor>>,
}

impl CursorStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let cursors = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(CursorStore {
            path,
            cursors: Mutex::new(cursors),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, task_id: &str) -> Option<HarvestCursor> {
        self.cursors.lock().unwrap().get(task_id).cloned()
    }

    pub fn update(&self, cursor: HarvestCursor) -> Result<()> {
        let mut map = self.cursors.lock().unwrap();
        map.insert(cursor.task_id.clone(), cursor);
        write_atomic(&self.path, &to_json_pretty(&*map)?)
    }
}
