use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Read;
use std::sync::Arc;

use chrono::Utc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::transport::{Request, Transport};
use super::{CursorStore, HarvestCursor};
use crate::error::{Error, Result, RowError};
use crate::geo::ViewRow;
use crate::matrix::{parse_timestamp, EditEvent};
use crate::output::sha256_hex;

pub const DEFAULT_DEPTH: u32 = 2;
const TITLE_BATCH: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiConfig {
    /// `{lang}` is replaced by the edition code.
    pub action_api: String,
    pub rest_api: String,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            action_api: "https://{lang}.wikipedia.org/w/api.php".into(),
            rest_api: "https://wikimedia.org/api/rest_v1".into(),
        }
    }
}

pub struct MediaWikiClient {
    transport: Arc<dyn Transport>,
    config: ApiConfig,
}

impl MediaWikiClient {
    pub fn new(transport: Arc<dyn Transport>, config: ApiConfig) -> Self {
        MediaWikiClient { transport, config }
    }

    pub fn config(&self) -> &ApiConfig {
        &self.config
    }

    pub fn action_request(&self, lang: &str, params: &[(&str, &str)]) -> Request {
        let mut req = Request::new(self.config.action_api.replace("{lang}", lang))
            .param("format", "json")
            .param("formatversion", "2");
        for &(k, v) in params {
            req = req.param(k, v);
        }
        req
    }

    fn fetch(&self, req: &Request) -> Result<Value> {
        let resp = self.transport.get(req).map_err(network)?;
        if resp.status != 200 {
            return Err(network(format!("HTTP {} from {}", resp.status, req.canonical())));
        }
        let v: Value = serde_json::from_slice(&resp.body)?;
        if let Some(err) = v.get("error") {
            return Err(Error::Invalid(format!(
                "API error {}: {}",
                str_at(err, "code").unwrap_or("?"),
                str_at(err, "info").unwrap_or("")
            )));
        }
        Ok(v)
    }

    /// Follows `continue` blocks until the result set is exhausted. A network
    /// failure carries a cursor naming the continuation it stopped at.
    fn paged(&self, base: Request, task_id: &str, mut on_page: impl FnMut(&Value) -> Result<u64>) -> Result<()> {
        let mut cont: Option<BTreeMap<String, String>> = None;
        let mut completed = 0;
        loop {
            let mut req = base.clone();
            if let Some(c) = &cont {
                req.query.extend(c.clone());
            }
            let v = match self.fetch(&req) {
                Ok(v) => v,
                Err(Error::Network { message, .. }) => {
                    return Err(Error::Network {
                        message,
                        cursor: Some(Box::new(HarvestCursor {
                            task_id: task_id.to_string(),
                            continuation: cont.as_ref().map(|c| Request { endpoint: String::new(), query: c.clone() }.canonical()),
                            completed,
                            total: None,
                            updated: Utc::now(),
                        })),
                    })
                }
                Err(e) => return Err(e),
            };
            completed += on_page(&v)?;
            let next: Option<BTreeMap<String, String>> = v.get("continue").and_then(Value::as_object).map(|o| {
                o.iter()
                    .map(|(k, v)| (k.clone(), v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
                    .collect()
            });
            match next {
                Some(n) if cont.as_ref() == Some(&n) => {
                    return Err(Error::Invalid(format!("continuation did not advance for {task_id}")))
                }
                Some(n) => cont = Some(n),
                None => return Ok(()),
            }
        }
    }
}

fn network(message: String) -> Error {
    Error::Network { message, cursor: None }
}

fn str_at<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str)
}

fn pages(v: &Value) -> impl Iterator<Item = &Value> {
    v.pointer("/query/pages")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
}

fn flag(v: &Value, key: &str) -> bool {
    // formatversion=2 uses booleans; older responses use empty strings.
    v.get(key).is_some_and(|f| f.as_bool() != Some(false))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenreSpec {
    pub name: String,
    /// Full category titles per edition, e.g. `Category:Cooking`.
    pub seeds: BTreeMap<String, Vec<String>>,
    #[serde(default = "default_depth")]
    pub depth: u32,
    /// Editions kept after interlanguage closure; empty means the seed editions.
    #[serde(default)]
    pub languages: Vec<String>,
}

fn default_depth() -> u32 {
    DEFAULT_DEPTH
}

impl GenreSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.values().all(Vec::is_empty) {
            return Err(Error::Config(format!("genre `{}` has no seed categories", self.name)));
        }
        Ok(())
    }

    pub fn allowlist(&self) -> BTreeSet<String> {
        if self.languages.is_empty() {
            self.seeds.keys().cloned().collect()
        } else {
            self.languages.iter().cloned().collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GenreArticle {
    /// Cross-lingual key: the Wikidata item when known, else `lang:title`.
    pub id: String,
    pub language: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenreResolution {
    pub genre: String,
    pub depth: u32,
    pub articles: Vec<GenreArticle>,
    pub warnings: Vec<String>,
}

struct PageLinks {
    item: Option<String>,
    links: BTreeMap<String, String>,
}

/// Category traversal to `spec.depth` in each seed edition, then closure
/// over interlanguage links into the allowlisted editions.
pub fn resolve_genre_articles(client: &MediaWikiClient, spec: &GenreSpec) -> Result<GenreResolution> {
    spec.validate()?;
    let allow = spec.allowlist();
    let mut warnings = Vec::new();
    let mut found: BTreeSet<(String, String)> = BTreeSet::new();
    for (lang, cats) in &spec.seeds {
        for cat in cats {
            let req = client.action_request(lang, &[("action", "query"), ("prop", "categoryinfo"), ("titles", cat)]);
            let v = client.fetch(&req)?;
            let exists = pages(&v).any(|p| !flag(p, "missing") || p.get("categoryinfo").is_some());
            if !exists {
                warnings.push(format!("{lang}: category `{cat}` not found"));
                continue;
            }
            for title in category_members(client, lang, cat, spec.depth)? {
                found.insert((lang.clone(), title));
            }
        }
    }
    let mut by_lang: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (l, t) in &found {
        by_lang.entry(l).or_default().push(t);
    }
    let mut assigned: BTreeMap<(String, String), String> = BTreeMap::new();
    for (lang, titles) in by_lang {
        for chunk in titles.chunks(TITLE_BATCH) {
            let links = page_links(client, lang, chunk)?;
            for title in chunk {
                let key = (lang.to_string(), title.to_string());
                let page = links.get(*title);
                let id = match assigned.get(&key) {
                    Some(id) => id.clone(),
                    None => page
                        .and_then(|p| p.item.clone())
                        .unwrap_or_else(|| format!("{lang}:{title}")),
                };
                assigned.insert(key, id.clone());
                for (other, t) in page.map(|p| &p.links).into_iter().flatten() {
                    if allow.contains(other) {
                        assigned.entry((other.clone(), t.clone())).or_insert_with(|| id.clone());
                    }
                }
            }
        }
    }
    let mut articles: Vec<GenreArticle> = assigned
        .into_iter()
        .filter(|((l, _), _)| allow.contains(l))
        .map(|((language, title), id)| GenreArticle { id, language, title })
        .collect();
    articles.sort();
    // One title per edition and item.
    articles.dedup_by(|a, b| a.id == b.id && a.language == b.language);
    Ok(GenreResolution {
        genre: spec.name.clone(),
        depth: spec.depth,
        articles,
        warnings,
    })
}

fn category_members(client: &MediaWikiClient, lang: &str, root: &str, depth: u32) -> Result<BTreeSet<String>> {
    let mut articles = BTreeSet::new();
    let mut seen = BTreeSet::from([root.to_string()]);
    let mut queue = VecDeque::from([(root.to_string(), 0u32)]);
    while let Some((cat, d)) = queue.pop_front() {
        let req = client.action_request(
            lang,
            &[
                ("action", "query"),
                ("list", "categorymembers"),
                ("cmtitle", &cat),
                ("cmtype", "page|subcat"),
                ("cmlimit", "max"),
            ],
        );
        client.paged(req, &format!("category:{lang}:{cat}"), |v| {
            let members = v.pointer("/query/categorymembers").and_then(Value::as_array);
            for m in members.into_iter().flatten() {
                let (Some(ns), Some(title)) = (m.get("ns").and_then(Value::as_i64), str_at(m, "title")) else {
                    continue;
                };
                match ns {
                    0 => {
                        articles.insert(title.to_string());
                    }
                    14 if d < depth && seen.insert(title.to_string()) => {
                        queue.push_back((title.to_string(), d + 1));
                    }
                    _ => {}
                }
            }
            Ok(0)
        })?;
    }
    Ok(articles)
}

fn page_links(client: &MediaWikiClient, lang: &str, titles: &[&str]) -> Result<BTreeMap<String, PageLinks>> {
    let joined = titles.join("|");
    let req = client.action_request(
        lang,
        &[
            ("action", "query"),
            ("prop", "pageprops|langlinks"),
            ("ppprop", "wikibase_item"),
            ("lllimit", "max"),
            ("titles", &joined),
        ],
    );
    let mut out: BTreeMap<String, PageLinks> = BTreeMap::new();
    client.paged(req, &format!("langlinks:{lang}:{}", titles[0]), |v| {
        for p in pages(v) {
            let Some(title) = str_at(p, "title") else { continue };
            let entry = out.entry(title.to_string()).or_insert(PageLinks {
                item: None,
                links: BTreeMap::new(),
            });
            if let Some(item) = p.pointer("/pageprops/wikibase_item").and_then(Value::as_str) {
                entry.item = Some(item.to_string());
            }
            for l in p.get("langlinks").and_then(Value::as_array).into_iter().flatten() {
                if let (Some(lang), Some(t)) = (str_at(l, "lang"), str_at(l, "title")) {
                    entry.links.insert(lang.to_string(), t.to_string());
                }
            }
        }
        Ok(0)
    })?;
    Ok(out)
}

/// `id,language,title`, sorted.
pub fn article_listing_csv(articles: &[GenreArticle]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "language", "title"])?;
    for a in articles {
        w.write_record([&a.id, &a.language, &a.title])?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

pub fn read_article_listing<R: Read>(reader: R) -> Result<Vec<GenreArticle>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().ne(["id", "language", "title"]) {
        return Err(Error::Rows(vec![RowError {
            line: 1,
            message: "expected header `id,language,title`".into(),
        }]));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionOptions {
    /// Mixed into editor hashes; keep it private to the corpus.
    pub salt: String,
    /// Also treat usernames ending in "bot" as bots.
    #[serde(default)]
    pub bot_suffix: bool,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionBatch {
    pub events: Vec<EditEvent>,
    pub hidden_skipped: u64,
}

pub fn editor_hash(salt: &str, user: &str) -> String {
    let mut h = sha256_hex(format!("{salt}\u{0}{user}").as_bytes());
    h.truncate(16);
    h
}

/// Full history of one page, oldest first, one event per revision id.
pub fn fetch_revisions(
    client: &MediaWikiClient,
    language: &str,
    title: &str,
    article_id: &str,
    opts: &RevisionOptions,
) -> Result<RevisionBatch> {
    let req = client.action_request(
        language,
        &[
            ("action", "query"),
            ("prop", "revisions"),
            ("titles", title),
            ("rvprop", "ids|timestamp|user|sha1"),
            ("rvlimit", "max"),
            ("rvdir", "newer"),
        ],
    );
    let mut seen = BTreeSet::new();
    let mut raw: Vec<(String, chrono::DateTime<Utc>, Option<String>)> = Vec::new();
    let mut hidden = 0;
    client.paged(req, &format!("revisions:{language}:{title}"), |v| {
        let mut n = 0;
        for p in pages(v) {
            if flag(p, "missing") || flag(p, "invalid") {
                return Err(Error::Lookup {
                    kind: "page",
                    key: format!("{language}:{title}"),
                });
            }
            for r in p.get("revisions").and_then(Value::as_array).into_iter().flatten() {
                let Some(revid) = r.get("revid").and_then(Value::as_u64) else { continue };
                if !seen.insert(revid) {
                    continue;
                }
                n += 1;
                if ["userhidden", "sha1hidden", "texthidden", "suppressed"].iter().any(|k| flag(r, k)) {
                    hidden += 1;
                    continue;
                }
                let (Some(user), Some(ts)) = (str_at(r, "user"), str_at(r, "timestamp").and_then(parse_timestamp)) else {
                    return Err(Error::Invalid(format!("revision {revid} lacks user or timestamp")));
                };
                raw.push((user.to_string(), ts, str_at(r, "sha1").map(str::to_string)));
            }
        }
        Ok(n)
    })?;
    let users: BTreeSet<&str> = raw.iter().map(|r| r.0.as_str()).collect();
    let bots = bot_users(client, language, &users.into_iter().collect::<Vec<_>>())?;
    let events = raw
        .iter()
        .map(|(user, ts, sha1)| {
            let is_bot = bots.contains(user.as_str()) || (opts.bot_suffix && user.to_ascii_lowercase().ends_with("bot"));
            let mut e = EditEvent::new(language, article_id, editor_hash(&opts.salt, user), *ts)
                .bot(is_bot)
                .with_tags(opts.tags.iter().cloned());
            e.checksum = sha1.clone();
            e
        })
        .collect();
    Ok(RevisionBatch {
        events,
        hidden_skipped: hidden,
    })
}

fn bot_users(client: &MediaWikiClient, lang: &str, users: &[&str]) -> Result<BTreeSet<String>> {
    let mut bots = BTreeSet::new();
    for chunk in users.chunks(TITLE_BATCH) {
        let joined = chunk.join("|");
        let req = client.action_request(
            lang,
            &[("action", "query"), ("list", "users"), ("ususers", &joined), ("usprop", "groups")],
        );
        let v = client.fetch(&req)?;
        for u in v.pointer("/query/users").and_then(Value::as_array).into_iter().flatten() {
            let is_bot = u
                .get("groups")
                .and_then(Value::as_array)
                .is_some_and(|g| g.iter().any(|x| x.as_str() == Some("bot")));
            if let (true, Some(name)) = (is_bot, str_at(u, "name")) {
                bots.insert(name.to_string());
            }
        }
    }
    Ok(bots)
}

/// Fetches revisions for many articles on a bounded pool. Finished tasks are
/// recorded in `store`; events come back sorted by language, article, time.
pub fn harvest_revisions(
    client: &MediaWikiClient,
    articles: &[GenreArticle],
    opts: &RevisionOptions,
    store: Option<&CursorStore>,
    threads: usize,
) -> Result<RevisionBatch> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<RevisionBatch>> = pool.install(|| {
        articles
            .par_iter()
            .map(|a| {
                let batch = fetch_revisions(client, &a.language, &a.title, &a.id, opts);
                if let Some(store) = store {
                    let mut c = HarvestCursor::new(format!("revisions:{}:{}", a.language, a.title));
                    match &batch {
                        Ok(b) => {
                            c.completed = b.events.len() as u64 + b.hidden_skipped;
                            c.total = Some(c.completed);
                        }
                        Err(Error::Network { cursor: Some(failed), .. }) => c = (**failed).clone(),
                        Err(_) => {}
                    }
                    store.update(c)?;
                }
                batch
            })
            .collect()
    });
    let mut out = RevisionBatch::default();
    for r in results {
        let b = r?;
        out.events.extend(b.events);
        out.hidden_skipped += b.hidden_skipped;
    }
    out.events
        .sort_by(|a, b| (&a.language, &a.article, a.timestamp).cmp(&(&b.language, &b.article, b.timestamp)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pageviews {
    pub year: i32,
    pub month: Option<u32>,
    pub rows: Vec<ViewRow>,
    /// Projects that are not Wikipedia editions.
    pub unmapped_projects: Vec<String>,
}

pub fn pageviews_request(client: &MediaWikiClient, project: &str, year: i32, month: Option<u32>) -> Request {
    let period = month.map_or("all-months".to_string(), |m| format!("{m:02}"));
    Request::new(format!(
        "{}/metrics/pageviews/top-by-country/{project}/all-access/{year}/{period}",
        client.config.rest_api.trim_end_matches('/')
    ))
}

/// Views per (country, edition) for `year`, or one month of it.
pub fn fetch_pageviews_by_country(
    client: &MediaWikiClient,
    projects: &[String],
    year: i32,
    month: Option<u32>,
) -> Result<Pageviews> {
    if month.is_some_and(|m| !(1..=12).contains(&m)) {
        return Err(Error::Config(format!("month {} out of range", month.unwrap_or(0))));
    }
    let period = || match month {
        Some(m) => format!("{year}-{m:02}"),
        None => year.to_string(),
    };
    let mut views: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut unmapped = BTreeSet::new();
    for project in projects {
        if project.strip_suffix(".wikipedia").is_none() {
            unmapped.insert(project.clone());
            continue;
        }
        let req = pageviews_request(client, project, year, month);
        let resp = client.transport.get(&req).map_err(network)?;
        match resp.status {
            200 => {}
            404 => return Err(Error::UnsupportedPeriod(format!("{} for {project}", period()))),
            s => return Err(network(format!("HTTP {s} from {}", req.endpoint))),
        }
        let v: Value = serde_json::from_slice(&resp.body)?;
        for item in v.get("items").and_then(Value::as_array).into_iter().flatten() {
            let proj = str_at(item, "project").unwrap_or(project);
            let Some(lang) = proj.strip_suffix(".wikipedia") else {
                unmapped.insert(proj.to_string());
                continue;
            };
            for c in item.get("countries").and_then(Value::as_array).into_iter().flatten() {
                let n = c.get("views").or_else(|| c.get("views_ceil")).and_then(Value::as_u64);
                let (Some(country), Some(n)) = (str_at(c, "country"), n) else {
                    return Err(Error::Invalid(format!("malformed country entry in {}", req.endpoint)));
                };
                *views.entry((country.to_string(), lang.to_string())).or_default() += n;
            }
        }
    }
    Ok(Pageviews {
        year,
        month,
        rows: views
            .into_iter()
            .map(|((country, language), views)| ViewRow { country, language, views })
            .collect(),
        unmapped_projects: unmapped.into_iter().collect(),
    })
}
