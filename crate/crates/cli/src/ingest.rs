use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Subcommand};

use kcomplex_core::error::{Error, Result};
use kcomplex_core::geo::views_csv;
use kcomplex_core::ingest::{
    article_listing_csv, fetch_pageviews_by_country, harvest_revisions, read_article_listing,
    resolve_genre_articles, ApiConfig, CachedTransport, Clock, CursorStore, FixtureTransport, GenreSpec,
    HttpTransport, MediaWikiClient, PoliteTransport, RateLimiter, RetryPolicy, RevisionOptions, SystemClock,
    Transport, DEFAULT_REQUESTS_PER_MINUTE,
};
use kcomplex_core::matrix::write_events;
use kcomplex_core::output::to_json_pretty;

use crate::{read_file, write_file};

#[derive(Args)]
pub struct IngestArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(subcommand)]
    command: IngestCommand,
}

#[derive(Args)]
struct NetArgs {
    /// Answer requests from a recorded fixture file instead of the network.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    /// Response cache; re-runs are served from here.
    #[arg(long, global = true, env = "KCOMPLEX_CACHE_DIR", default_value = ".kcomplex-cache")]
    cache_dir: PathBuf,
    /// Contact string sent with every live request.
    #[arg(long, global = true, env = "KCOMPLEX_USER_AGENT")]
    user_agent: Option<String>,
    /// Request rate ceiling.
    #[arg(long, global = true, default_value_t = DEFAULT_REQUESTS_PER_MINUTE)]
    requests_per_minute: u32,
    /// Requests allowed back to back.
    #[arg(long, global = true, default_value_t = 1)]
    burst: u32,
    /// Action API URL template; `{lang}` is replaced by the edition.
    #[arg(long, global = true)]
    action_api: Option<String>,
    /// Override the REST API base URL.
    #[arg(long, global = true)]
    rest_api: Option<String>,
}

#[derive(Subcommand)]
enum IngestCommand {
    /// Resolve a genre's articles from seed categories.
    Genre {
        /// Genre spec JSON `{name, seeds: {lang: [categories]}, depth, languages}`.
        #[arg(long)]
        spec: PathBuf,
        /// Listing CSV `id,language,title`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Harvest full revision histories for a listing.
    Revisions {
        /// Article listing CSV from `ingest genre`.
        #[arg(long)]
        articles: PathBuf,
        /// Event TSV.
        #[arg(long)]
        out: PathBuf,
        /// Salt for editor hashes.
        #[arg(long, env = "KCOMPLEX_EDITOR_SALT")]
        salt: String,
        /// Genre tag added to every event.
        #[arg(long)]
        tag: Vec<String>,
        /// Treat usernames ending in "bot" as bots.
        #[arg(long)]
        bot_suffix: bool,
        /// Concurrent article fetches.
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
    /// Pageviews by country for Wikipedia projects.
    Pageviews {
        /// Project names such as `en.wikipedia`.
        #[arg(long, required = true, value_delimiter = ',')]
        projects: Vec<String>,
        /// Calendar year.
        #[arg(long)]
        year: i32,
        /// Single month; whole year when omitted.
        #[arg(long)]
        month: Option<u32>,
        /// Views CSV `country,language,views`.
        #[arg(long)]
        out: PathBuf,
    },
}

fn transport(net: &NetArgs) -> Result<Arc<dyn Transport>> {
    if let Some(path) = &net.replay {
        return Ok(Arc::new(FixtureTransport::from_file(path)?));
    }
    let ua = net
        .user_agent
        .as_deref()
        .ok_or_else(|| Error::Config("live requests need --user-agent or KCOMPLEX_USER_AGENT".into()))?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::default());
    let limiter = Arc::new(RateLimiter::new(net.requests_per_minute, net.burst, clock.clone())?);
    let polite = PoliteTransport::new(HttpTransport::new(ua)?, limiter, RetryPolicy::default(), clock);
    Ok(Arc::new(CachedTransport::new(polite, net.cache_dir.clone())))
}

fn client(net: &NetArgs) -> Result<MediaWikiClient> {
    let mut config = ApiConfig::default();
    if let Some(a) = &net.action_api {
        config.action_api = a.clone();
    }
    if let Some(r) = &net.rest_api {
        config.rest_api = r.clone();
    }
    Ok(MediaWikiClient::new(transport(net)?, config))
}

pub fn run(a: IngestArgs) -> Result<ExitCode> {
    let client = client(&a.net)?;
    match a.command {
        IngestCommand::Genre { spec, out } => {
            let spec: GenreSpec = serde_json::from_slice(&read_file(&spec)?)
                .map_err(|e| Error::Config(format!("{}: {e}", spec.display())))?;
            let res = resolve_genre_articles(&client, &spec)?;
            write_file(&out, &article_listing_csv(&res.articles)?)?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} articles", res.articles.len());
        }
        IngestCommand::Revisions { articles, out, salt, tag, bot_suffix, threads } => {
            let listing = read_article_listing(&read_file(&articles)?[..])?;
            let opts = RevisionOptions {
                salt,
                bot_suffix,
                tags: tag.into_iter().collect::<BTreeSet<_>>(),
            };
            let store = match &a.net.replay {
                Some(_) => None,
                None => Some(CursorStore::open(a.net.cache_dir.join("cursors.json"))?),
            };
            let batch = harvest_revisions(&client, &listing, &opts, store.as_ref(), threads)?;
            let mut buf = Vec::new();
            write_events(&mut buf, &batch.events)?;
            write_file(&out, &buf)?;
            println!("{} events, {} hidden revisions skipped", batch.events.len(), batch.hidden_skipped);
        }
        IngestCommand::Pageviews { projects, year, month, out } => {
            let pv = fetch_pageviews_by_country(&client, &projects, year, month)?;
            write_file(&out, &views_csv(&pv.rows)?)?;
            if !pv.unmapped_projects.is_empty() {
                eprintln!("skipped non-Wikipedia projects: {}", pv.unmapped_projects.join(", "));
            }
            let meta = serde_json::json!({"year": year, "month": month, "unmapped_projects": pv.unmapped_projects});
            write_file(&kcomplex_core::output::sidecar_path(&out), &to_json_pretty(&meta)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
