//! Config-driven run of every analysis over a set of corpus slices.
//!
//! Each (slice, stage) pair gets a fingerprint from its parameters, the
//! digests of the raw inputs it reads, and the fingerprints of the stages it
//! depends on. A stage whose fingerprint matches the previous manifest and
//! whose outputs are intact on disk is not re-run.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::Duration;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::behavior::{
    lorenz_csv, lorenz_from_totals, read_embeddings, revert_rate_gap, session_dancer_score,
    sessionize, tally_editors, Stratification, DEFAULT_SESSION_TIMEOUT_MINUTES,
};
use crate::complexity::{self, rank_articles_by_pci, ComplexityScores, Method};
use crate::error::{Error, Result};
use crate::geo::{self, build_weights, read_views, CountryScores, RankRow, ViewershipWeights, WeightsReport};
use crate::matrix::{
    apply_topic_labels, build_activity_matrix, event_years, format_timestamp, prune, read_events,
    read_topics, slice_by_year, ActivityMatrix, CorpusSlice, EditEvent,
};
use crate::output::{fmt_f64, sha256_hex, to_json_pretty, write_atomic};
use crate::proximity::{auc_series, auc_series_csv, proximity, PredictOptions, RelatednessDensity, YearOutcome};
use crate::rca::{binarize, compute_rca, AdvantageMatrix, RcaMatrix, DEFAULT_THRESHOLD};
use crate::regress::{read_indicators, regress_eci, scatter_csv, IndicatorTable, Transform, DEFAULT_TOP_N};
use crate::similarity::{
    log_rca_pearson, portfolio_cosine, rca_cosine, similarity_heatmap_export, HeatmapManifest, Ordering,
    SimilarityKind,
};

pub const TOOL: &str = "kcomplex";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Slice name used for cross-slice artifacts.
pub const GLOBAL_SLICE: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "format_version")]
    pub format_version: u32,
    pub inputs: Inputs,
    pub output_dir: PathBuf,
    pub slices: Vec<SliceConfig>,
    #[serde(default = "yes")]
    pub exclude_bots: bool,
    #[serde(default)]
    pub prune: PruneConfig,
    #[serde(default = "default_threshold")]
    pub rca_threshold: f64,
    #[serde(default)]
    pub complexity: ComplexityConfig,
    #[serde(default)]
    pub similarity: Option<SimilarityConfig>,
    #[serde(default)]
    pub proximity: Option<ProximityConfig>,
    #[serde(default)]
    pub predict: Option<PredictOptions>,
    #[serde(default)]
    pub geo: Option<GeoConfig>,
    #[serde(default)]
    pub regress: Option<RegressConfig>,
    #[serde(default)]
    pub stats: Option<StatsConfig>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn format_version() -> u32 {
    FORMAT_VERSION
}

fn yes() -> bool {
    true
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub events: String,
    #[serde(default)]
    pub topics: Option<String>,
    #[serde(default)]
    pub views: Option<String>,
    #[serde(default)]
    pub indicators: Option<String>,
    #[serde(default)]
    pub embeddings: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    pub name: String,
    #[serde(default)]
    pub genre_or_topic: Option<String>,
    #[serde(default)]
    pub year_range: Option<(i32, i32)>,
    #[serde(default)]
    pub parent_topic: Option<String>,
}

impl SliceConfig {
    pub fn corpus_slice(&self) -> CorpusSlice {
        CorpusSlice {
            genre_or_topic: self.genre_or_topic.clone(),
            year_range: self.year_range,
            parent_topic: self.parent_topic.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub min_row_total: u64,
    pub min_col_total: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            min_row_total: 1,
            min_col_total: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityConfig {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_pci_top")]
    pub top_n: usize,
}

fn default_pci_top() -> usize {
    20
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        ComplexityConfig {
            method: Method::default(),
            top_n: default_pci_top(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityConfig {
    #[serde(default = "all_kinds")]
    pub kinds: Vec<SimilarityKind>,
    #[serde(default = "seriation")]
    pub ordering: Ordering,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

fn all_kinds() -> Vec<SimilarityKind> {
    vec![
        SimilarityKind::PortfolioCosine,
        SimilarityKind::RcaCosine,
        SimilarityKind::LogRcaPearson,
    ]
}

fn seriation() -> Ordering {
    Ordering::Seriation
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProximityConfig {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoConfig {
    #[serde(default = "default_snapshot")]
    pub snapshot_year: i32,
    #[serde(default = "default_country_top")]
    pub top_n: usize,
}

fn default_snapshot() -> i32 {
    2016
}

fn default_country_top() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressConfig {
    pub indicators: Vec<IndicatorSpec>,
    /// Indicator year; defaults to the viewership snapshot year.
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default = "default_regress_top")]
    pub top_n: Option<usize>,
}

fn default_regress_top() -> Option<usize> {
    Some(DEFAULT_TOP_N)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorSpec {
    pub name: String,
    #[serde(default)]
    pub transform: Transform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    #[serde(default)]
    pub lookback: Option<usize>,
    #[serde(default)]
    pub stratification: Stratification,
    #[serde(default = "default_timeout")]
    pub session_timeout_minutes: i64,
}

fn default_timeout() -> i64 {
    DEFAULT_SESSION_TIMEOUT_MINUTES
}

impl PipelineConfig {
    /// Parses and validates a config file; relative paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: impl AsRef<Path>) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let inputs = [
            Some(&self.inputs.events),
            self.inputs.topics.as_ref(),
            self.inputs.views.as_ref(),
            self.inputs.indicators.as_ref(),
            self.inputs.embeddings.as_ref(),
        ];
        for p in inputs.into_iter().flatten() {
            if !self.resolve(p).is_file() {
                return Err(Error::Config(format!("input `{p}` does not exist")));
            }
        }
        if self.slices.is_empty() {
            return Err(Error::Config("at least one slice is required".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.slices {
            let ok = !s.name.is_empty()
                && !s.name.starts_with('.')
                && s.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
            if !ok {
                return Err(Error::Config(format!("slice name `{}` must be [A-Za-z0-9._-]", s.name)));
            }
            if !names.insert(&s.name) {
                return Err(Error::Config(format!("duplicate slice name `{}`", s.name)));
            }
            s.corpus_slice().validate()?;
        }
        if !(self.rca_threshold > 0.0 && self.rca_threshold.is_finite()) {
            return Err(Error::Config("rca_threshold must be positive".into()));
        }
        if self.geo.is_some() && self.inputs.views.is_none() {
            return Err(Error::Config("geo needs inputs.views".into()));
        }
        if self.regress.is_some() && (self.geo.is_none() || self.inputs.indicators.is_none()) {
            return Err(Error::Config("regress needs geo and inputs.indicators".into()));
        }
        if let Some(s) = &self.stats {
            if s.session_timeout_minutes <= 0 {
                return Err(Error::Config("session_timeout_minutes must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Matrix,
    Rca,
    Complexity,
    Similarity,
    Proximity,
    Predict,
    Geo,
    Regress,
    Lorenz,
    Reverts,
    Dancer,
    Transition,
}

impl Stage {
    /// Per-slice stages in dependency order.
    pub const PER_SLICE: [Stage; 11] = [
        Stage::Matrix,
        Stage::Rca,
        Stage::Complexity,
        Stage::Similarity,
        Stage::Proximity,
        Stage::Predict,
        Stage::Geo,
        Stage::Regress,
        Stage::Lorenz,
        Stage::Reverts,
        Stage::Dancer,
    ];

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Rca => &[Stage::Matrix],
            Stage::Complexity => &[Stage::Rca],
            Stage::Similarity => &[Stage::Matrix, Stage::Rca],
            Stage::Proximity => &[Stage::Rca],
            Stage::Geo => &[Stage::Complexity],
            Stage::Regress => &[Stage::Geo],
            _ => &[],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Matrix => "matrix",
            Stage::Rca => "rca",
            Stage::Complexity => "complexity",
            Stage::Similarity => "similarity",
            Stage::Proximity => "proximity",
            Stage::Predict => "predict",
            Stage::Geo => "geo",
            Stage::Regress => "regress",
            Stage::Lorenz => "lorenz",
            Stage::Reverts => "reverts",
            Stage::Dancer => "dancer",
            Stage::Transition => "transition",
        }
    }

    fn raw_inputs(self) -> &'static [&'static str] {
        match self {
            Stage::Matrix | Stage::Predict | Stage::Lorenz | Stage::Reverts => &["events", "topics"],
            Stage::Dancer => &["events", "topics", "embeddings"],
            Stage::Geo => &["views"],
            Stage::Regress => &["indicators"],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub slice: String,
    pub stage: Stage,
    pub fingerprint: String,
    pub params: Value,
    /// Raw inputs and upstream artifacts this stage read.
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub slice: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub inputs: BTreeMap<String, FileDigest>,
    pub stages: Vec<StageRecord>,
    pub errors: Vec<StageError>,
}

impl RunManifest {
    pub fn stage(&self, slice: &str, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.slice == slice && r.stage == stage)
    }
}

/// What happened to each stage in one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub blocked: Vec<String>,
    pub failed: Vec<StageError>,
}

impl PipelineReport {
    pub fn ok(&self) -> bool {
        self.failed.is_empty() && self.blocked.is_empty()
    }
}

struct Loaded {
    digests: BTreeMap<String, FileDigest>,
    events: Vec<EditEvent>,
    weights: Option<(ViewershipWeights, WeightsReport)>,
    indicators: Option<IndicatorTable>,
    embeddings: Option<HashMap<String, Vec<f64>>>,
}

fn load_inputs(cfg: &PipelineConfig) -> Result<Loaded> {
    let mut digests = BTreeMap::new();
    let mut read = |name: &str, rel: &str| -> Result<Vec<u8>> {
        let path = cfg.resolve(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        digests.insert(
            name.to_string(),
            FileDigest {
                path: rel.to_string(),
                sha256: sha256_hex(&bytes),
            },
        );
        Ok(bytes)
    };
    let mut events = read_events(&read("events", &cfg.inputs.events)?[..])?;
    if let Some(t) = &cfg.inputs.topics {
        apply_topic_labels(&mut events, &read_topics(&read("topics", t)?[..])?);
    }
    let weights = match (&cfg.inputs.views, &cfg.geo) {
        (Some(v), Some(g)) => Some(build_weights(&read_views(&read("views", v)?[..])?, g.snapshot_year)?),
        _ => None,
    };
    let indicators = match &cfg.inputs.indicators {
        Some(p) if cfg.regress.is_some() => Some(read_indicators(&read("indicators", p)?[..])?),
        _ => None,
    };
    let embeddings = match &cfg.inputs.embeddings {
        Some(p) if cfg.stats.is_some() => Some(read_embeddings(&read("embeddings", p)?[..])?),
        _ => None,
    };
    Ok(Loaded {
        digests,
        events,
        weights,
        indicators,
        embeddings,
    })
}

fn enabled(cfg: &PipelineConfig, loaded: &Loaded, stage: Stage) -> bool {
    match stage {
        Stage::Matrix | Stage::Rca | Stage::Complexity => true,
        Stage::Similarity => cfg.similarity.is_some(),
        Stage::Proximity => cfg.proximity.is_some(),
        Stage::Predict => cfg.predict.is_some(),
        Stage::Geo => cfg.geo.is_some(),
        Stage::Regress => cfg.regress.is_some(),
        Stage::Lorenz | Stage::Reverts => cfg.stats.is_some(),
        Stage::Dancer => cfg.stats.is_some() && loaded.embeddings.is_some(),
        Stage::Transition => cfg.geo.is_some(),
    }
}

fn params(cfg: &PipelineConfig, stage: Stage) -> Value {
    let stats = cfg.stats.as_ref();
    match stage {
        Stage::Matrix => json!({"exclude_bots": cfg.exclude_bots, "prune": cfg.prune}),
        Stage::Rca => json!({"threshold": cfg.rca_threshold}),
        Stage::Complexity => json!(cfg.complexity),
        Stage::Similarity => json!(cfg.similarity),
        Stage::Proximity => json!(cfg.proximity),
        Stage::Predict => json!({"exclude_bots": cfg.exclude_bots, "options": cfg.predict}),
        Stage::Geo => json!(cfg.geo),
        Stage::Regress => json!(cfg.regress),
        Stage::Lorenz => json!({"exclude_bots": cfg.exclude_bots}),
        Stage::Reverts => json!({
            "exclude_bots": cfg.exclude_bots,
            "lookback": stats.and_then(|s| s.lookback),
            "stratification": stats.map(|s| s.stratification),
        }),
        Stage::Dancer => json!({
            "exclude_bots": cfg.exclude_bots,
            "session_timeout_minutes": stats.map(|s| s.session_timeout_minutes),
        }),
        Stage::Transition => json!({}),
    }
}

fn fingerprint(stage: Stage, slice: &Value, params: &Value, raw: &[&FileDigest], upstream: &[&str]) -> String {
    let doc = json!({
        "tool": TOOL,
        "version": VERSION,
        "stage": stage,
        "slice": slice,
        "params": params,
        "raw": raw,
        "upstream": upstream,
    });
    sha256_hex(doc.to_string().as_bytes())
}

fn outputs_intact(out_dir: &Path, rec: &StageRecord) -> bool {
    rec.outputs.iter().all(|o| {
        std::fs::read(out_dir.join(&o.path)).is_ok_and(|b| sha256_hex(&b) == o.sha256)
    })
}

#[derive(Default)]
struct SliceState {
    matrix: Option<ActivityMatrix>,
    rca: Option<RcaMatrix>,
    adv: Option<AdvantageMatrix>,
    scores: Option<ComplexityScores>,
    countries: Option<CountryScores>,
}

type Outputs = Vec<(String, Vec<u8>)>;

struct SliceRun<'a> {
    cfg: &'a PipelineConfig,
    loaded: &'a Loaded,
    slice: &'a SliceConfig,
    events: Vec<&'a EditEvent>,
    state: SliceState,
}

impl SliceRun<'_> {
    fn compute(&mut self, stage: Stage) -> Result<(Outputs, Value)> {
        let cfg = self.cfg;
        let corpus = self.slice.corpus_slice();
        let mut out: Outputs = Vec::new();
        let summary = match stage {
            Stage::Matrix => {
                let raw = build_activity_matrix(self.events.iter().copied(), &corpus, false)?;
                let m = prune(&raw, cfg.prune.min_row_total, cfg.prune.min_col_total)?.matrix;
                out.push(("matrix.csv".into(), m.to_csv()?));
                out.push(("matrix.manifest.json".into(), to_json_pretty(&m.manifest())?));
                let s = json!({
                    "languages": m.languages().len(),
                    "articles": m.articles().len(),
                    "edits": m.total() as u64,
                    "dropped_languages": m.prune_report().dropped_languages,
                    "dropped_articles": m.prune_report().dropped_articles,
                });
                self.state.matrix = Some(m);
                s
            }
            Stage::Rca => {
                let rca = compute_rca(self.state.matrix.as_ref().expect("matrix stage ran"))?;
                let adv = binarize(&rca, cfg.rca_threshold)?;
                out.push(("rca.csv".into(), rca.to_csv()?));
                out.push(("rca.manifest.json".into(), to_json_pretty(&rca.manifest())?));
                out.push(("advantage.csv".into(), adv.to_csv()?));
                out.push(("advantage.manifest.json".into(), to_json_pretty(&adv.manifest())?));
                let s = json!({
                    "advantages": adv.n_set(),
                    "languages": adv.languages().len(),
                    "articles": adv.articles().len(),
                });
                self.state.rca = Some(rca);
                self.state.adv = Some(adv);
                s
            }
            Stage::Complexity => {
                let scores = complexity::compute(self.state.adv.as_ref().expect("rca stage ran"), cfg.complexity.method)?;
                let top = rank_articles_by_pci(&scores, cfg.complexity.top_n)?;
                out.push(("eci.csv".into(), scores.eci_csv()?));
                out.push(("pci.csv".into(), scores.pci_csv()?));
                out.push(("pci_top.csv".into(), complexity::ranking_csv(&top)?));
                out.push(("complexity.json".into(), to_json_pretty(&scores.manifest())?));
                let s = json!({"converged": scores.converged, "iterations": scores.iterations_run});
                self.state.scores = Some(scores);
                s
            }
            Stage::Similarity => {
                let sc = cfg.similarity.as_ref().expect("enabled");
                let mut kinds = Vec::new();
                for &kind in &sc.kinds {
                    let rca = self.state.rca.as_ref().expect("rca stage ran");
                    let sim = match kind {
                        SimilarityKind::PortfolioCosine => portfolio_cosine(self.state.matrix.as_ref().expect("matrix stage ran"))?,
                        SimilarityKind::RcaCosine => rca_cosine(rca)?,
                        SimilarityKind::LogRcaPearson => log_rca_pearson(rca, sc.epsilon)?,
                    };
                    let name = serde_json::to_value(kind)?.as_str().unwrap_or("similarity").to_string();
                    let ex = similarity_heatmap_export(&sim, sc.ordering)?;
                    let support_path = format!("similarity_{name}_support.csv");
                    let manifest = HeatmapManifest {
                        kind,
                        ordering: sc.ordering,
                        order: ex.order.clone(),
                        support_path: support_path.clone(),
                    };
                    out.push((format!("similarity_{name}.csv"), ex.csv));
                    out.push((support_path, ex.support_csv));
                    out.push((format!("similarity_{name}.manifest.json"), to_json_pretty(&manifest)?));
                    kinds.push(name);
                }
                json!({"kinds": kinds})
            }
            Stage::Proximity => {
                let adv = self.state.adv.as_ref().expect("rca stage ran");
                let phi = proximity(adv)?;
                let omega = RelatednessDensity::compute(adv, &phi)?;
                out.push(("proximity.csv".into(), phi.to_csv()?));
                out.push(("density.csv".into(), omega.to_csv()?));
                json!({"articles": phi.articles().len(), "nonzero": phi.values().nnz()})
            }
            Stage::Predict => {
                let opts = cfg.predict.as_ref().expect("enabled");
                let mut yearly = BTreeMap::new();
                for y in event_years(self.events.iter().copied()) {
                    match build_activity_matrix(slice_by_year(self.events.iter().copied(), y), &corpus, false) {
                        Ok(m) => {
                            yearly.insert(y, m);
                        }
                        Err(Error::EmptyMatrix) => {}
                        Err(e) => return Err(e),
                    }
                }
                let series = auc_series(&yearly, opts)?;
                out.push(("auc_series.csv".into(), auc_series_csv(series.iter().map(|o| (self.slice.name.as_str(), o)))?));
                out.push(("predict.json".into(), to_json_pretty(&series)?));
                let aucs: BTreeMap<String, f64> = series
                    .iter()
                    .filter_map(|o| match o {
                        YearOutcome::Scored(r) => Some((r.target_year.to_string(), r.auc)),
                        YearOutcome::Skipped { .. } => None,
                    })
                    .collect();
                json!({"years": yearly.len(), "auc": aucs})
            }
            Stage::Geo => {
                let g = cfg.geo.as_ref().expect("enabled");
                let (weights, report) = self.loaded.weights.as_ref().expect("views loaded");
                let countries = geo::weighted_eci(weights, self.state.scores.as_ref().expect("complexity stage ran"))?;
                let ranking = geo::rank_countries(&countries.values, g.top_n)?;
                out.push(("country_eci.csv".into(), geo::map_csv(&countries.values)?));
                out.push(("country_ranking.csv".into(), geo::ranking_csv(&ranking)?));
                out.push((
                    "geo.json".into(),
                    to_json_pretty(&json!({
                        "snapshot_year": countries.snapshot_year,
                        "countries": countries.values.len(),
                        "omitted": countries.omitted,
                        "weights_report": report,
                    }))?,
                ));
                let low = countries.values.values().filter(|c| c.low_coverage()).count();
                let s = json!({"snapshot_year": countries.snapshot_year, "countries": countries.values.len(), "low_coverage": low});
                self.state.countries = Some(countries);
                s
            }
            Stage::Regress => {
                let rc = cfg.regress.as_ref().expect("enabled");
                let g = cfg.geo.as_ref().expect("regress requires geo");
                let table = self.loaded.indicators.as_ref().expect("indicators loaded");
                let countries = self.state.countries.as_ref().expect("geo stage ran");
                let year = rc.year.unwrap_or(g.snapshot_year);
                let mut fits = BTreeMap::new();
                for ind in &rc.indicators {
                    let reg = regress_eci(&countries.values, table, &ind.name, year, rc.top_n, ind.transform)?;
                    let stem = file_stem(&ind.name);
                    out.push((format!("regress_{stem}.csv"), scatter_csv(&reg)?));
                    out.push((format!("regress_{stem}.json"), to_json_pretty(&reg)?));
                    fits.insert(ind.name.clone(), json!({"slope": reg.fit.slope, "r2": reg.fit.r2, "p_slope": reg.fit.p_slope, "n": reg.fit.n}));
                }
                json!(fits)
            }
            Stage::Lorenz => {
                let mut totals: BTreeMap<(&str, &str), u64> = BTreeMap::new();
                for e in &self.events {
                    *totals.entry((&e.language, &e.editor)).or_default() += 1;
                }
                let l = lorenz_from_totals(&totals.into_values().collect::<Vec<_>>())?;
                out.push(("lorenz.csv".into(), lorenz_csv(&l)?));
                json!({"gini": l.gini, "editors": l.editors})
            }
            Stage::Reverts => {
                let sc = cfg.stats.as_ref().expect("enabled");
                let evs: Vec<EditEvent> = self.events.iter().map(|&e| e.clone()).collect();
                let tallies = tally_editors(&evs, sc.lookback, false);
                let gap = revert_rate_gap(&tallies.tallies, sc.stratification)?;
                out.push((
                    "reverts.json".into(),
                    to_json_pretty(&json!({"missing_checksums": tallies.missing_checksums, "gap": gap}))?,
                ));
                json!({"gap": gap.gap, "z": gap.z, "p": gap.p, "significant": gap.significant})
            }
            Stage::Dancer => {
                let sc = cfg.stats.as_ref().expect("enabled");
                let emb = self.loaded.embeddings.as_ref().expect("embeddings loaded");
                let evs: Vec<EditEvent> = self.events.iter().map(|&e| e.clone()).collect();
                let sessions = sessionize(&evs, Duration::minutes(sc.session_timeout_minutes));
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["language", "editor", "start", "edits", "steps", "skipped", "score"])?;
                let (mut sum, mut scored) = (0.0, 0usize);
                for s in &sessions {
                    let d = session_dancer_score(s, emb);
                    if let Some(v) = d.score {
                        sum += v;
                        scored += 1;
                    }
                    w.write_record([
                        s.language.clone(),
                        s.editor.clone(),
                        format_timestamp(&s.edits[0].1),
                        s.edits.len().to_string(),
                        d.steps.to_string(),
                        d.skipped.to_string(),
                        d.score.map(fmt_f64).unwrap_or_default(),
                    ])?;
                }
                out.push(("dancer.csv".into(), w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?));
                json!({
                    "sessions": sessions.len(),
                    "scored": scored,
                    "mean_score": (scored > 0).then(|| sum / scored as f64),
                })
            }
            Stage::Transition => unreachable!("transition is not a per-slice stage"),
        };
        Ok((out, summary))
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Status {
    Executed,
    Skipped,
    Blocked,
    Failed(String),
}

struct SliceOutcome {
    records: Vec<StageRecord>,
    statuses: Vec<(Stage, Status)>,
}

fn run_slice(
    cfg: &PipelineConfig,
    loaded: &Loaded,
    slice: &SliceConfig,
    prev: &RunManifest,
    out_dir: &Path,
) -> Result<SliceOutcome> {
    let stages: Vec<Stage> = Stage::PER_SLICE.into_iter().filter(|&s| enabled(cfg, loaded, s)).collect();
    let slice_value = serde_json::to_value(slice)?;
    let mut fingerprints: BTreeMap<Stage, String> = BTreeMap::new();
    let mut fresh: BTreeMap<Stage, &StageRecord> = BTreeMap::new();
    for &s in &stages {
        let raw: Vec<&FileDigest> = s.raw_inputs().iter().filter_map(|n| loaded.digests.get(*n)).collect();
        let up: Vec<&str> = s.deps().iter().map(|d| fingerprints[d].as_str()).collect();
        let fp = fingerprint(s, &slice_value, &params(cfg, s), &raw, &up);
        if let Some(rec) = prev.stage(&slice.name, s) {
            if rec.fingerprint == fp && outputs_intact(out_dir, rec) {
                fresh.insert(s, rec);
            }
        }
        fingerprints.insert(s, fp);
    }
    // A fresh stage still runs in memory when a stale dependent needs it.
    let mut needed: BTreeMap<Stage, bool> = stages.iter().map(|&s| (s, !fresh.contains_key(&s))).collect();
    for &s in stages.iter().rev() {
        if needed[&s] {
            for d in s.deps() {
                needed.insert(*d, true);
            }
        }
    }

    let corpus = slice.corpus_slice();
    let events: Vec<&EditEvent> = loaded
        .events
        .iter()
        .filter(|e| !(cfg.exclude_bots && e.is_bot) && corpus.contains(e))
        .collect();
    let mut run = SliceRun {
        cfg,
        loaded,
        slice,
        events,
        state: SliceState::default(),
    };
    let mut records: BTreeMap<Stage, StageRecord> = BTreeMap::new();
    let mut statuses = Vec::new();
    let mut ok: BTreeMap<Stage, bool> = BTreeMap::new();
    for &s in &stages {
        if s.deps().iter().any(|d| !ok[d]) {
            ok.insert(s, false);
            statuses.push((s, Status::Blocked));
            continue;
        }
        if !needed[&s] {
            records.insert(s, fresh[&s].clone());
            ok.insert(s, true);
            statuses.push((s, Status::Skipped));
            continue;
        }
        match run.compute(s) {
            Ok((outputs, summary)) => {
                if let Some(rec) = fresh.get(&s) {
                    records.insert(s, (*rec).clone());
                    statuses.push((s, Status::Skipped));
                } else {
                    let mut digests = Vec::new();
                    for (rel, bytes) in &outputs {
                        let rel = format!("{}/{rel}", slice.name);
                        write_atomic(&out_dir.join(&rel), bytes)?;
                        digests.push(FileDigest {
                            path: rel,
                            sha256: sha256_hex(bytes),
                        });
                    }
                    let mut inputs: Vec<FileDigest> =
                        s.raw_inputs().iter().filter_map(|n| loaded.digests.get(*n).cloned()).collect();
                    for d in s.deps() {
                        inputs.extend(records[d].outputs.iter().cloned());
                    }
                    records.insert(
                        s,
                        StageRecord {
                            slice: slice.name.clone(),
                            stage: s,
                            fingerprint: fingerprints[&s].clone(),
                            params: params(cfg, s),
                            inputs,
                            outputs: digests,
                            summary,
                        },
                    );
                    statuses.push((s, Status::Executed));
                }
                ok.insert(s, true);
            }
            Err(e) => {
                ok.insert(s, false);
                statuses.push((s, Status::Failed(e.to_string())));
            }
        }
    }
    Ok(SliceOutcome {
        records: stages.iter().filter_map(|s| records.remove(s)).collect(),
        statuses,
    })
}

fn read_ranking(bytes: &[u8]) -> Result<Vec<RankRow>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
        match (rec.get(0).and_then(|s| s.parse().ok()), rec.get(1), parse(2), parse(3)) {
            (Some(rank), Some(c), Some(value), Some(coverage)) => rows.push(RankRow {
                rank,
                country: c.to_string(),
                value,
                coverage,
            }),
            _ => return Err(Error::Invalid("malformed country ranking".into())),
        }
    }
    Ok(rows)
}

/// Runs every enabled stage for every slice and writes `manifest.json` in
/// the output directory. Stage failures are reported, not returned; `Err`
/// means the run could not start or an artifact could not be written.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(RunManifest, PipelineReport)> {
    cfg.validate()?;
    let out_dir = cfg.resolve(&cfg.output_dir);
    let loaded = load_inputs(cfg)?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let prev: RunManifest = std::fs::read(&manifest_path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or(RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            format_version: FORMAT_VERSION,
            inputs: BTreeMap::new(),
            stages: Vec::new(),
            errors: Vec::new(),
        });

    let outcomes: Vec<Result<SliceOutcome>> = cfg
        .slices
        .par_iter()
        .map(|s| run_slice(cfg, &loaded, s, &prev, &out_dir))
        .collect();

    let mut report = PipelineReport::default();
    let mut stages = Vec::new();
    let mut errors = Vec::new();
    for (slice, outcome) in cfg.slices.iter().zip(outcomes) {
        let outcome = outcome?;
        for (stage, status) in outcome.statuses {
            let label = format!("{}/{}", slice.name, stage.name());
            match status {
                Status::Executed => report.executed.push(label),
                Status::Skipped => report.skipped.push(label),
                Status::Blocked => report.blocked.push(label),
                Status::Failed(message) => errors.push(StageError {
                    slice: slice.name.clone(),
                    stage,
                    message,
                }),
            }
        }
        stages.extend(outcome.records);
    }

    if enabled(cfg, &loaded, Stage::Transition) {
        let rankings: Vec<(&str, FileDigest)> = cfg
            .slices
            .iter()
            .filter_map(|s| {
                let rec = stages.iter().find(|r| r.slice == s.name && r.stage == Stage::Geo)?;
                let f = rec.outputs.iter().find(|o| o.path.ends_with("country_ranking.csv"))?;
                Some((s.name.as_str(), f.clone()))
            })
            .collect();
        let inputs: Vec<FileDigest> = rankings.iter().map(|(_, f)| f.clone()).collect();
        let refs: Vec<&FileDigest> = inputs.iter().collect();
        let fp = fingerprint(Stage::Transition, &Value::Null, &json!({}), &refs, &[]);
        let label = format!("{GLOBAL_SLICE}/transition");
        match prev.stage(GLOBAL_SLICE, Stage::Transition) {
            Some(rec) if rec.fingerprint == fp && outputs_intact(&out_dir, rec) => {
                stages.push(rec.clone());
                report.skipped.push(label);
            }
            _ => {
                let mut tables = Vec::new();
                for (slice, f) in &rankings {
                    let path = out_dir.join(&f.path);
                    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    tables.push((*slice, read_ranking(&bytes)?));
                }
                let csv = geo::rank_transition_csv(tables.iter().map(|(s, r)| (*s, r.as_slice())))?;
                let rel = "rank_transition.csv".to_string();
                write_atomic(&out_dir.join(&rel), &csv)?;
                stages.push(StageRecord {
                    slice: GLOBAL_SLICE.into(),
                    stage: Stage::Transition,
                    fingerprint: fp,
                    params: json!({}),
                    inputs,
                    outputs: vec![FileDigest {
                        path: rel,
                        sha256: sha256_hex(&csv),
                    }],
                    summary: json!({"slices": tables.len()}),
                });
                report.executed.push(label);
            }
        }
    }

    report.failed = errors.clone();
    let manifest = RunManifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        format_version: FORMAT_VERSION,
        inputs: loaded.digests,
        stages,
        errors,
    };
    let bytes = to_json_pretty(&manifest)?;
    if std::fs::read(&manifest_path).ok().as_deref() != Some(&bytes[..]) {
        write_atomic(&manifest_path, &bytes)?;
    }
    Ok((manifest, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(dir: &Path) -> PipelineConfig {
        let corpus = crate::synth::generate(&crate::synth::SynthConfig {
            events: 3000,
            ..Default::default()
        })
        .unwrap();
        let mut ev = Vec::new();
        crate::matrix::write_events(&mut ev, &corpus.events).unwrap();
        std::fs::write(dir.join("events.tsv"), ev).unwrap();
        std::fs::write(dir.join("views.csv"), geo::views_csv(&corpus.views).unwrap()).unwrap();
        let cfg = json!({
            "inputs": {"events": "events.tsv", "views": "views.csv"},
            "output_dir": "out",
            "slices": [{"name": "all"}, {"name": "cooking", "genre_or_topic": "cooking"}],
            "similarity": {},
            "proximity": {},
            "predict": {},
            "geo": {"snapshot_year": 2016},
            "stats": {},
        });
        std::fs::write(dir.join("config.json"), cfg.to_string()).unwrap();
        PipelineConfig::load(&dir.join("config.json")).unwrap()
    }

    #[test]
    fn rerun_is_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path());
        let (m1, r1) = run_pipeline(&cfg).unwrap();
        assert!(r1.ok(), "{r1:?}");
        assert!(r1.skipped.is_empty());
        assert!(r1.executed.contains(&"cooking/similarity".to_string()));
        // Dancer needs embeddings, which this config omits.
        assert!(!r1.executed.iter().any(|s| s.ends_with("/dancer")));
        let (m2, r2) = run_pipeline(&cfg).unwrap();
        assert!(r2.executed.is_empty(), "{r2:?}");
        assert_eq!(m1, m2);
    }

    #[test]
    fn changed_params_rerun_dependents_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path());
        run_pipeline(&cfg).unwrap();
        cfg.geo.as_mut().unwrap().top_n = 5;
        let (_, r) = run_pipeline(&cfg).unwrap();
        assert_eq!(r.executed, ["all/geo", "cooking/geo", "*/transition"]);
        std::fs::remove_file(dir.path().join("out/all/eci.csv")).unwrap();
        let (_, r) = run_pipeline(&cfg).unwrap();
        assert_eq!(r.executed, ["all/complexity"]);
    }

    #[test]
    fn unknown_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        setup(dir.path());
        let p = dir.path().join("bad.json");
        std::fs::write(&p, r#"{"inputs": {"events": "events.tsv"}, "output_dir": "o", "slices": [], "bogus": 1}"#).unwrap();
        let err = PipelineConfig::load(&p).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        std::fs::write(&p, r#"{"inputs": {"events": "nope.tsv"}, "output_dir": "o", "slices": [{"name": "a"}]}"#).unwrap();
        assert!(PipelineConfig::load(&p).unwrap_err().to_string().contains("nope.tsv"));
    }

    #[test]
    fn stage_failure_blocks_dependents_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path());
        cfg.slices.push(SliceConfig {
            name: "empty".into(),
            genre_or_topic: Some("no-such-genre".into()),
            year_range: None,
            parent_topic: None,
        });
        let (m, r) = run_pipeline(&cfg).unwrap();
        assert!(!r.ok());
        assert!(r.failed.iter().any(|e| e.slice == "empty" && e.stage == Stage::Matrix));
        assert!(r.blocked.contains(&"empty/geo".to_string()));
        assert!(m.stage("all", Stage::Geo).is_some());
        assert_eq!(m.errors, r.failed);
    }
}
