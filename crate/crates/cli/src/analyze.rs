use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Subcommand, ValueEnum};
use serde_json::json;

use kcomplex_core::behavior::{
    self, lorenz_csv, lorenz_from_totals, read_embeddings, revert_rate_gap, sessionize, tally_editors,
    Stratification,
};
use kcomplex_core::complexity::{self, rank_articles_by_pci, read_eci_csv, Method};
use kcomplex_core::error::{Error, Result};
use kcomplex_core::geo;
use kcomplex_core::matrix::io::{read_sidecar, write_with_sidecar};
use kcomplex_core::matrix::{
    apply_topic_labels, build_activity_matrix, event_years, prune, read_events, read_topics, slice_by_year,
    write_events, ActivityMatrix, CorpusSlice, EditEvent,
};
use kcomplex_core::output::{fmt_f64, to_json_pretty};
use kcomplex_core::pipeline::{run_pipeline, PipelineConfig};
use kcomplex_core::proximity::{
    auc_series, auc_series_csv, proximity as phi, Evaluation, LogisticOptions, PredictOptions, RelatednessDensity,
};
use kcomplex_core::rca::{binarize, compute_rca, AdvantageMatrix, RcaMatrix, DEFAULT_THRESHOLD};
use kcomplex_core::regress::{read_indicators, regress_eci, scatter_csv, Transform, DEFAULT_TOP_N};
use kcomplex_core::similarity::{
    log_rca_pearson, portfolio_cosine, rca_cosine, similarity_heatmap_export, HeatmapManifest, Ordering,
    SimilarityKind,
};
use kcomplex_core::synth::{self, SynthConfig};

use crate::{read_file, with_name, write_file};

#[derive(Args)]
pub struct SliceArgs {
    /// Edit-event TSV.
    #[arg(long)]
    events: PathBuf,
    /// Keep only events tagged with this genre or topic.
    #[arg(long)]
    genre: Option<String>,
    /// Inclusive year range, e.g. 2014:2016.
    #[arg(long, value_parser = parse_years)]
    years: Option<(i32, i32)>,
    /// Topic labels CSV (`article,parent_topic,child_topic`) added as tags.
    #[arg(long)]
    topics: Option<PathBuf>,
    /// Keep bot edits.
    #[arg(long)]
    include_bots: bool,
}

fn parse_years(s: &str) -> std::result::Result<(i32, i32), String> {
    let (a, b) = s.split_once(':').ok_or("expected FROM:TO")?;
    let a = a.trim().parse().map_err(|_| format!("bad year `{a}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad year `{b}`"))?;
    Ok((a, b))
}

impl SliceArgs {
    fn slice(&self) -> CorpusSlice {
        CorpusSlice {
            genre_or_topic: self.genre.clone(),
            year_range: self.years,
            parent_topic: None,
        }
    }

    fn load(&self) -> Result<Vec<EditEvent>> {
        let mut events = read_events(&read_file(&self.events)?[..])?;
        if let Some(t) = &self.topics {
            apply_topic_labels(&mut events, &read_topics(&read_file(t)?[..])?);
        }
        Ok(events)
    }
}

fn ok() -> Result<ExitCode> {
    Ok(ExitCode::SUCCESS)
}

fn load_activity(path: &PathBuf) -> Result<ActivityMatrix> {
    ActivityMatrix::from_csv(&read_file(path)?[..], read_sidecar(path)?.as_ref())
}

fn load_rca(path: &PathBuf) -> Result<RcaMatrix> {
    RcaMatrix::from_csv(&read_file(path)?[..], read_sidecar(path)?.as_ref())
}

fn load_advantage(path: &PathBuf) -> Result<AdvantageMatrix> {
    AdvantageMatrix::from_csv(&read_file(path)?[..], read_sidecar(path)?.as_ref())
}

#[derive(Args)]
pub struct MatrixArgs {
    #[command(flatten)]
    slice: SliceArgs,
    /// Output triplet CSV; a `.manifest.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Drop languages with fewer total edits (repeated to a fixpoint).
    #[arg(long, default_value_t = 1)]
    min_row: u64,
    /// Drop articles with fewer total edits.
    #[arg(long, default_value_t = 1)]
    min_col: u64,
}

pub fn matrix(a: MatrixArgs) -> Result<ExitCode> {
    let events = a.slice.load()?;
    let m = build_activity_matrix(&events, &a.slice.slice(), !a.slice.include_bots)?;
    let m = prune(&m, a.min_row, a.min_col)?.matrix;
    write_with_sidecar(&a.out, &m.to_csv()?, &m.manifest())?;
    println!("{} languages x {} articles, {} edits", m.languages().len(), m.articles().len(), m.total());
    ok()
}

#[derive(Args)]
pub struct RcaArgs {
    /// Activity matrix CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// RCA triplet CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the binary advantage matrix here.
    #[arg(long)]
    advantage_out: Option<PathBuf>,
    /// Advantage threshold (inclusive).
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

pub fn rca(a: RcaArgs) -> Result<ExitCode> {
    let rca = compute_rca(&load_activity(&a.input)?)?;
    write_with_sidecar(&a.out, &rca.to_csv()?, &rca.manifest())?;
    if let Some(out) = &a.advantage_out {
        let adv = binarize(&rca, a.threshold)?;
        write_with_sidecar(out, &adv.to_csv()?, &adv.manifest())?;
        println!("{} advantages", adv.n_set());
    }
    ok()
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Eigenvector,
    Reflections,
}

#[derive(Args)]
pub struct ComplexityArgs {
    /// Advantage matrix CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory for eci.csv, pci.csv, pci_top.csv and complexity.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Scoring route.
    #[arg(long, value_enum, default_value = "eigenvector")]
    method: MethodArg,
    /// Iteration cap for the method of reflections.
    #[arg(long, default_value_t = complexity::DEFAULT_ITERATIONS)]
    iterations: usize,
    /// Convergence tolerance for the method of reflections.
    #[arg(long, default_value_t = complexity::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Rows in the PCI ranking.
    #[arg(long, default_value_t = 20)]
    top_n: usize,
}

pub fn complexity(a: ComplexityArgs) -> Result<ExitCode> {
    let method = match a.method {
        MethodArg::Eigenvector => Method::Eigenvector,
        MethodArg::Reflections => Method::Reflections {
            iterations: a.iterations,
            tolerance: a.tolerance,
        },
    };
    let s = complexity::compute(&load_advantage(&a.input)?, method)?;
    write_file(&a.out_dir.join("eci.csv"), &s.eci_csv()?)?;
    write_file(&a.out_dir.join("pci.csv"), &s.pci_csv()?)?;
    write_file(&a.out_dir.join("pci_top.csv"), &complexity::ranking_csv(&rank_articles_by_pci(&s, a.top_n)?)?)?;
    write_file(&a.out_dir.join("complexity.json"), &to_json_pretty(&s.manifest())?)?;
    if !s.converged {
        eprintln!("warning: reflections did not converge in {} iterations", s.iterations_run);
    }
    ok()
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    PortfolioCosine,
    RcaCosine,
    LogRcaPearson,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderingArg {
    Input,
    Seriation,
}

#[derive(Args)]
pub struct SimilarityArgs {
    /// Similarity measure.
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Activity matrix for portfolio-cosine, RCA matrix otherwise.
    #[arg(long = "in")]
    input: PathBuf,
    /// Heatmap CSV; support counts and a manifest are written alongside.
    #[arg(long)]
    out: PathBuf,
    /// Row and column order of the heatmap.
    #[arg(long, value_enum, default_value = "seriation")]
    ordering: OrderingArg,
    /// For log-rca-pearson: use every article, with zero RCA mapped to ln(epsilon).
    #[arg(long)]
    epsilon: Option<f64>,
}

pub fn similarity(a: SimilarityArgs) -> Result<ExitCode> {
    let (sim, kind) = match a.kind {
        KindArg::PortfolioCosine => (portfolio_cosine(&load_activity(&a.input)?)?, SimilarityKind::PortfolioCosine),
        KindArg::RcaCosine => (rca_cosine(&load_rca(&a.input)?)?, SimilarityKind::RcaCosine),
        KindArg::LogRcaPearson => (log_rca_pearson(&load_rca(&a.input)?, a.epsilon)?, SimilarityKind::LogRcaPearson),
    };
    let ordering = match a.ordering {
        OrderingArg::Input => Ordering::Input,
        OrderingArg::Seriation => Ordering::Seriation,
    };
    let ex = similarity_heatmap_export(&sim, ordering)?;
    let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "similarity".into());
    let support = with_name(&a.out, &format!("{stem}_support.csv"));
    write_file(&a.out, &ex.csv)?;
    write_file(&support, &ex.support_csv)?;
    let manifest = HeatmapManifest {
        kind,
        ordering,
        order: ex.order,
        support_path: support.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    write_file(&kcomplex_core::output::sidecar_path(&a.out), &to_json_pretty(&manifest)?)?;
    ok()
}

#[derive(Args)]
pub struct ProximityArgs {
    /// Advantage matrix CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Proximity CSV (upper triangle).
    #[arg(long)]
    out: PathBuf,
    /// Also write relatedness density for every language and article.
    #[arg(long)]
    density_out: Option<PathBuf>,
}

pub fn proximity(a: ProximityArgs) -> Result<ExitCode> {
    let adv = load_advantage(&a.input)?;
    let p = phi(&adv)?;
    write_file(&a.out, &p.to_csv()?)?;
    if let Some(out) = &a.density_out {
        write_file(out, &RelatednessDensity::compute(&adv, &p)?.to_csv()?)?;
    }
    ok()
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluationArg {
    InSample,
    PreviousYearModel,
}

#[derive(Args)]
pub struct PredictArgs {
    #[command(flatten)]
    slice: SliceArgs,
    /// AUC series CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-year fits and skip reasons as JSON.
    #[arg(long)]
    fits_out: Option<PathBuf>,
    /// Label written in the slice column.
    #[arg(long, default_value = "all")]
    label: String,
    /// In-sample fits or cumulative training on earlier years.
    #[arg(long, value_enum, default_value = "in-sample")]
    evaluation: EvaluationArg,
    /// Score articles first seen in the target year (density 0).
    #[arg(long)]
    include_unseen: bool,
    /// RCA threshold for the advantage matrix.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Ridge penalty on the slope.
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
}

pub fn predict(a: PredictArgs) -> Result<ExitCode> {
    let events = a.slice.load()?;
    let slice = a.slice.slice();
    let mut yearly = BTreeMap::new();
    for y in event_years(&events) {
        match build_activity_matrix(slice_by_year(&events, y), &slice, !a.slice.include_bots) {
            Ok(m) => {
                yearly.insert(y, m);
            }
            Err(Error::EmptyMatrix) => {}
            Err(e) => return Err(e),
        }
    }
    let opts = PredictOptions {
        threshold: a.threshold,
        evaluation: match a.evaluation {
            EvaluationArg::InSample => Evaluation::InSample,
            EvaluationArg::PreviousYearModel => Evaluation::PreviousYearModel,
        },
        include_unseen_articles: a.include_unseen,
        logistic: LogisticOptions {
            l2: a.l2,
            ..Default::default()
        },
    };
    let series = auc_series(&yearly, &opts)?;
    write_file(&a.out, &auc_series_csv(series.iter().map(|o| (a.label.as_str(), o)))?)?;
    if let Some(p) = &a.fits_out {
        write_file(p, &to_json_pretty(&series)?)?;
    }
    ok()
}

#[derive(Args)]
pub struct GeoArgs {
    /// Views CSV `country,language,views`.
    #[arg(long)]
    views: PathBuf,
    /// ECI table `language,eci,diversity`.
    #[arg(long)]
    eci: PathBuf,
    /// Year the views were collected; recorded in the outputs.
    #[arg(long, default_value_t = 2016)]
    snapshot_year: i32,
    /// Map CSV `country_iso2,value,coverage,flag`.
    #[arg(long)]
    out: PathBuf,
    /// Ranking CSV.
    #[arg(long)]
    ranking_out: Option<PathBuf>,
    /// Rows in the ranking output.
    #[arg(long, default_value_t = 20)]
    top_n: usize,
}

pub fn geo(a: GeoArgs) -> Result<ExitCode> {
    let (weights, report) = geo::build_weights(&geo::read_views(&read_file(&a.views)?[..])?, a.snapshot_year)?;
    let countries = geo::weighted_eci_from_map(&weights, &read_eci_csv(&read_file(&a.eci)?[..])?)?;
    write_file(&a.out, &geo::map_csv(&countries.values)?)?;
    if let Some(p) = &a.ranking_out {
        write_file(p, &geo::ranking_csv(&geo::rank_countries(&countries.values, a.top_n)?)?)?;
    }
    let meta = json!({
        "snapshot_year": a.snapshot_year,
        "omitted": countries.omitted,
        "weights_report": report,
    });
    write_file(&kcomplex_core::output::sidecar_path(&a.out), &to_json_pretty(&meta)?)?;
    ok()
}

#[derive(Args)]
pub struct StatsArgs {
    #[command(subcommand)]
    command: StatsCommand,
}

#[derive(Clone, Copy, ValueEnum)]
enum StratArg {
    Pair,
    Editor,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Lorenz curve and Gini of edits per editor.
    Lorenz {
        #[command(flatten)]
        slice: SliceArgs,
        /// Lorenz points CSV `x,y`; Gini goes to the sidecar manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Revert-rate gap between high- and low-engagement editors.
    Reverts {
        #[command(flatten)]
        slice: SliceArgs,
        /// Per-editor Lorenz curve CSV.
        #[arg(long)]
        out: PathBuf,
        /// Maximum revisions back a checksum match may reach.
        #[arg(long)]
        lookback: Option<usize>,
        /// Engagement stratification unit.
        #[arg(long, value_enum, default_value = "pair")]
        by: StratArg,
    },
    /// Dancer score per editing session.
    Dancer {
        #[command(flatten)]
        slice: SliceArgs,
        /// Embeddings CSV `article,v1,...,vd`.
        #[arg(long)]
        embeddings: PathBuf,
        /// Per-editor dancer score CSV.
        #[arg(long)]
        out: PathBuf,
        /// Gap that closes an editing session.
        #[arg(long, default_value_t = behavior::DEFAULT_SESSION_TIMEOUT_MINUTES)]
        timeout_minutes: i64,
    },
    /// False-positive rate of the revert-gap test under equal rates.
    NullSim {
        /// Number of simulated comparisons.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// Edits per stratum.
        #[arg(long, default_value_t = 1_000)]
        n: u64,
        /// Shared revert rate of both strata.
        #[arg(long, default_value_t = 0.1)]
        rate: f64,
        /// Significance level.
        #[arg(long, default_value_t = behavior::SIGNIFICANCE_LEVEL)]
        alpha: f64,
        /// RNG seed.
        #[arg(long)]
        seed: u64,
    },
}

fn filtered(slice: &SliceArgs) -> Result<Vec<EditEvent>> {
    let s = slice.slice();
    Ok(slice
        .load()?
        .into_iter()
        .filter(|e| (slice.include_bots || !e.is_bot) && s.contains(e))
        .collect())
}

pub fn stats(a: StatsArgs) -> Result<ExitCode> {
    match a.command {
        StatsCommand::Lorenz { slice, out } => {
            let mut totals: BTreeMap<(String, String), u64> = BTreeMap::new();
            for e in filtered(&slice)? {
                *totals.entry((e.language, e.editor)).or_default() += 1;
            }
            let l = lorenz_from_totals(&totals.into_values().collect::<Vec<_>>())?;
            write_file(&out, &lorenz_csv(&l)?)?;
            let meta = json!({"gini": l.gini, "editors": l.editors});
            write_file(&kcomplex_core::output::sidecar_path(&out), &to_json_pretty(&meta)?)?;
            println!("gini {}", fmt_f64(l.gini));
        }
        StatsCommand::Reverts { slice, out, lookback, by } => {
            let tallies = tally_editors(&filtered(&slice)?, lookback, false);
            let by = match by {
                StratArg::Pair => Stratification::Pair,
                StratArg::Editor => Stratification::Editor,
            };
            let gap = revert_rate_gap(&tallies.tallies, by)?;
            write_file(&out, &to_json_pretty(&json!({"missing_checksums": tallies.missing_checksums, "gap": gap}))?)?;
            println!(
                "gap {} z {} p {}{}",
                fmt_f64(gap.gap),
                fmt_f64(gap.z),
                fmt_f64(gap.p),
                if gap.significant { " *" } else { "" }
            );
        }
        StatsCommand::Dancer { slice, embeddings, out, timeout_minutes } => {
            if timeout_minutes <= 0 {
                return Err(Error::Config("timeout must be positive".into()));
            }
            let emb = read_embeddings(&read_file(&embeddings)?[..])?;
            let sessions = sessionize(&filtered(&slice)?, chrono_minutes(timeout_minutes));
            let mut rows = String::from("language,editor,start,edits,steps,skipped,score\n");
            for s in &sessions {
                let d = behavior::session_dancer_score(s, &emb);
                rows.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    s.language,
                    s.editor,
                    kcomplex_core::matrix::format_timestamp(&s.edits[0].1),
                    s.edits.len(),
                    d.steps,
                    d.skipped,
                    d.score.map(fmt_f64).unwrap_or_default()
                ));
            }
            write_file(&out, rows.as_bytes())?;
        }
        StatsCommand::NullSim { trials, n, rate, alpha, seed } => {
            let r = behavior::null_false_positive_rate(trials, n, rate, alpha, seed)?;
            println!("{}", fmt_f64(r));
        }
    }
    ok()
}

fn chrono_minutes(m: i64) -> chrono::Duration {
    chrono::Duration::minutes(m)
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    Auto,
    Identity,
    Log10,
}

#[derive(Args)]
pub struct RegressArgs {
    /// Country map CSV from `geo`.
    #[arg(long)]
    countries: PathBuf,
    /// Indicator CSV `country_iso2,indicator,year,value`.
    #[arg(long)]
    indicators: PathBuf,
    /// Indicator name to regress on.
    #[arg(long)]
    indicator: String,
    /// Indicator year.
    #[arg(long)]
    year: i32,
    /// Keep the top countries by weighted ECI.
    #[arg(long, default_value_t = DEFAULT_TOP_N, conflicts_with = "all")]
    top_n: usize,
    /// Use every country.
    #[arg(long)]
    all: bool,
    /// Transform applied to the indicator.
    #[arg(long, value_enum, default_value = "auto")]
    transform: TransformArg,
    /// Scatter CSV `country,x,y`.
    #[arg(long)]
    out: PathBuf,
    /// Fit parameters as JSON.
    #[arg(long)]
    fit_out: Option<PathBuf>,
}

pub fn regress(a: RegressArgs) -> Result<ExitCode> {
    let countries = geo::read_map_csv(&read_file(&a.countries)?[..])?;
    let table = read_indicators(&read_file(&a.indicators)?[..])?;
    let transform = match a.transform {
        TransformArg::Auto => Transform::Auto,
        TransformArg::Identity => Transform::Identity,
        TransformArg::Log10 => Transform::Log10,
    };
    let top_n = (!a.all).then_some(a.top_n);
    let reg = regress_eci(&countries, &table, &a.indicator, a.year, top_n, transform)?;
    write_file(&a.out, &scatter_csv(&reg)?)?;
    if let Some(p) = &a.fit_out {
        write_file(p, &to_json_pretty(&reg)?)?;
    }
    println!(
        "n {} slope {} r2 {} p {}",
        reg.fit.n,
        fmt_f64(reg.fit.slope),
        fmt_f64(reg.fit.r2),
        fmt_f64(reg.fit.p_slope)
    );
    ok()
}

#[derive(Args)]
pub struct ReportArgs {
    /// Pipeline config JSON.
    #[arg(long)]
    config: PathBuf,
}

pub fn report(a: ReportArgs) -> Result<ExitCode> {
    let cfg = PipelineConfig::load(&a.config)?;
    let (_, report) = run_pipeline(&cfg)?;
    println!("executed {} stage(s), skipped {}", report.executed.len(), report.skipped.len());
    for e in &report.failed {
        eprintln!("failed {}/{}: {}", e.slice, e.stage.name(), e.message);
    }
    for b in &report.blocked {
        eprintln!("blocked {b}");
    }
    Ok(if report.ok() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

#[derive(Args)]
pub struct SynthArgs {
    /// Directory for the generated files.
    #[arg(long)]
    out_dir: PathBuf,
    /// RNG seed.
    #[arg(long)]
    seed: u64,
    /// Number of language editions.
    #[arg(long, default_value_t = 5)]
    languages: usize,
    /// Number of articles.
    #[arg(long, default_value_t = 20)]
    articles: usize,
    /// First calendar year of events.
    #[arg(long, default_value_t = 2014)]
    first_year: i32,
    /// Number of years.
    #[arg(long, default_value_t = 3)]
    years: usize,
    /// Number of edit events.
    #[arg(long, default_value_t = 10_000)]
    events: usize,
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let cfg = SynthConfig {
        languages: a.languages,
        articles: a.articles,
        first_year: a.first_year,
        years: a.years,
        events: a.events,
        seed: a.seed,
        ..Default::default()
    };
    let corpus = synth::generate(&cfg)?;
    let mut ev = Vec::new();
    write_events(&mut ev, &corpus.events)?;
    write_file(&a.out_dir.join("events.tsv"), &ev)?;
    write_file(&a.out_dir.join("views.csv"), &geo::views_csv(&corpus.views)?)?;
    write_file(
        &a.out_dir.join("indicators.csv"),
        &kcomplex_core::regress::indicators_csv(&corpus.indicators)?,
    )?;
    write_file(&a.out_dir.join("embeddings.csv"), &synth::embeddings_csv(&corpus.embeddings)?)?;
    let mut slices = vec![json!({"name": "all"})];
    slices.extend(cfg.genres.iter().map(|g| json!({"name": g, "genre_or_topic": g})));
    let config = json!({
        "inputs": {
            "events": "events.tsv",
            "views": "views.csv",
            "indicators": "indicators.csv",
            "embeddings": "embeddings.csv",
        },
        "output_dir": "out",
        "slices": slices,
        "similarity": {},
        "proximity": {},
        "predict": {},
        "geo": {"snapshot_year": corpus.snapshot_year},
        "regress": {"indicators": [
            {"name": "gni_per_capita", "transform": "log10"},
            {"name": "internet_users_pct", "transform": "identity"},
        ]},
        "stats": {},
    });
    write_file(&a.out_dir.join("pipeline.json"), &to_json_pretty(&config)?)?;
    println!("{} events", corpus.events.len());
    ok()
}
