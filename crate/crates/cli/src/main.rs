use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kcomplex_core::error::{Error, ErrorClass, Result};

mod analyze;
mod ingest;

#[derive(Parser)]
#[command(name = "kcomplex", version, about = "Economic-complexity analytics for multilingual edit histories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Harvest articles, revisions or pageviews from the Wikimedia APIs.
    Ingest(ingest::IngestArgs),
    /// Build a language x article edit-count matrix from an event file.
    Matrix(analyze::MatrixArgs),
    /// Compute RCA and, optionally, the binary advantage matrix.
    Rca(analyze::RcaArgs),
    /// Compute ECI and PCI from an advantage matrix.
    Complexity(analyze::ComplexityArgs),
    /// Language-by-language similarity heatmap.
    Similarity(analyze::SimilarityArgs),
    /// Article proximity and relatedness density.
    Proximity(analyze::ProximityArgs),
    /// Yearly AUC of relatedness-density predictions of first edits.
    Predict(analyze::PredictArgs),
    /// Viewership-weighted country ECI and rankings.
    Geo(analyze::GeoArgs),
    /// Editor concentration, revert gaps and dancer scores.
    Stats(analyze::StatsArgs),
    /// Regress country ECI on an external indicator.
    Regress(analyze::RegressArgs),
    /// Run a full pipeline from a JSON config.
    Report(analyze::ReportArgs),
    /// Write a seeded synthetic corpus with a matching pipeline config.
    Synth(analyze::SynthArgs),
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    kcomplex_core::output::write_atomic(path, bytes)
}

pub(crate) fn with_name(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest::run(a),
        Command::Matrix(a) => analyze::matrix(a),
        Command::Rca(a) => analyze::rca(a),
        Command::Complexity(a) => analyze::complexity(a),
        Command::Similarity(a) => analyze::similarity(a),
        Command::Proximity(a) => analyze::proximity(a),
        Command::Predict(a) => analyze::predict(a),
        Command::Geo(a) => analyze::geo(a),
        Command::Stats(a) => analyze::stats(a),
        Command::Regress(a) => analyze::regress(a),
        Command::Report(a) => analyze::report(a),
        Command::Synth(a) => analyze::synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Rows(rows) = &e {
                for r in rows.iter().skip(1).take(20) {
                    eprintln!("  {r}");
                }
            }
            if let Error::Network { cursor: Some(c), .. } = &e {
                if let Ok(s) = serde_json::to_string(c) {
                    eprintln!("cursor: {s}");
                }
            }
            ExitCode::from(match e.class() {
                ErrorClass::Data => 2,
                ErrorClass::Network => 3,
            })
        }
    }
}
