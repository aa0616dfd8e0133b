//! Yearly prediction of first edits from relatedness density.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::auc::auc;
use super::logistic::{fit_logistic_with, LogisticFit, LogisticOptions};
use super::{proximity, RelatednessDensity};
use crate::error::{Error, Result};
use crate::matrix::ActivityMatrix;
use crate::output::fmt_f64;
use crate::rca::{binarize, compute_rca, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// Fit and score the same year's candidates.
    InSample,
    /// Score with the model fitted for the previous target year.
    PreviousYearModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictOptions {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_evaluation")]
    pub evaluation: Evaluation,
    /// Also treat articles first seen in the target year as candidates,
    /// with density 0.
    #[serde(default)]
    pub include_unseen_articles: bool,
    #[serde(default)]
    pub logistic: LogisticOptions,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_evaluation() -> Evaluation {
    Evaluation::InSample
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            threshold: DEFAULT_THRESHOLD,
            evaluation: Evaluation::InSample,
            include_unseen_articles: false,
            logistic: LogisticOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRun {
    /// First and last training year (inclusive).
    pub train_window: (i32, i32),
    pub target_year: i32,
    pub model: LogisticFit,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoCandidates,
    SingleClass,
    NoPreviousModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum YearOutcome {
    Scored(PredictionRun),
    Skipped {
        target_year: i32,
        reason: SkipReason,
        n_pos: usize,
        n_neg: usize,
    },
}

impl YearOutcome {
    pub fn target_year(&self) -> i32 {
        match self {
            YearOutcome::Scored(r) => r.target_year,
            YearOutcome::Skipped { target_year, .. } => *target_year,
        }
    }
}

struct Candidates {
    features: Vec<f64>,
    labels: Vec<bool>,
    train_window: (i32, i32),
}

fn candidates(
    yearly: &BTreeMap<i32, ActivityMatrix>,
    target_year: i32,
    opts: &PredictOptions,
) -> Result<Candidates> {
    let mut training = yearly.range(..target_year);
    let (&first, first_m) = training.next().ok_or_else(|| {
        Error::Precondition(format!("no training year before {target_year}"))
    })?;
    let mut last = first;
    let mut cumulative = first_m.clone();
    for (&y, m) in training {
        cumulative = cumulative.merge(m);
        last = y;
    }
    let adv = binarize(&compute_rca(&cumulative)?, opts.threshold)?;
    let phi = proximity(&adv)?;
    let omega = RelatednessDensity::compute(&adv, &phi)?;
    let target = yearly.get(&target_year);
    let is_first_edit = |lang: &str, art: &str| {
        target.is_some_and(|t| t.get(lang, art) > 0) && cumulative.get(lang, art) == 0
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (l, lang) in adv.languages().iter().enumerate() {
        for (a, art) in adv.articles().iter().enumerate() {
            if adv.is_set(l, a) {
                continue;
            }
            features.push(omega.get(l, a));
            labels.push(is_first_edit(lang, art));
        }
        if opts.include_unseen_articles {
            if let Some(t) = target {
                for art in t.articles().iter() {
                    if adv.articles().position(art).is_none() && cumulative.articles().position(art).is_none() {
                        features.push(0.0);
                        labels.push(is_first_edit(lang, art));
                    }
                }
            }
        }
    }
    Ok(Candidates {
        features,
        labels,
        train_window: (first, last),
    })
}

fn fit_year(
    yearly: &BTreeMap<i32, ActivityMatrix>,
    target_year: i32,
    opts: &PredictOptions,
) -> Result<std::result::Result<(Candidates, LogisticFit), YearOutcome>> {
    let c = candidates(yearly, target_year, opts)?;
    let n_pos = c.labels.iter().filter(|&&y| y).count();
    let n_neg = c.labels.len() - n_pos;
    let skip = |reason| YearOutcome::Skipped {
        target_year,
        reason,
        n_pos,
        n_neg,
    };
    if c.labels.is_empty() {
        return Ok(Err(skip(SkipReason::NoCandidates)));
    }
    if n_pos == 0 || n_neg == 0 {
        return Ok(Err(skip(SkipReason::SingleClass)));
    }
    let fit = fit_logistic_with(&c.features, &c.labels, opts.logistic)?;
    Ok(Ok((c, fit)))
}

/// Fits `P(first edit) = logistic(b0 + b1 * omega)` over candidate pairs
/// (no advantage in the cumulative training years) and reports the AUC.
pub fn predict_creation(
    yearly: &BTreeMap<i32, ActivityMatrix>,
    target_year: i32,
    opts: &PredictOptions,
) -> Result<YearOutcome> {
    let (c, fit) = match fit_year(yearly, target_year, opts)? {
        Ok(v) => v,
        Err(skipped) => return Ok(skipped),
    };
    let model = match opts.evaluation {
        Evaluation::InSample => fit,
        Evaluation::PreviousYearModel => {
            let prev = yearly.range(..target_year).next_back().map(|(&y, _)| y);
            let prev_fit = match prev {
                Some(y) if yearly.range(..y).next().is_some() => match fit_year(yearly, y, opts)? {
                    Ok((_, f)) => Some(f),
                    Err(_) => None,
                },
                _ => None,
            };
            match prev_fit {
                Some(f) => f,
                None => {
                    let n_pos = c.labels.iter().filter(|&&y| y).count();
                    return Ok(YearOutcome::Skipped {
                        target_year,
                        reason: SkipReason::NoPreviousModel,
                        n_pos,
                        n_neg: c.labels.len() - n_pos,
                    });
                }
            }
        }
    };
    let scores: Vec<f64> = c.features.iter().map(|&x| model.log_odds(x)).collect();
    let n_pos = c.labels.iter().filter(|&&y| y).count();
    Ok(YearOutcome::Scored(PredictionRun {
        train_window: c.train_window,
        target_year,
        model,
        auc: auc(&scores, &c.labels)?,
        n_pos,
        n_neg: c.labels.len() - n_pos,
    }))
}

/// Runs every year after the first as a target, in parallel.
pub fn auc_series(
    yearly: &BTreeMap<i32, ActivityMatrix>,
    opts: &PredictOptions,
) -> Result<Vec<YearOutcome>> {
    use rayon::prelude::*;
    let targets: Vec<i32> = yearly.keys().skip(1).copied().collect();
    targets
        .par_iter()
        .map(|&y| predict_creation(yearly, y, opts))
        .collect()
}

/// `slice,year,auc,n_pos,n_neg,separated`; skipped years leave `auc` and
/// `separated` empty.
pub fn auc_series_csv<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a YearOutcome)>,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["slice", "year", "auc", "n_pos", "n_neg", "separated"])?;
    for (slice, outcome) in rows {
        match outcome {
            YearOutcome::Scored(r) => w.write_record([
                slice,
                &r.target_year.to_string(),
                &fmt_f64(r.auc),
                &r.n_pos.to_string(),
                &r.n_neg.to_string(),
                if r.model.separated { "true" } else { "false" },
            ])?,
            YearOutcome::Skipped {
                target_year,
                n_pos,
                n_neg,
                ..
            } => w.write_record([
                slice,
                &target_year.to_string(),
                "",
                &n_pos.to_string(),
                &n_neg.to_string(),
                "",
            ])?,
        }
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}
