//! Editor-level statistics: concentration of editing, revert rates by
//! engagement, and session-level semantic diversity.

mod dancer;
mod reverts;

pub use dancer::{
    read_embeddings, session_dancer_score, sessionize, dancer_score, DancerScore, Session,
    DEFAULT_SESSION_TIMEOUT_MINUTES,
};
pub use reverts::{detect_reverts, tally_editors, ArticleTally, EditorTally, RevertFlags, TallyReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::fmt_f64;
use crate::stats::normal_two_sided_p;

pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lorenz {
    /// Starts at (0, 0) and ends at (1, 1).
    pub points: Vec<(f64, f64)>,
    pub gini: f64,
    pub editors: usize,
}

pub fn lorenz_gini(tallies: &[EditorTally]) -> Result<Lorenz> {
    let totals: Vec<u64> = tallies.iter().map(EditorTally::total).collect();
    lorenz_from_totals(&totals)
}

/// Zero totals are dropped. Gini is one minus twice the trapezoidal area
/// under the curve.
pub fn lorenz_from_totals(totals: &[u64]) -> Result<Lorenz> {
    let mut t: Vec<u64> = totals.iter().copied().filter(|&x| x > 0).collect();
    if t.is_empty() {
        return Err(Error::Invalid("Lorenz curve needs at least one editor with edits".into()));
    }
    t.sort_unstable();
    let n = t.len() as f64;
    let sum: u128 = t.iter().map(|&x| x as u128).sum();
    let mut points = Vec::with_capacity(t.len() + 1);
    points.push((0.0, 0.0));
    let (mut cum, mut area, mut prev_y) = (0u128, 0.0, 0.0);
    for (i, &x) in t.iter().enumerate() {
        cum += x as u128;
        let y = cum as f64 / sum as f64;
        area += (prev_y + y) / (2.0 * n);
        points.push(((i + 1) as f64 / n, y));
        prev_y = y;
    }
    Ok(Lorenz {
        points,
        gini: (1.0 - 2.0 * area).max(0.0),
        editors: t.len(),
    })
}

pub fn lorenz_csv(l: &Lorenz) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y"])?;
    for &(x, y) in &l.points {
        w.write_record([fmt_f64(x), fmt_f64(y)])?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

/// Unit whose edits-per-article value decides the stratum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratification {
    /// Each (editor, article) pair is placed by its own edit count.
    #[default]
    Pair,
    /// Each editor is placed by mean edits per article edited.
    Editor,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub units: usize,
    pub edits: u64,
    pub reverted: u64,
}

impl Stratum {
    pub fn rate(&self) -> f64 {
        self.reverted as f64 / self.edits as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevertGap {
    pub stratification: Stratification,
    pub median: f64,
    /// Engagement strictly above the median.
    pub top: Stratum,
    pub bottom: Stratum,
    /// Top rate minus bottom rate.
    pub gap: f64,
    pub z: f64,
    pub p: f64,
    pub significant: bool,
}

/// Pooled two-sided two-proportion z-test of `x1/n1` against `x2/n2`.
pub fn two_proportion_z(x1: u64, n1: u64, x2: u64, n2: u64) -> (f64, f64) {
    let (p1, p2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 || !se.is_finite() {
        return (0.0, 1.0);
    }
    let z = (p1 - p2) / se;
    (z, normal_two_sided_p(z))
}

pub fn revert_rate_gap(tallies: &[EditorTally], by: Stratification) -> Result<RevertGap> {
    let units: Vec<(f64, u64, u64)> = match by {
        Stratification::Pair => tallies
            .iter()
            .flat_map(|t| t.articles.values())
            .filter(|a| a.edits > 0)
            .map(|a| (a.edits as f64, a.edits, a.reverted))
            .collect(),
        Stratification::Editor => tallies
            .iter()
            .filter(|t| t.total() > 0)
            .map(|t| {
                let n_articles = t.articles.values().filter(|a| a.edits > 0).count();
                (t.total() as f64 / n_articles as f64, t.total(), t.reverted())
            })
            .collect(),
    };
    let mut engagement: Vec<f64> = units.iter().map(|u| u.0).collect();
    if engagement.is_empty() {
        return Err(Error::EmptyStratum("top"));
    }
    engagement.sort_by(f64::total_cmp);
    let k = engagement.len();
    let median = if k % 2 == 1 {
        engagement[k / 2]
    } else {
        (engagement[k / 2 - 1] + engagement[k / 2]) / 2.0
    };
    let (mut top, mut bottom) = (Stratum::default(), Stratum::default());
    for &(e, edits, reverted) in &units {
        let s = if e > median { &mut top } else { &mut bottom };
        s.units += 1;
        s.edits += edits;
        s.reverted += reverted;
    }
    if top.edits == 0 {
        return Err(Error::EmptyStratum("top"));
    }
    if bottom.edits == 0 {
        return Err(Error::EmptyStratum("bottom"));
    }
    let (z, p) = two_proportion_z(top.reverted, top.edits, bottom.reverted, bottom.edits);
    Ok(RevertGap {
        stratification: by,
        median,
        top,
        bottom,
        gap: top.rate() - bottom.rate(),
        z,
        p,
        significant: p < SIGNIFICANCE_LEVEL,
    })
}

/// Share of `trials` equal-rate simulations (two groups of `n`, success
/// probability `rate`) whose two-proportion test rejects at `alpha`.
pub fn null_false_positive_rate(trials: usize, n: u64, rate: f64, alpha: f64, seed: u64) -> Result<f64> {
    use rand::SeedableRng;
    use rand_distr::{Binomial, Distribution};
    if trials == 0 || n == 0 {
        return Err(Error::Invalid("null simulation needs trials and a group size".into()));
    }
    let binom = Binomial::new(n, rate).map_err(|e| Error::Invalid(format!("binomial: {e}")))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let rejected = (0..trials)
        .filter(|_| {
            let (a, b) = (binom.sample(&mut rng), binom.sample(&mut rng));
            two_proportion_z(a, n, b, n).1 < alpha
        })
        .count();
    Ok(rejected as f64 / trials as f64)
}
