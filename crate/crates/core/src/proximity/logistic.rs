//! One-feature logistic regression fitted by damped Newton iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticOptions {
    /// Ridge penalty `l2/2 * slope^2`; the intercept is never penalized.
    #[serde(default)]
    pub l2: f64,
    #[serde(default = "default_max_iter")]
    pub max_iterations: usize,
    /// Stop once the log-likelihood improves by less than this.
    #[serde(default = "default_tol")]
    pub tolerance: f64,
}

fn default_max_iter() -> usize {
    100
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            l2: 0.0,
            max_iterations: default_max_iter(),
            tolerance: default_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub slope: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The classes are perfectly separated by the feature; the coefficients
    /// are whatever the iteration cap left them at.
    pub separated: bool,
}

impl LogisticFit {
    pub fn predict(&self, x: f64) -> f64 {
        sigmoid(self.log_odds(x))
    }

    /// Linear predictor. Ranks like [`LogisticFit::predict`] but does not
    /// saturate, so it is the score used for AUC.
    pub fn log_odds(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Unpenalized Bernoulli log-likelihood of `(intercept, slope)`.
pub fn log_likelihood(features: &[f64], labels: &[bool], intercept: f64, slope: f64) -> f64 {
    features
        .iter()
        .zip(labels)
        .map(|(&x, &y)| {
            let z = intercept + slope * x;
            if y {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum()
}

pub fn fit_logistic(features: &[f64], labels: &[bool]) -> Result<LogisticFit> {
    fit_logistic_with(features, labels, LogisticOptions::default())
}

fn separable(features: &[f64], labels: &[bool]) -> bool {
    let mut pos = (f64::INFINITY, f64::NEG_INFINITY);
    let mut neg = (f64::INFINITY, f64::NEG_INFINITY);
    for (&x, &y) in features.iter().zip(labels) {
        let r = if y { &mut pos } else { &mut neg };
        r.0 = r.0.min(x);
        r.1 = r.1.max(x);
    }
    neg.1 < pos.0 || pos.1 < neg.0
}

pub fn fit_logistic_with(
    features: &[f64],
    labels: &[bool],
    opts: LogisticOptions,
) -> Result<LogisticFit> {
    if features.len() != labels.len() {
        return Err(Error::Invalid("features and labels differ in length".into()));
    }
    if features.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("non-finite feature".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass);
    }
    if !(opts.l2 >= 0.0) {
        return Err(Error::Invalid("l2 penalty must be nonnegative".into()));
    }
    let constant_x = features.iter().all(|&x| x == features[0]);
    let separated = opts.l2 == 0.0 && !constant_x && separable(features, labels);
    let objective =
        |b0: f64, b1: f64| log_likelihood(features, labels, b0, b1) - 0.5 * opts.l2 * b1 * b1;

    let rate = n_pos as f64 / labels.len() as f64;
    let (mut b0, mut b1) = ((rate / (1.0 - rate)).ln(), 0.0);
    let mut ll = objective(b0, b1);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iterations {
        iterations = it;
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in features.iter().zip(labels) {
            let p = sigmoid(b0 + b1 * x);
            let r = f64::from(u8::from(y)) - p;
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * x;
            h00 += w;
            h01 += w * x;
            h11 += w * x * x;
        }
        g1 -= opts.l2 * b1;
        h11 += opts.l2;
        let (d0, d1) = if constant_x {
            (if h00 > 0.0 { g0 / h00 } else { 0.0 }, 0.0)
        } else {
            let det = h00 * h11 - h01 * h01;
            if !(det > 0.0) || !det.is_finite() {
                break;
            }
            ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det)
        };
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let (c0, c1) = (b0 + step * d0, b1 + step * d1);
            let cand = objective(c0, c1);
            if cand.is_finite() && cand >= ll {
                accepted = Some((c0, c1, cand));
                break;
            }
            step *= 0.5;
        }
        let Some((c0, c1, cand)) = accepted else {
            converged = !separated;
            break;
        };
        let improvement = cand - ll;
        b0 = c0;
        b1 = c1;
        ll = cand;
        if !separated && improvement < opts.tolerance {
            converged = true;
            break;
        }
    }
    Ok(LogisticFit {
        intercept: b0,
        slope: b1,
        log_likelihood: log_likelihood(features, labels, b0, b1),
        iterations,
        converged,
        separated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(x: &[f64], y: &[bool], b0: f64, b1: f64, h: f64) -> (f64, f64) {
        let g0 = (log_likelihood(x, y, b0 + h, b1) - log_likelihood(x, y, b0 - h, b1)) / (2.0 * h);
        let g1 = (log_likelihood(x, y, b0, b1 + h) - log_likelihood(x, y, b0, b1 - h)) / (2.0 * h);
        (g0, g1)
    }

    fn overlap_data() -> (Vec<f64>, Vec<bool>) {
        let x = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.35, 0.65];
        let y = vec![false, false, true, false, true, false, true, true, true, false, true];
        (x, y)
    }

    #[test]
    fn optimum_has_zero_gradient() {
        let (x, y) = overlap_data();
        let fit = fit_logistic(&x, &y).unwrap();
        assert!(fit.converged && !fit.separated);
        let (g0, g1) = fd_gradient(&x, &y, fit.intercept, fit.slope, 1e-5);
        assert!(g0.abs().max(g1.abs()) < 1e-6, "{g0} {g1}");
        assert!(fit.slope > 0.0);
    }

    #[test]
    fn separation_is_flagged_and_monotone() {
        let x = vec![0.1, 0.2, 0.4, 0.6, 0.8, 0.9];
        let y: Vec<bool> = x.iter().map(|&w| w > 0.5).collect();
        let fit = fit_logistic(&x, &y).unwrap();
        assert!(fit.separated);
        assert!(!fit.converged);
        assert!(fit.slope > 0.0);
        let scores: Vec<f64> = x.iter().map(|&w| fit.log_odds(w)).collect();
        assert!(scores.windows(2).all(|w| w[0] < w[1]), "{scores:?}");
    }

    #[test]
    fn flipped_feature_negates_slope() {
        let (x, y) = overlap_data();
        let a = fit_logistic(&x, &y).unwrap();
        let flipped: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        let b = fit_logistic(&flipped, &y).unwrap();
        assert!((a.slope + b.slope).abs() < 1e-6, "{} {}", a.slope, b.slope);
    }

    #[test]
    fn ridge_shrinks_slope() {
        let (x, y) = overlap_data();
        let plain = fit_logistic(&x, &y).unwrap();
        let ridge = fit_logistic_with(&x, &y, LogisticOptions { l2: 5.0, ..Default::default() })
            .unwrap();
        assert!(ridge.slope.abs() < plain.slope.abs());
    }

    #[test]
    fn constant_feature_fits_intercept_only() {
        let fit = fit_logistic(&[0.3, 0.3, 0.3, 0.3], &[true, false, false, false]).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert!((fit.predict(0.3) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(fit_logistic(&[0.1, 0.2], &[false, false]), Err(Error::SingleClass)));
    }
}
