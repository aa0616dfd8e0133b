//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kcomplex_core::behavior::{lorenz_from_totals, null_false_positive_rate, two_proportion_z};
use kcomplex_core::complexity::{eci_eigen, eci_reflections, DEFAULT_ITERATIONS, DEFAULT_TOLERANCE};
use kcomplex_core::geo::{build_weights, weighted_eci_from_map, ViewRow};
use kcomplex_core::ingest::{
    article_listing_csv, fetch_pageviews_by_country, fetch_revisions, harvest_revisions, resolve_genre_articles,
    ApiConfig, CachedTransport, Clock, FixtureTransport, GenreSpec, MediaWikiClient, MockClock, PoliteTransport,
    RateLimiter, Request, Response, RetryPolicy, RevisionOptions, Transport,
};
use kcomplex_core::matrix::{write_events, ActivityMatrix, EditEvent};
use kcomplex_core::pipeline::{run_pipeline, PipelineConfig};
use kcomplex_core::proximity::{
    auc, auc_series, fit_logistic, log_likelihood, mann_whitney_null_se, proximity, PredictOptions,
    RelatednessDensity, YearOutcome,
};
use kcomplex_core::rca::{binarize, compute_rca, AdvantageMatrix, RcaMatrix};
use kcomplex_core::similarity::{log_rca_pearson, portfolio_cosine, rca_cosine, SimilarityMatrix};
use kcomplex_core::Error;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn random_counts(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> Vec<Vec<u64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| if rng.random::<f64>() < density { rng.random_range(1..=200) } else { 0 })
                .collect()
        })
        .collect()
}

fn random_bits(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> Vec<Vec<u8>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| u8::from(rng.random::<f64>() < density)).collect())
        .collect()
}

/// Dense view of an advantage matrix in its own index order.
fn dense_bits(m: &AdvantageMatrix) -> Vec<Vec<f64>> {
    m.to_dense().into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect()
}

fn naive_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn standardized(v: &[f64]) -> bool {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9
}

// 1. RCA against a dense double loop.
fn rca_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (l, a) = (rng.random_range(2..=50), rng.random_range(2..=200));
        let density = rng.random_range(0.1..=0.7);
        let rows = random_counts(&mut rng, l, a, density);
        if rows.iter().flatten().all(|&c| c == 0) {
            continue;
        }
        let m = ActivityMatrix::from_dense(&rows).map_err(|e| e.to_string())?;
        let rca = compute_rca(&m).map_err(|e| e.to_string())?;
        let total: f64 = rows.iter().flatten().map(|&c| c as f64).sum();
        let row_tot: Vec<f64> = rows.iter().map(|r| r.iter().map(|&c| c as f64).sum()).collect();
        let col_tot: Vec<f64> = (0..a).map(|j| rows.iter().map(|r| r[j] as f64).sum()).collect();
        for (i, row) in rows.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let li = format!("l{i:0w$}", w = (l - 1).to_string().len());
                let aj = format!("a{j:0w$}", w = (a - 1).to_string().len());
                let got = rca.get(&li, &aj);
                if c == 0 {
                    ensure!(got == 0.0, "zero count at ({li},{aj}) has RCA {got}");
                    continue;
                }
                let want = (c as f64 / row_tot[i]) / (col_tot[j] / total);
                worst = worst.max(rel_err(got, want));
            }
        }
    }
    ensure!(worst <= 1e-12, "max relative error {worst:e}");
    let uniform = ActivityMatrix::from_dense(&vec![vec![7u64; 13]; 9]).map_err(|e| e.to_string())?;
    let u = compute_rca(&uniform).map_err(|e| e.to_string())?;
    ensure!(u.values().nnz() == 9 * 13, "uniform matrix lost entries");
    ensure!(u.values().iter().all(|(_, _, v)| v == 1.0), "uniform matrix is not all ones");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("100 matrices, max rel err {worst:.1e}, {elapsed:.2?}"))
}

// 2. Reflections and eigenvector routes agree.
fn eci_agreement() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut done = 0;
    let mut worst = 1.0f64;
    let mut attempts = 0;
    let mut max_steps = 0;
    while done < 50 {
        attempts += 1;
        ensure!(attempts < 500, "could not draw 50 usable matrices");
        let (l, a) = (rng.random_range(10..=30), rng.random_range(20..=80));
        let density = rng.random_range(0.2..=0.6);
        let Ok(m) = AdvantageMatrix::from_dense(&random_bits(&mut rng, l, a, density)).pruned() else {
            continue;
        };
        if m.languages().len() < 10 {
            continue;
        }
        let eig = match eci_eigen(&m) {
            Ok(s) => s,
            Err(Error::DegenerateSpectrum { .. }) => continue,
            Err(e) => return Err(e.to_string()),
        };
        // Random matrices often have a small spectral gap, so reflections
        // get room to converge instead of the 200-step default.
        let refl = eci_reflections(&m, 40_000, DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
        ensure!(refl.converged, "reflections did not converge in {} steps", refl.iterations_run);
        max_steps = max_steps.max(refl.iterations_run);
        ensure!(standardized(&eig.eci) && standardized(&refl.eci), "ECI not standardized");
        ensure!(standardized(&eig.pci) && standardized(&refl.pci), "PCI not standardized");
        let r = naive_pearson(&eig.eci, &refl.eci).ok_or("constant ECI")?.abs();
        worst = worst.min(r);
        done += 1;
    }
    ensure!(worst >= 0.99, "min |pearson| {worst}");
    let two = AdvantageMatrix::from_dense(&[vec![1, 1], vec![0, 1]]);
    let e = eci_eigen(&two).map_err(|e| e.to_string())?;
    let r = eci_reflections(&two, DEFAULT_ITERATIONS, DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
    ensure!(e.eci == vec![1.0, -1.0], "eigen 2x2 gave {:?}", e.eci);
    ensure!(r.eci == vec![1.0, -1.0], "reflections 2x2 gave {:?}", r.eci);
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("50 matrices, min |r| {worst:.6}, reflections <= {max_steps} steps, 2x2 exact, {elapsed:.2?}"))
}

fn oracle_phi(bits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = bits[0].len();
    let ubiq: Vec<f64> = (0..n).map(|a| bits.iter().map(|r| r[a]).sum()).collect();
    let mut phi = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            phi[a][b] = if a == b {
                1.0
            } else {
                bits.iter().map(|r| r[a] * r[b]).sum::<f64>() / ubiq[a].max(ubiq[b])
            };
        }
    }
    phi
}

fn oracle_omega(bits: &[Vec<f64>], phi: &[Vec<f64>], l: usize, a: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for b in 0..phi.len() {
        if b != a {
            num += bits[l][b] * phi[b][a];
            den += phi[b][a];
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

// 3. Proximity and relatedness density.
fn proximity_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    while done < 20 {
        let (l, a) = (rng.random_range(4..=15), rng.random_range(5..=30));
        let density = rng.random_range(0.15..=0.6);
        let Ok(m) = AdvantageMatrix::from_dense(&random_bits(&mut rng, l, a, density)).pruned() else {
            continue;
        };
        let bits = dense_bits(&m);
        let want = oracle_phi(&bits);
        let phi = proximity(&m).map_err(|e| e.to_string())?;
        let n = m.articles().len();
        for x in 0..n {
            for y in 0..n {
                let v = phi.get(x, y);
                ensure!((0.0..=1.0).contains(&v), "phi out of range: {v}");
                ensure!(v == phi.get(y, x), "phi not symmetric at ({x},{y})");
                ensure!(rel_err(v, want[x][y]) <= 1e-12, "phi({x},{y}) = {v}, oracle {}", want[x][y]);
            }
        }
        let omega = RelatednessDensity::compute(&m, &phi).map_err(|e| e.to_string())?;
        for li in 0..m.languages().len() {
            for x in 0..n {
                let w = omega.get(li, x);
                ensure!((0.0..=1.0).contains(&w), "omega out of range: {w}");
                let o = oracle_omega(&bits, &want, li, x);
                ensure!((w - o).abs() <= 1e-12, "omega({li},{x}) = {w}, oracle {o}");
            }
        }
        done += 1;
    }
    // Endpoints: l0 holds everything; l1 holds only a0.
    let m = AdvantageMatrix::from_dense(&[vec![1, 1, 1, 1], vec![1, 0, 0, 0], vec![0, 1, 1, 0], vec![0, 0, 1, 1]]);
    let phi = proximity(&m).map_err(|e| e.to_string())?;
    let omega = RelatednessDensity::compute(&m, &phi).map_err(|e| e.to_string())?;
    for a in 0..4 {
        ensure!(omega.get(0, a) == 1.0, "all-advantage language has omega {} at a{a}", omega.get(0, a));
    }
    ensure!(omega.get(1, 0) == 0.0, "no-other-advantage language has omega {}", omega.get(1, 0));
    Ok("20 matrices match oracle; endpoints exact".into())
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u128, 0u128);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            twice += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Three clusters of ten languages and twenty articles. In the training year
/// each language holds about half of its cluster's articles; the target year
/// adds first edits at the given (language, article) pairs.
fn planted_years(
    rng: &mut ChaCha8Rng,
    pick: impl FnOnce(&[(usize, usize)], &[f64]) -> Vec<(usize, usize)>,
) -> std::result::Result<(BTreeMap<i32, ActivityMatrix>, usize), String> {
    const L: usize = 30;
    const A: usize = 60;
    let mut train = vec![vec![0u64; A]; L];
    for (l, row) in train.iter_mut().enumerate() {
        let c = l / 10;
        for (a, cell) in row.iter_mut().enumerate().skip(c * 20).take(20) {
            if rng.random::<f64>() < 0.5 || a == c * 20 + l % 10 {
                *cell = 10;
            }
        }
    }
    let label = |p: &str, i: usize, w: usize| format!("{p}{i:0w$}");
    let m0 = ActivityMatrix::from_dense(&train).map_err(|e| e.to_string())?;
    let adv = binarize(&compute_rca(&m0).map_err(|e| e.to_string())?, 1.0).map_err(|e| e.to_string())?;
    let bits = dense_bits(&adv);
    let phi = oracle_phi(&bits);
    let mut cands = Vec::new();
    let mut omega = Vec::new();
    for l in 0..bits.len() {
        for a in 0..phi.len() {
            if bits[l][a] == 0.0 {
                cands.push((l, a));
                omega.push(oracle_omega(&bits, &phi, l, a));
            }
        }
    }
    let created = pick(&cands, &omega);
    let n_created = created.len();
    let t0 = Utc.with_ymd_and_hms(2015, 3, 1, 0, 0, 0).unwrap();
    let t1 = Utc.with_ymd_and_hms(2016, 3, 1, 0, 0, 0).unwrap();
    let mut events = Vec::new();
    for (l, row) in train.iter().enumerate() {
        for (a, &c) in row.iter().enumerate() {
            for _ in 0..c {
                events.push(EditEvent::new(label("l", l, 2), label("a", a, 2), "e", t0));
            }
        }
    }
    // Advantage indices follow the same sorted labels as the training matrix.
    for (l, a) in created {
        let (ll, aa) = (adv.languages().label(l).to_string(), adv.articles().label(a).to_string());
        events.push(EditEvent::new(ll, aa, "e", t1));
    }
    let mut yearly = BTreeMap::new();
    for y in [2015, 2016] {
        let m = kcomplex_core::matrix::build_activity_matrix(
            kcomplex_core::matrix::slice_by_year(&events, y),
            &kcomplex_core::CorpusSlice::all(),
            true,
        )
        .map_err(|e| e.to_string())?;
        yearly.insert(y, m);
    }
    Ok((yearly, n_created))
}

fn scored(yearly: &BTreeMap<i32, ActivityMatrix>) -> std::result::Result<(f64, usize, usize), String> {
    let series = auc_series(yearly, &PredictOptions::default()).map_err(|e| e.to_string())?;
    match series.as_slice() {
        [YearOutcome::Scored(r)] => Ok((r.auc, r.n_pos, r.n_neg)),
        other => Err(format!("unexpected series {other:?}")),
    }
}

// 4. Prediction harness.
fn prediction_harness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..200 {
        let n = rng.random_range(2..=1000);
        let levels = rng.random_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[n - 1] = false;
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = brute_auc(&scores, &labels);
        ensure!(got == want, "trial {trial}: auc {got} vs brute force {want}");
    }

    let (planted, n_pos) = planted_years(&mut rng, |cands, omega| {
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&x, &y| omega[y].total_cmp(&omega[x]).then(x.cmp(&y)));
        order.iter().take(cands.len() / 10).map(|&i| cands[i]).collect()
    })?;
    let (planted_auc, p, q) = scored(&planted)?;
    ensure!(p == n_pos, "harness saw {p} creations, planted {n_pos}");
    ensure!(planted_auc >= 0.95, "planted AUC {planted_auc}");

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(40);
    let (control, _) = planted_years(&mut ChaCha8Rng::seed_from_u64(41), |cands, _| {
        let mut c = cands.to_vec();
        c.shuffle(&mut shuffle_rng);
        c.truncate(cands.len() / 10);
        c
    })?;
    let (control_auc, cp, cq) = scored(&control)?;
    let se = mann_whitney_null_se(cp, cq);
    ensure!((control_auc - 0.5).abs() <= 3.0 * se, "shuffled AUC {control_auc}, SE {se}");
    Ok(format!(
        "brute-force AUC exact on 200 inputs; planted AUC {planted_auc:.4} ({p}/{q}); shuffled {control_auc:.4} (SE {se:.4})"
    ))
}

// 5. Logistic fit stationarity.
fn logistic_gradient() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 20 {
        let n = rng.random_range(30..=400);
        let (b0, b1) = (rng.random_range(-2.0..2.0), rng.random_range(-6.0..6.0));
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<bool> = x
            .iter()
            .map(|&xi| rng.random::<f64>() < 1.0 / (1.0 + (-(b0 + b1 * xi)).exp()))
            .collect();
        let Ok(fit) = fit_logistic(&x, &y) else { continue };
        if fit.separated {
            continue;
        }
        let h = 1e-5;
        let g0 = (log_likelihood(&x, &y, fit.intercept + h, fit.slope) - log_likelihood(&x, &y, fit.intercept - h, fit.slope))
            / (2.0 * h);
        let g1 = (log_likelihood(&x, &y, fit.intercept, fit.slope + h) - log_likelihood(&x, &y, fit.intercept, fit.slope - h))
            / (2.0 * h);
        worst = worst.max(g0.abs()).max(g1.abs());
        done += 1;
    }
    ensure!(worst < 1e-6, "max |gradient| {worst:e}");
    Ok(format!("20 datasets, max |gradient| {worst:.1e}"))
}

fn dense_rca(rca: &RcaMatrix) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; rca.articles().len()]; rca.languages().len()];
    for (r, c, v) in rca.values().iter() {
        d[r][c] = v;
    }
    d
}

fn check_sim(s: &SimilarityMatrix, oracle: impl Fn(usize, usize) -> Option<f64>, lo: f64) -> std::result::Result<(), String> {
    for i in 0..s.len() {
        for j in 0..s.len() {
            let v = s.get(i, j);
            ensure!(v == s.get(j, i), "{:?} not symmetric at ({i},{j})", s.kind);
            let want = if i == j { oracle(i, j).map(|_| 1.0) } else { oracle(i, j) };
            match (v, want) {
                (Some(v), Some(w)) => {
                    ensure!((lo..=1.0).contains(&v), "{:?} value {v} out of range", s.kind);
                    ensure!((v - w).abs() <= 1e-12, "{:?}({i},{j}) = {v}, oracle {w}", s.kind);
                }
                (None, None) => {}
                other => return Err(format!("{:?}({i},{j}) defined-ness differs: {other:?}", s.kind)),
            }
        }
    }
    Ok(())
}

// 6. Similarity kinds.
fn similarity_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let (l, a) = (rng.random_range(3..=12), rng.random_range(5..=40));
        let density = rng.random_range(0.2..=0.8);
        let rows = random_counts(&mut rng, l, a, density);
        if rows.iter().any(|r| r.iter().all(|&c| c == 0)) || (0..a).any(|j| rows.iter().all(|r| r[j] == 0)) {
            continue;
        }
        let m = ActivityMatrix::from_dense(&rows).map_err(|e| e.to_string())?;
        let cos = |u: &[f64], v: &[f64]| {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            Some(dot / (nu * nv))
        };
        let counts: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&c| c as f64).collect()).collect();
        check_sim(&portfolio_cosine(&m).map_err(|e| e.to_string())?, |i, j| cos(&counts[i], &counts[j]), 0.0)?;
        let rca = compute_rca(&m).map_err(|e| e.to_string())?;
        let d = dense_rca(&rca);
        check_sim(&rca_cosine(&rca).map_err(|e| e.to_string())?, |i, j| cos(&d[i], &d[j]), 0.0)?;
        let lp = log_rca_pearson(&rca, None).map_err(|e| e.to_string())?;
        check_sim(
            &lp,
            |i, j| {
                let (xs, ys): (Vec<f64>, Vec<f64>) = (0..d[i].len())
                    .filter(|&k| d[i][k] > 0.0 && d[j][k] > 0.0)
                    .map(|k| (d[i][k].ln(), d[j][k].ln()))
                    .unzip();
                if xs.len() < 3 {
                    None
                } else {
                    naive_pearson(&xs, &ys)
                }
            },
            -1.0,
        )?;
    }
    let disjoint = ActivityMatrix::from_dense(&[vec![3, 4, 0, 0], vec![0, 0, 5, 1]]).map_err(|e| e.to_string())?;
    let s = portfolio_cosine(&disjoint).map_err(|e| e.to_string())?;
    ensure!(s.get(0, 1) == Some(0.0), "disjoint cosine {:?}", s.get(0, 1));
    // ln RCA of l1 is 2 * ln RCA of l0 + 0.3.
    let base = [0.5, 0.8, 1.3, 2.0, 3.7];
    let mut csv = String::from("language,article,rca\n");
    for (k, v) in base.iter().enumerate() {
        csv.push_str(&format!("l0,a{k},{v}\nl1,a{k},{}\n", (0.3f64).exp() * v * v));
    }
    let rca = RcaMatrix::from_csv(csv.as_bytes(), None).map_err(|e| e.to_string())?;
    let p = log_rca_pearson(&rca, None).map_err(|e| e.to_string())?.get(0, 1).ok_or("undefined")?;
    ensure!((p - 1.0).abs() <= 1e-12, "affine pair gives {p}");
    Ok("3 kinds x 20 matrices match oracles; disjoint 0; affine pair 1".into())
}

// 7. Viewership-weighted country ECI.
fn geo_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let countries = ["AR", "BR", "CA", "DE", "FR", "IN", "JP", "KR", "NG", "US"];
    let langs = ["de", "en", "es", "fr", "ja", "pt"];
    for _ in 0..20 {
        let mut rows = Vec::new();
        for c in countries {
            for l in langs {
                if rng.random::<f64>() < 0.5 {
                    rows.push(ViewRow { country: c.into(), language: l.into(), views: rng.random_range(1..1_000_000) });
                }
            }
        }
        // A single-language country.
        rows.retain(|r| r.country != "JP");
        rows.push(ViewRow { country: "JP".into(), language: "ja".into(), views: 4242 });
        let (w, _) = build_weights(&rows, 2016).map_err(|e| e.to_string())?;
        for c in w.countries() {
            let s: f64 = w.row(c).unwrap().values().sum();
            ensure!((s - 1.0).abs() <= 1e-9, "{c} weights sum to {s}");
        }
        let eci: BTreeMap<String, f64> = langs.iter().map(|l| (l.to_string(), rng.random_range(-2.0..2.0))).collect();
        let scores = weighted_eci_from_map(&w, &eci).map_err(|e| e.to_string())?;
        ensure!(scores.values["JP"].value == eci["ja"], "single-language country differs");
        let shift = rng.random_range(-5.0..5.0);
        let shifted: BTreeMap<String, f64> = eci.iter().map(|(k, v)| (k.clone(), v + shift)).collect();
        let moved = weighted_eci_from_map(&w, &shifted).map_err(|e| e.to_string())?;
        for (c, v) in &scores.values {
            let d = moved.values[c].value - v.value - shift;
            ensure!(d.abs() <= 1e-9, "{c} shift error {d}");
        }
    }
    let rows = vec![
        ViewRow { country: "DE".into(), language: "de".into(), views: 600 },
        ViewRow { country: "DE".into(), language: "xx".into(), views: 400 },
    ];
    let (w, _) = build_weights(&rows, 2016).map_err(|e| e.to_string())?;
    let eci = BTreeMap::from([("de".to_string(), 0.731)]);
    let s = weighted_eci_from_map(&w, &eci).map_err(|e| e.to_string())?;
    let de = &s.values["DE"];
    ensure!(de.coverage == 0.6 && de.value == 0.731, "restrict-renormalize gave {de:?}");
    Ok("weights, single-language, shift equivariance, 0.6/0.4 example".into())
}

/// Standard normal CDF by composite Simpson quadrature of the density.
fn simpson_cdf(z: f64) -> f64 {
    let n = 20_000;
    let h = z.abs() / n as f64;
    let f = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(z.abs());
    for k in 1..n {
        s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    let half = s * h / 3.0;
    if z >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

// 8. Inequality and revert-gap statistics.
fn behavior_checks() -> Check {
    let eq = lorenz_from_totals(&[5, 5, 5, 5]).map_err(|e| e.to_string())?;
    ensure!(eq.gini.abs() <= 1e-12, "equal totals gini {}", eq.gini);
    let g = lorenz_from_totals(&[1, 1, 1, 10]).map_err(|e| e.to_string())?.gini;
    ensure!((g - 27.0 / 52.0).abs() <= 1e-12, "gini {g}");
    let (z, p) = two_proportion_z(30, 100, 10, 100);
    let z_ref = 0.2 / (0.2f64 * 0.8 * (2.0 / 100.0)).sqrt();
    let p_ref = 2.0 * (1.0 - simpson_cdf(z_ref.abs()));
    ensure!((z - z_ref).abs() <= 1e-12, "z {z} vs {z_ref}");
    ensure!((p - p_ref).abs() <= 1e-5, "p {p} vs reference {p_ref}");
    ensure!((p - 4e-4).abs() < 1e-4, "p {p} not about 4e-4");
    let fpr = null_false_positive_rate(10_000, 1_000, 0.1, 0.01, 8).map_err(|e| e.to_string())?;
    ensure!((0.005..=0.015).contains(&fpr), "false-positive rate {fpr}");
    Ok(format!("gini 27/52; z {z:.4} p {p:.3e} (ref {p_ref:.3e}); null FPR {fpr}"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ingest").join(name)
}

struct Recorder<T> {
    inner: T,
    clock: Arc<MockClock>,
    at: Mutex<Vec<Duration>>,
}

impl<T: Transport> Transport for Recorder<T> {
    fn get(&self, req: &Request) -> std::result::Result<Response, String> {
        self.at.lock().unwrap().push(self.clock.now());
        self.inner.get(req)
    }
}

fn client(t: Arc<dyn Transport>) -> MediaWikiClient {
    MediaWikiClient::new(t, ApiConfig::default())
}

fn spec(languages: &[&str], cat: &str) -> GenreSpec {
    GenreSpec {
        name: "cooking".into(),
        seeds: BTreeMap::from([("en".to_string(), vec![cat.to_string()])]),
        depth: 0,
        languages: languages.iter().map(|s| s.to_string()).collect(),
    }
}

fn opts() -> RevisionOptions {
    RevisionOptions {
        salt: "corpus-salt".into(),
        bot_suffix: false,
        tags: BTreeSet::from(["cooking".to_string()]),
    }
}

/// Runs all three fetch operations and returns their serialized outputs.
fn harvest(c: &MediaWikiClient) -> std::result::Result<Vec<Vec<u8>>, String> {
    let e = |e: Error| e.to_string();
    let genre = resolve_genre_articles(c, &spec(&["en", "de"], "Category:Cooking")).map_err(e)?;
    let revs = harvest_revisions(c, &genre.articles.iter().filter(|a| a.language == "en").cloned().collect::<Vec<_>>(), &opts(), None, 4)
        .map_err(e)?;
    let mut tsv = Vec::new();
    write_events(&mut tsv, &revs.events).map_err(e)?;
    let views = fetch_pageviews_by_country(c, &["en.wikipedia".into()], 2016, Some(3)).map_err(e)?;
    Ok(vec![
        article_listing_csv(&genre.articles).map_err(e)?,
        tsv,
        kcomplex_core::geo::views_csv(&views.rows).map_err(e)?,
    ])
}

fn merged_fixtures() -> std::result::Result<FixtureTransport, String> {
    let mut all = Vec::new();
    for f in ["genre.json", "revisions.json", "pageviews.json"] {
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(fixture(f)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        all.extend(v["requests"].as_array().cloned().unwrap_or_default());
    }
    let doc = serde_json::to_vec(&serde_json::json!({ "requests": all })).map_err(|e| e.to_string())?;
    FixtureTransport::from_json(&doc).map_err(|e| e.to_string())
}

// 9. Ingestion against recorded fixtures.
fn ingestion() -> Check {
    let e = |e: Error| e.to_string();
    let genre = Arc::new(FixtureTransport::from_file(&fixture("genre.json")).map_err(e)?);
    let c = client(genre.clone());
    let three = resolve_genre_articles(&c, &spec(&[], "Category:Cooking")).map_err(e)?;
    ensure!(three.articles.len() == 3, "depth-0 category gave {} articles", three.articles.len());
    let empty = resolve_genre_articles(&c, &spec(&[], "Category:Empty")).map_err(e)?;
    ensure!(empty.articles.is_empty() && empty.warnings.is_empty(), "empty category gave {empty:?}");
    let closed = resolve_genre_articles(&c, &spec(&["en", "de"], "Category:Cooking")).map_err(e)?;
    let bread: Vec<_> = closed.articles.iter().filter(|a| a.id == "Q7802").map(|a| (a.language.as_str(), a.title.as_str())).collect();
    ensure!(bread == [("de", "Brot"), ("en", "Bread")], "interlanguage closure gave {bread:?}");

    let revs = Arc::new(FixtureTransport::from_file(&fixture("revisions.json")).map_err(e)?);
    let c = client(revs.clone());
    let bread = fetch_revisions(&c, "en", "Bread", "Q7802", &opts()).map_err(e)?;
    ensure!(bread.events.len() == 501 && bread.hidden_skipped == 0, "Bread gave {} events", bread.events.len());
    ensure!(bread.events.iter().filter(|ev| ev.is_bot).count() > 0, "bot flag not read");
    ensure!(revs.requests() == 3, "Bread took {} requests, expected 2 pages + users", revs.requests());
    let soup = fetch_revisions(&c, "en", "Soup", "Q41415", &opts()).map_err(e)?;
    ensure!(soup.events.len() == 2 && soup.hidden_skipped == 1, "Soup gave {:?}", (soup.events.len(), soup.hidden_skipped));
    let stew = fetch_revisions(&c, "en", "Stew", "en:Stew", &opts()).map_err(e)?;
    ensure!(stew.events.is_empty(), "empty history gave events");

    let pv = Arc::new(FixtureTransport::from_file(&fixture("pageviews.json")).map_err(e)?);
    let c = client(pv.clone());
    let march = fetch_pageviews_by_country(&c, &["en.wikipedia".into(), "en.wiktionary".into()], 2016, Some(3)).map_err(e)?;
    ensure!(march.rows.len() == 3, "March gave {} rows", march.rows.len());
    ensure!(march.rows.iter().all(|r| kcomplex_core::geo::is_iso_alpha2(&r.country)), "non-ISO country code");
    ensure!(march.unmapped_projects == ["en.wiktionary"], "unmapped {:?}", march.unmapped_projects);
    let april = fetch_pageviews_by_country(&c, &["en.wikipedia".into()], 2016, Some(4)).map_err(e)?;
    ensure!(april.rows.is_empty(), "empty month gave rows");
    match fetch_pageviews_by_country(&c, &["en.wikipedia".into()], 2014, None) {
        Err(Error::UnsupportedPeriod(_)) => {}
        other => return Err(format!("2014 gave {other:?}")),
    }

    // Byte-determinism across replays.
    let a = harvest(&client(Arc::new(merged_fixtures()?)))?;
    let b = harvest(&client(Arc::new(merged_fixtures()?)))?;
    ensure!(a == b, "replays differ");

    // Politeness under a mock clock, four workers sharing one limiter.
    let clock = Arc::new(MockClock::new());
    let rec = Arc::new(Recorder { inner: merged_fixtures()?, clock: clock.clone(), at: Mutex::new(Vec::new()) });
    let dyn_clock: Arc<dyn Clock> = clock.clone();
    let limiter = Arc::new(RateLimiter::new(50, 1, dyn_clock.clone()).map_err(e)?);
    let polite = Arc::new(PoliteTransport::new(rec.clone(), limiter, RetryPolicy::default(), dyn_clock));
    let c = client(polite);
    for _ in 0..12 {
        harvest(&c)?;
    }
    let mut at = rec.at.lock().unwrap().clone();
    at.sort();
    ensure!(at.len() > 100, "only {} requests", at.len());
    for (i, &t) in at.iter().enumerate() {
        let in_window = at[i..].iter().take_while(|&&u| u < t + Duration::from_secs(60)).count();
        ensure!(in_window <= 50, "{in_window} requests within 60 s of {t:?}");
    }

    // Re-run through the cache performs zero requests.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inner = Arc::new(merged_fixtures()?);
    let cached = Arc::new(CachedTransport::new(inner.clone(), dir.path()));
    let first = harvest(&client(cached.clone()))?;
    let before = inner.requests();
    let again = Arc::new(CachedTransport::new(inner.clone(), dir.path()));
    let second = harvest(&client(again.clone()))?;
    ensure!(inner.requests() == before, "re-run made {} requests", inner.requests() - before);
    ensure!(first == second && first == a, "cached re-run output differs");
    Ok(format!("3 operations replayed; {} paced requests; re-run 0 requests", at.len()))
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for e in std::fs::read_dir(from)? {
        let e = e?;
        if e.file_type()?.is_file() {
            std::fs::copy(e.path(), to.join(e.file_name()))?;
        }
    }
    Ok(())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap_or_default());
            }
        }
    }
    out
}

// 10. End-to-end run on the bundled corpus.
fn end_to_end() -> Check {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    let mut slowest = Duration::ZERO;
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        copy_dir(&corpus, &dir).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let cfg = PipelineConfig::load(&dir.join("pipeline.json")).map_err(|e| e.to_string())?;
        let (manifest, report) = run_pipeline(&cfg).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed());
        ensure!(report.ok(), "pipeline failures: {:?} blocked {:?}", report.failed, report.blocked);
        ensure!(manifest.errors.is_empty(), "manifest errors {:?}", manifest.errors);
        outputs.push(tree(&dir.join("out")));
    }
    ensure!(slowest < Duration::from_secs(10), "pipeline took {slowest:?}");
    ensure!(outputs[0] == outputs[1], "outputs differ between runs");
    let files: Vec<String> = outputs[0].keys().map(|p| p.to_string_lossy().into_owned()).collect();
    let has = |f: &dyn Fn(&str) -> bool| files.iter().any(|p| f(p));
    for (what, ok) in [
        ("similarity matrix", has(&|p| p.ends_with("similarity_rca_cosine.csv"))),
        ("log-RCA similarity", has(&|p| p.ends_with("similarity_log_rca_pearson.csv"))),
        ("PCI top-N", has(&|p| p.ends_with("pci_top.csv"))),
        ("country ECI table", has(&|p| p.ends_with("country_eci.csv"))),
        ("country ranking", has(&|p| p.ends_with("country_ranking.csv"))),
        ("AUC series", has(&|p| p.ends_with("auc_series.csv"))),
        ("Lorenz curve", has(&|p| p.ends_with("lorenz.csv"))),
        ("regression fit", has(&|p| p.ends_with("regress_gni_per_capita.json"))),
        ("rank transitions", has(&|p| p == "rank_transition.csv")),
        ("manifest", has(&|p| p == "manifest.json")),
    ] {
        ensure!(ok, "missing {what}");
    }
    let manifest = String::from_utf8_lossy(&outputs[0][Path::new("manifest.json")]).into_owned();
    ensure!(manifest.contains("\"gini\""), "manifest lacks the Gini summary");
    Ok(format!("{} files byte-identical across runs, slowest run {slowest:.2?}", files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("RCA oracle equivalence", rca_oracle),
        ("ECI method agreement", eci_agreement),
        ("proximity/relatedness bounds and oracle", proximity_oracle),
        ("prediction harness", prediction_harness),
        ("logistic fit gradient", logistic_gradient),
        ("similarity oracles", similarity_oracle),
        ("geo weighting", geo_checks),
        ("inequality/behavior statistics", behavior_checks),
        ("ingestion replay, politeness, cache", ingestion),
        ("end-to-end pipeline", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {:>2} {name}: panicked", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
