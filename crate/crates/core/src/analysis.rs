//! Similarity-aware benchmark audit: each evaluation problem's maximum
//! similarity to a historical corpus, related to externally supplied pass
//! rates through bins, per-stratum least-squares lines, and variant gaps.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Difficulty;
use crate::embedder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::index::SearchIndex;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub problem_id: String,
    pub model: String,
    pub pass_rate: f64,
    pub difficulty: Difficulty,
    #[serde(with = "crate::corpus::day_date")]
    pub release_date: NaiveDate,
}

pub fn read_pass_records(path: &Path) -> Result<Vec<PassRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<PassRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Schema {
            line: i + 2,
            reason: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&rec.pass_rate) {
            return Err(Error::Schema {
                line: i + 2,
                reason: format!("pass_rate {} outside [0, 1]", rec.pass_rate),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxSim {
    pub problem_id: String,
    pub max_sim: f64,
    pub nearest_id: String,
}

/// Release dates for both sides; every historical date must precede every
/// evaluation date.
#[derive(Debug, Clone, Default)]
pub struct DateGuard {
    pub eval_dates: HashMap<String, NaiveDate>,
    pub hist_dates: HashMap<String, NaiveDate>,
}

impl DateGuard {
    pub fn check(&self, eval: &EmbeddingMatrix, hist: &SearchIndex) -> Result<()> {
        let date = |m: &HashMap<String, NaiveDate>, id: &str| {
            m.get(id)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("no date for {id:?}")))
        };
        let first_eval = eval
            .ids()
            .iter()
            .map(|id| date(&self.eval_dates, id))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .min();
        let last_hist = hist
            .ids()
            .iter()
            .map(|id| date(&self.hist_dates, id))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .max();
        match (first_eval, last_hist) {
            (Some(e), Some(h)) if h >= e => Err(Error::Invalid(format!(
                "date guard: historical item dated {h} does not predate evaluation item dated {e}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Nearest historical item for every evaluation problem, skipping a
/// historical item with the same id.
pub fn compute_max_similarity(eval: &EmbeddingMatrix, hist: &SearchIndex, guard: Option<&DateGuard>) -> Result<Vec<MaxSim>> {
    if hist.is_empty() {
        return Err(Error::Empty("historical corpus".into()));
    }
    if let Some(g) = guard {
        g.check(eval, hist)?;
    }
    (0..eval.len())
        .into_par_iter()
        .map(|i| {
            let id = &eval.ids()[i];
            let exclude = HashSet::from([id.clone()]);
            let (nearest_id, max_sim) = hist.max_similarity(eval.row(i), Some(&exclude))?;
            Ok(MaxSim {
                problem_id: id.clone(),
                max_sim,
                nearest_id,
            })
        })
        .collect()
}

/// Per-problem view: mean pass rate over models and the problem's difficulty.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemPoint {
    pub problem_id: String,
    pub sim: f64,
    pub pass_rate: f64,
    pub difficulty: Difficulty,
}

/// Averages pass rates across models per problem (problems in id order).
/// Problems without a similarity are reported in the warnings and dropped.
pub fn problem_points(records: &[PassRecord], sims: &HashMap<String, f64>) -> (Vec<ProblemPoint>, Vec<String>) {
    let mut acc: BTreeMap<&str, (f64, usize, Difficulty)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(&r.problem_id).or_insert((0.0, 0, r.difficulty));
        e.0 += r.pass_rate;
        e.1 += 1;
    }
    let mut warnings = Vec::new();
    let mut points = Vec::new();
    for (id, (sum, n, difficulty)) in acc {
        match sims.get(id) {
            Some(&sim) => points.push(ProblemPoint {
                problem_id: id.to_owned(),
                sim,
                pass_rate: sum / n as f64,
                difficulty,
            }),
            None => warnings.push(format!("problem {id} has no similarity; skipped")),
        }
    }
    (points, warnings)
}

/// `[lo, hi]` in 0.1 steps, widened to whole tenths around the data.
pub fn default_edges(sims: &[f64]) -> Result<Vec<f64>> {
    let lo = sims.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Empty("similarities".into()));
    }
    let a = (lo * 10.0 + 1e-9).floor() as i64;
    let mut b = (hi * 10.0 - 1e-9).ceil() as i64;
    if b <= a {
        b = a + 1;
    }
    Ok((a..=b).map(|k| k as f64 / 10.0).collect())
}

pub fn validate_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::Invalid("need at least 2 bin edges".into()));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::Invalid("bin edges must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Bin of `x` for half-open bins `[e_i, e_{i+1})` with the last bin closed.
/// Values outside the edges clamp to the first or last bin; the flag reports it.
pub fn bin_of(x: f64, edges: &[f64]) -> (usize, bool) {
    let nbins = edges.len() - 1;
    if x < edges[0] {
        return (0, true);
    }
    if x > edges[nbins] {
        return (nbins - 1, true);
    }
    // Count of interior edges ≤ x.
    let i = edges[1..nbins].partition_point(|&e| e <= x);
    (i, false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinRow {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinReport {
    pub rows: Vec<BinRow>,
    /// Bin index per input point, in input order.
    pub assignment: Vec<usize>,
    pub warnings: Vec<String>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn bin_and_aggregate(points: &[ProblemPoint], edges: &[f64]) -> Result<BinReport> {
    validate_edges(edges)?;
    let nbins = edges.len() - 1;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); nbins];
    let mut assignment = Vec::with_capacity(points.len());
    let mut warnings = Vec::new();
    for p in points {
        let (b, clamped) = bin_of(p.sim, edges);
        if clamped {
            warnings.push(format!("problem {} similarity {} clamped into bin {b}", p.problem_id, p.sim));
        }
        members[b].push(p.pass_rate);
        assignment.push(b);
    }
    let rows = members
        .into_iter()
        .enumerate()
        .map(|(i, mut xs)| {
            xs.sort_by(f64::total_cmp);
            let n = xs.len();
            BinRow {
                bin: i,
                lo: edges[i],
                hi: edges[i + 1],
                count: n,
                mean: (n > 0).then(|| xs.iter().sum::<f64>() / n as f64),
                median: (n > 0).then(|| median(&xs)),
                min: xs.first().copied(),
                max: xs.last().copied(),
            }
        })
        .collect();
    Ok(BinReport {
        rows,
        assignment,
        warnings,
    })
}

/// Ordinary least squares `y ≈ slope·x + intercept`; `None` when the `x`
/// values are all equal or fewer than two points are given.
pub fn ols<T: Scalar>(xs: &[T], ys: &[T]) -> Option<(T, T)> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = T::of(n as f64);
    let mx = xs.iter().copied().sum::<T>() / nf;
    let my = ys.iter().copied().sum::<T>() / nf;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stratum {
    Difficulty,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionRow {
    pub stratum: String,
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

/// Per-stratum OLS of pass rate on max similarity plus an `all` line over
/// per-problem means. Difficulty strata use per-problem means; model strata
/// use that model's own records. Degenerate strata are skipped with a warning.
pub fn stratified_regression(
    records: &[PassRecord],
    sims: &HashMap<String, f64>,
    stratum: Stratum,
) -> (Vec<RegressionRow>, Vec<String>) {
    let (points, mut warnings) = problem_points(records, sims);
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    match stratum {
        Stratum::Difficulty => {
            for p in &points {
                let g = groups.entry(p.difficulty.to_string()).or_default();
                g.0.push(p.sim);
                g.1.push(p.pass_rate);
            }
        }
        Stratum::Model => {
            for r in records {
                if let Some(&s) = sims.get(&r.problem_id) {
                    let g = groups.entry(r.model.clone()).or_default();
                    g.0.push(s);
                    g.1.push(r.pass_rate);
                }
            }
        }
    }
    let all = (
        points.iter().map(|p| p.sim).collect::<Vec<_>>(),
        points.iter().map(|p| p.pass_rate).collect::<Vec<_>>(),
    );
    let mut rows = Vec::new();
    for (name, (xs, ys)) in groups.iter().chain(std::iter::once((&"all".to_string(), &all))) {
        match ols(xs, ys) {
            Some((slope, intercept)) => rows.push(RegressionRow {
                stratum: name.clone(),
                slope,
                intercept,
                n: xs.len(),
            }),
            None => warnings.push(format!("stratum {name}: degenerate similarities; skipped")),
        }
    }
    (rows, warnings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    /// Mean pass rate per variant over shared problems in this bin.
    pub means: BTreeMap<String, Option<f64>>,
    /// Max − min of the available means.
    pub gap: Option<f64>,
}

/// Per-bin spread of mean pass rates across model variants, computed over
/// the problems every variant covers.
pub fn variant_gap(records: &[PassRecord], sims: &HashMap<String, f64>, edges: &[f64]) -> Result<Vec<GapRow>> {
    validate_edges(edges)?;
    let mut by_model: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in records {
        by_model.entry(&r.model).or_default().insert(&r.problem_id, r.pass_rate);
    }
    if by_model.len() < 2 {
        return Err(Error::Invalid("variant gap needs at least 2 models".into()));
    }
    let mut shared: Option<BTreeSet<&str>> = None;
    for m in by_model.values() {
        let ids: BTreeSet<&str> = m.keys().copied().collect();
        shared = Some(match shared {
            None => ids,
            Some(s) => s.intersection(&ids).copied().collect(),
        });
    }
    let shared: Vec<&str> = shared
        .unwrap_or_default()
        .into_iter()
        .filter(|id| sims.contains_key(*id))
        .collect();
    if shared.is_empty() {
        return Err(Error::Invalid("variants share no problems".into()));
    }
    let nbins = edges.len() - 1;
    let mut rows: Vec<GapRow> = (0..nbins)
        .map(|i| GapRow {
            bin: i,
            lo: edges[i],
            hi: edges[i + 1],
            means: BTreeMap::new(),
            gap: None,
        })
        .collect();
    for (model, rates) in &by_model {
        let mut sum = vec![0.0; nbins];
        let mut cnt = vec![0usize; nbins];
        for id in &shared {
            let (b, _) = bin_of(sims[*id], edges);
            sum[b] += rates[id];
            cnt[b] += 1;
        }
        for (b, row) in rows.iter_mut().enumerate() {
            row.means
                .insert(model.to_string(), (cnt[b] > 0).then(|| sum[b] / cnt[b] as f64));
        }
    }
    for row in &mut rows {
        let vals: Vec<f64> = row.means.values().flatten().copied().collect();
        if !vals.is_empty() {
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            row.gap = Some(hi - lo);
        }
    }
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[String], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Full audit output, written as `report.csv`, `bins.csv`, `regression.csv`,
/// and `gaps.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub sims: Vec<MaxSim>,
    pub points: Vec<ProblemPoint>,
    pub bins: BinReport,
    pub regression: Vec<RegressionRow>,
    pub gaps: Option<Vec<GapRow>>,
    pub warnings: Vec<String>,
}

/// Runs binning, stratified regression, and (with ≥ 2 models) variant gaps.
pub fn build_report(
    records: &[PassRecord],
    sims: Vec<MaxSim>,
    edges: Option<&[f64]>,
    stratum: Stratum,
) -> Result<SimilarityReport> {
    let sim_map: HashMap<String, f64> = sims.iter().map(|s| (s.problem_id.clone(), s.max_sim)).collect();
    let (points, mut warnings) = problem_points(records, &sim_map);
    if points.is_empty() {
        return Err(Error::Empty("no pass record matches an evaluation problem".into()));
    }
    let edges = match edges {
        Some(e) => e.to_vec(),
        None => default_edges(&points.iter().map(|p| p.sim).collect::<Vec<_>>())?,
    };
    let bins = bin_and_aggregate(&points, &edges)?;
    warnings.extend(bins.warnings.iter().cloned());
    let (regression, w) = stratified_regression(records, &sim_map, stratum);
    warnings.extend(w);
    let models: BTreeSet<&str> = records.iter().map(|r| r.model.as_str()).collect();
    let gaps = if models.len() >= 2 {
        Some(variant_gap(records, &sim_map, &edges)?)
    } else {
        None
    };
    Ok(SimilarityReport {
        sims,
        points,
        bins,
        regression,
        gaps,
        warnings,
    })
}

impl SimilarityReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bin_by_problem: HashMap<&str, usize> = self
            .points
            .iter()
            .zip(&self.bins.assignment)
            .map(|(p, &b)| (p.problem_id.as_str(), b))
            .collect();
        let pass: HashMap<&str, f64> = self.points.iter().map(|p| (p.problem_id.as_str(), p.pass_rate)).collect();
        write_csv(
            &dir.join("report.csv"),
            &strings(&["problem_id", "max_sim", "nearest_id", "bin", "mean_pass_rate"]),
            self.sims
                .iter()
                .map(|s| {
                    let id = s.problem_id.as_str();
                    vec![
                        s.problem_id.clone(),
                        s.max_sim.to_string(),
                        s.nearest_id.clone(),
                        bin_by_problem.get(id).map(|b| b.to_string()).unwrap_or_default(),
                        opt(pass.get(id).copied()),
                    ]
                })
                .collect(),
        )?;
        write_csv(
            &dir.join("bins.csv"),
            &strings(&["bin", "lo", "hi", "count", "mean", "median", "min", "max"]),
            self.bins
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.bin.to_string(),
                        r.lo.to_string(),
                        r.hi.to_string(),
                        r.count.to_string(),
                        opt(r.mean),
                        opt(r.median),
                        opt(r.min),
                        opt(r.max),
                    ]
                })
                .collect(),
        )?;
        write_csv(
            &dir.join("regression.csv"),
            &strings(&["stratum", "slope", "intercept", "n"]),
            self.regression
                .iter()
                .map(|r| vec![r.stratum.clone(), r.slope.to_string(), r.intercept.to_string(), r.n.to_string()])
                .collect(),
        )?;
        if let Some(gaps) = &self.gaps {
            let models: Vec<String> = gaps.first().map(|g| g.means.keys().cloned().collect()).unwrap_or_default();
            let mut header = strings(&["bin", "lo", "hi"]);
            header.extend(models.iter().cloned());
            header.push("gap".into());
            let rows = gaps
                .iter()
                .map(|g| {
                    let mut row = vec![g.bin.to_string(), g.lo.to_string(), g.hi.to_string()];
                    row.extend(models.iter().map(|m| opt(g.means[m])));
                    row.push(opt(g.gap));
                    row
                })
                .collect();
            write_csv(&dir.join("gaps.csv"), &header, rows)?;
        }
        Ok(())
    }
}
