//! Simulated σ_z experiments for the offset Δ.
//!
//! Every experiment starts in |↑⟩. Shots are exchangeable, so a record only
//! keeps (N, n↑) and bootstrap resamples are binomial draws.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{final_state, state_at};
use crate::error::{QestError, Result};
use crate::qmodel::{bloch_from_state, BlochVector, ModelParams, PiecewisePulse, QubitState};
use crate::rng;

pub const DEFAULT_GRID_POINTS: usize = 801;
pub const REFINE_TOL: f64 = 1e-6;
/// Secondary maxima within this fraction of |max loglik| are reported.
pub const PEAK_FRACTION: f64 = 0.01;
pub const DEFAULT_PRIOR_HALF_WIDTH: f64 = 0.4;
pub const MERGE_TOLERANCE: f64 = 1e-2;
pub const HISTOGRAM_BINS: usize = 60;
/// Half the 95% quantile of χ²₁: log-likelihood drop bounding a 95% support interval.
pub const LIKELIHOOD_DROP: f64 = 1.920_729_410_347_062;

/// (P↑, P↓) of the state reached from |↑⟩ at the end of `pulse`.
pub fn outcome_probabilities(params: &ModelParams, pulse: &PiecewisePulse) -> Result<(f64, f64)> {
    let rho = final_state(&QubitState::up(), params, pulse)?;
    let up = rho.population_up().clamp(0.0, 1.0);
    Ok((up, 1.0 - up))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementRecord {
    pub shots: u64,
    pub up_count: u64,
    pub pulse_id: String,
    pub params: ModelParams,
}

impl MeasurementRecord {
    pub fn new(shots: u64, up_count: u64, pulse_id: impl Into<String>, params: ModelParams) -> Result<Self> {
        if shots == 0 {
            return Err(QestError::Domain("a record needs at least one shot".into()));
        }
        if up_count > shots {
            return Err(QestError::Domain(format!("{up_count} up outcomes out of {shots} shots")));
        }
        Ok(Self { shots, up_count, pulse_id: pulse_id.into(), params })
    }

    fn with_count(&self, up_count: u64) -> Self {
        Self { up_count, ..self.clone() }
    }
}

fn binomial_draw(shots: u64, p: f64, rng: &mut rng::StreamRng) -> Result<u64> {
    let dist = Binomial::new(shots, p.clamp(0.0, 1.0))
        .map_err(|e| QestError::NumericalFailure(format!("binomial law: {e}")))?;
    Ok(dist.sample(rng))
}

/// Draws n↑ ~ Binomial(shots, P↑(Δ⋆)) with Δ⋆ taken from `params`.
pub fn simulate_measurements(
    params: &ModelParams,
    pulse: &PiecewisePulse,
    pulse_id: &str,
    shots: u64,
    seed: u64,
) -> Result<MeasurementRecord> {
    if shots == 0 {
        return Err(QestError::Domain("shots must be >= 1".into()));
    }
    let (up, _) = outcome_probabilities(params, pulse)?;
    let mut rng = rng::stream(seed, 0);
    let n = binomial_draw(shots, up, &mut rng)?;
    MeasurementRecord::new(shots, n, pulse_id, params.clone())
}

fn loglik_from(shots: u64, up_count: u64, p_up: f64) -> f64 {
    let n_up = up_count as f64;
    let n_down = (shots - up_count) as f64;
    let term = |n: f64, p: f64| {
        if n == 0.0 {
            0.0
        } else if p <= 0.0 {
            f64::NEG_INFINITY
        } else {
            n * p.ln()
        }
    };
    term(n_up, p_up) + term(n_down, 1.0 - p_up)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodCurve {
    pub grid: Vec<f64>,
    pub loglik: Vec<f64>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(QestError::Domain("empty Δ grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(QestError::Domain("Δ grid must be strictly increasing".into()));
    }
    Ok(())
}

/// P↑ over a Δ grid for a fixed pulse and template; shared by every record.
struct ProbabilityTable<'a> {
    template: &'a ModelParams,
    pulse: &'a PiecewisePulse,
    grid: Vec<f64>,
    p_up: Vec<f64>,
}

impl<'a> ProbabilityTable<'a> {
    fn new(template: &'a ModelParams, pulse: &'a PiecewisePulse, grid: Vec<f64>) -> Result<Self> {
        check_grid(&grid)?;
        let p_up = grid
            .iter()
            .map(|&d| outcome_probabilities(&template.with_delta(d), pulse).map(|p| p.0))
            .collect::<Result<_>>()?;
        Ok(Self { template, pulse, grid, p_up })
    }

    fn curve(&self, shots: u64, up_count: u64) -> Vec<f64> {
        self.p_up.iter().map(|&p| loglik_from(shots, up_count, p)).collect()
    }

    fn loglik_at(&self, shots: u64, up_count: u64, delta: f64) -> Result<f64> {
        let (p, _) = outcome_probabilities(&self.template.with_delta(delta), self.pulse)?;
        Ok(loglik_from(shots, up_count, p))
    }
}

/// loglik(Δ) = n↑ ln P↑(Δ) + (N − n↑) ln P↓(Δ) on `grid`.
pub fn log_likelihood(record: &MeasurementRecord, pulse: &PiecewisePulse, grid: &[f64]) -> Result<LikelihoodCurve> {
    let table = ProbabilityTable::new(&record.params, pulse, grid.to_vec())?;
    Ok(LikelihoodCurve { grid: table.grid.clone(), loglik: table.curve(record.shots, record.up_count) })
}

pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) || points < 2 {
        return Err(QestError::Domain(format!("bad grid [{lo}, {hi}] with {points} points")));
    }
    Ok((0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect())
}

/// Δ₀ ± 0.4ω₀.
pub fn default_prior(delta0: f64, omega0: f64) -> (f64, f64) {
    (delta0 - DEFAULT_PRIOR_HALF_WIDTH * omega0, delta0 + DEFAULT_PRIOR_HALF_WIDTH * omega0)
}

/// Maximizes `f` on [a, b] by golden-section search.
fn golden_max<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x)?;
    Ok([(x, fx), (c, fc), (d, fd)].into_iter().fold((x, fx), |best, cand| if cand.1 > best.1 { cand } else { best }))
}

/// A local maximum of the likelihood with the grid interval it dominates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub location: f64,
    pub loglik: f64,
    pub basin: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleOutcome {
    pub estimate: f64,
    pub loglik: f64,
    /// Set when the coarse maximum sits on the prior boundary.
    pub boundary: bool,
    /// Global maximum first, then secondary maxima within 1% of it.
    pub peaks: Vec<Peak>,
}

fn grid_maxima(curve: &[f64]) -> Vec<usize> {
    let n = curve.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        // Treat plateaus as one candidate located at their middle.
        let mut j = i;
        while j + 1 < n && curve[j + 1] == curve[i] {
            j += 1;
        }
        let left_ok = i == 0 || curve[i - 1] < curve[i];
        let right_ok = j + 1 == n || curve[j + 1] < curve[i];
        if left_ok && right_ok && curve[i].is_finite() {
            out.push((i + j) / 2);
        }
        i = j + 1;
    }
    out
}

fn argmin_between(curve: &[f64], a: usize, b: usize) -> usize {
    (a..=b).min_by(|&x, &y| curve[x].total_cmp(&curve[y])).unwrap_or(a)
}

fn refine(table: &ProbabilityTable, shots: u64, up_count: u64, curve: &[f64], idx: usize) -> Result<(f64, f64)> {
    let g = &table.grid;
    if g.len() == 1 {
        return Ok((g[0], curve[0]));
    }
    let lo = g[idx.saturating_sub(1)];
    let hi = g[(idx + 1).min(g.len() - 1)];
    let (x, fx) = golden_max(|d| table.loglik_at(shots, up_count, d), lo, hi, REFINE_TOL)?;
    Ok(if fx >= curve[idx] { (x, fx) } else { (g[idx], curve[idx]) })
}

fn mle_on_table(table: &ProbabilityTable, shots: u64, up_count: u64) -> Result<MleOutcome> {
    let curve = table.curve(shots, up_count);
    let global = (0..curve.len())
        .max_by(|&a, &b| curve[a].total_cmp(&curve[b]).then(b.cmp(&a)))
        .ok_or_else(|| QestError::Domain("empty grid".into()))?;
    if !curve[global].is_finite() {
        return Err(QestError::NumericalFailure("likelihood is zero on the whole grid".into()));
    }
    let best = curve[global];
    let mut maxima = grid_maxima(&curve);
    if !maxima.contains(&global) {
        maxima.push(global);
        maxima.sort_unstable();
    }
    let n = curve.len();
    let mut peaks = Vec::new();
    for (k, &m) in maxima.iter().enumerate() {
        if best - curve[m] > PEAK_FRACTION * best.abs() {
            continue;
        }
        let left = if k == 0 { 0 } else { argmin_between(&curve, maxima[k - 1], m) };
        let right = if k + 1 == maxima.len() { n - 1 } else { argmin_between(&curve, m, maxima[k + 1]) };
        let (location, loglik) = refine(table, shots, up_count, &curve, m)?;
        peaks.push((m == global, Peak { location, loglik, basin: (table.grid[left], table.grid[right]) }));
    }
    peaks.sort_by(|a, b| b.0.cmp(&a.0));
    let peaks: Vec<Peak> = peaks.into_iter().map(|p| p.1).collect();
    Ok(MleOutcome {
        estimate: peaks[0].location,
        loglik: peaks[0].loglik,
        boundary: global == 0 || global == n - 1,
        peaks,
    })
}

/// Coarse grid argmax over `prior`, then golden-section refinement.
pub fn mle(record: &MeasurementRecord, pulse: &PiecewisePulse, prior: (f64, f64), points: usize) -> Result<MleOutcome> {
    let table = ProbabilityTable::new(&record.params, pulse, uniform_grid(prior.0, prior.1, points)?)?;
    mle_on_table(&table, record.shots, record.up_count)
}

/// Normalized histogram: Σ density·width = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Histogram {
    pub fn of(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() || bins == 0 {
            return Err(QestError::Domain("histogram needs values and bins".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi, bins) = if hi > lo {
            (lo, hi, bins)
        } else {
            let h = 1e-9 * lo.abs().max(1.0);
            (lo - h, hi + h, 1)
        };
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        let total = values.len() as f64;
        let densities = counts.iter().map(|&c| c as f64 / (total * width)).collect();
        Ok(Self { edges, densities })
    }

    pub fn integral(&self) -> f64 {
        self.densities.iter().zip(self.edges.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum()
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    // Linear interpolation between order statistics.
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Bootstrap summary for one likelihood peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    pub location: f64,
    pub mean: f64,
    pub ci95: (f64, f64),
    pub half_width: f64,
    pub basin: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub estimate: f64,
    pub mean: f64,
    pub ci95: (f64, f64),
    pub histogram: Histogram,
    pub resamples: usize,
    pub seed: u64,
    pub boundary: bool,
    pub peaks: Vec<PeakEstimate>,
    /// Set when every outcome was the same, so binomial resampling cannot
    /// vary the data; the intervals are then likelihood support intervals.
    pub support_interval: bool,
}

fn summarize(values: &mut [f64]) -> (f64, (f64, f64)) {
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, (percentile(values, 0.025), percentile(values, 0.975)))
}

fn basin_max(table: &ProbabilityTable, shots: u64, up_count: u64, basin: (f64, f64)) -> Result<f64> {
    let curve = table.curve(shots, up_count);
    let idx = (0..curve.len())
        .filter(|&i| table.grid[i] >= basin.0 && table.grid[i] <= basin.1)
        .max_by(|&a, &b| curve[a].total_cmp(&curve[b]).then(b.cmp(&a)))
        .ok_or_else(|| QestError::Domain("empty peak basin".into()))?;
    let (x, _) = refine(table, shots, up_count, &curve, idx)?;
    Ok(x.clamp(basin.0, basin.1))
}

/// Binomial bootstrap of the MLE with B = `resamples` draws.
///
/// The global estimate of every resample feeds the histogram and the overall
/// percentile interval. Each reported likelihood peak is also re-maximized
/// inside its own basin, giving per-peak intervals for multimodal likelihoods.
pub fn bootstrap(
    record: &MeasurementRecord,
    pulse: &PiecewisePulse,
    prior: (f64, f64),
    points: usize,
    resamples: usize,
    seed: u64,
) -> Result<EstimationResult> {
    if resamples < 100 {
        return Err(QestError::Domain(format!("bootstrap needs B >= 100, got {resamples}")));
    }
    let table = ProbabilityTable::new(&record.params, pulse, uniform_grid(prior.0, prior.1, points)?)?;
    let base = mle_on_table(&table, record.shots, record.up_count)?;
    let p_hat = record.up_count as f64 / record.shots as f64;

    let draws: Vec<(f64, Vec<f64>)> = (0..resamples as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b);
            let n = binomial_draw(record.shots, p_hat, &mut rng)?;
            let global = mle_on_table(&table, record.shots, n)?.estimate;
            let per_peak = base
                .peaks
                .iter()
                .map(|p| basin_max(&table, record.shots, n, p.basin))
                .collect::<Result<Vec<_>>>()?;
            Ok((global, per_peak))
        })
        .collect::<Result<_>>()?;

    let mut globals: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let histogram = Histogram::of(&globals, HISTOGRAM_BINS)?;
    let (mean, mut ci95) = summarize(&mut globals);
    let support_interval = record.up_count == 0 || record.up_count == record.shots;
    let curve = table.curve(record.shots, record.up_count);
    if support_interval {
        ci95 = support(&table.grid, &curve, base.loglik, prior);
    }
    let peaks = base
        .peaks
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut vals: Vec<f64> = draws.iter().map(|d| d.1[k]).collect();
            let (mean, mut ci95) = summarize(&mut vals);
            if support_interval {
                ci95 = support(&table.grid, &curve, p.loglik, p.basin);
            }
            PeakEstimate { location: p.location, mean, ci95, half_width: 0.5 * (ci95.1 - ci95.0), basin: p.basin }
        })
        .collect();
    Ok(EstimationResult {
        estimate: base.estimate,
        mean,
        ci95,
        histogram,
        resamples,
        seed,
        boundary: base.boundary,
        peaks,
        support_interval,
    })
}

/// Extent of the grid points in `range` whose log-likelihood lies within
/// [`LIKELIHOOD_DROP`] of `best`.
fn support(grid: &[f64], curve: &[f64], best: f64, range: (f64, f64)) -> (f64, f64) {
    let inside: Vec<f64> = grid
        .iter()
        .zip(curve)
        .filter(|(x, l)| **x >= range.0 && **x <= range.1 && **l >= best - LIKELIHOOD_DROP)
        .map(|(x, _)| *x)
        .collect();
    match (inside.first(), inside.last()) {
        (Some(lo), Some(hi)) => (*lo, *hi),
        _ => range,
    }
}

/// The resampled records [`bootstrap`] draws for the same seed.
pub fn resample_counts(record: &MeasurementRecord, resamples: usize, seed: u64) -> Result<Vec<MeasurementRecord>> {
    let p_hat = record.up_count as f64 / record.shots as f64;
    (0..resamples as u64)
        .map(|b| {
            let mut rng = rng::stream(seed, b);
            Ok(record.with_count(binomial_draw(record.shots, p_hat, &mut rng)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfIntersection {
    pub offset_a: f64,
    pub offset_b: f64,
    pub position: BlochVector,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochCurve {
    pub offsets: Vec<f64>,
    pub points: Vec<BlochVector>,
    pub intersections: Vec<SelfIntersection>,
    /// All points coincide, so every pair of offsets is indistinguishable.
    pub degenerate: bool,
}

type P3 = [f64; 3];

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Closest points of segments [p0, p1] and [q0, q1]: (distance, s, t).
fn segment_distance(p0: P3, p1: P3, q0: P3, q1: P3) -> (f64, f64, f64) {
    let d1 = sub(p1, p0);
    let d2 = sub(q1, q0);
    let r = sub(p0, q0);
    let (a, e) = (dot(d1, d1), dot(d2, d2));
    let (b, c, f) = (dot(d1, d2), dot(d1, r), dot(d2, r));
    let eps = 1e-300;
    let (mut s, mut t);
    if a <= eps && e <= eps {
        s = 0.0;
        t = 0.0;
    } else if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else if e <= eps {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else {
        let denom = a * e - b * b;
        s = if denom > eps { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
        t = (b * s + f) / e;
        if t < 0.0 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else if t > 1.0 {
            t = 1.0;
            s = ((b - c) / a).clamp(0.0, 1.0);
        }
    }
    let x = [0, 1, 2].map(|k| p0[k] + d1[k] * s);
    let y = [0, 1, 2].map(|k| q0[k] + d2[k] * t);
    let d = sub(x, y);
    (dot(d, d).sqrt(), s, t)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Final Bloch vectors from |↑⟩ over `offsets`, with self-intersections of
/// the polyline through them.
///
/// Two pieces of the polyline intersect when they come within
/// [`MERGE_TOLERANCE`] while being separated along the curve by more than ten
/// times that tolerance. Hits that are neighbours in (piece, piece) index space
/// form one crossing; the closest pair represents it.
pub fn bloch_sweep(pulse: &PiecewisePulse, template: &ModelParams, offsets: &[f64], tf: f64) -> Result<BlochCurve> {
    check_grid(offsets)?;
    if !(tf.is_finite() && tf >= 0.0) {
        return Err(QestError::Domain(format!("final time must be >= 0, got {tf}")));
    }
    let pulse = pulse.extended_to(tf)?;
    let points: Vec<BlochVector> = offsets
        .iter()
        .map(|&d| state_at(&QubitState::up(), &template.with_delta(d), &pulse, tf).map(|s| bloch_from_state(&s)))
        .collect::<Result<_>>()?;
    let pts: Vec<P3> = points.iter().map(|b| [b.x, b.y, b.z]).collect();
    let n = pts.len();
    let mut arc = vec![0.0; n];
    for i in 1..n {
        arc[i] = arc[i - 1] + dot(sub(pts[i], pts[i - 1]), sub(pts[i], pts[i - 1])).sqrt();
    }
    let degenerate = n > 1 && arc[n - 1] < MERGE_TOLERANCE;
    if degenerate || n < 4 {
        return Ok(BlochCurve { offsets: offsets.to_vec(), points, intersections: Vec::new(), degenerate });
    }

    let gap = 10.0 * MERGE_TOLERANCE;
    let mut hits: Vec<(usize, usize, f64, P3)> = Vec::new();
    for i in 0..n - 1 {
        for j in i + 1..n - 1 {
            if arc[j] - arc[i + 1] <= gap {
                continue;
            }
            let (d, s, t) = segment_distance(pts[i], pts[i + 1], pts[j], pts[j + 1]);
            if d < MERGE_TOLERANCE {
                let x = [0, 1, 2].map(|k| pts[i][k] + s * (pts[i + 1][k] - pts[i][k]));
                let y = [0, 1, 2].map(|k| pts[j][k] + t * (pts[j + 1][k] - pts[j][k]));
                hits.push((i, j, d, [0, 1, 2].map(|k| 0.5 * (x[k] + y[k]))));
            }
        }
    }

    let mut parent: Vec<usize> = (0..hits.len()).collect();
    let index: std::collections::HashMap<(usize, usize), usize> =
        hits.iter().enumerate().map(|(h, &(i, j, _, _))| ((i, j), h)).collect();
    for (h, &(i, j, _, _)) in hits.iter().enumerate() {
        for (di, dj) in [(1i64, -1i64), (1, 0), (1, 1), (0, 1)] {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            if a < 0 || b < 0 {
                continue;
            }
            if let Some(&g) = index.get(&(a as usize, b as usize)) {
                let (ra, rb) = (find(&mut parent, h), find(&mut parent, g));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut best: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for h in 0..hits.len() {
        let root = find(&mut parent, h);
        let e = best.entry(root).or_insert(h);
        if hits[h].2 < hits[*e].2 {
            *e = h;
        }
    }
    let mid = |i: usize| 0.5 * (offsets[i] + offsets[i + 1]);
    let intersections = best
        .values()
        .map(|&h| {
            let (i, j, d, p) = hits[h];
            SelfIntersection {
                offset_a: mid(i),
                offset_b: mid(j),
                position: BlochVector { x: p[0], y: p[1], z: p[2] },
                distance: d,
            }
        })
        .collect();
    Ok(BlochCurve { offsets: offsets.to_vec(), points, intersections, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmodel::PulseSegment;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn square_then_free(amp_time: f64, total: f64) -> PiecewisePulse {
        PiecewisePulse::new(vec![
            PulseSegment::new(amp_time, 1.0, 0.0).unwrap(),
            PulseSegment::free(total - amp_time).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn idle_pulse_keeps_the_pole() {
        let p = ModelParams::reference().with_gamma(0.0);
        let idle = PiecewisePulse::constant(5.0, 0.0, 0.0).unwrap();
        assert_eq!(outcome_probabilities(&p, &idle).unwrap(), (1.0, 0.0));
        let rec = simulate_measurements(&p, &idle, "idle", 100, 1).unwrap();
        assert_eq!(rec.up_count, 100);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let pulse = square_then_free(2.0, 9.0);
        for g in [0.0, 0.05, 0.3] {
            for d in [-0.7, 0.0, 0.25] {
                let p = ModelParams::new(d, 1.0, g, 1.0).unwrap();
                let (u, dn) = outcome_probabilities(&p, &pulse).unwrap();
                assert!((u + dn - 1.0).abs() < 1e-12);
                let rho = final_state(&QubitState::up(), &p, &pulse).unwrap();
                assert!((rho.population_down() - dn).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn squared_populations_are_not_normalized_for_mixed_states() {
        // The squared-diagonal reading of P↑, P↓ loses probability for mixed states.
        let p = ModelParams::new(0.0, 1.0, 0.05, 1.0).unwrap();
        let rho = final_state(&QubitState::up(), &p, &square_then_free(PI, 10.0)).unwrap();
        let squared = rho.population_up().powi(2) + rho.population_down().powi(2);
        assert!(squared < 0.99, "{squared}");
    }

    #[test]
    fn records_are_deterministic_per_seed() {
        let p = ModelParams::reference().with_gamma(0.0).with_delta(0.25);
        let pulse = square_then_free(3.0, 8.0);
        let a = simulate_measurements(&p, &pulse, "x", 1000, 5).unwrap();
        let b = simulate_measurements(&p, &pulse, "x", 1000, 5).unwrap();
        assert_eq!(a, b);
        assert!(simulate_measurements(&p, &pulse, "x", 0, 5).is_err());
        assert!(MeasurementRecord::new(3, 4, "x", p).is_err());
    }

    #[test]
    fn loglik_sentinel_and_flat_case() {
        assert_eq!(loglik_from(10, 3, 0.0), f64::NEG_INFINITY);
        assert_eq!(loglik_from(10, 0, 0.0), 0.0);
        assert_abs_diff_eq!(loglik_from(4, 1, 0.5), 4.0 * 0.5f64.ln(), epsilon = 1e-15);
        // Free evolution from |↑⟩ leaves P↑ = 1 for every Δ.
        let p = ModelParams::reference().with_gamma(0.0);
        let rec = MeasurementRecord::new(50, 50, "idle", p).unwrap();
        let curve = log_likelihood(&rec, &PiecewisePulse::constant(4.0, 0.0, 0.0).unwrap(), &[-0.1, 0.0, 0.3]).unwrap();
        assert!(curve.loglik.iter().all(|&l| l.abs() < 1e-9));
        assert!(log_likelihood(&rec, &PiecewisePulse::constant(4.0, 0.0, 0.0).unwrap(), &[0.2, 0.1]).is_err());
    }

    #[test]
    fn symmetric_pulse_gives_symmetric_likelihood() {
        let p = ModelParams::reference().with_gamma(0.0);
        let pulse = square_then_free(3.2, 10.0);
        let rec = MeasurementRecord::new(1000, 700, "qfi", p).unwrap();
        let grid: Vec<f64> = (0..41).map(|k| -0.5 + 0.025 * k as f64).collect();
        let curve = log_likelihood(&rec, &pulse, &grid).unwrap();
        for k in 0..41 {
            assert_abs_diff_eq!(curve.loglik[k], curve.loglik[40 - k], epsilon = 1e-8 * curve.loglik[k].abs().max(1.0));
        }
    }

    #[test]
    fn noiseless_record_recovers_the_offset() {
        // Choose a pulse whose P↑ is monotone over the prior.
        let pulse = PiecewisePulse::constant(2.0, 1.0, 0.0).unwrap();
        let p = ModelParams::reference().with_gamma(0.0);
        let shots = 1_000_000_000u64;
        let (up, _) = outcome_probabilities(&p, &pulse).unwrap();
        let rec = MeasurementRecord::new(shots, (up * shots as f64).round() as u64, "x", p).unwrap();
        let out = mle(&rec, &pulse, (0.0, 0.6), DEFAULT_GRID_POINTS).unwrap();
        assert_abs_diff_eq!(out.estimate, 0.2, epsilon = 1e-5);
        assert!(!out.boundary);
    }

    #[test]
    fn boundary_maximum_is_flagged() {
        let pulse = PiecewisePulse::constant(2.0, 1.0, 0.0).unwrap();
        let p = ModelParams::reference().with_gamma(0.0);
        let (up, _) = outcome_probabilities(&p, &pulse).unwrap();
        let rec = MeasurementRecord::new(100_000, (up * 1e5) as u64, "x", p).unwrap();
        let out = mle(&rec, &pulse, (0.3, 0.6), 101).unwrap();
        assert!(out.boundary);
    }

    #[test]
    fn golden_section_finds_parabola_vertex() {
        let (x, fx) = golden_max(|x| Ok(-(x - 0.3f64).powi(2)), -1.0, 2.0, 1e-9).unwrap();
        assert_abs_diff_eq!(x, 0.3, epsilon = 1e-8);
        assert!(fx <= 0.0 && fx > -1e-15);
    }

    #[test]
    fn bimodal_likelihood_reports_both_peaks() {
        let p = ModelParams::reference().with_gamma(0.0);
        let pulse = square_then_free(3.2, 10.0);
        let truth = p.with_delta(0.25);
        let (up, _) = outcome_probabilities(&truth, &pulse).unwrap();
        let rec = MeasurementRecord::new(50_000, (up * 50_000.0).round() as u64, "qfi", p).unwrap();
        let out = mle(&rec, &pulse, (-0.6, 0.6), DEFAULT_GRID_POINTS).unwrap();
        assert_eq!(out.peaks.len(), 2);
        let mut locs: Vec<f64> = out.peaks.iter().map(|q| q.location).collect();
        locs.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(locs[0], -locs[1], epsilon = 1e-4);
        assert!((locs[1] - 0.25).abs() < 0.01);
    }

    #[test]
    fn histogram_is_normalized() {
        let h = Histogram::of(&[0.1, 0.2, 0.2, 0.35, 0.5], 7).unwrap();
        assert_abs_diff_eq!(h.integral(), 1.0, epsilon = 1e-12);
        let h = Histogram::of(&[0.3, 0.3], 7).unwrap();
        assert_abs_diff_eq!(h.integral(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert_abs_diff_eq!(percentile(&v, 0.025), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic_and_consistent() {
        let pulse = PiecewisePulse::constant(2.0, 1.0, 0.0).unwrap();
        let p = ModelParams::reference().with_gamma(0.0).with_delta(0.25);
        let rec = simulate_measurements(&p, &pulse, "x", 5000, 2).unwrap();
        let a = bootstrap(&rec, &pulse, (0.0, 0.6), 201, 200, 8).unwrap();
        let b = bootstrap(&rec, &pulse, (0.0, 0.6), 201, 200, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.ci95.0 <= a.mean && a.mean <= a.ci95.1);
        assert_abs_diff_eq!(a.histogram.integral(), 1.0, epsilon = 1e-6);
        assert!(bootstrap(&rec, &pulse, (0.0, 0.6), 201, 99, 8).is_err());
        assert_eq!(resample_counts(&rec, 3, 8).unwrap().len(), 3);
    }

    #[test]
    fn single_shot_gives_wide_interval() {
        let pulse = PiecewisePulse::constant(2.0, 1.0, 0.0).unwrap();
        let p = ModelParams::reference().with_gamma(0.0).with_delta(0.25);
        let rec = simulate_measurements(&p, &pulse, "x", 1, 3).unwrap();
        let r = bootstrap(&rec, &pulse, (0.0, 0.6), 101, 100, 1).unwrap();
        assert!(r.support_interval);
        assert!(r.ci95.0 <= r.estimate && r.estimate <= r.ci95.1);
        assert!(r.ci95.1 - r.ci95.0 > 0.1, "{:?}", r.ci95);
        assert_abs_diff_eq!(r.histogram.integral(), 1.0, epsilon = 1e-6);

        let rec = MeasurementRecord::new(1000, 700, "x", p).unwrap();
        assert!(!bootstrap(&rec, &pulse, (0.0, 0.6), 101, 100, 1).unwrap().support_interval);
    }

    #[test]
    fn segment_distance_cases() {
        let (d, _, _) = segment_distance([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, -1.0, 0.2], [0.5, 1.0, 0.2]);
        assert_abs_diff_eq!(d, 0.2, epsilon = 1e-15);
        let (d, _, _) = segment_distance([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]);
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-15);
        let (d, _, _) = segment_distance([0.0; 3], [0.0; 3], [0.0, 3.0, 4.0], [0.0, 3.0, 4.0]);
        assert_abs_diff_eq!(d, 5.0, epsilon = 1e-15);
    }

    #[test]
    fn sweep_degenerate_and_single_offset() {
        let p = ModelParams::reference().with_gamma(0.0);
        let zero = PiecewisePulse::constant(0.0, 1.0, 0.0).unwrap();
        let offsets: Vec<f64> = (0..21).map(|k| -1.0 + 0.1 * k as f64).collect();
        let c = bloch_sweep(&zero, &p, &offsets, 0.0).unwrap();
        assert!(c.degenerate);
        let c = bloch_sweep(&square_then_free(1.0, 3.0), &p, &[0.1], 3.0).unwrap();
        assert!(c.intersections.is_empty() && !c.degenerate);
    }

    #[test]
    fn sweep_intersections_are_mirror_symmetric() {
        let p = ModelParams::new(0.0, 2.0, 0.0, 1.0).unwrap();
        let pulse = square_then_free(PI / 2.0, 3.0 * PI);
        let offsets: Vec<f64> = (0..401).map(|k| -1.0 + 2.0 * k as f64 / 400.0).collect();
        let c = bloch_sweep(&pulse, &p, &offsets, 3.0 * PI).unwrap();
        assert!(!c.intersections.is_empty());
        for s in &c.intersections {
            assert_abs_diff_eq!(s.offset_a, -s.offset_b, epsilon = 2.0 * 2.0 / 400.0);
            assert!(s.position.x.abs() < 1e-2);
        }
    }
}
