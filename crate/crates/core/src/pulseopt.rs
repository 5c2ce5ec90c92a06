//! Cost functions over piecewise-constant pulses and a seeded global optimizer.
//!
//! The search space is the box of `segments` triples (duration, amplitude,
//! phase). Simulated annealing runs several independent chains in parallel,
//! each with its own random stream, and the best candidate can be polished
//! with Nelder-Mead.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::final_state;
use crate::error::{QestError, Result};
use crate::infometrics::{bures_distance_sq, cfi_at, qfi};
use crate::qmodel::{normalize_phase, ModelParams, ParamName, PiecewisePulse, Povm, PulseSegment, QubitState};
use crate::rng;

/// Weight of the duration penalty in [`cost_selectivity`]: 1/(ω₀·10π/ω₀).
pub const DEFAULT_TIME_WEIGHT: f64 = 1.0 / (10.0 * PI);

/// Parameter values that one control has to steer to distinct targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectivitySpec {
    param: ParamName,
    ensemble: Vec<f64>,
    targets: Vec<QubitState>,
    initial: QubitState,
}

impl SelectivitySpec {
    pub fn new(param: ParamName, ensemble: Vec<f64>, targets: Vec<QubitState>, initial: QubitState) -> Result<Self> {
        if ensemble.len() < 2 {
            return Err(QestError::Domain("selectivity needs at least two ensemble members".into()));
        }
        if ensemble.len() != targets.len() {
            return Err(QestError::Domain(format!(
                "{} ensemble values but {} targets",
                ensemble.len(),
                targets.len()
            )));
        }
        for (i, a) in ensemble.iter().enumerate() {
            if !a.is_finite() {
                return Err(QestError::Domain("ensemble values must be finite".into()));
            }
            if ensemble[..i].contains(a) {
                return Err(QestError::Domain(format!("duplicate ensemble value {a}")));
            }
        }
        Ok(Self { param, ensemble, targets, initial })
    }

    /// {−Δ₀, Δ₀} steered from |↑⟩ to |↑⟩ and |↓⟩ respectively.
    pub fn delta_pair(delta0: f64) -> Result<Self> {
        Self::new(
            ParamName::Delta,
            vec![-delta0, delta0],
            vec![QubitState::up(), QubitState::down()],
            QubitState::up(),
        )
    }

    /// {γ₀, γ₀ + δγ} steered from |↑⟩ to I/2 and back to |↑⟩.
    pub fn gamma_pair(gamma0: f64, dgamma: f64) -> Result<Self> {
        Self::new(
            ParamName::Gamma,
            vec![gamma0, gamma0 + dgamma],
            vec![QubitState::maximally_mixed(), QubitState::up()],
            QubitState::up(),
        )
    }

    pub fn param(&self) -> ParamName {
        self.param
    }

    pub fn ensemble(&self) -> &[f64] {
        &self.ensemble
    }

    pub fn targets(&self) -> &[QubitState] {
        &self.targets
    }

    pub fn initial(&self) -> &QubitState {
        &self.initial
    }
}

/// Search box and annealing schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub segments: usize,
    pub max_amplitude: f64,
    pub max_duration: f64,
    pub seed: u64,
    pub initial_temperature: f64,
    pub cooling: f64,
    pub iterations_per_temperature: usize,
    pub temperature_levels: usize,
    pub restarts: usize,
    pub refine: bool,
    /// Required when the final time is fixed.
    pub final_time: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            segments: 5,
            max_amplitude: 1.0,
            max_duration: 2.0 * PI,
            seed: 0,
            initial_temperature: 1.0,
            cooling: 0.97,
            iterations_per_temperature: 200,
            temperature_levels: 150,
            restarts: 8,
            refine: true,
            final_time: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QestError::Config(m));
        if self.segments == 0 {
            return bad("segments must be >= 1".into());
        }
        if !(self.max_amplitude.is_finite() && self.max_amplitude > 0.0) {
            return bad(format!("max_amplitude must be finite and > 0, got {}", self.max_amplitude));
        }
        if !(self.max_duration.is_finite() && self.max_duration > 0.0) {
            return bad(format!("max_duration must be finite and > 0, got {}", self.max_duration));
        }
        if !(self.initial_temperature.is_finite() && self.initial_temperature > 0.0) {
            return bad("initial_temperature must be finite and > 0".into());
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return bad(format!("cooling must lie in (0, 1), got {}", self.cooling));
        }
        if self.iterations_per_temperature == 0 || self.temperature_levels == 0 || self.restarts == 0 {
            return bad("annealing needs at least one iteration, temperature level and restart".into());
        }
        if let Some(tf) = self.final_time {
            if !(tf.is_finite() && tf > 0.0) {
                return bad(format!("final_time must be finite and > 0, got {tf}"));
            }
        }
        Ok(())
    }

    fn dim(&self) -> usize {
        3 * self.segments
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub best_pulse: PiecewisePulse,
    pub best_cost: f64,
    /// Best cost so far after every temperature level of every chain (chains
    /// in restart order), followed by the polished value.
    pub history: Vec<f64>,
    pub evaluations: u64,
    pub seed: u64,
}

fn check_final_time(pulse: &PiecewisePulse, tf: f64) -> Result<()> {
    let total = pulse.total_duration();
    if (total - tf).abs() > 1e-9 * tf.abs().max(1.0) {
        return Err(QestError::Domain(format!("final time {tf} differs from pulse duration {total}")));
    }
    Ok(())
}

/// −F(t_f), F the purity-routed QFI of the state prepared from `initial`.
pub fn cost_qfi(
    pulse: &PiecewisePulse,
    params: &ModelParams,
    initial: &QubitState,
    which: ParamName,
    tf: f64,
) -> Result<f64> {
    check_final_time(pulse, tf)?;
    Ok(-qfi(params, pulse, initial, which, tf)?)
}

/// Mean squared Bures distance between reached states and targets.
pub fn selectivity_distance(pulse: &PiecewisePulse, template: &ModelParams, spec: &SelectivitySpec) -> Result<f64> {
    let mut sum = 0.0;
    for (value, target) in spec.ensemble.iter().zip(&spec.targets) {
        let params = template.with(spec.param, *value)?;
        let reached = final_state(&spec.initial, &params, pulse)?;
        sum += bures_distance_sq(target, &reached)?;
    }
    Ok(sum / spec.ensemble.len() as f64)
}

/// Mean D²(target, reached) plus `time_weight`·ω₀·t_f.
pub fn cost_selectivity(
    pulse: &PiecewisePulse,
    template: &ModelParams,
    spec: &SelectivitySpec,
    time_weight: f64,
) -> Result<f64> {
    Ok(selectivity_distance(pulse, template, spec)? + time_weight * template.omega0 * pulse.total_duration())
}

/// −CFI(t_f) under `povm`. Experimental: this landscape has many local maxima.
pub fn cost_cfi(
    pulse: &PiecewisePulse,
    params: &ModelParams,
    initial: &QubitState,
    which: ParamName,
    povm: &Povm,
    tf: f64,
) -> Result<f64> {
    check_final_time(pulse, tf)?;
    Ok(-cfi_at(params, pulse, initial, which, tf, povm)?)
}

struct Space<'a> {
    cfg: &'a OptimizerConfig,
    final_time: Option<f64>,
}

impl Space<'_> {
    fn upper(&self, k: usize) -> f64 {
        match k / self.cfg.segments {
            0 => self.cfg.max_duration,
            1 => self.cfg.max_amplitude,
            _ => PI,
        }
    }

    fn lower(&self, k: usize) -> f64 {
        if k / self.cfg.segments == 2 {
            -PI
        } else {
            0.0
        }
    }

    fn width(&self, k: usize) -> f64 {
        self.upper(k) - self.lower(k)
    }

    fn project(&self, x: &mut [f64]) {
        for (k, v) in x.iter_mut().enumerate() {
            if k / self.cfg.segments == 2 {
                *v = normalize_phase(*v);
                continue;
            }
            let (lo, hi) = (self.lower(k), self.upper(k));
            if *v < lo {
                *v = 2.0 * lo - *v;
            }
            if *v > hi {
                *v = 2.0 * hi - *v;
            }
            *v = v.clamp(lo, hi);
        }
    }

    fn random_point<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.cfg.dim()).map(|k| self.lower(k) + self.width(k) * rng.random::<f64>()).collect()
    }

    fn decode(&self, x: &[f64]) -> Result<PiecewisePulse> {
        let s = self.cfg.segments;
        let mut durations = x[..s].to_vec();
        if let Some(tf) = self.final_time {
            let total: f64 = durations.iter().sum();
            if total > 0.0 {
                durations.iter_mut().for_each(|d| *d *= tf / total);
            } else {
                durations.iter_mut().for_each(|d| *d = tf / s as f64);
            }
        }
        let segments = (0..s)
            .map(|i| PulseSegment::new(durations[i], x[s + i], x[2 * s + i]))
            .collect::<Result<Vec<_>>>()?;
        PiecewisePulse::new(segments)
    }
}

struct Chain {
    x: Vec<f64>,
    cost: f64,
    history: Vec<f64>,
    evaluations: u64,
}

fn anneal<F>(cost: &F, space: &Space, restart: u64) -> Result<Chain>
where
    F: Fn(&PiecewisePulse) -> Result<f64> + Sync,
{
    let cfg = space.cfg;
    let mut rng = rng::stream(cfg.seed, restart);
    let mut evaluations = 0u64;
    let eval = |x: &[f64], n: &mut u64| -> Result<f64> {
        *n += 1;
        cost(&space.decode(x)?)
    };

    // Typical cost differences set the Metropolis scale, so the schedule is
    // independent of the cost's units.
    let probes: Vec<f64> = (0..16)
        .map(|_| {
            let p = space.random_point(&mut rng);
            eval(&p, &mut evaluations)
        })
        .collect::<Result<_>>()?;
    let mean = probes.iter().sum::<f64>() / probes.len() as f64;
    let spread = (probes.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / probes.len() as f64).sqrt();
    let scale = if spread > 1e-12 { spread } else { 1.0 };

    let mut x = space.random_point(&mut rng);
    let mut current = eval(&x, &mut evaluations)?;
    let mut best_x = x.clone();
    let mut best = current;
    let mut history = Vec::with_capacity(cfg.temperature_levels);
    let mut temperature = cfg.initial_temperature;
    let mut proposal = vec![0.0; cfg.dim()];
    for _ in 0..cfg.temperature_levels {
        let step = 0.25 * (temperature / cfg.initial_temperature).sqrt().max(1e-3);
        for _ in 0..cfg.iterations_per_temperature {
            for (k, p) in proposal.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = x[k] + step * space.width(k) * z;
            }
            space.project(&mut proposal);
            let c = eval(&proposal, &mut evaluations)?;
            let accept = c <= current || rng.random::<f64>() < (-(c - current) / (temperature * scale)).exp();
            if accept {
                x.copy_from_slice(&proposal);
                current = c;
                if c < best {
                    best = c;
                    best_x.copy_from_slice(&x);
                }
            }
        }
        history.push(best);
        temperature *= cfg.cooling;
    }
    Ok(Chain { x: best_x, cost: best, history, evaluations })
}

fn nelder_mead<F>(f: &mut F, start: &[f64], steps: &[f64], max_evals: usize) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for k in 0..n {
        let mut v = start.to_vec();
        v[k] += steps[k];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect::<Result<_>>()?;
    let mut evals = n + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[n] - values[0]).abs() <= 1e-13 * (values[0].abs() + 1e-13) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected)?;
        evals += 1;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded)?;
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted)?;
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k])).collect();
                    values[i] = f(&simplex[i])?;
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Ok((simplex[best].clone(), values[best]))
}

/// Minimizes `cost` over the pulse box described by `config`.
///
/// With `free_final_time` the segment durations are free within
/// [0, max_duration]; otherwise they are rescaled so the pulse lasts
/// `config.final_time`. Chains run in parallel but the report only depends on
/// the seed and the configuration.
pub fn optimize<F>(cost: &F, config: &OptimizerConfig, free_final_time: bool) -> Result<OptimizationReport>
where
    F: Fn(&PiecewisePulse) -> Result<f64> + Sync,
{
    config.validate()?;
    let final_time = if free_final_time {
        None
    } else {
        Some(config.final_time.ok_or_else(|| QestError::Config("fixed final time requested but final_time is unset".into()))?)
    };
    let space = Space { cfg: config, final_time };

    let chains: Vec<Chain> = (0..config.restarts as u64)
        .into_par_iter()
        .map(|r| anneal(cost, &space, r))
        .collect::<Result<_>>()?;

    let mut history = Vec::new();
    let mut running = f64::INFINITY;
    let mut evaluations = 0;
    for chain in &chains {
        evaluations += chain.evaluations;
        for &h in &chain.history {
            running = running.min(h);
            history.push(running);
        }
    }

    // Among equally good chains prefer the shortest, then the least energetic pulse.
    let best_cost = chains.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * best_cost.abs().max(1.0);
    let mut best: Option<(Vec<f64>, f64, PiecewisePulse)> = None;
    for chain in chains.iter().filter(|c| c.cost <= best_cost + tol) {
        let pulse = space.decode(&chain.x)?;
        let better = match &best {
            None => true,
            Some((_, _, b)) => {
                let key = |p: &PiecewisePulse| (p.total_duration(), p.energy());
                key(&pulse).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Less)
            }
        };
        if better {
            best = Some((chain.x.clone(), chain.cost, pulse));
        }
    }
    let (mut x, mut value, _) = best.ok_or_else(|| QestError::NumericalFailure("no annealing chain finished".into()))?;

    if config.refine {
        let mut count = 0u64;
        let mut f = |y: &[f64]| -> Result<f64> {
            count += 1;
            let mut z = y.to_vec();
            space.project(&mut z);
            cost(&space.decode(&z)?)
        };
        let steps: Vec<f64> = (0..config.dim()).map(|k| 0.02 * space.width(k)).collect();
        let (mut y, fy) = nelder_mead(&mut f, &x, &steps, 200 * config.dim())?;
        evaluations += count;
        if fy < value {
            space.project(&mut y);
            x = y;
            value = fy;
        }
        running = running.min(value);
        history.push(running);
    }

    Ok(OptimizationReport {
        best_pulse: space.decode(&x)?,
        best_cost: value,
        history,
        evaluations,
        seed: config.seed,
    })
}

/// Result of [`min_time_scan`].
#[derive(Debug, Clone)]
pub struct TimeScan {
    pub min_time: f64,
    pub report: OptimizationReport,
    /// Every final time tried with its optimized cost, in the order visited.
    pub probes: Vec<(f64, f64)>,
}

/// Bisects the shortest final time in [`lo`, `hi`] at which the fixed-time
/// optimum of `make_cost(t_f)` falls below `threshold`.
pub fn min_time_scan<M, F>(
    make_cost: M,
    config: &OptimizerConfig,
    mut lo: f64,
    mut hi: f64,
    threshold: f64,
    tol: f64,
) -> Result<TimeScan>
where
    M: Fn(f64) -> F,
    F: Fn(&PiecewisePulse) -> Result<f64> + Sync,
{
    if !(lo > 0.0 && hi > lo && tol > 0.0) {
        return Err(QestError::Config(format!("bad scan bracket [{lo}, {hi}] with tol {tol}")));
    }
    let mut probes = Vec::new();
    let mut run = |tf: f64| -> Result<OptimizationReport> {
        let cfg = OptimizerConfig { final_time: Some(tf), ..config.clone() };
        let report = optimize(&make_cost(tf), &cfg, false)?;
        probes.push((tf, report.best_cost));
        Ok(report)
    };
    let mut best = run(hi)?;
    if best.best_cost > threshold {
        return Err(QestError::NumericalFailure(format!(
            "target not reached at the upper bracket {hi} (cost {})",
            best.best_cost
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let report = run(mid)?;
        if report.best_cost <= threshold {
            hi = mid;
            best = report;
        } else {
            lo = mid;
        }
    }
    Ok(TimeScan { min_time: hi, report: best, probes })
}
