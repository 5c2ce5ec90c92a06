//! The four subcommands. Each resolves the scenario's pulse, computes its
//! outputs and writes them together with a manifest.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use qest_core::dynamics::propagate_pulse;
use qest_core::infometrics::{bures_distance_sq, cfi_at, fd_qfi, qfi, qfi_tight_bound};
use qest_core::mlestim::{bloch_sweep, bootstrap, simulate_measurements, uniform_grid};
use qest_core::pulseopt::{
    cost_cfi, cost_qfi, cost_selectivity, optimize, selectivity_distance, OptimizationReport,
};
use qest_core::qmodel::bloch_from_state;
use qest_core::{PiecewisePulse, Povm};
use serde_json::json;

use crate::error::CliError;
use crate::output::{csv_bytes, json_bytes, write_atomic, RunManifest, Seeds, MANIFEST_FILE};
use crate::scenario::{scenario_hash, CostKind, Metric, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Optimize,
    Estimate,
    Sweep,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Optimize => "optimize",
            Command::Estimate => "estimate",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Worker threads; `None` or 0 lets rayon decide.
    pub threads: Option<usize>,
}

/// QESTCTL_THREADS wins over the flag when it parses.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>, CliError> {
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| CliError::Schema(format!("QESTCTL_THREADS: expected a thread count, got {s:?}"))),
        None => Ok(flag),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub files: Vec<PathBuf>,
    /// Set by `estimate` when the likelihood maximum hits the prior edge.
    pub boundary: bool,
}

struct Emitted {
    files: Vec<(String, Vec<u8>)>,
    summary: serde_json::Value,
    boundary: bool,
}

/// Runs `command` on the scenario file and writes into `out_dir`.
///
/// A boundary estimate still writes every file; the caller maps
/// [`RunOutcome::boundary`] to its exit status.
pub fn run(command: Command, scenario_path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let text = std::fs::read_to_string(scenario_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", scenario_path.display())))?;
    run_text(command, &text, out_dir, opts)
}

pub fn run_text(command: Command, text: &str, out_dir: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let scenario = Scenario::from_json(text)?.with_seed(opts.seed);
    let hash = scenario_hash(text)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let emitted = pool.install(|| match command {
        Command::Simulate => simulate(&scenario),
        Command::Optimize => optimize_cmd(&scenario),
        Command::Estimate => estimate(&scenario),
        Command::Sweep => sweep(&scenario),
    })?;

    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut paths = Vec::new();
    let mut names = Vec::new();
    for (name, bytes) in &emitted.files {
        paths.push(write_atomic(out_dir, name, bytes)?);
        names.push(name.clone());
    }
    let manifest = RunManifest {
        command: command.as_str().to_owned(),
        scenario_name: scenario.name.clone(),
        scenario_sha256: hash,
        schema_version: scenario.schema_version,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        rng: qest_core::rng::GENERATOR_NAME.to_owned(),
        seeds: seeds_of(&scenario),
        threads,
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        files: names,
        summary: emitted.summary,
    };
    paths.push(write_atomic(out_dir, MANIFEST_FILE, &json_bytes(&manifest)?)?);
    Ok(RunOutcome { manifest, files: paths, boundary: emitted.boundary })
}

fn seeds_of(s: &Scenario) -> Seeds {
    Seeds {
        optimizer: s.optimize.as_ref().map(|r| r.config.seed),
        measurement: s.estimation.as_ref().map(|e| e.seed),
        bootstrap: s.estimation.as_ref().map(|e| e.bootstrap_seed()),
    }
}

/// The inline pulse, or the optimizer's best pulse with its report.
pub fn resolve_pulse(s: &Scenario) -> Result<(PiecewisePulse, Option<OptimizationReport>), CliError> {
    if let Some(p) = &s.pulse {
        return Ok((p.clone(), None));
    }
    let report = run_optimizer(s)?;
    Ok((report.best_pulse.clone(), Some(report)))
}

pub fn run_optimizer(s: &Scenario) -> Result<OptimizationReport, CliError> {
    let req = s
        .optimize
        .as_ref()
        .ok_or_else(|| CliError::Schema("pulse, optimize: the scenario needs one of them".into()))?;
    let model = req.model.unwrap_or(s.model);
    let initial = s.initial.state()?;
    let free = req.free_final_time;
    let report = match req.cost {
        CostKind::Qfi => {
            let which = req.param.expect("validated");
            optimize(&|p: &PiecewisePulse| cost_qfi(p, &model, &initial, which, p.total_duration()), &req.config, free)?
        }
        CostKind::Cfi => {
            let which = req.param.expect("validated");
            let povm = Povm::sigma_z();
            optimize(
                &|p: &PiecewisePulse| cost_cfi(p, &model, &initial, which, &povm, p.total_duration()),
                &req.config,
                free,
            )?
        }
        CostKind::Selectivity => {
            let spec = req.selectivity.as_ref().expect("validated").spec()?;
            let w = req.time_weight();
            optimize(&|p: &PiecewisePulse| cost_selectivity(p, &model, &spec, w), &req.config, free)?
        }
    };
    Ok(report)
}

fn simulate(s: &Scenario) -> Result<Emitted, CliError> {
    let (pulse, report) = resolve_pulse(s)?;
    let mut files = Vec::new();
    let mut summary = json!({ "final_time": pulse.total_duration() });
    if let Some(r) = &report {
        files.push(("pulse.json".to_owned(), json_bytes(&r.best_pulse)?));
        summary["optimizer_cost"] = json!(r.best_cost);
    }
    if s.metrics.is_empty() {
        return Ok(Emitted { files, summary, boundary: false });
    }
    let sim = &s.simulation;
    let which = sim.param;
    let initial = s.initial.state()?;
    let tracked = s.tracked();
    let systems = tracked
        .iter()
        .map(|&v| Ok(s.model.with(which, v)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let trajectories = systems
        .iter()
        .map(|p| propagate_pulse(&initial, p, &pulse, sim.samples_per_segment))
        .collect::<Result<Vec<_>, _>>()?;
    let times = &trajectories[0].times;
    let base = &systems[0];
    let povm = Povm::sigma_z();

    let mut header = vec!["t".to_owned()];
    for m in &s.metrics {
        header.push(metric_column(*m).to_owned());
    }
    for i in 0..tracked.len() {
        header.extend([format!("x_{i}"), format!("y_{i}"), format!("z_{i}")]);
    }
    let mut rows = Vec::with_capacity(times.len());
    let mut max = vec![f64::NEG_INFINITY; s.metrics.len()];
    for (k, &t) in times.iter().enumerate() {
        let mut row = vec![t];
        for (j, m) in s.metrics.iter().enumerate() {
            let v = match m {
                Metric::Bures => bures_distance_sq(&trajectories[0].states[k], &trajectories[1].states[k])?,
                Metric::Qfi => qfi(base, &pulse, &initial, which, t)?,
                Metric::Cfi => cfi_at(base, &pulse, &initial, which, t, &povm)?,
                Metric::Bound => qfi_tight_bound(base, &pulse, which, t)?,
                Metric::FdQfi => fd_qfi(base, &pulse, &initial, which, sim.fd_step, t)?,
            };
            max[j] = max[j].max(v);
            row.push(v);
        }
        for traj in &trajectories {
            let b = bloch_from_state(&traj.states[k]);
            row.extend([b.x, b.y, b.z]);
        }
        rows.push(row);
    }
    let last = rows.last().expect("trajectory is never empty");
    for (j, m) in s.metrics.iter().enumerate() {
        summary[format!("max_{}", metric_column(*m))] = json!(max[j]);
        summary[format!("final_{}", metric_column(*m))] = json!(last[j + 1]);
    }
    files.push(("trajectory.csv".to_owned(), csv_bytes(&header, &rows)?));
    Ok(Emitted { files, summary, boundary: false })
}

pub fn metric_column(m: Metric) -> &'static str {
    match m {
        Metric::Bures => "bures_sq",
        Metric::Qfi => "qfi",
        Metric::Cfi => "cfi",
        Metric::Bound => "bound",
        Metric::FdQfi => "fd_qfi",
    }
}

fn optimize_cmd(s: &Scenario) -> Result<Emitted, CliError> {
    let req = s
        .optimize
        .as_ref()
        .ok_or_else(|| CliError::Schema("optimize: the optimize command needs an optimizer request".into()))?;
    let report = run_optimizer(s)?;
    let pulse = &report.best_pulse;
    let model = req.model.unwrap_or(s.model);
    let traj = propagate_pulse(&s.initial.state()?, &model, pulse, s.simulation.samples_per_segment)?;
    let min_z = traj.states.iter().map(|r| bloch_from_state(r).z).fold(f64::INFINITY, f64::min);
    let mut summary = json!({
        "best_cost": report.best_cost,
        "final_time": pulse.total_duration(),
        "energy": pulse.energy(),
        "evaluations": report.evaluations,
        "min_z": min_z,
    });
    if let Some(sel) = &req.selectivity {
        summary["selectivity_distance"] = json!(selectivity_distance(pulse, &model, &sel.spec()?)?);
    }
    let files = vec![
        ("pulse.json".to_owned(), json_bytes(pulse)?),
        ("report.json".to_owned(), json_bytes(&report)?),
    ];
    Ok(Emitted { files, summary, boundary: false })
}

fn estimate(s: &Scenario) -> Result<Emitted, CliError> {
    let est = s
        .estimation
        .as_ref()
        .ok_or_else(|| CliError::Schema("estimation: the estimate command needs an estimation block".into()))?;
    let (pulse, report) = resolve_pulse(s)?;
    let truth = s.model.with_delta(est.delta_true);
    let pulse_id = if s.name.is_empty() { "pulse".to_owned() } else { s.name.clone() };
    let record = simulate_measurements(&truth, &pulse, &pulse_id, est.shots, est.seed)?;
    let prior = est.prior(&s.model);
    let result = bootstrap(&record, &pulse, prior, est.grid_points, est.resamples, est.bootstrap_seed())?;

    let header: Vec<String> = ["bin_lo", "bin_hi", "density"].iter().map(|h| h.to_string()).collect();
    let rows: Vec<Vec<f64>> = result
        .histogram
        .edges
        .windows(2)
        .zip(&result.histogram.densities)
        .map(|(w, d)| vec![w[0], w[1], *d])
        .collect();
    let mut files = Vec::new();
    if let Some(r) = &report {
        files.push(("pulse.json".to_owned(), json_bytes(&r.best_pulse)?));
    }
    files.push((
        "estimate.json".to_owned(),
        json_bytes(&json!({ "record": record, "prior": [prior.0, prior.1], "result": result }))?,
    ));
    files.push(("histogram.csv".to_owned(), csv_bytes(&header, &rows)?));
    let summary = json!({
        "estimate": result.estimate,
        "ci95": [result.ci95.0, result.ci95.1],
        "peaks": result.peaks.iter().map(|p| p.location).collect::<Vec<_>>(),
        "histogram_integral": result.histogram.integral(),
        "up_count": record.up_count,
        "boundary": result.boundary,
    });
    Ok(Emitted { files, summary, boundary: result.boundary })
}

fn sweep(s: &Scenario) -> Result<Emitted, CliError> {
    let sw = s
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Schema("sweep: the sweep command needs a sweep block".into()))?;
    let (pulse, report) = resolve_pulse(s)?;
    let offsets = if sw.offsets.points == 1 {
        vec![sw.offsets.from]
    } else {
        uniform_grid(sw.offsets.from, sw.offsets.to, sw.offsets.points)?
    };
    let curve = bloch_sweep(&pulse, &s.model, &offsets, sw.final_time)?;
    let header: Vec<String> = ["delta", "x", "y", "z"].iter().map(|h| h.to_string()).collect();
    let rows: Vec<Vec<f64>> = curve.offsets.iter().zip(&curve.points).map(|(d, b)| vec![*d, b.x, b.y, b.z]).collect();
    let ih: Vec<String> =
        ["delta_a", "delta_b", "x", "y", "z", "distance"].iter().map(|h| h.to_string()).collect();
    let irows: Vec<Vec<f64>> = curve
        .intersections
        .iter()
        .map(|c| vec![c.offset_a, c.offset_b, c.position.x, c.position.y, c.position.z, c.distance])
        .collect();
    let mut files = Vec::new();
    if let Some(r) = &report {
        files.push(("pulse.json".to_owned(), json_bytes(&r.best_pulse)?));
    }
    files.push(("sweep.csv".to_owned(), csv_bytes(&header, &rows)?));
    files.push(("intersections.csv".to_owned(), csv_bytes(&ih, &irows)?));
    let summary = json!({ "intersections": curve.intersections.len(), "degenerate": curve.degenerate });
    Ok(Emitted { files, summary, boundary: false })
}
