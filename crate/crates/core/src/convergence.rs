//! The eps-sweep harness: matched quantum and classical runs, dictionary pairings,
//! weak distances, decay-rate fits and persistence of the whole result.
//!
//! Each eps value is one cell. Cells run in parallel and are merged in eps order, so
//! results do not depend on scheduling. A cell that hits a runtime abort keeps the
//! snapshots it completed and records the reason; the sweep continues.

use crate::classical::{self, ApproachPolicy, ClassicalError, Ensemble, StepOptions};
use crate::config::{CellPlan, ConfigError, ExperimentConfig, ReferenceMode};
use crate::estimates::{self, Check, EstimateError, EstimateRecorder, EstimateReport};
use crate::fit::{loglog, LinearFit};
use crate::grid::Grid;
use crate::probe::{a_norm, TestDictionary, TestFunction};
use crate::quantum::{self, make_packet, Propagator, QuantumError, WaveFunction};
use crate::wigner::{self, WignerError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Distances at or below this are treated as numerical noise by [`rate_fit`].
pub const NOISE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvergenceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Classical(#[from] ClassicalError),
    #[error(transparent)]
    Wigner(#[from] WignerError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("rate fit needs 3 usable points, got {points} (excluded eps: {excluded:?})")]
    DegenerateFit { points: usize, excluded: Vec<f64> },
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt results file: {0}")]
    CorruptFile(String),
    #[error("results were produced by config {found}, expected {expected}")]
    ConfigHashMismatch { expected: String, found: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ConvergenceError {
    fn from(e: std::io::Error) -> Self {
        ConvergenceError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOrigin {
    Lattice,
    Trajectory,
    Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub probe: TestFunction,
    pub origin: ProbeOrigin,
    pub a_norm: f64,
    /// Distance from the probe center to the nearest singular or non-smooth point;
    /// `None` when the potential has neither.
    pub irregular_distance: Option<f64>,
    /// False for probes near the singular or crossing set; these are reported
    /// but do not enter the weak distance.
    pub in_scope: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationSample {
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
    pub kinetic: f64,
    pub h_norm: f64,
    pub boundary_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CellStatus {
    Complete,
    Aborted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub eps: f64,
    pub plan: CellPlan,
    pub status: CellStatus,
    /// Times of the completed snapshots.
    pub times: Vec<f64>,
    /// `[snapshot][probe]`.
    pub quantum: Vec<Vec<f64>>,
    pub classical: Vec<Vec<f64>>,
    /// `<g_eps, phi>` for in-scope probes when requested.
    pub remainders: Vec<Vec<Option<f64>>>,
    pub weak_distance: Vec<Option<f64>>,
    pub out_of_scope_distance: Vec<Option<f64>>,
    /// Weight of classical particles frozen near the singular set.
    pub classical_stopped: Vec<f64>,
    pub conservation: Vec<ConservationSample>,
    pub estimates: Option<EstimateReport>,
}

impl CellResult {
    pub fn is_complete(&self) -> bool {
        self.status == CellStatus::Complete
    }

    pub fn relative_energy_drift(&self) -> Option<f64> {
        let e0 = self.conservation.first()?.energy;
        let scale = e0.abs().max(f64::MIN_POSITIVE);
        Some(self.conservation.iter().map(|c| (c.energy - e0).abs()).fold(0.0, f64::max) / scale)
    }

    pub fn norm_drift(&self) -> Option<f64> {
        let n0 = self.conservation.first()?.norm;
        Some(self.conservation.iter().map(|c| (c.norm - n0).abs()).fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub t: f64,
    pub fit: Option<LinearFit>,
    pub used_eps: Vec<f64>,
    pub excluded_eps: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub config_hash: String,
    pub potential_hash: String,
    pub version: String,
    pub snapshot_times: Vec<f64>,
    pub dictionary: Vec<ProbeEntry>,
    pub cells: Vec<CellResult>,
    pub rates: Vec<RateFit>,
    pub checks: Vec<Check>,
    /// Some cell stopped early.
    pub partial: bool,
}

impl SweepResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Weak distances at the last snapshot, one per cell (`None` when unavailable).
    pub fn final_distances(&self) -> Vec<Option<f64>> {
        let last = self.snapshot_times.len() - 1;
        self.cells.iter().map(|c| c.weak_distance.get(last).copied().flatten()).collect()
    }
}

/// `max_phi |q - c| / ||phi||_A`; zero for an empty dictionary.
pub fn weak_distance(quantum: &[f64], classical: &[f64], norms: &[f64]) -> f64 {
    quantum
        .iter()
        .zip(classical)
        .zip(norms)
        .map(|((q, c), n)| (q - c).abs() / n)
        .fold(0.0, f64::max)
}

/// Least squares on `(ln eps, ln D)` after dropping distances at or below the noise floor.
pub fn rate_fit(eps: &[f64], distances: &[f64]) -> Result<(LinearFit, Vec<f64>), ConvergenceError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = Vec::new();
    for (&e, &d) in eps.iter().zip(distances) {
        if d > NOISE_FLOOR && d.is_finite() {
            xs.push(e);
            ys.push(d);
        } else {
            excluded.push(e);
        }
    }
    if xs.len() < 3 {
        return Err(ConvergenceError::DegenerateFit { points: xs.len(), excluded });
    }
    let fit = loglog(&xs, &ys).ok_or(ConvergenceError::DegenerateFit { points: xs.len(), excluded: excluded.clone() })?;
    Ok((fit, excluded))
}

/// Step options for the delta-limit run that places the dictionary.
fn tracking_options(cfg: &ExperimentConfig) -> StepOptions {
    StepOptions { eta: cfg.classical.eta, policy: ApproachPolicy::Record }
}

fn classical_substeps(cfg: &ExperimentConfig) -> usize {
    let interval = cfg.final_time / (cfg.snapshot_count - 1) as f64;
    (interval / cfg.classical.dt).ceil().max(1.0) as usize
}

/// The delta-limit trajectory of the packet center at the snapshot times.
pub fn center_trajectory(cfg: &ExperimentConfig) -> Result<Vec<Ensemble>, ConvergenceError> {
    let e0 = classical::sample_initial(&cfg.packet, classical::SamplingMode::DeltaLimit, 1, 0)?;
    Ok(classical::trajectory(&e0, &cfg.potential, cfg.final_time, cfg.snapshot_count, classical_substeps(cfg), &tracking_options(cfg))?)
}

/// Builds the probe dictionary from the config and the center trajectory.
pub fn build_dictionary(cfg: &ExperimentConfig) -> Result<Vec<ProbeEntry>, ConvergenceError> {
    let Some(dc) = &cfg.dictionary else {
        return Ok(Vec::new());
    };
    let d = cfg.dim();
    let (sx, sp) = cfg.packet.wigner_sigmas(cfg.eps[0]);
    let sx: Vec<f64> = sx.iter().map(|s| s * dc.width_scale).collect();
    let sp: Vec<f64> = sp.iter().map(|s| s * dc.width_scale).collect();
    let traj = center_trajectory(cfg)?;
    let mut probes = Vec::new();
    if dc.lattice_per_axis > 0 {
        let range = |axis: usize, momentum: bool, pad: f64| {
            let vals = traj.iter().map(|e| if momentum { e.particles[0].p[axis] } else { e.particles[0].x[axis] });
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(f64::NEG_INFINITY, f64::max);
            (lo - pad, hi + pad)
        };
        let xr: Vec<(f64, f64)> = (0..d).map(|a| range(a, false, sx[a])).collect();
        let pr: Vec<(f64, f64)> = (0..d).map(|a| range(a, true, sp[a])).collect();
        let lattice = TestDictionary::lattice(&xr, &pr, dc.lattice_per_axis, &sx, &sp);
        probes.extend(lattice.probes.into_iter().map(|p| (p, ProbeOrigin::Lattice)));
    }
    if dc.trajectory_probes > 0 {
        let k = dc.trajectory_probes;
        let e0 = &traj[0];
        for i in 0..k {
            let t = cfg.final_time * (i as f64 + 0.5) / k as f64;
            let e = classical::push_forward(e0, &cfg.potential, t, cfg.classical.dt, &tracking_options(cfg))?;
            let c = &e.particles[0];
            probes.push((TestFunction::new(format!("trj{i:03}"), c.x.clone(), c.p.clone(), sx.clone(), sp.clone()), ProbeOrigin::Trajectory));
        }
    }
    probes.extend(dc.extra_probes.iter().cloned().map(|p| (p, ProbeOrigin::Extra)));
    let kappa = cfg.potential.layout.separation_lipschitz();
    Ok(probes
        .into_iter()
        .map(|(probe, origin)| {
            let dist = cfg.potential.dist_to_irregular(&probe.x0);
            let radius = dc.exclusion_sigmas * probe.sigma_x.iter().map(|s| s * s).sum::<f64>().sqrt() * kappa;
            ProbeEntry { a_norm: a_norm(&probe), irregular_distance: dist.is_finite().then_some(dist), in_scope: dist > radius, probe, origin }
        })
        .collect())
}

/// Largest momentum the grid must resolve at `eps`: the packet and every probe out to 3 widths.
pub fn required_momentum(cfg: &ExperimentConfig, dictionary: &[ProbeEntry], eps: f64) -> f64 {
    dictionary
        .iter()
        .flat_map(|e| e.probe.p0.iter().zip(&e.probe.sigma_p).map(|(p, s)| p.abs() + 3.0 * s))
        .fold(cfg.packet_p_max(eps), f64::max)
}

/// Resolved grid and time step for every eps.
pub fn plan_all(cfg: &ExperimentConfig, dictionary: &[ProbeEntry]) -> Result<Vec<CellPlan>, ConfigError> {
    cfg.eps.iter().map(|&e| cfg.plan(e, required_momentum(cfg, dictionary, e))).collect()
}

/// Checks packet admissibility and every probe's quadrature window on each planned
/// grid without propagating.
pub fn preflight(cfg: &ExperimentConfig, plans: &[CellPlan], dictionary: &[ProbeEntry]) -> Result<(), ConfigError> {
    for plan in plans {
        let grid = cfg.grid_for(plan)?;
        admissible_packet(cfg, &grid, plan.eps)?;
        for entry in dictionary {
            wigner::check_window(&entry.probe, &grid, plan.eps)
                .map_err(|e| ConfigError::new("dictionary", format!("eps = {}: {e}", plan.eps)))?;
        }
    }
    Ok(())
}

fn admissible_packet(cfg: &ExperimentConfig, grid: &Grid, eps: f64) -> Result<WaveFunction, ConfigError> {
    make_packet(grid, eps, &cfg.packet).map_err(|e| {
        let key = match e {
            QuantumError::GridTooCoarse { .. } => "grid",
            QuantumError::SingularGridPoint { .. } => "grid.stagger",
            _ => "packet",
        };
        ConfigError::new(key, format!("eps = {eps}: {e}"))
    })
}

/// Observer called with `(cell index, snapshot index, state)` after each snapshot.
pub type SnapshotObserver<'a> = &'a (dyn Fn(usize, usize, &WaveFunction) + Sync);

#[derive(Default, Clone, Copy)]
pub struct RunOptions<'a> {
    /// Skip dictionary pairings and the classical reference.
    pub quantum_only: bool,
    pub observer: Option<SnapshotObserver<'a>>,
}

/// Runs every eps cell and assembles the sweep result.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, ConvergenceError> {
    if cfg.dictionary.is_none() {
        return Err(ConfigError::new("dictionary", "a sweep needs a probe dictionary").into());
    }
    run(cfg, RunOptions::default())
}

/// Quantum runs with estimates only; no dictionary or classical reference.
pub fn run_quantum(cfg: &ExperimentConfig, observer: Option<SnapshotObserver<'_>>) -> Result<SweepResult, ConvergenceError> {
    run(cfg, RunOptions { quantum_only: true, observer })
}

pub fn run(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<SweepResult, ConvergenceError> {
    cfg.validate()?;
    let dictionary = if opts.quantum_only { Vec::new() } else { build_dictionary(cfg)? };
    let plans = plan_all(cfg, &dictionary)?;
    preflight(cfg, &plans, &dictionary)?;
    let shared_reference = if !opts.quantum_only && !cfg.classical.mode.depends_on_eps() {
        Some(classical_reference(cfg, cfg.eps[0]))
    } else {
        None
    };
    let cells: Vec<CellResult> = plans
        .par_iter()
        .enumerate()
        .map(|(i, plan)| {
            let reference = if opts.quantum_only {
                None
            } else {
                Some(match &shared_reference {
                    Some(r) => r.clone(),
                    None => classical_reference(cfg, plan.eps),
                })
            };
            run_cell(cfg, &dictionary, plan, i, reference, &opts)
        })
        .collect::<Result<_, _>>()?;
    let snapshot_times = cfg.snapshot_times();
    let rates = if opts.quantum_only { Vec::new() } else { fit_rates(&cells, &snapshot_times) };
    let checks = sweep_checks(cfg, &dictionary, &cells);
    Ok(SweepResult {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        potential_hash: cfg.potential.hash(),
        version: crate::VERSION.to_string(),
        snapshot_times,
        dictionary,
        partial: cells.iter().any(|c| !c.is_complete()),
        cells,
        rates,
        checks,
    })
}

/// The quantum state of cell `eps_index` at snapshot `snapshot`, propagated without
/// boundary checks or diagnostics.
pub fn state_at(cfg: &ExperimentConfig, eps_index: usize, snapshot: usize) -> Result<WaveFunction, ConvergenceError> {
    cfg.validate()?;
    if eps_index >= cfg.eps.len() {
        return Err(ConfigError::new("eps", format!("index {eps_index} out of range ({} values)", cfg.eps.len())).into());
    }
    if snapshot >= cfg.snapshot_count {
        return Err(ConfigError::new("snapshot_count", format!("snapshot {snapshot} out of range")).into());
    }
    let dictionary = build_dictionary(cfg)?;
    let eps = cfg.eps[eps_index];
    let plan = cfg.plan(eps, required_momentum(cfg, &dictionary, eps))?;
    let grid = cfg.grid_for(&plan)?;
    let mut wf = admissible_packet(cfg, &grid, eps)?;
    if snapshot > 0 {
        let prop = Propagator::with_coefficient(&grid, eps, &cfg.potential, plan.dt, cfg.dt_coefficient)?;
        prop.advance(&mut wf, plan.steps_per_snapshot * snapshot)?;
        wf.time = cfg.snapshot_times()[snapshot];
    }
    Ok(wf)
}

/// Classical reference snapshots, or the reason the run stopped.
pub fn classical_reference(cfg: &ExperimentConfig, eps: f64) -> Result<Vec<Ensemble>, ClassicalError> {
    let (mode, n) = cfg.classical.mode.sampling(eps);
    let e0 = classical::sample_initial(&cfg.packet, mode, n, cfg.classical.seed)?;
    classical::trajectory(
        &e0,
        &cfg.potential,
        cfg.final_time,
        cfg.snapshot_count,
        classical_substeps(cfg),
        &cfg.classical.step_options(),
    )
}

fn run_cell(
    cfg: &ExperimentConfig,
    dictionary: &[ProbeEntry],
    plan: &CellPlan,
    index: usize,
    reference: Option<Result<Vec<Ensemble>, ClassicalError>>,
    opts: &RunOptions<'_>,
) -> Result<CellResult, ConvergenceError> {
    let eps = plan.eps;
    let grid = cfg.grid_for(plan)?;
    let mut wf = admissible_packet(cfg, &grid, eps)?;
    let mut cell = CellResult {
        eps,
        plan: plan.clone(),
        status: CellStatus::Complete,
        times: Vec::new(),
        quantum: Vec::new(),
        classical: Vec::new(),
        remainders: Vec::new(),
        weak_distance: Vec::new(),
        out_of_scope_distance: Vec::new(),
        classical_stopped: Vec::new(),
        conservation: Vec::new(),
        estimates: None,
    };
    let reference = match reference {
        Some(Ok(r)) => Some(r),
        Some(Err(e)) => {
            cell.status = CellStatus::Aborted { reason: format!("classical reference: {e}") };
            return Ok(cell);
        }
        None => None,
    };
    let prop = Propagator::with_coefficient(&grid, eps, &cfg.potential, plan.dt, cfg.dt_coefficient)?;
    let mut recorder = EstimateRecorder::new(format!("{}-eps{index}", cfg.name), &grid, eps, &cfg.potential, &cfg.estimates.settings())?;
    let want_remainders = cfg.dictionary.as_ref().is_some_and(|d| d.remainders);
    let norms: Vec<f64> = dictionary.iter().map(|e| e.a_norm).collect();
    let times = cfg.snapshot_times();
    for (k, &t) in times.iter().enumerate() {
        if k > 0 {
            prop.advance(&mut wf, plan.steps_per_snapshot)?;
            // Accumulated step times drift by rounding; pin to the nominal snapshot time.
            wf.time = t;
        }
        let (_, boundary) = quantum::boundary_mass(&wf, 0.05);
        cell.conservation.push(ConservationSample {
            t,
            norm: quantum::norm(&wf),
            energy: quantum::energy(&wf, &cfg.potential)?,
            kinetic: quantum::kinetic_energy(&wf),
            h_norm: quantum::h_norm(&wf, &cfg.potential)?,
            boundary_mass: boundary,
        });
        if let Err(e) = quantum::check_boundary(&wf, cfg.thresholds.boundary_mass) {
            cell.status = CellStatus::Aborted { reason: e.to_string() };
            break;
        }
        recorder.record(&wf)?;
        if let Some(obs) = opts.observer {
            obs(index, k, &wf);
        }
        cell.times.push(t);
        if let Some(reference) = &reference {
            let q: Vec<f64> = dictionary.par_iter().map(|e| wigner::pair(&wf, &e.probe)).collect::<Result<_, _>>()?;
            let c: Vec<f64> = dictionary.iter().map(|e| classical::measure_pair(&reference[k], &e.probe)).collect();
            let split = |scope: bool| {
                let (mut qs, mut cs, mut ns) = (Vec::new(), Vec::new(), Vec::new());
                for (i, e) in dictionary.iter().enumerate() {
                    if e.in_scope == scope {
                        qs.push(q[i]);
                        cs.push(c[i]);
                        ns.push(norms[i]);
                    }
                }
                (!qs.is_empty()).then(|| weak_distance(&qs, &cs, &ns))
            };
            cell.weak_distance.push(split(true));
            cell.out_of_scope_distance.push(split(false));
            cell.classical_stopped.push(reference[k].stopped_weight());
            let r: Vec<Option<f64>> = if want_remainders {
                dictionary
                    .par_iter()
                    .map(|e| if e.in_scope { wigner::remainder_g(&wf, &cfg.potential, &e.probe).ok() } else { None })
                    .collect()
            } else {
                Vec::new()
            };
            cell.quantum.push(q);
            cell.classical.push(c);
            cell.remainders.push(r);
        }
    }
    if !cell.times.is_empty() {
        cell.estimates = Some(recorder.finish()?);
    }
    Ok(cell)
}

fn fit_rates(cells: &[CellResult], times: &[f64]) -> Vec<RateFit> {
    (0..times.len())
        .map(|k| {
            let mut eps = Vec::new();
            let mut dist = Vec::new();
            let mut missing = Vec::new();
            for c in cells {
                match c.weak_distance.get(k).copied().flatten() {
                    Some(d) => {
                        eps.push(c.eps);
                        dist.push(d);
                    }
                    None => missing.push(c.eps),
                }
            }
            match rate_fit(&eps, &dist) {
                Ok((fit, mut excluded)) => {
                    excluded.extend(missing);
                    let used = eps.iter().copied().filter(|e| !excluded.contains(e)).collect();
                    RateFit { t: times[k], fit: Some(fit), used_eps: used, excluded_eps: excluded, error: None }
                }
                Err(e) => {
                    let mut excluded = missing;
                    if let ConvergenceError::DegenerateFit { excluded: ex, .. } = &e {
                        excluded.extend(ex.iter().copied());
                    }
                    let used = eps.iter().copied().filter(|e| !excluded.contains(e)).collect();
                    RateFit { t: times[k], fit: None, used_eps: used, excluded_eps: excluded, error: Some(e.to_string()) }
                }
            }
        })
        .collect()
}

fn check(name: &str, value: f64, threshold: f64, passed: bool, detail: String) -> Check {
    Check { name: name.into(), value, threshold, passed, detail }
}

fn sweep_checks(cfg: &ExperimentConfig, dictionary: &[ProbeEntry], cells: &[CellResult]) -> Vec<Check> {
    let th = &cfg.thresholds;
    let mut out = Vec::new();
    let complete = cells.iter().all(CellResult::is_complete);
    out.push(check(
        "complete",
        cells.iter().filter(|c| c.is_complete()).count() as f64,
        cells.len() as f64,
        complete,
        cells
            .iter()
            .filter_map(|c| match &c.status {
                CellStatus::Aborted { reason } => Some(format!("eps {}: {reason}", c.eps)),
                CellStatus::Complete => None,
            })
            .collect::<Vec<_>>()
            .join("; "),
    ));
    if let Some(limit) = th.energy_drift {
        let worst = cells.iter().filter_map(CellResult::relative_energy_drift).fold(0.0, f64::max);
        out.push(check("energy_drift", worst, limit, worst <= limit, "largest relative energy drift over cells".into()));
    }
    if let Some(limit) = th.max_weak_distance {
        let all: Vec<f64> = cells.iter().flat_map(|c| c.weak_distance.iter().flatten().copied()).collect();
        let worst = all.iter().copied().fold(0.0, f64::max);
        out.push(check(
            "max_weak_distance",
            worst,
            limit,
            complete && !all.is_empty() && worst <= limit,
            format!("largest in-scope weak distance over {} (eps, t) pairs", all.len()),
        ));
    }
    if th.decreasing_distance {
        let finals: Vec<Option<f64>> = cells
            .iter()
            .map(|c| if c.is_complete() { c.weak_distance.last().copied().flatten() } else { None })
            .collect();
        let ok = finals.iter().all(Option::is_some) && finals.windows(2).all(|w| w[1] < w[0]);
        let ratio = finals
            .windows(2)
            .filter_map(|w| Some(w[1]? / w[0]?))
            .fold(0.0, f64::max);
        out.push(check(
            "decreasing_distance",
            ratio,
            1.0,
            ok,
            format!("final-time distances {finals:?} for eps {:?}", cfg.eps),
        ));
    }
    if let Some(factor) = th.remainder_factor {
        let (worst, compared) = remainder_decay(cells, dictionary, th.remainder_floor, factor);
        out.push(check(
            "remainder_decay",
            worst,
            factor,
            complete && compared > 0 && worst >= factor,
            format!("smallest decay factor of sup_t |<g, phi>| per eps halving over {compared} (probe, eps pair) comparisons"),
        ));
    }
    for c in cells {
        if let Some(rep) = &c.estimates {
            for ch in &rep.checks {
                let mut ch = ch.clone();
                ch.name = format!("estimates/{}@eps={}", ch.name, c.eps);
                out.push(ch);
            }
        }
    }
    out
}

/// `sup_t |<g_eps(t), phi>|` over the recorded snapshots, per probe; `None` where no
/// remainder was computed.
pub fn remainder_sup(cell: &CellResult, probes: usize) -> Vec<Option<f64>> {
    (0..probes)
        .map(|i| {
            cell.remainders
                .iter()
                .filter_map(|r| r.get(i).copied().flatten())
                .map(f64::abs)
                .reduce(f64::max)
        })
        .collect()
}

/// Smallest decay factor of `sup_t |<g_eps, phi>|` between consecutive cells,
/// normalized to one halving of eps, over in-scope probes; also the number of
/// comparisons made. Probes whose remainder is at or below `floor` at the larger eps
/// are skipped, and a drop below `floor` counts as a pass.
pub fn remainder_decay(cells: &[CellResult], dictionary: &[ProbeEntry], floor: f64, factor: f64) -> (f64, usize) {
    let sups: Vec<Vec<Option<f64>>> = cells.iter().map(|c| remainder_sup(c, dictionary.len())).collect();
    let mut worst = f64::INFINITY;
    let mut compared = 0;
    for w in 0..cells.len().saturating_sub(1) {
        let halvings = (cells[w].eps / cells[w + 1].eps).log2();
        for (i, e) in dictionary.iter().enumerate() {
            if !e.in_scope {
                continue;
            }
            let (Some(ga), Some(gb)) = (sups[w][i], sups[w + 1][i]) else {
                continue;
            };
            if ga <= floor {
                continue;
            }
            compared += 1;
            let per_halving = if gb <= floor { factor.max(2.0) * 1e3 } else { (ga / gb).powf(1.0 / halvings) };
            worst = worst.min(per_halving);
        }
    }
    (if compared == 0 { 0.0 } else { worst }, compared)
}

/// Envelope written to `results.json`.
#[derive(Serialize, Deserialize)]
struct Envelope {
    schema_version: u32,
    checksum: String,
    payload: Value,
}

fn checksum(payload: &Value) -> String {
    hex::encode(Sha256::digest(payload.to_string().as_bytes()))
}

/// Serializes `result` with a schema version and a SHA-256 checksum of the canonical payload.
pub fn to_persisted(result: &SweepResult) -> String {
    let payload = serde_json::to_value(result).expect("sweep result serializes");
    let env = Envelope { schema_version: SCHEMA_VERSION, checksum: checksum(&payload), payload };
    serde_json::to_string_pretty(&env).expect("envelope serializes")
}

pub fn from_persisted(text: &str, expected_config_hash: Option<&str>) -> Result<SweepResult, ConvergenceError> {
    let head: Value = serde_json::from_str(text).map_err(|e| ConvergenceError::CorruptFile(e.to_string()))?;
    let found = head.get("schema_version").and_then(Value::as_u64).ok_or_else(|| ConvergenceError::CorruptFile("missing schema_version".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(ConvergenceError::SchemaVersionMismatch { found: found as u32, expected: SCHEMA_VERSION });
    }
    let env: Envelope = serde_json::from_value(head).map_err(|e| ConvergenceError::CorruptFile(e.to_string()))?;
    if checksum(&env.payload) != env.checksum {
        return Err(ConvergenceError::CorruptFile("checksum mismatch".into()));
    }
    let result: SweepResult = serde_json::from_value(env.payload).map_err(|e| ConvergenceError::CorruptFile(e.to_string()))?;
    if let Some(expected) = expected_config_hash {
        if result.config_hash != expected {
            return Err(ConvergenceError::ConfigHashMismatch { expected: expected.into(), found: result.config_hash });
        }
    }
    Ok(result)
}

pub fn persist(result: &SweepResult, path: &Path) -> Result<(), ConvergenceError> {
    std::fs::write(path, to_persisted(result))?;
    Ok(())
}

pub fn load(path: &Path, expected_config_hash: Option<&str>) -> Result<SweepResult, ConvergenceError> {
    let text = std::fs::read_to_string(path)?;
    from_persisted(&text, expected_config_hash)
}

/// `Re <-Laplacian psi, U_s psi>` and its scale on `count` random Gaussian mixtures.
pub fn commutator_survey(grid: &Grid, spec: &crate::potential::PotentialSpec, count: usize, seed: u64) -> Result<Vec<(f64, f64)>, ConvergenceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<Vec<num_complex::Complex64>> =
        (0..count).map(|i| estimates::random_gaussian_mixture(grid, 1 + i % 4, &mut rng)).collect();
    Ok(states
        .par_iter()
        .map(|s| estimates::commutator_positivity(grid, s, spec))
        .collect::<Result<_, _>>()?)
}

/// Classical run for one eps: reference snapshots and the Liouville residual of every
/// in-scope probe.
pub struct ClassicalRun {
    pub eps: f64,
    pub trajectory: Result<Vec<Ensemble>, ClassicalError>,
    pub residuals: Vec<(String, Option<f64>)>,
}

pub fn run_classical(cfg: &ExperimentConfig) -> Result<Vec<ClassicalRun>, ConvergenceError> {
    cfg.validate()?;
    let dictionary = build_dictionary(cfg)?;
    let eps_list: Vec<f64> = if cfg.classical.mode == ReferenceMode::DeltaLimit { vec![cfg.eps[0]] } else { cfg.eps.clone() };
    Ok(eps_list
        .into_iter()
        .map(|eps| {
            let trajectory = classical_reference(cfg, eps);
            let residuals = match &trajectory {
                Ok(traj) => dictionary
                    .iter()
                    .map(|e| (e.probe.id.clone(), if e.in_scope { classical::liouville_residual(traj, &cfg.potential, &e.probe).ok() } else { None }))
                    .collect(),
                Err(_) => Vec::new(),
            };
            ClassicalRun { eps, trajectory, residuals }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weak_distance_basics() {
        assert_eq!(weak_distance(&[0.3, 0.1], &[0.3, 0.1], &[1.0, 2.0]), 0.0);
        assert_eq!(weak_distance(&[2.5], &[0.5], &[2.0]), 1.0);
        assert_eq!(weak_distance(&[], &[], &[]), 0.0);
    }

    #[test]
    fn rate_fit_slopes_and_exclusions() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let (f, ex) = rate_fit(&eps, &eps).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && ex.is_empty());
        let sq: Vec<f64> = eps.iter().map(|e| e * e).collect();
        assert!((rate_fit(&eps, &sq).unwrap().0.slope - 2.0).abs() < 1e-12);
        let (_, ex) = rate_fit(&eps, &[0.2, 0.1, 0.05, 1e-12]).unwrap();
        assert_eq!(ex, vec![0.025]);
        match rate_fit(&eps, &[0.2, 0.0, 1e-10, 0.1]) {
            Err(ConvergenceError::DegenerateFit { points: 2, excluded }) => assert_eq!(excluded, vec![0.1, 0.05]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
