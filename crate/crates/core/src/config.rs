//! Experiment configuration: one JSON document drives quantum runs, classical
//! runs, estimate checks and ε-sweeps.

use crate::classical::{ApproachPolicy, SamplingMode, StepOptions, DEFAULT_ETA};
use crate::estimates::EstimateSettings;
use crate::grid::Grid;
use crate::potential::PotentialSpec;
use crate::probe::TestFunction;
use crate::quantum::PacketSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("config error at `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { key: key.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridRule {
    /// Smallest power of two (at least `min_points`) with `h <= eps pi / (3 p_max)`.
    Auto { min_points: usize },
    Fixed { points: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub lower: Vec<f64>,
    pub extent: Vec<f64>,
    #[serde(default = "half")]
    pub stagger: f64,
    pub rule: GridRule,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryConfig {
    #[serde(default = "three")]
    pub lattice_per_axis: usize,
    #[serde(default)]
    pub trajectory_probes: usize,
    /// Probe widths are the packet's Wigner spread at the largest eps times this factor.
    #[serde(default = "one")]
    pub width_scale: f64,
    /// Probes centered within this many x-widths of a singular or non-smooth point are
    /// reported but excluded from the weak distance.
    #[serde(default = "three_f")]
    pub exclusion_sigmas: f64,
    #[serde(default)]
    pub extra_probes: Vec<TestFunction>,
    /// Also evaluate `<g_eps, phi>` for every in-scope probe and snapshot.
    #[serde(default)]
    pub remainders: bool,
}

fn three() -> usize {
    3
}

fn three_f() -> f64 {
    3.0
}

fn one() -> f64 {
    1.0
}

/// Classical reference measure; the eps-dependent modes use each sweep cell's eps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceMode {
    DeltaLimit,
    Husimi { n: usize },
    Wigner { nodes: usize },
}

impl ReferenceMode {
    pub fn sampling(&self, eps: f64) -> (SamplingMode, usize) {
        match *self {
            ReferenceMode::DeltaLimit => (SamplingMode::DeltaLimit, 1),
            ReferenceMode::Husimi { n } => (SamplingMode::HusimiAtEps { eps }, n),
            ReferenceMode::Wigner { nodes } => (SamplingMode::WignerAtEps { eps, nodes }, 0),
        }
    }

    pub fn depends_on_eps(&self) -> bool {
        !matches!(self, ReferenceMode::DeltaLimit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalConfig {
    pub mode: ReferenceMode,
    #[serde(default)]
    pub seed: u64,
    pub dt: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub policy: ApproachPolicy,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

impl ClassicalConfig {
    pub fn step_options(&self) -> StepOptions {
        StepOptions { eta: self.eta, policy: self.policy }
    }
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        ClassicalConfig { mode: ReferenceMode::DeltaLimit, seed: 0, dt: 1e-3, eta: DEFAULT_ETA, policy: ApproachPolicy::Abort }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatesConfig {
    #[serde(default)]
    pub delta_ladder: Vec<f64>,
    #[serde(default)]
    pub radius_ladder: Vec<f64>,
    #[serde(default = "ten")]
    pub max_singular_ratio: f64,
    #[serde(default = "one_half")]
    pub min_concentration_slope: f64,
    /// Random test states for the commutator sign check.
    #[serde(default)]
    pub commutator_states: usize,
    #[serde(default)]
    pub commutator_seed: u64,
}

fn ten() -> f64 {
    10.0
}

fn one_half() -> f64 {
    1.5
}

impl Default for EstimatesConfig {
    fn default() -> Self {
        EstimatesConfig {
            delta_ladder: Vec::new(),
            radius_ladder: Vec::new(),
            max_singular_ratio: 10.0,
            min_concentration_slope: 1.5,
            commutator_states: 0,
            commutator_seed: 0,
        }
    }
}

impl EstimatesConfig {
    pub fn settings(&self) -> EstimateSettings {
        EstimateSettings {
            delta_ladder: self.delta_ladder.clone(),
            radius_ladder: self.radius_ladder.clone(),
            max_singular_ratio: self.max_singular_ratio,
            min_concentration_slope: self.min_concentration_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Largest mass allowed in the outer 5% of the box per side.
    #[serde(default = "boundary_default")]
    pub boundary_mass: f64,
    /// Relative energy drift allowed over the run.
    #[serde(default)]
    pub energy_drift: Option<f64>,
    /// Upper bound on the weak distance at every eps and snapshot.
    #[serde(default)]
    pub max_weak_distance: Option<f64>,
    /// Require the final-time weak distance to decrease strictly with eps.
    #[serde(default)]
    pub decreasing_distance: bool,
    /// Minimum decrease factor of `|<g, phi>|` per eps halving.
    #[serde(default)]
    pub remainder_factor: Option<f64>,
    /// Remainders below this are noise and skipped by the factor check.
    #[serde(default = "remainder_floor_default")]
    pub remainder_floor: f64,
}

fn boundary_default() -> f64 {
    1e-6
}

fn remainder_floor_default() -> f64 {
    1e-12
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            boundary_mass: boundary_default(),
            energy_drift: None,
            max_weak_distance: None,
            decreasing_distance: false,
            remainder_factor: None,
            remainder_floor: remainder_floor_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub potential: PotentialSpec,
    pub packet: PacketSpec,
    pub eps: Vec<f64>,
    pub final_time: f64,
    pub snapshot_count: usize,
    #[serde(default = "dt_default")]
    pub dt_coefficient: f64,
    pub grid: GridConfig,
    #[serde(default)]
    pub dictionary: Option<DictionaryConfig>,
    #[serde(default)]
    pub classical: ClassicalConfig,
    #[serde(default)]
    pub estimates: EstimatesConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn dt_default() -> f64 {
    crate::quantum::DEFAULT_DT_COEFFICIENT
}

const REQUIRED: [&str; 7] = ["name", "potential", "packet", "eps", "final_time", "snapshot_count", "grid"];

/// Resolved per-eps discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPlan {
    pub eps: f64,
    pub points: Vec<usize>,
    pub spacing: Vec<f64>,
    pub dt: f64,
    pub steps_per_snapshot: usize,
    pub total_steps: usize,
    /// Bytes for one complex field on the grid.
    pub field_bytes: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| ConfigError::new("<document>", "expected a JSON object"))?;
        for key in REQUIRED {
            if !obj.contains_key(key) {
                return Err(ConfigError::new(key, "missing required key"));
            }
        }
        for (key, v) in obj {
            if let Err(e) = check_section(key, v) {
                return Err(ConfigError::new(key.clone(), e));
            }
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical (sorted-key) JSON encoding.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.dim();
        self.potential.validate().map_err(|e| ConfigError::new("potential", e.to_string()))?;
        self.packet.validate().map_err(|e| ConfigError::new("packet", e.to_string()))?;
        if self.packet.dim() != d {
            return Err(ConfigError::new("packet", format!("dimension {} differs from potential dimension {d}", self.packet.dim())));
        }
        if self.eps.is_empty() {
            return Err(ConfigError::new("eps", "list is empty"));
        }
        if self.eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(ConfigError::new("eps", "values must lie in (0, 1]"));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ConfigError::new("eps", "values must be strictly decreasing"));
        }
        if !(self.final_time > 0.0) || !self.final_time.is_finite() {
            return Err(ConfigError::new("final_time", "must be positive"));
        }
        if self.snapshot_count < 2 {
            return Err(ConfigError::new("snapshot_count", "needs at least 2 snapshots"));
        }
        if !(self.dt_coefficient > 0.0) {
            return Err(ConfigError::new("dt_coefficient", "must be positive"));
        }
        let g = &self.grid;
        if g.lower.len() != d || g.extent.len() != d {
            return Err(ConfigError::new("grid", format!("lower and extent need {d} entries")));
        }
        if g.extent.iter().any(|e| !(*e > 0.0)) {
            return Err(ConfigError::new("grid.extent", "must be positive"));
        }
        match &g.rule {
            GridRule::Auto { min_points } if !min_points.is_power_of_two() => {
                return Err(ConfigError::new("grid.rule.min_points", "must be a power of two"))
            }
            GridRule::Fixed { points } if points.len() != d || points.iter().any(|n| *n < 2 || !n.is_power_of_two()) => {
                return Err(ConfigError::new("grid.rule.points", format!("need {d} powers of two")))
            }
            _ => {}
        }
        if let Some(dict) = &self.dictionary {
            for p in &dict.extra_probes {
                p.validate().map_err(|e| ConfigError::new("dictionary.extra_probes", e))?;
                if p.dim() != d {
                    return Err(ConfigError::new("dictionary.extra_probes", format!("probe `{}` has wrong dimension", p.id)));
                }
            }
            if !(dict.width_scale > 0.0) {
                return Err(ConfigError::new("dictionary.width_scale", "must be positive"));
            }
            let lattice = if dict.lattice_per_axis == 0 { 0 } else { dict.lattice_per_axis.pow(2 * d as u32) };
            if lattice + dict.trajectory_probes + dict.extra_probes.len() == 0 {
                return Err(ConfigError::new("dictionary", "dictionary is empty"));
            }
        }
        match self.classical.mode {
            ReferenceMode::Husimi { n: 0 } => return Err(ConfigError::new("classical.mode.n", "must be positive")),
            ReferenceMode::Wigner { nodes: 0 } => return Err(ConfigError::new("classical.mode.nodes", "must be positive")),
            _ => {}
        }
        if !(self.classical.dt > 0.0) {
            return Err(ConfigError::new("classical.dt", "must be positive"));
        }
        if !(self.classical.eta > 0.0) {
            return Err(ConfigError::new("classical.eta", "must be positive"));
        }
        if self.estimates.delta_ladder.iter().chain(&self.estimates.radius_ladder).any(|v| !(*v > 0.0)) {
            return Err(ConfigError::new("estimates", "ladder entries must be positive"));
        }
        for &r in &self.estimates.radius_ladder {
            let half_box = g.extent.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
            if r > half_box {
                return Err(ConfigError::new("estimates.radius_ladder", format!("radius {r} exceeds the half box {half_box}")));
            }
        }
        Ok(())
    }

    /// Snapshot times `k T / (S - 1)`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let s = self.snapshot_count - 1;
        (0..=s).map(|k| self.final_time * k as f64 / s as f64).collect()
    }

    /// Resolves the grid and time step for one eps; `p_max` is the largest momentum to resolve.
    pub fn plan(&self, eps: f64, p_max: f64) -> Result<CellPlan, ConfigError> {
        let d = self.dim();
        let points = match &self.grid.rule {
            GridRule::Fixed { points } => points.clone(),
            GridRule::Auto { min_points } => (0..d)
                .map(|a| {
                    let h_max = eps * PI / (3.0 * p_max);
                    let mut n = (*min_points).max(2);
                    while self.grid.extent[a] / n as f64 > h_max {
                        n *= 2;
                        if n > 1 << 24 {
                            return Err(ConfigError::new("grid.rule", "resolution exceeds 2^24 points per axis"));
                        }
                    }
                    Ok(n)
                })
                .collect::<Result<_, _>>()?,
        };
        let spacing: Vec<f64> = (0..d).map(|a| self.grid.extent[a] / points[a] as f64).collect();
        let intervals = self.snapshot_count - 1;
        let interval = self.final_time / intervals as f64;
        let steps_per_snapshot = (interval / (self.dt_coefficient * eps)).ceil().max(1.0) as usize;
        let total_steps = steps_per_snapshot * intervals;
        let dt = self.final_time / total_steps as f64;
        let field_bytes = points.iter().product::<usize>() * 16;
        Ok(CellPlan { eps, points, spacing, dt, steps_per_snapshot, total_steps, field_bytes })
    }

    pub fn grid_for(&self, plan: &CellPlan) -> Result<Grid, ConfigError> {
        let d = self.dim();
        Grid::new(self.grid.lower.clone(), self.grid.extent.clone(), plan.points.clone(), vec![self.grid.stagger; d])
            .map_err(|e| ConfigError::new("grid", e.to_string()))
    }

    /// Largest momentum the packet carries at `eps`: `|p0| + 3 sigma_p` over axes.
    pub fn packet_p_max(&self, eps: f64) -> f64 {
        let (_, sp) = self.packet.wigner_sigmas(eps);
        (0..self.dim()).map(|a| self.packet.p0[a].abs() + 3.0 * sp[a]).fold(0.0, f64::max)
    }
}

/// Shallow type checks so errors name the offending top-level key.
fn check_section(key: &str, v: &Value) -> Result<(), String> {
    let bad = |what: &str| Err(format!("expected {what}"));
    match key {
        "name" if !v.is_string() => bad("a string"),
        "eps" if !v.is_array() => bad("an array of numbers"),
        "final_time" | "dt_coefficient" if !v.is_number() => bad("a number"),
        "snapshot_count" if !v.is_u64() => bad("a nonnegative integer"),
        "potential" | "packet" | "grid" | "classical" | "estimates" | "thresholds" if !v.is_object() => bad("an object"),
        "dictionary" if !(v.is_object() || v.is_null()) => bad("an object"),
        _ => {
            let single: Result<(), serde_json::Error> = match key {
                "potential" => serde_json::from_value::<PotentialSpec>(v.clone()).map(|_| ()),
                "packet" => serde_json::from_value::<PacketSpec>(v.clone()).map(|_| ()),
                "eps" => serde_json::from_value::<Vec<f64>>(v.clone()).map(|_| ()),
                "grid" => serde_json::from_value::<GridConfig>(v.clone()).map(|_| ()),
                "dictionary" => serde_json::from_value::<Option<DictionaryConfig>>(v.clone()).map(|_| ()),
                "classical" => serde_json::from_value::<ClassicalConfig>(v.clone()).map(|_| ()),
                "estimates" => serde_json::from_value::<EstimatesConfig>(v.clone()).map(|_| ()),
                "thresholds" => serde_json::from_value::<Thresholds>(v.clone()).map(|_| ()),
                _ => Ok(()),
            };
            single.map_err(|e| e.to_string())
        }
    }
}
