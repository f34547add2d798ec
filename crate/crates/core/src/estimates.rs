//! A priori estimates along quantum runs: the weighted bound on `||U_s Psi||^2`,
//! mass near the singular set, propagation of tightness, kinetic bounds and the
//! sign of `Re <-Laplacian psi, U_s psi>`.

use crate::classical::Ensemble;
use crate::fit::{least_squares, loglog, LinearFit};
use crate::grid::Grid;
use crate::potential::PotentialSpec;
use crate::quantum::{self, QuantumError, WaveFunction};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("delta = {delta} is not resolved by the grid (needs delta > 2h = {limit})")]
    DeltaBelowResolution { delta: f64, limit: f64 },
    #[error("no snapshots were recorded")]
    Empty,
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

fn max_spacing(grid: &Grid) -> f64 {
    (0..grid.dim()).map(|a| grid.spacing(a)).fold(0.0, f64::max)
}

fn singular_part_on_grid(grid: &Grid, spec: &PotentialSpec) -> Result<Vec<f64>, QuantumError> {
    let mut x = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|i| {
            grid.point(i, &mut x);
            spec.eval_us(&x).map_err(QuantumError::from)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularL2 {
    pub value: f64,
    /// Same quadrature on every second grid point per axis.
    pub coarse: f64,
    /// Relative difference between the two exceeds 10%.
    pub unresolved: bool,
}

fn singular_l2_from(grid: &Grid, us: &[f64], values: &[Complex64]) -> SingularL2 {
    let hd = grid.cell_volume();
    let value: f64 = us.iter().zip(values).map(|(u, v)| u * u * v.norm_sqr()).sum::<f64>() * hd;
    let coarse = match grid.coarsened(2) {
        Some((c, map)) => map.iter().map(|&i| us[i] * us[i] * values[i].norm_sqr()).sum::<f64>() * c.cell_volume(),
        None => value,
    };
    let unresolved = value > 0.0 && ((coarse - value) / value).abs() > 0.1;
    SingularL2 { value, coarse, unresolved }
}

/// `||U_s Psi||^2` by grid quadrature, with a coarse-grid resolution indicator.
pub fn singular_l2(wf: &WaveFunction, spec: &PotentialSpec) -> Result<SingularL2, EstimateError> {
    let us = singular_part_on_grid(&wf.grid, spec)?;
    Ok(singular_l2_from(&wf.grid, &us, &wf.values))
}

/// Mass of `|Psi|^2` on `{dist(x, S) < delta}`.
pub fn mass_near_singular(wf: &WaveFunction, spec: &PotentialSpec, delta: f64) -> Result<f64, EstimateError> {
    let limit = 2.0 * max_spacing(&wf.grid);
    if delta <= limit {
        return Err(EstimateError::DeltaBelowResolution { delta, limit });
    }
    let mut x = vec![0.0; wf.dim()];
    let mut s = 0.0;
    for (i, v) in wf.values.iter().enumerate() {
        wf.grid.point(i, &mut x);
        if spec.dist_to_singular(&x) < delta {
            s += v.norm_sqr();
        }
    }
    Ok(s * wf.grid.cell_volume())
}

/// Ensemble weight on `{dist(x, S) < delta}`.
pub fn mass_near_singular_ensemble(ensemble: &Ensemble, spec: &PotentialSpec, delta: f64) -> f64 {
    ensemble
        .particles
        .iter()
        .filter(|p| spec.dist_to_singular(&p.x) < delta)
        .map(|p| p.w)
        .sum()
}

/// `C0 ||U_s Psi||^2`, an upper bound for `int |grad U_s| |Psi|^2`.
pub fn grad_l1_bound(wf: &WaveFunction, spec: &PotentialSpec) -> Result<f64, EstimateError> {
    Ok(spec.majorant_constant() * singular_l2(wf, spec)?.value)
}

/// `int |grad U_s| |Psi|^2` by quadrature, skipping nodes inside the guard radius.
pub fn grad_l1_direct(wf: &WaveFunction, spec: &PotentialSpec) -> f64 {
    let mut x = vec![0.0; wf.dim()];
    let mut s = 0.0;
    for (i, v) in wf.values.iter().enumerate() {
        wf.grid.point(i, &mut x);
        if let Ok(g) = spec.grad_us(&x) {
            s += g.iter().map(|a| a * a).sum::<f64>().sqrt() * v.norm_sqr();
        }
    }
    s * wf.grid.cell_volume()
}

/// Mass of `|Psi|^2` outside the ball of radius `R` about the origin, for each `R`.
pub fn tightness_profile(wf: &WaveFunction, radii: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; wf.dim()];
    let mut out = vec![0.0; radii.len()];
    for (i, v) in wf.values.iter().enumerate() {
        wf.grid.point(i, &mut x);
        let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let m = v.norm_sqr();
        for (o, &big_r) in out.iter_mut().zip(radii) {
            if r > big_r {
                *o += m;
            }
        }
    }
    let hd = wf.grid.cell_volume();
    out.iter().map(|s| s * hd).collect()
}

/// Radial cutoff `chi(x) = S(2|x| - 1)` with the degree-7 smoothstep
/// `S(s) = 35 s^4 - 84 s^5 + 70 s^6 - 20 s^7`: zero for `|x| <= 1/2`, one for `|x| >= 1`.
#[derive(Debug, Clone, Copy)]
pub struct Cutoff {
    pub dim: usize,
}

impl Cutoff {
    fn smoothstep(s: f64) -> (f64, f64, f64) {
        let s = s.clamp(0.0, 1.0);
        let v = s.powi(4) * (35.0 - 84.0 * s + 70.0 * s * s - 20.0 * s.powi(3));
        let d1 = 140.0 * s.powi(3) * (1.0 - s).powi(3);
        let d2 = 420.0 * s * s * (1.0 - s) * (1.0 - s) * (1.0 - 2.0 * s);
        (v, d1, d2)
    }

    pub fn value(&self, r: f64) -> f64 {
        Self::smoothstep(2.0 * r - 1.0).0
    }

    /// `sup |grad chi| = 2 max S' = 2 * 140 / 64`.
    pub fn grad_sup(&self) -> f64 {
        2.0 * 140.0 / 64.0
    }

    /// `sup |Laplacian chi| = sup |4 S''(s) + 2 (d - 1) S'(s) / r|`, sampled densely.
    pub fn laplacian_sup(&self) -> f64 {
        let n = 200_000;
        let mut best: f64 = 0.0;
        for i in 0..=n {
            let s = i as f64 / n as f64;
            let r = 0.5 * (s + 1.0);
            let (_, d1, d2) = Self::smoothstep(s);
            best = best.max((4.0 * d2 + 2.0 * (self.dim as f64 - 1.0) * d1 / r).abs());
        }
        best
    }

    /// Growth rate of `<chi_R>` allowed by the commutator bound:
    /// `(eps/2) |Lap chi|_inf / R^2 ||Psi||^2 + |grad chi|_inf / R ||eps grad Psi|| ||Psi||`.
    pub fn rate(&self, laplacian_sup: f64, radius: f64, eps: f64, grad_norm: f64, norm: f64) -> f64 {
        0.5 * eps * laplacian_sup / (radius * radius) * norm * norm + self.grad_sup() / radius * grad_norm * norm
    }
}

/// `Re <-Laplacian psi, U_s psi>` and the scale `||Laplacian psi|| ||U_s psi||`.
pub fn commutator_positivity(grid: &Grid, values: &[Complex64], spec: &PotentialSpec) -> Result<(f64, f64), EstimateError> {
    let us = singular_part_on_grid(grid, spec)?;
    let lap = quantum::laplacian(grid, values);
    let hd = grid.cell_volume();
    let mut s = 0.0;
    let mut nl = 0.0;
    let mut nu = 0.0;
    for ((l, v), u) in lap.iter().zip(values).zip(&us) {
        s += (-l.conj() * u * v).re;
        nl += l.norm_sqr();
        nu += (u * v).norm_sqr();
    }
    Ok((s * hd, (nl * hd).sqrt() * (nu * hd).sqrt()))
}

/// Superposition of `count` Gaussians with random centers inside the middle half of the
/// box, widths between 3h and L/6, random complex weights and small momenta; normalized.
pub fn random_gaussian_mixture<R: Rng>(grid: &Grid, count: usize, rng: &mut R) -> Vec<Complex64> {
    let d = grid.dim();
    let h = max_spacing(grid);
    let min_extent = grid.extent.iter().copied().fold(f64::INFINITY, f64::min);
    let terms: Vec<(Vec<f64>, f64, Vec<f64>, Complex64)> = (0..count)
        .map(|_| {
            let c = (0..d)
                .map(|a| grid.lower[a] + grid.extent[a] * rng.random_range(0.25..0.75))
                .collect();
            let lo = 3.0 * h;
            let w = rng.random_range(lo..(min_extent / 6.0).max(1.5 * lo));
            let k = (0..d).map(|_| rng.random_range(-2.0..2.0) / w).collect();
            let amp = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            (c, w, k, amp)
        })
        .collect();
    let mut x = vec![0.0; d];
    let mut values: Vec<Complex64> = (0..grid.len())
        .map(|i| {
            grid.point(i, &mut x);
            terms
                .iter()
                .map(|(c, w, k, amp)| {
                    let mut r2 = 0.0;
                    let mut ph = 0.0;
                    for a in 0..d {
                        r2 += (x[a] - c[a]).powi(2);
                        ph += k[a] * x[a];
                    }
                    amp * Complex64::from_polar((-r2 / (2.0 * w * w)).exp(), ph)
                })
                .sum()
        })
        .collect();
    let n = (values.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.cell_volume()).sqrt();
    for v in values.iter_mut() {
        *v /= n;
    }
    values
}

/// `kinetic(t) <= E(0) + sup |U_b| + 1e-6` at every sample.
pub fn kinetic_bound_check(kinetic: &[f64], initial_energy: f64, ub_sup: f64) -> bool {
    kinetic.iter().all(|k| *k <= initial_energy + ub_sup + 1e-6)
}

/// `sup |U_b|` over the grid nodes.
pub fn ub_sup_on_grid(grid: &Grid, spec: &PotentialSpec) -> f64 {
    let mut x = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|i| {
            grid.point(i, &mut x);
            spec.eval_ub(&x).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSettings {
    pub delta_ladder: Vec<f64>,
    pub radius_ladder: Vec<f64>,
    pub max_singular_ratio: f64,
    pub min_concentration_slope: f64,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        EstimateSettings {
            delta_ladder: vec![0.4, 0.2, 0.1],
            radius_ladder: Vec::new(),
            max_singular_ratio: 10.0,
            min_concentration_slope: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSample {
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
    pub kinetic: f64,
    pub h_norm: f64,
    pub singular_l2: f64,
    pub singular_l2_coarse: f64,
    pub unresolved: bool,
    pub grad_l1_bound: f64,
    pub grad_l1_direct: f64,
    /// Per entry of the resolved delta ladder.
    pub near_singular: Vec<f64>,
    /// Per entry of the radius ladder.
    pub tails: Vec<f64>,
    /// Tail at `R/2`, used at `t = 0` for the tightness bound.
    pub half_tails: Vec<f64>,
    pub tightness_bound: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub run_id: String,
    pub eps: f64,
    pub delta_ladder: Vec<f64>,
    pub excluded_deltas: Vec<f64>,
    pub radius_ladder: Vec<f64>,
    pub majorant_constant: f64,
    pub ub_sup: f64,
    pub gradient_sup: f64,
    pub cutoff_grad_sup: f64,
    pub cutoff_laplacian_sup: f64,
    pub samples: Vec<EstimateSample>,
    pub singular_ratio: Option<f64>,
    pub singular_trend: Option<LinearFit>,
    pub closest_approach: Option<usize>,
    pub concentration_fit: Option<LinearFit>,
    pub checks: Vec<Check>,
}

impl EstimateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Accumulates estimate samples snapshot by snapshot.
pub struct EstimateRecorder {
    run_id: String,
    spec: PotentialSpec,
    settings: EstimateSettings,
    grid: Grid,
    eps: f64,
    us: Vec<f64>,
    dist: Vec<f64>,
    deltas: Vec<f64>,
    excluded: Vec<f64>,
    ub_sup: f64,
    samples: Vec<EstimateSample>,
    grad_norms: Vec<f64>,
}

impl EstimateRecorder {
    pub fn new(
        run_id: impl Into<String>,
        grid: &Grid,
        eps: f64,
        spec: &PotentialSpec,
        settings: &EstimateSettings,
    ) -> Result<Self, EstimateError> {
        let us = singular_part_on_grid(grid, spec)?;
        let mut x = vec![0.0; grid.dim()];
        let dist = (0..grid.len())
            .map(|i| {
                grid.point(i, &mut x);
                spec.dist_to_singular(&x)
            })
            .collect();
        let limit = 2.0 * max_spacing(grid);
        let (deltas, excluded): (Vec<f64>, Vec<f64>) = settings.delta_ladder.iter().partition(|&&d| d > limit);
        Ok(EstimateRecorder {
            run_id: run_id.into(),
            spec: spec.clone(),
            settings: settings.clone(),
            grid: grid.clone(),
            eps,
            us,
            dist,
            deltas,
            excluded,
            ub_sup: ub_sup_on_grid(grid, spec),
            samples: Vec::new(),
            grad_norms: Vec::new(),
        })
    }

    pub fn record(&mut self, wf: &WaveFunction) -> Result<(), EstimateError> {
        let hd = self.grid.cell_volume();
        let sl2 = singular_l2_from(&self.grid, &self.us, &wf.values);
        let kinetic = quantum::kinetic_energy(wf);
        let potential = quantum::potential_energy(wf, &self.spec)?;
        let mut near = vec![0.0; self.deltas.len()];
        for (v, &r) in wf.values.iter().zip(&self.dist) {
            let m = v.norm_sqr();
            for (n, &d) in near.iter_mut().zip(&self.deltas) {
                if r < d {
                    *n += m;
                }
            }
        }
        let radii = &self.settings.radius_ladder;
        let half: Vec<f64> = radii.iter().map(|r| 0.5 * r).collect();
        let sample = EstimateSample {
            t: wf.time,
            norm: quantum::norm(wf),
            energy: kinetic + potential,
            kinetic,
            h_norm: quantum::h_norm(wf, &self.spec)?,
            singular_l2: sl2.value,
            singular_l2_coarse: sl2.coarse,
            unresolved: sl2.unresolved,
            grad_l1_bound: self.spec.majorant_constant() * sl2.value,
            grad_l1_direct: grad_l1_direct(wf, &self.spec),
            near_singular: near.iter().map(|m| m * hd).collect(),
            tails: tightness_profile(wf, radii),
            half_tails: tightness_profile(wf, &half),
            tightness_bound: Vec::new(),
        };
        self.grad_norms.push((2.0 * kinetic).sqrt());
        self.samples.push(sample);
        Ok(())
    }

    pub fn finish(mut self) -> Result<EstimateReport, EstimateError> {
        let first = self.samples.first().ok_or(EstimateError::Empty)?.clone();
        let cutoff = Cutoff { dim: self.grid.dim() };
        let k_sup = self.grad_norms.iter().copied().fold(0.0, f64::max);
        let lap_sup = cutoff.laplacian_sup();
        let norm_sup = self.samples.iter().map(|s| s.norm).fold(0.0, f64::max);
        let rates: Vec<f64> = self
            .settings
            .radius_ladder
            .iter()
            .map(|&r| cutoff.rate(lap_sup, r, self.eps, k_sup, norm_sup))
            .collect();
        for s in self.samples.iter_mut() {
            let elapsed = s.t - first.t;
            s.tightness_bound = rates.iter().zip(&first.half_tails).map(|(rate, tail0)| tail0 + elapsed * rate).collect();
        }

        let mut checks = Vec::new();
        let has_singular = self.spec.has_singular_part();
        let mut singular_ratio = None;
        let mut singular_trend = None;
        let mut closest_approach = None;
        let mut concentration_fit = None;
        if has_singular && first.singular_l2 > 0.0 {
            let sup = self.samples.iter().map(|s| s.singular_l2).fold(0.0, f64::max);
            let ratio = sup / first.singular_l2;
            singular_ratio = Some(ratio);
            checks.push(Check {
                name: "singular_bound".into(),
                value: ratio,
                threshold: self.settings.max_singular_ratio,
                passed: ratio <= self.settings.max_singular_ratio,
                detail: format!("sup_t ||U_s Psi||^2 / initial = {ratio:.4}"),
            });
            let ts: Vec<f64> = self.samples.iter().map(|s| s.t).collect();
            let vs: Vec<f64> = self.samples.iter().map(|s| s.singular_l2 / first.singular_l2).collect();
            if let Some((fit, se)) = least_squares(&ts, &vs).and_then(|f| f.slope_stderr.map(|se| (f, se))) {
                checks.push(Check {
                    name: "singular_trend".into(),
                    value: fit.slope,
                    threshold: 2.0 * se,
                    passed: fit.slope <= 2.0 * se,
                    detail: format!("slope {:.4e} +- {se:.4e} (relative units per time)", fit.slope),
                });
                singular_trend = Some(fit);
            }
            let idx = (0..self.samples.len())
                .max_by(|&a, &b| self.samples[a].singular_l2.total_cmp(&self.samples[b].singular_l2))
                .unwrap_or(0);
            closest_approach = Some(idx);
            let ladder = &self.samples[idx].near_singular;
            if self.deltas.len() >= 2 {
                let fit = loglog(&self.deltas, ladder);
                let slope = fit.map_or(0.0, |f| f.slope);
                checks.push(Check {
                    name: "no_concentration".into(),
                    value: slope,
                    threshold: self.settings.min_concentration_slope,
                    passed: fit.is_some() && slope >= self.settings.min_concentration_slope,
                    detail: format!(
                        "t = {:.4}, deltas {:?}, masses {:?}",
                        self.samples[idx].t, self.deltas, ladder
                    ),
                });
                concentration_fit = fit;
            }
            let majorant_ok = self.samples.iter().all(|s| s.grad_l1_direct <= s.grad_l1_bound * (1.0 + 1e-12));
            checks.push(Check {
                name: "gradient_majorant".into(),
                value: self.samples.iter().map(|s| s.grad_l1_direct / s.grad_l1_bound).fold(0.0, f64::max),
                threshold: 1.0,
                passed: majorant_ok,
                detail: "int |grad U_s||Psi|^2 <= C0 ||U_s Psi||^2".into(),
            });
        }

        let mut worst_margin = f64::INFINITY;
        let mut tight_ok = true;
        for s in &self.samples {
            for (tail, bound) in s.tails.iter().zip(&s.tightness_bound) {
                worst_margin = worst_margin.min(bound - tail);
                tight_ok &= tail <= bound;
            }
        }
        if !self.settings.radius_ladder.is_empty() {
            checks.push(Check {
                name: "tightness".into(),
                value: worst_margin,
                threshold: 0.0,
                passed: tight_ok,
                detail: format!("smallest bound - tail over all samples and radii, K = {k_sup:.4}"),
            });
        }

        let kin: Vec<f64> = self.samples.iter().map(|s| s.kinetic).collect();
        let kin_max = kin.iter().copied().fold(0.0, f64::max);
        let kin_limit = first.energy + self.ub_sup + 1e-6;
        checks.push(Check {
            name: "kinetic_bound".into(),
            value: kin_max,
            threshold: kin_limit,
            passed: kinetic_bound_check(&kin, first.energy, self.ub_sup),
            detail: "sup_t kinetic <= E(0) + sup |U_b| + 1e-6".into(),
        });

        let ascending = |v: &[f64]| {
            let mut order: Vec<usize> = (0..v.len()).collect();
            order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            order
        };
        let delta_order = ascending(&self.deltas);
        let radius_order = ascending(&self.settings.radius_ladder);
        let mut mono = true;
        let mut in_range = true;
        for s in &self.samples {
            let cap = s.norm * s.norm + 1e-8;
            mono &= delta_order.windows(2).all(|w| s.near_singular[w[0]] <= s.near_singular[w[1]]);
            mono &= radius_order.windows(2).all(|w| s.tails[w[0]] >= s.tails[w[1]]);
            in_range &= s.near_singular.iter().chain(&s.tails).all(|m| *m >= 0.0 && *m <= cap);
        }
        checks.push(Check {
            name: "ladder_monotone".into(),
            value: if mono && in_range { 1.0 } else { 0.0 },
            threshold: 1.0,
            passed: mono && in_range,
            detail: "near-singular mass nondecreasing in delta, tails nonincreasing in R, all in [0, 1]".into(),
        });

        Ok(EstimateReport {
            run_id: self.run_id,
            eps: self.eps,
            delta_ladder: self.deltas,
            excluded_deltas: self.excluded,
            radius_ladder: self.settings.radius_ladder.clone(),
            majorant_constant: self.spec.majorant_constant(),
            ub_sup: self.ub_sup,
            gradient_sup: k_sup,
            cutoff_grad_sup: cutoff.grad_sup(),
            cutoff_laplacian_sup: lap_sup,
            samples: self.samples,
            singular_ratio,
            singular_trend,
            closest_approach,
            concentration_fit,
            checks,
        })
    }
}
