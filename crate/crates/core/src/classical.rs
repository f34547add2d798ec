//! Classical limit dynamics `x' = p, p' = -grad U(x)` on weighted particle ensembles.
//!
//! Particles advance by velocity Verlet with an adaptive substep that shrinks near
//! the Coulomb singular set. A particle that enters the guard radius either aborts
//! the run or is frozen and flagged, depending on [`ApproachPolicy`].

use crate::potential::{PotentialError, PotentialSpec};
use crate::probe::{Probe, TestFunction};
use crate::quadrature::gauss_hermite;
use crate::quantum::PacketSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ETA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassicalError {
    #[error("particle {particle} reached distance {distance:e} from the singular set at t = {time}")]
    SingularApproach { particle: usize, time: f64, distance: f64 },
    #[error("support of probe `{id}` reaches within {distance:.3e} of a singular or non-smooth point")]
    SupportViolation { id: String, distance: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub w: f64,
    /// Set when the particle was frozen at the guard radius.
    #[serde(default)]
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    pub time: f64,
}

impl Ensemble {
    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.w).sum()
    }

    /// Weight carried by particles frozen at the guard radius.
    pub fn stopped_weight(&self) -> f64 {
        self.particles.iter().filter(|p| p.stopped).fold(0.0, |s, p| s + p.w)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingMode {
    /// One particle at `(x0, p0)`, the limit measure of the packet family.
    DeltaLimit,
    /// Gaussian cloud with the covariance of the packet's Husimi function at `eps`.
    HusimiAtEps { eps: f64 },
    /// Tensor Gauss–Hermite rule for the packet's Wigner function at `eps`,
    /// `nodes` points per phase-space axis.
    WignerAtEps { eps: f64, nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproachPolicy {
    #[default]
    Abort,
    /// Freeze and flag the particle, keep integrating the others.
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    pub eta: f64,
    pub policy: ApproachPolicy,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { eta: DEFAULT_ETA, policy: ApproachPolicy::Abort }
    }
}

pub fn sample_initial(packet: &PacketSpec, mode: SamplingMode, n: usize, seed: u64) -> Result<Ensemble, ClassicalError> {
    packet.validate().map_err(|e| ClassicalError::Invalid(e.to_string()))?;
    let d = packet.dim();
    let particles = match mode {
        SamplingMode::DeltaLimit => vec![Particle { x: packet.x0.clone(), p: packet.p0.clone(), w: 1.0, stopped: false }],
        SamplingMode::HusimiAtEps { eps } => {
            if n == 0 {
                return Err(ClassicalError::Invalid("sample count must be positive".into()));
            }
            let (sx, sp) = packet.wigner_sigmas(eps);
            let std_x: Vec<f64> = sx.iter().map(|s| (s * s + eps / 2.0).sqrt()).collect();
            let std_p: Vec<f64> = sp.iter().map(|s| (s * s + eps / 2.0).sqrt()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let w = 1.0 / n as f64;
            (0..n)
                .map(|_| {
                    let x = (0..d).map(|a| packet.x0[a] + std_x[a] * normal.sample(&mut rng)).collect();
                    let p = (0..d).map(|a| packet.p0[a] + std_p[a] * normal.sample(&mut rng)).collect();
                    Particle { x, p, w, stopped: false }
                })
                .collect()
        }
        SamplingMode::WignerAtEps { eps, nodes } => {
            if nodes == 0 {
                return Err(ClassicalError::Invalid("node count must be positive".into()));
            }
            let (sx, sp) = packet.wigner_sigmas(eps);
            let (z, wz) = gauss_hermite(nodes);
            let total = nodes.pow(2 * d as u32);
            let mut out = Vec::with_capacity(total);
            for flat in 0..total {
                let mut rem = flat;
                let mut c = vec![0usize; 2 * d];
                for k in (0..2 * d).rev() {
                    c[k] = rem % nodes;
                    rem /= nodes;
                }
                let x = (0..d).map(|a| packet.x0[a] + sx[a] * z[c[a]]).collect();
                let p = (0..d).map(|a| packet.p0[a] + sp[a] * z[c[d + a]]).collect();
                let w = c.iter().map(|&i| wz[i]).product();
                out.push(Particle { x, p, w, stopped: false });
            }
            let s: f64 = out.iter().map(|p| p.w).sum();
            for p in out.iter_mut() {
                p.w /= s;
            }
            out
        }
    };
    Ok(Ensemble { particles, time: 0.0 })
}

/// `|p|^2 / 2 + U(x)`.
pub fn particle_energy(spec: &PotentialSpec, particle: &Particle) -> Result<f64, PotentialError> {
    Ok(0.5 * particle.p.iter().map(|v| v * v).sum::<f64>() + spec.eval(&particle.x)?)
}

fn approach(spec: &PotentialSpec, x: &[f64], index: usize, time: f64) -> ClassicalError {
    ClassicalError::SingularApproach { particle: index, time, distance: spec.dist_to_irregular(x) }
}

/// Advances one particle by `dt` (which may be negative) with adaptive Verlet substeps.
fn advance_particle(
    spec: &PotentialSpec,
    particle: &mut Particle,
    dt: f64,
    opts: &StepOptions,
    index: usize,
    t0: f64,
) -> Result<(), ClassicalError> {
    if particle.stopped || dt == 0.0 {
        return Ok(());
    }
    let c_max = spec.max_coupling();
    let dir = dt.signum();
    let mut remaining = dt.abs();
    let mut elapsed = 0.0;
    let d = particle.x.len();
    let mut grad = spec.gradient(&particle.x).map_err(|_| approach(spec, &particle.x, index, t0))?;
    while remaining > 0.0 {
        let r = spec.dist_to_singular(&particle.x);
        let speed = particle.p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut h = remaining;
        if r.is_finite() {
            if speed > 0.0 {
                h = h.min(opts.eta * r / speed);
            }
            if c_max > 0.0 {
                h = h.min(opts.eta * (r * r * r / c_max).sqrt());
            }
        }
        // finishing within one ulp-scale sliver would loop forever
        if remaining - h < 1e-12 * dt.abs() {
            h = remaining;
        }
        if h <= 1e-15 * dt.abs().max(1.0) {
            return Err(approach(spec, &particle.x, index, t0 + dir * elapsed));
        }
        let s = dir * h;
        for a in 0..d {
            particle.p[a] -= 0.5 * s * grad[a];
            particle.x[a] += s * particle.p[a];
        }
        grad = match spec.gradient(&particle.x) {
            Ok(g) => g,
            Err(_) => return Err(approach(spec, &particle.x, index, t0 + dir * (elapsed + h))),
        };
        for a in 0..d {
            particle.p[a] -= 0.5 * s * grad[a];
        }
        remaining -= h;
        elapsed += h;
    }
    Ok(())
}

/// One step of size `dt` for every particle.
pub fn step(ensemble: &Ensemble, spec: &PotentialSpec, dt: f64, opts: &StepOptions) -> Result<Ensemble, ClassicalError> {
    let t0 = ensemble.time;
    let results: Vec<(Particle, Option<ClassicalError>)> = ensemble
        .particles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut q = p.clone();
            match advance_particle(spec, &mut q, dt, opts, i, t0) {
                Ok(()) => (q, None),
                Err(e) => (p.clone(), Some(e)),
            }
        })
        .collect();
    let mut particles = Vec::with_capacity(results.len());
    for (p, err) in results {
        match (err, opts.policy) {
            (Some(e), ApproachPolicy::Abort) => return Err(e),
            (Some(ClassicalError::SingularApproach { .. }), ApproachPolicy::Record) => {
                particles.push(Particle { stopped: true, ..p })
            }
            (Some(e), _) => return Err(e),
            (None, _) => particles.push(p),
        }
    }
    Ok(Ensemble { particles, time: t0 + dt })
}

/// Evolves to `time + t` with steps of size at most `|dt|`; `t` may be negative.
pub fn push_forward(
    ensemble: &Ensemble,
    spec: &PotentialSpec,
    t: f64,
    dt: f64,
    opts: &StepOptions,
) -> Result<Ensemble, ClassicalError> {
    if t == 0.0 {
        return Ok(ensemble.clone());
    }
    let nsteps = (t.abs() / dt.abs()).ceil().max(1.0) as usize;
    let h = t / nsteps as f64;
    let mut e = ensemble.clone();
    for _ in 0..nsteps {
        e = step(&e, spec, h, opts)?;
    }
    e.time = ensemble.time + t;
    Ok(e)
}

/// Snapshots at `count` equally spaced times in `[time, time + t]`, with `substeps`
/// integrator steps between consecutive snapshots.
pub fn trajectory(
    ensemble: &Ensemble,
    spec: &PotentialSpec,
    t: f64,
    count: usize,
    substeps: usize,
    opts: &StepOptions,
) -> Result<Vec<Ensemble>, ClassicalError> {
    if count < 2 || substeps == 0 {
        return Err(ClassicalError::Invalid("trajectory needs >= 2 snapshots and >= 1 substep".into()));
    }
    let h = t / ((count - 1) * substeps) as f64;
    let mut out = Vec::with_capacity(count);
    let mut e = ensemble.clone();
    out.push(e.clone());
    for k in 1..count {
        for _ in 0..substeps {
            e = step(&e, spec, h, opts)?;
        }
        e.time = ensemble.time + t * k as f64 / (count - 1) as f64;
        out.push(e.clone());
    }
    Ok(out)
}

/// `sum_i w_i probe(x_i, p_i)` over particles that were not frozen.
pub fn measure_pair(ensemble: &Ensemble, probe: &dyn Probe) -> f64 {
    ensemble
        .particles
        .iter()
        .filter(|p| !p.stopped)
        .map(|p| p.w * probe.value(&p.x, &p.p))
        .sum()
}

/// `|int sum_i w_i (d/dt + p.grad_x - grad U.grad_p) phi dt|` by the trapezoid rule over snapshots.
pub fn liouville_residual(
    trajectory: &[Ensemble],
    spec: &PotentialSpec,
    phi: &TestFunction,
) -> Result<f64, ClassicalError> {
    let distance = spec.dist_to_irregular(&phi.x0);
    if distance <= phi.support_radius() * spec.layout.separation_lipschitz() {
        return Err(ClassicalError::SupportViolation { id: phi.id.clone(), distance });
    }
    if phi.amplitude == 0.0 {
        return Ok(0.0);
    }
    let integrand = |e: &Ensemble| -> f64 {
        let b = phi.time_factor(e.time);
        let db = phi.time_derivative(e.time);
        e.particles
            .iter()
            .filter(|p| !p.stopped)
            .map(|q| {
                let v = phi.value(&q.x, &q.p);
                if v == 0.0 {
                    return 0.0;
                }
                let gx = phi.grad_x(&q.x, &q.p);
                let gp = phi.grad_p(&q.x, &q.p);
                let transport: f64 = gx.iter().zip(&q.p).map(|(g, p)| g * p).sum();
                let force: f64 = match spec.gradient(&q.x) {
                    Ok(du) => du.iter().zip(&gp).map(|(a, b)| a * b).sum(),
                    // only reachable far out in the Gaussian tail
                    Err(_) => 0.0,
                };
                q.w * (db * v + b * (transport - force))
            })
            .sum()
    };
    let values: Vec<f64> = trajectory.iter().map(integrand).collect();
    let mut s = 0.0;
    for k in 1..trajectory.len() {
        s += 0.5 * (trajectory[k].time - trajectory[k - 1].time) * (values[k] + values[k - 1]);
    }
    Ok(s.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{PairInteraction, SmoothSurface};
    use crate::probe::TimeWindow;
    use std::f64::consts::PI;

    fn harmonic() -> PotentialSpec {
        PotentialSpec::flat(1, SmoothSurface::Harmonic { stiffness: vec![1.0] })
    }

    fn single(x: f64, p: f64) -> Ensemble {
        Ensemble { particles: vec![Particle { x: vec![x], p: vec![p], w: 1.0, stopped: false }], time: 0.0 }
    }

    #[test]
    fn delta_limit_sample() {
        let e = sample_initial(&PacketSpec::coherent(vec![0.0], vec![1.0]), SamplingMode::DeltaLimit, 7, 1).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.particles[0].x, vec![0.0]);
        assert_eq!(e.particles[0].p, vec![1.0]);
        assert_eq!(e.total_weight(), 1.0);
    }

    #[test]
    fn husimi_cloud_statistics() {
        let packet = PacketSpec::coherent(vec![0.0], vec![1.0]);
        let n = 10_000;
        let e = sample_initial(&packet, SamplingMode::HusimiAtEps { eps: 0.1 }, n, 42).unwrap();
        let mean: f64 = e.particles.iter().map(|p| p.x[0]).sum::<f64>() / n as f64;
        let sigma = (0.05f64 + 0.05).sqrt();
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt());
        assert!((e.total_weight() - 1.0).abs() < 1e-12);
        let again = sample_initial(&packet, SamplingMode::HusimiAtEps { eps: 0.1 }, n, 42).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn wigner_nodes_reproduce_covariance() {
        let packet = PacketSpec { x0: vec![0.5], p0: vec![-1.0], alpha: 0.5, widths: vec![1.3] };
        let e = sample_initial(&packet, SamplingMode::WignerAtEps { eps: 0.1, nodes: 4 }, 0, 0).unwrap();
        let (sx, sp) = packet.wigner_sigmas(0.1);
        let vx: f64 = e.particles.iter().map(|q| q.w * (q.x[0] - 0.5).powi(2)).sum();
        let vp: f64 = e.particles.iter().map(|q| q.w * (q.p[0] + 1.0).powi(2)).sum();
        assert!((vx - sx[0] * sx[0]).abs() < 1e-14);
        assert!((vp - sp[0] * sp[0]).abs() < 1e-14);
        assert!((e.total_weight() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn harmonic_quarter_period() {
        let out = push_forward(&single(0.0, 1.0), &harmonic(), PI / 2.0, 1e-4, &StepOptions::default()).unwrap();
        let q = &out.particles[0];
        assert!((q.x[0] - 1.0).abs() < 1e-7, "x = {}", q.x[0]);
        assert!(q.p[0].abs() < 1e-7, "p = {}", q.p[0]);
    }

    #[test]
    fn free_flight_is_exact() {
        let free = PotentialSpec::flat(2, SmoothSurface::Zero);
        let e = Ensemble {
            particles: vec![Particle { x: vec![0.25, -1.0], p: vec![0.5, 2.0], w: 1.0, stopped: false }],
            time: 0.0,
        };
        let out = push_forward(&e, &free, 1.0, 0.125, &StepOptions::default()).unwrap();
        assert_eq!(out.particles[0].x, vec![0.75, 1.0]);
    }

    #[test]
    fn push_forward_zero_time_is_identity_and_reversible() {
        let q = PotentialSpec::flat(1, SmoothSurface::Quartic { a: 0.25 });
        let e = sample_initial(&PacketSpec::coherent(vec![0.0], vec![1.0]), SamplingMode::HusimiAtEps { eps: 0.1 }, 50, 3)
            .unwrap();
        assert_eq!(push_forward(&e, &q, 0.0, 0.01, &StepOptions::default()).unwrap(), e);
        let fwd = push_forward(&e, &q, 1.0, 1e-3, &StepOptions::default()).unwrap();
        let back = push_forward(&fwd, &q, -1.0, 1e-3, &StepOptions::default()).unwrap();
        for (a, b) in e.particles.iter().zip(&back.particles) {
            assert!((a.x[0] - b.x[0]).abs() < 1e-6 && (a.p[0] - b.p[0]).abs() < 1e-6);
        }
        assert_eq!(fwd.total_weight(), e.total_weight());
    }

    #[test]
    fn coulomb_turning_radius() {
        let c = 1.0;
        let spec = PotentialSpec::nuclear(2, SmoothSurface::Zero, vec![PairInteraction { alpha: 0, beta: 1, c }]);
        let p = 1.0;
        let e0 = Ensemble {
            particles: vec![Particle {
                x: vec![0.0, 0.0, -1.0, 0.0, 0.0, 1.0],
                p: vec![0.0, 0.0, p, 0.0, 0.0, -p],
                w: 1.0,
                stopped: false,
            }],
            time: 0.0,
        };
        let energy = particle_energy(&spec, &e0.particles[0]).unwrap();
        let r_star = c / energy;
        let opts = StepOptions::default();
        let mut e = e0.clone();
        let mut r_min = f64::INFINITY;
        for _ in 0..25_000 {
            e = step(&e, &spec, 1e-4, &opts).unwrap();
            r_min = r_min.min(spec.dist_to_singular(&e.particles[0].x));
        }
        assert!(((r_min - r_star) / r_star).abs() < 1e-6, "r_min = {r_min}, r* = {r_star}");
        let drift = (particle_energy(&spec, &e.particles[0]).unwrap() - energy) / energy;
        assert!(drift.abs() < 1e-6);
    }

    #[test]
    fn singular_approach_abort_and_record() {
        let spec = PotentialSpec::flat(1, SmoothSurface::CrossingCone { slope: 1.0 });
        // starts exactly at the apex
        let e = single(0.0, 0.0);
        assert!(matches!(
            step(&e, &spec, 0.01, &StepOptions::default()),
            Err(ClassicalError::SingularApproach { .. })
        ));
        let opts = StepOptions { policy: ApproachPolicy::Record, ..StepOptions::default() };
        let out = step(&e, &spec, 0.01, &opts).unwrap();
        assert!(out.particles[0].stopped);
        assert_eq!(out.stopped_weight(), 1.0);
    }

    #[test]
    fn liouville_residual_cases() {
        let ho = harmonic();
        let phi = TestFunction::new("a", vec![0.5], vec![0.5], vec![0.5], vec![0.5])
            .with_window(TimeWindow { t0: 0.1, t1: 0.9 });
        let traj = trajectory(&single(0.0, 1.0), &ho, 1.0, 1001, 1, &StepOptions::default()).unwrap();
        assert!(liouville_residual(&traj, &ho, &phi).unwrap() < 1e-4);
        let zero = phi.clone().with_amplitude(0.0);
        assert_eq!(liouville_residual(&traj, &ho, &zero).unwrap(), 0.0);
        let rest = trajectory(&single(0.0, 0.0), &ho, 1.0, 101, 1, &StepOptions::default()).unwrap();
        let still = TestFunction::new("s", vec![0.2], vec![0.1], vec![0.5], vec![0.5]);
        assert!(liouville_residual(&rest, &ho, &still).unwrap() < 1e-10);
    }

    #[test]
    fn liouville_support_violation() {
        let cone = PotentialSpec::flat(1, SmoothSurface::CrossingCone { slope: 1.0 });
        let traj = vec![single(1.0, 0.0), Ensemble { time: 0.1, ..single(1.0, 0.0) }];
        let phi = TestFunction::new("near", vec![0.3], vec![0.0], vec![0.2], vec![0.2]);
        assert!(matches!(
            liouville_residual(&traj, &cone, &phi),
            Err(ClassicalError::SupportViolation { .. })
        ));
    }

    #[test]
    fn ring_area_is_conserved() {
        let n = 400;
        let ring: Vec<Particle> = (0..n)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / n as f64;
                Particle { x: vec![1.0 + 0.3 * th.cos()], p: vec![0.3 * th.sin()], w: 1.0 / n as f64, stopped: false }
            })
            .collect();
        let area = |e: &Ensemble| {
            let ps = &e.particles;
            let mut s = 0.0;
            for i in 0..ps.len() {
                let j = (i + 1) % ps.len();
                s += ps[i].x[0] * ps[j].p[0] - ps[j].x[0] * ps[i].p[0];
            }
            0.5 * s.abs()
        };
        let e0 = Ensemble { particles: ring, time: 0.0 };
        let q = PotentialSpec::flat(1, SmoothSurface::Harmonic { stiffness: vec![1.0] });
        let e1 = push_forward(&e0, &q, 2.0 * PI, 1e-3, &StepOptions::default()).unwrap();
        assert!(((area(&e1) - area(&e0)) / area(&e0)).abs() < 1e-4);
    }
}
