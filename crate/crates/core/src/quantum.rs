//! Semiclassical Schrödinger propagation `i eps dPsi/dt = (-eps^2/2 Laplacian + U) Psi`
//! on a periodic grid, wave-packet initial data and conserved quantities.

use crate::fft::FftNd;
use crate::grid::{Grid, GridError};
use crate::potential::{PotentialError, PotentialSpec};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Default ratio `dt / eps` accepted by [`Propagator::new`].
pub const DEFAULT_DT_COEFFICIENT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantumError {
    #[error("grid too coarse on axis {axis}: h = {h:e} exceeds {limit:e}")]
    GridTooCoarse { axis: usize, h: f64, limit: f64 },
    #[error("packet clipped on axis {axis}: margin {margin:.4} is below {required:.4}")]
    PacketClipped { axis: usize, margin: f64, required: f64 },
    #[error("time step {dt:e} exceeds {limit:e}")]
    TimestepTooLarge { dt: f64, limit: f64 },
    #[error("grid point {index} lies within the guard radius of the singular set")]
    SingularGridPoint { index: usize },
    #[error("mass {mass:e} reached the boundary layer on axis {axis} at t = {time}")]
    BoundaryContamination { axis: usize, mass: f64, time: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid packet: {0}")]
    InvalidPacket(String),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Semiclassical wave packet
/// `eps^{-alpha d/2} exp(i p0.x/eps) phi((x - x0)/eps^alpha)` with a diagonal
/// Gaussian envelope `phi` of widths `widths` (unit width when empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketSpec {
    pub x0: Vec<f64>,
    pub p0: Vec<f64>,
    pub alpha: f64,
    #[serde(default)]
    pub widths: Vec<f64>,
}

impl PacketSpec {
    /// Minimum-uncertainty packet (`alpha = 1/2`, unit envelope).
    pub fn coherent(x0: Vec<f64>, p0: Vec<f64>) -> Self {
        PacketSpec { x0, p0, alpha: 0.5, widths: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        match self.widths.len() {
            0 => 1.0,
            1 => self.widths[0],
            _ => self.widths[axis],
        }
    }

    pub fn validate(&self) -> Result<(), QuantumError> {
        if self.x0.is_empty() || self.x0.len() != self.p0.len() {
            return Err(QuantumError::InvalidPacket("x0 and p0 must have the same nonzero length".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(QuantumError::InvalidPacket(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if !(self.widths.is_empty() || self.widths.len() == 1 || self.widths.len() == self.dim()) {
            return Err(QuantumError::InvalidPacket("widths must have 0, 1 or d entries".into()));
        }
        if self.widths.iter().any(|w| !(*w > 0.0)) {
            return Err(QuantumError::InvalidPacket("widths must be positive".into()));
        }
        Ok(())
    }

    /// Standard deviations of the packet's Wigner function in `x` and in `p`.
    pub fn wigner_sigmas(&self, eps: f64) -> (Vec<f64>, Vec<f64>) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let sx = (0..self.dim()).map(|a| eps.powf(self.alpha) * self.width(a) * s).collect();
        let sp = (0..self.dim()).map(|a| eps.powf(1.0 - self.alpha) / self.width(a) * s).collect();
        (sx, sp)
    }

    /// Largest spacing that resolves the packet's oscillation on `axis`.
    pub fn max_spacing(&self, eps: f64, axis: usize) -> f64 {
        let (_, sp) = self.wigner_sigmas(eps);
        eps * PI / (3.0 * (self.p0[axis].abs() + 3.0 * sp[axis]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    pub grid: Grid,
    pub eps: f64,
    pub time: f64,
    pub values: Vec<Complex64>,
}

impl WaveFunction {
    pub fn zeros(grid: Grid, eps: f64) -> Self {
        let n = grid.len();
        WaveFunction { grid, eps, time: 0.0, values: vec![Complex64::default(); n] }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Grid, eps: f64, mut f: impl FnMut(&[f64]) -> Complex64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.point(i, &mut x);
                f(&x)
            })
            .collect();
        WaveFunction { grid, eps, time: 0.0, values }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            for v in self.values.iter_mut() {
                *v /= n;
            }
        }
    }

    /// `<self, other>` with the conjugate on the first argument.
    pub fn inner(&self, other: &WaveFunction) -> Complex64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.cell_volume()
    }

    pub fn distance(&self, other: &WaveFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            * self.grid.cell_volume().sqrt()
    }
}

pub fn make_packet(grid: &Grid, eps: f64, spec: &PacketSpec) -> Result<WaveFunction, QuantumError> {
    spec.validate()?;
    let d = grid.dim();
    if spec.dim() != d {
        return Err(QuantumError::DimensionMismatch(format!(
            "packet has dimension {}, grid has {d}",
            spec.dim()
        )));
    }
    for axis in 0..d {
        let h = grid.spacing(axis);
        let limit = spec.max_spacing(eps, axis);
        if h > limit {
            return Err(QuantumError::GridTooCoarse { axis, h, limit });
        }
        let margin = grid.boundary_distance(axis, spec.x0[axis]) - eps.powf(spec.alpha) * spec.width(axis);
        let required = grid.extent[axis] / 8.0;
        if margin < required {
            return Err(QuantumError::PacketClipped { axis, margin, required });
        }
    }
    let scale = eps.powf(spec.alpha);
    let mut wf = WaveFunction::from_fn(grid.clone(), eps, |x| {
        let mut amp = scale.powf(-(d as f64) / 2.0);
        let mut phase = 0.0;
        for a in 0..d {
            let w = spec.width(a);
            let u = (x[a] - spec.x0[a]) / scale;
            amp *= (PI * w * w).powf(-0.25) * (-u * u / (2.0 * w * w)).exp();
            phase += spec.p0[a] * x[a] / eps;
        }
        Complex64::from_polar(amp, phase)
    });
    wf.normalize();
    Ok(wf)
}

/// Samples `U` on the grid, failing if a node is within the guard radius of the singular set.
pub fn potential_on_grid(grid: &Grid, spec: &PotentialSpec) -> Result<Vec<f64>, QuantumError> {
    if spec.dim() != grid.dim() {
        return Err(QuantumError::DimensionMismatch(format!(
            "potential has dimension {}, grid has {}",
            spec.dim(),
            grid.dim()
        )));
    }
    let mut x = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|i| {
            grid.point(i, &mut x);
            if spec.dist_to_singular(&x) <= spec.guard_radius {
                return Err(QuantumError::SingularGridPoint { index: i });
            }
            Ok(spec.eval(&x)?)
        })
        .collect()
}

/// Strang split-operator propagator with precomputed phase factors.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: Grid,
    eps: f64,
    dt: f64,
    fft: FftNd,
    half_potential: Vec<Complex64>,
    full_potential: Vec<Complex64>,
    kinetic: Vec<Complex64>,
}

impl Propagator {
    /// Checks `|dt| <= 0.01 eps`.
    pub fn new(grid: &Grid, eps: f64, spec: &PotentialSpec, dt: f64) -> Result<Self, QuantumError> {
        Self::with_coefficient(grid, eps, spec, dt, DEFAULT_DT_COEFFICIENT)
    }

    pub fn with_coefficient(
        grid: &Grid,
        eps: f64,
        spec: &PotentialSpec,
        dt: f64,
        max_coefficient: f64,
    ) -> Result<Self, QuantumError> {
        let limit = max_coefficient * eps * (1.0 + 1e-12);
        if !(dt.abs() <= limit) || dt == 0.0 {
            return Err(QuantumError::TimestepTooLarge { dt, limit });
        }
        let u = potential_on_grid(grid, spec)?;
        let half_potential = u.iter().map(|&v| Complex64::from_polar(1.0, -v * dt / (2.0 * eps))).collect();
        let full_potential = u.iter().map(|&v| Complex64::from_polar(1.0, -v * dt / eps)).collect();
        let kinetic = grid
            .k_squared()
            .iter()
            .map(|&k2| Complex64::from_polar(1.0, -eps * k2 * dt / 2.0))
            .collect();
        Ok(Propagator {
            grid: grid.clone(),
            eps,
            dt,
            fft: FftNd::new(&grid.points),
            half_potential,
            full_potential,
            kinetic,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `nsteps` Strang steps, fusing adjacent half potential kicks.
    pub fn advance(&self, wf: &mut WaveFunction, nsteps: usize) -> Result<(), QuantumError> {
        if wf.grid != self.grid || wf.eps != self.eps {
            return Err(QuantumError::DimensionMismatch("wave function does not match propagator".into()));
        }
        if nsteps == 0 {
            return Ok(());
        }
        let psi = &mut wf.values;
        mul_assign(psi, &self.half_potential);
        for s in 0..nsteps {
            self.fft.forward(psi);
            mul_assign(psi, &self.kinetic);
            self.fft.inverse(psi);
            if s + 1 < nsteps {
                mul_assign(psi, &self.full_potential);
            } else {
                mul_assign(psi, &self.half_potential);
            }
        }
        wf.time += nsteps as f64 * self.dt;
        Ok(())
    }
}

fn mul_assign(a: &mut [Complex64], b: &[Complex64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x *= y;
    }
}

pub fn propagate(
    wf: &WaveFunction,
    spec: &PotentialSpec,
    dt: f64,
    nsteps: usize,
) -> Result<WaveFunction, QuantumError> {
    let prop = Propagator::new(&wf.grid, wf.eps, spec, dt)?;
    let mut out = wf.clone();
    prop.advance(&mut out, nsteps)?;
    Ok(out)
}

pub fn norm(wf: &WaveFunction) -> f64 {
    wf.norm_sqr().sqrt()
}

fn spectrum(wf: &WaveFunction) -> Vec<Complex64> {
    let mut buf = wf.values.clone();
    FftNd::new(&wf.grid.points).forward(&mut buf);
    buf
}

/// Unscaled spectral Laplacian of grid values.
pub fn laplacian(grid: &Grid, values: &[Complex64]) -> Vec<Complex64> {
    let fft = FftNd::new(&grid.points);
    let mut buf = values.to_vec();
    fft.forward(&mut buf);
    for (v, k2) in buf.iter_mut().zip(grid.k_squared()) {
        *v *= -k2;
    }
    fft.inverse(&mut buf);
    buf
}

/// `1/2 ||eps grad Psi||^2`, evaluated in Fourier space.
pub fn kinetic_energy(wf: &WaveFunction) -> f64 {
    let spec = spectrum(wf);
    let n = wf.grid.len() as f64;
    let s: f64 = spec.iter().zip(wf.grid.k_squared()).map(|(v, k2)| k2 * v.norm_sqr()).sum();
    0.5 * wf.eps * wf.eps * s * wf.grid.cell_volume() / n
}

pub fn potential_energy(wf: &WaveFunction, spec: &PotentialSpec) -> Result<f64, QuantumError> {
    let u = potential_on_grid(&wf.grid, spec)?;
    Ok(u.iter().zip(&wf.values).map(|(u, v)| u * v.norm_sqr()).sum::<f64>() * wf.grid.cell_volume())
}

pub fn energy(wf: &WaveFunction, spec: &PotentialSpec) -> Result<f64, QuantumError> {
    Ok(kinetic_energy(wf) + potential_energy(wf, spec)?)
}

pub fn apply_hamiltonian(wf: &WaveFunction, spec: &PotentialSpec) -> Result<Vec<Complex64>, QuantumError> {
    let u = potential_on_grid(&wf.grid, spec)?;
    let lap = laplacian(&wf.grid, &wf.values);
    let e2 = wf.eps * wf.eps;
    Ok(lap
        .iter()
        .zip(&wf.values)
        .zip(&u)
        .map(|((l, v), u)| -0.5 * e2 * l + u * v)
        .collect())
}

/// `||H_eps Psi||`.
pub fn h_norm(wf: &WaveFunction, spec: &PotentialSpec) -> Result<f64, QuantumError> {
    let hpsi = apply_hamiltonian(wf, spec)?;
    Ok((hpsi.iter().map(|v| v.norm_sqr()).sum::<f64>() * wf.grid.cell_volume()).sqrt())
}

pub fn position_density(wf: &WaveFunction) -> Vec<f64> {
    wf.values.iter().map(|v| v.norm_sqr()).collect()
}

/// Momentum density on the grid `p = eps k` (FFT order) with cell `(2 pi eps / L)^d`.
pub fn momentum_density(wf: &WaveFunction) -> Vec<f64> {
    let d = wf.dim() as i32;
    let h_d = wf.grid.cell_volume();
    let scale = h_d * h_d / (2.0 * PI * wf.eps).powi(d);
    spectrum(wf).iter().map(|v| scale * v.norm_sqr()).collect()
}

/// Volume of one momentum-grid cell.
pub fn momentum_cell(wf: &WaveFunction) -> f64 {
    (0..wf.dim()).map(|a| 2.0 * PI * wf.eps / wf.grid.extent[a]).product()
}

/// Momentum values `eps k` along `axis` in FFT order.
pub fn momentum_axis(wf: &WaveFunction, axis: usize) -> Vec<f64> {
    wf.grid.wavenumbers(axis).iter().map(|k| wf.eps * k).collect()
}

pub fn expectation_x(wf: &WaveFunction) -> Vec<f64> {
    let d = wf.dim();
    let mut acc = vec![0.0; d];
    let mut total = 0.0;
    let mut x = vec![0.0; d];
    for (i, v) in wf.values.iter().enumerate() {
        wf.grid.point(i, &mut x);
        let m = v.norm_sqr();
        total += m;
        for a in 0..d {
            acc[a] += x[a] * m;
        }
    }
    acc.iter().map(|s| s / total).collect()
}

pub fn expectation_p(wf: &WaveFunction) -> Vec<f64> {
    let d = wf.dim();
    let spec = spectrum(wf);
    let ks: Vec<Vec<f64>> = (0..d).map(|a| wf.grid.wavenumbers(a)).collect();
    let mut acc = vec![0.0; d];
    let mut total = 0.0;
    let mut idx = vec![0; d];
    for (i, v) in spec.iter().enumerate() {
        wf.grid.unravel(i, &mut idx);
        let m = v.norm_sqr();
        total += m;
        for a in 0..d {
            acc[a] += ks[a][idx[a]] * m;
        }
    }
    acc.iter().map(|s| wf.eps * s / total).collect()
}

/// Largest mass found in the outer `fraction` of the box on one side of one axis.
pub fn boundary_mass(wf: &WaveFunction, fraction: f64) -> (usize, f64) {
    let d = wf.dim();
    let dens = position_density(wf);
    let hd = wf.grid.cell_volume();
    let mut worst = (0, 0.0);
    let mut idx = vec![0; d];
    let mut low = vec![0.0; d];
    let mut high = vec![0.0; d];
    for (i, m) in dens.iter().enumerate() {
        wf.grid.unravel(i, &mut idx);
        for a in 0..d {
            let x = wf.grid.coord(a, idx[a]);
            let layer = fraction * wf.grid.extent[a];
            if x - wf.grid.lower[a] < layer {
                low[a] += m * hd;
            }
            if wf.grid.upper(a) - x < layer {
                high[a] += m * hd;
            }
        }
    }
    for a in 0..d {
        let m = low[a].max(high[a]);
        if m > worst.1 {
            worst = (a, m);
        }
    }
    worst
}

/// Fails with `BoundaryContamination` if more than `tolerance` mass sits in the outer 5% per side.
pub fn check_boundary(wf: &WaveFunction, tolerance: f64) -> Result<(), QuantumError> {
    let (axis, mass) = boundary_mass(wf, 0.05);
    if mass > tolerance {
        return Err(QuantumError::BoundaryContamination { axis, mass, time: wf.time });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::SmoothSurface;
    use approx::assert_abs_diff_eq;

    fn grid_1d(extent: f64, n: usize) -> Grid {
        Grid::centered(1, extent, n).unwrap()
    }

    #[test]
    fn packet_is_normalized_with_correct_moments() {
        let wf = make_packet(&grid_1d(16.0, 1024), 0.1, &PacketSpec::coherent(vec![0.0], vec![1.0])).unwrap();
        assert_abs_diff_eq!(norm(&wf), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expectation_x(&wf)[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(expectation_p(&wf)[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn shifted_packet_position() {
        let wf = make_packet(&grid_1d(16.0, 1024), 0.1, &PacketSpec::coherent(vec![2.0], vec![0.0])).unwrap();
        assert_abs_diff_eq!(expectation_x(&wf)[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn even_packet_has_symmetric_momentum_density() {
        let wf = make_packet(&grid_1d(16.0, 512), 0.1, &PacketSpec::coherent(vec![0.0], vec![0.0])).unwrap();
        let rho = momentum_density(&wf);
        let n = rho.len();
        for m in 1..n / 2 {
            assert_abs_diff_eq!(rho[m], rho[n - m], epsilon = 1e-10);
        }
    }

    #[test]
    fn momentum_density_peaks_at_p0() {
        let wf = make_packet(&grid_1d(16.0, 1024), 0.1, &PacketSpec::coherent(vec![0.0], vec![1.0])).unwrap();
        let rho = momentum_density(&wf);
        let ps = momentum_axis(&wf, 0);
        let imax = (0..rho.len()).max_by(|&a, &b| rho[a].total_cmp(&rho[b])).unwrap();
        assert!((ps[imax] - 1.0).abs() <= momentum_cell(&wf));
    }

    #[test]
    fn rejects_coarse_grid_and_clipped_packet() {
        let spec = PacketSpec::coherent(vec![0.0], vec![1.0]);
        assert!(matches!(
            make_packet(&grid_1d(16.0, 64), 0.1, &spec),
            Err(QuantumError::GridTooCoarse { .. })
        ));
        let spec = PacketSpec::coherent(vec![7.0], vec![0.0]);
        assert!(matches!(
            make_packet(&grid_1d(16.0, 512), 0.1, &spec),
            Err(QuantumError::PacketClipped { .. })
        ));
    }

    #[test]
    fn free_flight_preserves_momentum_density_and_moves_center() {
        let eps = 0.1;
        let wf = make_packet(&grid_1d(16.0, 1024), eps, &PacketSpec::coherent(vec![0.0], vec![1.0])).unwrap();
        let free = PotentialSpec::flat(1, SmoothSurface::Zero);
        let dt = 0.01 * eps;
        let out = propagate(&wf, &free, dt, 500).unwrap();
        assert_abs_diff_eq!(out.time, 0.5, epsilon = 1e-12);
        for (a, b) in momentum_density(&wf).iter().zip(momentum_density(&out)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(expectation_x(&out)[0], 0.5, epsilon = 1e-4);
    }

    #[test]
    fn harmonic_rotation_quarter_period() {
        let eps = 0.1;
        let wf = make_packet(&grid_1d(16.0, 512), eps, &PacketSpec::coherent(vec![0.0], vec![1.0])).unwrap();
        let ho = PotentialSpec::flat(1, SmoothSurface::Harmonic { stiffness: vec![1.0] });
        let nsteps = 1600;
        let dt = PI / 2.0 / nsteps as f64;
        let prop = Propagator::new(&wf.grid, eps, &ho, dt).unwrap();
        let mut out = wf.clone();
        prop.advance(&mut out, nsteps).unwrap();
        assert_abs_diff_eq!(expectation_x(&out)[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(expectation_p(&out)[0], 0.0, epsilon = 1e-4);
    }

    #[test]
    fn harmonic_coherent_energy() {
        let eps = 0.1;
        let wf = make_packet(&grid_1d(16.0, 512), eps, &PacketSpec::coherent(vec![0.0], vec![1.0])).unwrap();
        let ho = PotentialSpec::flat(1, SmoothSurface::Harmonic { stiffness: vec![1.0] });
        assert_abs_diff_eq!(energy(&wf, &ho).unwrap(), 0.55, epsilon = 1e-3);
    }

    #[test]
    fn time_reversal_returns_initial_state() {
        let eps = 0.2;
        let wf = make_packet(&grid_1d(16.0, 256), eps, &PacketSpec::coherent(vec![0.5], vec![1.0])).unwrap();
        let q = PotentialSpec::flat(1, SmoothSurface::Quartic { a: 0.25 });
        let dt = 0.01 * eps;
        let fwd = propagate(&wf, &q, dt, 400).unwrap();
        let back = propagate(&fwd, &q, -dt, 400).unwrap();
        assert!(back.distance(&wf) < 1e-8);
        assert_abs_diff_eq!(back.time, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_large_timestep() {
        let wf = make_packet(&grid_1d(16.0, 256), 0.2, &PacketSpec::coherent(vec![0.0], vec![0.0])).unwrap();
        let free = PotentialSpec::flat(1, SmoothSurface::Zero);
        assert!(matches!(propagate(&wf, &free, 0.01, 1), Err(QuantumError::TimestepTooLarge { .. })));
    }

    #[test]
    fn singular_grid_point_detected() {
        // stagger 0 puts a node on the coincidence set
        let grid = Grid::cube(3, -1.0, 2.0, 8, 0.0).unwrap();
        let spec = PotentialSpec::relative(SmoothSurface::Zero, 1.0);
        assert!(matches!(potential_on_grid(&grid, &spec), Err(QuantumError::SingularGridPoint { .. })));
        let grid = Grid::centered(3, 2.0, 8).unwrap();
        assert!(potential_on_grid(&grid, &spec).is_ok());
    }

    #[test]
    fn boundary_contamination_reported() {
        let wf = make_packet(&grid_1d(16.0, 256), 0.2, &PacketSpec::coherent(vec![0.0], vec![0.0])).unwrap();
        assert!(check_boundary(&wf, 1e-6).is_ok());
        let mut shifted = wf.clone();
        shifted.values.rotate_left(120);
        assert!(matches!(
            check_boundary(&shifted, 1e-6),
            Err(QuantumError::BoundaryContamination { .. })
        ));
    }
}
