//! Wigner and Husimi transforms, marginals, and pairings with Gaussian probes.
//!
//! The discrete Wigner transform uses shifts `y_m = 2 m h / eps` so that
//! `x_j +- eps y_m / 2` are grid points; the resulting momentum grid has spacing
//! `pi eps / L`. Pairings in any dimension go through the bilinear form
//! `F(Psi, chi) = (2 pi)^-d int int Psi(x + eps y/2) conj(chi(x - eps y/2)) (F_p phi)(x, y) dx dy`.

use crate::fft::FftNd;
use crate::grid::Grid;
use crate::potential::PotentialSpec;
use crate::probe::{a_norm, ForceProbe, Probe, TestFunction, TransportProbe, X_SIGMAS, Y_SIGMAS};
use crate::quantum::{momentum_density, potential_on_grid, QuantumError, WaveFunction};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

/// Largest imaginary part tolerated before the Wigner values are declared real.
pub const IMAG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WignerError {
    #[error("full phase-space transforms are limited to d <= 2 (got d = {0}); use pairings")]
    DimensionTooHigh(usize),
    #[error("quadrature window of probe `{id}` needs {needed} shifts on axis {axis}, box allows {available}")]
    QuadratureWindowExceedsBox { id: String, axis: usize, needed: usize, available: usize },
    #[error("support of probe `{id}` reaches within {distance:.3e} of a singular or non-smooth point")]
    SupportTouchesSingularSet { id: String, distance: f64 },
    #[error("Wigner values have an imaginary residue {0:e}")]
    NotReal(f64),
    #[error("wigner residual needs at least 3 equally spaced snapshots")]
    TooFewSnapshots,
    #[error("probe dimension {probe} does not match state dimension {state}")]
    DimensionMismatch { probe: usize, state: usize },
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

/// Real values on the tensor product of a position grid and a centered momentum grid,
/// stored with the position index major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceField {
    pub grid: Grid,
    pub p_axes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub eps: f64,
    pub time: f64,
    /// Largest discarded imaginary part (zero for Husimi fields).
    pub imag_residue: f64,
}

impl PhaseSpaceField {
    pub fn p_len(&self) -> usize {
        self.p_axes.iter().map(Vec::len).product()
    }

    pub fn p_cell(&self) -> f64 {
        self.p_axes.iter().map(|a| a[1] - a[0]).product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.grid.cell_volume() * self.p_cell()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn at(&self, x_index: usize, p_index: usize) -> f64 {
        self.values[x_index * self.p_len() + p_index]
    }

    pub fn p_point(&self, mut flat: usize, out: &mut [f64]) {
        for a in (0..self.p_axes.len()).rev() {
            let n = self.p_axes[a].len();
            out[a] = self.p_axes[a][flat % n];
            flat /= n;
        }
    }

    /// `int W dp` on the position grid.
    pub fn position_marginal(&self) -> Vec<f64> {
        let np = self.p_len();
        let dp = self.p_cell();
        self.values.chunks_exact(np).map(|row| row.iter().sum::<f64>() * dp).collect()
    }

    /// `int W dx` on the momentum grid.
    pub fn momentum_marginal(&self) -> Vec<f64> {
        let np = self.p_len();
        let hd = self.grid.cell_volume();
        let mut out = vec![0.0; np];
        for row in self.values.chunks_exact(np) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v * hd;
            }
        }
        out
    }

    /// `sum W phi dx dp` by the tensor rectangle rule.
    pub fn integrate(&self, probe: &dyn Probe) -> f64 {
        let d = self.grid.dim();
        let np = self.p_len();
        let mut x = vec![0.0; d];
        let mut p = vec![0.0; d];
        let mut s = 0.0;
        for i in 0..self.grid.len() {
            self.grid.point(i, &mut x);
            for k in 0..np {
                self.p_point(k, &mut p);
                s += self.values[i * np + k] * probe.value(&x, &p);
            }
        }
        s * self.cell_volume()
    }
}

/// Momentum axis of the discrete Wigner transform: `pi eps k / L`, `k` in `[-N/2, N/2)`.
pub fn wigner_p_axis(grid: &Grid, eps: f64, axis: usize) -> Vec<f64> {
    let n = grid.points[axis] as isize;
    let dp = PI * eps / grid.extent[axis];
    (-n / 2..n / 2).map(|k| k as f64 * dp).collect()
}

fn centered_to_fft(k: usize, n: usize) -> usize {
    // centered position k holds frequency k - n/2
    (k + n - n / 2) % n
}

fn check_dim(d: usize) -> Result<(), WignerError> {
    if d > 2 {
        return Err(WignerError::DimensionTooHigh(d));
    }
    Ok(())
}

/// Full discrete Wigner transform for `d <= 2`.
pub fn wigner_full(wf: &WaveFunction) -> Result<PhaseSpaceField, WignerError> {
    let grid = &wf.grid;
    let d = grid.dim();
    check_dim(d)?;
    let n_total = grid.len();
    let fft = FftNd::new(&grid.points);
    let pref = (PI * wf.eps).powi(-(d as i32)) * grid.cell_volume();
    let p_axes: Vec<Vec<f64>> = (0..d).map(|a| wigner_p_axis(grid, wf.eps, a)).collect();
    let strides: Vec<usize> = (0..d).map(|a| grid.stride(a)).collect();
    let multi: Vec<Vec<usize>> = (0..n_total)
        .map(|m| {
            let mut idx = vec![0; d];
            grid.unravel(m, &mut idx);
            idx
        })
        .collect();
    // centered output order -> FFT order
    let kmap: Vec<usize> = multi
        .iter()
        .map(|k| (0..d).map(|a| centered_to_fft(k[a], grid.points[a]) * strides[a]).sum())
        .collect();
    let mut values = vec![0.0; n_total * n_total];
    let imag_residue = values
        .par_chunks_mut(n_total)
        .enumerate()
        .map_init(
            || vec![Complex64::default(); n_total],
            |buf, (j, row)| {
                let jidx = &multi[j];
                for (c, midx) in buf.iter_mut().zip(&multi) {
                    let (mut plus, mut minus) = (0, 0);
                    for a in 0..d {
                        let n = grid.points[a];
                        plus += (jidx[a] + midx[a]) % n * strides[a];
                        minus += (jidx[a] + n - midx[a]) % n * strides[a];
                    }
                    *c = wf.values[plus] * wf.values[minus].conj();
                }
                fft.forward(buf);
                let mut residue = 0.0f64;
                for (out, &k) in row.iter_mut().zip(&kmap) {
                    let v = buf[k] * pref;
                    residue = residue.max(v.im.abs());
                    *out = v.re;
                }
                residue
            },
        )
        .reduce(|| 0.0, f64::max);
    if imag_residue > IMAG_TOLERANCE {
        return Err(WignerError::NotReal(imag_residue));
    }
    Ok(PhaseSpaceField { grid: grid.clone(), p_axes, values, eps: wf.eps, time: wf.time, imag_residue })
}

/// The momentum density folded onto the Wigner momentum grid.
///
/// Summing the discrete Wigner function over `x` gives zero at odd `k` on any axis and
/// `2^d` times the momentum density summed over its `N/2` aliases at `k = 2q`.
pub fn folded_momentum_density(wf: &WaveFunction) -> Vec<f64> {
    let grid = &wf.grid;
    let d = grid.dim();
    let rho = momentum_density(wf);
    let np: usize = grid.len();
    let mut out = vec![0.0; np];
    let mut kidx = vec![0; d];
    let mut q = vec![0; d];
    'outer: for (k, o) in out.iter_mut().enumerate() {
        grid.unravel(k, &mut kidx);
        for a in 0..d {
            let n = grid.points[a] as isize;
            let freq = kidx[a] as isize - n / 2;
            if freq % 2 != 0 {
                continue 'outer;
            }
            q[a] = (freq / 2).rem_euclid(n) as usize;
        }
        let mut s = 0.0;
        for alias in 0..(1usize << d) {
            let mut idx = q.clone();
            for a in 0..d {
                if alias & (1 << a) != 0 {
                    idx[a] = (idx[a] + grid.points[a] / 2) % grid.points[a];
                }
            }
            s += rho[grid.ravel(&idx)];
        }
        *o = (1usize << d) as f64 * s;
    }
    out
}

/// Husimi function `|<g_{x,p}, Psi>|^2 / (2 pi eps)^d` with coherent states of width `sqrt(eps/2)`,
/// evaluated on the Wigner phase-space grid.
pub fn husimi(wf: &WaveFunction) -> Result<PhaseSpaceField, WignerError> {
    let grid = &wf.grid;
    let d = grid.dim();
    check_dim(d)?;
    let eps = wf.eps;
    let n_total = grid.len();
    let padded: Vec<usize> = grid.points.iter().map(|n| 2 * n).collect();
    let padded_len: usize = padded.iter().product();
    let fft = FftNd::new(&padded);
    let hd = grid.cell_volume();
    let overlap_scale = (PI * eps).powf(-(d as f64) / 4.0) * hd;
    let norm = (2.0 * PI * eps).powi(-(d as i32));
    let p_axes: Vec<Vec<f64>> = (0..d).map(|a| wigner_p_axis(grid, eps, a)).collect();
    let mut values = vec![0.0; n_total * n_total];
    let mut buf = vec![Complex64::default(); padded_len];
    let mut x = vec![0.0; d];
    let mut xp = vec![0.0; d];
    let mut idx = vec![0; d];
    let mut pidx = vec![0; d];
    for j in 0..n_total {
        grid.point(j, &mut x);
        buf.iter_mut().for_each(|v| *v = Complex64::default());
        for (jp, psi) in wf.values.iter().enumerate() {
            grid.unravel(jp, &mut idx);
            grid.point(jp, &mut xp);
            let r2: f64 = x.iter().zip(&xp).map(|(a, b)| (a - b) * (a - b)).sum();
            let w = (-r2 / (2.0 * eps)).exp();
            if w < 1e-300 {
                continue;
            }
            let pos = idx.iter().zip(&padded).fold(0, |acc, (i, n)| acc * n + i);
            buf[pos] = psi * w;
        }
        fft.forward(&mut buf);
        let row = &mut values[j * n_total..(j + 1) * n_total];
        for (k, out) in row.iter_mut().enumerate() {
            grid.unravel(k, &mut pidx);
            let pos = pidx.iter().zip(&grid.points).fold(0, |acc, (&i, &n)| {
                // frequency i - n/2 on a padded axis of length 2n
                let f = (i as isize - (n / 2) as isize).rem_euclid(2 * n as isize) as usize;
                acc * 2 * n + f
            });
            *out = norm * (buf[pos] * overlap_scale).norm_sqr();
        }
    }
    Ok(PhaseSpaceField { grid: grid.clone(), p_axes, values, eps, time: wf.time, imag_residue: 0.0 })
}

fn probe_dims(probe: &dyn Probe, grid: &Grid) -> Result<(), WignerError> {
    let d = probe.envelope().dim();
    if d != grid.dim() {
        return Err(WignerError::DimensionMismatch { probe: d, state: grid.dim() });
    }
    Ok(())
}

/// Index windows for the pairing sum: x indices per axis and the shift bound per axis.
/// Fails if the momentum quadrature of `probe` needs more shifts than the grid holds.
pub fn check_window(probe: &dyn Probe, grid: &Grid, eps: f64) -> Result<(), WignerError> {
    windows(probe, grid, eps).map(|_| ())
}

fn windows(probe: &dyn Probe, grid: &Grid, eps: f64) -> Result<(Vec<(usize, usize)>, Vec<usize>), WignerError> {
    let env = probe.envelope();
    let d = grid.dim();
    let mut xr = Vec::with_capacity(d);
    let mut mr = Vec::with_capacity(d);
    for a in 0..d {
        let h = grid.spacing(a);
        let n = grid.points[a];
        let lo = env.x0[a] - X_SIGMAS * env.sigma_x[a];
        let hi = env.x0[a] + X_SIGMAS * env.sigma_x[a];
        let first = ((lo - grid.lower[a]) / h - grid.stagger[a]).ceil().max(0.0) as usize;
        let last = (((hi - grid.lower[a]) / h - grid.stagger[a]).floor()).min((n - 1) as f64);
        if last < first as f64 {
            xr.push((0, 0));
        } else {
            xr.push((first, last as usize + 1));
        }
        let y_max = Y_SIGMAS / env.sigma_p[a];
        let needed = (eps * y_max / (2.0 * h)).ceil() as usize;
        if needed >= n / 2 {
            return Err(WignerError::QuadratureWindowExceedsBox {
                id: env.id.clone(),
                axis: a,
                needed,
                available: n / 2 - 1,
            });
        }
        mr.push(needed);
    }
    Ok((xr, mr))
}

/// The bilinear form `F(Psi, chi)` tested against `probe`.
pub fn pair_bilinear(
    grid: &Grid,
    eps: f64,
    psi: &[Complex64],
    chi: &[Complex64],
    probe: &dyn Probe,
) -> Result<Complex64, WignerError> {
    probe_dims(probe, grid)?;
    let d = grid.dim();
    let (xr, mr) = windows(probe, grid, eps)?;
    if xr.iter().any(|(a, b)| a == b) {
        return Ok(Complex64::default());
    }
    let x_counts: Vec<usize> = xr.iter().map(|(a, b)| b - a).collect();
    let m_counts: Vec<usize> = mr.iter().map(|m| 2 * m + 1).collect();
    let nx: usize = x_counts.iter().product();
    let nm: usize = m_counts.iter().product();
    let h: Vec<f64> = (0..d).map(|a| grid.spacing(a)).collect();
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut j = vec![0usize; d];
    let mut m = vec![0isize; d];
    let mut plus = vec![0usize; d];
    let mut minus = vec![0usize; d];
    let mut total = Complex64::default();
    for ix in 0..nx {
        let mut rem = ix;
        for a in (0..d).rev() {
            j[a] = xr[a].0 + rem % x_counts[a];
            rem /= x_counts[a];
            x[a] = grid.coord(a, j[a]);
        }
        let mut row = Complex64::default();
        for im in 0..nm {
            let mut rem = im;
            for a in (0..d).rev() {
                m[a] = (rem % m_counts[a]) as isize - mr[a] as isize;
                rem /= m_counts[a];
                let n = grid.points[a] as isize;
                plus[a] = (j[a] as isize + m[a]).rem_euclid(n) as usize;
                minus[a] = (j[a] as isize - m[a]).rem_euclid(n) as usize;
                y[a] = 2.0 * m[a] as f64 * h[a] / eps;
            }
            let prod = psi[grid.ravel(&plus)] * chi[grid.ravel(&minus)].conj();
            if prod.re == 0.0 && prod.im == 0.0 {
                continue;
            }
            row += prod * probe.fourier_p(&x, &y);
        }
        total += row;
    }
    let hd = grid.cell_volume();
    let pref = (2.0 * PI).powi(-(d as i32)) * (2.0 / eps).powi(d as i32) * hd * hd;
    Ok(total * pref)
}

/// `<W, probe>` for the Wigner function of `wf`.
pub fn pair_probe(wf: &WaveFunction, probe: &dyn Probe) -> Result<f64, WignerError> {
    Ok(pair_bilinear(&wf.grid, wf.eps, &wf.values, &wf.values, probe)?.re)
}

/// `<W, phi>`; checks the elementary bound `|<W, phi>| <= (2 pi)^-d ||Psi||^2 ||phi||_A` in test builds.
pub fn pair(wf: &WaveFunction, phi: &TestFunction) -> Result<f64, WignerError> {
    let v = pair_probe(wf, phi)?;
    debug_assert!(
        v.abs() <= (2.0 * PI).powi(-(wf.dim() as i32)) * wf.norm_sqr() * a_norm(phi) * (1.0 + 1e-9) + 1e-300,
        "elementary bound violated for probe {}",
        phi.id
    );
    Ok(v)
}

/// `<f, phi>` where `f = -(i/eps)(F(U Psi, Psi) - F(Psi, U Psi))` is the potential term of the Wigner equation.
pub fn force_term(wf: &WaveFunction, potential: &PotentialSpec, probe: &dyn Probe) -> Result<f64, WignerError> {
    let u = potential_on_grid(&wf.grid, potential)?;
    let upsi: Vec<Complex64> = wf.values.iter().zip(&u).map(|(v, u)| v * u).collect();
    let p = pair_bilinear(&wf.grid, wf.eps, &upsi, &wf.values, probe)?;
    Ok(2.0 / wf.eps * p.im)
}

/// `<g, phi> = <f, phi> + <W, grad U . grad_p phi>`, the part of the Wigner force term
/// not captured by the classical Liouville force.
pub fn remainder_g(wf: &WaveFunction, potential: &PotentialSpec, phi: &TestFunction) -> Result<f64, WignerError> {
    let force = ForceProbe::new(phi, potential)
        .map_err(|distance| WignerError::SupportTouchesSingularSet { id: phi.id.clone(), distance })?;
    Ok(force_term(wf, potential, phi)? + pair_probe(wf, &force)?)
}

/// `|d/dt <W, phi> - <W, p.grad_x phi> - <f, phi>|` at the middle snapshot, with a
/// central difference in time.
pub fn wigner_residual(
    snapshots: &[WaveFunction],
    potential: &PotentialSpec,
    phi: &TestFunction,
) -> Result<f64, WignerError> {
    if snapshots.len() < 3 {
        return Err(WignerError::TooFewSnapshots);
    }
    let mid = snapshots.len() / 2;
    let (prev, cur, next) = (&snapshots[mid - 1], &snapshots[mid], &snapshots[mid + 1]);
    let span = next.time - prev.time;
    if !(span > 0.0) || ((cur.time - prev.time) - (next.time - cur.time)).abs() > 1e-9 * span {
        return Err(WignerError::TooFewSnapshots);
    }
    let dwdt = (pair(next, phi)? - pair(prev, phi)?) / span;
    let transport = pair_probe(cur, &TransportProbe(phi))?;
    let force = force_term(cur, potential, phi)?;
    Ok((dwdt - transport - force).abs())
}
