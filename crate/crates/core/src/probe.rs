//! Gaussian phase-space test functions and their partial Fourier transforms.
//!
//! A [`TestFunction`] is `A prod_a exp(-(x_a - x0_a)^2 / 2 sx_a^2) exp(-(p_a - p0_a)^2 / 2 sp_a^2)`,
//! optionally multiplied by a smooth bump in time. Its transform in `p`,
//! `F(x, y) = int phi(x, p) exp(-i p.y) dp`, is again Gaussian, and the A-norm
//! `int sup_x |F(x, y)| dy` is `|A| (2 pi)^d` for every width.

use crate::potential::{PotentialError, PotentialSpec};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gaussian tails are cut where the factor drops below `exp(-X_SIGMAS^2 / 2)`.
pub const X_SIGMAS: f64 = 8.0;
/// Truncation of the `y` integral in units of `1/sp`; includes slack for polynomial prefactors.
pub const Y_SIGMAS: f64 = 8.5;

/// `exp(1 - 1/(1 - s^2))` on `(t0, t1)`, rescaled so `s` runs over `(-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t0: f64,
    pub t1: f64,
}

impl TimeWindow {
    fn s(&self, t: f64) -> f64 {
        (2.0 * t - self.t0 - self.t1) / (self.t1 - self.t0)
    }

    pub fn value(&self, t: f64) -> f64 {
        let s = self.s(t);
        if s.abs() >= 1.0 {
            return 0.0;
        }
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s = self.s(t);
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - s * s;
        self.value(t) * (-2.0 * s / (q * q)) * 2.0 / (self.t1 - self.t0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub id: String,
    pub x0: Vec<f64>,
    pub p0: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_p: Vec<f64>,
    #[serde(default = "unit")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<TimeWindow>,
}

fn unit() -> f64 {
    1.0
}

impl TestFunction {
    pub fn new(id: impl Into<String>, x0: Vec<f64>, p0: Vec<f64>, sigma_x: Vec<f64>, sigma_p: Vec<f64>) -> Self {
        TestFunction { id: id.into(), x0, p0, sigma_x, sigma_p, amplitude: 1.0, window: None }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_window(mut self, window: TimeWindow) -> Self {
        self.window = Some(window);
        self
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let d = self.dim();
        if d == 0 || self.p0.len() != d || self.sigma_x.len() != d || self.sigma_p.len() != d {
            return Err(format!("probe `{}` has inconsistent dimensions", self.id));
        }
        if self.sigma_x.iter().chain(&self.sigma_p).any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(format!("probe `{}` needs positive widths", self.id));
        }
        if let Some(w) = self.window {
            if !(w.t1 > w.t0) {
                return Err(format!("probe `{}` has an empty time window", self.id));
            }
        }
        Ok(())
    }

    pub fn x_factor(&self, x: &[f64]) -> f64 {
        let mut e = 0.0;
        for a in 0..self.dim() {
            let u = (x[a] - self.x0[a]) / self.sigma_x[a];
            e += u * u;
        }
        (-0.5 * e).exp()
    }

    pub fn p_factor(&self, p: &[f64]) -> f64 {
        let mut e = 0.0;
        for a in 0..self.dim() {
            let u = (p[a] - self.p0[a]) / self.sigma_p[a];
            e += u * u;
        }
        (-0.5 * e).exp()
    }

    pub fn time_factor(&self, t: f64) -> f64 {
        self.window.map_or(1.0, |w| w.value(t))
    }

    pub fn time_derivative(&self, t: f64) -> f64 {
        self.window.map_or(0.0, |w| w.derivative(t))
    }

    /// `grad_x phi` at a phase-space point (time factor excluded).
    pub fn grad_x(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let v = self.value(x, p);
        (0..self.dim())
            .map(|a| -(x[a] - self.x0[a]) / (self.sigma_x[a] * self.sigma_x[a]) * v)
            .collect()
    }

    /// `grad_p phi` at a phase-space point (time factor excluded).
    pub fn grad_p(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let v = self.value(x, p);
        (0..self.dim())
            .map(|a| -(p[a] - self.p0[a]) / (self.sigma_p[a] * self.sigma_p[a]) * v)
            .collect()
    }

    /// `F(x, y)` without amplitude and x-factor: `prod sp sqrt(2 pi) exp(-i p0 y - sp^2 y^2 / 2)`.
    fn y_kernel(&self, y: &[f64]) -> Complex64 {
        let mut modulus = 1.0;
        let mut phase = 0.0;
        for a in 0..self.dim() {
            let sp = self.sigma_p[a];
            modulus *= sp * (2.0 * PI).sqrt() * (-0.5 * sp * sp * y[a] * y[a]).exp();
            phase -= self.p0[a] * y[a];
        }
        Complex64::from_polar(modulus, phase)
    }

    /// Radius of a ball around `x0` containing the numerical x-support.
    pub fn support_radius(&self) -> f64 {
        X_SIGMAS * self.sigma_x.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// A phase-space observable that can be paired with a Wigner function through its
/// partial Fourier transform in `p`.
pub trait Probe: Sync {
    /// Gaussian envelope that bounds the probe's support and decay.
    fn envelope(&self) -> &TestFunction;
    fn value(&self, x: &[f64], p: &[f64]) -> f64;
    fn fourier_p(&self, x: &[f64], y: &[f64]) -> Complex64;
}

impl Probe for TestFunction {
    fn envelope(&self) -> &TestFunction {
        self
    }

    fn value(&self, x: &[f64], p: &[f64]) -> f64 {
        self.amplitude * self.x_factor(x) * self.p_factor(p)
    }

    fn fourier_p(&self, x: &[f64], y: &[f64]) -> Complex64 {
        self.amplitude * self.x_factor(x) * self.y_kernel(y)
    }
}

/// `p . grad_x phi`.
#[derive(Debug, Clone, Copy)]
pub struct TransportProbe<'a>(pub &'a TestFunction);

impl Probe for TransportProbe<'_> {
    fn envelope(&self) -> &TestFunction {
        self.0
    }

    fn value(&self, x: &[f64], p: &[f64]) -> f64 {
        self.0.grad_x(x, p).iter().zip(p).map(|(g, p)| g * p).sum()
    }

    fn fourier_p(&self, x: &[f64], y: &[f64]) -> Complex64 {
        let phi = self.0;
        let base = phi.fourier_p(x, y);
        let mut s = Complex64::default();
        for a in 0..phi.dim() {
            let dx = -(x[a] - phi.x0[a]) / (phi.sigma_x[a] * phi.sigma_x[a]);
            s += dx * Complex64::new(phi.p0[a], -phi.sigma_p[a] * phi.sigma_p[a] * y[a]);
        }
        s * base
    }
}

/// `grad U . grad_p phi`, defined where `U` is differentiable on the probe's support.
#[derive(Debug, Clone, Copy)]
pub struct ForceProbe<'a> {
    phi: &'a TestFunction,
    potential: &'a PotentialSpec,
}

impl<'a> ForceProbe<'a> {
    /// Fails if the probe's support radius reaches the singular set or a kink of `U_b`.
    pub fn new(phi: &'a TestFunction, potential: &'a PotentialSpec) -> Result<Self, f64> {
        let dist = potential.dist_to_irregular(&phi.x0);
        if dist <= phi.support_radius() * potential.layout.separation_lipschitz() {
            return Err(dist);
        }
        Ok(ForceProbe { phi, potential })
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self.potential.gradient(x) {
            Ok(g) => g,
            Err(PotentialError::DimensionMismatch { .. }) => panic!("probe and potential dimensions differ"),
            // unreachable inside the support radius checked in `new`
            Err(_) => vec![0.0; x.len()],
        }
    }
}

impl Probe for ForceProbe<'_> {
    fn envelope(&self) -> &TestFunction {
        self.phi
    }

    fn value(&self, x: &[f64], p: &[f64]) -> f64 {
        self.grad(x).iter().zip(self.phi.grad_p(x, p)).map(|(g, d)| g * d).sum()
    }

    fn fourier_p(&self, x: &[f64], y: &[f64]) -> Complex64 {
        let base = self.phi.fourier_p(x, y);
        let g = self.grad(x);
        let s: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
        Complex64::new(0.0, s) * base
    }
}

/// `||phi||_A = int sup_x |F(x, y)| dy`, in closed form for the Gaussian family.
pub fn a_norm(phi: &TestFunction) -> f64 {
    phi.amplitude.abs() * (2.0 * PI).powi(phi.dim() as i32)
}

/// A finite family of probes standing in for the weak-* topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDictionary {
    pub rule: String,
    pub probes: Vec<TestFunction>,
}

impl TestDictionary {
    /// Tensor lattice of `per_axis` centers per phase-space axis over the box `[lo, hi]`.
    pub fn lattice(
        x_range: &[(f64, f64)],
        p_range: &[(f64, f64)],
        per_axis: usize,
        sigma_x: &[f64],
        sigma_p: &[f64],
    ) -> Self {
        let d = x_range.len();
        let nodes = |(lo, hi): (f64, f64)| -> Vec<f64> {
            if per_axis <= 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..per_axis).map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64).collect()
            }
        };
        let axes: Vec<Vec<f64>> = x_range.iter().chain(p_range).map(|&r| nodes(r)).collect();
        let total = per_axis.max(1).pow(2 * d as u32);
        let mut probes = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut c = vec![0.0; 2 * d];
            for k in (0..2 * d).rev() {
                let n = axes[k].len();
                c[k] = axes[k][rem % n];
                rem /= n;
            }
            probes.push(TestFunction::new(
                format!("lat{flat:03}"),
                c[..d].to_vec(),
                c[d..].to_vec(),
                sigma_x.to_vec(),
                sigma_p.to_vec(),
            ));
        }
        TestDictionary { rule: format!("lattice {per_axis}^{}", 2 * d), probes }
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }
}
