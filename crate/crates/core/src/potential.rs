//! Potential energy surfaces of the form `U = U_b + U_s`.
//!
//! `U_b` is a smooth (or Lipschitz) analytic surrogate surface and `U_s` a sum of
//! repulsive Coulomb pair terms `c / |R_a - R_b|`. Configurations are flat vectors
//! whose interpretation depends on the [`Layout`].

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Distance from the singular set below which forces are not evaluated.
pub const DEFAULT_GUARD_RADIUS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error("configuration is at distance {distance:e} from the singular set (pair {alpha}-{beta})")]
    SingularPoint {
        alpha: usize,
        beta: usize,
        distance: f64,
    },
    #[error("smooth surface is not differentiable at this configuration")]
    NonDifferentiable,
    #[error("configuration has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid potential `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

/// How the coordinate vector is interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Plain `R^d`, no nuclei and no pair terms.
    Flat { dim: usize },
    /// `M` nuclei in `R^3`, `x = (R_1, ..., R_M)`, `d = 3M`.
    Nuclear { nuclei: usize },
    /// Dimer reduced to its Jacobi coordinate `x = (R_1 - R_2)/sqrt(2)` in `R^3`.
    ///
    /// The kinetic term keeps the form `-eps^2/2 Laplacian`. The single pair's
    /// separation is measured as `|x|` and its coupling is expressed in that
    /// coordinate (a physical `C_12` corresponds to `c = C_12 / sqrt(2)`).
    Relative,
}

impl Layout {
    pub fn dim(&self) -> usize {
        match *self {
            Layout::Flat { dim } => dim,
            Layout::Nuclear { nuclei } => 3 * nuclei,
            Layout::Relative => 3,
        }
    }

    fn nuclei(&self) -> usize {
        match *self {
            Layout::Flat { .. } => 0,
            Layout::Nuclear { nuclei } => nuclei,
            Layout::Relative => 2,
        }
    }

    /// Lipschitz constant of a pair separation with respect to the Euclidean norm on `R^d`.
    pub fn separation_lipschitz(&self) -> f64 {
        match self {
            Layout::Nuclear { .. } => std::f64::consts::SQRT_2,
            _ => 1.0,
        }
    }
}

/// Repulsive Coulomb term `c / |R_alpha - R_beta|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairInteraction {
    pub alpha: usize,
    pub beta: usize,
    pub c: f64,
}

/// Bounded-below analytic surrogate for the smooth part `U_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothSurface {
    Zero,
    /// `sum_i k_i x_i^2 / 2`; a single stiffness is broadcast to every axis.
    Harmonic { stiffness: Vec<f64> },
    /// `a * sum_i x_i^4`.
    Quartic { a: f64 },
    /// `c / sqrt(|x|^2 + a^2)`.
    SoftCoulomb { c: f64, a: f64 },
    /// `-slope * |x|`: Lipschitz, not differentiable at the apex `x = 0`.
    CrossingCone { slope: f64 },
    /// Morse profile of the dimer separation `r`: `D((1 - e^{-a(r - r_eq)})^2 - 1)`.
    DimerRadial { depth: f64, range: f64, r_eq: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub layout: Layout,
    pub smooth: SmoothSurface,
    #[serde(default)]
    pub pairs: Vec<PairInteraction>,
    #[serde(default = "default_guard")]
    pub guard_radius: f64,
}

fn default_guard() -> f64 {
    DEFAULT_GUARD_RADIUS
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

impl PotentialSpec {
    pub fn flat(dim: usize, smooth: SmoothSurface) -> Self {
        PotentialSpec {
            layout: Layout::Flat { dim },
            smooth,
            pairs: Vec::new(),
            guard_radius: DEFAULT_GUARD_RADIUS,
        }
    }

    pub fn nuclear(nuclei: usize, smooth: SmoothSurface, pairs: Vec<PairInteraction>) -> Self {
        PotentialSpec {
            layout: Layout::Nuclear { nuclei },
            smooth,
            pairs,
            guard_radius: DEFAULT_GUARD_RADIUS,
        }
    }

    /// Dimer in its relative coordinate with a single pair of coupling `c`.
    pub fn relative(smooth: SmoothSurface, c: f64) -> Self {
        PotentialSpec {
            layout: Layout::Relative,
            smooth,
            pairs: vec![PairInteraction { alpha: 0, beta: 1, c }],
            guard_radius: DEFAULT_GUARD_RADIUS,
        }
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        let invalid = |key, reason: String| Err(PotentialError::Invalid { key, reason });
        let d = self.dim();
        if d == 0 {
            return invalid("layout", "dimension must be positive".into());
        }
        if !(self.guard_radius > 0.0) {
            return invalid("guard_radius", "must be positive".into());
        }
        let m = self.layout.nuclei();
        match self.layout {
            Layout::Flat { .. } if !self.pairs.is_empty() => {
                return invalid("pairs", "pair terms require a nuclear or relative layout".into())
            }
            Layout::Relative if self.pairs.len() > 1 => {
                return invalid("pairs", "relative layout carries at most one pair".into())
            }
            _ => {}
        }
        for p in &self.pairs {
            if !(p.c >= 0.0) || !p.c.is_finite() {
                return invalid("pairs", format!("coupling {} must be finite and >= 0", p.c));
            }
            if p.alpha >= p.beta || p.beta >= m {
                return invalid(
                    "pairs",
                    format!("pair ({}, {}) must satisfy alpha < beta < {}", p.alpha, p.beta, m),
                );
            }
        }
        match &self.smooth {
            SmoothSurface::Harmonic { stiffness } => {
                if stiffness.len() != 1 && stiffness.len() != d {
                    return invalid("smooth.stiffness", format!("expected 1 or {d} values"));
                }
                if stiffness.iter().any(|k| !(*k >= 0.0)) {
                    return invalid("smooth.stiffness", "stiffness must be >= 0".into());
                }
            }
            SmoothSurface::Quartic { a } if !(*a >= 0.0) => {
                return invalid("smooth.a", "quartic coefficient must be >= 0".into())
            }
            SmoothSurface::SoftCoulomb { a, .. } if !(*a > 0.0) => {
                return invalid("smooth.a", "soft-core radius must be positive".into())
            }
            SmoothSurface::DimerRadial { range, .. } => {
                if !matches!(self.layout, Layout::Nuclear { nuclei: 2 } | Layout::Relative) {
                    return invalid(
                        "smooth",
                        "dimer_radial requires a nuclear layout with two nuclei or the relative layout"
                            .into(),
                    );
                }
                if !(*range > 0.0) {
                    return invalid("smooth.range", "must be positive".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), PotentialError> {
        if x.len() != self.dim() {
            return Err(PotentialError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `R_alpha - R_beta` for a pair (the coordinate itself in the relative layout).
    fn separation_vector(&self, x: &[f64], alpha: usize, beta: usize) -> [f64; 3] {
        match self.layout {
            Layout::Relative => [x[0], x[1], x[2]],
            _ => {
                let (a, b) = (3 * alpha, 3 * beta);
                [x[a] - x[b], x[a + 1] - x[b + 1], x[a + 2] - x[b + 2]]
            }
        }
    }

    /// Separation of the dimer nuclei, if the layout has exactly one.
    fn dimer_separation(&self, x: &[f64]) -> ([f64; 3], f64) {
        let v = self.separation_vector(x, 0, 1);
        (v, norm(&v))
    }

    fn active_pairs(&self) -> impl Iterator<Item = &PairInteraction> {
        self.pairs.iter().filter(|p| p.c != 0.0)
    }

    pub fn eval_ub(&self, x: &[f64]) -> f64 {
        match &self.smooth {
            SmoothSurface::Zero => 0.0,
            SmoothSurface::Harmonic { stiffness } => x
                .iter()
                .enumerate()
                .map(|(i, xi)| 0.5 * stiffness[i.min(stiffness.len() - 1)] * xi * xi)
                .sum(),
            SmoothSurface::Quartic { a } => a * x.iter().map(|v| v.powi(4)).sum::<f64>(),
            SmoothSurface::SoftCoulomb { c, a } => {
                c / (x.iter().map(|v| v * v).sum::<f64>() + a * a).sqrt()
            }
            SmoothSurface::CrossingCone { slope } => -slope * norm(x),
            SmoothSurface::DimerRadial { depth, range, r_eq } => {
                let (_, r) = self.dimer_separation(x);
                let e = (-range * (r - r_eq)).exp();
                depth * ((1.0 - e).powi(2) - 1.0)
            }
        }
    }

    /// Coulomb part. Errors only when an active pair coincides exactly.
    pub fn eval_us(&self, x: &[f64]) -> Result<f64, PotentialError> {
        self.check_dim(x)?;
        let mut total = 0.0;
        for p in self.active_pairs() {
            let r = norm(&self.separation_vector(x, p.alpha, p.beta));
            if r == 0.0 {
                return Err(PotentialError::SingularPoint {
                    alpha: p.alpha,
                    beta: p.beta,
                    distance: 0.0,
                });
            }
            total += p.c / r;
        }
        Ok(total)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, PotentialError> {
        Ok(self.eval_ub(x) + self.eval_us(x)?)
    }

    /// Minimum separation over active pairs; `+inf` when there are none.
    pub fn dist_to_singular(&self, x: &[f64]) -> f64 {
        self.active_pairs()
            .map(|p| norm(&self.separation_vector(x, p.alpha, p.beta)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance to the points where the smooth surface fails to be C^1.
    pub fn dist_to_kink(&self, x: &[f64]) -> f64 {
        match self.smooth {
            SmoothSurface::CrossingCone { slope } if slope != 0.0 => norm(x),
            SmoothSurface::DimerRadial { depth, .. } if depth != 0.0 => self.dimer_separation(x).1,
            _ => f64::INFINITY,
        }
    }

    /// Distance to the union of the singular set and the non-C^1 points of `U_b`.
    pub fn dist_to_irregular(&self, x: &[f64]) -> f64 {
        self.dist_to_singular(x).min(self.dist_to_kink(x))
    }

    /// `U_s(x)^2`, the integrable majorant of `|grad U_s|`.
    pub fn singular_weight(&self, x: &[f64]) -> Result<f64, PotentialError> {
        Ok(self.eval_us(x)?.powi(2))
    }

    pub fn max_coupling(&self) -> f64 {
        self.active_pairs().map(|p| p.c).fold(0.0, f64::max)
    }

    pub fn has_singular_part(&self) -> bool {
        self.active_pairs().next().is_some()
    }

    /// Constant `C0` with `|grad U_s| <= C0 * U_s^2` everywhere off the singular set.
    ///
    /// Each pair contributes a gradient of norm `kappa * c / r^2`, where `kappa` is
    /// the separation's Lipschitz constant, and `U_s^2 >= min(c) * sum c / r^2`.
    pub fn majorant_constant(&self) -> f64 {
        let min_c = self.active_pairs().map(|p| p.c).fold(f64::INFINITY, f64::min);
        if min_c.is_finite() {
            self.layout.separation_lipschitz() / min_c
        } else {
            0.0
        }
    }

    pub fn grad_ub(&self, x: &[f64]) -> Result<Vec<f64>, PotentialError> {
        self.check_dim(x)?;
        let d = x.len();
        let mut g = vec![0.0; d];
        match &self.smooth {
            SmoothSurface::Zero => {}
            SmoothSurface::Harmonic { stiffness } => {
                for i in 0..d {
                    g[i] = stiffness[i.min(stiffness.len() - 1)] * x[i];
                }
            }
            SmoothSurface::Quartic { a } => {
                for i in 0..d {
                    g[i] = 4.0 * a * x[i].powi(3);
                }
            }
            SmoothSurface::SoftCoulomb { c, a } => {
                let s = x.iter().map(|v| v * v).sum::<f64>() + a * a;
                let f = -c / (s * s.sqrt());
                for i in 0..d {
                    g[i] = f * x[i];
                }
            }
            SmoothSurface::CrossingCone { slope } => {
                let r = norm(x);
                if *slope != 0.0 {
                    if r <= self.guard_radius {
                        return Err(PotentialError::NonDifferentiable);
                    }
                    for i in 0..d {
                        g[i] = -slope * x[i] / r;
                    }
                }
            }
            SmoothSurface::DimerRadial { depth, range, r_eq } => {
                let (v, r) = self.dimer_separation(x);
                if *depth != 0.0 {
                    if r <= self.guard_radius {
                        return Err(PotentialError::NonDifferentiable);
                    }
                    let e = (-range * (r - r_eq)).exp();
                    let du = 2.0 * depth * range * (1.0 - e) * e;
                    self.scatter_pair_gradient(&mut g, 0, 1, &v, du / r);
                }
            }
        }
        Ok(g)
    }

    /// Adds `f * v` to the `R_alpha` block and `-f * v` to the `R_beta` block.
    fn scatter_pair_gradient(&self, g: &mut [f64], alpha: usize, beta: usize, v: &[f64; 3], f: f64) {
        match self.layout {
            Layout::Relative => {
                for k in 0..3 {
                    g[k] += f * v[k];
                }
            }
            _ => {
                for k in 0..3 {
                    g[3 * alpha + k] += f * v[k];
                    g[3 * beta + k] -= f * v[k];
                }
            }
        }
    }

    pub fn grad_us(&self, x: &[f64]) -> Result<Vec<f64>, PotentialError> {
        self.check_dim(x)?;
        let mut g = vec![0.0; x.len()];
        for p in self.active_pairs() {
            let v = self.separation_vector(x, p.alpha, p.beta);
            let r = norm(&v);
            if r <= self.guard_radius {
                return Err(PotentialError::SingularPoint {
                    alpha: p.alpha,
                    beta: p.beta,
                    distance: r,
                });
            }
            // grad_{R_alpha} c/r = -c (R_alpha - R_beta) / r^3
            self.scatter_pair_gradient(&mut g, p.alpha, p.beta, &v, -p.c / (r * r * r));
        }
        Ok(g)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, PotentialError> {
        let mut g = self.grad_us(x)?;
        for (gi, bi) in g.iter_mut().zip(self.grad_ub(x)?) {
            *gi += bi;
        }
        Ok(g)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("potential spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
