//! Uniform periodic tensor grids.
//!
//! Points sit at `x_j = lower + (j + stagger) h` with `h = L / N` per axis and
//! values are stored row-major (last axis fastest).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("axis {axis}: point count {points} is not a power of two >= 2")]
    NotPowerOfTwo { axis: usize, points: usize },
    #[error("axis {axis}: extent must be positive and finite")]
    BadExtent { axis: usize },
    #[error("per-axis vectors have inconsistent lengths")]
    Ragged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub extent: Vec<f64>,
    pub points: Vec<usize>,
    pub stagger: Vec<f64>,
}

impl Grid {
    pub fn new(
        lower: Vec<f64>,
        extent: Vec<f64>,
        points: Vec<usize>,
        stagger: Vec<f64>,
    ) -> Result<Self, GridError> {
        let d = lower.len();
        if d == 0 || extent.len() != d || points.len() != d || stagger.len() != d {
            return Err(GridError::Ragged);
        }
        for axis in 0..d {
            let n = points[axis];
            if n < 2 || !n.is_power_of_two() {
                return Err(GridError::NotPowerOfTwo { axis, points: n });
            }
            if !(extent[axis] > 0.0) || !extent[axis].is_finite() {
                return Err(GridError::BadExtent { axis });
            }
        }
        Ok(Grid { lower, extent, points, stagger })
    }

    /// Same box and point count on every axis.
    pub fn cube(dim: usize, lower: f64, extent: f64, points: usize, stagger: f64) -> Result<Self, GridError> {
        Grid::new(vec![lower; dim], vec![extent; dim], vec![points; dim], vec![stagger; dim])
    }

    /// Box `[-extent/2, extent/2)^d` with stagger one half.
    pub fn centered(dim: usize, extent: f64, points: usize) -> Result<Self, GridError> {
        Grid::cube(dim, -0.5 * extent, extent, points, 0.5)
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / self.points[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.lower[axis] + self.extent[axis]
    }

    pub fn coord(&self, axis: usize, j: usize) -> f64 {
        self.lower[axis] + (j as f64 + self.stagger[axis]) * self.spacing(axis)
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.points[axis]).map(|j| self.coord(axis, j)).collect()
    }

    /// Distance between consecutive entries along `axis` in the flat layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.points[axis + 1..].iter().product()
    }

    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for axis in (0..self.dim()).rev() {
            let n = self.points[axis];
            out[axis] = flat % n;
            flat /= n;
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.points).fold(0, |acc, (i, n)| acc * n + i)
    }

    /// Physical position of a flat index.
    pub fn point(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for axis in (0..self.dim()).rev() {
            let n = self.points[axis];
            out[axis] = self.coord(axis, rem % n);
            rem /= n;
        }
    }

    /// All grid positions, one `Vec` per point. Only for small grids.
    pub fn points_iter(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| {
            let mut x = vec![0.0; self.dim()];
            self.point(i, &mut x);
            x
        })
    }

    /// Angular wavenumbers `2 pi m / L` in FFT order, with `m >= N/2` mapped to `m - N`.
    pub fn wavenumbers(&self, axis: usize) -> Vec<f64> {
        let n = self.points[axis];
        let dk = 2.0 * PI / self.extent[axis];
        (0..n)
            .map(|m| {
                let m = if m >= n / 2 { m as isize - n as isize } else { m as isize };
                m as f64 * dk
            })
            .collect()
    }

    /// `|k|^2` at every Fourier index, row-major.
    pub fn k_squared(&self) -> Vec<f64> {
        let ks: Vec<Vec<f64>> = (0..self.dim()).map(|a| self.wavenumbers(a)).collect();
        let mut out = vec![0.0; self.len()];
        let mut idx = vec![0; self.dim()];
        for (i, v) in out.iter_mut().enumerate() {
            self.unravel(i, &mut idx);
            *v = idx.iter().enumerate().map(|(a, &m)| ks[a][m] * ks[a][m]).sum();
        }
        out
    }

    /// Distance from `x` to the nearest face of the box, per axis.
    pub fn boundary_distance(&self, axis: usize, x: f64) -> f64 {
        (x - self.lower[axis]).min(self.upper(axis) - x)
    }

    /// Subsample keeping every `factor`-th point per axis; the offset is chosen so
    /// the kept points are a subset of the original ones.
    pub fn coarsened(&self, factor: usize) -> Option<(Grid, Vec<usize>)> {
        if factor == 0 || self.points.iter().any(|&n| n % factor != 0 || n / factor < 2) {
            return None;
        }
        let points: Vec<usize> = self.points.iter().map(|n| n / factor).collect();
        let stagger = self.stagger.iter().map(|s| s / factor as f64).collect();
        let coarse = Grid::new(self.lower.clone(), self.extent.clone(), points, stagger).ok()?;
        let mut map = Vec::with_capacity(coarse.len());
        let mut idx = vec![0; self.dim()];
        for i in 0..coarse.len() {
            coarse.unravel(i, &mut idx);
            for v in idx.iter_mut() {
                *v *= factor;
            }
            map.push(self.ravel(&idx));
        }
        Some((coarse, map))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_and_wavenumbers() {
        let g = Grid::centered(1, 8.0, 8).unwrap();
        assert_eq!(g.spacing(0), 1.0);
        assert_eq!(g.coord(0, 0), -3.5);
        assert_eq!(g.coord(0, 7), 3.5);
        let k = g.wavenumbers(0);
        let dk = 2.0 * PI / 8.0;
        assert_eq!(k[1], dk);
        assert_eq!(k[4], -4.0 * dk);
        assert_eq!(k[7], -dk);
    }

    #[test]
    fn ravel_roundtrip() {
        let g = Grid::new(vec![0.0; 3], vec![1.0; 3], vec![4, 8, 2], vec![0.0; 3]).unwrap();
        let mut idx = vec![0; 3];
        for i in 0..g.len() {
            g.unravel(i, &mut idx);
            assert_eq!(g.ravel(&idx), i);
        }
        assert_eq!(g.stride(0), 16);
        assert_eq!(g.stride(2), 1);
    }

    #[test]
    fn rejects_bad_point_counts() {
        assert!(matches!(
            Grid::centered(1, 1.0, 12),
            Err(GridError::NotPowerOfTwo { axis: 0, points: 12 })
        ));
        assert!(Grid::centered(1, -1.0, 8).is_err());
    }

    #[test]
    fn coarsened_points_are_a_subset() {
        let g = Grid::centered(2, 4.0, 16).unwrap();
        let (c, map) = g.coarsened(2).unwrap();
        let mut x = vec![0.0; 2];
        let mut y = vec![0.0; 2];
        for (i, &j) in map.iter().enumerate() {
            c.point(i, &mut x);
            g.point(j, &mut y);
            assert!((x[0] - y[0]).abs() < 1e-14 && (x[1] - y[1]).abs() < 1e-14);
        }
    }
}
