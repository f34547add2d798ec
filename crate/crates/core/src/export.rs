//! On-disk formats: raw field snapshots with JSON sidecars, ensemble and sweep CSV
//! tables, and the per-run manifest.
//!
//! Raw fields are little-endian `f64` in row-major grid order: `(re, im)` pairs for
//! wave functions, plain values for phase-space fields (position index major).

use crate::classical::Ensemble;
use crate::convergence::{self, ConvergenceError, SweepResult};
use crate::grid::Grid;
use crate::quantum::WaveFunction;
use crate::wigner::PhaseSpaceField;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub lower: Vec<f64>,
    pub extent: Vec<f64>,
    pub points: Vec<usize>,
    pub stagger: Vec<f64>,
}

impl From<&Grid> for GridMeta {
    fn from(g: &Grid) -> Self {
        GridMeta { lower: g.lower.clone(), extent: g.extent.clone(), points: g.points.clone(), stagger: g.stagger.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub grid: GridMeta,
    pub eps: f64,
    pub t: f64,
    pub potential_hash: String,
    /// `wave`, `wigner` or `husimi`.
    pub value_type: String,
    /// `complex128-le` (re, im pairs) or `float64-le`.
    pub dtype: String,
    /// Momentum axes of phase-space fields.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p_axes: Vec<Vec<f64>>,
    pub count: usize,
}

fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

/// Writes `<path>` (raw) and `<path>` with a `.json` extension (sidecar).
pub fn write_wave(path: &Path, wf: &WaveFunction, potential_hash: &str) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(wf.values.len() * 16);
    for v in &wf.values {
        bytes.extend_from_slice(&v.re.to_le_bytes());
        bytes.extend_from_slice(&v.im.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let meta = FieldSidecar {
        grid: (&wf.grid).into(),
        eps: wf.eps,
        t: wf.time,
        potential_hash: potential_hash.into(),
        value_type: "wave".into(),
        dtype: "complex128-le".into(),
        p_axes: Vec::new(),
        count: wf.values.len(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta).expect("sidecar serializes"))
}

pub fn write_phase_field(path: &Path, field: &PhaseSpaceField, kind: &str, potential_hash: &str) -> std::io::Result<()> {
    let bytes: Vec<u8> = field.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    let meta = FieldSidecar {
        grid: (&field.grid).into(),
        eps: field.eps,
        t: field.time,
        potential_hash: potential_hash.into(),
        value_type: kind.into(),
        dtype: "float64-le".into(),
        p_axes: field.p_axes.clone(),
        count: field.values.len(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta).expect("sidecar serializes"))
}

fn invalid(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

/// Reads a wave-function snapshot and its sidecar back.
pub fn read_wave(path: &Path) -> std::io::Result<(FieldSidecar, WaveFunction)> {
    let meta: FieldSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?).map_err(|e| invalid(e.to_string()))?;
    if meta.dtype != "complex128-le" {
        return Err(invalid(format!("expected complex128-le, found {}", meta.dtype)));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != meta.count * 16 {
        return Err(invalid(format!("expected {} bytes, found {}", meta.count * 16, bytes.len())));
    }
    let g = &meta.grid;
    let grid = Grid::new(g.lower.clone(), g.extent.clone(), g.points.clone(), g.stagger.clone()).map_err(|e| invalid(e.to_string()))?;
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
    let values = bytes.chunks_exact(16).map(|c| Complex64::new(f(&c[..8]), f(&c[8..]))).collect();
    let wf = WaveFunction { grid, eps: meta.eps, time: meta.t, values };
    Ok((meta, wf))
}

/// One row per particle and snapshot: `t, id, x0.., p0.., w, stopped`.
pub fn write_ensemble_csv(path: &Path, snapshots: &[Ensemble]) -> Result<(), ConvergenceError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let d = snapshots.first().and_then(|e| e.particles.first()).map_or(0, |p| p.x.len());
    let mut header = vec!["t".to_string(), "id".to_string()];
    header.extend((0..d).map(|a| format!("x{a}")));
    header.extend((0..d).map(|a| format!("p{a}")));
    header.extend(["w".to_string(), "stopped".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    for e in snapshots {
        for (i, p) in e.particles.iter().enumerate() {
            let mut rec = vec![e.time.to_string(), i.to_string()];
            rec.extend(p.x.iter().chain(&p.p).map(f64::to_string));
            rec.push(p.w.to_string());
            rec.push(p.stopped.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> ConvergenceError {
    ConvergenceError::Io(e.to_string())
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ConvergenceError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PairingRow<'a> {
    eps: f64,
    t: f64,
    phi_id: &'a str,
    quantum: f64,
    classical: f64,
    a_norm: f64,
    in_scope: bool,
}

#[derive(Serialize)]
struct DistanceRow {
    eps: f64,
    t: f64,
    weak_distance: Option<f64>,
    out_of_scope_distance: Option<f64>,
    classical_stopped: f64,
}

#[derive(Serialize)]
struct RateRow {
    t: f64,
    slope: Option<f64>,
    intercept: Option<f64>,
    residual: Option<f64>,
    used_eps: String,
    excluded_eps: String,
}

#[derive(Serialize)]
struct RemainderRow<'a> {
    eps: f64,
    t: f64,
    phi_id: &'a str,
    remainder: Option<f64>,
}

#[derive(Serialize)]
struct ConservationRow {
    eps: f64,
    t: f64,
    norm: f64,
    energy: f64,
    kinetic: f64,
    h_norm: f64,
    boundary_mass: f64,
    singular_l2: Option<f64>,
}

#[derive(Serialize)]
struct LadderRow {
    eps: f64,
    t: f64,
    scale: f64,
    value: f64,
    bound: Option<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// Writes `results.json`, the CSV tables and one `estimates_eps<i>.json` per cell.
pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>, ConvergenceError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join("results.json");
    convergence::persist(result, &path)?;
    written.push(path);

    let ids: Vec<&str> = result.dictionary.iter().map(|e| e.probe.id.as_str()).collect();
    let ids_ref = &ids;
    let path = dir.join("pairings.csv");
    write_rows(
        &path,
        result.cells.iter().flat_map(|c| {
            c.quantum.iter().zip(&c.classical).zip(&c.times).flat_map(move |((q, cl), &t)| {
                result.dictionary.iter().enumerate().map(move |(i, e)| PairingRow {
                    eps: c.eps,
                    t,
                    phi_id: ids_ref[i],
                    quantum: q[i],
                    classical: cl[i],
                    a_norm: e.a_norm,
                    in_scope: e.in_scope,
                })
            })
        }),
    )?;
    written.push(path);

    let path = dir.join("distances.csv");
    write_rows(
        &path,
        result.cells.iter().flat_map(|c| {
            (0..c.weak_distance.len()).map(move |k| DistanceRow {
                eps: c.eps,
                t: c.times[k],
                weak_distance: c.weak_distance[k],
                out_of_scope_distance: c.out_of_scope_distance[k],
                classical_stopped: c.classical_stopped[k],
            })
        }),
    )?;
    written.push(path);

    let path = dir.join("rates.csv");
    write_rows(
        &path,
        result.rates.iter().map(|r| RateRow {
            t: r.t,
            slope: r.fit.map(|f| f.slope),
            intercept: r.fit.map(|f| f.intercept),
            residual: r.fit.map(|f| f.residual),
            used_eps: join(&r.used_eps),
            excluded_eps: join(&r.excluded_eps),
        }),
    )?;
    written.push(path);

    let path = dir.join("remainders.csv");
    write_rows(
        &path,
        result.cells.iter().flat_map(|c| {
            c.remainders.iter().zip(&c.times).flat_map(move |(r, &t)| {
                r.iter().enumerate().map(move |(i, v)| RemainderRow { eps: c.eps, t, phi_id: ids_ref[i], remainder: *v })
            })
        }),
    )?;
    written.push(path);

    let path = dir.join("conservation.csv");
    write_rows(
        &path,
        result.cells.iter().flat_map(|c| {
            c.conservation.iter().enumerate().map(move |(k, s)| ConservationRow {
                eps: c.eps,
                t: s.t,
                norm: s.norm,
                energy: s.energy,
                kinetic: s.kinetic,
                h_norm: s.h_norm,
                boundary_mass: s.boundary_mass,
                singular_l2: c.estimates.as_ref().and_then(|r| r.samples.get(k)).map(|s| s.singular_l2),
            })
        }),
    )?;
    written.push(path);

    let path = dir.join("near_singular.csv");
    write_rows(
        &path,
        result.cells.iter().filter_map(|c| c.estimates.as_ref().map(|r| (c.eps, r))).flat_map(|(eps, r)| {
            r.samples.iter().flat_map(move |s| {
                r.delta_ladder.iter().zip(&s.near_singular).map(move |(&delta, &m)| LadderRow { eps, t: s.t, scale: delta, value: m, bound: None })
            })
        }),
    )?;
    written.push(path);

    let path = dir.join("tails.csv");
    write_rows(
        &path,
        result.cells.iter().filter_map(|c| c.estimates.as_ref().map(|r| (c.eps, r))).flat_map(|(eps, r)| {
            r.samples.iter().flat_map(move |s| {
                r.radius_ladder.iter().enumerate().map(move |(i, &radius)| LadderRow {
                    eps,
                    t: s.t,
                    scale: radius,
                    value: s.tails[i],
                    bound: s.tightness_bound.get(i).copied(),
                })
            })
        }),
    )?;
    written.push(path);

    for (i, c) in result.cells.iter().enumerate() {
        if let Some(rep) = &c.estimates {
            let path = dir.join(format!("estimates_eps{i}.json"));
            fs::write(&path, serde_json::to_string_pretty(rep).expect("report serializes"))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Top-level record of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: Vec<String>,
    pub config_hash: String,
    pub potential_hash: String,
    pub started_unix: f64,
    pub wall_time_s: f64,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub exit_code: i32,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{make_packet, PacketSpec};

    #[test]
    fn wave_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::centered(2, 8.0, 32).unwrap();
        let wf = make_packet(&grid, 0.5, &PacketSpec::coherent(vec![0.5, -0.5], vec![0.5, 0.0])).unwrap();
        let path = dir.path().join("psi.bin");
        write_wave(&path, &wf, "abc").unwrap();
        let (meta, back) = read_wave(&path).unwrap();
        assert_eq!(meta.potential_hash, "abc");
        assert_eq!(back, wf);
        assert_eq!(fs::metadata(&path).unwrap().len(), 16 * 1024);
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::centered(1, 8.0, 16).unwrap();
        let wf = WaveFunction::zeros(grid, 0.5);
        let path = dir.path().join("psi.bin");
        write_wave(&path, &wf, "h").unwrap();
        fs::write(&path, [0u8; 40]).unwrap();
        assert!(read_wave(&path).is_err());
    }
}
