use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use qclab::convergence::{rate_fit, weak_distance};
use qclab::grid::Grid;
use qclab::potential::{PotentialSpec, SmoothSurface};
use qclab::probe::{a_norm, TestFunction};
use qclab::quantum::{make_packet, norm, propagate, PacketSpec, WaveFunction};
use qclab::wigner::{pair, pair_bilinear, wigner_full};

/// Superposition of two packets with a relative complex weight.
fn two_packets(grid: &Grid, eps: f64, x: (f64, f64), p: (f64, f64), w: Complex64) -> WaveFunction {
    let a = make_packet(grid, eps, &PacketSpec::coherent(vec![x.0], vec![p.0])).unwrap();
    let b = make_packet(grid, eps, &PacketSpec::coherent(vec![x.1], vec![p.1])).unwrap();
    let mut wf = a.clone();
    for (v, u) in wf.values.iter_mut().zip(&b.values) {
        *v += u * w;
    }
    wf
}

fn probe_strategy() -> impl Strategy<Value = TestFunction> {
    (-2.0..2.0f64, -1.5..1.5f64, 0.2..1.0f64, 0.2..1.0f64, -2.0..2.0f64)
        .prop_map(|(x, p, sx, sp, a)| TestFunction::new("phi", vec![x], vec![p], vec![sx], vec![sp]).with_amplitude(a))
}

fn state_strategy() -> impl Strategy<Value = (f64, f64, f64, f64, f64, f64)> {
    (-2.0..2.0f64, -2.0..2.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conjugation_reflects_momentum((x0, x1, p0, p1, wr, wi) in state_strategy(), phi in probe_strategy()) {
        let grid = Grid::centered(1, 12.0, 256).unwrap();
        let wf = two_packets(&grid, 0.1, (x0, x1), (p0, p1), Complex64::new(wr, wi));
        let mut conj = wf.clone();
        conj.values.iter_mut().for_each(|v| *v = v.conj());
        let mut reflected = phi.clone();
        reflected.p0[0] = -reflected.p0[0];
        let a = pair(&conj, &phi).unwrap();
        let b = pair(&wf, &reflected).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn diagonal_pairing_is_real((x0, x1, p0, p1, wr, wi) in state_strategy(), phi in probe_strategy()) {
        let grid = Grid::centered(1, 12.0, 256).unwrap();
        let wf = two_packets(&grid, 0.1, (x0, x1), (p0, p1), Complex64::new(wr, wi));
        let v = pair_bilinear(&grid, 0.1, &wf.values, &wf.values, &phi).unwrap();
        prop_assert!(v.im.abs() < 1e-12 * (1.0 + v.re.abs()), "{v}");
    }

    #[test]
    fn elementary_bound((x0, x1, p0, p1, wr, wi) in state_strategy(), phi in probe_strategy()) {
        let grid = Grid::centered(1, 12.0, 256).unwrap();
        let wf = two_packets(&grid, 0.1, (x0, x1), (p0, p1), Complex64::new(wr, wi));
        let bound = wf.norm_sqr() * a_norm(&phi) / (2.0 * PI);
        prop_assert!(pair(&wf, &phi).unwrap().abs() <= bound);
    }

    #[test]
    fn wigner_is_real_with_unit_mass((x0, x1, p0, p1, wr, wi) in state_strategy()) {
        let grid = Grid::centered(1, 12.0, 128).unwrap();
        let mut wf = two_packets(&grid, 0.2, (x0, x1), (p0, p1), Complex64::new(wr, wi));
        wf.normalize();
        let w = wigner_full(&wf).unwrap();
        prop_assert!(w.imag_residue < 1e-12);
        prop_assert!((w.mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn propagation_preserves_norm(x0 in -1.0..1.0f64, p0 in -1.0..1.0f64, steps in 1usize..200, quartic in any::<bool>()) {
        let grid = Grid::centered(1, 10.0, 256).unwrap();
        let smooth = if quartic { SmoothSurface::Quartic { a: 0.25 } } else { SmoothSurface::Harmonic { stiffness: vec![1.0] } };
        let spec = PotentialSpec::flat(1, smooth);
        let wf = make_packet(&grid, 0.1, &PacketSpec::coherent(vec![x0], vec![p0])).unwrap();
        let out = propagate(&wf, &spec, 1e-3, steps).unwrap();
        prop_assert!((norm(&out) - norm(&wf)).abs() < 1e-12);
    }

    #[test]
    fn weak_distance_is_symmetric_and_scaled(q in prop::collection::vec(-1.0..1.0f64, 1..8), shift in -1.0..1.0f64, s in 0.1..10.0f64) {
        let c: Vec<f64> = q.iter().map(|v| v + shift).collect();
        let norms = vec![2.0; q.len()];
        let d = weak_distance(&q, &c, &norms);
        prop_assert_eq!(d, weak_distance(&c, &q, &norms));
        prop_assert!((d - shift.abs() / 2.0).abs() < 1e-12);
        let scaled: Vec<f64> = norms.iter().map(|n| n * s).collect();
        prop_assert!((weak_distance(&q, &c, &scaled) - d / s).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_recovers_power_laws(slope in 0.2..3.0f64, prefactor in 0.01..10.0f64) {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let d: Vec<f64> = eps.iter().map(|e: &f64| prefactor * e.powf(slope)).collect();
        let (fit, excluded) = rate_fit(&eps, &d).unwrap();
        prop_assert!(excluded.is_empty());
        prop_assert!((fit.slope - slope).abs() < 1e-9);
    }
}
