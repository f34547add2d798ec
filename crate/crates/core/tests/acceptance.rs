//! Acceptance suite: one pass/fail line per criterion, run against the shipped configs.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use qclab::classical::{self, Ensemble, Particle, StepOptions};
use qclab::config::ExperimentConfig;
use qclab::convergence::{self, SweepResult};
use qclab::estimates;
use qclab::fit::least_squares;
use qclab::grid::Grid;
use qclab::potential::{PairInteraction, PotentialSpec, SmoothSurface};
use qclab::probe::{a_norm, TestFunction};
use qclab::quantum::{self, make_packet, WaveFunction};
use qclab::wigner::{self, folded_momentum_density, husimi, wigner_full};

type Outcome = Result<String, String>;

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ExperimentConfig::from_json(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn initial_state(cfg: &ExperimentConfig, eps_index: usize) -> WaveFunction {
    convergence::state_at(cfg, eps_index, 0).expect("initial state")
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct O(N^2)-per-row summation of the grid-aligned discrete Wigner function in d = 1.
fn wigner_direct(wf: &WaveFunction) -> Vec<f64> {
    let n = wf.grid.points[0];
    let h = wf.grid.spacing(0);
    let len = wf.grid.extent[0];
    let eps = wf.eps;
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in -(n as isize) / 2..(n as isize) / 2 {
            let p = PI * eps * k as f64 / len;
            let mut s = Complex64::new(0.0, 0.0);
            for m in 0..n {
                let a = wf.values[(j + m) % n];
                let b = wf.values[(j + n - m) % n].conj();
                s += a * b * Complex64::from_polar(1.0, -2.0 * p * m as f64 * h / eps);
            }
            out.push(s.re * h / (PI * eps));
        }
    }
    out
}

fn wigner_oracle() -> Outcome {
    let grid = Grid::cube(1, -3.0, 6.0, 16, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut wf = WaveFunction::from_fn(grid, 0.5, |_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    wf.normalize();
    let fft = wigner_full(&wf).map_err(|e| e.to_string())?;
    let direct_err = max_abs_diff(&fft.values, &wigner_direct(&wf));

    let cfg = config("wigner_oracle.json");
    let wf = initial_state(&cfg, 0);
    let n = wf.grid.points[0];
    let x0 = wf.grid.coord(0, n / 2);
    let w = wigner_full(&wf).map_err(|e| e.to_string())?;
    let p0 = w.p_axes[0][n / 2];
    let gauss_err = (w.at(n / 2, n / 2) - 1.0 / PI).abs();
    verdict(
        direct_err <= 1e-12 && gauss_err <= 1e-4 && x0 == 0.0 && p0 == 0.0,
        format!("N=16 FFT vs direct {direct_err:.2e} (tol 1e-12); |W(0,0) - 1/pi| = {gauss_err:.2e} at N={n} (tol 1e-4)"),
    )
}

fn marginals(states: &[(String, WaveFunction)]) -> Outcome {
    let errors = states
        .par_iter()
        .map(|(label, wf)| {
            let w = wigner_full(wf).map_err(|e| format!("{label}: {e}"))?;
            let dx = max_abs_diff(&w.position_marginal(), &quantum::position_density(wf));
            let dp = max_abs_diff(&w.momentum_marginal(), &folded_momentum_density(wf));
            Ok((dx.max(dp), label.clone()))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let worst = errors.into_iter().fold((0.0f64, String::new()), |a, b| if b.0 >= a.0 { b } else { a });
    verdict(worst.0 <= 1e-8, format!("{} states, worst {:.2e} ({}) (tol 1e-8)", states.len(), worst.0, worst.1))
}

fn elest_bound() -> Outcome {
    let cfg = config("elest.json");
    let eps = cfg.eps[0];
    let plan = cfg.plan(eps, cfg.packet_p_max(eps)).map_err(|e| e.to_string())?;
    let grid = cfg.grid_for(&plan).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.estimates.commutator_seed);
    let d = grid.dim() as i32;
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for i in 0..500 {
        let values = estimates::random_gaussian_mixture(&grid, 1 + i % 4, &mut rng);
        let wf = WaveFunction { grid: grid.clone(), eps, time: 0.0, values };
        let phi = TestFunction::new(
            format!("r{i}"),
            vec![rng.random_range(-1.5..1.5)],
            vec![rng.random_range(-2.0..2.0)],
            vec![rng.random_range(0.2..1.0)],
            vec![rng.random_range(0.2..1.0)],
        )
        .with_amplitude(rng.random_range(-2.0..2.0));
        let lhs = wigner::pair(&wf, &phi).map_err(|e| e.to_string())?.abs();
        let rhs = wf.norm_sqr() * a_norm(&phi) / (2.0 * PI).powi(d);
        worst = worst.max(lhs / rhs);
        if lhs > rhs {
            violations += 1;
        }
    }
    verdict(violations == 0, format!("500 pairs, {violations} violations, largest |pairing|/bound = {worst:.4}"))
}

fn unitarity(result: &SweepResult) -> Outcome {
    let cell = &result.cells[0];
    let norm = cell.norm_drift().unwrap_or(f64::INFINITY);
    let energy = cell.relative_energy_drift().unwrap_or(f64::INFINITY);
    verdict(
        cell.is_complete() && cell.plan.total_steps >= 10_000 && norm <= 1e-8 && energy <= 1e-6,
        format!(
            "{} steps, norm drift {norm:.2e} (tol 1e-8), energy drift {energy:.2e} (tol 1e-6)",
            cell.plan.total_steps
        ),
    )
}

fn quadratic_exactness(result: &SweepResult) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    for cell in &result.cells {
        for d in &cell.weak_distance {
            match d {
                Some(v) => worst = worst.max(*v),
                None => missing += 1,
            }
        }
    }
    let eps: Vec<f64> = result.cells.iter().map(|c| c.eps).collect();
    verdict(
        !result.partial && missing == 0 && worst <= 5e-3,
        format!("eps {eps:?}, max weak distance {worst:.2e} over all snapshots (tol 5e-3)"),
    )
}

fn final_distance_line(result: &SweepResult) -> (bool, String) {
    let d = result.final_distances();
    let vals: Vec<f64> = d.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let decreasing = d.iter().all(Option::is_some) && vals.windows(2).all(|w| w[1] < w[0]);
    let text: Vec<String> = vals.iter().map(|v| format!("{v:.3e}")).collect();
    (decreasing, text.join(" > "))
}

fn semiclassical(result: &SweepResult) -> Outcome {
    let (decreasing, line) = final_distance_line(result);
    let rate = result.rates.last().and_then(|r| r.fit.as_ref());
    let slope = rate.map_or(f64::NAN, |f| f.slope);
    verdict(
        decreasing && !result.partial && slope > 0.0,
        format!("t = {}: distances {line}, log-log slope {slope:.3}", result.snapshot_times.last().unwrap()),
    )
}

fn remainder(result: &SweepResult) -> Outcome {
    let (worst, compared) = convergence::remainder_decay(&result.cells, &result.dictionary, 1e-12, 2.0);
    let in_scope = result.dictionary.iter().filter(|e| e.in_scope).count();
    verdict(
        compared > 0 && worst >= 2.0,
        format!("{in_scope} smooth-region probes, {compared} halvings compared, smallest sup_t decay factor {worst:.3} (tol 2)"),
    )
}

fn coulomb_bound(result: &SweepResult) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = !result.partial;
    for cell in &result.cells {
        let Some(report) = &cell.estimates else {
            return Err(format!("eps={} has no estimates", cell.eps));
        };
        let bound = report.check("singular_bound");
        let trend = report.check("singular_trend");
        ok &= bound.is_some_and(|c| c.passed && c.value <= 10.0) && trend.is_some_and(|c| c.passed);
        lines.push(format!(
            "eps={}: ratio {:.3}, trend slope {:.2e} <= {:.2e}",
            cell.eps,
            bound.map_or(f64::NAN, |c| c.value),
            trend.map_or(f64::NAN, |c| c.value),
            trend.map_or(f64::NAN, |c| c.threshold)
        ));
    }
    verdict(ok, lines.join("; "))
}

fn no_concentration(result: &SweepResult, ladder: &[f64]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for cell in &result.cells {
        let Some(report) = &cell.estimates else {
            return Err(format!("eps={} has no estimates", cell.eps));
        };
        let full = report.delta_ladder == ladder
            && report.excluded_deltas.is_empty()
            && report.samples.iter().all(|s| s.near_singular.len() == ladder.len());
        let slope = report.concentration_fit.as_ref().map_or(f64::NAN, |f| f.slope);
        ok &= full && slope >= 1.5;
        let at = report.closest_approach.map(|i| report.samples[i].t).unwrap_or(f64::NAN);
        lines.push(format!("eps={}: slope {slope:.3} at t={at:.3}, ladder {}", cell.eps, if full { "full" } else { "truncated" }));
    }
    verdict(ok, format!("{} (tol 1.5)", lines.join("; ")))
}

fn commutator(cfg: &ExperimentConfig) -> Outcome {
    let eps = cfg.eps[0];
    let plan = cfg.plan(eps, cfg.packet_p_max(eps)).map_err(|e| e.to_string())?;
    let grid = cfg.grid_for(&plan).map_err(|e| e.to_string())?;
    let count = cfg.estimates.commutator_states;
    let values = convergence::commutator_survey(&grid, &cfg.potential, count, cfg.estimates.commutator_seed)
        .map_err(|e| e.to_string())?;
    let worst = values.iter().map(|(v, s)| v / s).fold(f64::INFINITY, f64::min);
    verdict(
        values.len() == 100 && worst >= -1e-9,
        format!("{} states on {:?}, min relative value {worst:.3e} (tol -1e-9)", values.len(), grid.points),
    )
}

fn tightness(runs: &[(&str, &SweepResult)]) -> Outcome {
    let mut samples = 0;
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for (name, result) in runs {
        for cell in &result.cells {
            let Some(report) = &cell.estimates else {
                return Err(format!("{name} eps={} has no estimates", cell.eps));
            };
            if report.radius_ladder.is_empty() {
                return Err(format!("{name} has no radius ladder"));
            }
            ok &= report.check("tightness").is_some_and(|c| c.passed);
            for s in &report.samples {
                samples += 1;
                for (tail, bound) in s.tails.iter().zip(&s.tightness_bound) {
                    worst = worst.min(bound - tail);
                    ok &= tail <= bound;
                }
            }
        }
    }
    verdict(ok, format!("{} runs, {samples} snapshots, smallest bound - tail = {worst:.3e}", runs.len()))
}

fn single(x: Vec<f64>, p: Vec<f64>) -> Ensemble {
    Ensemble { particles: vec![Particle { x, p, w: 1.0, stopped: false }], time: 0.0 }
}

fn turning_radius_error(spec: &PotentialSpec, start: Ensemble, c: f64, steps: usize) -> Result<f64, String> {
    let energy = classical::particle_energy(spec, &start.particles[0]).map_err(|e| e.to_string())?;
    let r_star = c / energy;
    let opts = StepOptions::default();
    let mut e = start;
    let mut r_min = f64::INFINITY;
    for _ in 0..steps {
        e = classical::step(&e, spec, 1e-4, &opts).map_err(|e| e.to_string())?;
        r_min = r_min.min(spec.dist_to_singular(&e.particles[0].x));
    }
    Ok(((r_min - r_star) / r_star).abs())
}

fn classical_integrator() -> Outcome {
    let harmonic = PotentialSpec::flat(1, SmoothSurface::Harmonic { stiffness: vec![1.0] });
    let out = classical::push_forward(&single(vec![0.0], vec![1.0]), &harmonic, PI / 2.0, 1e-4, &StepOptions::default())
        .map_err(|e| e.to_string())?;
    let q = &out.particles[0];
    let quarter = (q.x[0] - 1.0).abs().max(q.p[0].abs());

    let c = 1.0;
    let nuclear = PotentialSpec::nuclear(2, SmoothSurface::Zero, vec![PairInteraction { alpha: 0, beta: 1, c }]);
    let head_on = single(vec![0.0, 0.0, -1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0, 0.0, 0.0, -1.0]);
    let turning_nuclear = turning_radius_error(&nuclear, head_on, c, 25_000)?;
    let relative = PotentialSpec::relative(SmoothSurface::Zero, c);
    let turning_relative = turning_radius_error(&relative, single(vec![0.0, 0.0, 2.0], vec![0.0, 0.0, -1.0]), c, 40_000)?;

    // Liouville residual with one integrator step per snapshot, halving the spacing.
    let cfg = config("classical_checks.json");
    let dictionary = convergence::build_dictionary(&cfg).map_err(|e| e.to_string())?;
    let (mode, n) = cfg.classical.mode.sampling(cfg.eps[0]);
    let e0 = classical::sample_initial(&cfg.packet, mode, n, cfg.classical.seed).map_err(|e| e.to_string())?;
    let opts = cfg.classical.step_options();
    // coarser spacings under-resolve the time windows and converge faster than second order
    let counts = [161usize, 321, 641];
    let mut slopes = Vec::new();
    let mut detail = Vec::new();
    for entry in &dictionary {
        let mut spacing = Vec::new();
        let mut residual = Vec::new();
        for &count in &counts {
            let traj = classical::trajectory(&e0, &cfg.potential, cfg.final_time, count, 1, &opts).map_err(|e| e.to_string())?;
            spacing.push((cfg.final_time / (count - 1) as f64).ln());
            residual.push(classical::liouville_residual(&traj, &cfg.potential, &entry.probe).map_err(|e| e.to_string())?.ln());
        }
        let slope = least_squares(&spacing, &residual).map_or(f64::NAN, |f| f.slope);
        let orders: Vec<String> = residual.windows(2).map(|w| format!("{:.3}", (w[0] - w[1]) / 2f64.ln())).collect();
        detail.push(format!("{} {slope:.3} (halvings {})", entry.probe.id, orders.join(", ")));
        slopes.push(slope);
    }
    let liouville_ok = !slopes.is_empty() && slopes.iter().all(|s| (1.8..=2.2).contains(s));
    verdict(
        quarter <= 1e-7 && turning_nuclear <= 1e-6 && turning_relative <= 1e-6 && liouville_ok,
        format!(
            "quarter period {quarter:.2e} (tol 1e-7); turning radius rel. error {turning_nuclear:.2e} nuclear, {turning_relative:.2e} relative (tol 1e-6); Liouville residual order {} (want 2 +- 0.2)",
            detail.join("; ")
        ),
    )
}

fn cat_state() -> WaveFunction {
    let cfg = config("husimi_cat.json");
    let eps = cfg.eps[0];
    let plan = cfg.plan(eps, cfg.packet_p_max(eps)).unwrap();
    let grid = cfg.grid_for(&plan).unwrap();
    let right = make_packet(&grid, eps, &cfg.packet).unwrap();
    let mut mirror = cfg.packet.clone();
    mirror.x0[0] = -mirror.x0[0];
    let left = make_packet(&grid, eps, &mirror).unwrap();
    let mut cat = right.clone();
    for (c, l) in cat.values.iter_mut().zip(&left.values) {
        *c += l;
    }
    cat.normalize();
    cat
}

fn husimi_nonnegative(states: &[(String, WaveFunction)]) -> Outcome {
    let cat = cat_state();
    let raw = wigner_full(&cat).map_err(|e| e.to_string())?;
    let interference = raw.min() < -0.01 * raw.max();
    let mut worst = (f64::INFINITY, String::new());
    for (label, wf) in states.iter().chain(std::iter::once(&("cat".to_string(), cat.clone()))) {
        let q = husimi(wf).map_err(|e| format!("{label}: {e}"))?;
        if q.min() < worst.0 {
            worst = (q.min(), label.clone());
        }
    }
    verdict(
        worst.0 >= -1e-12 && interference,
        format!(
            "{} states, min Husimi {:.3e} ({}) (tol -1e-12); cat raw Wigner min/max = {:.3}",
            states.len() + 1,
            worst.0,
            worst.1,
            raw.min() / raw.max()
        ),
    )
}

fn crossing_cone(result: &SweepResult) -> Outcome {
    let (decreasing, line) = final_distance_line(result);
    let out: Vec<&str> = result.dictionary.iter().filter(|e| !e.in_scope).map(|e| e.probe.id.as_str()).collect();
    let emitted = result.cells.iter().all(|c| c.out_of_scope_distance.iter().all(Option::is_some));
    let oos: Vec<String> = result
        .cells
        .iter()
        .map(|c| format!("{:.2e}", c.out_of_scope_distance.last().copied().flatten().unwrap_or(f64::NAN)))
        .collect();
    verdict(
        decreasing && !out.is_empty() && emitted && !result.partial,
        format!("distances {line}; outside theorem scope {out:?}, final distances {} (not asserted)", oos.join(", ")),
    )
}

struct Suite {
    failures: usize,
    total: usize,
}

impl Suite {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        self.total += 1;
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail} ({secs:.1} s)"),
            Err(detail) => {
                self.failures += 1;
                println!("[FAIL] {name}: {detail} ({secs:.1} s)");
            }
        }
    }
}

fn sweep(name: &str) -> SweepResult {
    convergence::run_sweep(&config(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn main() {
    let mut suite = Suite { failures: 0, total: 0 };

    suite.run("wigner_oracle", wigner_oracle);

    let mut states: Vec<(String, WaveFunction)> = Vec::new();
    for name in ["wigner_oracle.json", "husimi_cat.json", "marginals_2d.json", "elest.json", "harmonic_sweep.json", "quartic_sweep.json", "crossing_cone_sweep.json", "classical_checks.json", "unitarity.json"] {
        let cfg = config(name);
        let last = cfg.snapshot_count - 1;
        for i in 0..cfg.eps.len() {
            for snap in [0, last] {
                let wf = convergence::state_at(&cfg, i, snap).expect("shipped state");
                states.push((format!("{}[eps={}, t={}]", cfg.name, cfg.eps[i], wf.time), wf));
            }
        }
    }
    states.push(("cat".into(), cat_state()));
    suite.run("marginals", || marginals(&states));
    suite.run("elest_bound", elest_bound);

    let mut unitarity_run = None;
    suite.run("unitarity_energy", || {
        let r = convergence::run_quantum(&config("unitarity.json"), None).map_err(|e| e.to_string())?;
        let out = unitarity(&r);
        unitarity_run = Some(r);
        out
    });

    let mut harmonic = None;
    suite.run("quadratic_exactness", || {
        let r = sweep("harmonic_sweep.json");
        let out = quadratic_exactness(&r);
        harmonic = Some(r);
        out
    });

    let mut quartic = None;
    suite.run("semiclassical_convergence", || {
        let r = sweep("quartic_sweep.json");
        let out = semiclassical(&r);
        quartic = Some(r);
        out
    });
    let quartic = quartic.expect("quartic run");
    suite.run("remainder_vanishing", || remainder(&quartic));

    let dimer_cfg = config("dimer_coulomb.json");
    let mut dimer = None;
    suite.run("coulomb_apriori_bound", || {
        let r = convergence::run_quantum(&dimer_cfg, None).map_err(|e| e.to_string())?;
        let out = coulomb_bound(&r);
        dimer = Some(r);
        out
    });
    let dimer = dimer.expect("dimer run");
    suite.run("no_concentration", || no_concentration(&dimer, &dimer_cfg.estimates.delta_ladder));
    suite.run("commutator_positivity", || commutator(&dimer_cfg));

    let mut crossing = None;
    suite.run("crossing_cone_scope", || {
        let r = sweep("crossing_cone_sweep.json");
        let out = crossing_cone(&r);
        crossing = Some(r);
        out
    });

    let harmonic = harmonic.expect("harmonic run");
    let unitarity_run = unitarity_run.expect("unitarity run");
    let crossing = crossing.expect("crossing run");
    suite.run("tightness_propagation", || {
        tightness(&[
            ("harmonic_sweep", &harmonic),
            ("quartic_sweep", &quartic),
            ("crossing_cone_sweep", &crossing),
            ("dimer_coulomb", &dimer),
            ("unitarity", &unitarity_run),
        ])
    });
    suite.run("classical_integrator", classical_integrator);
    suite.run("husimi_nonnegativity", || husimi_nonnegative(&states));

    println!("{} of {} criteria passed", suite.total - suite.failures, suite.total);
    if suite.failures > 0 {
        std::process::exit(1);
    }
}
