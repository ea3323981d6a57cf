//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line
//! and then asserts the same condition. Tests share a lock so that the timing
//! criterion runs alone.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use itertools::Itertools;
use nalgebra::DVector;
use num_complex::Complex64;
use rand::seq::index;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use expose_core::analysis::{zone_components, zone_incidence};
use expose_core::attack::enumerate_failures;
use expose_core::bfs::DEFAULT_STOP_THRESHOLD;
use expose_core::detector::{confidence, IndicatorSolver, Method};
use expose_core::grid::build_incidence;
use expose_core::harness::{build_nested_zones, false_negatives, v_mag_err_pct};
use expose_core::linalg;
use expose_core::powerflow::{flat_start, jacobian, mismatch};
use expose_core::synthetic::{cycle_zone, path_zone};
use expose_core::*;

static SERIAL: Mutex<()> = Mutex::new(());

// Pinned tolerances.
const VOLTAGE_REL_TOL: f64 = 1e-6;
const RUNTIME_BUDGET_S: f64 = 300.0;
const EXPOSE_FLATNESS: f64 = 2.0;
const BFS_GROWTH: f64 = 2.0;
const TIMING_ROUNDS: usize = 5;
const BFS_TIMING_ROUNDS: usize = 3;
const CONF_FLOOR: f64 = 99.99;
const CQ_BELOW_CP_FRACTION: f64 = 0.9;
const ENVELOPE_V_MAG_PCT: f64 = 30.0;
const ENVELOPE_FN: f64 = 1.5;
const PF_ROUND_TRIP_TOL: f64 = 1e-8;
const JACOBIAN_REL_TOL: f64 = 1e-6;
const ADMITTANCE_TOL: f64 = 1e-12;

/// Tree zone on the synthetic grid: nine lines, every bus tied out.
const SYNTH_TREE: [usize; 10] = [12, 13, 14, 15, 16, 17, 18, 19, 20, 21];
/// The doubled ring line 4-5 of the synthetic grid.
const SYNTH_PAIR: [usize; 2] = [4, 5];
/// Matched, acyclic ten-line zone on the 118-bus case.
const C118_TREE: [usize; 11] = [82, 83, 85, 88, 94, 96, 97, 100, 101, 104, 106];
/// Parallel pair 89-90 of the 118-bus case.
const C118_PAIR: [usize; 2] = [89, 90];

fn case(name: &str) -> Grid {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "data", name].iter().collect();
    read_case(path).unwrap()
}

fn verdict(n: u32, what: &str, pass: bool, detail: String) {
    println!("criterion {n} [{what}]: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn rel_err(truth: &DVector<Complex64>, got: &DVector<Complex64>) -> f64 {
    (got - truth).norm() / truth.norm()
}

struct Fixture {
    name: &'static str,
    grid: Grid,
    zone: Zone,
    diag: ZoneDiagnostics,
    pre: OperatingPoint,
}

impl Fixture {
    fn new(name: &'static str, grid: Grid, nodes: &[usize]) -> Self {
        let zone = make_zone(&grid, nodes).unwrap();
        Self::from_zone(name, grid, zone)
    }

    fn from_zone(name: &'static str, grid: Grid, zone: Zone) -> Self {
        let diag = analyze(&grid, &zone);
        let pre = OperatingPoint::solve(&grid).unwrap();
        Fixture {
            name,
            grid,
            zone,
            diag,
            pre,
        }
    }

    /// `None` when the attack islands a bus or has no flow solution.
    fn simulate(&self, failed: &[usize]) -> Option<SimulatedAttack> {
        let sc = AttackScenario::new(&self.grid, self.zone.clone(), failed.to_vec()).unwrap();
        match simulate_attack(&self.grid, &sc, &self.pre) {
            Ok(sim) => Some(sim),
            Err(Error::NoSolution { .. } | Error::IslandedGrid(_)) => None,
            Err(e) => panic!("{}: {e}", self.name),
        }
    }

    fn expose(&self, sim: &SimulatedAttack) -> DetectionResult {
        expose(&self.grid, &sim.observation, &self.diag).unwrap()
    }
}

fn tree_fixtures() -> Vec<Fixture> {
    vec![
        Fixture::new("synth20", case("synth20.m"), &SYNTH_TREE),
        Fixture::new("case118", case("case118.m"), &C118_TREE),
    ]
}

#[derive(Default)]
struct Tally {
    scenarios: usize,
    excluded: usize,
    failures: Vec<String>,
}

#[test]
fn criterion_1_exact_recovery_on_matched_acyclic_zones() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let mut tally = Tally::default();
    let mut max_err = 0.0f64;
    let mut structure_ok = true;
    for fx in tree_fixtures() {
        structure_ok &= fx.diag.has_covering_matching
            && fx.diag.is_acyclic
            && fx.zone.m_h() >= 5
            && fx.diag.lambda_h == 0
            && fx.diag.gamma_h == 0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let all7: Vec<Vec<usize>> = fx.zone.h_lines.iter().copied().combinations(7).collect();
        let spot: Vec<Vec<usize>> = index::sample(&mut rng, all7.len(), 10.min(all7.len()))
            .into_iter()
            .map(|i| all7[i].clone())
            .collect();
        for f in enumerate_failures(&fx.zone.h_lines, 3).chain(spot) {
            let Some(sim) = fx.simulate(&f) else {
                tally.excluded += 1;
                continue;
            };
            tally.scenarios += 1;
            let r = fx.expose(&sim);
            let err = rel_err(&sim.true_zone_voltages(), &r.zone_voltages);
            max_err = max_err.max(err);
            if r.detected != f || err > VOLTAGE_REL_TOL {
                tally.failures.push(format!("{} F={:?}", fx.name, fx.grid.line_ids(&f)));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = structure_ok && tally.failures.is_empty() && secs < RUNTIME_BUDGET_S;
    verdict(
        1,
        "exact recovery",
        pass,
        format!(
            "{} scenarios, {} excluded, {} wrong, max rel voltage err {max_err:.2e} <= {VOLTAGE_REL_TOL:e}, {secs:.1}s < {RUNTIME_BUDGET_S}s",
            tally.scenarios,
            tally.excluded,
            tally.failures.len()
        ),
    );
    assert!(pass, "failures: {:?}", tally.failures);
}

#[test]
fn criterion_2_cycle_zone_l1_guarantee() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut tally = Tally::default();
    let mut boundary = Vec::new();
    for m in 5..=9 {
        let zg = cycle_zone(m, m as u64);
        let fx = Fixture::new("cycle", zg.grid, &zg.zone);
        assert_eq!((fx.diag.lambda_h, fx.diag.gamma_h), (0, 1));
        let below = (m - 1) / 2;
        for f in enumerate_failures(&fx.zone.h_lines, below) {
            let Some(sim) = fx.simulate(&f) else {
                tally.excluded += 1;
                continue;
            };
            tally.scenarios += 1;
            let r = fx.expose(&sim);
            if r.indicator_solver != IndicatorSolver::L1Program || r.detected != f {
                tally.failures.push(format!("m={m} F={f:?} got {:?}", r.detected));
            }
        }
        let edge = m.div_ceil(2);
        let (mut seen, mut exact) = (0, 0);
        for f in fx.zone.h_lines.iter().copied().combinations(edge) {
            if let Some(sim) = fx.simulate(&f) {
                seen += 1;
                exact += usize::from(fx.expose(&sim).detected == f);
            }
        }
        println!("  cycle m={m}: |F|={edge} boundary, {exact}/{seen} scenarios exact");
        boundary.push(seen);
    }
    let pass = tally.failures.is_empty() && tally.scenarios > 0 && boundary.iter().all(|&s| s > 0);
    verdict(
        2,
        "cycle zones, |F| < m/2",
        pass,
        format!(
            "{} scenarios exact of {}, {} excluded, boundary scenarios recorded for every m",
            tally.scenarios - tally.failures.len(),
            tally.scenarios,
            tally.excluded
        ),
    );
    assert!(pass, "failures: {:?}", tally.failures);
}

#[test]
fn criterion_3_parallel_pair_ambiguity() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut lines = Vec::new();
    let mut ok = true;
    for fx in [
        Fixture::new("synth20", case("synth20.m"), &SYNTH_PAIR),
        Fixture::new("case118", case("case118.m"), &C118_PAIR),
    ] {
        assert_eq!(fx.zone.m_h(), 2, "{}: zone must hold exactly the pair", fx.name);
        for (&line, &partner) in fx.zone.h_lines.iter().zip(fx.zone.h_lines.iter().rev()) {
            let sim = fx.simulate(&[line]).expect("single pair failure converges");
            let r = fx.expose(&sim);
            let good = r.detected.contains(&line) && r.detected.iter().all(|&d| d == line || d == partner);
            ok &= good;
            lines.push(format!(
                "{} fail {} -> {:?}",
                fx.name,
                fx.grid.lines()[line].id,
                fx.grid.line_ids(&r.detected)
            ));
        }
    }
    verdict(3, "parallel pair", ok, lines.join("; "));
    assert!(ok);
}

#[test]
fn criterion_4_bfs_agrees_with_exact_expose() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut fixtures = vec![
        Fixture::new("synth20-tree", case("synth20.m"), &SYNTH_TREE),
        Fixture::new("synth20-pair", case("synth20.m"), &SYNTH_PAIR),
        Fixture::new("case118-tree", case("case118.m"), &C118_TREE),
        Fixture::new("case118-pair", case("case118.m"), &C118_PAIR),
    ];
    for m in 5..=9 {
        let zg = cycle_zone(m, m as u64);
        fixtures.push(Fixture::new("cycle", zg.grid, &zg.zone));
    }
    let (mut compared, mut not_exact) = (0, 0);
    let mut disagreements = Vec::new();
    for fx in &fixtures {
        assert!(fx.zone.m_h() <= 10);
        // Full enumeration on small grids; on the 118-bus case the search
        // stops once a subset reproduces the exterior to solver precision.
        let options = BfsOptions {
            early_stop: (fx.grid.n() > 50).then_some(DEFAULT_STOP_THRESHOLD),
            ..Default::default()
        };
        for f in enumerate_failures(&fx.zone.h_lines, 2) {
            let Some(sim) = fx.simulate(&f) else { continue };
            let r = fx.expose(&sim);
            if r.method != Method::ExactLinear || r.flags.non_unique_l1 {
                not_exact += 1;
                continue;
            }
            compared += 1;
            let b = bfs_detect(&fx.grid, &sim.observation, &options).unwrap();
            if b.detected != r.detected {
                disagreements.push(format!("{} F={f:?}: expose {:?} bfs {:?}", fx.name, r.detected, b.detected));
            }
        }
    }
    let pass = compared > 0 && disagreements.is_empty();
    verdict(
        4,
        "bfs oracle",
        pass,
        format!(
            "{compared} scenarios compared, {} disagreements, {not_exact} skipped as not on an exact, unique branch",
            disagreements.len()
        ),
    );
    assert!(pass, "{disagreements:?}");
}

fn min_time<T>(runs: usize, mut f: impl FnMut() -> T) -> f64 {
    (0..runs)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn criterion_5_scaling() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let fx = Fixture::new("case118", case("case118.m"), &C118_TREE);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Sizes are timed round-robin and the fastest round kept, so a burst of
    // load on the machine slows every size rather than one.
    let mut sims: Vec<(usize, SimulatedAttack)> = Vec::new();
    for k in 1..=5 {
        let all: Vec<Vec<usize>> = fx.zone.h_lines.iter().copied().combinations(k).collect();
        for i in index::sample(&mut rng, all.len(), 8.min(all.len())) {
            if let Some(sim) = fx.simulate(&all[i]) {
                sims.push((k, sim));
            }
        }
    }
    let mut best = vec![f64::INFINITY; sims.len()];
    for _ in 0..TIMING_ROUNDS {
        for (b, (_, sim)) in best.iter_mut().zip(&sims) {
            *b = b.min(min_time(1, || fx.expose(sim)));
        }
    }
    let expose_times: Vec<f64> = (1..=5)
        .map(|k| {
            let t: Vec<f64> = sims.iter().zip(&best).filter(|(s, _)| s.0 == k).map(|(_, &b)| b).collect();
            t.iter().sum::<f64>() / t.len() as f64
        })
        .collect();
    let lo = expose_times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = expose_times.iter().copied().fold(0.0, f64::max);
    let flat = hi / lo < EXPOSE_FLATNESS;

    let paths: Vec<(Fixture, SimulatedAttack)> = (10..=14)
        .map(|m| {
            let zg = path_zone(m, 5);
            let p = Fixture::new("path", zg.grid, &zg.zone);
            let sim = p.simulate(&[p.zone.h_lines[0]]).unwrap();
            (p, sim)
        })
        .collect();
    let mut bfs_times = vec![f64::INFINITY; paths.len()];
    for _ in 0..BFS_TIMING_ROUNDS {
        for (b, (p, sim)) in bfs_times.iter_mut().zip(&paths) {
            *b = b.min(min_time(1, || bfs_detect(&p.grid, &sim.observation, &BfsOptions::default()).unwrap()));
        }
    }
    let ratios: Vec<f64> = bfs_times.windows(2).map(|w| w[1] / w[0]).collect();
    let grows = ratios.iter().all(|&r| r >= BFS_GROWTH);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).join(", ");
    verdict(
        5,
        "scaling",
        flat && grows,
        format!(
            "expose s/run over k=1..5 [{}], spread {:.2}x < {EXPOSE_FLATNESS}x; bfs s/run over 10..14 lines [{}], step ratios [{}] >= {BFS_GROWTH}x",
            fmt(&expose_times),
            hi / lo,
            fmt(&bfs_times),
            ratios.iter().map(|r| format!("{r:.2}")).join(", ")
        ),
    );
    assert!(flat && grows);
}

#[test]
fn criterion_6_confidence_calibration() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut min_conf = f64::INFINITY;
    let mut max_conf = f64::NEG_INFINITY;
    let (mut trials, mut q_lower) = (0usize, 0usize);
    for fx in tree_fixtures() {
        for f in enumerate_failures(&fx.zone.h_lines, 2) {
            let Some(sim) = fx.simulate(&f) else { continue };
            let r = fx.expose(&sim);
            if r.detected != f {
                continue;
            }
            for c in [r.confidence.c_p.unwrap(), r.confidence.c_q.unwrap()] {
                min_conf = min_conf.min(c);
                max_conf = max_conf.max(c);
            }
            // Wrong answers: swap one failed line for a healthy one, add a
            // healthy line, or drop a failed line.
            let v = sim.observation.assemble(&r.zone_voltages);
            let mut wrong = Vec::new();
            for &o in fx.zone.h_lines.iter().filter(|l| !f.contains(l)) {
                let mut w = f.clone();
                w[0] = o;
                wrong.push(w);
                let mut w = f.clone();
                w.push(o);
                wrong.push(w);
            }
            for i in 0..f.len() {
                let mut w = f.clone();
                w.remove(i);
                wrong.push(w);
            }
            for mut w in wrong {
                w.sort_unstable();
                let c = confidence(&fx.grid, &w, &v, &sim.observation);
                trials += 1;
                q_lower += usize::from(c.c_q.unwrap() < c.c_p.unwrap());
            }
        }
    }
    let calibrated = min_conf >= CONF_FLOOR && max_conf <= 100.0;
    let fraction = q_lower as f64 / trials as f64;
    let sensitive = fraction >= CQ_BELOW_CP_FRACTION;
    verdict(
        6,
        "confidence",
        calibrated && sensitive,
        format!(
            "correct detections c in [{min_conf:.6}, {max_conf:.6}] within [{CONF_FLOOR}, 100]; c_Q < c_P in {q_lower}/{trials} = {:.1}% of wrong answers, need {:.0}%",
            100.0 * fraction,
            100.0 * CQ_BELOW_CP_FRACTION
        ),
    );
    assert!(calibrated, "confidence of correct detections out of range");
    assert!(sensitive, "c_Q below c_P in only {:.1}% of trials", 100.0 * fraction);
}

#[test]
fn criterion_7_convex_branch_envelope() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let grid = case("case118.m");
    let zone = build_nested_zones(&grid, &[100], 2).unwrap().pop().unwrap();
    let fx = Fixture::from_zone("case118-ring", grid, zone);
    assert!(fx.diag.lambda_h > 0 && fx.diag.gamma_h > 0);
    let (mut n, mut excluded, mut fn_sum, mut v_sum) = (0usize, 0usize, 0usize, 0.0);
    for f in enumerate_failures(&fx.zone.h_lines, 3) {
        let Some(sim) = fx.simulate(&f) else {
            excluded += 1;
            continue;
        };
        let r = fx.expose(&sim);
        assert_eq!(r.method, Method::ConvexSimultaneous);
        n += 1;
        fn_sum += false_negatives(&f, &r.detected);
        v_sum += v_mag_err_pct(sim.true_zone_voltages().as_slice(), r.zone_voltages.as_slice());
    }
    let mean_fn = fn_sum as f64 / n as f64;
    let mean_v = v_sum / n as f64;
    let pass = mean_v <= ENVELOPE_V_MAG_PCT && mean_fn <= ENVELOPE_FN;
    verdict(
        7,
        "convex envelope",
        pass,
        format!(
            "zone buses {:?}, lambda {} gamma {}, {n} scenarios, {excluded} excluded, mean |V| err {mean_v:.3}% <= {ENVELOPE_V_MAG_PCT}%, mean FN {mean_fn:.3} <= {ENVELOPE_FN}",
            fx.zone.h_node_ids(&fx.grid),
            fx.diag.lambda_h,
            fx.diag.gamma_h
        ),
    );
    assert!(pass);
}

fn jacobian_fd_rel_err(grid: &Grid) -> f64 {
    let spec = InjectionSpec::from_grid(grid);
    let (v, _) = match solve_ac(grid, &spec, &flat_start(grid.n())) {
        PowerFlowOutcome::Converged { v, s, .. } => (v, s),
        other => panic!("{other:?}"),
    };
    let y = grid.y_matrix();
    let j = jacobian(y, &spec, &v);
    let (pvpq, pq) = (spec.pvpq().to_vec(), spec.pq().to_vec());
    let h = 1e-6;
    let perturb = |col: usize, step: f64| {
        let mut w = v.clone();
        if col < pvpq.len() {
            w[pvpq[col]] *= Complex64::from_polar(1.0, step);
        } else {
            let i = pq[col - pvpq.len()];
            w[i] = Complex64::from_polar(w[i].norm() + step, w[i].arg());
        }
        mismatch(y, &spec, &w)
    };
    let mut worst = 0.0f64;
    let scale = j.amax();
    for col in 0..j.ncols() {
        let fd = (perturb(col, h) - perturb(col, -h)) / (2.0 * h);
        worst = worst.max((fd - j.column(col)).amax() / scale);
    }
    worst
}

#[test]
fn criterion_8_numerical_foundations() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut round_trip = 0.0f64;
    let mut y_err = 0.0f64;
    for name in ["case14.m", "case30.m", "case118.m", "case300.m", "synth20.m"] {
        let g = case(name);
        let op = OperatingPoint::solve(&g).unwrap();
        let s = compute_injections(g.y_matrix(), &op.v);
        for (i, b) in g.buses().iter().enumerate() {
            let d = match b.kind {
                BusKind::Slack => (op.v[i].norm() - b.v_mag_setpoint).abs(),
                BusKind::Generator => (s[i].re - b.p_inject).abs().max((op.v[i].norm() - b.v_mag_setpoint).abs()),
                BusKind::Load => (s[i] - Complex64::new(b.p_inject, b.q_inject)).norm(),
            };
            round_trip = round_trip.max(d);
        }
        let d = g.incidence();
        let y = g.line_admittances();
        let rebuilt = d.map(Complex64::from) * nalgebra::DMatrix::from_diagonal(&DVector::from_vec(y)) * d.transpose().map(Complex64::from);
        y_err = y_err.max((rebuilt - g.y_matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    let jac = ["case14.m", "case30.m"].iter().map(|n| jacobian_fd_rel_err(&case(n))).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut rank_failures = 0;
    for trial in 0..100 {
        let n = rng.random_range(4..12usize);
        let mut lines = Vec::new();
        for i in 2..=n {
            lines.push((rng.random_range(1..i), i));
        }
        for _ in 0..rng.random_range(0..n) {
            let a = rng.random_range(1..=n);
            let b = rng.random_range(1..=n);
            if a != b {
                lines.push((a, b));
            }
        }
        let mut buses = vec![Bus::slack(1, 1.0)];
        buses.extend((2..=n).map(|i| Bus::load(i, -0.01, 0.0)));
        let lines = lines
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| Line::from_impedance(k + 1, a, b, 0.01, 0.1))
            .collect();
        let g = Grid::new(buses, lines).unwrap();
        let size = rng.random_range(1..n);
        let members: Vec<usize> = index::sample(&mut rng, n - 1, size).into_iter().map(|i| i + 2).collect();
        let zone = make_zone(&g, &members).unwrap();
        let d_h = zone_incidence(&g, &zone);
        let c = zone_components(&g, &zone).len();
        let expected = zone.n_h() - c;
        if linalg::rank(&d_h) != expected || linalg::qr_rank(&d_h) != expected {
            rank_failures += 1;
            println!("  rank identity failed on trial {trial}");
        }
        let ends: Vec<(usize, usize)> = (0..g.m()).map(|j| g.line_ends(j)).collect();
        assert_eq!(&build_incidence(g.n(), &ends), g.incidence());
    }

    let pass = round_trip <= PF_ROUND_TRIP_TOL && jac <= JACOBIAN_REL_TOL && y_err <= ADMITTANCE_TOL && rank_failures == 0;
    verdict(
        8,
        "numerical foundations",
        pass,
        format!(
            "round trip {round_trip:.1e} <= {PF_ROUND_TRIP_TOL:e}, jacobian rel {jac:.1e} <= {JACOBIAN_REL_TOL:e}, Y rebuild {y_err:.1e} <= {ADMITTANCE_TOL:e}, rank identity failed on {rank_failures}/100 graphs"
        ),
    );
    assert!(pass);
}
