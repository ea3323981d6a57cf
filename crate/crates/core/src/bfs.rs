//! Brute-force baseline: try every subset of in-zone lines as the failure
//! set, solve the flow without it, and keep the subset whose exterior
//! voltages best match the observed ones.

use std::time::Instant;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::Observation;
use crate::error::{Error, Result};
use crate::grid::{BusKind, Grid, UnionFind};
use crate::powerflow::{solve_ac_with, InjectionSpec, PowerFlowOutcome, VoltageState, MAX_ITER, TOL_PF};

pub const DEFAULT_CAP: usize = 20;

/// Suggested early-stop threshold: below this the error is solver noise.
pub const DEFAULT_STOP_THRESHOLD: f64 = 10.0 * TOL_PF;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfsOptions {
    /// Refuse zones with more in-zone lines than this. `None` lifts the cap.
    pub cap: Option<usize>,
    /// Stop at the first subset whose error falls below this value.
    pub early_stop: Option<f64>,
    /// Evaluate each cardinality's subsets on the rayon pool.
    pub parallel: bool,
}

impl Default for BfsOptions {
    fn default() -> Self {
        BfsOptions {
            cap: Some(DEFAULT_CAP),
            early_stop: None,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardinalityTiming {
    pub cardinality: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BfsResult {
    /// Line positions of the best subset, ascending.
    pub detected: Vec<usize>,
    pub best_error: f64,
    /// Zone voltages of the best subset's flow, ordered as `zone.h_nodes`.
    pub zone_voltages: VoltageState,
    pub evaluated: usize,
    pub skipped_no_solution: usize,
    pub stopped_early: bool,
    pub timings: Vec<CardinalityTiming>,
}

/// JSON form with external ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfsReport {
    pub detected_lines: Vec<usize>,
    pub best_error: f64,
    pub evaluated: usize,
    pub skipped_no_solution: usize,
    pub stopped_early: bool,
    pub timings: Vec<CardinalityTiming>,
}

impl BfsResult {
    pub fn report(&self, grid: &Grid) -> BfsReport {
        BfsReport {
            detected_lines: grid.line_ids(&self.detected),
            best_error: self.best_error,
            evaluated: self.evaluated,
            skipped_no_solution: self.skipped_no_solution,
            stopped_early: self.stopped_early,
            timings: self.timings.clone(),
        }
    }
}

/// Bus specification implied by the observation: observed P everywhere,
/// observed Q at loads, magnitudes from the grid's setpoints.
pub fn observed_spec(grid: &Grid, obs: &Observation) -> InjectionSpec {
    let mut spec = InjectionSpec::from_grid(grid);
    for (i, kind) in spec.kinds.clone().iter().enumerate() {
        let s = obs.injections[i];
        match kind {
            BusKind::Load => {
                spec.p[i] = s.re;
                spec.q[i] = s.im;
            }
            BusKind::Generator => spec.p[i] = s.re,
            BusKind::Slack => {}
        }
    }
    spec
}

/// `||re(dV)||_2 + ||im(dV)||_2` over the exterior buses.
pub fn exterior_error(v: &VoltageState, obs: &Observation) -> f64 {
    let d = DVector::from_fn(obs.zone.exterior_nodes.len(), |k, _| {
        v[obs.zone.exterior_nodes[k]] - obs.exterior_voltages[k]
    });
    d.map(|z| z.re).norm() + d.map(|z| z.im).norm()
}

enum Outcome {
    Skipped,
    Solved { error: f64, v: VoltageState },
}

struct Context<'a> {
    grid: &'a Grid,
    obs: &'a Observation,
    spec: InjectionSpec,
    start: VoltageState,
}

impl Context<'_> {
    fn evaluate(&self, subset: &[usize]) -> Outcome {
        let grid = self.grid;
        let mut uf = UnionFind::new(grid.n());
        for j in (0..grid.m()).filter(|j| !subset.contains(j)) {
            let (f, t) = grid.line_ends(j);
            uf.union(f, t);
        }
        if uf.count() > 1 {
            return Outcome::Skipped;
        }
        let y = reduced_admittance(grid, subset);
        match solve_ac_with(&y, &self.spec, &self.start, TOL_PF, MAX_ITER) {
            PowerFlowOutcome::Converged { v, .. } => Outcome::Solved {
                error: exterior_error(&v, self.obs),
                v,
            },
            PowerFlowOutcome::NoSolution { .. } => Outcome::Skipped,
        }
    }
}

fn reduced_admittance(grid: &Grid, removed: &[usize]) -> DMatrix<Complex64> {
    let mut y = grid.y_matrix().clone();
    for &j in removed {
        let (f, t) = grid.line_ends(j);
        let a = grid.lines()[j].admittance;
        y[(f, f)] -= a;
        y[(t, t)] -= a;
        y[(f, t)] += a;
        y[(t, f)] += a;
    }
    y
}

/// Exhaustive search over all subsets of `obs.zone.h_lines`, by increasing
/// cardinality and then lexicographically. Subsets that island a bus or
/// whose flow does not converge are skipped. Ties go to the earliest subset.
pub fn bfs_detect(grid: &Grid, obs: &Observation, options: &BfsOptions) -> Result<BfsResult> {
    let zone = &obs.zone;
    let lines = &zone.h_lines;
    if let Some(cap) = options.cap {
        if lines.len() > cap {
            return Err(Error::ZoneTooLarge {
                lines: lines.len(),
                subsets: 2f64.powi(lines.len() as i32),
            });
        }
    }
    let mut start = obs.pre_voltages.clone();
    for (k, &i) in zone.exterior_nodes.iter().enumerate() {
        start[i] = obs.exterior_voltages[k];
    }
    let ctx = Context {
        grid,
        obs,
        spec: observed_spec(grid, obs),
        start,
    };

    let mut best: Option<(f64, Vec<usize>, VoltageState)> = None;
    let mut evaluated = 0;
    let mut skipped = 0;
    let mut timings = Vec::new();
    let mut stopped_early = false;
    for k in 0..=lines.len() {
        let t0 = Instant::now();
        let subsets: Vec<Vec<usize>> = lines.iter().copied().combinations(k).collect();
        let outcomes: Vec<Outcome> = if options.parallel {
            subsets.par_iter().map(|s| ctx.evaluate(s)).collect()
        } else {
            let mut out = Vec::with_capacity(subsets.len());
            for s in &subsets {
                let o = ctx.evaluate(s);
                let hit = matches!((&o, options.early_stop), (Outcome::Solved { error, .. }, Some(thr)) if *error < thr);
                out.push(o);
                if hit {
                    break;
                }
            }
            out
        };
        let (mut ev, mut sk) = (0, 0);
        for (subset, outcome) in subsets.into_iter().zip(outcomes) {
            match outcome {
                Outcome::Skipped => sk += 1,
                Outcome::Solved { error, v } => {
                    ev += 1;
                    if best.as_ref().map_or(true, |(e, _, _)| error < *e) {
                        best = Some((error, subset, v));
                    }
                    if options.early_stop.is_some_and(|thr| error < thr) {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
        evaluated += ev;
        skipped += sk;
        timings.push(CardinalityTiming {
            cardinality: k,
            evaluated: ev,
            skipped: sk,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if stopped_early {
            break;
        }
    }

    let (best_error, detected, v) = best.ok_or(Error::NoSolution {
        iterations: MAX_ITER,
        mismatch: f64::INFINITY,
    })?;
    let zone_voltages = DVector::from_fn(zone.n_h(), |k, _| v[zone.h_nodes[k]]);
    Ok(BfsResult {
        detected,
        best_error,
        zone_voltages,
        evaluated,
        skipped_no_solution: skipped,
        stopped_early,
        timings,
    })
}
