//! Joint recovery of zone voltages and the failure indicator as one
//! second-order cone program, for zones where the voltages alone are not
//! identifiable.
//!
//! Variables `z = (a, b, x, t)` with `V'_H = a + ib`:
//!
//! ```text
//! minimize    sum(t)
//! subject to  -t <= x <= t
//!             M [a; b] = [re E; -im E]                  (range-projected)
//!             ||(a_i, b_i)||_2 <= 1.1                    for each zone bus
//!             ||K [a; b] + c0 - D_H x||_2 <= eps
//! ```
//!
//! `K` linearizes `re{diag(V'_H)^-1 S'_H}` around the pre-attack magnitudes:
//! `1/V'_i ~ conj(V'_i) / |V_i|^2`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use log::debug;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{submatrix, Grid};
use crate::linalg;

pub const V_MAX: f64 = 1.1;
const EPS_REL: f64 = 1e-3;
const EPS_FLOOR: f64 = 1e-6;
const MAX_RELAX: usize = 3;

#[derive(Debug, Clone)]
pub struct ConvexSolution {
    pub zone_voltages: DVector<Complex64>,
    pub x: DVector<f64>,
    /// Coupling radius actually used.
    pub epsilon: f64,
    /// Number of times the radius was multiplied by 10.
    pub relaxations: usize,
    /// `||M [a; b] - r||_2` at the solution.
    pub recovery_residual: f64,
}

pub struct ConvexProblem<'a> {
    pub m_matrix: &'a DMatrix<f64>,
    /// `[re E; -im E]`.
    pub recovery_rhs: DVector<f64>,
    pub grid: &'a Grid,
    pub h_nodes: &'a [usize],
    pub exterior_nodes: &'a [usize],
    pub d_h: &'a DMatrix<f64>,
    pub exterior_voltages: &'a DVector<Complex64>,
    pub zone_injections: DVector<Complex64>,
    pub pre_zone_voltages: DVector<Complex64>,
}

/// Initial coupling radius: `1e-3 * ||re{diag(V_H)^-1 S'_H}||_2`, floored.
pub fn initial_epsilon(pre_zone_voltages: &DVector<Complex64>, zone_injections: &DVector<Complex64>) -> f64 {
    let v = pre_zone_voltages.zip_map(zone_injections, |v, s| (s / v).re);
    (EPS_REL * v.norm()).max(EPS_FLOOR)
}

pub fn solve(problem: &ConvexProblem) -> Result<ConvexSolution> {
    let n = problem.h_nodes.len();
    let m = problem.d_h.ncols();
    let nz = 2 * n + 2 * m;
    let (ia, ib, ix, it) = (0, n, 2 * n, 2 * n + m);

    let y = problem.grid.y_matrix();
    let y_hh = submatrix(y, problem.h_nodes, problem.h_nodes);
    let y_hx = submatrix(y, problem.h_nodes, problem.exterior_nodes);
    let c0 = (y_hx * problem.exterior_voltages).map(|z| z.re);
    let (g_hh, b_hh) = (linalg::re(&y_hh), linalg::im(&y_hh));
    let mut k = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        let mag2 = problem.pre_zone_voltages[i].norm_sqr();
        let s = problem.zone_injections[i];
        for c in 0..n {
            k[(i, c)] = g_hh[(i, c)];
            k[(i, n + c)] = -b_hh[(i, c)];
        }
        k[(i, i)] -= s.re / mag2;
        k[(i, n + i)] -= s.im / mag2;
    }

    // Project the recovery equations onto the range of M so that the
    // equality block has full row rank.
    let u = linalg::range_basis(problem.m_matrix);
    let m_red = u.transpose() * problem.m_matrix;
    let r_red = u.transpose() * &problem.recovery_rhs;
    let p = m_red.nrows();

    let mut epsilon = initial_epsilon(&problem.pre_zone_voltages, &problem.zone_injections);
    for relaxations in 0..=MAX_RELAX {
        let mut trip = Triplets::default();
        let mut rhs = Vec::new();
        let mut cones = Vec::new();
        let mut row = 0;

        // Equalities.
        for i in 0..p {
            for c in 0..2 * n {
                trip.push(row + i, ia + c, m_red[(i, c)]);
            }
            rhs.push(r_red[i]);
        }
        row += p;
        if p > 0 {
            cones.push(SupportedConeT::ZeroConeT(p));
        }

        // x - t <= 0 and -x - t <= 0.
        for j in 0..m {
            trip.push(row + j, ix + j, 1.0);
            trip.push(row + j, it + j, -1.0);
            trip.push(row + m + j, ix + j, -1.0);
            trip.push(row + m + j, it + j, -1.0);
        }
        rhs.extend(std::iter::repeat(0.0).take(2 * m));
        row += 2 * m;
        if m > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(2 * m));
        }

        // |V'_i| <= V_MAX.
        for i in 0..n {
            rhs.extend([V_MAX, 0.0, 0.0]);
            trip.push(row + 1, ia + i, -1.0);
            trip.push(row + 2, ib + i, -1.0);
            row += 3;
            cones.push(SupportedConeT::SecondOrderConeT(3));
        }

        // (eps, K z_v + c0 - D_H x) in the second-order cone.
        rhs.push(epsilon);
        for i in 0..n {
            for c in 0..2 * n {
                trip.push(row + 1 + i, ia + c, -k[(i, c)]);
            }
            for j in 0..m {
                trip.push(row + 1 + i, ix + j, problem.d_h[(i, j)]);
            }
            rhs.push(c0[i]);
        }
        row += 1 + n;
        cones.push(SupportedConeT::SecondOrderConeT(1 + n));

        let a = trip.build(row, nz);
        let pmat = CscMatrix::<f64>::zeros((nz, nz));
        let mut q = vec![0.0; nz];
        q[it..].iter_mut().for_each(|v| *v = 1.0);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .build()
            .map_err(|e| Error::ConvexSolve(format!("{e:?}")))?;
        let mut solver = DefaultSolver::new(&pmat, &q, &a, &rhs, &cones, settings)
            .map_err(|e| Error::ConvexSolve(e.to_string()))?;
        solver.solve();
        let status = solver.solution.status;
        debug!("convex program status {status:?} with eps {epsilon:.3e}");
        match status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let z = &solver.solution.x;
                let zv = DVector::from_fn(2 * n, |i, _| z[ia + i]);
                let zone_voltages = DVector::from_fn(n, |i, _| Complex64::new(z[ia + i], z[ib + i]));
                let x = DVector::from_fn(m, |j, _| z[ix + j]);
                let recovery_residual = (problem.m_matrix * zv - &problem.recovery_rhs).norm();
                return Ok(ConvexSolution {
                    zone_voltages,
                    x,
                    epsilon,
                    relaxations,
                    recovery_residual,
                });
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible if relaxations < MAX_RELAX => {
                epsilon *= 10.0;
            }
            other => {
                return Err(Error::ConvexSolve(format!(
                    "solver status {other:?} with coupling radius {epsilon:.3e}"
                )))
            }
        }
    }
    unreachable!("loop returns on the final relaxation")
}

#[derive(Default)]
struct Triplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    fn push(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.rows.push(r);
            self.cols.push(c);
            self.vals.push(v);
        }
    }

    fn build(self, m: usize, n: usize) -> CscMatrix<f64> {
        CscMatrix::new_from_triplets(m, n, self.rows, self.cols, self.vals)
    }
}
