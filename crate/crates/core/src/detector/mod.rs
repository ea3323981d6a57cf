//! The EXPOSE detector: recover the zone voltages from exterior
//! measurements, find the failed lines as the support of a real indicator
//! vector, and score the result.

mod confidence;
pub mod convex;
pub mod lp;

pub use confidence::{confidence, Confidence};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{zone_components, zone_incidence, ZoneDiagnostics};
use crate::attack::{BusPhasor, Observation};
use crate::error::{Error, Result};
use crate::grid::{submatrix, Grid};
use crate::linalg;

/// Recovery residuals above `LIN_TOL * max(1, ||rhs||)` mark the observation
/// as inconsistent.
pub const LIN_TOL: f64 = 1e-6;
pub const EXACT_SUPPORT_REL: f64 = 1e-6;
pub const CONVEX_SUPPORT_REL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactLinear,
    ConvexSimultaneous,
}

/// How the indicator vector was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorSolver {
    LeastSquares,
    L1Program,
    ConeProgram,
}

#[derive(Debug, Clone)]
pub struct RecoveredState {
    /// Ordered as `zone.h_nodes`.
    pub zone_voltages: DVector<Complex64>,
    pub method: Method,
    pub residual_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FailureIndicator {
    /// One entry per `zone.h_lines`.
    pub x: DVector<f64>,
    pub support_threshold: f64,
    /// Detected line positions, ascending.
    pub detected: Vec<usize>,
    pub solver: IndicatorSolver,
    /// Several L1 minimizers exist; `x` is their centroid.
    pub non_unique: bool,
}

impl FailureIndicator {
    fn from_x(zone_lines: &[usize], x: DVector<f64>, threshold: f64, solver: IndicatorSolver) -> Self {
        let detected = zone_lines
            .iter()
            .zip(x.iter())
            .filter(|(_, v)| v.abs() > threshold)
            .map(|(&j, _)| j)
            .collect();
        FailureIndicator {
            x,
            support_threshold: threshold,
            detected,
            solver,
            non_unique: false,
        }
    }
}

pub fn exact_threshold(x: &DVector<f64>) -> f64 {
    EXACT_SUPPORT_REL * linalg::max_abs(x).max(1.0)
}

pub fn convex_threshold(x: &DVector<f64>) -> f64 {
    CONVEX_SUPPORT_REL * linalg::max_abs(x)
}

/// `E = -conj(Y[ext, ext]) conj(V'_ext) + S'_ext / V'_ext`.
pub fn compute_exterior_rhs(grid: &Grid, obs: &Observation) -> Result<DVector<Complex64>> {
    let ext = &obs.zone.exterior_nodes;
    if let Some(k) = obs.exterior_voltages.iter().position(|v| v.norm() == 0.0) {
        return Err(Error::SingularObservation(format!(
            "exterior bus {} reports zero voltage",
            grid.buses()[ext[k]].id
        )));
    }
    let y_ee = submatrix(grid.y_matrix(), ext, ext);
    let flow = (y_ee * &obs.exterior_voltages).map(|z| z.conj());
    Ok(DVector::from_fn(ext.len(), |k, _| {
        -flow[k] + obs.injections[ext[k]] / obs.exterior_voltages[k]
    }))
}

/// `[re E; -im E]`, the right-hand side of `M [re V'_H; im V'_H]`.
pub fn recovery_rhs(grid: &Grid, obs: &Observation) -> Result<DVector<f64>> {
    let e = compute_exterior_rhs(grid, obs)?;
    Ok(linalg::stack_complex(&e.map(|z| z.conj())))
}

/// Least-squares solve of the exterior equations for the zone voltages.
/// Requires `M` to have full column rank.
pub fn recover_voltages(grid: &Grid, obs: &Observation, diag: &ZoneDiagnostics) -> Result<RecoveredState> {
    if diag.lambda_h > 0 {
        return Err(Error::RankDeficient {
            rank: diag.rank_m,
            cols: diag.m_matrix.ncols(),
        });
    }
    let r = recovery_rhs(grid, obs)?;
    let (z, residual_norm) = linalg::lstsq(&diag.m_matrix, &r);
    Ok(RecoveredState {
        zone_voltages: linalg::unstack_complex(&z),
        method: Method::ExactLinear,
        residual_norm,
    })
}

/// Complex form of the indicator equations at voltages `v_h`:
/// `w = conj(Y_H V') - S'_H / V'_H`, which equals `D_H conj(diag(y) D_H^T V')`
/// restricted to the failed lines.
pub fn indicator_rhs_complex(grid: &Grid, obs: &Observation, v_h: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    let h = &obs.zone.h_nodes;
    if let Some(k) = v_h.iter().position(|v| v.norm() == 0.0) {
        return Err(Error::SingularObservation(format!(
            "zone bus {} has zero recovered voltage",
            grid.buses()[h[k]].id
        )));
    }
    let v = obs.assemble(v_h);
    let all: Vec<usize> = (0..grid.n()).collect();
    let y_h = submatrix(grid.y_matrix(), h, &all);
    let i_h = y_h * v;
    Ok(DVector::from_fn(h.len(), |k, _| i_h[k].conj() - obs.injections[h[k]] / v_h[k]))
}

/// Real part of [`indicator_rhs_complex`]: `b` in `D_H x = b`.
pub fn indicator_rhs(grid: &Grid, obs: &Observation, v_h: &DVector<Complex64>) -> Result<DVector<f64>> {
    Ok(indicator_rhs_complex(grid, obs, v_h)?.map(|z| z.re))
}

/// Unique least-squares indicator. Requires an acyclic zone.
pub fn detect_exact(grid: &Grid, obs: &Observation, v_h: &DVector<Complex64>) -> Result<FailureIndicator> {
    let zone = &obs.zone;
    let d_h = zone_incidence(grid, zone);
    if linalg::rank(&d_h) < zone.m_h() {
        return Err(Error::CyclicZone);
    }
    let b = indicator_rhs(grid, obs, v_h)?;
    let (x, _) = linalg::lstsq(&d_h, &b);
    let threshold = exact_threshold(&x);
    Ok(FailureIndicator::from_x(&zone.h_lines, x, threshold, IndicatorSolver::LeastSquares))
}

/// Minimum-L1 indicator. One row per connected component of the zone is
/// redundant and dropped after checking that the component's equations are
/// consistent.
pub fn detect_lp(grid: &Grid, obs: &Observation, v_h: &DVector<Complex64>) -> Result<FailureIndicator> {
    let zone = &obs.zone;
    let d_h = zone_incidence(grid, zone);
    let b = indicator_rhs(grid, obs, v_h)?;
    let (a, b_red) = reduce_rows(grid, obs, &d_h, &b)?;
    let sol = lp::min_l1(&a, &b_red)?;
    let threshold = exact_threshold(&sol.x);
    let mut ind = FailureIndicator::from_x(&zone.h_lines, sol.x, threshold, IndicatorSolver::L1Program);
    ind.non_unique = sol.non_unique;
    Ok(ind)
}

fn reduce_rows(
    grid: &Grid,
    obs: &Observation,
    d_h: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let tol = LIN_TOL * linalg::max_abs(b).max(1.0);
    let mut keep = Vec::new();
    for comp in zone_components(grid, &obs.zone) {
        let sum: f64 = comp.iter().map(|&s| b[s]).sum();
        if sum.abs() > tol {
            return Err(Error::InconsistentRecovery(format!(
                "indicator equations around zone bus {} do not balance (residual {sum:.3e})",
                grid.buses()[obs.zone.h_nodes[comp[0]]].id
            )));
        }
        keep.extend_from_slice(&comp[1..]);
    }
    keep.sort_unstable();
    let a = DMatrix::from_fn(keep.len(), d_h.ncols(), |r, c| d_h[(keep[r], c)]);
    let b_red = DVector::from_fn(keep.len(), |r, _| b[keep[r]]);
    Ok((a, b_red))
}

/// Joint voltage and indicator recovery through the cone program.
pub fn simultaneous_recover(
    grid: &Grid,
    obs: &Observation,
    diag: &ZoneDiagnostics,
) -> Result<(RecoveredState, FailureIndicator, convex::ConvexSolution)> {
    let zone = &obs.zone;
    let d_h = zone_incidence(grid, zone);
    let problem = convex::ConvexProblem {
        m_matrix: &diag.m_matrix,
        recovery_rhs: recovery_rhs(grid, obs)?,
        grid,
        h_nodes: &zone.h_nodes,
        exterior_nodes: &zone.exterior_nodes,
        d_h: &d_h,
        exterior_voltages: &obs.exterior_voltages,
        zone_injections: DVector::from_fn(zone.n_h(), |k, _| obs.injections[zone.h_nodes[k]]),
        pre_zone_voltages: obs.pre_zone_voltages(),
    };
    let sol = convex::solve(&problem)?;
    let threshold = convex_threshold(&sol.x);
    let ind = FailureIndicator::from_x(&zone.h_lines, sol.x.clone(), threshold, IndicatorSolver::ConeProgram);
    let rec = RecoveredState {
        zone_voltages: sol.zone_voltages.clone(),
        method: Method::ConvexSimultaneous,
        residual_norm: sol.recovery_residual,
    };
    Ok((rec, ind, sol))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Least-squares residual of the exterior (voltage recovery) equations.
    pub recovery: f64,
    /// `||D_H x - b||_2` with `b` evaluated exactly at the recovered voltages.
    pub indicator: f64,
    /// Imaginary-part residual of the indicator equations, with the detected
    /// lines' complex flows filled in from the recovered voltages.
    pub indicator_imag: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    pub recovery_inconsistent: bool,
    pub non_unique_l1: bool,
    /// Covering matching exists but `M` is numerically rank deficient.
    pub matching_rank_anomaly: bool,
    pub epsilon_relaxations: usize,
}

#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub method: Method,
    pub indicator_solver: IndicatorSolver,
    pub zone_voltages: DVector<Complex64>,
    pub x: DVector<f64>,
    pub detected: Vec<usize>,
    pub support_threshold: f64,
    pub confidence: Confidence,
    pub residuals: Residuals,
    pub flags: Flags,
    /// Coupling radius of the cone program, when used.
    pub epsilon: Option<f64>,
}

/// Runs the full detector: exact recovery when `M` has full column rank
/// (least squares when the zone is acyclic, L1 otherwise), the cone program
/// otherwise; then support extraction and confidence scoring.
pub fn expose(grid: &Grid, obs: &Observation, diag: &ZoneDiagnostics) -> Result<DetectionResult> {
    let (rec, ind, epsilon, relaxations) = if diag.lambda_h == 0 {
        let branch = "exact_linear";
        let rec = recover_voltages(grid, obs, diag).map_err(|e| e.in_branch(branch))?;
        let ind = if diag.gamma_h == 0 {
            detect_exact(grid, obs, &rec.zone_voltages)
        } else {
            detect_lp(grid, obs, &rec.zone_voltages)
        }
        .map_err(|e| e.in_branch(branch))?;
        (rec, ind, None, 0)
    } else {
        let (rec, ind, sol) = simultaneous_recover(grid, obs, diag).map_err(|e| e.in_branch("convex_simultaneous"))?;
        (rec, ind, Some(sol.epsilon), sol.relaxations)
    };

    let v_dagger = obs.assemble(&rec.zone_voltages);
    let conf = confidence(grid, &ind.detected, &v_dagger, obs);
    let residuals = indicator_residuals(grid, obs, &rec, &ind)?;
    let rhs_norm = recovery_rhs(grid, obs)?.norm();
    Ok(DetectionResult {
        method: rec.method,
        indicator_solver: ind.solver,
        flags: Flags {
            recovery_inconsistent: rec.residual_norm > LIN_TOL * rhs_norm.max(1.0),
            non_unique_l1: ind.non_unique,
            matching_rank_anomaly: diag.matching_rank_anomaly(),
            epsilon_relaxations: relaxations,
        },
        zone_voltages: rec.zone_voltages,
        x: ind.x,
        detected: ind.detected,
        support_threshold: ind.support_threshold,
        confidence: conf,
        residuals,
        epsilon,
    })
}

fn indicator_residuals(
    grid: &Grid,
    obs: &Observation,
    rec: &RecoveredState,
    ind: &FailureIndicator,
) -> Result<Residuals> {
    let zone = &obs.zone;
    let d_h = zone_incidence(grid, zone);
    let w = indicator_rhs_complex(grid, obs, &rec.zone_voltages)?;
    let b = w.map(|z| z.re);
    let v = obs.assemble(&rec.zone_voltages);
    let flows = DVector::from_fn(zone.m_h(), |s, _| {
        let j = zone.h_lines[s];
        if ind.detected.binary_search(&j).is_ok() {
            let (f, t) = grid.line_ends(j);
            (grid.lines()[j].admittance * (v[f] - v[t])).conj()
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let d_c = linalg::to_complex(&d_h);
    let imag = (w - d_c * flows).map(|z| z.im);
    Ok(Residuals {
        recovery: rec.residual_norm,
        indicator: (&d_h * &ind.x - b).norm(),
        indicator_imag: imag.norm(),
    })
}

/// JSON form of a detection, with external ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: Method,
    pub indicator_solver: IndicatorSolver,
    pub detected_lines: Vec<usize>,
    pub x_values: Vec<LineValue>,
    pub v_h_recovered: Vec<BusPhasor>,
    pub c_p: Option<f64>,
    pub c_q: Option<f64>,
    pub support_threshold: f64,
    pub epsilon: Option<f64>,
    pub residuals: Residuals,
    pub flags: Flags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineValue {
    pub line: usize,
    pub x: f64,
}

impl DetectionResult {
    pub fn report(&self, grid: &Grid, obs: &Observation) -> DetectionReport {
        let zone = &obs.zone;
        DetectionReport {
            method: self.method,
            indicator_solver: self.indicator_solver,
            detected_lines: grid.line_ids(&self.detected),
            x_values: zone
                .h_lines
                .iter()
                .zip(self.x.iter())
                .map(|(&j, &x)| LineValue {
                    line: grid.lines()[j].id,
                    x,
                })
                .collect(),
            v_h_recovered: zone
                .h_nodes
                .iter()
                .zip(self.zone_voltages.iter())
                .map(|(&i, z)| BusPhasor {
                    bus: grid.buses()[i].id,
                    re: z.re,
                    im: z.im,
                })
                .collect(),
            c_p: self.confidence.c_p,
            c_q: self.confidence.c_q,
            support_threshold: self.support_threshold,
            epsilon: self.epsilon,
            residuals: self.residuals,
            flags: self.flags,
        }
    }
}
