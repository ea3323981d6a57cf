//! Polar Newton-Raphson AC power flow.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::grid::{BusKind, Grid};

pub const TOL_PF: f64 = 1e-8;
pub const MAX_ITER: usize = 30;
/// Any voltage magnitude outside this band is treated as divergence.
const V_BAND: (f64, f64) = (0.2, 5.0);

/// Complex bus voltages, indexed by bus position.
pub type VoltageState = DVector<Complex64>;

pub fn flat_start(n: usize) -> VoltageState {
    DVector::from_element(n, Complex64::new(1.0, 0.0))
}

/// Per-bus constraints: slack fixes `V`, PV fixes `(P, |V|)`, PQ fixes `(P, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSpec {
    pub kinds: Vec<BusKind>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v_mag: Vec<f64>,
    pub slack: usize,
    /// Positions of PV and PQ buses, ascending.
    pvpq: Vec<usize>,
    /// Positions of PQ buses, ascending.
    pq: Vec<usize>,
}

impl InjectionSpec {
    pub fn from_grid(grid: &Grid) -> Self {
        let buses = grid.buses();
        let kinds: Vec<BusKind> = buses.iter().map(|b| b.kind).collect();
        let pvpq = (0..kinds.len()).filter(|&i| kinds[i] != BusKind::Slack).collect();
        let pq = (0..kinds.len()).filter(|&i| kinds[i] == BusKind::Load).collect();
        InjectionSpec {
            p: buses.iter().map(|b| b.p_inject).collect(),
            q: buses.iter().map(|b| b.q_inject).collect(),
            v_mag: buses.iter().map(|b| b.v_mag_setpoint).collect(),
            slack: grid.slack_index(),
            kinds,
            pvpq,
            pq,
        }
    }

    pub fn pvpq(&self) -> &[usize] {
        &self.pvpq
    }

    pub fn pq(&self) -> &[usize] {
        &self.pq
    }

    /// Copy of `v` with slack and PV magnitudes forced to their setpoints.
    /// Entries already at their setpoint (to roundoff) are left bit-identical
    /// so that warm starts from a converged state reproduce it exactly.
    pub fn enforce_setpoints(&self, v: &VoltageState) -> VoltageState {
        let mut v = v.clone();
        for (i, kind) in self.kinds.iter().enumerate() {
            let off = (v[i].norm() - self.v_mag[i]).abs() > 1e-14 * self.v_mag[i];
            match kind {
                BusKind::Slack if off || v[i].im != 0.0 => v[i] = Complex64::new(self.v_mag[i], 0.0),
                BusKind::Generator if off => v[i] = Complex64::from_polar(self.v_mag[i], v[i].arg()),
                _ => {}
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PowerFlowOutcome {
    Converged {
        v: VoltageState,
        /// Full complex injections, including slack P/Q and PV-bus Q.
        s: DVector<Complex64>,
        iterations: usize,
    },
    NoSolution {
        iterations: usize,
        mismatch: f64,
    },
}

impl PowerFlowOutcome {
    pub fn converged(&self) -> Option<(&VoltageState, &DVector<Complex64>)> {
        match self {
            PowerFlowOutcome::Converged { v, s, .. } => Some((v, s)),
            PowerFlowOutcome::NoSolution { .. } => None,
        }
    }
}

/// `S = diag(V) (Y V)*`.
pub fn compute_injections(y: &DMatrix<Complex64>, v: &VoltageState) -> DVector<Complex64> {
    let i = y * v;
    v.zip_map(&i, |vk, ik| vk * ik.conj())
}

/// Mismatch `[dP over PV+PQ; dQ over PQ]` of the computed minus specified
/// injections.
pub fn mismatch(y: &DMatrix<Complex64>, spec: &InjectionSpec, v: &VoltageState) -> DVector<f64> {
    let s = compute_injections(y, v);
    let (pvpq, pq) = (&spec.pvpq, &spec.pq);
    DVector::from_fn(pvpq.len() + pq.len(), |r, _| {
        if r < pvpq.len() {
            let i = pvpq[r];
            s[i].re - spec.p[i]
        } else {
            let i = pq[r - pvpq.len()];
            s[i].im - spec.q[i]
        }
    })
}

/// Jacobian of [`mismatch`] with respect to `[theta over PV+PQ; |V| over PQ]`.
pub fn jacobian(y: &DMatrix<Complex64>, spec: &InjectionSpec, v: &VoltageState) -> DMatrix<f64> {
    let n = v.len();
    let cur = y * v;
    let vnorm = v.map(|z| z / z.norm());
    // dS/d|V| = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
    // dS/dtheta = i diag(V) conj(diag(I) - Y diag(V))
    let ds_dvm = DMatrix::from_fn(n, n, |r, c| {
        let mut val = v[r] * (y[(r, c)] * vnorm[c]).conj();
        if r == c {
            val += cur[r].conj() * vnorm[r];
        }
        val
    });
    let i_unit = Complex64::new(0.0, 1.0);
    let ds_dva = DMatrix::from_fn(n, n, |r, c| {
        let mut inner = -y[(r, c)] * v[c];
        if r == c {
            inner += cur[r];
        }
        i_unit * v[r] * inner.conj()
    });
    let (pvpq, pq) = (&spec.pvpq, &spec.pq);
    let (a, b) = (pvpq.len(), pq.len());
    DMatrix::from_fn(a + b, a + b, |r, c| {
        let (row, real) = if r < a { (pvpq[r], true) } else { (pq[r - a], false) };
        let val = if c < a {
            ds_dva[(row, pvpq[c])]
        } else {
            ds_dvm[(row, pq[c - a])]
        };
        if real {
            val.re
        } else {
            val.im
        }
    })
}

/// Newton-Raphson from `initial` (slack and PV magnitudes are reset to their
/// setpoints first).
pub fn solve_ac(grid: &Grid, spec: &InjectionSpec, initial: &VoltageState) -> PowerFlowOutcome {
    solve_ac_with(grid.y_matrix(), spec, initial, TOL_PF, MAX_ITER)
}

pub fn solve_ac_with(
    y: &DMatrix<Complex64>,
    spec: &InjectionSpec,
    initial: &VoltageState,
    tol: f64,
    max_iter: usize,
) -> PowerFlowOutcome {
    let mut v = spec.enforce_setpoints(initial);
    let (pvpq, pq) = (&spec.pvpq, &spec.pq);
    let mut iterations = 0;
    loop {
        let f = mismatch(y, spec, &v);
        let norm = f.amax();
        if !norm.is_finite() {
            return PowerFlowOutcome::NoSolution { iterations, mismatch: norm };
        }
        if norm <= tol {
            let s = compute_injections(y, &v);
            return PowerFlowOutcome::Converged { v, s, iterations };
        }
        if iterations == max_iter {
            return PowerFlowOutcome::NoSolution { iterations, mismatch: norm };
        }
        let j = jacobian(y, spec, &v);
        let Some(dx) = j.lu().solve(&(-f)) else {
            return PowerFlowOutcome::NoSolution { iterations, mismatch: norm };
        };
        if dx.iter().any(|d| !d.is_finite()) {
            return PowerFlowOutcome::NoSolution { iterations, mismatch: norm };
        }
        for (r, &i) in pvpq.iter().enumerate() {
            v[i] *= Complex64::from_polar(1.0, dx[r]);
        }
        for (r, &i) in pq.iter().enumerate() {
            let mag = v[i].norm() + dx[pvpq.len() + r];
            v[i] = Complex64::from_polar(mag, v[i].arg());
        }
        iterations += 1;
        if v.iter().any(|z| !(V_BAND.0..=V_BAND.1).contains(&z.norm())) {
            let norm = mismatch(y, spec, &v).amax();
            return PowerFlowOutcome::NoSolution { iterations, mismatch: norm };
        }
    }
}

/// Series loss `y |V_f - V_t|^2` summed over lines, as a complex power.
pub fn line_losses(grid: &Grid, v: &VoltageState) -> Complex64 {
    (0..grid.m())
        .map(|j| {
            let (f, t) = grid.line_ends(j);
            let dv = v[f] - v[t];
            grid.lines()[j].admittance.conj() * dv.norm_sqr()
        })
        .sum()
}
