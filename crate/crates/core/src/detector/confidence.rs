use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::attack::Observation;
use crate::grid::Grid;
use crate::powerflow::compute_injections;

/// Percentage agreement between the injections implied by a candidate
/// solution and the observed ones. `None` when the observed P (or Q) vector
/// is identically zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub c_p: Option<f64>,
    pub c_q: Option<f64>,
}

/// Scores `(f_hat, v_dagger)`: remove `f_hat` (line positions) from the grid,
/// compute `S = diag(V) (Y V)*` at `v_dagger`, and compare with the observed
/// injections.
pub fn confidence(grid: &Grid, f_hat: &[usize], v_dagger: &DVector<Complex64>, obs: &Observation) -> Confidence {
    let reduced = grid.without_lines(f_hat);
    let s = compute_injections(reduced.y_matrix(), v_dagger);
    let observed = &obs.injections;
    let score = |calc: DVector<f64>, obs: DVector<f64>| {
        let denom = obs.norm();
        (denom > 0.0).then(|| ((1.0 - (calc - &obs).norm() / denom).max(0.0)) * 100.0)
    };
    Confidence {
        c_p: score(s.map(|z| z.re), observed.map(|z| z.re)),
        c_q: score(s.map(|z| z.im), observed.map(|z| z.im)),
    }
}
