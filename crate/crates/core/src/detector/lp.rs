//! `min ||x||_1 s.t. A x = b` as a linear program over `x = x+ - x-`, solved
//! with a dense two-phase simplex under Bland's rule.
//!
//! When the optimum is not unique the optimal face is explored by pivoting on
//! zero reduced-cost columns, and the centroid of the vertices found is
//! returned. A single vertex would pick one of several equally cheap
//! explanations arbitrarily; the centroid keeps every line that some optimal
//! explanation uses.

use std::collections::{HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const MAX_FACE_BASES: usize = 64;

#[derive(Debug, Clone)]
pub struct L1Solution {
    pub x: DVector<f64>,
    /// More than one optimal vertex was found.
    pub non_unique: bool,
    /// Distinct optimal vertices averaged into `x`.
    pub vertices: usize,
}

#[derive(Clone)]
struct Tableau {
    /// `B^-1 [A | b]`, with the rhs in the last column.
    t: DMatrix<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[(r, c)];
        let mut row = self.t.row(r).clone_owned();
        row /= p;
        for i in 0..self.t.nrows() {
            if i != r {
                let f = self.t[(i, c)];
                if f != 0.0 {
                    for c2 in 0..self.t.ncols() {
                        self.t[(i, c2)] -= f * row[c2];
                    }
                }
            }
        }
        self.t.set_row(r, &row);
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64], allowed: usize) -> Vec<f64> {
        (0..allowed)
            .map(|j| cost[j] - (0..self.t.nrows()).map(|i| cost[self.basis[i]] * self.t[(i, j)]).sum::<f64>())
            .collect()
    }

    /// Bland ratio test: smallest ratio, ties to the smallest basic index.
    fn leaving_row(&self, c: usize) -> Option<usize> {
        let rhs = self.rhs_col();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..self.t.nrows() {
            let a = self.t[(i, c)];
            if a > PIVOT_TOL {
                let ratio = self.t[(i, rhs)] / a;
                let better = match best {
                    None => true,
                    Some((r, _, b)) => ratio < r - 1e-12 || (ratio <= r + 1e-12 && self.basis[i] < b),
                };
                if better {
                    best = Some((ratio, i, self.basis[i]));
                }
            }
        }
        best.map(|(_, i, _)| i)
    }

    /// Runs Bland's rule to optimality over columns `0..allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        let max_pivots = 50 * (self.t.ncols() + self.t.nrows());
        for _ in 0..max_pivots {
            let rc = self.reduced_costs(cost, allowed);
            let Some(c) = (0..allowed).find(|&j| rc[j] < -PIVOT_TOL && !self.basis.contains(&j)) else {
                return Ok(());
            };
            let Some(r) = self.leaving_row(c) else {
                return Err(Error::InconsistentRecovery("L1 program is unbounded".into()));
            };
            self.pivot(r, c);
        }
        Err(Error::InconsistentRecovery("simplex pivot limit reached".into()))
    }

    fn primal(&self, nvars: usize) -> DVector<f64> {
        let rhs = self.rhs_col();
        let mut z = DVector::zeros(nvars);
        for (i, &b) in self.basis.iter().enumerate() {
            if b < nvars {
                z[b] = self.t[(i, rhs)].max(0.0);
            }
        }
        z
    }
}

/// Solves `min ||x||_1 s.t. a x = b`. Rows of `a` should be linearly
/// independent; redundant rows are tolerated when consistent.
pub fn min_l1(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<L1Solution> {
    let (p, m) = (a.nrows(), a.ncols());
    if p == 0 {
        return Ok(L1Solution {
            x: DVector::zeros(m),
            non_unique: false,
            vertices: 1,
        });
    }
    let nv = 2 * m;
    // Columns: x+ (0..m), x- (m..2m), artificials (2m..2m+p), rhs.
    let mut t = DMatrix::zeros(p, nv + p + 1);
    for i in 0..p {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            t[(i, j)] = sign * a[(i, j)];
            t[(i, m + j)] = -sign * a[(i, j)];
        }
        t[(i, nv + i)] = 1.0;
        t[(i, nv + p)] = sign * b[i];
    }
    let mut tab = Tableau {
        t,
        basis: (nv..nv + p).collect(),
    };

    let mut phase1 = vec![0.0; nv + p];
    phase1[nv..].iter_mut().for_each(|c| *c = 1.0);
    tab.optimize(&phase1, nv + p)?;
    let infeas: f64 = (0..p)
        .filter(|&i| tab.basis[i] >= nv)
        .map(|i| tab.t[(i, nv + p)])
        .sum();
    let scale = b.amax().max(1.0);
    if infeas > 1e-7 * scale {
        return Err(Error::InconsistentRecovery(format!(
            "indicator equations are infeasible (phase-one residual {infeas:.3e})"
        )));
    }

    // Drive zero-level artificials out of the basis; drop redundant rows.
    let mut i = 0;
    while i < tab.t.nrows() {
        if tab.basis[i] >= nv {
            match (0..nv).find(|&j| tab.t[(i, j)].abs() > PIVOT_TOL && !tab.basis.contains(&j)) {
                Some(j) => {
                    tab.pivot(i, j);
                    i += 1;
                }
                None => {
                    tab.t = tab.t.clone().remove_row(i);
                    tab.basis.remove(i);
                }
            }
        } else {
            i += 1;
        }
    }

    let mut cost = vec![1.0; nv];
    cost.extend(std::iter::repeat(0.0).take(p));
    tab.optimize(&cost, nv)?;

    let vertices = optimal_vertices(&tab, &cost, nv);
    let count = vertices.len();
    let mut centroid = DVector::zeros(nv);
    for v in &vertices {
        centroid += v;
    }
    centroid /= count as f64;
    let x = DVector::from_fn(m, |j, _| centroid[j] - centroid[m + j]);
    Ok(L1Solution {
        x,
        non_unique: count > 1,
        vertices: count,
    })
}

/// Breadth-first walk over optimal bases reachable by zero reduced-cost
/// pivots. Returns the distinct vertices in discovery order.
fn optimal_vertices(start: &Tableau, cost: &[f64], nv: usize) -> Vec<DVector<f64>> {
    let key = |t: &Tableau| {
        let mut b = t.basis.clone();
        b.sort_unstable();
        b
    };
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut queue = VecDeque::new();
    let mut vertices: Vec<DVector<f64>> = Vec::new();
    seen.insert(key(start));
    queue.push_back(start.clone());
    while let Some(tab) = queue.pop_front() {
        let z = tab.primal(nv);
        if !vertices.iter().any(|v| (v - &z).amax() <= 1e-9 * z.amax().max(1.0)) {
            vertices.push(z);
        }
        let rc = tab.reduced_costs(cost, nv);
        for c in 0..nv {
            if seen.len() >= MAX_FACE_BASES {
                break;
            }
            if tab.basis.contains(&c) || rc[c].abs() > PIVOT_TOL {
                continue;
            }
            if let Some(r) = tab.leaving_row(c) {
                let mut next = tab.clone();
                next.pivot(r, c);
                if seen.insert(key(&next)) {
                    queue.push_back(next);
                }
            }
        }
    }
    vertices
}
