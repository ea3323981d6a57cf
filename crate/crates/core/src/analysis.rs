//! Structural diagnostics of a zone: the recovery matrix `M`, the covering
//! matching, acyclicity, and the rank deficits that select the detector
//! branch.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::grid::{submatrix, Grid, UnionFind, Zone};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct ZoneDiagnostics {
    /// `[G -B; B G]` built from `Y[exterior, zone]`.
    pub m_matrix: DMatrix<f64>,
    pub has_covering_matching: bool,
    pub is_acyclic: bool,
    pub rank_m: usize,
    pub rank_dh: usize,
    /// `2 n_H - rank(M)`.
    pub lambda_h: usize,
    /// `m_H - rank(D_H)`.
    pub gamma_h: usize,
    /// Matched `(exterior, zone)` bus positions.
    pub matching: Vec<(usize, usize)>,
}

impl ZoneDiagnostics {
    /// Covering matching found but `M` still rank deficient: a degenerate
    /// admittance pattern.
    pub fn matching_rank_anomaly(&self) -> bool {
        self.has_covering_matching && self.lambda_h > 0
    }

    pub fn report(&self, grid: &Grid) -> ZoneReport {
        ZoneReport {
            lambda_h: self.lambda_h,
            gamma_h: self.gamma_h,
            has_covering_matching: self.has_covering_matching,
            is_acyclic: self.is_acyclic,
            matching_pairs: self
                .matching
                .iter()
                .map(|&(e, h)| [grid.buses()[e].id, grid.buses()[h].id])
                .collect(),
        }
    }
}

/// JSON form of the diagnostics, with external bus ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ZoneReport {
    pub lambda_h: usize,
    pub gamma_h: usize,
    pub has_covering_matching: bool,
    pub is_acyclic: bool,
    /// `[exterior bus, zone bus]` pairs.
    pub matching_pairs: Vec<[usize; 2]>,
}

pub fn build_m_matrix(grid: &Grid, zone: &Zone) -> DMatrix<f64> {
    let y = submatrix(grid.y_matrix(), &zone.exterior_nodes, &zone.h_nodes);
    let (g, b) = (linalg::re(&y), linalg::im(&y));
    let (r, c) = (y.nrows(), y.ncols());
    let mut m = DMatrix::zeros(2 * r, 2 * c);
    m.view_mut((0, 0), (r, c)).copy_from(&g);
    m.view_mut((0, c), (r, c)).copy_from(&(-&b));
    m.view_mut((r, 0), (r, c)).copy_from(&b);
    m.view_mut((r, c), (r, c)).copy_from(&g);
    m
}

/// Zone incidence `D_H`: zone-bus rows, in-zone line columns.
pub fn zone_incidence(grid: &Grid, zone: &Zone) -> DMatrix<f64> {
    submatrix(grid.incidence(), &zone.h_nodes, &zone.h_lines)
}

/// Maximum bipartite matching between zone buses and exterior buses over the
/// cut lines (parallel cut lines collapse to one edge). Returns whether every
/// zone bus is matched, and the `(exterior, zone)` pairs.
pub fn check_covering_matching(grid: &Grid, zone: &Zone) -> (bool, Vec<(usize, usize)>) {
    let n_h = zone.n_h();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_h];
    for &j in &zone.cut_lines {
        let (f, t) = grid.line_ends(j);
        let (h, e) = if zone.contains_bus(f) { (f, t) } else { (t, f) };
        let slot = zone.h_nodes.binary_search(&h).expect("zone bus");
        adj[slot].insert(e);
    }
    let adj: Vec<Vec<usize>> = adj.into_iter().map(|s| s.into_iter().collect()).collect();

    // Kuhn's augmenting paths; `owner[e]` is the zone slot matched to `e`.
    let mut owner: Vec<Option<usize>> = vec![None; grid.n()];
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &e in &adj[u] {
            if seen[e] {
                continue;
            }
            seen[e] = true;
            if owner[e].map_or(true, |w| augment(w, adj, seen, owner)) {
                owner[e] = Some(u);
                return true;
            }
        }
        false
    }
    let mut size = 0;
    for u in 0..n_h {
        let mut seen = vec![false; grid.n()];
        if augment(u, &adj, &mut seen, &mut owner) {
            size += 1;
        }
    }
    let mut pairs: Vec<(usize, usize)> = owner
        .iter()
        .enumerate()
        .filter_map(|(e, w)| w.map(|u| (e, zone.h_nodes[u])))
        .collect();
    pairs.sort_by_key(|&(_, h)| h);
    (size == n_h, pairs)
}

/// True iff the in-zone lines form a forest. Parallel in-zone lines count as
/// a two-node cycle.
pub fn check_acyclic(grid: &Grid, zone: &Zone) -> bool {
    let mut uf = UnionFind::new(grid.n());
    zone.h_lines.iter().all(|&j| {
        let (f, t) = grid.line_ends(j);
        uf.union(f, t)
    })
}

/// Connected components of the zone subgraph `(N_H, L_H)`, as lists of
/// slots into `zone.h_nodes`.
pub fn zone_components(grid: &Grid, zone: &Zone) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(zone.n_h());
    let slot = |i: usize| zone.h_nodes.binary_search(&i).expect("zone bus");
    for &j in &zone.h_lines {
        let (f, t) = grid.line_ends(j);
        uf.union(slot(f), slot(t));
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_group = vec![usize::MAX; zone.n_h()];
    for s in 0..zone.n_h() {
        let r = uf.find(s);
        if root_group[r] == usize::MAX {
            root_group[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_group[r]].push(s);
    }
    groups
}

/// `(lambda_h, gamma_h)` from numerical ranks.
pub fn rank_deficits(grid: &Grid, zone: &Zone) -> (usize, usize) {
    let d = analyze(grid, zone);
    (d.lambda_h, d.gamma_h)
}

pub fn analyze(grid: &Grid, zone: &Zone) -> ZoneDiagnostics {
    let m_matrix = build_m_matrix(grid, zone);
    let d_h = zone_incidence(grid, zone);
    let rank_m = linalg::rank(&m_matrix);
    let rank_dh = linalg::rank(&d_h);
    let (has_covering_matching, matching) = check_covering_matching(grid, zone);
    ZoneDiagnostics {
        has_covering_matching,
        is_acyclic: check_acyclic(grid, zone),
        lambda_h: 2 * zone.n_h() - rank_m,
        gamma_h: zone.m_h() - rank_dh,
        rank_m,
        rank_dh,
        matching,
        m_matrix,
    }
}
