//! Grid topology, admittance matrix and incidence matrix.
//!
//! Buses are always addressed internally by their *position* in ascending
//! bus-id order; lines by their position in the grid's line list. External
//! ids only appear at the I/O boundary.

mod case;
mod zone;

pub use case::{parse_case, parse_case_with_warnings, read_case};
pub use zone::{make_zone, Zone, ZoneIds};

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, Scalar};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    /// PV bus: fixed active power and voltage magnitude.
    Generator,
    /// PQ bus: fixed active and reactive power.
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Net injected active power, per-unit.
    pub p_inject: f64,
    /// Net injected reactive power, per-unit.
    pub q_inject: f64,
    /// Voltage magnitude setpoint (slack and PV buses), per-unit.
    pub v_mag_setpoint: f64,
}

impl Bus {
    pub fn load(id: usize, p: f64, q: f64) -> Self {
        Bus {
            id,
            kind: BusKind::Load,
            p_inject: p,
            q_inject: q,
            v_mag_setpoint: 1.0,
        }
    }

    pub fn generator(id: usize, p: f64, v_mag: f64) -> Self {
        Bus {
            id,
            kind: BusKind::Generator,
            p_inject: p,
            q_inject: 0.0,
            v_mag_setpoint: v_mag,
        }
    }

    pub fn slack(id: usize, v_mag: f64) -> Self {
        Bus {
            id,
            kind: BusKind::Slack,
            p_inject: 0.0,
            q_inject: 0.0,
            v_mag_setpoint: v_mag,
        }
    }
}

/// A series branch. The `from_bus -> to_bus` direction is the orientation
/// used by the incidence matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub admittance: Complex64,
}

impl Line {
    pub fn new(id: usize, from_bus: usize, to_bus: usize, admittance: Complex64) -> Self {
        Line {
            id,
            from_bus,
            to_bus,
            admittance,
        }
    }

    /// Line with series impedance `r + jx`.
    pub fn from_impedance(id: usize, from_bus: usize, to_bus: usize, r: f64, x: f64) -> Self {
        Line::new(id, from_bus, to_bus, Complex64::new(r, x).inv())
    }
}

/// Immutable grid with its derived admittance (`Y`) and incidence (`D`)
/// matrices.
#[derive(Debug, Clone)]
pub struct Grid {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    /// Endpoint positions `(from, to)` per line.
    ends: Vec<(usize, usize)>,
    bus_pos: HashMap<usize, usize>,
    line_pos: HashMap<usize, usize>,
    slack: usize,
    y: DMatrix<Complex64>,
    d: DMatrix<f64>,
}

impl Grid {
    pub fn new(mut buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self> {
        buses.sort_by_key(|b| b.id);
        let mut bus_pos = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if bus_pos.insert(b.id, i).is_some() {
                return Err(Error::InvalidGrid(format!("duplicate bus id {}", b.id)));
            }
        }
        let slacks: Vec<usize> = (0..buses.len())
            .filter(|&i| buses[i].kind == BusKind::Slack)
            .collect();
        let slack = match slacks.len() {
            0 => return Err(Error::NoSlack),
            1 => slacks[0],
            k => return Err(Error::MultipleSlack(k)),
        };

        let mut line_pos = HashMap::with_capacity(lines.len());
        let mut ends = Vec::with_capacity(lines.len());
        for (j, l) in lines.iter().enumerate() {
            if line_pos.insert(l.id, j).is_some() {
                return Err(Error::InvalidGrid(format!("duplicate line id {}", l.id)));
            }
            let f = *bus_pos.get(&l.from_bus).ok_or(Error::UnknownBus(l.from_bus))?;
            let t = *bus_pos.get(&l.to_bus).ok_or(Error::UnknownBus(l.to_bus))?;
            if f == t {
                return Err(Error::InvalidGrid(format!(
                    "line {} is a self-loop at bus {}",
                    l.id, l.from_bus
                )));
            }
            if l.admittance == Complex64::new(0.0, 0.0) {
                return Err(Error::InvalidGrid(format!("line {} has zero admittance", l.id)));
            }
            if !l.admittance.is_finite() {
                return Err(Error::ZeroImpedance {
                    from: l.from_bus,
                    to: l.to_bus,
                    line: l.id,
                });
            }
            ends.push((f, t));
        }

        let y = build_admittance(buses.len(), &ends, &lines);
        let d = build_incidence(buses.len(), &ends);
        Ok(Grid {
            buses,
            lines,
            ends,
            bus_pos,
            line_pos,
            slack,
            y,
            d,
        })
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn m(&self) -> usize {
        self.lines.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn y_matrix(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    /// Endpoint positions of line `j`.
    pub fn line_ends(&self, j: usize) -> (usize, usize) {
        self.ends[j]
    }

    pub fn bus_index(&self, id: usize) -> Result<usize> {
        self.bus_pos.get(&id).copied().ok_or(Error::UnknownBus(id))
    }

    pub fn line_index(&self, id: usize) -> Result<usize> {
        self.line_pos.get(&id).copied().ok_or(Error::UnknownLine(id))
    }

    pub fn bus_ids(&self, positions: &[usize]) -> Vec<usize> {
        positions.iter().map(|&i| self.buses[i].id).collect()
    }

    pub fn line_ids(&self, positions: &[usize]) -> Vec<usize> {
        positions.iter().map(|&j| self.lines[j].id).collect()
    }

    pub fn line_admittances(&self) -> Vec<Complex64> {
        self.lines.iter().map(|l| l.admittance).collect()
    }

    /// Adjacency lists by bus position (parallel lines appear once per line).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n()];
        for &(f, t) in &self.ends {
            adj[f].push(t);
            adj[t].push(f);
        }
        adj
    }

    /// Number of connected components over all buses.
    pub fn components(&self) -> usize {
        let mut uf = UnionFind::new(self.n());
        for &(f, t) in &self.ends {
            uf.union(f, t);
        }
        uf.count()
    }

    pub fn is_connected(&self) -> bool {
        self.components() == 1
    }

    /// Copy of this grid with the given line positions removed. Line ids are
    /// preserved; positions of the remaining lines shift.
    pub fn without_lines(&self, removed: &[usize]) -> Grid {
        let removed: BTreeSet<usize> = removed.iter().copied().collect();
        let lines: Vec<Line> = self
            .lines
            .iter()
            .enumerate()
            .filter(|(j, _)| !removed.contains(j))
            .map(|(_, l)| l.clone())
            .collect();
        Grid::new(self.buses.clone(), lines).expect("subset of a valid grid is valid")
    }

    /// Same topology with the bus injections replaced.
    pub fn with_buses(&self, buses: Vec<Bus>) -> Result<Grid> {
        Grid::new(buses, self.lines.clone())
    }
}

/// `Y_ik = -sum of admittances between i and k`, `Y_ii = sum of admittances
/// at i` (no shunts). Built by direct accumulation, independently of `D`.
pub fn build_admittance(n: usize, ends: &[(usize, usize)], lines: &[Line]) -> DMatrix<Complex64> {
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (&(f, t), l) in ends.iter().zip(lines) {
        let a = l.admittance;
        y[(f, f)] += a;
        y[(t, t)] += a;
        y[(f, t)] -= a;
        y[(t, f)] -= a;
    }
    y
}

/// Signed node-line incidence: `+1` at the from-bus, `-1` at the to-bus.
pub fn build_incidence(n: usize, ends: &[(usize, usize)]) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, ends.len());
    for (j, &(f, t)) in ends.iter().enumerate() {
        d[(f, j)] = 1.0;
        d[(t, j)] = -1.0;
    }
    d
}

/// Rows and columns extracted in the given (ascending) position order.
pub fn submatrix<T: Scalar>(m: &DMatrix<T>, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])].clone())
}

#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
    count: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
            count: n,
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        self.count -= 1;
        true
    }

    pub fn count(&self) -> usize {
        self.count
    }
}
