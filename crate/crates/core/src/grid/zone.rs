use std::collections::BTreeSet;

use serde::Serialize;

use super::Grid;
use crate::error::{Error, Result};

/// Partition of the buses into an attacked zone `H` and its exterior, with the
/// induced line classes. All sets hold sorted positions in the grid the zone
/// was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Zone {
    pub h_nodes: Vec<usize>,
    pub exterior_nodes: Vec<usize>,
    /// Lines with both endpoints in `H`.
    pub h_lines: Vec<usize>,
    /// Lines with one endpoint on each side.
    pub cut_lines: Vec<usize>,
    /// Lines with both endpoints outside `H`.
    pub exterior_lines: Vec<usize>,
    in_zone: Vec<bool>,
}

/// Zone membership by external ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ZoneIds {
    pub h_nodes: Vec<usize>,
    pub exterior_nodes: Vec<usize>,
    pub h_lines: Vec<usize>,
    pub cut_lines: Vec<usize>,
}

pub fn make_zone(grid: &Grid, bus_ids: &[usize]) -> Result<Zone> {
    let mut positions = BTreeSet::new();
    for &id in bus_ids {
        positions.insert(grid.bus_index(id)?);
    }
    Zone::from_positions(grid, positions.into_iter().collect())
}

impl Zone {
    pub fn from_positions(grid: &Grid, mut h_nodes: Vec<usize>) -> Result<Zone> {
        h_nodes.sort_unstable();
        h_nodes.dedup();
        if h_nodes.is_empty() {
            return Err(Error::InvalidZone("zone has no buses".into()));
        }
        if h_nodes.len() >= grid.n() {
            return Err(Error::InvalidZone("zone must leave at least one exterior bus".into()));
        }
        if let Some(&bad) = h_nodes.iter().find(|&&i| i >= grid.n()) {
            return Err(Error::InvalidZone(format!("bus position {bad} out of range")));
        }
        let mut in_zone = vec![false; grid.n()];
        for &i in &h_nodes {
            in_zone[i] = true;
        }
        let exterior_nodes = (0..grid.n()).filter(|&i| !in_zone[i]).collect();
        let (mut h_lines, mut cut_lines, mut exterior_lines) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..grid.m() {
            let (f, t) = grid.line_ends(j);
            match (in_zone[f], in_zone[t]) {
                (true, true) => h_lines.push(j),
                (false, false) => exterior_lines.push(j),
                _ => cut_lines.push(j),
            }
        }
        Ok(Zone {
            h_nodes,
            exterior_nodes,
            h_lines,
            cut_lines,
            exterior_lines,
            in_zone,
        })
    }

    pub fn n_h(&self) -> usize {
        self.h_nodes.len()
    }

    pub fn m_h(&self) -> usize {
        self.h_lines.len()
    }

    pub fn contains_bus(&self, pos: usize) -> bool {
        self.in_zone[pos]
    }

    /// Index of line position `j` within `h_lines`.
    pub fn h_line_slot(&self, j: usize) -> Option<usize> {
        self.h_lines.binary_search(&j).ok()
    }

    pub fn ids(&self, grid: &Grid) -> ZoneIds {
        ZoneIds {
            h_nodes: grid.bus_ids(&self.h_nodes),
            exterior_nodes: grid.bus_ids(&self.exterior_nodes),
            h_lines: grid.line_ids(&self.h_lines),
            cut_lines: grid.line_ids(&self.cut_lines),
        }
    }

    pub fn h_node_ids(&self, grid: &Grid) -> Vec<usize> {
        grid.bus_ids(&self.h_nodes)
    }

    pub fn h_line_ids(&self, grid: &Grid) -> Vec<usize> {
        grid.line_ids(&self.h_lines)
    }
}
