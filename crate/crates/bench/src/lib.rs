//! Scenario fixtures shared by the benchmarks.

use std::path::PathBuf;

use expose_core::{make_zone, read_case, simulate_attack, AttackScenario, Grid, Observation, OperatingPoint, Zone};

/// Matched, acyclic ten-line zone on the 118-bus case.
pub const C118_TREE: [usize; 11] = [82, 83, 85, 88, 94, 96, 97, 100, 101, 104, 106];

pub fn data(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "data", name].iter().collect()
}

pub fn load_case(name: &str) -> Grid {
    read_case(data(name)).expect("bundled case parses")
}

/// Observation after failing the first `k` in-zone lines.
pub fn observe_first_k(grid: &Grid, zone: &Zone, k: usize) -> Observation {
    let pre = OperatingPoint::solve(grid).expect("pre-attack flow converges");
    let sc = AttackScenario::new(grid, zone.clone(), zone.h_lines[..k].to_vec()).expect("valid scenario");
    simulate_attack(grid, &sc, &pre).expect("attack converges").observation
}

pub fn zone(grid: &Grid, nodes: &[usize]) -> Zone {
    make_zone(grid, nodes).expect("zone is valid")
}
