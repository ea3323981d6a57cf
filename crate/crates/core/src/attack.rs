//! Attack simulation: remove failed in-zone lines, solve the post-attack
//! flow, and package what the control center can still observe.

use itertools::Itertools;
use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusKind, Grid, Zone};
use crate::powerflow::{flat_start, solve_ac, InjectionSpec, PowerFlowOutcome, VoltageState};

pub const OBSERVATION_SCHEMA: u32 = 1;

/// A failure set `F` inside a zone. `failed_lines` are sorted line positions,
/// all in `zone.h_lines`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackScenario {
    pub zone: Zone,
    pub failed_lines: Vec<usize>,
}

impl AttackScenario {
    pub fn new(grid: &Grid, zone: Zone, failed_lines: Vec<usize>) -> Result<Self> {
        let mut failed_lines = failed_lines;
        failed_lines.sort_unstable();
        if failed_lines.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidScenario("duplicate failed line".into()));
        }
        if let Some(&j) = failed_lines.iter().find(|&&j| zone.h_line_slot(j).is_none()) {
            let id = grid.lines().get(j).map_or(j, |l| l.id);
            return Err(Error::InvalidScenario(format!("line {id} is not inside the zone")));
        }
        if zone.contains_bus(grid.slack_index()) {
            return Err(Error::InvalidScenario("the slack bus must lie outside the zone".into()));
        }
        Ok(AttackScenario { zone, failed_lines })
    }

    pub fn from_ids(grid: &Grid, zone: Zone, failed_line_ids: &[usize]) -> Result<Self> {
        let positions = failed_line_ids
            .iter()
            .map(|&id| grid.line_index(id))
            .collect::<Result<Vec<_>>>()?;
        AttackScenario::new(grid, zone, positions)
    }

    pub fn failed_line_ids(&self, grid: &Grid) -> Vec<usize> {
        grid.line_ids(&self.failed_lines)
    }
}

/// Scenario file: `{zone_nodes, failed_lines}` by external id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub zone_nodes: Vec<usize>,
    pub failed_lines: Vec<usize>,
}

impl ScenarioFile {
    pub fn resolve(&self, grid: &Grid) -> Result<AttackScenario> {
        let zone = crate::grid::make_zone(grid, &self.zone_nodes)?;
        AttackScenario::from_ids(grid, zone, &self.failed_lines)
    }
}

/// Converged pre-attack operating point.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub spec: InjectionSpec,
    pub v: VoltageState,
    pub s: DVector<Complex64>,
}

impl OperatingPoint {
    pub fn solve(grid: &Grid) -> Result<Self> {
        let spec = InjectionSpec::from_grid(grid);
        match solve_ac(grid, &spec, &flat_start(grid.n())) {
            PowerFlowOutcome::Converged { v, s, .. } => Ok(OperatingPoint { spec, v, s }),
            PowerFlowOutcome::NoSolution { iterations, mismatch } => {
                Err(Error::NoSolution { iterations, mismatch })
            }
        }
    }
}

/// Everything the detector may use. Holds no post-attack voltage for any
/// zone bus.
#[derive(Debug, Clone)]
pub struct Observation {
    pub zone: Zone,
    /// Pre-attack voltages of every bus.
    pub pre_voltages: VoltageState,
    /// Post-attack voltages, one per `zone.exterior_nodes` entry.
    pub exterior_voltages: VoltageState,
    /// Post-attack injections of every bus.
    pub injections: DVector<Complex64>,
}

impl Observation {
    /// Full voltage vector with the exterior observed and the zone filled
    /// from `zone_voltages` (ordered as `zone.h_nodes`).
    pub fn assemble(&self, zone_voltages: &VoltageState) -> VoltageState {
        let mut v = DVector::from_element(self.pre_voltages.len(), Complex64::new(0.0, 0.0));
        for (k, &i) in self.zone.exterior_nodes.iter().enumerate() {
            v[i] = self.exterior_voltages[k];
        }
        for (k, &i) in self.zone.h_nodes.iter().enumerate() {
            v[i] = zone_voltages[k];
        }
        v
    }

    pub fn pre_zone_voltages(&self) -> VoltageState {
        DVector::from_fn(self.zone.n_h(), |k, _| self.pre_voltages[self.zone.h_nodes[k]])
    }

    pub fn to_file(&self, grid: &Grid) -> ObservationFile {
        let phasor = |i: usize, z: Complex64| BusPhasor {
            bus: grid.buses()[i].id,
            re: z.re,
            im: z.im,
        };
        ObservationFile {
            schema_version: OBSERVATION_SCHEMA,
            zone_nodes: self.zone.h_node_ids(grid),
            pre_voltages: (0..grid.n()).map(|i| phasor(i, self.pre_voltages[i])).collect(),
            exterior_voltages: self
                .zone
                .exterior_nodes
                .iter()
                .zip(self.exterior_voltages.iter())
                .map(|(&i, &z)| phasor(i, z))
                .collect(),
            injections: (0..grid.n())
                .map(|i| BusPower {
                    bus: grid.buses()[i].id,
                    p: self.injections[i].re,
                    q: self.injections[i].im,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusPhasor {
    pub bus: usize,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusPower {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

/// On-disk observation, keyed by external bus ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFile {
    pub schema_version: u32,
    pub zone_nodes: Vec<usize>,
    pub pre_voltages: Vec<BusPhasor>,
    pub exterior_voltages: Vec<BusPhasor>,
    pub injections: Vec<BusPower>,
}

impl ObservationFile {
    pub fn resolve(&self, grid: &Grid) -> Result<Observation> {
        if self.schema_version != OBSERVATION_SCHEMA {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: OBSERVATION_SCHEMA,
            });
        }
        let zone = crate::grid::make_zone(grid, &self.zone_nodes)?;
        let n = grid.n();
        let full_phasors = |rows: &[BusPhasor], what: &str| -> Result<VoltageState> {
            let mut v: Vec<Option<Complex64>> = vec![None; n];
            for r in rows {
                v[grid.bus_index(r.bus)?] = Some(Complex64::new(r.re, r.im));
            }
            v.into_iter()
                .enumerate()
                .map(|(i, z)| {
                    z.ok_or_else(|| {
                        Error::InvalidScenario(format!("{what} missing for bus {}", grid.buses()[i].id))
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(DVector::from_vec)
        };
        let pre_voltages = full_phasors(&self.pre_voltages, "pre-attack voltage")?;

        let mut ext: Vec<Option<Complex64>> = vec![None; zone.exterior_nodes.len()];
        for r in &self.exterior_voltages {
            let i = grid.bus_index(r.bus)?;
            let k = zone.exterior_nodes.binary_search(&i).map_err(|_| {
                Error::InvalidScenario(format!("exterior voltage given for zone bus {}", r.bus))
            })?;
            ext[k] = Some(Complex64::new(r.re, r.im));
        }
        let exterior_voltages = ext
            .into_iter()
            .enumerate()
            .map(|(k, z)| {
                z.ok_or_else(|| {
                    Error::InvalidScenario(format!(
                        "post-attack voltage missing for exterior bus {}",
                        grid.buses()[zone.exterior_nodes[k]].id
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut s: Vec<Option<Complex64>> = vec![None; n];
        for r in &self.injections {
            s[grid.bus_index(r.bus)?] = Some(Complex64::new(r.p, r.q));
        }
        let injections = s
            .into_iter()
            .enumerate()
            .map(|(i, z)| {
                z.ok_or_else(|| Error::InvalidScenario(format!("injection missing for bus {}", grid.buses()[i].id)))
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Observation {
            zone,
            pre_voltages,
            exterior_voltages: DVector::from_vec(exterior_voltages),
            injections: DVector::from_vec(injections),
        })
    }
}

/// Grid with the failed lines removed. Rejects attacks that island any bus.
pub fn apply_attack(grid: &Grid, scenario: &AttackScenario) -> Result<Grid> {
    let attacked = grid.without_lines(&scenario.failed_lines);
    if !attacked.is_connected() {
        return Err(Error::IslandedGrid(scenario.failed_line_ids(grid)));
    }
    Ok(attacked)
}

/// Result of a successful simulation. `post_voltages` is ground truth and
/// must not be handed to a detector.
#[derive(Debug, Clone)]
pub struct SimulatedAttack {
    pub post_voltages: VoltageState,
    pub observation: Observation,
    pub iterations: usize,
}

impl SimulatedAttack {
    pub fn true_zone_voltages(&self) -> VoltageState {
        let h = &self.observation.zone.h_nodes;
        DVector::from_fn(h.len(), |k, _| self.post_voltages[h[k]])
    }
}

/// Solves the post-attack flow (warm-started from the pre-attack state, same
/// bus specifications) and builds the observation. Reported injections are
/// the specified values at loads and generators, and the solved values for
/// generator Q and the slack.
pub fn simulate_attack(grid: &Grid, scenario: &AttackScenario, pre: &OperatingPoint) -> Result<SimulatedAttack> {
    let attacked = apply_attack(grid, scenario)?;
    let (v, s, iterations) = match solve_ac(&attacked, &pre.spec, &pre.v) {
        PowerFlowOutcome::Converged { v, s, iterations } => (v, s, iterations),
        PowerFlowOutcome::NoSolution { iterations, mismatch } => {
            return Err(Error::NoSolution { iterations, mismatch })
        }
    };
    let injections = DVector::from_fn(grid.n(), |i, _| match pre.spec.kinds[i] {
        BusKind::Load => Complex64::new(pre.spec.p[i], pre.spec.q[i]),
        BusKind::Generator => Complex64::new(pre.spec.p[i], s[i].im),
        BusKind::Slack => s[i],
    });
    let zone = scenario.zone.clone();
    let exterior_voltages = DVector::from_fn(zone.exterior_nodes.len(), |k, _| v[zone.exterior_nodes[k]]);
    Ok(SimulatedAttack {
        observation: Observation {
            zone,
            pre_voltages: pre.v.clone(),
            exterior_voltages,
            injections,
        },
        post_voltages: v,
        iterations,
    })
}

/// All failure sets of size `1..=k_max` over `h_lines`, by increasing size and
/// then lexicographically. Deterministic and order-stable.
pub fn enumerate_failures(h_lines: &[usize], k_max: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
    (1..=k_max.min(h_lines.len())).flat_map(move |k| h_lines.iter().copied().combinations(k))
}
