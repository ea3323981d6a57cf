//! Seeded synthetic grids with a designated attacked zone.
//!
//! Every generator uses the same frame: a slack bus, an exterior ring with
//! a few generators, and a zone whose buses each have a private tie line to
//! their own exterior bus. The ties give every zone a covering matching and
//! keep any in-zone failure set from islanding a bus.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Bus, Grid, Line};

/// A grid together with the external ids of its zone buses.
#[derive(Debug, Clone)]
pub struct ZonedGrid {
    pub grid: Grid,
    pub zone: Vec<usize>,
}

struct Builder {
    rng: ChaCha8Rng,
    buses: Vec<Bus>,
    lines: Vec<Line>,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            buses: Vec::new(),
            lines: Vec::new(),
        }
    }

    fn line(&mut self, f: usize, t: usize) {
        let r = self.rng.random_range(0.005..0.03);
        let x = self.rng.random_range(0.04..0.12);
        let id = self.lines.len() + 1;
        self.lines.push(Line::from_impedance(id, f, t, r, x));
    }

    fn load(&mut self, id: usize, p: (f64, f64)) {
        let p = -self.rng.random_range(p.0..p.1);
        let q = p * self.rng.random_range(0.2..0.5);
        self.buses.push(Bus::load(id, p, q));
    }

    /// Slack (id 1), exterior ring on ids `2..=k+1` with every fourth bus a
    /// generator, and `k` zone buses on ids `k+2..=2k+1`, each tied to the
    /// matching exterior bus. Returns the zone ids.
    fn frame(&mut self, k: usize) -> Vec<usize> {
        self.buses.push(Bus::slack(1, 1.02));
        for e in 2..=k + 1 {
            if e % 4 == 0 {
                let p = self.rng.random_range(0.2..0.5);
                let v = self.rng.random_range(1.0..1.03);
                self.buses.push(Bus::generator(e, p, v));
            } else {
                self.load(e, (0.05, 0.2));
            }
        }
        let zone: Vec<usize> = (k + 2..=2 * k + 1).collect();
        for &z in &zone {
            self.load(z, (0.05, 0.25));
        }
        for e in 2..=k + 1 {
            let next = if e == k + 1 { 2 } else { e + 1 };
            self.line(e, next);
        }
        self.line(1, 2);
        self.line(1, 2 + k / 2);
        for (i, &z) in zone.iter().enumerate() {
            self.line(i + 2, z);
        }
        zone
    }

    fn finish(self, zone: Vec<usize>) -> ZonedGrid {
        ZonedGrid {
            grid: Grid::new(self.buses, self.lines).expect("generated grid is valid"),
            zone,
        }
    }
}

/// Zone is a single cycle of `m >= 3` lines.
pub fn cycle_zone(m: usize, seed: u64) -> ZonedGrid {
    assert!(m >= 3, "a cycle needs at least three lines");
    let mut b = Builder::new(seed);
    let zone = b.frame(m);
    for i in 0..m {
        b.line(zone[i], zone[(i + 1) % m]);
    }
    b.finish(zone)
}

/// Zone is a path with `lines` in-zone lines (`lines + 1` buses): matched and
/// acyclic.
pub fn path_zone(lines: usize, seed: u64) -> ZonedGrid {
    assert!(lines >= 1);
    let mut b = Builder::new(seed);
    let zone = b.frame(lines + 1);
    for w in zone.windows(2) {
        b.line(w[0], w[1]);
    }
    b.finish(zone)
}
