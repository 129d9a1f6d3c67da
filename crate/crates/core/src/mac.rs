//! Cell transmission schedules, protocol-model data slots and RREQ capture.

use serde::Serialize;

use crate::config::NetworkConfig;
use crate::topology::{Grid, NodePlacement};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub colors: Vec<u32>,
    pub period: u32,
}

impl Schedule {
    pub fn color(&self, cell: u32) -> u32 {
        self.colors[cell as usize]
    }

    /// Whether `cell` may transmit in data slot `slot`.
    pub fn active(&self, cell: u32, slot: u64) -> bool {
        u64::from(self.colors[cell as usize]) == slot % u64::from(self.period)
    }

    pub fn is_proper(&self, adjacency: &[Vec<u32>]) -> bool {
        adjacency
            .iter()
            .enumerate()
            .all(|(c, nb)| nb.iter().all(|&d| self.colors[c] != self.colors[d as usize]))
    }
}

/// Greedy colouring in cell-index order; uses at most `maxdeg + 1` colours.
pub fn color_schedule(adjacency: &[Vec<u32>]) -> Schedule {
    let mut colors = vec![u32::MAX; adjacency.len()];
    let mut taken = Vec::new();
    for c in 0..adjacency.len() {
        taken.clear();
        taken.resize(adjacency[c].len() + 1, false);
        for &d in &adjacency[c] {
            let k = colors[d as usize];
            if (k as usize) < taken.len() {
                taken[k as usize] = true;
            }
        }
        colors[c] = taken.iter().position(|t| !t).unwrap_or(0) as u32;
    }
    let period = colors.iter().copied().max().map_or(1, |k| k + 1);
    Schedule { colors, period }
}

/// Spacing of the lattice schedule: cells `p` apart along either axis never
/// interfere.
pub fn lattice_spacing(side: f64, r: f64, delta: f64) -> u32 {
    ((2.0 + delta) * r / side).ceil() as u32 + 1
}

/// Colour `(x mod p) + p (y mod p)`. The period `p^2` depends only on the
/// ratio `r / side` and `delta`, so it is the same at every network size.
pub fn lattice_schedule(grid: &Grid) -> Schedule {
    let p = lattice_spacing(grid.side, grid.r, grid.delta);
    let colors = (0..grid.cells() as u32)
        .map(|c| {
            let (x, y) = grid.coords(c);
            (x as u32 % p) + p * (y as u32 % p)
        })
        .collect();
    Schedule { colors, period: p * p }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SlotOutcome {
    Success,
    Collided,
    /// The receiver is beyond `r` of its sender.
    OutOfRange,
}

/// Protocol model: `(i, j)` succeeds iff every other sender `k` has
/// `dist(k, j) >= (1 + delta) r`.
pub fn data_slot_success(pairs: &[(u32, u32)], placement: &NodePlacement, r: f64, delta: f64) -> Vec<SlotOutcome> {
    let guard = (1.0 + delta) * r;
    pairs
        .iter()
        .enumerate()
        .map(|(a, &(i, j))| {
            if placement.dist(i as usize, j as usize) > r {
                return SlotOutcome::OutOfRange;
            }
            let blocked = pairs
                .iter()
                .enumerate()
                .any(|(b, &(k, _))| b != a && k != i && placement.dist(k as usize, j as usize) < guard);
            if blocked {
                SlotOutcome::Collided
            } else {
                SlotOutcome::Success
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Capture {
    /// No transmitter within the reception disk.
    Nothing,
    /// Exactly one candidate.
    Single(u32),
    /// Several candidates; the nearest (lowest index on ties) wins.
    Captured(u32),
}

impl Capture {
    pub fn sender(self) -> Option<u32> {
        match self {
            Capture::Nothing => None,
            Capture::Single(t) | Capture::Captured(t) => Some(t),
        }
    }
}

fn closer(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Reference implementation over an explicit transmitter list.
pub fn capture_receive(
    receiver: u32,
    transmitters: &[u32],
    placement: &NodePlacement,
    config: &NetworkConfig,
) -> Capture {
    let radius = reception_limit(config);
    let mut best: Option<(f64, u32)> = None;
    let mut count = 0;
    for &t in transmitters {
        if t == receiver {
            continue;
        }
        let d = placement.dist(receiver as usize, t as usize);
        if d <= radius {
            count += 1;
            if best.is_none_or(|b| closer((d, t), b)) {
                best = Some((d, t));
            }
        }
    }
    match (count, best) {
        (0, _) | (_, None) => Capture::Nothing,
        (1, Some((_, t))) => Capture::Single(t),
        (_, Some((_, t))) => Capture::Captured(t),
    }
}

/// Reception radius; a full-area disk means every node hears every other.
pub fn reception_limit(config: &NetworkConfig) -> f64 {
    if config.reception_area() >= 1.0 {
        f64::INFINITY
    } else {
        config.reception_radius()
    }
}

/// Per-node lists of the nodes inside its reception disk, with distances.
#[derive(Debug, Clone)]
pub struct ReceptionIndex {
    pub neighbors: Vec<Vec<(u32, f64)>>,
}

impl ReceptionIndex {
    pub fn build(placement: &NodePlacement, config: &NetworkConfig) -> Self {
        let n = placement.len();
        let radius = reception_limit(config);
        let mut neighbors = vec![Vec::new(); n];
        if !radius.is_finite() {
            for (i, list) in neighbors.iter_mut().enumerate() {
                for j in 0..n {
                    if i != j {
                        list.push((j as u32, placement.dist(i, j)));
                    }
                }
            }
            return ReceptionIndex { neighbors };
        }
        // Bucket nodes on a grid of pitch >= radius and scan the 3x3 block.
        let b = ((1.0 / radius).floor() as usize).clamp(1, 4096);
        let bucket = |x: f64| ((x * b as f64) as usize).min(b - 1);
        let mut buckets = vec![Vec::new(); b * b];
        for (i, p) in placement.positions.iter().enumerate() {
            buckets[bucket(p[1]) * b + bucket(p[0])].push(i as u32);
        }
        for (i, p) in placement.positions.iter().enumerate() {
            let (bx, by) = (bucket(p[0]), bucket(p[1]));
            for y in by.saturating_sub(1)..=(by + 1).min(b - 1) {
                for x in bx.saturating_sub(1)..=(bx + 1).min(b - 1) {
                    for &j in &buckets[y * b + x] {
                        if j as usize == i {
                            continue;
                        }
                        let d = placement.dist(i, j as usize);
                        if d <= radius {
                            neighbors[i].push((j, d));
                        }
                    }
                }
            }
            neighbors[i].sort_unstable_by_key(|&(j, _)| j);
        }
        ReceptionIndex { neighbors }
    }

    pub fn degree(&self, node: u32) -> usize {
        self.neighbors[node as usize].len()
    }

    pub fn mean_degree(&self) -> f64 {
        let n = self.neighbors.len().max(1);
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / n as f64
    }

    /// Resolve one slot. `best[j]` ends up holding the captured sender for
    /// every listening node `j` that hears something; transmitters hear
    /// nothing. `touched` lists the receivers written to.
    pub fn resolve(
        &self,
        transmitters: &[u32],
        is_transmitting: &[bool],
        best: &mut [Option<(f64, u32)>],
        touched: &mut Vec<u32>,
    ) {
        touched.clear();
        for &t in transmitters {
            for &(j, d) in &self.neighbors[t as usize] {
                if is_transmitting[j as usize] {
                    continue;
                }
                let slot = &mut best[j as usize];
                match slot {
                    None => {
                        *slot = Some((d, t));
                        touched.push(j);
                    }
                    Some(b) if closer((d, t), *b) => *b = (d, t),
                    _ => {}
                }
            }
        }
    }
}
