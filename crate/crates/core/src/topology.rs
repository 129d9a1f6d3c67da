//! Uniform node placement on the unit square and its cell tessellation.

use rand::Rng;
use serde::Serialize;

use crate::config::NetworkConfig;
use crate::error::{domain, invalid, Result};
use crate::par::{self, Parallelism};
use crate::rng::{self, Stream};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodePlacement {
    pub positions: Vec<Point>,
    pub seed: u64,
}

impl NodePlacement {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        dist(self.positions[a], self.positions[b])
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn place_nodes(config: &NetworkConfig) -> Result<NodePlacement> {
    if config.n == 0 {
        return invalid("cannot place zero nodes");
    }
    let mut rng = rng::stream(config.seed, Stream::Placement);
    let positions = (0..config.n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    Ok(NodePlacement {
        positions,
        seed: config.seed,
    })
}

/// Minimum cell side `g(n) = sqrt(2 ln n / n)`.
pub fn cell_side(n: usize) -> Result<f64> {
    if n < 2 {
        return domain(format!("cell side needs n >= 2, got {n}"));
    }
    let n = n as f64;
    Ok((2.0 * n.ln() / n).sqrt())
}

/// Cells per side: the largest `m` whose side `1/m` is still at least `g(n)`.
pub fn cells_per_side(n: usize) -> usize {
    match cell_side(n) {
        Ok(g) => ((1.0 / g).floor() as usize).max(1),
        Err(_) => 1,
    }
}

/// Cell coordinate of one axis. A point on a shared edge goes to the lower
/// cell and `1.0` clamps to the last cell.
pub fn axis_cell(x: f64, m: usize) -> usize {
    let c = (x * m as f64).ceil() as i64 - 1;
    c.clamp(0, m as i64 - 1) as usize
}

/// Data-hop transmission range relative to the cell side: the farthest
/// two points of edge-adjacent cells can be.
pub const RANGE_PER_SIDE: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    pub m: usize,
    pub side: f64,
    /// Node index -> cell index (`y * m + x`).
    pub cell_of: Vec<u32>,
    pub members: Vec<Vec<u32>>,
    pub interference: Vec<Vec<u32>>,
    /// Data transmission range.
    pub r: f64,
    pub delta: f64,
}

impl Grid {
    pub fn cells(&self) -> usize {
        self.m * self.m
    }

    pub fn coords(&self, cell: u32) -> (usize, usize) {
        (cell as usize % self.m, cell as usize / self.m)
    }

    pub fn index(&self, x: usize, y: usize) -> u32 {
        (y * self.m + x) as u32
    }

    /// Lowest-index node of the cell, which acts as its relay.
    pub fn relay(&self, cell: u32) -> Option<u32> {
        self.members[cell as usize].first().copied()
    }

    pub fn max_interference_degree(&self) -> usize {
        self.interference.iter().map(Vec::len).max().unwrap_or(0)
    }
}

pub fn build_grid(placement: &NodePlacement, config: &NetworkConfig) -> Grid {
    let n = placement.len();
    let m = cells_per_side(n);
    let side = 1.0 / m as f64;
    let mut members = vec![Vec::new(); m * m];
    let cell_of: Vec<u32> = placement
        .positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = (axis_cell(p[1], m) * m + axis_cell(p[0], m)) as u32;
            members[c as usize].push(i as u32);
            c
        })
        .collect();
    let r = RANGE_PER_SIDE * side;
    let interference = interference_adjacency(m, side, r, config.delta);
    Grid {
        m,
        side,
        cell_of,
        members,
        interference,
        r,
        delta: config.delta,
    }
}

/// Smallest distance between points of two cells `(dx, dy)` apart.
pub fn cell_gap(dx: usize, dy: usize, side: f64) -> f64 {
    let a = dx.saturating_sub(1) as f64;
    let b = dy.saturating_sub(1) as f64;
    side * a.hypot(b)
}

/// `gap < reach`, with exact ties (common on the lattice, e.g. gap^2 = 20
/// side^2 at delta = 0) resolved as "not within" regardless of rounding.
fn strictly_within(gap: f64, reach: f64) -> bool {
    gap < reach * (1.0 - 1e-9)
}

/// Cells interfere when some point of one lies within `(2 + delta) r` of
/// some point of the other.
pub fn interference_adjacency(m: usize, side: f64, r: f64, delta: f64) -> Vec<Vec<u32>> {
    let reach = (2.0 + delta) * r;
    let span = ((reach / side).ceil() as usize + 1).min(m.saturating_sub(1));
    let mut offsets = Vec::new();
    for dy in 0..=span {
        for dx in 0..=span {
            if (dx, dy) != (0, 0) && strictly_within(cell_gap(dx, dy, side), reach) {
                offsets.push((dx as i64, dy as i64));
            }
        }
    }
    let mut adj = vec![Vec::new(); m * m];
    for y in 0..m as i64 {
        for x in 0..m as i64 {
            let list = &mut adj[(y * m as i64 + x) as usize];
            for &(dx, dy) in &offsets {
                for (sx, sy) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                    // Skip the duplicate mirror images of on-axis offsets.
                    if (dx == 0 && sx < 0) || (dy == 0 && sy < 0) {
                        continue;
                    }
                    let (u, v) = (x + sx * dx, y + sy * dy);
                    if u >= 0 && v >= 0 && u < m as i64 && v < m as i64 {
                        list.push((v * m as i64 + u) as u32);
                    }
                }
            }
            list.sort_unstable();
        }
    }
    adj
}

pub fn interfering_neighbors(grid: &Grid, config: &NetworkConfig) -> Vec<Vec<u32>> {
    interference_adjacency(grid.m, grid.side, grid.r, config.delta)
}

/// Upper bound `1 / (2 n ln n)` on the probability that some cell is empty.
pub fn empty_cell_bound(n: usize) -> Result<f64> {
    if n < 2 {
        return domain(format!("empty-cell bound needs n >= 2, got {n}"));
    }
    let n = n as f64;
    Ok(1.0 / (2.0 * n * n.ln()))
}

pub fn has_empty_cell(grid: &Grid) -> bool {
    grid.members.iter().any(Vec::is_empty)
}

/// Monte Carlo count of placements with at least one empty cell.
///
/// Only occupancy matters here, so each trial draws uniform points until
/// every cell is hit or `n` points are used.
pub fn empty_cell_trials(n: usize, trials: usize, seed: u64, mode: Parallelism) -> usize {
    let m = cells_per_side(n);
    let cells = m * m;
    par::map_reduce(
        trials,
        mode,
        0usize,
        |t| {
            let mut rng = rng::stream(rng::derive_seed(seed, n, t), Stream::Trials);
            let mut seen = vec![false; cells];
            let mut filled = 0;
            for _ in 0..n {
                let x: f64 = rng.gen();
                let y: f64 = rng.gen();
                let c = axis_cell(y, m) * m + axis_cell(x, m);
                if !seen[c] {
                    seen[c] = true;
                    filled += 1;
                    if filled == cells {
                        return 0;
                    }
                }
            }
            1
        },
        |a, b| a + b,
    )
}
