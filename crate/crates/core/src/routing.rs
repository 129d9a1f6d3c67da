//! L-shaped cell routes and per-cell route loads.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::topology::Grid;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Route {
    pub src: u32,
    pub dst: u32,
    pub cells: Vec<u32>,
}

/// Cells visited going along the row of `from` to the column of `to`, then
/// along that column to `to`.
pub fn l_path(m: usize, from: u32, to: u32) -> Vec<u32> {
    let (fx, fy) = (from as usize % m, from as usize / m);
    let (tx, ty) = (to as usize % m, to as usize / m);
    let mut cells = Vec::with_capacity(fx.abs_diff(tx) + fy.abs_diff(ty) + 1);
    let mut x = fx;
    cells.push((fy * m + x) as u32);
    while x != tx {
        x = if tx > x { x + 1 } else { x - 1 };
        cells.push((fy * m + x) as u32);
    }
    let mut y = fy;
    while y != ty {
        y = if ty > y { y + 1 } else { y - 1 };
        cells.push((y * m + tx) as u32);
    }
    cells
}

pub fn build_route(src: u32, dst: u32, grid: &Grid) -> Result<Route> {
    if src == dst {
        return Err(Error::InvalidRoute(format!(
            "source and destination are both node {src}"
        )));
    }
    let n = grid.cell_of.len() as u32;
    if src >= n || dst >= n {
        return Err(Error::InvalidRoute(format!(
            "node index out of range ({src} -> {dst}, n = {n})"
        )));
    }
    let cells = l_path(grid.m, grid.cell_of[src as usize], grid.cell_of[dst as usize]);
    Ok(Route { src, dst, cells })
}

/// Uniformly random fixed-point-free permutation: `dest[i]` is the
/// destination of source `i`, and no node serves two sources.
pub fn assign_destinations<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<u32>> {
    if n < 2 {
        return invalid(format!("destinations need at least two nodes, got {n}"));
    }
    let mut perm: Vec<u32> = (0..n as u32).collect();
    // Rejection sampling; a random permutation is a derangement w.p. ~1/e.
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &d)| i as u32 != d) {
            return Ok(perm);
        }
    }
}

pub fn routes_for(dest: &[u32], grid: &Grid) -> Result<Vec<Route>> {
    dest.iter()
        .enumerate()
        .map(|(s, &d)| build_route(s as u32, d, grid))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellLoads {
    pub counts: Vec<u64>,
    pub m: usize,
    pub n: usize,
    pub max_ratio: f64,
    pub min_ratio: f64,
}

impl CellLoads {
    pub fn max(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn min(&self) -> u64 {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    /// `cell_x, cell_y, N_i`, one row per cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cell_x", "cell_y", "N_i"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([(i % self.m).to_string(), (i / self.m).to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn cell_loads(routes: &[Route], grid: &Grid) -> CellLoads {
    let mut counts = vec![0u64; grid.cells()];
    for r in routes {
        for &c in &r.cells {
            counts[c as usize] += 1;
        }
    }
    let n = grid.cell_of.len();
    let scale = if n >= 2 {
        (n as f64 * (n as f64).ln()).sqrt()
    } else {
        1.0
    };
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    CellLoads {
        counts,
        m: grid.m,
        n,
        max_ratio: max as f64 / scale,
        min_ratio: min as f64 / scale,
    }
}
