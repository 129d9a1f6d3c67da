//! Cell-by-cell packet relaying under the cell schedule.
//!
//! Time here is counted in data slots only. Each cell holds one FIFO and
//! forwards its head packet to the next cell of the packet's route whenever
//! the schedule activates it. Sources emit a packet in each of their D-state
//! data slots with probability `rate`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::index::sample;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use super::{SlotPattern, Timeline, SUSTAIN_RATIO};
use crate::mac::Schedule;
use crate::rng::{self, Stream};
use crate::topology::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DataRun {
    pub rate: f64,
    /// Packets generated inside the window.
    pub generated: u64,
    /// Of those, packets delivered before the drain ends.
    pub delivered: u64,
    /// False when the rate was rejected by the capacity bound alone.
    pub simulated: bool,
}

impl DataRun {
    pub fn ratio(&self) -> f64 {
        if self.generated == 0 {
            1.0
        } else {
            self.delivered as f64 / self.generated as f64
        }
    }

    pub fn sustained(&self) -> bool {
        self.simulated && self.ratio() >= SUSTAIN_RATIO
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateSearch {
    pub rate: f64,
    pub best: DataRun,
    pub runs: Vec<DataRun>,
}

pub const BISECTION_STEPS: usize = 6;

struct Source {
    first: u32,
    last: u32,
    hops: u32,
    /// Data-slot range of the D period.
    a: u64,
    b: u64,
}

struct Plane<'a> {
    sources: Vec<Source>,
    m: usize,
    schedule: &'a Schedule,
    window: u64,
    end: u64,
    capacity: u64,
    max_hops: u32,
    seed: u64,
}

fn cell_at(m: usize, first: u32, last: u32, hop: u32) -> u32 {
    let (fx, fy) = (first as usize % m, first as usize / m);
    let (tx, ty) = (last as usize % m, last as usize / m);
    let h = hop as usize;
    let dx = fx.abs_diff(tx);
    if h <= dx {
        let x = if tx >= fx { fx + h } else { fx - h };
        (fy * m + x) as u32
    } else {
        let k = h - dx;
        let y = if ty >= fy { fy + k } else { fy - k };
        (y * m + tx) as u32
    }
}

impl<'a> Plane<'a> {
    fn new(tl: &Timeline, grid: &Grid, schedule: &'a Schedule, pattern: SlotPattern, seed: u64) -> Self {
        let m = grid.m;
        let sources: Vec<Source> = tl
            .intervals
            .iter()
            .filter_map(|iv| {
                let (a, b) = (pattern.data_before(iv.start), pattern.data_before(iv.end));
                if b <= a {
                    return None;
                }
                let first = grid.cell_of[iv.node as usize];
                let last = grid.cell_of[iv.dest as usize];
                let (f, l) = (grid.coords(first), grid.coords(last));
                let hops = (f.0.abs_diff(l.0) + f.1.abs_diff(l.1) + 1) as u32;
                Some(Source {
                    first,
                    last,
                    hops,
                    a,
                    b,
                })
            })
            .collect();
        let drain = tl.window_slots() / 20;
        let end = pattern.data_before(tl.horizon + drain);
        let k = u64::from(schedule.period);
        let capacity = schedule
            .colors
            .iter()
            .map(|&c| {
                let c = u64::from(c);
                if c < end {
                    (end - c).div_ceil(k)
                } else {
                    0
                }
            })
            .sum();
        Plane {
            max_hops: sources.iter().map(|s| s.hops).max().unwrap_or(1),
            sources,
            m,
            schedule,
            window: pattern.data_before(tl.window_start),
            end,
            capacity,
            seed,
        }
    }

    fn next_opportunity(&self, cell: u32, t: u64) -> u64 {
        let k = u64::from(self.schedule.period);
        let c = u64::from(self.schedule.colors[cell as usize]);
        t + (c + k - t % k) % k
    }

    fn evaluate(&self, rate: f64) -> DataRun {
        let mut rng = rng::stream(self.seed, Stream::Traffic);
        let counts: Vec<u64> = self
            .sources
            .iter()
            .map(|s| {
                let len = s.b - s.a;
                if rate >= 1.0 {
                    len
                } else {
                    Binomial::new(len, rate).expect("valid binomial").sample(&mut rng)
                }
            })
            .collect();
        // Capacity bound: hop demand beyond the total number of service
        // opportunities leaves at least (H - C) / max_hops packets behind.
        let total: u64 = counts.iter().sum();
        let hop_demand: u64 = counts
            .iter()
            .zip(&self.sources)
            .map(|(&c, s)| c * u64::from(s.hops))
            .sum();
        let warm_bound: u64 = counts
            .iter()
            .zip(&self.sources)
            .filter(|(_, s)| s.a < self.window)
            .map(|(&c, _)| c)
            .sum();
        let stuck = hop_demand.saturating_sub(self.capacity) / u64::from(self.max_hops);
        if stuck as f64 - warm_bound as f64 > (1.0 - SUSTAIN_RATIO) * total as f64 {
            return DataRun {
                rate,
                generated: total - warm_bound.min(total),
                delivered: 0,
                simulated: false,
            };
        }

        // (generation slot, source) for every packet.
        let mut packets: Vec<(u64, u32)> = Vec::with_capacity(total as usize);
        for (i, (s, &c)) in self.sources.iter().zip(&counts).enumerate() {
            if c == 0 {
                continue;
            }
            let len = (s.b - s.a) as usize;
            if c as usize == len {
                packets.extend((s.a..s.b).map(|t| (t, i as u32)));
            } else {
                packets.extend(
                    sample(&mut rng, len, c as usize)
                        .iter()
                        .map(|o| (s.a + o as u64, i as u32)),
                );
            }
        }
        packets.sort_unstable();
        let generated = packets.iter().filter(|p| p.0 >= self.window).count() as u64;

        let cells = self.m * self.m;
        let mut queues: Vec<VecDeque<u32>> = vec![VecDeque::new(); cells];
        let mut scheduled = vec![false; cells];
        let mut hop = vec![0u32; packets.len()];
        let mut heap: BinaryHeap<Reverse<(u64, u32)>> = BinaryHeap::new();
        let mut next = 0usize;
        let mut delivered = 0u64;
        loop {
            let service = heap.peek().map_or(u64::MAX, |r| r.0 .0);
            let arrival = packets.get(next).map_or(u64::MAX, |p| p.0);
            if service.min(arrival) >= self.end {
                break;
            }
            if arrival <= service {
                let cell = self.sources[packets[next].1 as usize].first;
                queues[cell as usize].push_back(next as u32);
                if !scheduled[cell as usize] {
                    scheduled[cell as usize] = true;
                    heap.push(Reverse((self.next_opportunity(cell, arrival), cell)));
                }
                next += 1;
                continue;
            }
            let Reverse((t, cell)) = heap.pop().expect("peeked");
            let id = queues[cell as usize].pop_front().expect("scheduled cell has a packet");
            let (gen, src) = packets[id as usize];
            let s = &self.sources[src as usize];
            hop[id as usize] += 1;
            if hop[id as usize] == s.hops {
                if gen >= self.window {
                    delivered += 1;
                }
            } else {
                let to = cell_at(self.m, s.first, s.last, hop[id as usize]);
                queues[to as usize].push_back(id);
                if !scheduled[to as usize] {
                    scheduled[to as usize] = true;
                    heap.push(Reverse((self.next_opportunity(to, t + 1), to)));
                }
            }
            if queues[cell as usize].is_empty() {
                scheduled[cell as usize] = false;
            } else {
                heap.push(Reverse((t + u64::from(self.schedule.period), cell)));
            }
        }
        DataRun {
            rate,
            generated,
            delivered,
            simulated: true,
        }
    }
}

/// Largest offered rate with delivery ratio >= 0.95: try 1, halve until
/// sustained, then bisect.
pub(super) fn sustained_rate(
    tl: &Timeline,
    grid: &Grid,
    schedule: &Schedule,
    pattern: SlotPattern,
    seed: u64,
) -> RateSearch {
    let plane = Plane::new(tl, grid, schedule, pattern, seed);
    let mut runs = Vec::new();
    let mut rate = 1.0;
    let mut run = plane.evaluate(rate);
    runs.push(run);
    while !run.sustained() && rate > 1e-12 {
        rate /= 2.0;
        run = plane.evaluate(rate);
        runs.push(run);
    }
    let mut best = run;
    if rate < 1.0 {
        let (mut lo, mut hi) = (rate, 2.0 * rate);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            let r = plane.evaluate(mid);
            runs.push(r);
            if r.sustained() {
                lo = mid;
                best = r;
            } else {
                hi = mid;
            }
        }
        rate = lo;
    }
    RateSearch { rate, best, runs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::l_path;

    #[test]
    fn cell_at_walks_the_l_path() {
        let m = 7;
        for a in 0..49u32 {
            for b in 0..49u32 {
                let path = l_path(m, a, b);
                for (h, &c) in path.iter().enumerate() {
                    assert_eq!(cell_at(m, a, b, h as u32), c);
                }
            }
        }
    }
}
