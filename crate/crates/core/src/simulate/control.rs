//! D/N state machine of every node over the horizon.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use serde::Serialize;

use super::{Mode, NodeState, SlotPattern, WARMUP_FRACTION};
use crate::config::{Calibration, NetworkConfig};
use crate::mac::ReceptionIndex;
use crate::rdp_flood::{median, FloodEngine};
use crate::rng::{self, SimRng, Stream};
use crate::topology::NodePlacement;

/// A D period: `node` sends to `dest` during slots `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DInterval {
    pub node: u32,
    pub dest: u32,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timeline {
    pub n: usize,
    pub horizon: u64,
    pub window_start: u64,
    /// D periods clipped to the horizon, in order of their start.
    pub intervals: Vec<DInterval>,
    /// Node-slots spent in D and N inside the window.
    pub d_time: f64,
    pub n_time: f64,
    pub d_to_n: u64,
    pub n_to_d: u64,
    /// RDP initiations inside the window.
    pub attempts: f64,
    /// Resolved attempts and successful ones inside the window.
    pub closures: f64,
    pub successes: f64,
    pub nbar_r: Option<f64>,
    pub gamma_hat: Option<f64>,
}

impl Timeline {
    fn new(n: usize, horizon: u64) -> Self {
        Timeline {
            n,
            horizon,
            window_start: (horizon as f64 * WARMUP_FRACTION).round() as u64,
            intervals: Vec::new(),
            d_time: 0.0,
            n_time: 0.0,
            d_to_n: 0,
            n_to_d: 0,
            attempts: 0.0,
            closures: 0.0,
            successes: 0.0,
            nbar_r: None,
            gamma_hat: None,
        }
    }

    pub fn window_slots(&self) -> u64 {
        self.horizon - self.window_start
    }

    fn in_window(&self, t: u64) -> bool {
        t >= self.window_start && t < self.horizon
    }

    fn overlap(&self, a: u64, b: u64) -> f64 {
        let (a, b) = (a.max(self.window_start), b.min(self.horizon));
        b.saturating_sub(a) as f64
    }

    fn d_period(&mut self, node: u32, dest: u32, start: u64, end: u64) {
        self.d_time += self.overlap(start, end);
        if start < self.horizon {
            self.intervals.push(DInterval {
                node,
                dest,
                start,
                end: end.min(self.horizon),
            });
        }
        if self.in_window(end) {
            self.d_to_n += 1;
        }
    }

    fn n_period(&mut self, start: u64, end: u64) {
        self.n_time += self.overlap(start, end);
    }

    /// True when every node's D periods are disjoint and separated by N time.
    pub fn alternates(&self) -> bool {
        let mut last = vec![None::<u64>; self.n];
        self.intervals.iter().all(|iv| {
            let ok = last[iv.node as usize].is_none_or(|e| e < iv.start) && iv.start < iv.end;
            last[iv.node as usize] = Some(iv.end);
            ok
        })
    }
}

const ENTER_D: u8 = 0;
const ENTER_N: u8 = 1;

type Events = BinaryHeap<Reverse<(u64, u8, u32)>>;

/// Nodes currently in N, with O(1) insert, remove and uniform pick.
struct NPool {
    nodes: Vec<u32>,
    pos: Vec<u32>,
}

impl NPool {
    fn new(n: usize) -> Self {
        NPool {
            nodes: Vec::with_capacity(n),
            pos: vec![u32::MAX; n],
        }
    }

    fn insert(&mut self, i: u32) {
        self.pos[i as usize] = self.nodes.len() as u32;
        self.nodes.push(i);
    }

    fn remove(&mut self, i: u32) {
        let p = self.pos[i as usize] as usize;
        self.nodes.swap_remove(p);
        if p < self.nodes.len() {
            self.pos[self.nodes[p] as usize] = p as u32;
        }
        self.pos[i as usize] = u32::MAX;
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }
}

/// Shared state-machine plumbing of both control planes.
struct Machine {
    tl: Timeline,
    states: Vec<NodeState>,
    dest: Vec<u32>,
    pool: NPool,
    events: Events,
    rng: SimRng,
    d_len: Geometric,
}

impl Machine {
    fn new(config: &NetworkConfig, dest: Vec<u32>, horizon: u64) -> Self {
        let n = config.n;
        // D periods are geometric on {1, 2, ...} with mean tau.
        let tau = config.tau().max(1.0);
        let mut m = Machine {
            tl: Timeline::new(n, horizon),
            states: Vec::with_capacity(n),
            dest,
            pool: NPool::new(n),
            events: BinaryHeap::new(),
            rng: rng::stream(config.seed, Stream::Control),
            d_len: Geometric::new(1.0 / tau).expect("tau >= 1"),
        };
        // Every node starts without a route, all at once, so the first
        // N periods already see the full initiation load.
        for i in 0..n as u32 {
            m.states.push(NodeState {
                mode: Mode::N,
                dest: m.dest[i as usize],
                since: 0,
            });
            m.pool.insert(i);
        }
        m
    }

    fn begin_d(&mut self, i: u32, t: u64) {
        let len = 1 + self.d_len.sample(&mut self.rng);
        let end = t.saturating_add(len);
        let dest = self.dest[i as usize];
        self.states[i as usize] = NodeState {
            mode: Mode::D,
            dest,
            since: t,
        };
        self.tl.d_period(i, dest, t, end);
        self.events.push(Reverse((end, ENTER_N, i)));
    }

    /// D -> N: pick a fresh destination by swapping with another N node,
    /// which keeps the destination map a fixed-point-free permutation.
    fn begin_n(&mut self, i: u32, t: u64) {
        self.pool.insert(i);
        let k = self.pool.len();
        if k >= 2 {
            let j = self.pool.nodes[self.rng.gen_range(0..k)];
            let (di, dj) = (self.dest[i as usize], self.dest[j as usize]);
            if j != i && dj != i && di != j {
                self.dest.swap(i as usize, j as usize);
            }
        }
        self.states[i as usize] = NodeState {
            mode: Mode::N,
            dest: self.dest[i as usize],
            since: t,
        };
    }

    fn end_n(&mut self, i: u32, t: u64) {
        self.pool.remove(i);
        let since = self.states[i as usize].since;
        self.tl.n_period(since, t);
        if self.tl.in_window(t) {
            self.tl.n_to_d += 1;
        }
    }

    fn finish(mut self) -> Timeline {
        let h = self.tl.horizon;
        for i in 0..self.states.len() {
            if self.states[i].mode == Mode::N {
                self.tl.n_period(self.states[i].since, h);
            }
        }
        self.tl.intervals.sort_by_key(|iv| (iv.start, iv.node));
        self.tl
    }
}

/// Event-driven control plane. An N period's length in RDP slots is
/// geometric with per-slot success `p q`, where `p = nu / theta` and
/// `q = G(min(f_single, chat n / (lambda' (n - 1))))` is evaluated at the
/// current per-RDP-slot initiation rate `lambda'`.
pub(super) fn analytic(
    config: &NetworkConfig,
    pattern: SlotPattern,
    dest: Vec<u32>,
    horizon: u64,
    cal: Calibration,
) -> Timeline {
    let n = config.n;
    let p = config.initiation_prob();
    let g = config.g_model.at(n);
    let mut m = Machine::new(config, dest, horizon);
    let (wa, wb) = (pattern.rdp_before(m.tl.window_start), pattern.rdp_before(horizon));
    let mut pending: Vec<(u64, u8, u32)> = (0..n as u32).map(|i| (0, ENTER_N, i)).collect();
    pending.reverse();
    loop {
        let (t, kind, i) = match pending.pop() {
            Some(e) => e,
            None => match m.events.pop() {
                Some(Reverse(e)) => e,
                None => break,
            },
        };
        if t >= horizon {
            break;
        }
        if kind == ENTER_D {
            m.end_n(i, t);
            m.begin_d(i, t);
            continue;
        }
        if t > 0 {
            m.begin_n(i, t);
        }
        let lambda = m.pool.len() as f64 * p;
        let q = if lambda > 0.0 {
            g.eval_clamped(cal.f_single.min(cal.chat * n as f64 / (lambda * (n - 1) as f64)))
        } else {
            0.0
        };
        let j0 = pattern.rdp_before(t);
        let ps = p * q;
        if ps <= 0.0 {
            // Never succeeds; attempts keep coming at rate p per RDP slot.
            let overlap = wb.saturating_sub(j0.max(wa)) as f64;
            m.tl.attempts += p * overlap;
            continue;
        }
        let k = 1 + Geometric::new(ps).expect("valid probability").sample(&mut m.rng);
        let success_slot = pattern.rdp_slot(j0 + k - 1);
        let fails = if k > 1 && ps < 1.0 {
            let pf = (p * (1.0 - q) / (1.0 - ps)).clamp(0.0, 1.0);
            Binomial::new(k - 1, pf).expect("valid binomial").sample(&mut m.rng) as f64
        } else {
            0.0
        };
        if k > 1 {
            // Failed attempts are spread uniformly over the first k - 1 RDP slots.
            let overlap = (j0 + k - 1).min(wb).saturating_sub(j0.max(wa)) as f64;
            m.tl.attempts += fails * overlap / (k - 1) as f64;
        }
        if m.tl.in_window(success_slot) {
            m.tl.attempts += 1.0;
            m.tl.successes += 1.0;
        }
        m.events.push(Reverse((success_slot + 1, ENTER_D, i)));
    }
    m.tl.closures = m.tl.attempts;
    m.finish()
}

/// Slot-by-slot control plane: N nodes start floods in RDP slots, and a
/// closed flood with reach `f` succeeds with probability `G(f)`.
pub(super) fn flooded(
    config: &NetworkConfig,
    placement: &NodePlacement,
    pattern: SlotPattern,
    dest: Vec<u32>,
    horizon: u64,
) -> Timeline {
    let n = config.n;
    let p = config.initiation_prob();
    let g = config.g_model.at(n);
    let index = ReceptionIndex::build(placement, config);
    let mut engine = FloodEngine::new(&index, config.flood_budget);
    let mut m = Machine::new(config, dest, horizon);
    let mut draws = rng::stream(config.seed, Stream::Flood);
    // RDP slot index at which each node's current N period began.
    let mut n_since = vec![0u64; n];
    let mut success_pending = vec![false; n];
    let mut rdp_in_window = 0u64;
    let mut receptions = 0u64;
    let mut reach = Vec::new();

    let process = |m: &mut Machine, until: u64, n_since: &mut [u64], pending: &mut [bool]| {
        while let Some(&Reverse((t, kind, i))) = m.events.peek() {
            if t > until || t >= horizon {
                break;
            }
            m.events.pop();
            if kind == ENTER_D {
                pending[i as usize] = false;
                m.end_n(i, t);
                m.begin_d(i, t);
            } else {
                m.begin_n(i, t);
                n_since[i as usize] = pattern.rdp_before(t);
            }
        }
    };

    for j in 0.. {
        let s = pattern.rdp_slot(j);
        if s >= horizon {
            break;
        }
        process(&mut m, s, &mut n_since, &mut success_pending);
        let in_window = m.tl.in_window(s);
        let k = m.pool.len();
        if k > 0 && p > 0.0 {
            let starts = Binomial::new(k as u64, p).expect("valid binomial").sample(&mut draws) as usize;
            for idx in rand::seq::index::sample(&mut draws, k, starts).iter() {
                engine.start(m.pool.nodes[idx], j);
            }
            if in_window {
                m.tl.attempts += starts as f64;
            }
        }
        let before = engine.total_first_receptions;
        let closed = engine.step(j);
        if in_window {
            rdp_in_window += 1;
            receptions += engine.total_first_receptions - before;
        }
        for o in closed {
            let ok = draws.gen_bool(g.eval_clamped(o.f));
            if in_window {
                m.tl.closures += 1.0;
                reach.push(o.f);
                if ok {
                    m.tl.successes += 1.0;
                }
            }
            let i = o.origin as usize;
            if ok && m.states[i].mode == Mode::N && !success_pending[i] && o.start_slot >= n_since[i] {
                success_pending[i] = true;
                m.events.push(Reverse((s + 1, ENTER_D, o.origin)));
            }
        }
    }
    process(&mut m, horizon, &mut n_since, &mut success_pending);
    if rdp_in_window > 0 {
        m.tl.nbar_r = Some(receptions as f64 / rdp_in_window as f64);
    }
    if !reach.is_empty() {
        let mean = reach.iter().sum::<f64>() / reach.len() as f64;
        let med = median(&mut reach);
        m.tl.gamma_hat = Some(if mean > 0.0 { med / mean } else { 0.0 });
    }
    m.finish()
}
