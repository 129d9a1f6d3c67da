//! Slotted RREQ flooding with forward-once relaying and capture.

use std::collections::VecDeque;
use std::io::Write;

use rand::seq::index::sample;
use serde::Serialize;

use crate::config::{Calibration, NetworkConfig};
use crate::error::{invalid, Result};
use crate::mac::ReceptionIndex;
use crate::par::{self, Parallelism};
use crate::rng::{self, Stream};
use crate::topology::{place_nodes, NodePlacement};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdpOutcome {
    pub rdp_id: u64,
    pub origin: u32,
    pub start_slot: u64,
    /// Distinct receivers over `n - 1`.
    pub f: f64,
    pub slots_used: u32,
    pub first_receptions_per_slot: Vec<u32>,
}

impl RdpOutcome {
    pub fn receivers(&self) -> u64 {
        self.first_receptions_per_slot.iter().map(|&c| u64::from(c)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloodStats {
    pub mean_f: f64,
    pub median_f: f64,
    pub nbar_r: f64,
    pub gamma_hat: f64,
    pub chat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub slot: u64,
    pub transmitters: u32,
    pub first_receptions: u32,
}

#[derive(Debug)]
struct Flood {
    rdp_id: u64,
    origin: u32,
    start_slot: u64,
    reached: Vec<u64>,
    receivers: u32,
    pending: u32,
    /// First receptions by slot offset, grown on demand.
    first: Vec<u32>,
}

impl Flood {
    fn mark(&mut self, node: u32) -> bool {
        let (w, b) = (node as usize / 64, node as usize % 64);
        let fresh = self.reached[w] & (1 << b) == 0;
        self.reached[w] |= 1 << b;
        fresh
    }
}

/// Shared RDP-slot state for any number of concurrent floods.
///
/// Each node keeps a FIFO of floods it still has to rebroadcast and sends
/// the oldest one per RDP slot. A node with a non-empty queue is
/// transmitting and hears nothing in that slot. Slots passed to
/// [`FloodEngine::step`] must increase by one per call while floods are open.
pub struct FloodEngine<'a> {
    index: &'a ReceptionIndex,
    n: usize,
    budget: u32,
    queues: Vec<VecDeque<u32>>,
    busy: Vec<u32>,
    in_busy: Vec<bool>,
    floods: Vec<Option<Flood>>,
    free: Vec<u32>,
    live: usize,
    deadlines: VecDeque<(u64, u32, u64)>,
    drained: Vec<u32>,
    next_id: u64,
    is_tx: Vec<bool>,
    sending: Vec<u32>,
    tx: Vec<u32>,
    best: Vec<Option<(f64, u32)>>,
    touched: Vec<u32>,
    transmissions: Option<Vec<(u32, u64)>>,
    pub trace: Option<Vec<TraceRow>>,
    pub total_first_receptions: u64,
    pub slots_stepped: u64,
}

impl<'a> FloodEngine<'a> {
    pub fn new(index: &'a ReceptionIndex, budget: u32) -> Self {
        let n = index.neighbors.len();
        FloodEngine {
            index,
            n,
            budget: budget.max(1),
            queues: vec![VecDeque::new(); n],
            busy: Vec::new(),
            in_busy: vec![false; n],
            floods: Vec::new(),
            free: Vec::new(),
            live: 0,
            deadlines: VecDeque::new(),
            drained: Vec::new(),
            next_id: 0,
            is_tx: vec![false; n],
            sending: vec![u32::MAX; n],
            tx: Vec::new(),
            best: vec![None; n],
            touched: Vec::new(),
            transmissions: None,
            trace: None,
            total_first_receptions: 0,
            slots_stepped: 0,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Keep a log of every `(node, rdp_id)` broadcast.
    pub fn with_transmission_log(mut self) -> Self {
        self.transmissions = Some(Vec::new());
        self
    }

    pub fn transmissions(&self) -> &[(u32, u64)] {
        self.transmissions.as_deref().unwrap_or(&[])
    }

    pub fn active_floods(&self) -> usize {
        self.live
    }

    /// Queue a new RREQ at `origin`; it goes out in the next stepped slot.
    pub fn start(&mut self, origin: u32, slot: u64) -> u64 {
        let words = self.n.div_ceil(64);
        let id = self.next_id;
        self.next_id += 1;
        let mut flood = Flood {
            rdp_id: id,
            origin,
            start_slot: slot,
            reached: vec![0; words],
            receivers: 0,
            pending: 1,
            first: Vec::new(),
        };
        flood.mark(origin);
        let handle = match self.free.pop() {
            Some(h) => {
                self.floods[h as usize] = Some(flood);
                h
            }
            None => {
                self.floods.push(Some(flood));
                (self.floods.len() - 1) as u32
            }
        };
        self.live += 1;
        self.deadlines.push_back((slot, handle, id));
        self.enqueue(origin, handle);
        id
    }

    fn enqueue(&mut self, node: u32, handle: u32) {
        self.queues[node as usize].push_back(handle);
        if !self.in_busy[node as usize] {
            self.in_busy[node as usize] = true;
            self.busy.push(node);
        }
    }

    /// Advance one RDP slot and return the floods that closed in it.
    pub fn step(&mut self, slot: u64) -> Vec<RdpOutcome> {
        if self.live == 0 {
            return Vec::new();
        }
        self.slots_stepped += 1;
        self.tx.clear();
        let busy = std::mem::take(&mut self.busy);
        for &node in &busy {
            self.in_busy[node as usize] = false;
            let q = &mut self.queues[node as usize];
            // Entries of floods closed by the budget are dropped unsent.
            while let Some(&h) = q.front() {
                if self.floods[h as usize].is_some() {
                    break;
                }
                q.pop_front();
            }
            if let Some(h) = q.pop_front() {
                self.is_tx[node as usize] = true;
                self.sending[node as usize] = h;
                self.tx.push(node);
                let f = self.floods[h as usize].as_mut().expect("live flood");
                f.pending -= 1;
                if f.pending == 0 {
                    self.drained.push(h);
                }
                if let Some(log) = self.transmissions.as_mut() {
                    log.push((node, f.rdp_id));
                }
            }
        }
        self.index
            .resolve(&self.tx, &self.is_tx, &mut self.best, &mut self.touched);
        let mut new_receptions = 0u32;
        let touched = std::mem::take(&mut self.touched);
        for &j in &touched {
            let (_, t) = self.best[j as usize].take().expect("touched receiver");
            let h = self.sending[t as usize];
            let f = self.floods[h as usize].as_mut().expect("live flood");
            if f.mark(j) {
                f.receivers += 1;
                f.pending += 1;
                let k = (slot - f.start_slot) as usize;
                if f.first.len() <= k {
                    f.first.resize(k + 1, 0);
                }
                f.first[k] += 1;
                new_receptions += 1;
                self.enqueue(j, h);
            }
        }
        self.touched = touched;
        for &node in &self.tx {
            self.is_tx[node as usize] = false;
            self.sending[node as usize] = u32::MAX;
        }
        for node in busy {
            if !self.queues[node as usize].is_empty() && !self.in_busy[node as usize] {
                self.in_busy[node as usize] = true;
                self.busy.push(node);
            }
        }
        self.total_first_receptions += u64::from(new_receptions);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRow {
                slot,
                transmitters: self.tx.len() as u32,
                first_receptions: new_receptions,
            });
        }
        self.collect_closed(slot)
    }

    fn close(&mut self, h: u32, slot: u64) -> RdpOutcome {
        let mut f = self.floods[h as usize].take().expect("live flood");
        self.free.push(h);
        self.live -= 1;
        let used = (slot + 1 - f.start_slot) as usize;
        f.first.resize(used, 0);
        RdpOutcome {
            rdp_id: f.rdp_id,
            origin: f.origin,
            start_slot: f.start_slot,
            f: f64::from(f.receivers) / (self.n - 1).max(1) as f64,
            slots_used: used as u32,
            first_receptions_per_slot: f.first,
        }
    }

    fn collect_closed(&mut self, slot: u64) -> Vec<RdpOutcome> {
        let mut closed = Vec::new();
        let drained = std::mem::take(&mut self.drained);
        for &h in &drained {
            if self.floods[h as usize].as_ref().is_some_and(|f| f.pending == 0) {
                closed.push(self.close(h, slot));
            }
        }
        self.drained = drained;
        self.drained.clear();
        let budget = u64::from(self.budget);
        while let Some(&(start, h, id)) = self.deadlines.front() {
            let open = self.floods[h as usize].as_ref().is_some_and(|f| f.rdp_id == id);
            if open && slot + 1 - start < budget {
                break;
            }
            self.deadlines.pop_front();
            if open {
                closed.push(self.close(h, slot));
            }
        }
        closed.sort_by_key(|o| o.rdp_id);
        closed
    }

    /// Step until every flood has closed.
    pub fn drain(&mut self, mut slot: u64) -> Vec<RdpOutcome> {
        let mut out = Vec::new();
        while self.live > 0 {
            out.extend(self.step(slot));
            slot += 1;
        }
        out.sort_by_key(|o| o.rdp_id);
        out
    }
}

fn check_network(placement: &NodePlacement, budget: u32) -> Result<()> {
    if placement.len() < 2 {
        return invalid(format!("flooding needs at least two nodes, got {}", placement.len()));
    }
    if budget == 0 {
        return invalid("slot budget must be at least 1");
    }
    Ok(())
}

pub fn run_flood(
    origin: u32,
    placement: &NodePlacement,
    config: &NetworkConfig,
    slot_budget: u32,
) -> Result<RdpOutcome> {
    let (mut out, _) = run_concurrent_floods(&[origin], placement, config, slot_budget)?;
    Ok(out.remove(0))
}

pub fn run_concurrent_floods(
    origins: &[u32],
    placement: &NodePlacement,
    config: &NetworkConfig,
    slot_budget: u32,
) -> Result<(Vec<RdpOutcome>, FloodStats)> {
    check_network(placement, slot_budget)?;
    if origins.is_empty() {
        return invalid("no flood origins given");
    }
    if let Some(&o) = origins.iter().find(|&&o| o as usize >= placement.len()) {
        return invalid(format!("origin {o} out of range"));
    }
    let index = ReceptionIndex::build(placement, config);
    let mut engine = FloodEngine::new(&index, slot_budget);
    Ok(flood_batch(&mut engine, origins, placement.len()))
}

fn flood_batch(engine: &mut FloodEngine<'_>, origins: &[u32], n: usize) -> (Vec<RdpOutcome>, FloodStats) {
    let before = (engine.total_first_receptions, engine.slots_stepped);
    for &o in origins {
        engine.start(o, 0);
    }
    let out = engine.drain(0);
    let receptions = engine.total_first_receptions - before.0;
    let slots = (engine.slots_stepped - before.1).max(1);
    let stats = stats_from(&out, receptions as f64 / slots as f64, n);
    (out, stats)
}

fn stats_from(outcomes: &[RdpOutcome], nbar_r: f64, n: usize) -> FloodStats {
    let mut fs: Vec<f64> = outcomes.iter().map(|o| o.f).collect();
    let mean_f = fs.iter().sum::<f64>() / fs.len() as f64;
    let median_f = median(&mut fs);
    FloodStats {
        mean_f,
        median_f,
        nbar_r,
        gamma_hat: if mean_f > 0.0 { median_f / mean_f } else { 0.0 },
        chat: nbar_r / n as f64,
    }
}

pub(crate) fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Aggregate statistics. `nbar_r` is first receptions per slot over the
/// union of the slots the floods were open.
pub fn flood_stats(outcomes: &[RdpOutcome], n: usize) -> Result<FloodStats> {
    if outcomes.is_empty() {
        return invalid("flood statistics need at least one outcome");
    }
    let mut open: Vec<(u64, u64)> = outcomes
        .iter()
        .map(|o| (o.start_slot, o.start_slot + u64::from(o.slots_used)))
        .collect();
    open.sort_unstable();
    let mut slots = 0;
    let mut end = 0;
    for (a, b) in open {
        let a = a.max(end);
        if b > a {
            slots += b - a;
            end = b;
        }
    }
    let receptions: u64 = outcomes.iter().map(RdpOutcome::receivers).sum();
    Ok(stats_from(outcomes, receptions as f64 / slots.max(1) as f64, n))
}

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "transmitters", "first_receptions"])?;
    for r in rows {
        w.write_record([
            r.slot.to_string(),
            r.transmitters.to_string(),
            r.first_receptions.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Flood batches on fresh placements: `reps` single floods for `f_single`
/// and `reps` batches of `load` simultaneous floods for `chat`.
pub fn calibrate(config: &NetworkConfig, load: usize, reps: usize, mode: Parallelism) -> Result<Calibration> {
    config.validate()?;
    let n = config.n;
    let load = load.clamp(1, n);
    let results = par::map((0..reps.max(1)).collect(), mode, |rep| -> Result<(f64, f64)> {
        let seed = rng::derive_seed(config.seed, n, rep);
        let placement = place_nodes(&config.clone().with_seed(seed))?;
        check_network(&placement, config.flood_budget)?;
        let index = ReceptionIndex::build(&placement, config);
        let mut engine = FloodEngine::new(&index, config.flood_budget);
        let mut r = rng::stream(seed, Stream::Flood);
        let origin = sample(&mut r, n, 1).index(0) as u32;
        let (single, _) = flood_batch(&mut engine, &[origin], n);
        let origins: Vec<u32> = sample(&mut r, n, load).iter().map(|i| i as u32).collect();
        let (_, stats) = flood_batch(&mut engine, &origins, n);
        Ok((single[0].f, stats.chat))
    });
    let results: Vec<(f64, f64)> = results.into_iter().collect::<Result<_>>()?;
    let k = results.len() as f64;
    let f_single = results.iter().map(|r| r.0).sum::<f64>() / k;
    let chat = results.iter().map(|r| r.1).sum::<f64>() / k;
    Ok(Calibration {
        f_single: f_single.max(1.0 / (n - 1) as f64),
        chat: chat.max(1e-9),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn line_config(n: usize, radius: f64) -> NetworkConfig {
        let area = std::f64::consts::PI * radius * radius;
        NetworkConfig {
            area_coeff: area * n as f64,
            ..NetworkConfig::default().with_n(n)
        }
    }

    fn line(xs: &[f64]) -> NodePlacement {
        NodePlacement {
            positions: xs.iter().map(|&x| [x, 0.5]).collect(),
            seed: 0,
        }
    }

    #[test]
    fn degenerate_inputs() {
        let cfg = NetworkConfig::default().with_n(1);
        let p = line(&[0.5]);
        assert!(run_flood(0, &p, &cfg, 10).is_err());
        let p = line(&[0.5, 0.6]);
        assert!(run_flood(0, &p, &cfg, 0).is_err());
        assert!(run_concurrent_floods(&[], &p, &cfg, 10).is_err());
        assert!(flood_stats(&[], 2).is_err());
    }

    #[test]
    fn full_coverage_broadcast() {
        let cfg = NetworkConfig {
            area_coeff: 100.0,
            ..NetworkConfig::default().with_n(50)
        };
        let p = place_nodes(&cfg).unwrap();
        let o = run_flood(7, &p, &cfg, 200).unwrap();
        assert_eq!(o.f, 1.0);
        assert_eq!(o.first_receptions_per_slot[0], 49);
        assert!(o.first_receptions_per_slot[1..].iter().all(|&c| c == 0));
    }

    #[test]
    fn line_walk_by_hand() {
        // Radius 0.15: each node hears only its immediate neighbours.
        let cfg = line_config(4, 0.15);
        let p = line(&[0.1, 0.2, 0.3, 0.4]);
        let o = run_flood(0, &p, &cfg, 50).unwrap();
        assert_eq!(o.first_receptions_per_slot, vec![1, 1, 1, 0]);
        assert_eq!(o.f, 1.0);
        // Budget cuts it short.
        let o = run_flood(0, &p, &cfg, 2).unwrap();
        assert_eq!(o.first_receptions_per_slot, vec![1, 1]);
        assert!((o.f - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_floods_progress_independently() {
        // Two pairs far apart: 0-1 and 2-3.
        let cfg = line_config(4, 0.15);
        let p = line(&[0.05, 0.15, 0.8, 0.9]);
        let (out, stats) = run_concurrent_floods(&[0, 2], &p, &cfg, 50).unwrap();
        for o in &out {
            assert_eq!(o.first_receptions_per_slot, vec![1, 0]);
            assert!((o.f - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((stats.nbar_r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collisions_at_shared_receiver() {
        // Node 1 sits between 0 and 2; both transmit in slot 1, nearer wins.
        let cfg = line_config(3, 0.15);
        let p = line(&[0.1, 0.19, 0.3]);
        let (out, _) = run_concurrent_floods(&[0, 2], &p, &cfg, 50).unwrap();
        assert_eq!(out[0].first_receptions_per_slot[0], 1);
        assert_eq!(out[1].first_receptions_per_slot[0], 0);
    }

    #[test]
    fn stats_examples() {
        let mk = |f: f64| RdpOutcome {
            rdp_id: 0,
            origin: 0,
            start_slot: 0,
            f,
            slots_used: 1,
            first_receptions_per_slot: vec![0],
        };
        let s = flood_stats(&[mk(0.5)], 10).unwrap();
        assert_eq!((s.mean_f, s.median_f, s.gamma_hat), (0.5, 0.5, 1.0));
        let s = flood_stats(&[mk(0.2), mk(0.4), mk(0.9)], 10).unwrap();
        assert!((s.mean_f - 0.5).abs() < 1e-12);
        assert!((s.median_f - 0.4).abs() < 1e-12);
        assert!((s.gamma_hat - 0.8).abs() < 1e-12);
    }

    #[test]
    fn conservation_and_forward_once() {
        let cfg = NetworkConfig::default().with_n(1024).with_seed(3);
        let p = place_nodes(&cfg).unwrap();
        let index = ReceptionIndex::build(&p, &cfg);
        let mut engine = FloodEngine::new(&index, 200).with_transmission_log();
        let mut r = rng::stream(3, Stream::Flood);
        let mut out = Vec::new();
        for slot in 0..300u64 {
            if slot < 100 && r.gen_bool(0.3) {
                engine.start(r.gen_range(0..1024), slot);
            }
            out.extend(engine.step(slot));
        }
        out.extend(engine.drain(300));
        let mut log = engine.transmissions().to_vec();
        let total = log.len();
        log.sort_unstable();
        log.dedup();
        assert_eq!(log.len(), total, "a node rebroadcast the same RREQ");
        for o in &out {
            assert!((0.0..=1.0).contains(&o.f));
            assert_eq!(o.receivers() as f64, (o.f * 1023.0).round());
        }
    }

    #[test]
    fn trace_rows_sum_to_receptions() {
        let cfg = NetworkConfig::default().with_n(300).with_seed(9);
        let p = place_nodes(&cfg).unwrap();
        let index = ReceptionIndex::build(&p, &cfg);
        let mut engine = FloodEngine::new(&index, 200).with_trace();
        engine.start(0, 0);
        engine.start(1, 0);
        let out = engine.drain(0);
        let rows = engine.trace.clone().unwrap();
        let a: u64 = rows.iter().map(|r| u64::from(r.first_receptions)).sum();
        assert_eq!(a, out.iter().map(RdpOutcome::receivers).sum::<u64>());
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("slot,transmitters,first_receptions\n0,2,"));
    }

    #[test]
    fn single_floods_percolate_at_1024() {
        let cfg = NetworkConfig::default().with_n(1024);
        let good = par::map((0..100u64).collect(), Parallelism::Parallel, |s| {
            let c = cfg.clone().with_seed(1000 + s);
            let p = place_nodes(&c).unwrap();
            let origin = rng::stream(c.seed, Stream::Flood).gen_range(0..1024);
            run_flood(origin, &p, &c, 200).unwrap().f >= 0.9
        })
        .into_iter()
        .filter(|&g| g)
        .count();
        assert!(good >= 95, "{good}/100 floods reached 90%");
    }

    #[test]
    fn concurrent_floods_reach_less() {
        let cfg = NetworkConfig::default().with_n(1024);
        let mut single = 0.0;
        let mut shared = 0.0;
        for s in 0..10u64 {
            let c = cfg.clone().with_seed(50 + s);
            let p = place_nodes(&c).unwrap();
            let mut r = rng::stream(c.seed, Stream::Flood);
            let origins: Vec<u32> = sample(&mut r, 1024, 64).iter().map(|i| i as u32).collect();
            single += run_flood(origins[0], &p, &c, 200).unwrap().f;
            let (out, _) = run_concurrent_floods(&origins, &p, &c, 200).unwrap();
            shared += out.iter().map(|o| o.f).sum::<f64>() / 64.0;
        }
        assert!(shared < single, "{shared} vs {single}");
    }

    #[test]
    fn chat_does_not_decay_with_proportional_load() {
        let pts: Vec<(f64, f64)> = [256usize, 1024, 4096]
            .iter()
            .map(|&n| {
                let cfg = NetworkConfig::default().with_n(n).with_seed(21);
                let cal = calibrate(&cfg, n / 16, 4, Parallelism::Parallel).unwrap();
                assert!(cal.chat > 0.0);
                ((n as f64).ln(), cal.chat.ln())
            })
            .collect();
        let slope = (pts[2].1 - pts[0].1) / (pts[2].0 - pts[0].0);
        assert!(slope > -0.1, "slope {slope}");
    }
}
