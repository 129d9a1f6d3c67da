//! Slotted end-to-end simulation with time split between RDP and data slots.
//!
//! A run has two stages. The control plane produces every node's D/N
//! timeline, either by drawing RDP outcomes from the calibrated success
//! probability (analytic mode) or by running every flood slot by slot
//! (flooded mode). The data plane then replays the D periods as packet
//! sources and relays packets cell by cell under the lattice schedule; the
//! reported throughput is the largest offered rate it sustains.

mod control;
mod data;

use serde::Serialize;

use crate::config::{Calibration, NetworkConfig, SuccessMode};
use crate::error::{domain, invalid, Result};
use crate::mac::lattice_schedule;
use crate::rdp_flood::run_flood;
use crate::rng::{self, Stream};
use crate::routing::assign_destinations;
use crate::topology::{build_grid, place_nodes};

pub use control::{DInterval, Timeline};
pub use data::{DataRun, RateSearch};

/// Fraction of the horizon discarded before measuring.
pub const WARMUP_FRACTION: f64 = 0.2;
/// Delivery ratio a rate must reach to count as sustained.
pub const SUSTAIN_RATIO: f64 = 0.95;
pub const MIN_HORIZON: u64 = 1000;

/// Deterministic interleaving of RDP and data slots with RDP density
/// `num / den`. Slot `t` is an RDP slot iff `floor((t+1) num/den) >
/// floor(t num/den)`, which spreads the RDP slots as evenly as possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SlotPattern {
    pub num: u64,
    pub den: u64,
}

impl SlotPattern {
    pub const DENOMINATOR: u64 = 10_000;

    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return domain(format!("theta must lie in (0, 1), got {theta}"));
        }
        let num = ((theta * Self::DENOMINATOR as f64).round() as u64).clamp(1, Self::DENOMINATOR - 1);
        Ok(SlotPattern {
            num,
            den: Self::DENOMINATOR,
        })
    }

    pub fn theta(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// RDP slots in `[0, t)`.
    pub fn rdp_before(&self, t: u64) -> u64 {
        t * self.num / self.den
    }

    /// Data slots in `[0, t)`.
    pub fn data_before(&self, t: u64) -> u64 {
        t - self.rdp_before(t)
    }

    pub fn is_rdp(&self, t: u64) -> bool {
        self.rdp_before(t + 1) > self.rdp_before(t)
    }

    /// Slot index of the `j`-th RDP slot (0-based).
    pub fn rdp_slot(&self, j: u64) -> u64 {
        ((j + 1) * self.den).div_ceil(self.num) - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    D,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeState {
    pub mode: Mode,
    pub dest: u32,
    /// Slot at which the current period started.
    pub since: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n: usize,
    pub seed: u64,
    /// Bits per unit time per node.
    pub throughput_per_node: f64,
    pub xi_measured: f64,
    pub tau_measured: f64,
    pub active_fraction: f64,
    pub lambda_measured: f64,
    pub q_measured: f64,
    pub delivered_bits: f64,
    pub generated_bits: f64,
    pub sustained_rate: f64,
    pub attempts: f64,
    pub successes: f64,
    /// First receptions per RDP slot (flooded mode only).
    pub nbar_r: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub window_slots: u64,
}

impl Metrics {
    /// RDP initiations per RDP slot, the rate seen by the flood engine.
    pub fn lambda_per_rdp_slot(&self, theta: f64) -> f64 {
        self.lambda_measured / theta
    }
}

/// Long-run fraction of time in state D.
pub fn active_fraction(tau: f64, xi: f64) -> Result<f64> {
    if !(tau >= 0.0 && xi >= 0.0) || tau + xi <= 0.0 {
        return domain(format!(
            "active fraction needs tau, xi >= 0 with tau + xi > 0, got {tau}, {xi}"
        ));
    }
    if xi.is_infinite() {
        return Ok(0.0);
    }
    Ok(tau / (tau + xi))
}

pub fn success_mode(config: &NetworkConfig) -> SuccessMode {
    config.success_mode
}

/// Everything produced by one run.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub metrics: Metrics,
    pub timeline: Timeline,
    pub search: RateSearch,
}

pub fn run_simulation(config: &NetworkConfig, horizon_slots: u64) -> Result<Metrics> {
    Ok(simulate(config, horizon_slots)?.metrics)
}

pub fn simulate(config: &NetworkConfig, horizon_slots: u64) -> Result<SimReport> {
    config.validate()?;
    if horizon_slots < MIN_HORIZON {
        return invalid(format!(
            "horizon must be at least {MIN_HORIZON} slots, got {horizon_slots}"
        ));
    }
    if config.n < 2 {
        return invalid("simulation needs at least two nodes");
    }
    let calibration = match (config.success_mode, config.calibration) {
        (SuccessMode::Analytic, None) => Some(calibrate(config, horizon_slots)?),
        (_, c) => c,
    };
    let placement = place_nodes(config)?;
    let grid = build_grid(&placement, config);
    let pattern = SlotPattern::new(config.theta)?;
    let dest = assign_destinations(config.n, &mut rng::stream(config.seed, Stream::Destinations))?;
    let timeline = match config.success_mode {
        SuccessMode::Analytic => {
            control::analytic(config, pattern, dest, horizon_slots, calibration.expect("calibrated"))
        }
        SuccessMode::Flooded => control::flooded(config, &placement, pattern, dest, horizon_slots),
    };
    let schedule = lattice_schedule(&grid);
    let search = data::sustained_rate(&timeline, &grid, &schedule, pattern, config.seed);
    let metrics = metrics_from(config, &timeline, &search);
    Ok(SimReport {
        metrics,
        timeline,
        search,
    })
}

fn metrics_from(config: &NetworkConfig, t: &Timeline, s: &RateSearch) -> Metrics {
    let n = config.n as f64;
    let window = t.window_slots() as f64;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::INFINITY };
    let best = &s.best;
    Metrics {
        n: config.n,
        seed: config.seed,
        throughput_per_node: best.delivered as f64 * config.s_rreq / (n * window * config.slot_len()),
        xi_measured: ratio(t.n_time, t.n_to_d as f64),
        tau_measured: ratio(t.d_time, t.d_to_n as f64),
        active_fraction: t.d_time / (n * window),
        lambda_measured: t.attempts / window,
        q_measured: if t.closures > 0.0 {
            t.successes / t.closures
        } else {
            0.0
        },
        delivered_bits: best.delivered as f64 * config.s_rreq,
        generated_bits: best.generated as f64 * config.s_rreq,
        sustained_rate: s.rate,
        attempts: t.closures,
        successes: t.successes,
        nbar_r: t.nbar_r,
        gamma_hat: t.gamma_hat,
        window_slots: t.window_slots(),
    }
}

/// Flood-engine constants for analytic mode, measured on this network:
/// mean reach of isolated floods, and first receptions per RDP slot per
/// node in a flooded control-plane run of `horizon_slots`.
pub fn calibrate(config: &NetworkConfig, horizon_slots: u64) -> Result<Calibration> {
    config.validate()?;
    if config.n < 2 {
        return invalid("calibration needs at least two nodes");
    }
    let placement = place_nodes(config)?;
    let mut r = rng::stream(config.seed, Stream::Flood);
    let trials = 16.min(config.n);
    let origins = rand::seq::index::sample(&mut r, config.n, trials);
    let mut f_single = 0.0;
    for o in origins.iter() {
        f_single += run_flood(o as u32, &placement, config, config.flood_budget)?.f;
    }
    f_single /= trials as f64;
    let pattern = SlotPattern::new(config.theta)?;
    let dest = assign_destinations(config.n, &mut rng::stream(config.seed, Stream::Destinations))?;
    let t = control::flooded(config, &placement, pattern, dest, horizon_slots.max(MIN_HORIZON));
    let chat = t.nbar_r.unwrap_or(0.0) / config.n as f64;
    Ok(Calibration {
        f_single: f_single.max(1.0 / (config.n - 1) as f64),
        chat: chat.max(1e-9),
    })
}
