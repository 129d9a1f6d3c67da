//! Network parameters and their flat `key = value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rdp_analysis::{fmt_pairs, parse_pairs, GSpec};

/// Expected route lifetime `tau(n)` in slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauModel {
    Constant {
        value: f64,
    },
    /// `coeff / sqrt(n)`.
    InvSqrt {
        coeff: f64,
    },
    /// Log-log interpolation through `(n, tau)` samples.
    Table {
        points: Vec<(f64, f64)>,
    },
}

impl TauModel {
    pub fn at(&self, n: usize) -> f64 {
        let n = n.max(1) as f64;
        match self {
            TauModel::Constant { value } => *value,
            TauModel::InvSqrt { coeff } => coeff / n.sqrt(),
            TauModel::Table { points } => {
                let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
                crate::rdp_analysis::interpolate(&logs, n.ln()).exp()
            }
        }
    }

    /// `const:V`, `inv_sqrt:C` or `table:n=tau;n=tau;...`
    pub fn parse(s: &str) -> Result<Self> {
        let (head, arg) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::InvalidConfig(format!("tau_model `{s}` needs `kind:argument`")))?;
        let num = || {
            arg.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("tau_model `{s}` has a non-numeric argument")))
        };
        let model = match head.trim() {
            "const" => TauModel::Constant { value: num()? },
            "inv_sqrt" => TauModel::InvSqrt { coeff: num()? },
            "table" => {
                let mut points = parse_pairs(arg)?;
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                TauModel::Table { points }
            }
            other => return invalid(format!("unknown tau_model `{other}`")),
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            TauModel::Constant { value } => value.is_finite() && *value >= 0.0,
            TauModel::InvSqrt { coeff } => coeff.is_finite() && *coeff >= 0.0,
            TauModel::Table { points } => !points.is_empty() && points.iter().all(|(n, t)| *n >= 1.0 && *t > 0.0),
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("tau_model {self} must be nonnegative (table entries positive)"))
        }
    }
}

impl std::fmt::Display for TauModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TauModel::Constant { value } => write!(f, "const:{value}"),
            TauModel::InvSqrt { coeff } => write!(f, "inv_sqrt:{coeff}"),
            TauModel::Table { points } => write!(f, "table:{}", fmt_pairs(points)),
        }
    }
}

/// How the outcome of a route discovery is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SuccessMode {
    /// Run every RREQ flood slot by slot; success ~ Bernoulli(G(f)) with the
    /// reach `f` of that flood.
    Flooded,
    /// Success ~ Bernoulli(G(f_bar)) with the mean reach predicted from a
    /// calibration of the flood engine. Fast enough for large sweeps.
    #[default]
    Analytic,
}

impl std::str::FromStr for SuccessMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "flooded" => Ok(SuccessMode::Flooded),
            "analytic" => Ok(SuccessMode::Analytic),
            other => invalid(format!("unknown success_mode `{other}`")),
        }
    }
}

impl std::fmt::Display for SuccessMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SuccessMode::Flooded => "flooded",
            SuccessMode::Analytic => "analytic",
        })
    }
}

/// Flood-engine constants used by the analytic success mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Mean reach of an isolated flood.
    pub f_single: f64,
    /// First-time receptions per RDP slot per node under full load.
    pub chat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n: usize,
    /// Link rate, bits per unit time.
    pub w: f64,
    /// RREQ (and data packet) size in bits.
    pub s_rreq: f64,
    /// Protocol-model guard factor.
    pub delta: f64,
    /// RDP initiation rate of an N-state node, attempts per slot.
    pub nu: f64,
    /// Fraction of slots reserved for route discovery.
    pub theta: f64,
    /// Reception area is `min(1, area_coeff / n)`.
    pub area_coeff: f64,
    pub tau_model: TauModel,
    pub g_model: GSpec,
    pub success_mode: SuccessMode,
    /// Lifetime cap of a single flood, in RDP slots.
    pub flood_budget: u32,
    /// Path-loss exponent of the capture rule. Any positive value selects
    /// the same winner; kept for sensitivity runs.
    pub path_loss_exp: f64,
    pub calibration: Option<Calibration>,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            n: 1024,
            w: 1.0,
            s_rreq: 1.0,
            delta: 1.0,
            nu: 0.01,
            theta: 0.5,
            area_coeff: 16.0,
            tau_model: TauModel::Constant { value: 10.0 },
            g_model: GSpec::Identity,
            success_mode: SuccessMode::Analytic,
            flood_budget: 200,
            path_loss_exp: 3.0,
            calibration: None,
            seed: 0,
        }
    }
}

pub(crate) const CONFIG_KEYS: &[&str] = &[
    "n",
    "w",
    "s_rreq",
    "delta",
    "nu",
    "theta",
    "area_coeff",
    "tau_model",
    "g_model",
    "success_mode",
    "flood_budget",
    "path_loss_exp",
    "cal_f_single",
    "cal_chat",
    "seed",
];

impl NetworkConfig {
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return invalid("n must be at least 1");
        }
        if !(self.w > 0.0) || !(self.s_rreq > 0.0) {
            return invalid("w and s_rreq must be positive");
        }
        if !(self.delta >= 0.0) {
            return invalid(format!("delta must be nonnegative, got {}", self.delta));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return invalid(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        // nu <= 1 by construction of the slot; with the time split, initiations
        // only happen in RDP slots, so nu cannot exceed theta either.
        if !(self.nu >= 0.0 && self.nu <= 1.0) {
            return invalid(format!("nu must lie in [0, 1], got {}", self.nu));
        }
        if self.nu > self.theta {
            return invalid(format!(
                "nu = {} exceeds the RDP slot fraction theta = {}",
                self.nu, self.theta
            ));
        }
        if !(self.area_coeff > 0.0) {
            return invalid("area_coeff must be positive");
        }
        if self.flood_budget == 0 {
            return invalid("flood_budget must be at least 1");
        }
        if !(self.path_loss_exp > 0.0) {
            return invalid("path_loss_exp must be positive");
        }
        if let Some(c) = self.calibration {
            if !(c.f_single > 0.0 && c.f_single <= 1.0) || !(c.chat > 0.0) {
                return invalid("calibration needs f_single in (0, 1] and chat > 0");
            }
        }
        self.tau_model.validate()
    }

    /// Slot length `s_rreq / w`.
    pub fn slot_len(&self) -> f64 {
        self.s_rreq / self.w
    }

    pub fn reception_area(&self) -> f64 {
        (self.area_coeff / self.n as f64).min(1.0)
    }

    pub fn reception_radius(&self) -> f64 {
        (self.reception_area() / std::f64::consts::PI).sqrt()
    }

    pub fn tau(&self) -> f64 {
        self.tau_model.at(self.n)
    }

    /// Probability that an N-state node initiates an RDP in a given RDP slot.
    pub fn initiation_prob(&self) -> f64 {
        (self.nu / self.theta).min(1.0)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.kv_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub(crate) fn kv_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("n", self.n.to_string()),
            ("w", self.w.to_string()),
            ("s_rreq", self.s_rreq.to_string()),
            ("delta", self.delta.to_string()),
            ("nu", self.nu.to_string()),
            ("theta", self.theta.to_string()),
            ("area_coeff", self.area_coeff.to_string()),
            ("tau_model", self.tau_model.to_string()),
            ("g_model", self.g_model.to_string()),
            ("success_mode", self.success_mode.to_string()),
            ("flood_budget", self.flood_budget.to_string()),
            ("path_loss_exp", self.path_loss_exp.to_string()),
        ];
        if let Some(c) = self.calibration {
            out.push(("cal_f_single", c.f_single.to_string()));
            out.push(("cal_chat", c.chat.to_string()));
        }
        out.push(("seed", self.seed.to_string()));
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        if let Some((k, line)) = map.iter().find(|(k, _)| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::Parse {
                line: line.1,
                msg: format!("unknown key `{k}`"),
            });
        }
        let cfg = Self::from_map(&map)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply the recognised keys of `map` over the defaults.
    pub(crate) fn from_map(map: &KvMap) -> Result<Self> {
        Self::apply_map(NetworkConfig::default(), map)
    }

    pub(crate) fn apply_map(mut c: NetworkConfig, map: &KvMap) -> Result<Self> {
        if let Some(v) = get(map, "n")? {
            c.n = v;
        }
        if let Some(v) = get(map, "w")? {
            c.w = v;
        }
        if let Some(v) = get(map, "s_rreq")? {
            c.s_rreq = v;
        }
        if let Some(v) = get(map, "delta")? {
            c.delta = v;
        }
        if let Some(v) = get(map, "nu")? {
            c.nu = v;
        }
        if let Some(v) = get(map, "theta")? {
            c.theta = v;
        }
        if let Some(v) = get(map, "area_coeff")? {
            c.area_coeff = v;
        }
        if let Some((v, line)) = map.get("tau_model") {
            c.tau_model = TauModel::parse(v).map_err(|e| at_line(e, *line))?;
        }
        if let Some((v, line)) = map.get("g_model") {
            c.g_model = GSpec::parse(v).map_err(|e| at_line(e, *line))?;
        }
        if let Some(v) = get(map, "success_mode")? {
            c.success_mode = v;
        }
        if let Some(v) = get(map, "flood_budget")? {
            c.flood_budget = v;
        }
        if let Some(v) = get(map, "path_loss_exp")? {
            c.path_loss_exp = v;
        }
        match (get::<f64>(map, "cal_f_single")?, get::<f64>(map, "cal_chat")?) {
            (Some(f_single), Some(chat)) => c.calibration = Some(Calibration { f_single, chat }),
            (None, None) => {}
            _ => return invalid("cal_f_single and cal_chat must be given together"),
        }
        if let Some(v) = get(map, "seed")? {
            c.seed = v;
        }
        Ok(c)
    }
}

/// key -> (value, line number)
pub(crate) type KvMap = BTreeMap<String, (String, usize)>;

/// Parse `key = value` lines. `#` starts a comment; duplicate keys are an
/// error.
pub(crate) fn parse_kv(text: &str) -> Result<KvMap> {
    let mut map = KvMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), (v.trim().to_string(), i + 1)).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(map)
}

pub(crate) fn get<T: std::str::FromStr>(map: &KvMap, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some((v, line)) => v.parse::<T>().map(Some).map_err(|_| Error::Parse {
            line: *line,
            msg: format!("bad value `{v}` for `{key}`"),
        }),
    }
}

fn at_line(e: Error, line: usize) -> Error {
    match e {
        Error::InvalidConfig(msg) => Error::Parse { line, msg },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut c = NetworkConfig {
            n: 4096,
            nu: 0.02,
            tau_model: TauModel::InvSqrt { coeff: 256.0 },
            g_model: GSpec::KTargetSqrt { coeff: 1.5 },
            success_mode: SuccessMode::Flooded,
            seed: 99,
            ..NetworkConfig::default()
        };
        assert_eq!(NetworkConfig::from_kv(&c.to_kv()).unwrap(), c);
        c.calibration = Some(Calibration {
            f_single: 0.93,
            chat: 0.21,
        });
        assert_eq!(NetworkConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn unknown_and_malformed_keys_fail() {
        assert!(matches!(
            NetworkConfig::from_kv("n = 10\nbogus = 1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            NetworkConfig::from_kv("n = ten"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            NetworkConfig::from_kv("n = 1\nn = 2"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(NetworkConfig::from_kv("nu = 1.5").is_err());
        assert!(NetworkConfig::from_kv("cal_chat = 0.2").is_err());
    }

    #[test]
    fn derived_quantities() {
        let c = NetworkConfig {
            n: 100,
            w: 2.0,
            s_rreq: 8.0,
            area_coeff: 16.0,
            ..NetworkConfig::default()
        };
        assert_eq!(c.slot_len(), 4.0);
        assert!((c.reception_area() - 0.16).abs() < 1e-15);
        let c = NetworkConfig { n: 4, ..c };
        assert_eq!(c.reception_area(), 1.0);
    }

    #[test]
    fn tau_models() {
        assert_eq!(TauModel::parse("const:7").unwrap().at(99), 7.0);
        assert_eq!(TauModel::parse("inv_sqrt:64").unwrap().at(256), 4.0);
        let t = TauModel::parse("table:100=10;10000=1").unwrap();
        assert!((t.at(1000) - 10f64.powf(0.5)).abs() < 1e-9);
        assert!(TauModel::parse("const:-1").is_err());
        assert!(TauModel::parse("weird:1").is_err());
    }
}
