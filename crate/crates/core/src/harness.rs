//! Sweeps over network size: spec parsing, seeded replication, parallel
//! execution, aggregation and persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{self, check_theta, fit_exponent, Regime, RegimeVerdict, ScalingFit, ThetaCheck};
use crate::config::{self, Calibration, NetworkConfig, SuccessMode, TauModel, CONFIG_KEYS};
use crate::error::{invalid, Error, Result};
use crate::par::{self, Parallelism};
use crate::rdp_analysis::{rdp_rates, GSpec};
use crate::rng::{self, GENERATOR_NAME};
use crate::simulate::{self, Metrics, MIN_HORIZON, WARMUP_FRACTION};

pub const CSV_COLUMNS: [&str; 8] = [
    "n",
    "seed",
    "throughput_per_node",
    "xi_measured",
    "tau_measured",
    "active_fraction",
    "lambda_measured",
    "q_measured",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Example1,
    Example2,
    Example3,
    Custom,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "example1" => Scenario::Example1,
            "example2" => Scenario::Example2,
            "example3" => Scenario::Example3,
            "custom" => Scenario::Custom,
            other => return invalid(format!("unknown scenario `{other}`")),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Example1 => "example1",
            Scenario::Example2 => "example2",
            Scenario::Example3 => "example3",
            Scenario::Custom => "custom",
        }
    }

    /// Full network configuration of a preset. The RDP slot share and
    /// retrial rate are chosen so each preset lands in its intended regime
    /// at n = 256..16384: example 2 keeps theta small so data capacity stays
    /// far above the dormancy ceiling.
    pub fn base_config(self) -> NetworkConfig {
        let (theta, nu) = match self {
            Scenario::Example1 => (0.05, 0.005),
            Scenario::Example2 => (0.001, 0.0005),
            Scenario::Example3 | Scenario::Custom => (0.5, 0.01),
        };
        let mut c = NetworkConfig {
            theta,
            nu,
            ..NetworkConfig::default()
        };
        if self != Scenario::Custom {
            let (tau, g) = scenario_presets(self.name()).expect("built-in preset");
            c.tau_model = tau;
            c.g_model = g;
        }
        c
    }
}

/// Route lifetime model and success model of a named preset.
pub fn scenario_presets(name: &str) -> Result<(TauModel, GSpec)> {
    Ok(match name.trim() {
        "example1" => (TauModel::Constant { value: 2.0 }, GSpec::Identity),
        "example2" => (TauModel::InvSqrt { coeff: 128.0 }, GSpec::KTargetSqrt { coeff: 1.0 }),
        "example3" => (TauModel::InvSqrt { coeff: 12_800.0 }, GSpec::StepRepair),
        other => return invalid(format!("unknown preset `{other}`")),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub base: NetworkConfig,
    pub n_values: Vec<usize>,
    pub replications: usize,
    /// Minimum horizon per point, in slots.
    pub horizon_slots: u64,
    /// Extend the horizon until about this many D/N cycles fall in the
    /// measured window (0 keeps `horizon_slots`).
    pub target_transitions: f64,
    /// Network size for the flood calibration of analytic mode.
    pub calibration_n: usize,
    pub calibration_rdp_slots: u64,
    pub regime_threshold: f64,
    pub theta_factor: f64,
    /// 0 uses all available cores.
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

const SPEC_KEYS: &[&str] = &[
    "scenario",
    "n_values",
    "replications",
    "horizon_slots",
    "target_transitions",
    "calibration_n",
    "calibration_rdp_slots",
    "regime_threshold",
    "theta_factor",
    "workers",
    "output_dir",
];

impl ExperimentSpec {
    pub fn new(scenario: Scenario, n_values: Vec<usize>, replications: usize) -> Self {
        ExperimentSpec {
            scenario,
            base: scenario.base_config(),
            n_values,
            replications,
            horizon_slots: 100_000,
            target_transitions: 20_000.0,
            calibration_n: 1024,
            calibration_rdp_slots: 20_000,
            regime_threshold: analysis::REGIME_THRESHOLD,
            theta_factor: analysis::THETA_FACTOR,
            workers: 0,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.n_values.len() < 3 {
            return invalid(format!(
                "a sweep needs at least 3 values of n for a fit, got {}",
                self.n_values.len()
            ));
        }
        if self.n_values.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("n_values must be strictly increasing");
        }
        if self.n_values[0] < 2 {
            return invalid("every n must be at least 2");
        }
        if self.replications == 0 {
            return invalid("replications must be at least 1");
        }
        if self.horizon_slots < MIN_HORIZON {
            return invalid(format!("horizon_slots must be at least {MIN_HORIZON}"));
        }
        if !(self.target_transitions >= 0.0) || !self.target_transitions.is_finite() {
            return invalid("target_transitions must be finite and nonnegative");
        }
        if self.calibration_n < 2 || self.calibration_rdp_slots == 0 {
            return invalid("calibration_n must be >= 2 and calibration_rdp_slots positive");
        }
        if !(self.theta_factor > 1.0) {
            return invalid("theta_factor must exceed 1");
        }
        Ok(())
    }

    /// Flat `key = value` form. Network keys override the scenario preset;
    /// `n` is rejected in favour of `n_values`.
    pub fn from_kv(text: &str) -> Result<Self> {
        let map = config::parse_kv(text)?;
        for (k, (_, line)) in &map {
            if !(SPEC_KEYS.contains(&k.as_str()) || (CONFIG_KEYS.contains(&k.as_str()) && k != "n")) {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("unknown key `{k}`"),
                });
            }
        }
        let scenario = match map.get("scenario") {
            Some((v, line)) => Scenario::parse(v).map_err(|e| Error::Parse {
                line: *line,
                msg: e.to_string(),
            })?,
            None => Scenario::Custom,
        };
        if scenario == Scenario::Custom && !(map.contains_key("tau_model") && map.contains_key("g_model")) {
            return invalid("a custom scenario needs tau_model and g_model");
        }
        let n_values = match map.get("n_values") {
            Some((v, line)) => v
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Parse {
                    line: *line,
                    msg: format!("bad n_values `{v}`"),
                })?,
            None => return invalid("n_values is required"),
        };
        let mut spec = ExperimentSpec::new(scenario, n_values, 1);
        let net: config::KvMap = map
            .iter()
            .filter(|(k, _)| CONFIG_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        spec.base = NetworkConfig::apply_map(spec.base, &net)?;
        if let Some(v) = config::get(&map, "replications")? {
            spec.replications = v;
        }
        if let Some(v) = config::get(&map, "horizon_slots")? {
            spec.horizon_slots = v;
        }
        if let Some(v) = config::get(&map, "target_transitions")? {
            spec.target_transitions = v;
        }
        if let Some(v) = config::get(&map, "calibration_n")? {
            spec.calibration_n = v;
        }
        if let Some(v) = config::get(&map, "calibration_rdp_slots")? {
            spec.calibration_rdp_slots = v;
        }
        if let Some(v) = config::get(&map, "regime_threshold")? {
            spec.regime_threshold = v;
        }
        if let Some(v) = config::get(&map, "theta_factor")? {
            spec.theta_factor = v;
        }
        if let Some(v) = config::get(&map, "workers")? {
            spec.workers = v;
        }
        if let Some((v, _)) = map.get("output_dir") {
            spec.output_dir = Some(PathBuf::from(v));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> String {
        let mut s = self.numeric_kv();
        let _ = writeln!(s, "workers = {}", self.workers);
        if let Some(d) = &self.output_dir {
            let _ = writeln!(s, "output_dir = {}", d.display());
        }
        s
    }

    /// Every key that can change a number in the output.
    fn numeric_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {}", self.scenario.name());
        let ns: Vec<String> = self.n_values.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "n_values = {}", ns.join(","));
        let _ = writeln!(s, "replications = {}", self.replications);
        let _ = writeln!(s, "horizon_slots = {}", self.horizon_slots);
        let _ = writeln!(s, "target_transitions = {}", self.target_transitions);
        let _ = writeln!(s, "calibration_n = {}", self.calibration_n);
        let _ = writeln!(s, "calibration_rdp_slots = {}", self.calibration_rdp_slots);
        let _ = writeln!(s, "regime_threshold = {}", self.regime_threshold);
        let _ = writeln!(s, "theta_factor = {}", self.theta_factor);
        for (k, v) in self.base.kv_pairs() {
            if k != "n" {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    /// SHA-256 of the canonical text of every numerically relevant key.
    pub fn spec_hash(&self) -> String {
        hex::encode(Sha256::digest(self.numeric_kv().as_bytes()))
    }

    /// Sizes used for regime classification: at least two decades upward
    /// from the smallest swept n.
    pub fn probe_sizes(&self) -> Vec<usize> {
        let lo = self.n_values[0];
        let hi = (*self.n_values.last().unwrap()).max(100 * lo);
        analysis::geometric_probes(lo, hi, 8)
    }
}

/// Expected dormancy from the rate equations with the calibrated success
/// curve `q(lambda') = G(min(f_single, chat n / (lambda' (n - 1))))`.
pub fn predicted_xi(config: &NetworkConfig, cal: Calibration) -> Result<f64> {
    let n = config.n;
    let g = config.g_model.at(n);
    let q = |l: f64| {
        if l <= 0.0 {
            g.eval_clamped(cal.f_single)
        } else {
            g.eval_clamped(cal.f_single.min(cal.chat * n as f64 / (l * (n - 1) as f64)))
        }
    };
    Ok(rdp_rates(n, config.nu, config.tau().max(1.0), config.theta, q)?.xi)
}

/// Horizon for one point: the spec minimum, stretched so the window holds
/// about `target_transitions` D/N cycles.
pub fn plan_horizon(spec: &ExperimentSpec, config: &NetworkConfig) -> u64 {
    let base = spec.horizon_slots;
    let Some(cal) = config.calibration else { return base };
    if spec.target_transitions == 0.0 {
        return base;
    }
    match predicted_xi(config, cal) {
        Ok(xi) if xi.is_finite() => {
            let cycle = config.tau().max(1.0) + xi;
            let h = spec.target_transitions * cycle / (config.n as f64 * (1.0 - WARMUP_FRACTION));
            base.max(h.ceil() as u64)
        }
        _ => base,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointResult {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub horizon_slots: u64,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let k = v.len();
        let median = if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        };
        Some(Summary {
            median,
            min: v[0],
            max: v[k - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub n: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub throughput: Option<Summary>,
    pub xi: Option<Summary>,
    pub tau: Option<Summary>,
    pub lambda: Option<Summary>,
    pub q: Option<Summary>,
    pub active_fraction: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fits {
    pub throughput: Option<ScalingFit>,
    pub xi: Option<ScalingFit>,
    pub lambda: Option<ScalingFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub spec_hash: String,
    pub spec: ExperimentSpec,
    pub generator: &'static str,
    pub seeds: Vec<u64>,
    pub calibration: Option<Calibration>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub points: Vec<PointResult>,
    pub aggregates: Vec<Aggregate>,
    pub fits: Fits,
    pub verdict: RegimeVerdict,
    /// Median throughput against the verdict's reference curve.
    pub theta_check: Option<ThetaCheck>,
}

impl RunRecord {
    pub fn metrics(&self) -> impl Iterator<Item = &Metrics> {
        self.points.iter().filter_map(|p| p.metrics.as_ref())
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.metrics.is_none()).count()
    }

    /// Median of a metric per n, skipping sizes where every point failed.
    pub fn medians(&self, pick: impl Fn(&Aggregate) -> Option<Summary>) -> Vec<(f64, f64)> {
        self.aggregates
            .iter()
            .filter_map(|a| pick(a).map(|s| (a.n as f64, s.median)))
            .collect()
    }
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Analytic-mode constants measured once on a flooded network of
/// `calibration_n` nodes.
pub fn sweep_calibration(spec: &ExperimentSpec) -> Result<Option<Calibration>> {
    if spec.base.success_mode != SuccessMode::Analytic || spec.base.calibration.is_some() {
        return Ok(spec.base.calibration);
    }
    let cfg = NetworkConfig {
        success_mode: SuccessMode::Flooded,
        ..spec.base.clone().with_n(spec.calibration_n)
    };
    let horizon = (spec.calibration_rdp_slots as f64 / spec.base.theta).ceil() as u64;
    simulate::calibrate(&cfg, horizon).map(Some)
}

pub fn run_sweep(spec: &ExperimentSpec) -> Result<RunRecord> {
    run_sweep_with(spec, Parallelism::Parallel)
}

pub fn run_sweep_with(spec: &ExperimentSpec, mode: Parallelism) -> Result<RunRecord> {
    run_sweep_using(spec, mode, simulate::run_simulation)
}

pub(crate) fn run_sweep_using<F>(spec: &ExperimentSpec, mode: Parallelism, run: F) -> Result<RunRecord>
where
    F: Fn(&NetworkConfig, u64) -> Result<Metrics> + Sync + Send,
{
    spec.validate()?;
    let verdict = analysis::classify_regime(
        &spec.base.tau_model,
        &spec.base.g_model,
        &spec.probe_sizes(),
        spec.regime_threshold,
    )?;
    let started_unix = now();
    let calibration = sweep_calibration(spec)?;
    let tasks: Vec<(usize, usize)> = spec
        .n_values
        .iter()
        .flat_map(|&n| (0..spec.replications).map(move |r| (n, r)))
        .collect();
    let points = par::with_workers(spec.workers, || {
        par::map(tasks, mode, |(n, replication)| {
            let seed = rng::derive_seed(spec.base.seed, n, replication);
            let cfg = NetworkConfig {
                calibration,
                ..spec.base.clone().with_n(n).with_seed(seed)
            };
            let horizon_slots = plan_horizon(spec, &cfg);
            let (metrics, error) = match run(&cfg, horizon_slots) {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(e.to_string())),
            };
            PointResult {
                n,
                replication,
                seed,
                horizon_slots,
                metrics,
                error,
            }
        })
    });
    if points.iter().all(|p| p.metrics.is_none()) {
        return Err(Error::AllPointsFailed(points.len()));
    }
    let aggregates = aggregate(&spec.n_values, &points);
    let fit = |pick: fn(&Aggregate) -> Option<Summary>| {
        let pts: Vec<(f64, f64)> = aggregates
            .iter()
            .filter_map(|a| pick(a).map(|s| (a.n as f64, s.median)))
            .filter(|p| p.1 > 0.0 && p.1.is_finite())
            .collect();
        fit_exponent(&pts).ok()
    };
    let fits = Fits {
        throughput: fit(|a| a.throughput),
        xi: fit(|a| a.xi),
        lambda: fit(|a| a.lambda),
    };
    let theta_check = theta_against_verdict(spec, &aggregates, verdict.regime);
    Ok(RunRecord {
        spec_hash: spec.spec_hash(),
        spec: spec.clone(),
        generator: GENERATOR_NAME,
        seeds: points.iter().map(|p| p.seed).collect(),
        calibration,
        started_unix,
        finished_unix: now(),
        points,
        aggregates,
        fits,
        verdict,
        theta_check,
    })
}

fn theta_against_verdict(spec: &ExperimentSpec, aggregates: &[Aggregate], regime: Regime) -> Option<ThetaCheck> {
    let pts: Vec<(f64, f64)> = aggregates
        .iter()
        .filter_map(|a| a.throughput.map(|s| (a.n as f64, s.median)))
        .collect();
    let reference: Vec<(f64, f64)> = pts
        .iter()
        .map(|&(n, _)| {
            let v = analysis::predicted_throughput(regime, &spec.base.tau_model, &spec.base.g_model, n as usize)
                .unwrap_or(f64::NAN);
            (n, v)
        })
        .collect();
    check_theta(&pts, &reference, spec.theta_factor).ok()
}

fn aggregate(n_values: &[usize], points: &[PointResult]) -> Vec<Aggregate> {
    let mut by_n: BTreeMap<usize, Vec<&PointResult>> = n_values.iter().map(|&n| (n, Vec::new())).collect();
    for p in points {
        by_n.entry(p.n).or_default().push(p);
    }
    by_n.into_iter()
        .map(|(n, ps)| {
            let ok: Vec<&Metrics> = ps.iter().filter_map(|p| p.metrics.as_ref()).collect();
            let col = |f: fn(&Metrics) -> f64| Summary::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            Aggregate {
                n,
                succeeded: ok.len(),
                failed: ps.len() - ok.len(),
                throughput: col(|m| m.throughput_per_node),
                xi: col(|m| m.xi_measured),
                tau: col(|m| m.tau_measured),
                lambda: col(|m| m.lambda_measured),
                q: col(|m| m.q_measured),
                active_fraction: col(|m| m.active_fraction),
            }
        })
        .collect()
}

/// One row per successful point, in the fixed column order.
pub fn write_csv<W: Write>(points: &[PointResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for p in points {
        let Some(m) = &p.metrics else { continue };
        w.write_record([
            m.n.to_string(),
            m.seed.to_string(),
            m.throughput_per_node.to_string(),
            m.xi_measured.to_string(),
            m.tau_measured.to_string(),
            m.active_fraction.to_string(),
            m.lambda_measured.to_string(),
            m.q_measured.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `<hash>.csv`, `<hash>.json` and `<hash>.regime.csv` under `dir`.
/// Returns the CSV path.
pub fn persist(record: &RunRecord, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let stem = &record.spec_hash[..16];
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(&record.points, std::fs::File::create(&csv_path)?)?;
    let json = serde_json::to_string_pretty(record)?;
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    record
        .verdict
        .write_csv(std::fs::File::create(dir.join(format!("{stem}.regime.csv")))?)?;
    Ok(csv_path)
}

/// Load the CSV written by [`write_csv`] and return `(x, y)` columns.
pub fn read_columns(path: &Path, x: &str, y: &str) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidConfig(format!("column `{name}` not found in {}", path.display())))
    };
    let (xi, yi) = (col(x)?, col(y)?);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| {
            rec.get(j)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    line: i + 2,
                    msg: format!("non-numeric value in column {j}"),
                })
        };
        out.push((parse(xi)?, parse(yi)?));
    }
    Ok(out)
}
