//! `rdpcap` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::seq::index::sample;
use serde_json::json;

use rdpcap::analysis::{classify_regime, fit_exponent, geometric_probes, REGIME_THRESHOLD};
use rdpcap::harness::{persist, read_columns, run_sweep, scenario_presets, ExperimentSpec};
use rdpcap::rdp_analysis::{interpolate, solve_lambda, xi_from_rates};
use rdpcap::rdp_flood::run_concurrent_floods;
use rdpcap::rng::{self, Stream};
use rdpcap::topology::place_nodes;
use rdpcap::{Error, NetworkConfig};

#[derive(Parser)]
#[command(
    name = "rdpcap",
    version,
    about = "Route-discovery-limited capacity of random ad hoc networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep over n from a key=value spec file.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flood statistics for K simultaneous RREQ floods on one placement.
    Flood {
        #[arg(long)]
        n: usize,
        /// Reception area coefficient: area = min(1, ca / n).
        #[arg(long)]
        ca: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        origins: usize,
        #[arg(long, default_value_t = 200)]
        budget: u32,
    },
    /// Solve the RDP rate fixed point.
    SolveLambda {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        tau: f64,
        /// A constant, or a file of `lambda,qprime` rows.
        #[arg(long)]
        qprime: String,
    },
    /// Regime verdict for a preset or a config file.
    Classify {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n_min: usize,
        #[arg(long)]
        n_max: usize,
        #[arg(long, default_value_t = 8)]
        probes: usize,
        #[arg(long, default_value_t = REGIME_THRESHOLD, allow_negative_numbers = true)]
        threshold: f64,
    },
    /// Log-log fit of one CSV column against another (medians per x).
    Fit {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "n")]
        x: String,
        #[arg(long, default_value = "throughput")]
        y: String,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::AllPointsFailed(_) | Error::Io(_) => Failure::Runtime(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

type Out = Result<serde_json::Value, Failure>;

fn read(path: &PathBuf) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn sweep(spec: PathBuf, workers: Option<usize>, out: Option<PathBuf>) -> Out {
    let mut spec = ExperimentSpec::from_kv(&read(&spec)?)?;
    if let Some(w) = workers {
        spec.workers = w;
    }
    let dir = out
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    spec.output_dir = Some(dir.clone());
    let record = run_sweep(&spec)?;
    let csv = persist(&record, &dir)?;
    Ok(json!({
        "spec_hash": record.spec_hash,
        "csv": csv,
        "points": record.points.len(),
        "failed": record.failures(),
        "fits": record.fits,
        "verdict": record.verdict.regime,
        "theta_check": record.theta_check,
    }))
}

fn flood(n: usize, ca: f64, seed: u64, origins: usize, budget: u32) -> Out {
    let cfg = NetworkConfig {
        area_coeff: ca,
        flood_budget: budget,
        ..NetworkConfig::default().with_n(n).with_seed(seed)
    };
    cfg.validate()?;
    if origins == 0 || origins > n {
        return Err(Failure::Invalid(format!("origins must lie in 1..={n}")));
    }
    let placement = place_nodes(&cfg)?;
    let picked: Vec<u32> = sample(&mut rng::stream(seed, Stream::Flood), n, origins)
        .iter()
        .map(|i| i as u32)
        .collect();
    let (outcomes, stats) = run_concurrent_floods(&picked, &placement, &cfg, budget)?;
    let slots = outcomes.iter().map(|o| o.slots_used).max().unwrap_or(0);
    Ok(json!({ "n": n, "origins": origins, "slots": slots, "stats": stats }))
}

fn parse_table(text: &str) -> Result<Vec<(f64, f64)>, Failure> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parsed: Option<Vec<f64>> = cells.iter().map(|c| c.parse().ok()).collect();
        match parsed.as_deref() {
            Some([x, y]) => points.push((*x, *y)),
            None if points.is_empty() && i == 0 => continue,
            _ => return Err(Failure::Invalid(format!("line {}: expected `lambda,qprime`", i + 1))),
        }
    }
    if points.is_empty() {
        return Err(Failure::Invalid("q' table is empty".into()));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(points)
}

fn solve(n: usize, nu: f64, tau: f64, qprime: &str) -> Out {
    let table = match qprime.trim().parse::<f64>() {
        Ok(q) => vec![(0.0, q)],
        Err(_) => parse_table(&read(&PathBuf::from(qprime))?)?,
    };
    let q = |l: f64| interpolate(&table, l);
    let lambda = solve_lambda(n, nu, tau, q)?;
    let qp = q(lambda);
    let xi = xi_from_rates(nu, qp).ok();
    Ok(json!({ "lambda": lambda, "q_prime": qp, "xi": xi }))
}

fn classify(scenario: &str, n_min: usize, n_max: usize, probes: usize, threshold: f64) -> Out {
    let (tau, g) = match scenario_presets(scenario) {
        Ok(p) => p,
        Err(_) => {
            let text = read(&PathBuf::from(scenario))?;
            match ExperimentSpec::from_kv(&text) {
                Ok(spec) => (spec.base.tau_model, spec.base.g_model),
                Err(_) => {
                    let cfg = NetworkConfig::from_kv(&text)?;
                    (cfg.tau_model, cfg.g_model)
                }
            }
        }
    };
    if n_max <= n_min {
        return Err(Failure::Invalid("n-max must exceed n-min".into()));
    }
    let verdict = classify_regime(&tau, &g, &geometric_probes(n_min, n_max, probes), threshold)?;
    Ok(serde_json::to_value(verdict).expect("serializable"))
}

fn fit(csv: PathBuf, x: &str, y: &str) -> Out {
    let header = read(&csv)?;
    let columns: Vec<&str> = header.lines().next().unwrap_or("").split(',').map(str::trim).collect();
    let resolve = |name: &str| {
        [name.to_string(), format!("{name}_per_node"), format!("{name}_measured")]
            .into_iter()
            .find(|c| columns.contains(&c.as_str()))
            .ok_or_else(|| Failure::Invalid(format!("no column `{name}` in {}", csv.display())))
    };
    let (xc, yc) = (resolve(x)?, resolve(y)?);
    let rows = read_columns(&csv, &xc, &yc)?;
    let mut groups: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for (a, b) in rows {
        groups.entry(a.to_bits()).or_default().push(b);
    }
    let mut points: Vec<(f64, f64)> = groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            let m = v.len();
            let med = if m % 2 == 1 {
                v[m / 2]
            } else {
                0.5 * (v[m / 2 - 1] + v[m / 2])
            };
            (f64::from_bits(k), med)
        })
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let fit = fit_exponent(&points)?;
    Ok(serde_json::to_value(fit).expect("serializable"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Sweep { spec, workers, out } => sweep(spec, workers, out),
        Command::Flood {
            n,
            ca,
            seed,
            origins,
            budget,
        } => flood(n, ca, seed, origins, budget),
        Command::SolveLambda { n, nu, tau, qprime } => solve(n, nu, tau, &qprime),
        Command::Classify {
            scenario,
            n_min,
            n_max,
            probes,
            threshold,
        } => classify(&scenario, n_min, n_max, probes, threshold),
        Command::Fit { csv, x, y } => fit(csv, &x, &y),
    };
    match result {
        Ok(v) => {
            // A closed pipe downstream is not an error of ours.
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                serde_json::to_string_pretty(&v).expect("serializable")
            );
            ExitCode::SUCCESS
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
