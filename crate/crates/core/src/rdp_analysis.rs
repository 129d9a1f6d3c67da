//! Route-discovery success models and the rate equations built on them.
//!
//! `G(f)` maps the fraction of nodes an RDP reached to its success
//! probability. The functions here bound the unconditional success
//! probability `Q`, translate it to `Q'` for an RDP slot share `theta`,
//! solve the self-consistent RDP arrival rate `lambda`, and derive the
//! expected dormancy `xi`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Shape of `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GKind {
    /// `G(f) = f`: the destination is a uniformly random node.
    Identity,
    /// `G(f) = 1 - (1 - f)^k`: success when any of `k` independent
    /// targets is hit.
    KTarget { k: f64 },
    /// `G(f) = 1` for `f > 0`: any reached node can repair the route.
    StepRepair,
    /// Piecewise-linear interpolation through `(f, G)` points.
    Table { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GModel {
    pub kind: GKind,
    /// Median-to-mean reach constant used by the lower bound on `Q`.
    pub gamma: f64,
}

impl GModel {
    pub fn new(kind: GKind) -> Self {
        GModel { kind, gamma: 1.0 }
    }

    pub fn identity() -> Self {
        Self::new(GKind::Identity)
    }

    pub fn k_target(k: f64) -> Self {
        Self::new(GKind::KTarget { k })
    }

    pub fn step_repair() -> Self {
        Self::new(GKind::StepRepair)
    }

    pub fn table(points: Vec<(f64, f64)>) -> Self {
        Self::new(GKind::Table { points })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn eval(&self, f: f64) -> Result<f64> {
        g_eval(self, f)
    }

    /// Evaluate after clamping the argument into `[0, 1]`.
    pub fn eval_clamped(&self, f: f64) -> f64 {
        let f = if f.is_nan() { 0.0 } else { f.clamp(0.0, 1.0) };
        raw_eval(&self.kind, f)
    }
}

/// An `n`-dependent family of `G` models, resolved per network size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GSpec {
    Identity,
    KTarget {
        k: f64,
    },
    /// `k = coeff * sqrt(n)` targets.
    KTargetSqrt {
        coeff: f64,
    },
    StepRepair,
    Table {
        points: Vec<(f64, f64)>,
    },
}

impl GSpec {
    pub fn at(&self, n: usize) -> GModel {
        match self {
            GSpec::Identity => GModel::identity(),
            GSpec::KTarget { k } => GModel::k_target(*k),
            GSpec::KTargetSqrt { coeff } => GModel::k_target(coeff * (n as f64).sqrt()),
            GSpec::StepRepair => GModel::step_repair(),
            GSpec::Table { points } => GModel::table(points.clone()),
        }
    }

    /// `identity`, `step_repair`, `k_target:K`, `k_target_sqrt:C`,
    /// `table:f=g;f=g;...`
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.and_then(|a| a.parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidConfig(format!("g_model `{s}` needs a numeric argument")))
        };
        Ok(match head {
            "identity" => GSpec::Identity,
            "step_repair" => GSpec::StepRepair,
            "k_target" => GSpec::KTarget { k: num(arg)? },
            "k_target_sqrt" => GSpec::KTargetSqrt { coeff: num(arg)? },
            "table" => GSpec::Table {
                points: parse_pairs(arg.unwrap_or(""))?,
            },
            other => return Err(Error::InvalidConfig(format!("unknown g_model `{other}`"))),
        })
    }
}

impl std::fmt::Display for GSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GSpec::Identity => write!(f, "identity"),
            GSpec::StepRepair => write!(f, "step_repair"),
            GSpec::KTarget { k } => write!(f, "k_target:{k}"),
            GSpec::KTargetSqrt { coeff } => write!(f, "k_target_sqrt:{coeff}"),
            GSpec::Table { points } => write!(f, "table:{}", fmt_pairs(points)),
        }
    }
}

pub(crate) fn parse_pairs(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("table entry `{p}` is not x=y")))?;
            let a = a.trim().parse::<f64>();
            let b = b.trim().parse::<f64>();
            match (a, b) {
                (Ok(a), Ok(b)) => Ok((a, b)),
                _ => Err(Error::InvalidConfig(format!("table entry `{p}` is not numeric"))),
            }
        })
        .collect()
}

pub(crate) fn fmt_pairs(points: &[(f64, f64)]) -> String {
    points
        .iter()
        .map(|(a, b)| format!("{a}={b}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn raw_eval(kind: &GKind, f: f64) -> f64 {
    match kind {
        GKind::Identity => f,
        GKind::KTarget { k } => 1.0 - (1.0 - f).powf(*k),
        GKind::StepRepair => {
            if f > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        GKind::Table { points } => interpolate(points, f),
    }
}

/// Linear interpolation, clamped to the end values outside the table.
pub fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    match points {
        [] => 0.0,
        [(_, y)] => *y,
        _ => {
            if x <= points[0].0 {
                return points[0].1;
            }
            for w in points.windows(2) {
                let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                if x <= x1 {
                    if x1 == x0 {
                        return y1;
                    }
                    return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
                }
            }
            points[points.len() - 1].1
        }
    }
}

pub fn g_eval(model: &GModel, f: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f) {
        return domain(format!("G is defined on [0, 1], got f = {f}"));
    }
    Ok(raw_eval(&model.kind, f))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NotZeroAtZero(f64),
    NotOneAtOne(f64),
    Decreasing { f: f64, drop: f64 },
    BelowDiagonal { f: f64, g: f64 },
    NotConcave { f: f64, second_difference: f64 },
}

const LATTICE_STEP: f64 = 1e-3;
const TOL: f64 = 1e-12;

/// Check `G(0)=0`, `G(1)=1`, monotonicity, `G(f) >= f` and concavity on a
/// `1e-3` lattice. Every violation found is reported.
pub fn validate_gmodel(model: &GModel) -> std::result::Result<(), Vec<Violation>> {
    let steps = (1.0 / LATTICE_STEP).round() as usize;
    let xs: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    let gs: Vec<f64> = xs.iter().map(|&x| raw_eval(&model.kind, x)).collect();
    let mut out = Vec::new();

    if gs[0].abs() > TOL {
        out.push(Violation::NotZeroAtZero(gs[0]));
    }
    if (gs[steps] - 1.0).abs() > TOL {
        out.push(Violation::NotOneAtOne(gs[steps]));
    }
    if let Some(i) = (1..=steps).find(|&i| gs[i] < gs[i - 1] - TOL) {
        out.push(Violation::Decreasing {
            f: xs[i],
            drop: gs[i - 1] - gs[i],
        });
    }
    if let Some(i) = (0..=steps).find(|&i| gs[i] < xs[i] - 1e-9) {
        out.push(Violation::BelowDiagonal { f: xs[i], g: gs[i] });
    }
    // The step model jumps at 0, so concavity is judged on (0, 1] for it;
    // a jump up at the left end does not break concavity of the closure.
    let first = usize::from(matches!(model.kind, GKind::StepRepair));
    if let Some(i) = (first + 1..steps).find(|&i| gs[i + 1] - 2.0 * gs[i] + gs[i - 1] > 1e-9) {
        out.push(Violation::NotConcave {
            f: xs[i],
            second_difference: gs[i + 1] - 2.0 * gs[i] + gs[i - 1],
        });
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn check_rate_inputs(lambda: f64, n: usize) -> Result<()> {
    if !(lambda > 0.0) {
        return domain(format!("lambda must be positive, got {lambda}"));
    }
    if n < 2 {
        return domain(format!("need n >= 2, got {n}"));
    }
    Ok(())
}

/// `G(min(1, nbar_r / (lambda (n - 1))))`.
pub fn q_upper_bound(model: &GModel, nbar_r: f64, lambda: f64, n: usize) -> Result<f64> {
    check_rate_inputs(lambda, n)?;
    Ok(model.eval_clamped(nbar_r / (lambda * (n as f64 - 1.0))))
}

/// `G(min(1, gamma nbar_r / (lambda n))) / 2`, valid when the median reach
/// is at least `gamma` times the mean reach.
pub fn q_lower_bound(model: &GModel, nbar_r: f64, lambda: f64, n: usize) -> Result<f64> {
    check_rate_inputs(lambda, n)?;
    Ok(0.5 * model.eval_clamped(model.gamma * nbar_r / (lambda * n as f64)))
}

/// Success probability when only a fraction `theta` of slots carry RDP
/// traffic: the offered RDP load is compressed into those slots.
pub fn slotted_qprime(q_fn: impl Fn(f64) -> f64, lambda: f64, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return domain(format!("theta must lie in (0, 1), got {theta}"));
    }
    Ok(q_fn(lambda / theta))
}

pub fn expected_attempts(q: f64) -> Result<f64> {
    if q.is_nan() || q > 1.0 {
        return domain(format!("success probability must be in (0, 1], got {q}"));
    }
    if q <= 0.0 {
        return Err(Error::Divergent("route is never found when q = 0".into()));
    }
    Ok(1.0 / q)
}

const BRACKET_PROBES: usize = 257;
const MAX_BISECTIONS: usize = 200;

/// Solve `lambda = n nu / (1 + q'(lambda) tau nu)` by bisection on
/// `[n nu / (1 + tau nu), n nu]`.
///
/// `q'` must be nonincreasing with values in `[0, 1]`; it is probed on the
/// bracket first and rejected if it rises.
pub fn solve_lambda(n: usize, nu: f64, tau: f64, q_prime_fn: impl Fn(f64) -> f64) -> Result<f64> {
    if n == 0 {
        return domain("n must be positive");
    }
    if !(0.0..=1.0).contains(&nu) {
        return domain(format!("nu must lie in [0, 1], got {nu}"));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return domain(format!("tau must be finite and nonnegative, got {tau}"));
    }
    let scale = n as f64 * nu;
    if scale == 0.0 {
        return Ok(0.0);
    }
    let fixed = |lambda: f64| scale / (1.0 + q_prime_fn(lambda) * tau * nu);
    let mut lo = scale / (1.0 + tau * nu);
    let mut hi = scale;

    let mut prev: Option<(f64, f64)> = None;
    for i in 0..BRACKET_PROBES {
        let x = lo + (hi - lo) * i as f64 / (BRACKET_PROBES - 1) as f64;
        let q = q_prime_fn(x);
        if !(0.0..=1.0).contains(&q) {
            return domain(format!("q'({x}) = {q} is outside [0, 1]"));
        }
        if let Some((px, pq)) = prev {
            if q > pq + 1e-12 {
                return Err(Error::NonMonotone {
                    lo: px,
                    hi: x,
                    q_lo: pq,
                    q_hi: q,
                });
            }
        }
        prev = Some((x, q));
    }

    // h(lambda) = lambda - F(lambda) is <= 0 at lo and >= 0 at hi.
    let h = |x: f64| x - fixed(x);
    if h(lo) >= 0.0 {
        return Ok(lo);
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * scale {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Expected N-state duration in slots: `1 / (nu q')`.
pub fn xi_from_rates(nu: f64, q_prime: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Divergent(format!("no RDP is ever initiated when nu = {nu}")));
    }
    if !(q_prime > 0.0) {
        return Err(Error::Divergent("xi is infinite when q' = 0".into()));
    }
    if q_prime > 1.0 {
        return domain(format!("q' must be at most 1, got {q_prime}"));
    }
    Ok(1.0 / (nu * q_prime))
}

/// Reference dormancy curve `1 / G(1/n)`.
pub fn xi_reference(model: &GModel, n: usize) -> Result<f64> {
    if n < 2 {
        return domain(format!("need n >= 2, got {n}"));
    }
    let g = model.eval_clamped(1.0 / n as f64);
    if g <= 0.0 {
        return Err(Error::Divergent(format!("G(1/{n}) = 0")));
    }
    Ok(1.0 / g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdpRates {
    pub lambda: f64,
    pub q: f64,
    pub q_prime: f64,
    pub n_avg: f64,
    pub xi: f64,
}

/// Steady-state rates under the RDP/data time split, given the success probability
/// `q_fn(lambda)` of the network with every slot devoted to RDP.
pub fn rdp_rates(n: usize, nu: f64, tau: f64, theta: f64, q_fn: impl Fn(f64) -> f64) -> Result<RdpRates> {
    let q_prime_fn = |l: f64| slotted_qprime(&q_fn, l, theta).unwrap_or(0.0);
    slotted_qprime(&q_fn, 1.0, theta)?;
    let lambda = solve_lambda(n, nu, tau, q_prime_fn)?;
    let q_prime = slotted_qprime(&q_fn, lambda, theta)?;
    Ok(RdpRates {
        lambda,
        q: q_fn(lambda),
        q_prime,
        n_avg: expected_attempts(q_prime)?,
        xi: xi_from_rates(nu, q_prime)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn g_eval_examples() {
        assert_eq!(GModel::identity().eval(0.3).unwrap(), 0.3);
        for m in [
            GModel::identity(),
            GModel::k_target(3.7),
            GModel::step_repair(),
            GModel::table(vec![(0.0, 0.0), (0.2, 0.5), (1.0, 1.0)]),
        ] {
            assert_relative_eq!(m.eval(1.0).unwrap(), 1.0);
        }
        assert_relative_eq!(GModel::k_target(2.0).eval(0.5).unwrap(), 0.75);
        assert!(matches!(GModel::identity().eval(1.5), Err(Error::Domain(_))));
        assert!(matches!(GModel::identity().eval(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn k_target_matches_two_target_enumeration() {
        // P(at least one of two independent targets lies in the reached set)
        let f: f64 = 0.5;
        let miss_both = (1.0 - f) * (1.0 - f);
        assert_relative_eq!(GModel::k_target(2.0).eval(f).unwrap(), 1.0 - miss_both);
    }

    #[test]
    fn validation_accepts_and_rejects() {
        assert!(validate_gmodel(&GModel::identity()).is_ok());
        assert!(validate_gmodel(&GModel::step_repair()).is_ok());
        assert!(validate_gmodel(&GModel::k_target(4.0)).is_ok());

        let v = validate_gmodel(&GModel::k_target(0.5)).unwrap_err();
        assert!(v.iter().any(|v| matches!(v, Violation::BelowDiagonal { .. })));

        let v = validate_gmodel(&GModel::table(vec![(0.0, 0.0), (0.5, 0.4), (1.0, 1.0)])).unwrap_err();
        assert!(v
            .iter()
            .any(|v| matches!(v, Violation::BelowDiagonal { f, .. } if *f > 0.0 && *f <= 0.5)));

        let v = validate_gmodel(&GModel::table(vec![(0.0, 0.1), (1.0, 0.9)])).unwrap_err();
        assert!(v.contains(&Violation::NotZeroAtZero(0.1)));
    }

    #[test]
    fn bound_examples() {
        let g = GModel::identity();
        assert_relative_eq!(q_upper_bound(&g, 50.0, 1.0, 101).unwrap(), 0.5);
        assert_relative_eq!(q_upper_bound(&g, 500.0, 1.0, 101).unwrap(), 1.0);
        assert_relative_eq!(q_lower_bound(&g, 50.0, 1.0, 100).unwrap(), 0.25);
        assert_eq!(q_lower_bound(&g.clone().with_gamma(0.0), 50.0, 1.0, 100).unwrap(), 0.0);
        assert!(q_upper_bound(&g, 50.0, 0.0, 101).is_err());
        assert!(q_lower_bound(&g, 50.0, -1.0, 101).is_err());
    }

    #[test]
    fn upper_bound_nonincreasing_in_lambda() {
        let g = GModel::k_target(3.0);
        let mut prev = 1.0;
        for i in 1..200 {
            let q = q_upper_bound(&g, 20.0, i as f64 * 0.1, 64).unwrap();
            assert!(q <= prev + 1e-15);
            prev = q;
        }
    }

    #[test]
    fn bound_sandwich_on_random_draws() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let models = [
            GModel::identity(),
            GModel::k_target(5.0),
            GModel::step_repair(),
            GModel::table(vec![(0.0, 0.0), (0.1, 0.4), (1.0, 1.0)]),
        ];
        for i in 0..1000 {
            let g = models[i % models.len()].clone().with_gamma(rng.gen_range(0.01..=1.0));
            let n = rng.gen_range(2..100_000);
            let lambda = rng.gen_range(1e-3..1e3);
            let nbar = rng.gen_range(0.0..n as f64);
            let lb = q_lower_bound(&g, nbar, lambda, n).unwrap();
            let ub = q_upper_bound(&g, nbar, lambda, n).unwrap();
            assert!(lb <= ub + 1e-15, "{g:?} n={n} lambda={lambda} nbar={nbar}");
        }
    }

    #[test]
    fn slotted_qprime_examples() {
        assert_eq!(slotted_qprime(|_| 0.8, 3.0, 0.5).unwrap(), 0.8);
        let q = |x: f64| (1.0 / x).min(1.0);
        assert_relative_eq!(slotted_qprime(q, 1.0, 0.5).unwrap(), 0.5);
        assert!(slotted_qprime(q, 1.0, 1.0).is_err());
        assert!(slotted_qprime(q, 1.0, 0.0).is_err());
        for l in [0.1, 1.0, 3.0, 40.0] {
            assert!(slotted_qprime(q, l, 0.3).unwrap() <= q(l));
        }
    }

    #[test]
    fn expected_attempts_examples() {
        assert_eq!(expected_attempts(1.0).unwrap(), 1.0);
        assert_eq!(expected_attempts(0.25).unwrap(), 4.0);
        assert!(matches!(expected_attempts(0.0), Err(Error::Divergent(_))));
    }

    #[test]
    fn geometric_attempts_monte_carlo() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let trials = 1_000_000;
        let mut total = 0u64;
        for _ in 0..trials {
            let mut k = 1;
            while !rng.gen_bool(0.25) {
                k += 1;
            }
            total += k;
        }
        let mean = total as f64 / trials as f64;
        assert!((mean - 4.0).abs() / 4.0 < 0.01, "mean {mean}");
    }

    #[test]
    fn solve_lambda_examples() {
        assert_relative_eq!(
            solve_lambda(100, 1.0, 10.0, |_| 0.0).unwrap(),
            100.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            solve_lambda(100, 1.0, 10.0, |_| 0.5).unwrap(),
            100.0 / 6.0,
            max_relative = 1e-9
        );
        let lambda = solve_lambda(100, 1.0, 10.0, |l: f64| (10.0 / l).min(1.0)).unwrap();
        let residual = lambda - 100.0 / (1.0 + (10.0 / lambda).min(1.0) * 10.0);
        assert!(residual.abs() < 1e-9 * 100.0);
    }

    #[test]
    fn solve_lambda_grid_oracle() {
        // Exhaustive scan of |lambda - F(lambda)| on a 1e-6 grid.
        let q = |l: f64| (10.0 / l).min(1.0);
        let f = |l: f64| 100.0 / (1.0 + q(l) * 10.0);
        let (lo, hi) = (100.0 / 11.0, 100.0);
        let steps = ((hi - lo) / 1e-6) as usize;
        let mut best = (f64::INFINITY, lo);
        for i in 0..=steps {
            let l = lo + i as f64 * 1e-6;
            let r = (l - f(l)).abs();
            if r < best.0 {
                best = (r, l);
            }
        }
        let solved = solve_lambda(100, 1.0, 10.0, q).unwrap();
        assert_relative_eq!(solved, best.1, max_relative = 1e-5);
    }

    #[test]
    fn solve_lambda_rejects_increasing_q() {
        let r = solve_lambda(100, 0.5, 4.0, |l: f64| (l / 100.0).min(1.0));
        assert!(matches!(r, Err(Error::NonMonotone { .. })));
    }

    #[test]
    fn lambda_monotone_in_nu_and_tau() {
        let q = |l: f64| (5.0 / l).min(1.0);
        for (n, nu, tau) in [(100, 0.2, 5.0), (1000, 0.05, 20.0), (50, 0.9, 1.0)] {
            let base = solve_lambda(n, nu, tau, q).unwrap();
            assert!(solve_lambda(n, nu * 1.01, tau, q).unwrap() >= base);
            assert!(solve_lambda(n, nu, tau * 1.01, q).unwrap() <= base);
        }
    }

    #[test]
    fn xi_examples() {
        assert_eq!(xi_from_rates(1.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(xi_from_rates(0.1, 0.5).unwrap(), 20.0, max_relative = 1e-12);
        assert!(matches!(xi_from_rates(0.1, 0.0), Err(Error::Divergent(_))));
    }

    #[test]
    fn xi_matches_simulated_dormancy() {
        // Each slot: attempt with probability nu, succeed with probability q'.
        let (nu, qp) = (0.2, 0.3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let trials = 100_000;
        let mut total = 0u64;
        for _ in 0..trials {
            let mut slots = 0u64;
            loop {
                slots += 1;
                if rng.gen_bool(nu) && rng.gen_bool(qp) {
                    break;
                }
            }
            total += slots;
        }
        let mean = total as f64 / trials as f64;
        let xi = xi_from_rates(nu, qp).unwrap();
        assert!((mean - xi).abs() / xi < 0.02, "mean {mean} vs {xi}");
    }

    #[test]
    fn xi_reference_examples() {
        assert_relative_eq!(
            xi_reference(&GModel::identity(), 100).unwrap(),
            100.0,
            max_relative = 1e-12
        );
        assert_eq!(xi_reference(&GModel::step_repair(), 12345).unwrap(), 1.0);
        let g = GSpec::KTargetSqrt { coeff: 1.0 }.at(10_000);
        let expect = 1.0 / (1.0 - (1.0f64 - 1e-4).powf(100.0));
        assert_relative_eq!(xi_reference(&g, 10_000).unwrap(), expect, max_relative = 1e-12);
        assert!((expect - 100.5).abs() < 0.01);
        assert!(xi_reference(&GModel::identity(), 1).is_err());
    }

    #[test]
    fn rates_closure_is_self_consistent() {
        let q = |l: f64| GModel::identity().eval_clamped(30.0 / l);
        let r = rdp_rates(500, 0.05, 8.0, 0.4, q).unwrap();
        assert!(r.q_prime <= r.q + 1e-15);
        let qp = slotted_qprime(q, r.lambda, 0.4).unwrap();
        let xi = xi_from_rates(0.05, qp).unwrap();
        assert!((xi - r.xi).abs() / r.xi < 1e-6);
        assert_relative_eq!(r.n_avg, 1.0 / r.q_prime);
        let lambda_again = 500.0 * 0.05 / (1.0 + r.q_prime * 8.0 * 0.05);
        assert!((lambda_again - r.lambda).abs() / r.lambda < 1e-6);
    }

    #[test]
    fn gspec_round_trips_through_text() {
        for s in [
            "identity",
            "step_repair",
            "k_target:2.5",
            "k_target_sqrt:1",
            "table:0=0;0.5=0.7;1=1",
        ] {
            let g = GSpec::parse(s).unwrap();
            assert_eq!(GSpec::parse(&g.to_string()).unwrap(), g);
        }
        assert!(GSpec::parse("k_target").is_err());
        assert!(GSpec::parse("banana").is_err());
    }

    proptest! {
        #[test]
        fn valid_models_stay_above_diagonal(k in 1.0f64..50.0, f in 0.0f64..=1.0) {
            let g = GModel::k_target(k).eval(f).unwrap();
            prop_assert!(g >= f - 1e-12);
            prop_assert!((0.0..=1.0).contains(&g));
        }

        #[test]
        fn fixed_point_stays_in_bracket(n in 2usize..5000, nu in 0.001f64..1.0, tau in 0.0f64..100.0, c in 0.0f64..1.0) {
            let q = move |l: f64| (c / (1.0 + l)).min(1.0);
            let lambda = solve_lambda(n, nu, tau, q).unwrap();
            let scale = n as f64 * nu;
            prop_assert!(lambda >= scale / (1.0 + tau * nu) - 1e-9 * scale);
            prop_assert!(lambda <= scale * (1.0 + 1e-12));
            let residual = lambda - scale / (1.0 + q(lambda) * tau * nu);
            prop_assert!(residual.abs() < 1e-9 * scale);
        }
    }
}
