//! Reference throughput curves, regime classification and log-log fits.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::TauModel;
use crate::error::{domain, Error, Result};
use crate::rdp_analysis::GSpec;

/// Default slope threshold separating a decaying `lhs / rhs` from a flat one.
pub const REGIME_THRESHOLD: f64 = -0.1;
/// Default max/min ratio accepted as "same order".
pub const THETA_FACTOR: f64 = 4.0;

/// Throughput ceiling from dormancy: `w tau / xi`.
pub fn dormancy_bound(w: f64, tau: f64, xi: f64) -> Result<f64> {
    if !(xi > 0.0) {
        return domain(format!("xi must be positive, got {xi}"));
    }
    Ok(w * tau / xi)
}

/// Throughput ceiling from spatial reuse: `w / sqrt(n ln n)`.
pub fn interference_bound(w: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return domain(format!("need n >= 2, got {n}"));
    }
    let n = n as f64;
    Ok(w / (n * n.ln()).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope; zero for two points or an exact fit.
    pub slope_stderr: f64,
    pub points: Vec<(f64, f64)>,
}

impl ScalingFit {
    /// Two-sided confidence interval of the slope.
    pub fn slope_ci(&self, level: f64) -> (f64, f64) {
        let dof = self.points.len() as f64 - 2.0;
        if dof < 1.0 || self.slope_stderr == 0.0 {
            return (self.slope, self.slope);
        }
        let t = StudentsT::new(0.0, 1.0, dof)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.5 + level / 2.0);
        (self.slope - t * self.slope_stderr, self.slope + t * self.slope_stderr)
    }

    pub fn predict(&self, n: f64) -> f64 {
        (self.intercept + self.slope * n.ln()).exp()
    }
}

/// Ordinary least squares of `ln value` on `ln n`.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return domain(format!("a fit needs at least 3 points, got {}", points.len()));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.0 > 0.0 && p.1 > 0.0) || !p.0.is_finite() || !p.1.is_finite())
    {
        return domain(format!(
            "fit points must be finite and positive, got ({}, {})",
            p.0, p.1
        ));
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return domain("fit needs at least two distinct n");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    let slope_stderr = if k > 2.0 { (sse / (k - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
        slope_stderr,
        points: points.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaCheck {
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max_ratio / min_ratio`.
    pub spread: f64,
    pub factor: f64,
    pub consistent: bool,
}

/// Ratio spread of `points` against `reference` on the same n grid.
pub fn check_theta(points: &[(f64, f64)], reference: &[(f64, f64)], factor: f64) -> Result<ThetaCheck> {
    if points.is_empty() {
        return domain("no points to compare");
    }
    if points.len() != reference.len() || points.iter().zip(reference).any(|(p, r)| p.0 != r.0) {
        return domain("points and reference curve are on different n grids");
    }
    let mut ratios = Vec::with_capacity(points.len());
    for (p, r) in points.iter().zip(reference) {
        if !(p.1 > 0.0 && r.1 > 0.0) || !p.1.is_finite() || !r.1.is_finite() {
            return domain(format!("nonpositive value at n = {}", p.0));
        }
        ratios.push(p.1 / r.1);
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let spread = max_ratio / min_ratio;
    Ok(ThetaCheck {
        ratios,
        min_ratio,
        max_ratio,
        spread,
        factor,
        consistent: spread < factor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    RdpLimited,
    InterferenceLimited,
    /// The slope's 95% interval straddles the threshold.
    Indeterminate,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::RdpLimited => "rdp_limited",
            Regime::InterferenceLimited => "interference_limited",
            Regime::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeVerdict {
    pub regime: Regime,
    pub n_probe: Vec<usize>,
    /// `tau(n) G(1/n)` at each probe.
    pub lhs: Vec<f64>,
    /// `1 / sqrt(n ln n)` at each probe.
    pub rhs: Vec<f64>,
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub threshold: f64,
    /// Reference throughput per probe with `w = 1`, up to a constant.
    pub predicted_curve: Vec<(usize, f64)>,
}

impl RegimeVerdict {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "lhs", "rhs", "predicted"])?;
        for i in 0..self.n_probe.len() {
            w.write_record([
                self.n_probe[i].to_string(),
                self.lhs[i].to_string(),
                self.rhs[i].to_string(),
                self.predicted_curve[i].1.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reference throughput shape for a regime: `tau G(1/n)` when discovery
/// dominates, `1 / sqrt(n ln n)` otherwise, and the smaller of the two when
/// undecided.
pub fn predicted_throughput(regime: Regime, tau: &TauModel, g: &GSpec, n: usize) -> Result<f64> {
    let lhs = tau.at(n) * g.at(n).eval_clamped(1.0 / n as f64);
    let rhs = interference_bound(1.0, n)?;
    Ok(match regime {
        Regime::RdpLimited => lhs,
        Regime::InterferenceLimited => rhs,
        Regime::Indeterminate => lhs.min(rhs),
    })
}

/// Decide which ceiling governs from the trend of `tau(n) G(1/n)` relative
/// to `1 / sqrt(n ln n)` over `n_probe`.
pub fn classify_regime(tau: &TauModel, g: &GSpec, n_probe: &[usize], threshold: f64) -> Result<RegimeVerdict> {
    if n_probe.len() < 4 {
        return Err(Error::Domain(format!(
            "classification needs at least 4 probe sizes, got {}",
            n_probe.len()
        )));
    }
    let (lo, hi) = (*n_probe.iter().min().unwrap(), *n_probe.iter().max().unwrap());
    if lo < 2 || (hi as f64) < 100.0 * lo as f64 {
        return domain(format!("probe sizes must be >= 2 and span two decades, got {lo}..{hi}"));
    }
    let mut lhs = Vec::with_capacity(n_probe.len());
    let mut rhs = Vec::with_capacity(n_probe.len());
    let mut ratio = Vec::with_capacity(n_probe.len());
    for &n in n_probe {
        let l = tau.at(n) * g.at(n).eval_clamped(1.0 / n as f64);
        let r = interference_bound(1.0, n)?;
        if !(l > 0.0) {
            return Err(Error::Divergent(format!("tau(n) G(1/n) vanishes at n = {n}")));
        }
        lhs.push(l);
        rhs.push(r);
        ratio.push((n as f64, l / r));
    }
    let fit = fit_exponent(&ratio)?;
    let ci = fit.slope_ci(0.95);
    let regime = if ci.1 < threshold {
        Regime::RdpLimited
    } else if ci.0 >= threshold {
        Regime::InterferenceLimited
    } else {
        Regime::Indeterminate
    };
    let predicted_curve = n_probe
        .iter()
        .map(|&n| Ok((n, predicted_throughput(regime, tau, g, n)?)))
        .collect::<Result<_>>()?;
    Ok(RegimeVerdict {
        regime,
        n_probe: n_probe.to_vec(),
        lhs,
        rhs,
        slope: fit.slope,
        slope_ci: ci,
        threshold,
        predicted_curve,
    })
}

/// `count` sizes spaced geometrically over `[lo, hi]`, deduplicated.
pub fn geometric_probes(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let count = count.max(2);
    let (a, b) = ((lo.max(2) as f64).ln(), (hi.max(lo.max(2)) as f64).ln());
    let mut v: Vec<usize> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn curve(f: impl Fn(f64) -> f64, ns: &[f64]) -> Vec<(f64, f64)> {
        ns.iter().map(|&n| (n, f(n))).collect()
    }

    #[test]
    fn bounds() {
        assert_relative_eq!(dormancy_bound(1.0, 1.0, 100.0).unwrap(), 0.01);
        assert_eq!(dormancy_bound(3.0, 7.0, 7.0).unwrap(), 3.0);
        assert!(dormancy_bound(1.0, 1.0, 0.0).is_err());
        // identity G: xi = 1 / G(1/n) = n.
        for n in [10usize, 1000] {
            assert_relative_eq!(dormancy_bound(2.0, 5.0, n as f64).unwrap(), 10.0 / n as f64);
        }
        assert_relative_eq!(interference_bound(1.0, 100).unwrap(), 0.046_599, max_relative = 1e-4);
        assert!(interference_bound(1.0, 1).is_err());
        let ratio = interference_bound(1.0, 400).unwrap() / interference_bound(1.0, 100).unwrap();
        assert_relative_eq!(ratio, 0.5 * (100f64.ln() / 400f64.ln()).sqrt(), max_relative = 1e-12);
        assert!(interference_bound(1.0, 400).unwrap() < interference_bound(1.0, 100).unwrap());
    }

    #[test]
    fn fit_recovers_power_laws() {
        let f = fit_exponent(&curve(|n| 5.0 / n, &[10.0, 100.0, 1000.0])).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.intercept - 5f64.ln()).abs() < 1e-9);
        let f = fit_exponent(&curve(|n| 3.0 / n.sqrt(), &[16.0, 64.0, 256.0, 4096.0])).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-9);
        let ns: Vec<f64> = (0..=12).map(|i| 10f64.powf(2.0 + i as f64 / 4.0)).collect();
        let f = fit_exponent(&curve(|n| 1.0 / (n * n.ln()).sqrt(), &ns)).unwrap();
        assert!(f.slope > -0.62 && f.slope < -0.52, "{}", f.slope);
    }

    #[test]
    fn fit_rejects_bad_points() {
        assert!(fit_exponent(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_exponent(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_exponent(&[(2.0, 1.0), (2.0, 2.0), (2.0, 3.0)]).is_err());
    }

    #[test]
    fn theta_check() {
        let ns = [256.0, 1024.0, 4096.0];
        let reference = curve(|n| 1.0 / n, &ns);
        let c = check_theta(&reference, &reference, THETA_FACTOR).unwrap();
        assert_eq!(c.spread, 1.0);
        let doubled = curve(|n| 2.0 / n, &ns);
        assert!((check_theta(&doubled, &reference, 4.0).unwrap().spread - 1.0).abs() < 1e-12);
        let slower = curve(|n| 1.0 / n.sqrt(), &ns);
        let c = check_theta(&slower, &reference, 4.0).unwrap();
        assert!((c.spread - 4.0).abs() < 1e-9 && !c.consistent);
        assert!(check_theta(&doubled[..2], &reference, 4.0).is_err());
        let shifted = curve(|n| 1.0 / n, &[256.0, 1024.0, 4097.0]);
        assert!(check_theta(&shifted, &reference, 4.0).is_err());
    }

    #[test]
    fn classifies_the_three_examples() {
        let probes = geometric_probes(100, 100_000, 8);
        let ex1 = classify_regime(
            &TauModel::Constant { value: 10.0 },
            &GSpec::Identity,
            &probes,
            REGIME_THRESHOLD,
        )
        .unwrap();
        let ex2 = classify_regime(
            &TauModel::InvSqrt { coeff: 100.0 },
            &GSpec::KTargetSqrt { coeff: 1.0 },
            &probes,
            REGIME_THRESHOLD,
        )
        .unwrap();
        let ex3 = classify_regime(
            &TauModel::InvSqrt { coeff: 100.0 },
            &GSpec::StepRepair,
            &probes,
            REGIME_THRESHOLD,
        )
        .unwrap();
        assert_eq!(ex1.regime, Regime::RdpLimited);
        assert_eq!(ex2.regime, Regime::RdpLimited);
        assert_eq!(ex3.regime, Regime::InterferenceLimited);
        // Predicted shapes: 1/n, 1/n, 1/sqrt(n ln n).
        let slope = |v: &RegimeVerdict| {
            let pts: Vec<(f64, f64)> = v.predicted_curve.iter().map(|&(n, y)| (n as f64, y)).collect();
            fit_exponent(&pts).unwrap().slope
        };
        assert!((slope(&ex1) + 1.0).abs() < 1e-9);
        assert!((slope(&ex2) + 1.0).abs() < 0.01);
        assert!(slope(&ex3) < -0.5 && slope(&ex3) > -0.62);
    }

    #[test]
    fn classification_needs_enough_probes() {
        let t = TauModel::Constant { value: 1.0 };
        assert!(classify_regime(&t, &GSpec::Identity, &[100, 1000, 10_000], -0.1).is_err());
        assert!(classify_regime(&t, &GSpec::Identity, &[100, 200, 400, 800], -0.1).is_err());
    }

    #[test]
    fn borderline_trend_is_indeterminate() {
        // lhs / rhs = n^-0.1 times a factor-3 wobble: the interval straddles.
        let ns = [100usize, 1000, 10_000, 100_000];
        let points = ns
            .iter()
            .zip([1.0, 3.0, 1.0, 3.0])
            .map(|(&n, w)| {
                (
                    n as f64,
                    w * (n as f64).powf(-0.1) * interference_bound(1.0, n).unwrap(),
                )
            })
            .collect();
        let tau = TauModel::Table { points };
        let v = classify_regime(&tau, &GSpec::StepRepair, &ns, -0.1).unwrap();
        assert_eq!(v.regime, Regime::Indeterminate, "slope {} ci {:?}", v.slope, v.slope_ci);
    }

    proptest! {
        #[test]
        fn fit_is_exact_on_power_laws(a in 0.01f64..100.0, b in -2.0f64..2.0) {
            let f = fit_exponent(&curve(|n| a * n.powf(b), &[10.0, 50.0, 300.0, 7000.0])).unwrap();
            prop_assert!((f.slope - b).abs() < 1e-9);
            prop_assert!(f.r_squared > 1.0 - 1e-9 && f.r_squared <= 1.0);
        }

        #[test]
        fn theta_check_is_scale_invariant(k in 1e-6f64..1e6, e in -1.5f64..0.0) {
            let ns = [256.0, 1024.0, 4096.0, 16384.0];
            let pts = curve(|n| n.powf(e), &ns);
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(n, y)| (n, k * y)).collect();
            let reference = curve(|n| 1.0 / n, &ns);
            let a = check_theta(&pts, &reference, 4.0).unwrap().spread;
            let b = check_theta(&scaled, &reference, 4.0).unwrap().spread;
            prop_assert!((a - b).abs() <= 1e-9 * a);
        }
    }
}
