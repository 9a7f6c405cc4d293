//! Optimal thresholds for the signal-aware and age-based sampling policies.
//!
//! Both policies wait, after each delivery, until a threshold is crossed.
//! The threshold `beta` balances the mean inter-sample time against the
//! rate limit:
//!
//! ```text
//! signal:  g1(beta) = max(1/fmax, g2(beta) / (2 beta)),  mse = g2 / (6 g1) + E[Y]
//! age:     h1(beta) = max(1/fmax, h2(beta) / (2 beta)),  mse = h2 / (2 h1) + E[Y]
//! ```
//!
//! with `g*`, `h*` from [`crate::moments`]. The residual
//! `F(beta) = lhs - max(1/fmax, rhs)` is negative near zero (the ratio
//! `rhs` diverges like `E[W_Y^4] / (2 beta)`) and positive for large
//! `beta`; it changes sign exactly once, so a geometric bracket followed by
//! bisection finds the root.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::moments::{functionals_age, functionals_signal};
use crate::service::{parse_f64, ServiceDistribution};

/// Relative residual accepted at the returned root.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Relative width at which bisection stops.
pub const BISECTION_REL_WIDTH: f64 = 1e-12;
const BRACKET_START: f64 = 1e-12;
const BRACKET_CAP: f64 = 18_446_744_073_709_551_616.0; // 2^64

/// Upper bound on the long-run sampling rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateLimit {
    Finite(f64),
    Unbounded,
}

impl RateLimit {
    pub fn finite(fmax: f64) -> Result<Self> {
        if fmax.is_finite() && fmax > 0.0 {
            Ok(RateLimit::Finite(fmax))
        } else if fmax == f64::INFINITY {
            Ok(RateLimit::Unbounded)
        } else {
            Err(Error::parse(fmax.to_string(), "rate limit must be > 0 or inf"))
        }
    }

    /// Minimum admissible mean inter-sample time, `1/fmax` (zero when unbounded).
    pub fn min_interval(self) -> f64 {
        match self {
            RateLimit::Finite(f) => 1.0 / f,
            RateLimit::Unbounded => 0.0,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            RateLimit::Finite(f) => f,
            RateLimit::Unbounded => f64::INFINITY,
        }
    }
}

impl fmt::Display for RateLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateLimit::Finite(v) => write!(f, "{v}"),
            RateLimit::Unbounded => f.write_str("inf"),
        }
    }
}

impl FromStr for RateLimit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "Inf" => Ok(RateLimit::Unbounded),
            other => {
                let v = parse_f64(other)?;
                RateLimit::finite(v).map_err(|_| Error::parse(other, "rate limit must be > 0 or inf"))
            }
        }
    }
}

impl Serialize for RateLimit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

/// Which threshold problem was solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Threshold on the signal difference `|W_t - W_{S_i}|`.
    Signal,
    /// Threshold on the elapsed time `t - S_i`.
    Age,
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "signal" => Ok(PolicyKind::Signal),
            "age" => Ok(PolicyKind::Age),
            other => Err(Error::parse(other, "expected `signal` or `age`")),
        }
    }
}

/// A solved threshold and the optimal value it attains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdSolution {
    pub policy_kind: PolicyKind,
    /// `beta`; the signal policy compares `|W_t - W_{S_i}|` with `sqrt(beta)`.
    pub beta: f64,
    pub mse: f64,
    /// Mean inter-sample time `E[Y + Z]`.
    pub expected_interval: f64,
    pub rate_constraint_binding: bool,
    pub fmax: RateLimit,
    /// `|F(beta)|` at the returned root.
    pub residual: f64,
}

/// The two sides of a threshold equation at one `beta`.
#[derive(Debug, Clone, Copy)]
struct Sides {
    lhs: f64,
    rhs: f64,
    second: f64,
}

fn sides(kind: PolicyKind, beta: f64, dist: &ServiceDistribution) -> Result<Sides> {
    let (first, second) = match kind {
        PolicyKind::Signal => functionals_signal(beta, dist)?,
        PolicyKind::Age => functionals_age(beta, dist)?,
    };
    Ok(Sides {
        lhs: first,
        rhs: second / (2.0 * beta),
        second,
    })
}

/// `F(beta) = lhs(beta) - max(1/fmax, rhs(beta))`.
pub fn residual(kind: PolicyKind, beta: f64, dist: &ServiceDistribution, fmax: RateLimit) -> Result<f64> {
    let s = sides(kind, beta, dist)?;
    Ok(s.lhs - fmax.min_interval().max(s.rhs))
}

fn validate_inputs(dist: &ServiceDistribution) -> Result<()> {
    dist.validate()?;
    if !dist.second_moment().is_finite() {
        return Err(Error::InvalidDistribution("E[Y^2] must be finite".into()));
    }
    Ok(())
}

fn solve(kind: PolicyKind, dist: &ServiceDistribution, fmax: RateLimit) -> Result<ThresholdSolution> {
    validate_inputs(dist)?;
    let mean = dist.mean();
    let value_factor = match kind {
        PolicyKind::Signal => 6.0,
        PolicyKind::Age => 2.0,
    };

    if dist.is_zero() {
        // Y = 0: lhs = beta and rhs = beta / 2, so the root is beta = 1/fmax.
        let beta = fmax.min_interval();
        return Ok(ThresholdSolution {
            policy_kind: kind,
            beta,
            mse: beta / value_factor,
            expected_interval: beta,
            rate_constraint_binding: matches!(fmax, RateLimit::Finite(_)),
            fmax,
            residual: 0.0,
        });
    }

    let f = |beta: f64| residual(kind, beta, dist, fmax);

    let mut lo = BRACKET_START;
    let mut f_lo = f(lo)?;
    while f_lo >= 0.0 {
        if lo < 1e-300 {
            return Err(Error::NoConvergence(
                "residual is nonnegative at every tested threshold near zero".into(),
            ));
        }
        lo *= 1e-4;
        f_lo = f(lo)?;
    }
    let mut hi = lo.max(1.0);
    if hi == lo {
        hi = 2.0 * lo;
    }
    let mut f_hi = f(hi)?;
    while f_hi < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > BRACKET_CAP {
            return Err(Error::NoConvergence(format!(
                "no sign change of the residual below {BRACKET_CAP:e}"
            )));
        }
        f_hi = f(hi)?;
    }

    for _ in 0..400 {
        if hi - lo <= BISECTION_REL_WIDTH * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // Report whichever endpoint has the smaller residual.
    let (r_lo, r_hi) = (f(lo)?.abs(), f(hi)?.abs());
    let beta = if r_lo < r_hi { lo } else { hi };
    let s = sides(kind, beta, dist)?;
    let res = (s.lhs - fmax.min_interval().max(s.rhs)).abs();
    if res > RESIDUAL_TOL * s.lhs.max(1.0) {
        return Err(Error::NoConvergence(format!(
            "residual {res:e} at beta = {beta} exceeds tolerance"
        )));
    }
    let binding = match fmax {
        RateLimit::Finite(_) => fmax.min_interval() >= s.rhs,
        RateLimit::Unbounded => false,
    };
    Ok(ThresholdSolution {
        policy_kind: kind,
        beta,
        mse: s.second / (value_factor * s.lhs) + mean,
        expected_interval: s.lhs,
        rate_constraint_binding: binding,
        fmax,
        residual: res,
    })
}

/// Threshold and optimal MSE of the signal-aware policy.
pub fn solve_signal_threshold(dist: &ServiceDistribution, fmax: RateLimit) -> Result<ThresholdSolution> {
    solve(PolicyKind::Signal, dist, fmax)
}

/// Threshold and optimal time-average age of the age-based policy.
pub fn solve_age_threshold(dist: &ServiceDistribution, fmax: RateLimit) -> Result<ThresholdSolution> {
    solve(PolicyKind::Age, dist, fmax)
}

pub fn solve_threshold(
    kind: PolicyKind,
    dist: &ServiceDistribution,
    fmax: RateLimit,
) -> Result<ThresholdSolution> {
    solve(kind, dist, fmax)
}

/// Whether sampling at every delivery minimizes the MSE with no rate limit:
/// only when the service time is identically zero.
pub fn zero_wait_mse_optimal(dist: &ServiceDistribution) -> bool {
    dist.is_zero()
}

/// Whether sampling at every delivery minimizes the age with no rate limit:
/// `E[Y^2] <= 2 ess_inf(Y) E[Y]`.
pub fn zero_wait_age_optimal(dist: &ServiceDistribution) -> bool {
    dist.second_moment() <= 2.0 * dist.ess_inf() * dist.mean()
}

/// `mse_signal / mse_age` at a given rate limit; tends to 1/3 as the limit
/// goes to zero.
pub fn asymptotic_ratio_check(dist: &ServiceDistribution, fmax_small: RateLimit) -> Result<f64> {
    let signal = solve_signal_threshold(dist, fmax_small)?;
    let age = solve_age_threshold(dist, fmax_small)?;
    Ok(signal.mse / age.mse)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp1() -> ServiceDistribution {
        ServiceDistribution::exponential(1.0).unwrap()
    }

    // Frozen from an independent high-precision run: closed-form Laplace
    // functionals, geometric sign-change scan, then root polishing.
    const EXP1_SIGNAL_BETA: f64 = 1.898_123_152_551_874;
    const EXP1_SIGNAL_MSE: f64 = 1.632_707_717_517_291;
    const EXP1_AGE_BETA: f64 = 0.901_201_031_729_666_1;

    /// Dense geometric scan of the residual: returns every bracket with a
    /// sign change and the bisected root of the first one.
    fn scan_oracle(kind: PolicyKind, dist: &ServiceDistribution, fmax: RateLimit) -> (f64, usize, f64) {
        let n = 3000;
        let (a, b): (f64, f64) = (1e-6, 1e6);
        let ratio = (b / a).powf(1.0 / n as f64);
        let grid: Vec<f64> = (0..=n).map(|k| a * ratio.powi(k as i32)).collect();
        let vals: Vec<f64> = grid.iter().map(|&x| residual(kind, x, dist, fmax).unwrap()).collect();
        let mut changes = Vec::new();
        for k in 0..n {
            if (vals[k] < 0.0) != (vals[k + 1] < 0.0) {
                changes.push(k);
            }
        }
        let k = changes[0];
        let (mut lo, mut hi) = (grid[k], grid[k + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(kind, mid, dist, fmax).unwrap() < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi), changes.len(), ratio - 1.0)
    }

    #[test]
    fn degenerate_zero_service() {
        let zero = ServiceDistribution::deterministic(0.0).unwrap();
        let s = solve_signal_threshold(&zero, RateLimit::Finite(2.0)).unwrap();
        assert!((s.beta - 0.5).abs() < 1e-15);
        assert!((s.mse - 1.0 / 12.0).abs() < 1e-15);
        assert!(s.rate_constraint_binding);
        let u = solve_signal_threshold(&zero, RateLimit::Unbounded).unwrap();
        assert_eq!((u.beta, u.mse), (0.0, 0.0));
    }

    #[test]
    fn zero_service_through_the_generic_path_agrees() {
        // A zero atom written as a finite law skips the short-circuit only if
        // it carries a positive atom too; this one is still a point mass.
        let zero = ServiceDistribution::discrete([(0.0, 1.0)]).unwrap();
        let s = solve_signal_threshold(&zero, RateLimit::Finite(2.0)).unwrap();
        assert_eq!(s.beta, 0.5);
    }

    #[test]
    fn signal_low_rate_bound() {
        for &f in &[0.01, 0.1] {
            let s = solve_signal_threshold(&exp1(), RateLimit::Finite(f)).unwrap();
            assert!(s.beta >= 1.0 / f - 1.0 && s.beta <= 1.0 / f, "fmax={f}: {}", s.beta);
            assert!(s.rate_constraint_binding);
            assert!((s.expected_interval - 1.0 / f).abs() < 1e-9 / f);
        }
    }

    #[test]
    fn signal_unconstrained_exponential_golden() {
        let s = solve_signal_threshold(&exp1(), RateLimit::Unbounded).unwrap();
        assert!((s.beta - EXP1_SIGNAL_BETA).abs() < 1e-9, "{}", s.beta);
        assert!((s.mse - EXP1_SIGNAL_MSE).abs() < 1e-9, "{}", s.mse);
        assert!(!s.rate_constraint_binding);
        let (g1, g2) = functionals_signal(s.beta, &exp1()).unwrap();
        assert!((2.0 * s.beta * g1 - g2).abs() < 1e-8);
    }

    #[test]
    fn age_analytic_cases() {
        let det = ServiceDistribution::deterministic(1.0).unwrap();
        let s = solve_age_threshold(&det, RateLimit::Unbounded).unwrap();
        assert!((s.beta - 0.5).abs() < 1e-9 && (s.mse - 1.5).abs() < 1e-9, "{s:?}");
        let e = solve_age_threshold(&exp1(), RateLimit::Unbounded).unwrap();
        assert!((e.beta * e.beta * e.beta.exp() - 2.0).abs() < 1e-8);
        assert!((e.beta - EXP1_AGE_BETA).abs() < 1e-9);
        assert!((e.mse - (1.0 + e.beta)).abs() < 1e-8);
        let c = solve_age_threshold(&exp1(), RateLimit::Finite(0.01)).unwrap();
        assert!(c.beta >= 99.0 && c.beta <= 100.0);
    }

    #[test]
    fn zero_wait_tests() {
        let det0 = ServiceDistribution::deterministic(0.0).unwrap();
        let det1 = ServiceDistribution::deterministic(1.0).unwrap();
        assert!(zero_wait_mse_optimal(&det0));
        assert!(!zero_wait_mse_optimal(&exp1()));
        assert!(zero_wait_mse_optimal(&ServiceDistribution::discrete([(0.0, 1.0)]).unwrap()));
        assert!(zero_wait_age_optimal(&det1));
        assert!(!zero_wait_age_optimal(&exp1()));
        assert!(zero_wait_age_optimal(
            &ServiceDistribution::discrete([(1.0, 0.5), (2.0, 0.5)]).unwrap()
        ));
    }

    #[test]
    fn asymptotic_ratio() {
        let r = asymptotic_ratio_check(&exp1(), RateLimit::Finite(0.01)).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 0.02, "{r}");
        let zero = ServiceDistribution::deterministic(0.0).unwrap();
        let r0 = asymptotic_ratio_check(&zero, RateLimit::Finite(0.3)).unwrap();
        assert!((r0 - 1.0 / 3.0).abs() < 1e-15);
        let ln = ServiceDistribution::lognormal_unit_mean(1.5).unwrap();
        let rl = asymptotic_ratio_check(&ln, RateLimit::Finite(0.001)).unwrap();
        assert!((rl - 1.0 / 3.0).abs() < 0.02, "{rl}");
    }

    #[test]
    fn unconstrained_kkt_relation() {
        let laws = [
            exp1(),
            ServiceDistribution::deterministic(1.0).unwrap(),
            ServiceDistribution::lognormal_unit_mean(1.0).unwrap(),
            ServiceDistribution::discrete([(0.0, 0.5), (2.0, 0.5)]).unwrap(),
        ];
        for d in &laws {
            let s = solve_signal_threshold(d, RateLimit::Unbounded).unwrap();
            assert!((s.beta - 3.0 * (s.mse - d.mean())).abs() <= 1e-8, "{d}: {s:?}");
            let a = solve_age_threshold(d, RateLimit::Unbounded).unwrap();
            assert!((a.beta - (a.mse - d.mean())).abs() <= 1e-8, "{d}: {a:?}");
        }
    }

    #[test]
    fn age_scaling_law() {
        let base = solve_age_threshold(&exp1(), RateLimit::Unbounded).unwrap();
        for &alpha in &[0.5, 2.0] {
            let d = exp1().scaled(alpha).unwrap();
            let s = solve_age_threshold(&d, RateLimit::Unbounded).unwrap();
            assert!((s.beta - alpha * base.beta).abs() < 1e-9 * alpha);
            assert!((s.mse - alpha * base.mse).abs() < 1e-9 * alpha);
        }
    }

    #[test]
    fn bisection_matches_dense_scan() {
        let cases: Vec<(PolicyKind, ServiceDistribution, RateLimit)> = vec![
            (PolicyKind::Signal, exp1(), RateLimit::Unbounded),
            (PolicyKind::Signal, exp1(), RateLimit::Finite(0.3)),
            (PolicyKind::Signal, ServiceDistribution::lognormal_unit_mean(1.5).unwrap(), RateLimit::Finite(0.8)),
            (PolicyKind::Signal, ServiceDistribution::deterministic(1.0).unwrap(), RateLimit::Unbounded),
            (PolicyKind::Age, exp1(), RateLimit::Unbounded),
            (PolicyKind::Age, ServiceDistribution::lognormal_unit_mean(2.0).unwrap(), RateLimit::Finite(1.5)),
            (PolicyKind::Age, ServiceDistribution::discrete([(0.2, 0.9), (5.0, 0.1)]).unwrap(), RateLimit::Finite(0.5)),
        ];
        for (kind, d, f) in cases {
            let s = solve_threshold(kind, &d, f).unwrap();
            let (oracle, changes, step) = scan_oracle(kind, &d, f);
            assert_eq!(changes, 1, "{kind:?} {d} {f}: extra sign changes");
            assert!((s.beta - oracle).abs() <= step * oracle, "{kind:?} {d} {f}: {} vs {oracle}", s.beta);
        }
    }

    #[test]
    fn rate_limit_parsing() {
        assert_eq!("inf".parse::<RateLimit>().unwrap(), RateLimit::Unbounded);
        assert_eq!("0.5".parse::<RateLimit>().unwrap(), RateLimit::Finite(0.5));
        assert!("0".parse::<RateLimit>().is_err());
        assert!("-2".parse::<RateLimit>().is_err());
        assert!("fast".parse::<RateLimit>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn case() -> impl Strategy<Value = (ServiceDistribution, RateLimit)> {
            let law = prop_oneof![
                (0.01f64..4.0).prop_map(|d| ServiceDistribution::deterministic(d).unwrap()),
                (0.05f64..4.0).prop_map(|m| ServiceDistribution::exponential(m).unwrap()),
                (0.1f64..2.0).prop_map(|s| ServiceDistribution::lognormal_unit_mean(s).unwrap()),
            ];
            let rate = prop_oneof![
                Just(RateLimit::Unbounded),
                (0.005f64..5.0).prop_map(RateLimit::Finite),
            ];
            (law, rate)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn residual_and_invariants((d, f) in case()) {
                let s = solve_signal_threshold(&d, f).unwrap();
                let a = solve_age_threshold(&d, f).unwrap();
                for sol in [&s, &a] {
                    prop_assert!(sol.beta >= 0.0);
                    prop_assert!(sol.mse >= d.mean() - 1e-12);
                    prop_assert!(sol.residual <= RESIDUAL_TOL * sol.expected_interval.max(1.0));
                    if sol.rate_constraint_binding {
                        prop_assert!((sol.expected_interval - f.min_interval()).abs()
                            <= 1e-8 * f.min_interval().max(1.0));
                    }
                }
                prop_assert!(s.mse <= a.mse + 1e-9);
                if !s.rate_constraint_binding {
                    prop_assert!((s.beta - 3.0 * (s.mse - d.mean())).abs() <= 1e-8 * s.beta.max(1.0));
                }
                if !a.rate_constraint_binding {
                    prop_assert!((a.beta - (a.mse - d.mean())).abs() <= 1e-8 * a.beta.max(1.0));
                }
            }
        }
    }
}
