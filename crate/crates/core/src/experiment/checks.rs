//! Validation suites: Monte Carlo identity checks, solver postconditions and
//! the simulated ordering of the policies.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::moments::MomentFunctionals;
use crate::rng::derive_seed;
use crate::service::ServiceDistribution;
use crate::sim::{
    simulate_policy, verify_corollary1, verify_interval_decomposition, verify_stopping_identity,
    verify_wald_moments, CrossingDetection, IdentityCheck, PolicySpec, SimConfig, SimResult,
    StoppingRule,
};
use crate::solver::{
    asymptotic_ratio_check, solve_age_threshold, solve_signal_threshold, zero_wait_age_optimal,
    zero_wait_mse_optimal, RateLimit, ThresholdSolution, RESIDUAL_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Identities,
    Solver,
    Ordering,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "identities" => Ok(Suite::Identities),
            "solver" => Ok(Suite::Solver),
            "ordering" => Ok(Suite::Ordering),
            "all" => Ok(Suite::All),
            other => Err(Error::parse(other, "expected identities, solver, ordering or all")),
        }
    }
}

/// Monte Carlo budget for the suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckBudget {
    /// Independent paths per identity check.
    pub paths: u64,
    /// Grid step for path simulation.
    pub dt: f64,
    /// Horizon and replications for the ordering simulations.
    pub horizon: f64,
    pub replications: u32,
}

impl Default for CheckBudget {
    fn default() -> Self {
        CheckBudget {
            paths: 200_000,
            dt: 1e-3,
            horizon: 2e4,
            replications: 8,
        }
    }
}

/// One line of a check report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    /// The measured discrepancy.
    pub error: f64,
    /// The largest discrepancy that still passes.
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            error,
            tolerance,
            passed: error <= tolerance,
        }
    }

    fn flag(name: impl Into<String>, ok: bool) -> Self {
        CheckOutcome {
            name: name.into(),
            error: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            passed: ok,
        }
    }

    fn identity(check: &IdentityCheck, rel_tol: f64, n_se: f64) -> Self {
        let tolerance = (rel_tol * check.expected.abs()).max(n_se * check.se);
        CheckOutcome::new(check.label.clone(), check.abs_error(), tolerance)
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}  error={:.3e} tol={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.error,
            self.tolerance
        )
    }
}

pub fn run_suite(suite: Suite, seed: u64, budget: &CheckBudget) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Identities | Suite::All) {
        out.extend(identity_checks(seed, budget)?);
    }
    if matches!(suite, Suite::Solver | Suite::All) {
        out.extend(solver_checks()?);
    }
    if matches!(suite, Suite::Ordering | Suite::All) {
        out.extend(ordering_checks(seed, budget)?);
    }
    Ok(out)
}

/// Stopping identity within 2%, Wald moments within 4 se, per-sample
/// moments within max(2%, 4 se), interval decomposition within max(3%, 4 se).
pub fn identity_checks(seed: u64, budget: &CheckBudget) -> Result<Vec<CheckOutcome>> {
    let exp1 = ServiceDistribution::exponential(1.0)?;
    let det0 = ServiceDistribution::deterministic(0.0)?;
    let det1 = ServiceDistribution::deterministic(1.0)?;
    let s = |k: u64| derive_seed(seed, &[0xC0DE, k]);
    let (paths, dt) = (budget.paths, budget.dt);
    let mut out = Vec::new();

    let fixed = verify_stopping_identity(StoppingRule::FixedTime(1.0), paths, dt, s(0))?;
    out.push(CheckOutcome::identity(&fixed, 0.02, 0.0));
    let barrier = verify_stopping_identity(StoppingRule::Barrier(1.0), paths, dt, s(1))?;
    out.push(CheckOutcome::identity(&barrier, 0.02, 0.0));

    for (k, d) in [&exp1, &det1, &det0].into_iter().enumerate() {
        let w = verify_wald_moments(d, paths, s(10 + k as u64))?;
        for c in [&w.first, &w.second, &w.fourth] {
            out.push(CheckOutcome::identity(c, 0.0, 4.0));
        }
    }

    let bridge = CrossingDetection::BrownianBridge;
    for (k, (beta, d)) in [(1.0, &exp1), (1.0, &det0), (0.0, &exp1)].into_iter().enumerate() {
        let c = verify_corollary1(beta, d, paths, dt, s(20 + k as u64), bridge)?;
        out.push(CheckOutcome::identity(&c.interval, 0.02, 4.0));
        out.push(CheckOutcome::identity(&c.fourth, 0.02, 4.0));
    }

    let unconstrained = solve_signal_threshold(&exp1, RateLimit::Unbounded)?.beta;
    for (k, (beta, d)) in [(unconstrained, &exp1), (0.0, &exp1), (1.0, &det0)].into_iter().enumerate() {
        let c = verify_interval_decomposition(beta, d, paths, dt, s(30 + k as u64))?;
        out.push(CheckOutcome::identity(&c.check, 0.03, 4.0));
    }
    Ok(out)
}

fn solver_cases() -> Result<Vec<(ServiceDistribution, RateLimit)>> {
    let laws = [
        ServiceDistribution::exponential(1.0)?,
        ServiceDistribution::deterministic(1.0)?,
        ServiceDistribution::lognormal_unit_mean(0.5)?,
        ServiceDistribution::lognormal_unit_mean(1.5)?,
        ServiceDistribution::discrete([(0.0, 0.3), (1.0, 0.4), (4.0, 0.3)])?,
    ];
    let rates = [
        RateLimit::Unbounded,
        RateLimit::Finite(0.01),
        RateLimit::Finite(0.8),
        RateLimit::Finite(1.5),
    ];
    Ok(laws
        .iter()
        .flat_map(|d| rates.iter().map(move |r| (d.clone(), *r)))
        .collect())
}

fn postconditions(label: &str, sol: &ThresholdSolution, d: &ServiceDistribution, out: &mut Vec<CheckOutcome>) {
    let scale = sol.expected_interval.max(1.0);
    out.push(CheckOutcome::new(
        format!("{label} residual"),
        sol.residual / scale,
        RESIDUAL_TOL,
    ));
    if !sol.rate_constraint_binding {
        let factor = match sol.policy_kind {
            crate::solver::PolicyKind::Signal => 3.0,
            crate::solver::PolicyKind::Age => 1.0,
        };
        out.push(CheckOutcome::new(
            format!("{label} unconstrained beta = {factor}(mse - E[Y])"),
            (sol.beta - factor * (sol.mse - d.mean())).abs(),
            1e-8 * sol.beta.max(1.0),
        ));
    } else {
        out.push(CheckOutcome::new(
            format!("{label} binding interval = 1/fmax"),
            (sol.expected_interval - sol.fmax.min_interval()).abs(),
            1e-8 * scale,
        ));
    }
}

pub fn solver_checks() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (d, f) in solver_cases()? {
        let s = solve_signal_threshold(&d, f)?;
        let a = solve_age_threshold(&d, f)?;
        postconditions(&format!("signal Y ~ {d} fmax={f}:"), &s, &d, &mut out);
        postconditions(&format!("age Y ~ {d} fmax={f}:"), &a, &d, &mut out);
        out.push(CheckOutcome::new(
            format!("mse_signal <= mse_age, Y ~ {d} fmax={f}"),
            (s.mse - a.mse).max(0.0),
            1e-9,
        ));
        let funcs = MomentFunctionals::evaluate(s.beta, &d)?;
        out.push(CheckOutcome::new(
            format!("signal interval = g1(beta), Y ~ {d} fmax={f}"),
            (funcs.g1 - s.expected_interval).abs(),
            1e-12 * funcs.g1,
        ));
    }

    let exp1 = ServiceDistribution::exponential(1.0)?;
    let ratio = asymptotic_ratio_check(&exp1, RateLimit::Finite(0.01))?;
    out.push(CheckOutcome::new("mse ratio at fmax=0.01 near 1/3", (ratio - 1.0 / 3.0).abs(), 0.02));

    let det0 = ServiceDistribution::deterministic(0.0)?;
    let det1 = ServiceDistribution::deterministic(1.0)?;
    out.push(CheckOutcome::flag("zero-wait mse-optimal iff Y = 0", {
        zero_wait_mse_optimal(&det0) && !zero_wait_mse_optimal(&det1) && !zero_wait_mse_optimal(&exp1)
    }));
    out.push(CheckOutcome::flag("zero-wait age-optimal test", {
        zero_wait_age_optimal(&det0) && zero_wait_age_optimal(&det1) && !zero_wait_age_optimal(&exp1)
    }));
    Ok(out)
}

fn ordered(name: String, lower: &SimResult, upper: &SimResult, n_se: f64) -> CheckOutcome {
    let se = (lower.se_mse.unwrap_or(0.0).powi(2) + upper.se_mse.unwrap_or(0.0).powi(2)).sqrt();
    CheckOutcome::new(name, (lower.mse - upper.mse).max(0.0), n_se * se)
}

/// Simulated `mse_signal <= mse_age <= mse_periodic` at fmax = 0.8 and
/// `mse_signal <= mse_age <= mse_zero_wait` at fmax = 1.5, on Exp(1).
pub fn ordering_checks(seed: u64, budget: &CheckBudget) -> Result<Vec<CheckOutcome>> {
    let exp1 = ServiceDistribution::exponential(1.0)?;
    let mut out = Vec::new();
    for (k, (fmax, last)) in [(0.8, "periodic"), (1.5, "zero-wait")].into_iter().enumerate() {
        let limit = RateLimit::Finite(fmax);
        let sig = solve_signal_threshold(&exp1, limit)?;
        let age = solve_age_threshold(&exp1, limit)?;
        let third = if last == "periodic" {
            PolicySpec::Periodic { interval: 1.0 / fmax }
        } else {
            PolicySpec::ZeroWait
        };
        let policies = [
            PolicySpec::SignalThreshold { beta: sig.beta },
            PolicySpec::AgeThreshold { beta: age.beta },
            third,
        ];
        let results = policies
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let cfg = SimConfig::new(
                    budget.horizon,
                    budget.dt,
                    derive_seed(seed, &[0x0DE5, k as u64, j as u64]),
                    budget.replications,
                );
                simulate_policy(p, &exp1, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ordered(format!("fmax={fmax}: mse_signal <= mse_age"), &results[0], &results[1], 4.0));
        out.push(ordered(format!("fmax={fmax}: mse_age <= mse_{last}"), &results[1], &results[2], 4.0));
    }
    Ok(out)
}
