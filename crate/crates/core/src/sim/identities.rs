//! Monte Carlo checks of the moment identities behind the threshold
//! formulas.
//!
//! * stopping identity: `E[int_0^tau W_t^2 dt] = E[W_tau^4] / 6`,
//! * Wald moments of `W_Y`: `E[W_Y] = 0`, `E[W_Y^2] = E[Y]`,
//!   `E[W_Y^4] = 3 E[Y^2]`,
//! * per-sample moments of the signal-threshold policy:
//!   `E[Y + Z] = g1(beta)` and `E[(Delta W)^4] = g2(beta)`,
//! * the per-interval decomposition
//!   `E[int_{D_i}^{D_{i+1}} (W_t - W_{S_i})^2 dt] = E[(Delta W)^4] / 6 + E[Y + Z] E[Y]`.
//!
//! Independent paths are simulated in fixed-size blocks; block `b` uses
//! stream `(seed, tag + b)`, so every report is reproducible and
//! independent of thread scheduling.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::stats::RunningStats;
use crate::error::{Error, Result};
use crate::moments::functionals_signal;
use crate::rng::{stream, SimRng};
use crate::service::ServiceDistribution;

const BLOCK: u64 = 4096;

/// How a barrier crossing is detected on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingDetection {
    /// Declare a crossing when a grid value is at or beyond the barrier.
    /// Overshoots the barrier by about `0.58 sqrt(dt)` on average.
    Grid,
    /// Additionally declare a crossing with the Brownian-bridge probability
    /// `exp(-2 d0 d1 / dt)` between two inside grid points (distances
    /// `d0`, `d1` to the barrier); the crossing value is the barrier itself.
    BrownianBridge,
}

/// One measured-versus-expected comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub label: String,
    pub measured: f64,
    pub expected: f64,
    /// Standard error of `measured - expected`.
    pub se: f64,
    pub samples: u64,
}

impl IdentityCheck {
    pub fn abs_error(&self) -> f64 {
        (self.measured - self.expected).abs()
    }

    /// Relative error against `expected`; zero when both sides vanish.
    pub fn rel_error(&self) -> f64 {
        let e = self.abs_error();
        if e == 0.0 {
            0.0
        } else {
            e / self.expected.abs()
        }
    }

    /// `|measured - expected| <= max(rel_tol |expected|, n_se se)`.
    pub fn passes(&self, rel_tol: f64, n_se: f64) -> bool {
        self.abs_error() <= (rel_tol * self.expected.abs()).max(n_se * self.se)
    }
}

/// Stopping time used by [`verify_stopping_identity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    /// Deterministic time `tau0`.
    FixedTime(f64),
    /// First exit of `W` from `(-sqrt(beta), sqrt(beta))`.
    Barrier(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaldReport {
    pub first: IdentityCheck,
    pub second: IdentityCheck,
    pub fourth: IdentityCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Corollary1Report {
    pub beta: f64,
    /// Empirical `E[Y + Z]` against `E[max(beta, W_Y^2)]`.
    pub interval: IdentityCheck,
    /// Empirical `E[(Delta W)^4]` against `E[max(beta^2, W_Y^4)]`.
    pub fourth: IdentityCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub beta: f64,
    /// Interval integral against the right-hand side built on the same paths.
    pub check: IdentityCheck,
    pub mean_fourth: f64,
    pub mean_interval: f64,
    pub mean_service: f64,
}

fn check_paths(paths: u64, dt: f64) -> Result<()> {
    if paths < 2 {
        return Err(Error::InvalidConfig("at least two paths are required".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be > 0, got {dt}")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidPolicy(format!("threshold must be >= 0, got {beta}")))
    }
}

/// Runs `paths` independent draws of `draw` in blocks and folds the
/// per-path vectors into running statistics, in block order.
fn run_blocks<const N: usize, F>(seed: u64, tag: u64, paths: u64, draw: F) -> [RunningStats; N]
where
    F: Fn(&mut SimRng) -> [f64; N] + Sync,
{
    let blocks = paths.div_ceil(BLOCK);
    let partial: Vec<[RunningStats; N]> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, (tag << 40) + b);
            let n = BLOCK.min(paths - b * BLOCK);
            let mut acc = [RunningStats::new(); N];
            for _ in 0..n {
                let v = draw(&mut rng);
                for (a, x) in acc.iter_mut().zip(v) {
                    a.push(x);
                }
            }
            acc
        })
        .collect();
    let mut total = [RunningStats::new(); N];
    for p in &partial {
        for (t, s) in total.iter_mut().zip(p) {
            t.merge(s);
        }
    }
    total
}

/// Outcome of a grid first-passage run.
struct Passage {
    elapsed: f64,
    end: f64,
    /// Left Riemann sum of `x^2 dt` over the run.
    integral_sq: f64,
}

/// Runs `x` as a Wiener process from `start` until `|x| >= barrier`.
fn first_passage(rng: &mut SimRng, start: f64, barrier: f64, dt: f64, mode: CrossingDetection) -> Passage {
    let sqrt_dt = dt.sqrt();
    let mut x = start;
    let mut steps: u64 = 0;
    let mut integral = 0.0;
    while x.abs() < barrier {
        integral += x * x;
        let z: f64 = rng.sample(StandardNormal);
        let next = x + sqrt_dt * z;
        steps += 1;
        if mode == CrossingDetection::BrownianBridge && next.abs() >= barrier {
            // The continuous path hit the barrier inside this step.
            x = barrier.copysign(next);
            break;
        }
        if mode == CrossingDetection::BrownianBridge {
            let up = 2.0 * (barrier - x) * (barrier - next) / dt;
            let down = 2.0 * (barrier + x) * (barrier + next) / dt;
            let p_up = if up < 50.0 { (-up).exp() } else { 0.0 };
            let p_down = if down < 50.0 { (-down).exp() } else { 0.0 };
            let p = p_up + p_down;
            if p > 0.0 {
                let u: f64 = rng.random::<f64>() * p.max(1.0);
                if u < p {
                    x = if u < p_up { barrier } else { -barrier };
                    break;
                }
            }
        }
        x = next;
    }
    Passage {
        elapsed: steps as f64 * dt,
        end: x,
        integral_sq: integral * dt,
    }
}

/// Left Riemann sum of `(start + B_u)^2` over `[0, length]`, returning the
/// integral and the end value.
fn service_segment(rng: &mut SimRng, start: f64, length: f64, dt: f64) -> (f64, f64) {
    let full = (length / dt).floor() as u64;
    let rest = length - full as f64 * dt;
    let sqrt_dt = dt.sqrt();
    let mut x = start;
    let mut integral = 0.0;
    for _ in 0..full {
        integral += x * x * dt;
        let z: f64 = rng.sample(StandardNormal);
        x += sqrt_dt * z;
    }
    if rest > 0.0 {
        integral += x * x * rest;
        let z: f64 = rng.sample(StandardNormal);
        x += rest.sqrt() * z;
    }
    (integral, x)
}

/// Compares both sides of `E[int_0^tau W^2 dt] = E[W_tau^4] / 6` on
/// simulated paths (grid crossing detection for the barrier rule).
pub fn verify_stopping_identity(rule: StoppingRule, paths: u64, dt: f64, seed: u64) -> Result<IdentityCheck> {
    check_paths(paths, dt)?;
    let (label, stats) = match rule {
        StoppingRule::FixedTime(tau0) => {
            if !(tau0.is_finite() && tau0 >= 0.0) {
                return Err(Error::InvalidConfig(format!("fixed time must be >= 0, got {tau0}")));
            }
            let stats = run_blocks(seed, 1, paths, |rng| {
                let (lhs, end) = service_segment(rng, 0.0, tau0, dt);
                let rhs = end.powi(4) / 6.0;
                [lhs, rhs, lhs - rhs]
            });
            (format!("stopping identity, fixed time {tau0}"), stats)
        }
        StoppingRule::Barrier(beta) => {
            check_beta(beta)?;
            let barrier = beta.sqrt();
            let stats = run_blocks(seed, 2, paths, |rng| {
                let p = first_passage(rng, 0.0, barrier, dt, CrossingDetection::Grid);
                let rhs = p.end.powi(4) / 6.0;
                [p.integral_sq, rhs, p.integral_sq - rhs]
            });
            (format!("stopping identity, barrier sqrt({beta})"), stats)
        }
    };
    Ok(IdentityCheck {
        label,
        measured: stats[0].mean(),
        expected: stats[1].mean(),
        se: stats[2].std_error().unwrap_or(0.0),
        samples: paths,
    })
}

/// Checks the first, second and fourth moments of `W_Y` against `0`,
/// `E[Y]` and `3 E[Y^2]`.
pub fn verify_wald_moments(dist: &ServiceDistribution, paths: u64, seed: u64) -> Result<WaldReport> {
    dist.validate()?;
    check_paths(paths, 1.0)?;
    let stats = run_blocks(seed, 3, paths, |rng| {
        let y = dist.sample(rng);
        let z: f64 = rng.sample(StandardNormal);
        let w = y.sqrt() * z;
        let w2 = w * w;
        [w, w2, w2 * w2]
    });
    let make = |label: &str, s: &RunningStats, expected: f64| IdentityCheck {
        label: format!("{label} for Y ~ {dist}"),
        measured: s.mean(),
        expected,
        se: s.std_error().unwrap_or(0.0),
        samples: paths,
    };
    Ok(WaldReport {
        first: make("E[W_Y] = 0", &stats[0], 0.0),
        second: make("E[W_Y^2] = E[Y]", &stats[1], dist.mean()),
        fourth: make("E[W_Y^4] = 3 E[Y^2]", &stats[2], 3.0 * dist.second_moment()),
    })
}

/// Simulates the signal-threshold waiting rule from independent starts and
/// compares the mean inter-sample time and the fourth moment of the
/// inter-sample increment with the quadrature functionals.
pub fn verify_corollary1(
    beta: f64,
    dist: &ServiceDistribution,
    paths: u64,
    dt: f64,
    seed: u64,
    mode: CrossingDetection,
) -> Result<Corollary1Report> {
    check_beta(beta)?;
    check_paths(paths, dt)?;
    dist.validate()?;
    let (g1, g2) = functionals_signal(beta, dist)?;
    let barrier = beta.sqrt();
    let stats = run_blocks(seed, 4, paths, |rng| {
        let y = dist.sample(rng);
        let z: f64 = rng.sample(StandardNormal);
        let x = y.sqrt() * z;
        if x.abs() >= barrier {
            [y, x.powi(4)]
        } else {
            let p = first_passage(rng, x, barrier, dt, mode);
            [y + p.elapsed, p.end.powi(4)]
        }
    });
    Ok(Corollary1Report {
        beta,
        interval: IdentityCheck {
            label: format!("E[Y + Z] = E[max(beta, W_Y^2)], beta = {beta}, Y ~ {dist}"),
            measured: stats[0].mean(),
            expected: g1,
            se: stats[0].std_error().unwrap_or(0.0),
            samples: paths,
        },
        fourth: IdentityCheck {
            label: format!("E[dW^4] = E[max(beta^2, W_Y^4)], beta = {beta}, Y ~ {dist}"),
            measured: stats[1].mean(),
            expected: g2,
            se: stats[1].std_error().unwrap_or(0.0),
            samples: paths,
        },
    })
}

/// Accumulates `int_{D_i}^{D_{i+1}} (W_t - W_{S_i})^2 dt` under the
/// signal-threshold policy and compares it with
/// `(Delta W)^4 / 6 + (Y_i + Z_i) Y_{i+1}` evaluated on the same paths.
pub fn verify_interval_decomposition(
    beta: f64,
    dist: &ServiceDistribution,
    paths: u64,
    dt: f64,
    seed: u64,
) -> Result<DecompositionReport> {
    check_beta(beta)?;
    check_paths(paths, dt)?;
    dist.validate()?;
    let barrier = beta.sqrt();
    let stats = run_blocks(seed, 5, paths, |rng| {
        let y = dist.sample(rng);
        let z: f64 = rng.sample(StandardNormal);
        let x = y.sqrt() * z;
        let (wait_integral, wait, dw) = if x.abs() >= barrier {
            (0.0, 0.0, x)
        } else {
            let p = first_passage(rng, x, barrier, dt, CrossingDetection::Grid);
            (p.integral_sq, p.elapsed, p.end)
        };
        let next_service = dist.sample(rng);
        let (service_integral, _) = service_segment(rng, dw, next_service, dt);
        let lhs = wait_integral + service_integral;
        let fourth = dw.powi(4);
        let interval = y + wait;
        let rhs = fourth / 6.0 + interval * next_service;
        [lhs, rhs, lhs - rhs, fourth, interval, next_service]
    });
    let mean_fourth = stats[3].mean();
    let mean_interval = stats[4].mean();
    let mean_service = stats[5].mean();
    Ok(DecompositionReport {
        beta,
        check: IdentityCheck {
            label: format!("interval decomposition, beta = {beta}, Y ~ {dist}"),
            measured: stats[0].mean(),
            expected: mean_fourth / 6.0 + mean_interval * mean_service,
            se: stats[2].std_error().unwrap_or(0.0),
            samples: paths,
        },
        mean_fourth,
        mean_interval,
        mean_service,
    })
}
