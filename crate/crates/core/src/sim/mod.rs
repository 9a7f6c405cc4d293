//! Monte Carlo simulation of the sampler, the FIFO channel and the
//! remote estimator.
//!
//! Time advances on a grid of step `dt`. At each grid instant the simulator
//!
//! 1. delivers every sample whose service completes at or before that
//!    instant (the estimate jumps to the delivered value `W_{S_i}`),
//! 2. asks the policy whether a new sample is taken (at most one per step),
//! 3. accumulates `(W - W_hat)^2 dt` (left-endpoint rule) once past warmup,
//! 4. advances the Wiener path by an `N(0, dt)` increment.
//!
//! Service times are continuous; a sample generated at step `k` with
//! service `y` starts service when the server frees up and completes
//! `ceil(y / dt)` steps later. Threshold and zero-wait policies only sample
//! when the channel is idle, so their queue never holds more than one
//! sample. Periodic sampling ignores the channel state and may build a
//! backlog.
//!
//! The age integral `int Delta(t) dt` is accumulated exactly between
//! delivery instants, since the age is piecewise linear.

mod identities;
mod stats;

pub use identities::{
    verify_corollary1, verify_interval_decomposition, verify_stopping_identity,
    verify_wald_moments, Corollary1Report, CrossingDetection, DecompositionReport,
    IdentityCheck, StoppingRule, WaldReport,
};
pub use stats::RunningStats;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{stream, SimRng};
use crate::service::{parse_f64, ServiceDistribution};

/// Fewer deliveries than this in a replication raise [`SimResult::few_samples`].
pub const MIN_DELIVERIES: u64 = 100;

// Guards ceil() against representation error, e.g. 1.0 / 1e-3.
const STEP_EPS: f64 = 1e-9;

/// A causal sampling policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// `S_{i+1} = S_i + interval`, regardless of the channel state.
    Periodic { interval: f64 },
    /// Sample at every delivery.
    ZeroWait,
    /// After each delivery, wait until `t - S_i >= beta`.
    AgeThreshold { beta: f64 },
    /// After each delivery, wait until `|W_t - W_{S_i}| >= sqrt(beta)`.
    SignalThreshold { beta: f64 },
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicySpec::Periodic { interval } if !(interval.is_finite() && interval > 0.0) => {
                Err(Error::InvalidPolicy(format!("periodic interval must be > 0, got {interval}")))
            }
            PolicySpec::AgeThreshold { beta } | PolicySpec::SignalThreshold { beta }
                if !(beta.is_finite() && beta >= 0.0) =>
            {
                Err(Error::InvalidPolicy(format!("threshold must be >= 0, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    /// True for policies that never look at the signal.
    pub fn is_signal_ignorant(&self) -> bool {
        !matches!(self, PolicySpec::SignalThreshold { .. })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Periodic { interval } => write!(f, "periodic:{interval}"),
            PolicySpec::ZeroWait => f.write_str("zero-wait"),
            PolicySpec::AgeThreshold { beta } => write!(f, "age-threshold:{beta}"),
            PolicySpec::SignalThreshold { beta } => write!(f, "signal-threshold:{beta}"),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    /// Parses `periodic:<interval>`, `zero-wait`, `age-threshold:<beta>` or
    /// `signal-threshold:<beta>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let need = |arg: Option<&str>| {
            arg.ok_or_else(|| Error::parse(s, "missing parameter after `:`"))
                .and_then(parse_f64)
        };
        let policy = match name {
            "periodic" => PolicySpec::Periodic { interval: need(arg)? },
            "zero-wait" if arg.is_none() => PolicySpec::ZeroWait,
            "age-threshold" => PolicySpec::AgeThreshold { beta: need(arg)? },
            "signal-threshold" => PolicySpec::SignalThreshold { beta: need(arg)? },
            _ => return Err(Error::parse(s, "unknown policy")),
        };
        policy.validate().map_err(|e| Error::parse(s, e.to_string()))?;
        Ok(policy)
    }
}

/// Simulation budget and seeding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    /// Simulated time per replication.
    pub horizon: f64,
    /// Wiener grid step.
    pub dt: f64,
    pub seed: u64,
    pub replications: u32,
    /// Discarded prefix of every replication.
    pub warmup: f64,
}

impl SimConfig {
    /// Config with the default warmup of 1% of the horizon.
    pub fn new(horizon: f64, dt: f64, seed: u64, replications: u32) -> Self {
        SimConfig {
            horizon,
            dt,
            seed,
            replications,
            warmup: 0.01 * horizon,
        }
    }

    pub fn with_warmup(mut self, warmup: f64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("horizon must be > 0, got {}", self.horizon));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return bad(format!("warmup must lie in [0, horizon), got {}", self.warmup));
        }
        if self.replications == 0 {
            return bad("at least one replication is required".into());
        }
        if self.horizon / self.dt > 1e12 {
            return bad("horizon / dt exceeds 1e12 grid steps".into());
        }
        Ok(())
    }

    fn grid_steps(&self) -> (u64, u64) {
        let total = (self.horizon / self.dt).round() as u64;
        let warm = ((self.warmup / self.dt).round() as u64).min(total.saturating_sub(1));
        (total, warm)
    }
}

/// Statistics of one replication, measured over the post-warmup window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicationStats {
    pub mse: f64,
    pub avg_age: f64,
    pub sampling_rate: f64,
    pub n_samples: u64,
    pub deliveries: u64,
    /// Mean of `S_{i+1} - S_i`; NaN when fewer than two samples fall in the window.
    pub mean_interval: f64,
    /// Mean of `(W_{S_{i+1}} - W_{S_i})^4`.
    pub fourth_moment_increment: f64,
}

/// Replication averages with standard errors across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub policy: PolicySpec,
    pub mse: f64,
    pub se_mse: Option<f64>,
    pub avg_age: f64,
    pub se_avg_age: Option<f64>,
    /// Standard error of the paired per-replication difference `mse - avg_age`.
    pub se_mse_minus_age: Option<f64>,
    pub sampling_rate: f64,
    pub n_samples: u64,
    pub mean_interval: f64,
    pub fourth_moment_increment: f64,
    /// Some replication delivered fewer than [`MIN_DELIVERIES`] samples.
    pub few_samples: bool,
    /// Periodic sampling at utilization `E[Y] / interval >= 1`.
    pub unstable: bool,
    pub replications: Vec<ReplicationStats>,
}

/// Runs `cfg.replications` independent replications of the closed loop.
///
/// Replication `r` draws from stream `(cfg.seed, r)`, so the result is
/// bit-identical for identical inputs.
pub fn simulate_policy(
    policy: &PolicySpec,
    dist: &ServiceDistribution,
    cfg: &SimConfig,
) -> Result<SimResult> {
    policy.validate()?;
    dist.validate()?;
    cfg.validate()?;
    if let PolicySpec::Periodic { interval } = policy {
        if *interval < cfg.dt {
            return Err(Error::InvalidConfig(format!(
                "periodic interval {interval} is shorter than dt = {}",
                cfg.dt
            )));
        }
    }

    let reps: Vec<ReplicationStats> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(cfg.seed, r as u64);
            run_replication(policy, dist, cfg, &mut rng)
        })
        .collect();

    let mse: RunningStats = reps.iter().map(|r| r.mse).collect();
    let age: RunningStats = reps.iter().map(|r| r.avg_age).collect();
    let diff: RunningStats = reps.iter().map(|r| r.mse - r.avg_age).collect();
    let mean_of = |f: fn(&ReplicationStats) -> f64| {
        reps.iter().map(f).filter(|v| v.is_finite()).collect::<RunningStats>().mean()
    };

    let unstable = match policy {
        PolicySpec::Periodic { interval } => dist.mean() / interval >= 1.0,
        _ => false,
    };

    Ok(SimResult {
        policy: *policy,
        mse: mse.mean(),
        se_mse: mse.std_error(),
        avg_age: age.mean(),
        se_avg_age: age.std_error(),
        se_mse_minus_age: diff.std_error(),
        sampling_rate: mean_of(|r| r.sampling_rate),
        n_samples: reps.iter().map(|r| r.n_samples).sum(),
        mean_interval: mean_of(|r| r.mean_interval),
        fourth_moment_increment: mean_of(|r| r.fourth_moment_increment),
        few_samples: reps.iter().any(|r| r.deliveries < MIN_DELIVERIES),
        unstable,
        replications: reps,
    })
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    deliver: u64,
    sampled: u64,
    value: f64,
}

/// Integral of the age `t - s` over `[from, to]` clipped to `[lo, hi]`.
fn age_area(from: f64, to: f64, s: f64, lo: f64, hi: f64) -> f64 {
    let a = from.max(lo);
    let b = to.min(hi);
    if b <= a {
        0.0
    } else {
        0.5 * ((b - s).powi(2) - (a - s).powi(2))
    }
}

fn service_steps(y: f64, dt: f64) -> u64 {
    (y / dt - STEP_EPS).ceil().max(0.0) as u64
}

fn run_replication(
    policy: &PolicySpec,
    dist: &ServiceDistribution,
    cfg: &SimConfig,
    rng: &mut SimRng,
) -> ReplicationStats {
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let (total, warm) = cfg.grid_steps();
    let (t_lo, t_hi) = (warm as f64 * dt, total as f64 * dt);

    let threshold_steps = match *policy {
        PolicySpec::AgeThreshold { beta } => (beta / dt - STEP_EPS).ceil().max(0.0) as u64,
        _ => 0,
    };
    let signal_beta = match *policy {
        PolicySpec::SignalThreshold { beta } => beta,
        _ => 0.0,
    };
    let periodic_interval = match *policy {
        PolicySpec::Periodic { interval } => interval,
        _ => 0.0,
    };
    let mut periodic_count: u64 = 1;
    let mut next_periodic = match *policy {
        PolicySpec::Periodic { interval } => (interval / dt - STEP_EPS).ceil() as u64,
        _ => u64::MAX,
    };

    let mut w = 0.0f64;
    // S_0 = D_0 = 0 with W_0 = 0 known to the estimator.
    let mut estimate = 0.0f64;
    let mut last_sample: Option<u64> = None;
    let mut last_idx: u64 = 0;
    let mut last_val = 0.0f64;

    let mut queue: VecDeque<InFlight> = VecDeque::new();
    let mut server_free: u64 = 0;

    let mut fresh_s = 0.0f64;
    let mut age_from = 0.0f64;
    let mut age_acc = 0.0f64;
    let mut deliveries: u64 = 0;

    let mut sq_acc = 0.0f64;
    let mut n_samples: u64 = 0;
    let mut interval_acc = 0.0f64;
    let mut fourth_acc = 0.0f64;

    for k in 0..total {
        let t = k as f64 * dt;

        macro_rules! deliver_due {
            () => {
                while let Some(head) = queue.front() {
                    if head.deliver > k {
                        break;
                    }
                    let head = queue.pop_front().expect("front exists");
                    age_acc += age_area(age_from, t, fresh_s, t_lo, t_hi);
                    age_from = t;
                    fresh_s = head.sampled as f64 * dt;
                    estimate = head.value;
                    if k >= warm {
                        deliveries += 1;
                    }
                }
            };
        }

        deliver_due!();

        let idle = queue.is_empty();
        let fresh_step = last_sample.is_none_or(|s| k > s);
        let take = match *policy {
            PolicySpec::Periodic { .. } => k == next_periodic,
            PolicySpec::ZeroWait => idle && fresh_step,
            PolicySpec::AgeThreshold { .. } => {
                idle && fresh_step && k >= last_idx + threshold_steps
            }
            PolicySpec::SignalThreshold { .. } => {
                let d = w - last_val;
                idle && fresh_step && d * d >= signal_beta
            }
        };

        if take {
            if k >= warm {
                n_samples += 1;
                interval_acc += (k - last_idx) as f64 * dt;
                fourth_acc += (w - last_val).powi(4);
            }
            let start = k.max(server_free);
            let deliver = start + service_steps(dist.sample(rng), dt);
            server_free = deliver;
            queue.push_back(InFlight {
                deliver,
                sampled: k,
                value: w,
            });
            last_sample = Some(k);
            last_idx = k;
            last_val = w;
            if next_periodic == k {
                periodic_count += 1;
                next_periodic =
                    (periodic_count as f64 * periodic_interval / dt - STEP_EPS).ceil() as u64;
            }
            deliver_due!();
        }

        if k >= warm {
            let e = w - estimate;
            sq_acc += e * e;
        }
        let z: f64 = rng.sample(StandardNormal);
        w += sqrt_dt * z;
    }
    age_acc += age_area(age_from, t_hi, fresh_s, t_lo, t_hi);

    let window = t_hi - t_lo;
    ReplicationStats {
        mse: sq_acc * dt / window,
        avg_age: age_acc / window,
        sampling_rate: n_samples as f64 / window,
        n_samples,
        deliveries,
        mean_interval: if n_samples > 0 { interval_acc / n_samples as f64 } else { f64::NAN },
        fourth_moment_increment: if n_samples > 0 {
            fourth_acc / n_samples as f64
        } else {
            f64::NAN
        },
    }
}
