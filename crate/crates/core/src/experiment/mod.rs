//! Parameter sweeps that pit the solved thresholds against simulation, and
//! the validation suites behind the `check` subcommand.

pub mod checks;

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::service::ServiceDistribution;
use crate::sim::{simulate_policy, PolicySpec, SimConfig, SimResult};
use crate::solver::{solve_age_threshold, solve_signal_threshold, RateLimit};

pub use checks::{run_suite, CheckBudget, CheckOutcome, Suite};

/// Exact CSV header of a sweep table.
pub const CSV_HEADER: [&str; 14] = [
    "x",
    "beta_signal",
    "beta_age",
    "mse_opt_theory",
    "mse_age_theory",
    "mse_opt_sim",
    "mse_opt_sim_se",
    "mse_age_sim",
    "mse_age_sim_se",
    "mse_zero_wait_sim",
    "mse_zero_wait_sim_se",
    "mse_periodic_sim",
    "mse_periodic_sim_se",
    "flags",
];

/// What the sweep varies.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "sweep_kind", rename_all = "snake_case")]
pub enum SweepKind {
    /// `x = fmax` for a fixed service law.
    FmaxSweep { dist: ServiceDistribution },
    /// `x = sigma` of a unit-mean log-normal service law at a fixed rate limit.
    SigmaSweep { fmax: f64 },
}

/// Per-cell simulation budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimBudget {
    pub horizon: f64,
    pub dt: f64,
    pub replications: u32,
}

impl Default for SimBudget {
    fn default() -> Self {
        SimBudget {
            horizon: 2e4,
            dt: 1e-3,
            replications: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub budget: SimBudget,
    pub seed: u64,
}

impl SweepSpec {
    /// Preset grids: 1 = fmax sweep on Exp(1); 2 and 3 = log-normal sigma
    /// sweeps at fmax = 0.8 and 1.5.
    pub fn figure(figure: u8, seed: u64) -> Result<Self> {
        let sigma_grid: Vec<f64> = (1..=8).map(|k| 0.25 * k as f64).collect();
        let kind_grid = match figure {
            1 => {
                let mut grid = vec![0.05];
                grid.extend((1..=9).map(|k| k as f64 / 10.0));
                grid.push(0.95);
                (
                    SweepKind::FmaxSweep {
                        dist: ServiceDistribution::exponential(1.0)?,
                    },
                    grid,
                )
            }
            2 => (SweepKind::SigmaSweep { fmax: 0.8 }, sigma_grid),
            3 => (SweepKind::SigmaSweep { fmax: 1.5 }, sigma_grid),
            other => {
                return Err(Error::parse(other.to_string(), "figure must be 1, 2 or 3"));
            }
        };
        Ok(SweepSpec {
            kind: kind_grid.0,
            grid: kind_grid.1,
            budget: SimBudget::default(),
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        for &x in &self.grid {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::InvalidConfig(format!("grid values must be finite and > 0, got {x}")));
            }
        }
        if let SweepKind::SigmaSweep { fmax } = self.kind {
            RateLimit::finite(fmax)?;
        }
        SimConfig::new(self.budget.horizon, self.budget.dt, self.seed, self.budget.replications).validate()
    }
}

/// A simulated value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: Option<f64>,
}

impl From<&SimResult> for Estimate {
    fn from(r: &SimResult) -> Self {
        Estimate {
            value: r.mse,
            se: r.se_mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub x: f64,
    pub beta_signal: f64,
    pub beta_age: f64,
    pub mse_opt_theory: f64,
    pub mse_age_theory: f64,
    pub mse_opt_sim: Option<Estimate>,
    pub mse_age_sim: Option<Estimate>,
    pub mse_zero_wait_sim: Option<Estimate>,
    pub mse_periodic_sim: Option<Estimate>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Signal,
    Age,
    ZeroWait,
    Periodic,
}

/// Solves both thresholds and simulates all feasible policies at every grid
/// point. Simulation cells run in parallel; rows come back in grid order.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let rows = spec
        .grid
        .par_iter()
        .enumerate()
        .map(|(i, &x)| sweep_row(spec, i, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        spec: spec.clone(),
        rows,
    })
}

fn sweep_row(spec: &SweepSpec, index: usize, x: f64) -> Result<SweepRow> {
    let (dist, fmax) = match &spec.kind {
        SweepKind::FmaxSweep { dist } => (dist.clone(), x),
        SweepKind::SigmaSweep { fmax } => (ServiceDistribution::lognormal_unit_mean(x)?, *fmax),
    };
    let limit = RateLimit::finite(fmax)?;
    let signal = solve_signal_threshold(&dist, limit)?;
    let age = solve_age_threshold(&dist, limit)?;

    let mut flags = Vec::new();
    if signal.rate_constraint_binding {
        flags.push("signal-binding".to_string());
    }
    if age.rate_constraint_binding {
        flags.push("age-binding".to_string());
    }
    let zero_wait_feasible = dist.mean() * fmax >= 1.0;
    if !zero_wait_feasible {
        flags.push("zero-wait-infeasible".to_string());
    }
    let periodic_stable = dist.mean() * fmax < 1.0;
    if !periodic_stable {
        flags.push("periodic-unstable".to_string());
    }

    let mut cells = vec![
        (Cell::Signal, PolicySpec::SignalThreshold { beta: signal.beta }),
        (Cell::Age, PolicySpec::AgeThreshold { beta: age.beta }),
    ];
    if zero_wait_feasible {
        cells.push((Cell::ZeroWait, PolicySpec::ZeroWait));
    }
    if periodic_stable {
        cells.push((Cell::Periodic, PolicySpec::Periodic { interval: 1.0 / fmax }));
    }

    let results = cells
        .par_iter()
        .map(|(cell, policy)| {
            let seed = derive_seed(spec.seed, &[index as u64, *cell as u64]);
            let cfg = SimConfig::new(spec.budget.horizon, spec.budget.dt, seed, spec.budget.replications);
            simulate_policy(policy, &dist, &cfg).map(|r| (*cell, r))
        })
        .collect::<Result<Vec<_>>>()?;

    if results.iter().any(|(_, r)| r.few_samples) {
        flags.push("few-samples".to_string());
    }
    let pick = |c: Cell| results.iter().find(|(cell, _)| *cell == c).map(|(_, r)| Estimate::from(r));

    Ok(SweepRow {
        x,
        beta_signal: signal.beta,
        beta_age: age.beta,
        mse_opt_theory: signal.mse,
        mse_age_theory: age.mse,
        mse_opt_sim: pick(Cell::Signal),
        mse_age_sim: pick(Cell::Age),
        mse_zero_wait_sim: pick(Cell::ZeroWait),
        mse_periodic_sim: pick(Cell::Periodic),
        flags,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn est_fields(e: &Option<Estimate>) -> [String; 2] {
    match e {
        Some(e) => [e.value.to_string(), opt(e.se)],
        None => [String::new(), String::new()],
    }
}

impl SweepTable {
    /// The `#`-prefixed provenance line written above the CSV header.
    pub fn provenance(&self) -> String {
        let s = &self.spec;
        let mut line = format!("# {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
        match &s.kind {
            SweepKind::FmaxSweep { dist } => {
                let _ = write!(line, " sweep=fmax dist={dist}");
            }
            SweepKind::SigmaSweep { fmax } => {
                let _ = write!(line, " sweep=sigma dist=lognormal fmax={fmax}");
            }
        }
        let grid: Vec<String> = s.grid.iter().map(f64::to_string).collect();
        let _ = write!(
            line,
            " seed={} horizon={} dt={} reps={} grid={}",
            s.seed,
            s.budget.horizon,
            s.budget.dt,
            s.budget.replications,
            grid.join(";")
        );
        line
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(format!("write failed: {e}"));
        writeln!(out, "{}", self.provenance()).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(format!("write failed: {e}"));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            let [opt_v, opt_se] = est_fields(&r.mse_opt_sim);
            let [age_v, age_se] = est_fields(&r.mse_age_sim);
            let [zw_v, zw_se] = est_fields(&r.mse_zero_wait_sim);
            let [per_v, per_se] = est_fields(&r.mse_periodic_sim);
            w.write_record([
                r.x.to_string(),
                r.beta_signal.to_string(),
                r.beta_age.to_string(),
                r.mse_opt_theory.to_string(),
                r.mse_age_theory.to_string(),
                opt_v,
                opt_se,
                age_v,
                age_se,
                zw_v,
                zw_se,
                per_v,
                per_se,
                r.flags.join(";"),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}
