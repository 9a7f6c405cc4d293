use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use remoteest::experiment::{
    run_suite, run_sweep, CheckBudget, SimBudget, Suite, SweepKind, SweepSpec,
};
use remoteest::{
    simulate_policy, solve_threshold, Error, PolicyKind, PolicySpec, RateLimit, ServiceDistribution,
    SimConfig,
};

#[derive(Parser)]
#[command(name = "remoteest", version, about = "Optimal sampling of a Wiener process over a queue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the signal-aware or age-optimal threshold.
    Solve {
        /// det:<d>, exp:<mean>, lognormal:<sigma> or discrete:<v>,<p>;...
        #[arg(long)]
        dist: ServiceDistribution,
        /// Maximum sampling rate, or `inf`.
        #[arg(long, default_value = "inf")]
        fmax: RateLimit,
        #[arg(long, default_value = "signal")]
        policy: PolicyKind,
    },
    /// Simulate one sampling policy.
    Simulate {
        #[arg(long)]
        dist: ServiceDistribution,
        /// periodic:<T>, zero-wait, age-threshold:<beta|auto> or signal-threshold:<beta|auto>
        #[arg(long)]
        policy: String,
        #[arg(long)]
        fmax: Option<RateLimit>,
        #[arg(long, default_value_t = 1e5)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 8)]
        reps: u32,
        /// Time discarded before accumulating (default 1% of the horizon).
        #[arg(long)]
        warmup: Option<f64>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Reproduce a figure sweep as CSV.
    Sweep {
        /// Preset: 1 = fmax sweep on Exp(1), 2/3 = log-normal sigma sweep at fmax 0.8/1.5.
        #[arg(long, default_value_t = 1)]
        figure: u8,
        /// Comma-separated grid overriding the preset.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Service law for an fmax sweep.
        #[arg(long, conflicts_with = "fmax")]
        dist: Option<ServiceDistribution>,
        /// Fixed rate limit for a sigma sweep.
        #[arg(long)]
        fmax: Option<f64>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        reps: Option<u32>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Run a validation suite.
    Check {
        #[arg(long, default_value = "all")]
        suite: Suite,
        /// Paths per identity check.
        #[arg(long)]
        paths: Option<u64>,
        /// Horizon of each ordering simulation.
        #[arg(long)]
        horizon: Option<f64>,
        #[command(flatten)]
        seed: SeedArg,
    },
}

#[derive(Args)]
struct SeedArg {
    #[arg(long, env = "REMOTEEST_SEED", default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Numeric(String),
    Check(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence(_) | Error::Quadrature { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn header(out: &mut impl Write, what: &str, seed: Option<u64>) -> io::Result<()> {
    write!(out, "# {} {} {what}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))?;
    if let Some(s) = seed {
        write!(out, " seed={s}")?;
    }
    writeln!(out)
}

fn emit<T: Serialize>(what: &str, seed: Option<u64>, value: &T) -> Result<(), Failure> {
    let body = toml::to_string(value).map_err(|e| Failure::Usage(format!("serialization failed: {e}")))?;
    let mut out = io::stdout().lock();
    header(&mut out, what, seed)
        .and_then(|_| out.write_all(body.as_bytes()))
        .map_err(|e| Failure::Usage(format!("cannot write to stdout: {e}")))
}

fn resolve_policy(spec: &str, dist: &ServiceDistribution, fmax: Option<RateLimit>) -> Result<PolicySpec, Failure> {
    let auto = |kind: PolicyKind| -> Result<f64, Failure> {
        let fmax = fmax.ok_or_else(|| Failure::Usage(format!("`{spec}` needs --fmax to resolve the threshold")))?;
        Ok(solve_threshold(kind, dist, fmax)?.beta)
    };
    let policy = match spec.trim() {
        "signal-threshold:auto" => PolicySpec::SignalThreshold { beta: auto(PolicyKind::Signal)? },
        "age-threshold:auto" => PolicySpec::AgeThreshold { beta: auto(PolicyKind::Age)? },
        other => other.parse()?,
    };
    if let (PolicySpec::ZeroWait, Some(RateLimit::Finite(f))) = (policy, fmax) {
        if dist.mean() * f < 1.0 {
            return Err(Failure::Usage(format!(
                "zero-wait samples at rate 1/E[Y] = {} > fmax = {f}; it is not feasible",
                1.0 / dist.mean()
            )));
        }
    }
    Ok(policy)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve { dist, fmax, policy } => {
            let sol = solve_threshold(policy, &dist, fmax)?;
            emit(&format!("solve dist={dist}"), None, &sol)
        }
        Command::Simulate { dist, policy, fmax, horizon, dt, reps, warmup, seed } => {
            let policy = resolve_policy(&policy, &dist, fmax)?;
            let mut cfg = SimConfig::new(horizon, dt, seed.seed, reps);
            if let Some(w) = warmup {
                cfg = cfg.with_warmup(w);
            }
            let res = simulate_policy(&policy, &dist, &cfg)?;
            emit(&format!("simulate dist={dist}"), Some(seed.seed), &res)
        }
        Command::Sweep { figure, grid, dist, fmax, out, horizon, dt, reps, seed } => {
            let mut spec = SweepSpec::figure(figure, seed.seed)?;
            if let Some(g) = grid {
                spec.grid = g;
            }
            match (&mut spec.kind, dist, fmax) {
                (SweepKind::FmaxSweep { dist: d }, Some(new), _) => *d = new,
                (SweepKind::SigmaSweep { fmax: f }, _, Some(new)) => *f = new,
                (_, None, None) => {}
                _ => {
                    return Err(Failure::Usage(
                        "--dist applies to figure 1, --fmax to figures 2 and 3".into(),
                    ))
                }
            }
            let defaults = SimBudget::default();
            spec.budget = SimBudget {
                horizon: horizon.unwrap_or(defaults.horizon),
                dt: dt.unwrap_or(defaults.dt),
                replications: reps.unwrap_or(defaults.replications),
            };
            let table = run_sweep(&spec)?;
            match out {
                Some(path) => {
                    let named = |e: io::Error| Failure::Usage(format!("{}: {e}", path.display()));
                    let file = File::create(&path).map_err(named)?;
                    let mut w = BufWriter::new(file);
                    table
                        .write_csv(&mut w)
                        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                    w.flush().map_err(named)
                }
                None => Ok(table.write_csv(io::stdout().lock())?),
            }
        }
        Command::Check { suite, paths, horizon, seed } => {
            let mut budget = CheckBudget::default();
            if let Some(p) = paths {
                budget.paths = p;
            }
            if let Some(h) = horizon {
                budget.horizon = h;
            }
            let outcomes = run_suite(suite, seed.seed, &budget)?;
            let failed = outcomes.iter().filter(|c| !c.passed).count();
            let mut out = io::stdout().lock();
            let _ = header(&mut out, "check", Some(seed.seed));
            for c in &outcomes {
                let _ = writeln!(out, "{c}");
            }
            let _ = writeln!(out, "{} checks, {failed} failed", outcomes.len());
            if failed > 0 {
                Err(Failure::Check(failed))
            } else {
                Ok(())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(n)) => {
            eprintln!("{n} checks failed");
            ExitCode::from(3)
        }
    }
}
