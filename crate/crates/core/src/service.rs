//! Service-time laws for the channel queue.
//!
//! Every sample handed to the channel occupies the server for an i.i.d.
//! service time `Y`. Four families are supported:
//!
//! | grammar                    | law                                             |
//! |----------------------------|-------------------------------------------------|
//! | `det:<d>`                  | point mass at `d`                               |
//! | `exp:<mean>`               | exponential with the given mean                 |
//! | `lognormal:<sigma>`        | `exp(sigma X) / E[exp(sigma X)]`, `X ~ N(0, 1)` |
//! | `discrete:v1,p1;v2,p2;...` | finite law with atoms `v_k` of mass `p_k`       |
//!
//! The log-normal family is normalized to unit mean, so only its shape
//! parameter is exposed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`ServiceDistribution::DiscreteFinite`] law.
pub const DISCRETE_MASS_TOLERANCE: f64 = 1e-12;

/// One atom of a finite service-time law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

/// The law of the i.i.d. service times.
///
/// Construct through [`ServiceDistribution::deterministic`] and friends (or
/// by parsing the text grammar) to get validated parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceDistribution {
    Deterministic { d: f64 },
    Exponential { mean: f64 },
    LogNormalUnitMean { sigma: f64 },
    DiscreteFinite { atoms: Vec<Atom> },
}

impl ServiceDistribution {
    pub fn deterministic(d: f64) -> Result<Self> {
        let dist = ServiceDistribution::Deterministic { d };
        dist.validate()?;
        Ok(dist)
    }

    pub fn exponential(mean: f64) -> Result<Self> {
        let dist = ServiceDistribution::Exponential { mean };
        dist.validate()?;
        Ok(dist)
    }

    pub fn lognormal_unit_mean(sigma: f64) -> Result<Self> {
        let dist = ServiceDistribution::LogNormalUnitMean { sigma };
        dist.validate()?;
        Ok(dist)
    }

    /// Builds a finite law from `(value, probability)` pairs. Atoms are kept
    /// in ascending order of value.
    pub fn discrete(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut atoms: Vec<Atom> = atoms
            .into_iter()
            .map(|(value, prob)| Atom { value, prob })
            .collect();
        atoms.sort_by(|a, b| a.value.total_cmp(&b.value));
        let dist = ServiceDistribution::DiscreteFinite { atoms };
        dist.validate()?;
        Ok(dist)
    }

    /// Checks the parameter invariants of the variant.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        match self {
            ServiceDistribution::Deterministic { d } => {
                if !d.is_finite() || *d < 0.0 {
                    return bad(format!("deterministic value must be finite and >= 0, got {d}"));
                }
            }
            ServiceDistribution::Exponential { mean } => {
                if !mean.is_finite() || *mean <= 0.0 {
                    return bad(format!("exponential mean must be finite and > 0, got {mean}"));
                }
            }
            ServiceDistribution::LogNormalUnitMean { sigma } => {
                if !sigma.is_finite() || *sigma <= 0.0 {
                    return bad(format!("log-normal sigma must be finite and > 0, got {sigma}"));
                }
            }
            ServiceDistribution::DiscreteFinite { atoms } => {
                if atoms.is_empty() {
                    return bad("discrete law needs at least one atom".into());
                }
                for a in atoms {
                    if !a.value.is_finite() || a.value < 0.0 {
                        return bad(format!("atom value must be finite and >= 0, got {}", a.value));
                    }
                    if !(a.prob > 0.0 && a.prob <= 1.0) {
                        return bad(format!("atom probability must lie in (0, 1], got {}", a.prob));
                    }
                }
                let total: f64 = atoms.iter().map(|a| a.prob).sum();
                if (total - 1.0).abs() > DISCRETE_MASS_TOLERANCE {
                    return bad(format!("atom probabilities sum to {total}, not 1"));
                }
            }
        }
        Ok(())
    }

    /// Draws one service time.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ServiceDistribution::Deterministic { d } => *d,
            ServiceDistribution::Exponential { mean } => {
                let e: f64 = rng.sample(Exp1);
                mean * e
            }
            ServiceDistribution::LogNormalUnitMean { sigma } => {
                let x: f64 = rng.sample(StandardNormal);
                (sigma * x - 0.5 * sigma * sigma).exp()
            }
            ServiceDistribution::DiscreteFinite { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.prob;
                    if u < acc {
                        return a.value;
                    }
                }
                atoms[atoms.len() - 1].value
            }
        }
    }

    /// `E[Y]`.
    pub fn mean(&self) -> f64 {
        match self {
            ServiceDistribution::Deterministic { d } => *d,
            ServiceDistribution::Exponential { mean } => *mean,
            ServiceDistribution::LogNormalUnitMean { .. } => 1.0,
            ServiceDistribution::DiscreteFinite { atoms } => {
                atoms.iter().map(|a| a.prob * a.value).sum()
            }
        }
    }

    /// `E[Y^2]`.
    pub fn second_moment(&self) -> f64 {
        match self {
            ServiceDistribution::Deterministic { d } => d * d,
            ServiceDistribution::Exponential { mean } => 2.0 * mean * mean,
            ServiceDistribution::LogNormalUnitMean { sigma } => (sigma * sigma).exp(),
            ServiceDistribution::DiscreteFinite { atoms } => {
                atoms.iter().map(|a| a.prob * a.value * a.value).sum()
            }
        }
    }

    /// Essential infimum: the smallest service time that can occur.
    pub fn ess_inf(&self) -> f64 {
        match self {
            ServiceDistribution::Deterministic { d } => *d,
            ServiceDistribution::Exponential { .. }
            | ServiceDistribution::LogNormalUnitMean { .. } => 0.0,
            ServiceDistribution::DiscreteFinite { atoms } => atoms
                .iter()
                .map(|a| a.value)
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Inverse CDF. For the finite law this is the generalized inverse
    /// `inf { y : P[Y <= y] >= p }`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        Ok(match self {
            ServiceDistribution::Deterministic { d } => *d,
            ServiceDistribution::Exponential { mean } => -mean * (-p).ln_1p(),
            ServiceDistribution::LogNormalUnitMean { sigma } => {
                let x = standard_normal().inverse_cdf(p);
                (sigma * x - 0.5 * sigma * sigma).exp()
            }
            ServiceDistribution::DiscreteFinite { atoms } => {
                let mut acc = 0.0;
                let mut out = atoms[atoms.len() - 1].value;
                for a in atoms {
                    acc += a.prob;
                    if acc >= p {
                        out = a.value;
                        break;
                    }
                }
                out
            }
        })
    }

    /// True when the law is a point mass at zero.
    pub fn is_zero(&self) -> bool {
        match self {
            ServiceDistribution::Deterministic { d } => *d == 0.0,
            ServiceDistribution::DiscreteFinite { atoms } => atoms.iter().all(|a| a.value == 0.0),
            _ => false,
        }
    }

    /// Returns the law of `alpha * Y`, when the family is closed under scaling.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "scale factor must be finite and > 0, got {alpha}"
            )));
        }
        match self {
            ServiceDistribution::Deterministic { d } => Self::deterministic(alpha * d),
            ServiceDistribution::Exponential { mean } => Self::exponential(alpha * mean),
            ServiceDistribution::DiscreteFinite { atoms } => {
                Self::discrete(atoms.iter().map(|a| (alpha * a.value, a.prob)))
            }
            ServiceDistribution::LogNormalUnitMean { .. } => Err(Error::InvalidDistribution(
                "unit-mean log-normal is not closed under scaling".into(),
            )),
        }
    }
}

pub(crate) fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal parameters are valid")
}

impl fmt::Display for ServiceDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServiceDistribution::Deterministic { d } => write!(f, "det:{d}"),
            ServiceDistribution::Exponential { mean } => write!(f, "exp:{mean}"),
            ServiceDistribution::LogNormalUnitMean { sigma } => write!(f, "lognormal:{sigma}"),
            ServiceDistribution::DiscreteFinite { atoms } => {
                f.write_str("discrete:")?;
                for (i, a) in atoms.iter().enumerate() {
                    if i > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "{},{}", a.value, a.prob)?;
                }
                Ok(())
            }
        }
    }
}

/// Parses a float with the dot decimal separator, independent of locale.
pub(crate) fn parse_f64(token: &str) -> Result<f64> {
    let t = token.trim();
    let v: f64 = t
        .parse()
        .map_err(|_| Error::parse(t, "expected a decimal number"))?;
    if v.is_nan() {
        return Err(Error::parse(t, "NaN is not a valid parameter"));
    }
    Ok(v)
}

impl FromStr for ServiceDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (family, params) = s
            .split_once(':')
            .ok_or_else(|| Error::parse(s, "expected <family>:<parameters>"))?;
        let dist = match family {
            "det" => Self::deterministic(parse_f64(params)?),
            "exp" => Self::exponential(parse_f64(params)?),
            "lognormal" => Self::lognormal_unit_mean(parse_f64(params)?),
            "discrete" => {
                let mut atoms = Vec::new();
                for pair in params.split(';').filter(|p| !p.trim().is_empty()) {
                    let (v, p) = pair
                        .split_once(',')
                        .ok_or_else(|| Error::parse(pair, "expected <value>,<probability>"))?;
                    atoms.push((parse_f64(v)?, parse_f64(p)?));
                }
                Self::discrete(atoms)
            }
            other => {
                return Err(Error::parse(
                    other,
                    "unknown family (expected det, exp, lognormal or discrete)",
                ))
            }
        };
        dist.map_err(|e| match e {
            Error::InvalidDistribution(reason) => Error::parse(s, reason),
            e => e,
        })
    }
}
