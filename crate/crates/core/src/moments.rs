//! The four moment functionals that drive the optimal thresholds:
//!
//! * `g1(beta) = E[max(beta, W_Y^2)]`
//! * `g2(beta) = E[max(beta^2, W_Y^4)]`
//! * `h1(beta) = E[max(beta, Y)]`
//! * `h2(beta) = E[max(beta^2, Y^2)]`
//!
//! `W_Y` is the Wiener increment accumulated over one service time. Given
//! `Y = y` it is `sqrt(y) Z` with `Z ~ N(0, 1)`, so the signal functionals
//! are expectations over `Y` of closed-form Gaussian kernels
//! ([`gauss_kernel_max2`], [`gauss_kernel_max4`]). Point-mass and finite laws
//! are summed exactly; continuous laws use adaptive quadrature.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, Integral};
use crate::service::ServiceDistribution;

/// Relative tolerance requested from the quadrature.
pub const DEFAULT_REL_TOL: f64 = 1e-11;

/// Loosest relative error accepted before a functional evaluation is
/// reported as failed.
pub const REQUIRED_REL_TOL: f64 = 1e-8;

// Upper truncation for the exponential law, in units of the mean. The
// neglected tail of E[Y^2] is below 1e-18 relative.
const EXP_UPPER: f64 = 50.0;
// Truncation of the standard normal driving the log-normal law.
const NORMAL_TAIL: f64 = 10.0;

fn pdf(a: f64) -> f64 {
    (-0.5 * a * a).exp() / (2.0 * PI).sqrt()
}

/// `P[Z > a]`.
fn upper_tail(a: f64) -> f64 {
    0.5 * erfc(a * FRAC_1_SQRT_2)
}

fn check_nonneg(name: &'static str, value: f64) -> Result<()> {
    if value.is_nan() || value < 0.0 {
        Err(Error::NegativeInput { name, value })
    } else {
        Ok(())
    }
}

fn kernel2(beta: f64, y: f64) -> f64 {
    if y == 0.0 {
        return beta;
    }
    let a = (beta / y).sqrt();
    beta * erf(a * FRAC_1_SQRT_2) + 2.0 * y * (a * pdf(a) + upper_tail(a))
}

fn kernel4(beta: f64, y: f64) -> f64 {
    if y == 0.0 {
        return beta * beta;
    }
    let a = (beta / y).sqrt();
    beta * beta * erf(a * FRAC_1_SQRT_2)
        + 2.0 * y * y * ((a * a * a + 3.0 * a) * pdf(a) + 3.0 * upper_tail(a))
}

/// `E[max(beta, y Z^2)]` for a standard normal `Z`.
///
/// With `a = sqrt(beta / y)` this is
/// `beta (2 Phi(a) - 1) + 2 y (a phi(a) + 1 - Phi(a))`. At `y = 0` the value
/// is `beta` by continuity.
pub fn gauss_kernel_max2(beta: f64, y: f64) -> Result<f64> {
    check_nonneg("beta", beta)?;
    check_nonneg("y", y)?;
    Ok(kernel2(beta, y))
}

/// `E[max(beta^2, y^2 Z^4)]` for a standard normal `Z`.
pub fn gauss_kernel_max4(beta: f64, y: f64) -> Result<f64> {
    check_nonneg("beta", beta)?;
    check_nonneg("y", y)?;
    Ok(kernel4(beta, y))
}

/// All four functionals at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentFunctionals {
    pub beta: f64,
    pub g1: f64,
    pub g2: f64,
    pub h1: f64,
    pub h2: f64,
    /// Largest relative error estimate among the four evaluations.
    pub rel_tol_achieved: f64,
}

impl MomentFunctionals {
    pub fn evaluate(beta: f64, dist: &ServiceDistribution) -> Result<Self> {
        let (g1, e1) = expect_over(dist, beta, Kernel::Max2)?;
        let (g2, e2) = expect_over(dist, beta, Kernel::Max4)?;
        let (h1, e3) = expect_over(dist, beta, Kernel::AgeMax)?;
        let (h2, e4) = expect_over(dist, beta, Kernel::AgeMaxSq)?;
        Ok(MomentFunctionals {
            beta,
            g1,
            g2,
            h1,
            h2,
            rel_tol_achieved: e1.max(e2).max(e3).max(e4),
        })
    }
}

/// `(E[max(beta, W_Y^2)], E[max(beta^2, W_Y^4)])`.
pub fn functionals_signal(beta: f64, dist: &ServiceDistribution) -> Result<(f64, f64)> {
    let (g1, _) = expect_over(dist, beta, Kernel::Max2)?;
    let (g2, _) = expect_over(dist, beta, Kernel::Max4)?;
    Ok((g1, g2))
}

/// `(E[max(beta, Y)], E[max(beta^2, Y^2)])`.
pub fn functionals_age(beta: f64, dist: &ServiceDistribution) -> Result<(f64, f64)> {
    let (h1, _) = expect_over(dist, beta, Kernel::AgeMax)?;
    let (h2, _) = expect_over(dist, beta, Kernel::AgeMaxSq)?;
    Ok((h1, h2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kernel {
    Max2,
    Max4,
    AgeMax,
    AgeMaxSq,
}

impl Kernel {
    fn eval(self, beta: f64, y: f64) -> f64 {
        match self {
            Kernel::Max2 => kernel2(beta, y),
            Kernel::Max4 => kernel4(beta, y),
            Kernel::AgeMax => beta.max(y),
            Kernel::AgeMaxSq => (beta * beta).max(y * y),
        }
    }
}

/// `E_Y[kernel(beta, Y)]` with the relative error estimate.
fn expect_over(dist: &ServiceDistribution, beta: f64, kernel: Kernel) -> Result<(f64, f64)> {
    check_nonneg("beta", beta)?;
    if !beta.is_finite() {
        return Err(Error::NoConvergence(format!("threshold {beta} is not finite")));
    }
    match dist {
        ServiceDistribution::Deterministic { d } => Ok((kernel.eval(beta, *d), 0.0)),
        ServiceDistribution::DiscreteFinite { atoms } => Ok((
            atoms.iter().map(|a| a.prob * kernel.eval(beta, a.value)).sum(),
            0.0,
        )),
        ServiceDistribution::Exponential { mean } => {
            let m = *mean;
            match kernel {
                Kernel::AgeMax => Ok((beta + m * (-beta / m).exp(), 0.0)),
                Kernel::AgeMaxSq => Ok((
                    beta * beta + (-beta / m).exp() * (2.0 * beta * m + 2.0 * m * m),
                    0.0,
                )),
                _ => {
                    // Integrate over u = y / m against e^{-u}.
                    let breaks = [beta / m, 1.0, 5.0, 15.0];
                    let r = integrate(
                        |u| kernel.eval(beta, m * u) * (-u).exp(),
                        0.0,
                        EXP_UPPER,
                        &breaks,
                        DEFAULT_REL_TOL,
                        0.0,
                    )?;
                    accept(r)
                }
            }
        }
        ServiceDistribution::LogNormalUnitMean { sigma } => {
            // Y = exp(sigma x - sigma^2 / 2) with x standard normal; the
            // upper limit covers the mode of the y^2-weighted density at 2 sigma.
            let s = *sigma;
            let lo = -NORMAL_TAIL;
            let hi = 2.0 * s + NORMAL_TAIL;
            let mut breaks = vec![0.0, s, 2.0 * s];
            if beta > 0.0 {
                breaks.push((beta.ln() + 0.5 * s * s) / s);
            }
            let r = integrate(
                |x| kernel.eval(beta, (s * x - 0.5 * s * s).exp()) * pdf(x),
                lo,
                hi,
                &breaks,
                DEFAULT_REL_TOL,
                0.0,
            )?;
            accept(r)
        }
    }
}

fn accept(r: Integral) -> Result<(f64, f64)> {
    let rel = r.rel_error();
    if rel > REQUIRED_REL_TOL {
        return Err(Error::Quadrature {
            target: REQUIRED_REL_TOL,
            achieved: rel,
        });
    }
    Ok((r.value, rel))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson over z with the kink points +-a split out; an oracle
    /// independent of both the closed forms and the Gauss-Kronrod rule.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 1 { n + 1 } else { n };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    fn brute_force_over_z(g: impl Fn(f64) -> f64, kink: f64) -> f64 {
        let lim = 8.0;
        let w = |z: f64| g(z) * pdf(z);
        if kink > 0.0 && kink < lim {
            2.0 * (simpson(w, 0.0, kink, 40_000) + simpson(w, kink, lim, 40_000))
        } else {
            2.0 * simpson(w, 0.0, lim, 80_000)
        }
    }

    #[test]
    fn kernel_max2_examples() {
        assert!((gauss_kernel_max2(0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let big = gauss_kernel_max2(100.0, 1.0).unwrap();
        assert!((big - 100.0).abs() / 100.0 < 1e-6);
        let oracle = brute_force_over_z(|z| (z * z).max(1.0), 1.0);
        assert!((gauss_kernel_max2(1.0, 1.0).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn kernel_max4_examples() {
        assert!((gauss_kernel_max4(0.0, 1.0).unwrap() - 3.0).abs() < 1e-14);
        let sat = gauss_kernel_max4(10.0, 1.0).unwrap();
        assert!((sat - 100.0).abs() / 100.0 < 0.005, "{sat}");
        let oracle = brute_force_over_z(|z| z.powi(4).max(1.0), 1.0);
        assert!((gauss_kernel_max4(1.0, 1.0).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn closed_form_kernels_match_quadrature_on_grid() {
        for &beta in &[0.01f64, 0.1, 1.0, 10.0] {
            for &y in &[0.1f64, 1.0, 10.0] {
                let kink = (beta / y).sqrt();
                let o2 = brute_force_over_z(|z| (y * z * z).max(beta), kink);
                let o4 = brute_force_over_z(|z| (y * y * z.powi(4)).max(beta * beta), kink);
                let k2 = gauss_kernel_max2(beta, y).unwrap();
                let k4 = gauss_kernel_max4(beta, y).unwrap();
                assert!((k2 - o2).abs() <= 1e-8 * o2, "max2 beta={beta} y={y}: {k2} vs {o2}");
                assert!((k4 - o4).abs() <= 1e-8 * o4, "max4 beta={beta} y={y}: {k4} vs {o4}");
            }
        }
    }

    #[test]
    fn kernels_reject_negative_inputs() {
        assert!(gauss_kernel_max2(-1.0, 1.0).is_err());
        assert!(gauss_kernel_max4(1.0, -0.5).is_err());
        assert_eq!(gauss_kernel_max2(2.0, 0.0).unwrap(), 2.0);
        assert_eq!(gauss_kernel_max4(2.0, 0.0).unwrap(), 4.0);
    }

    /// For Y ~ Exp(m), W_Y is Laplace with scale b = sqrt(m / 2), so |W_Y| is
    /// exponential with mean b and both signal functionals have closed forms.
    fn laplace_oracle(beta: f64, m: f64) -> (f64, f64) {
        let b = (m / 2.0).sqrt();
        let a = beta.sqrt();
        let e = (-a / b).exp();
        let g1 = a * a + e * (2.0 * a * b + 2.0 * b * b);
        let g2 = a.powi(4)
            + e * (4.0 * a.powi(3) * b
                + 12.0 * a * a * b * b
                + 24.0 * a * b.powi(3)
                + 24.0 * b.powi(4));
        (g1, g2)
    }

    #[test]
    fn exponential_signal_functionals_match_laplace_closed_form() {
        for &m in &[0.5, 1.0, 3.0] {
            for &beta in &[0.0, 1e-4, 0.3, 1.0, 4.0, 50.0] {
                let (g1, g2) = functionals_signal(beta, &ServiceDistribution::exponential(m).unwrap()).unwrap();
                let (o1, o2) = laplace_oracle(beta, m);
                assert!((g1 - o1).abs() <= 1e-9 * o1, "g1 m={m} beta={beta}: {g1} vs {o1}");
                assert!((g2 - o2).abs() <= 1e-9 * o2, "g2 m={m} beta={beta}: {g2} vs {o2}");
            }
        }
    }

    #[test]
    fn exponential_signal_functionals_match_monte_carlo() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        use rand_distr::{Exp1, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000_000;
        let (mut s1, mut s11, mut s2, mut s22) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let y: f64 = rng.sample(Exp1);
            let z: f64 = rng.sample(StandardNormal);
            let w2 = y * z * z;
            let v1 = w2.max(1.0);
            let v2 = (w2 * w2).max(1.0);
            s1 += v1;
            s11 += v1 * v1;
            s2 += v2;
            s22 += v2 * v2;
        }
        let nf = n as f64;
        let (m1, m2) = (s1 / nf, s2 / nf);
        let se1 = ((s11 / nf - m1 * m1) / nf).sqrt();
        let se2 = ((s22 / nf - m2 * m2) / nf).sqrt();
        let (g1, g2) = functionals_signal(1.0, &ServiceDistribution::exponential(1.0).unwrap()).unwrap();
        assert!((g1 - m1).abs() < 4.0 * se1, "{g1} vs {m1} ± {se1}");
        assert!((g2 - m2).abs() < 4.0 * se2, "{g2} vs {m2} ± {se2}");
    }

    #[test]
    fn exponential_age_closed_form_matches_numeric_integration() {
        for &m in &[0.5, 1.0, 2.0] {
            for &beta in &[0.0, 0.2, 1.0, 3.0] {
                let (h1, h2) = functionals_age(beta, &ServiceDistribution::exponential(m).unwrap()).unwrap();
                let dens = |y: f64| (-y / m).exp() / m;
                let n1 = simpson(|y| beta.max(y) * dens(y), 0.0, beta, 20_000)
                    + simpson(|y| beta.max(y) * dens(y), beta, 60.0 * m, 200_000);
                let n2 = simpson(|y| (beta * beta).max(y * y) * dens(y), 0.0, beta, 20_000)
                    + simpson(|y| (beta * beta).max(y * y) * dens(y), beta, 60.0 * m, 200_000);
                assert!((h1 - n1).abs() < 1e-9 * n1, "h1 {h1} vs {n1}");
                assert!((h2 - n2).abs() < 1e-9 * n2, "h2 {h2} vs {n2}");
            }
        }
        let (h1, h2) = functionals_age(1.0, &ServiceDistribution::exponential(1.0).unwrap()).unwrap();
        assert!((h1 - (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((h2 - (1.0 + 4.0 * (-1.0f64).exp())).abs() < 1e-15);
        assert!((h1 - 1.3679).abs() < 1e-4 && (h2 - 2.4715).abs() < 1e-4);
    }

    #[test]
    fn lognormal_age_functionals_match_partial_expectations() {
        // E[Y 1{Y > b}] = 1 - Phi(x_b - s), E[Y^2 1{Y > b}] = e^{s^2}(1 - Phi(x_b - 2s)).
        for &s in &[0.25, 1.0, 2.0] {
            for &beta in &[0.1, 1.0, 4.0] {
                let xb = (f64::ln(beta) + 0.5 * s * s) / s;
                let cdf = |x: f64| 1.0 - upper_tail(x);
                let o1 = beta * cdf(xb) + upper_tail(xb - s);
                let o2 = beta * beta * cdf(xb) + (s * s).exp() * upper_tail(xb - 2.0 * s);
                let (h1, h2) = functionals_age(beta, &ServiceDistribution::lognormal_unit_mean(s).unwrap()).unwrap();
                assert!((h1 - o1).abs() < 1e-9 * o1, "s={s} beta={beta}: {h1} vs {o1}");
                assert!((h2 - o2).abs() < 1e-9 * o2, "s={s} beta={beta}: {h2} vs {o2}");
            }
        }
    }

    #[test]
    fn degenerate_and_zero_threshold_identities() {
        let zero = ServiceDistribution::deterministic(0.0).unwrap();
        assert_eq!(functionals_signal(2.0, &zero).unwrap(), (2.0, 4.0));
        let det = ServiceDistribution::deterministic(1.0).unwrap();
        assert_eq!(functionals_age(0.5, &det).unwrap(), (1.0, 1.0));
        let laws = [
            ServiceDistribution::deterministic(1.3).unwrap(),
            ServiceDistribution::exponential(1.0).unwrap(),
            ServiceDistribution::lognormal_unit_mean(0.5).unwrap(),
            ServiceDistribution::lognormal_unit_mean(2.0).unwrap(),
            ServiceDistribution::discrete([(0.0, 0.2), (1.0, 0.5), (3.0, 0.3)]).unwrap(),
        ];
        for d in &laws {
            let f = MomentFunctionals::evaluate(0.0, d).unwrap();
            let (m1, m2) = (d.mean(), d.second_moment());
            assert!((f.g1 - m1).abs() <= 1e-9 * m1, "{d}: g1 {}", f.g1);
            assert!((f.g2 - 3.0 * m2).abs() <= 1e-9 * m2, "{d}: g2 {}", f.g2);
            assert!((f.h1 - m1).abs() <= 1e-9 * m1, "{d}: h1 {}", f.h1);
            assert!((f.h2 - m2).abs() <= 1e-9 * m2, "{d}: h2 {}", f.h2);
            assert!(f.rel_tol_achieved <= REQUIRED_REL_TOL);
        }
    }

    #[test]
    fn wald_second_moment_is_mean_not_three_times_mean() {
        // E[W_Y^2] = E[Y]; g1 at beta = 0 is exactly that moment.
        let d = ServiceDistribution::exponential(2.0).unwrap();
        let (g1, _) = functionals_signal(0.0, &d).unwrap();
        assert!((g1 - 2.0).abs() < 1e-9);
        assert!((g1 - 6.0).abs() > 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn law() -> impl Strategy<Value = ServiceDistribution> {
            prop_oneof![
                (0.0f64..5.0).prop_map(|d| ServiceDistribution::deterministic(d).unwrap()),
                (0.05f64..5.0).prop_map(|m| ServiceDistribution::exponential(m).unwrap()),
                (0.1f64..2.0).prop_map(|s| ServiceDistribution::lognormal_unit_mean(s).unwrap()),
                (0.0f64..3.0, 0.0f64..3.0, 0.05f64..0.95).prop_map(|(a, b, p)| {
                    ServiceDistribution::discrete([(a, p), (b, 1.0 - p)]).unwrap()
                }),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn monotone_in_beta(d in law(), b1 in 0.0f64..20.0, db in 0.0f64..20.0) {
                let lo = MomentFunctionals::evaluate(b1, &d).unwrap();
                let hi = MomentFunctionals::evaluate(b1 + db, &d).unwrap();
                let slack = |v: f64| 1e-9 * v.abs().max(1.0);
                prop_assert!(hi.g1 >= lo.g1 - slack(lo.g1));
                prop_assert!(hi.g2 >= lo.g2 - slack(lo.g2));
                prop_assert!(hi.h1 >= lo.h1 - slack(lo.h1));
                prop_assert!(hi.h2 >= lo.h2 - slack(lo.h2));
            }

            #[test]
            fn sandwich_bounds(d in law(), beta in 0.0f64..30.0) {
                let f = MomentFunctionals::evaluate(beta, &d).unwrap();
                let (m1, m2) = (d.mean(), d.second_moment());
                let tol = |v: f64| 1e-9 * v.abs().max(1.0);
                prop_assert!(f.g1 >= beta.max(m1) - tol(f.g1));
                prop_assert!(f.g1 <= beta + m1 + tol(f.g1));
                prop_assert!(f.g2 >= (beta * beta).max(3.0 * m2) - tol(f.g2));
                prop_assert!(f.g2 <= beta * beta + 3.0 * m2 + tol(f.g2));
            }
        }
    }
}
