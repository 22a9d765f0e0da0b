//! Log densities and log mass functions with full normalizing constants.
//!
//! Every function is generic over [`Real`], so the same code evaluates on
//! `f64` and on autodiff variables. Values outside the support return
//! [`DensityError::OutOfSupport`]; invalid parameters return
//! [`DensityError::InvalidParameter`].

use std::f64::consts::PI;

use thiserror::Error;

use crate::autodiff::Real;
use crate::special::{ln_gamma, HALF_LN_2PI};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("{dist}: value {value} outside the support")]
    OutOfSupport { dist: &'static str, value: f64 },
    #[error("{dist}: parameter {param} = {value} outside its domain")]
    InvalidParameter {
        dist: &'static str,
        param: &'static str,
        value: f64,
    },
}

type Result<T> = std::result::Result<T, DensityError>;

fn positive(dist: &'static str, param: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DensityError::InvalidParameter { dist, param, value })
    }
}

fn support(dist: &'static str, ok: bool, value: f64) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(DensityError::OutOfSupport { dist, value })
    }
}

/// N(y | mu, sigma), sigma the standard deviation.
pub fn normal_lpdf<T: Real>(y: T, mu: T, sigma: T) -> Result<T> {
    positive("normal", "sigma", sigma.value())?;
    let z = (y - mu) / sigma;
    Ok(-(z.square() * 0.5 + sigma.ln()) - HALF_LN_2PI)
}

/// N(y | mu, sigma) for an observed `y`.
pub fn normal_obs_lpdf<T: Real>(y: f64, mu: T, sigma: T) -> Result<T> {
    positive("normal", "sigma", sigma.value())?;
    let z = (mu - y) / sigma;
    Ok(-(z.square() * 0.5 + sigma.ln()) - HALF_LN_2PI)
}

/// N(y | mu, sigma) with constant location and scale.
pub fn normal_fixed_lpdf<T: Real>(y: T, mu: f64, sigma: f64) -> Result<T> {
    positive("normal", "sigma", sigma)?;
    let z = (y - mu) / sigma;
    Ok(-(z.square() * 0.5) - (sigma.ln() + HALF_LN_2PI))
}

pub fn lognormal_lpdf<T: Real>(y: T, mu: T, sigma: T) -> Result<T> {
    support("lognormal", y.value() > 0.0, y.value())?;
    positive("lognormal", "sigma", sigma.value())?;
    let ly = y.ln();
    Ok(normal_lpdf(ly, mu, sigma)? - ly)
}

pub fn cauchy_lpdf<T: Real>(y: T, location: T, scale: T) -> Result<T> {
    positive("cauchy", "scale", scale.value())?;
    let z = (y - location) / scale;
    Ok(-(z.square().ln_1p() + scale.ln()) - PI.ln())
}

/// Uniform on (lb, ub).
pub fn uniform_lpdf<T: Real>(y: T, lb: f64, ub: f64) -> Result<T> {
    if !(lb < ub) {
        return Err(DensityError::InvalidParameter {
            dist: "uniform",
            param: "ub",
            value: ub,
        });
    }
    let v = y.value();
    support("uniform", v > lb && v < ub, v)?;
    Ok(y.constant_like(-(ub - lb).ln()))
}

/// Gamma(y | shape, rate).
pub fn gamma_lpdf<T: Real>(y: T, shape: T, rate: T) -> Result<T> {
    support("gamma", y.value() > 0.0, y.value())?;
    positive("gamma", "shape", shape.value())?;
    positive("gamma", "rate", rate.value())?;
    Ok(shape * rate.ln() - shape.ln_gamma() + (shape - 1.0) * y.ln() - rate * y)
}

/// Gamma(y | shape, rate) with constant hyper-parameters.
pub fn gamma_fixed_lpdf<T: Real>(y: T, shape: f64, rate: f64) -> Result<T> {
    support("gamma", y.value() > 0.0, y.value())?;
    positive("gamma", "shape", shape)?;
    positive("gamma", "rate", rate)?;
    Ok(y.ln() * (shape - 1.0) - y * rate + (shape * rate.ln() - ln_gamma(shape)))
}

/// InvGamma(y | shape, scale).
pub fn inv_gamma_lpdf<T: Real>(y: T, shape: T, scale: T) -> Result<T> {
    support("inv_gamma", y.value() > 0.0, y.value())?;
    positive("inv_gamma", "shape", shape.value())?;
    positive("inv_gamma", "scale", scale.value())?;
    Ok(shape * scale.ln() - shape.ln_gamma() - (shape + 1.0) * y.ln() - scale / y)
}

pub fn inv_gamma_fixed_lpdf<T: Real>(y: T, shape: f64, scale: f64) -> Result<T> {
    support("inv_gamma", y.value() > 0.0, y.value())?;
    positive("inv_gamma", "shape", shape)?;
    positive("inv_gamma", "scale", scale)?;
    Ok(-(y.ln() * (shape + 1.0) + y.recip_scaled(scale)) + (shape * scale.ln() - ln_gamma(shape)))
}

pub fn exponential_lpdf<T: Real>(y: T, rate: T) -> Result<T> {
    support("exponential", y.value() >= 0.0, y.value())?;
    positive("exponential", "rate", rate.value())?;
    Ok(rate.ln() - rate * y)
}

/// Weibull(y | shape k, scale lambda).
pub fn weibull_lpdf<T: Real>(y: T, shape: T, scale: T) -> Result<T> {
    support("weibull", y.value() >= 0.0, y.value())?;
    positive("weibull", "shape", shape.value())?;
    positive("weibull", "scale", scale.value())?;
    let log_ratio = y.ln() - scale.ln();
    Ok(shape.ln() - scale.ln() + (shape - 1.0) * log_ratio - (log_ratio * shape).exp())
}

/// Dirichlet(theta | alpha) on the simplex.
pub fn dirichlet_lpdf<T: Real>(theta: &[T], alpha: &[T]) -> Result<T> {
    if theta.len() != alpha.len() || theta.len() < 2 {
        return Err(DensityError::InvalidParameter {
            dist: "dirichlet",
            param: "alpha",
            value: alpha.len() as f64,
        });
    }
    for a in alpha {
        positive("dirichlet", "alpha", a.value())?;
    }
    let total: f64 = theta.iter().map(Real::value).sum();
    for t in theta {
        support("dirichlet", t.value() > 0.0, t.value())?;
    }
    support("dirichlet", (total - 1.0).abs() < 1e-8, total)?;
    let alpha_sum = T::sum(alpha);
    let mut terms = Vec::with_capacity(2 * theta.len() + 1);
    terms.push(alpha_sum.ln_gamma());
    for (&t, &a) in theta.iter().zip(alpha) {
        terms.push((a - 1.0) * t.ln() - a.ln_gamma());
    }
    Ok(T::sum(&terms))
}

/// Dirichlet(theta | alpha) with constant concentrations.
pub fn dirichlet_fixed_lpdf<T: Real>(theta: &[T], alpha: &[f64]) -> Result<T> {
    let first = theta.first().ok_or(DensityError::InvalidParameter {
        dist: "dirichlet",
        param: "alpha",
        value: 0.0,
    })?;
    let alpha: Vec<T> = alpha.iter().map(|&a| first.constant_like(a)).collect();
    dirichlet_lpdf(theta, &alpha)
}

fn count(dist: &'static str, x: f64) -> Result<()> {
    support(dist, x >= 0.0 && x.fract() == 0.0 && x.is_finite(), x)
}

/// Poisson(x | rate).
pub fn poisson_lpmf<T: Real>(x: f64, rate: T) -> Result<T> {
    count("poisson", x)?;
    let r = rate.value();
    if !(r >= 0.0) || !r.is_finite() {
        return Err(DensityError::InvalidParameter {
            dist: "poisson",
            param: "rate",
            value: r,
        });
    }
    if x == 0.0 {
        return Ok(-rate);
    }
    Ok(rate.ln() * x - rate - ln_gamma(x + 1.0))
}

/// Poisson(x | exp(log_rate)).
pub fn poisson_log_lpmf<T: Real>(x: f64, log_rate: T) -> Result<T> {
    count("poisson_log", x)?;
    Ok(log_rate * x - log_rate.exp() - ln_gamma(x + 1.0))
}

/// Bernoulli(y | logistic(logit)).
pub fn bernoulli_logit_lpmf<T: Real>(y: f64, logit: T) -> Result<T> {
    if y == 1.0 {
        Ok(-(-logit).softplus())
    } else if y == 0.0 {
        Ok(-logit.softplus())
    } else {
        Err(DensityError::OutOfSupport {
            dist: "bernoulli_logit",
            value: y,
        })
    }
}

/// Catalog of the univariate distributions used by the model zoo.
#[derive(Clone, Copy, Debug)]
pub enum Density<T> {
    Normal { mu: T, sigma: T },
    LogNormal { mu: T, sigma: T },
    Cauchy { location: T, scale: T },
    Uniform { lb: f64, ub: f64 },
    Gamma { shape: T, rate: T },
    InvGamma { shape: T, scale: T },
    Exponential { rate: T },
    Weibull { shape: T, scale: T },
    Poisson { rate: T },
    PoissonLog { log_rate: T },
    BernoulliLogit { logit: T },
}

impl<T: Real> Density<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Density::Normal { .. } => "normal",
            Density::LogNormal { .. } => "lognormal",
            Density::Cauchy { .. } => "cauchy",
            Density::Uniform { .. } => "uniform",
            Density::Gamma { .. } => "gamma",
            Density::InvGamma { .. } => "inv_gamma",
            Density::Exponential { .. } => "exponential",
            Density::Weibull { .. } => "weibull",
            Density::Poisson { .. } => "poisson",
            Density::PoissonLog { .. } => "poisson_log",
            Density::BernoulliLogit { .. } => "bernoulli_logit",
        }
    }

    /// Log density (or mass) at `value`. Discrete entries take the value's
    /// numeric content as the observed count.
    pub fn log_density(&self, value: T) -> Result<T> {
        match *self {
            Density::Normal { mu, sigma } => normal_lpdf(value, mu, sigma),
            Density::LogNormal { mu, sigma } => lognormal_lpdf(value, mu, sigma),
            Density::Cauchy { location, scale } => cauchy_lpdf(value, location, scale),
            Density::Uniform { lb, ub } => uniform_lpdf(value, lb, ub),
            Density::Gamma { shape, rate } => gamma_lpdf(value, shape, rate),
            Density::InvGamma { shape, scale } => inv_gamma_lpdf(value, shape, scale),
            Density::Exponential { rate } => exponential_lpdf(value, rate),
            Density::Weibull { shape, scale } => weibull_lpdf(value, shape, scale),
            Density::Poisson { rate } => poisson_lpmf(value.value(), rate),
            Density::PoissonLog { log_rate } => poisson_log_lpmf(value.value(), log_rate),
            Density::BernoulliLogit { logit } => bernoulli_logit_lpmf(value.value(), logit),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Var};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn reference_values() {
        assert!(close(normal_lpdf(0.0, 0.0, 1.0).unwrap(), -0.918_938_533_204_672_7, 1e-15));
        assert_eq!(poisson_lpmf(0.0, 1.0).unwrap(), -1.0);
        let want = 10.0 * 10f64.ln() - ln_gamma(10.0) + 9.0 * 1f64.ln() - 10.0;
        assert!(close(gamma_lpdf(1.0, 10.0, 10.0).unwrap(), want, 1e-14));
        let third = 1.0 / 3.0;
        let d = dirichlet_lpdf(&[third, third, third], &[1.0, 1.0, 1.0]).unwrap();
        assert!(close(d, 2f64.ln(), 1e-14));
        // Weibull(1; 1.5, 1) = 1.5 e^{−1}
        assert!(close(weibull_lpdf(1.0, 1.5, 1.0).unwrap(), 1.5f64.ln() - 1.0, 1e-15));
        assert!(close(poisson_log_lpmf(3.0, 0.0).unwrap(), -1.0 - 6f64.ln(), 1e-14));
    }

    #[test]
    fn fixed_variants_agree() {
        assert!(close(gamma_fixed_lpdf(0.7, 2.5, 4.2).unwrap(), gamma_lpdf(0.7, 2.5, 4.2).unwrap(), 1e-14));
        assert!(close(inv_gamma_fixed_lpdf(0.7, 1.0, 1.0).unwrap(), inv_gamma_lpdf(0.7, 1.0, 1.0).unwrap(), 1e-14));
        assert!(close(normal_fixed_lpdf(0.3, -1.0, 2.0).unwrap(), normal_lpdf(0.3, -1.0, 2.0).unwrap(), 1e-14));
        assert!(close(normal_obs_lpdf(0.3, -1.0, 2.0).unwrap(), normal_lpdf(0.3, -1.0, 2.0).unwrap(), 1e-14));
        assert!(close(
            dirichlet_fixed_lpdf(&[0.2, 0.8], &[3.0, 1000.0]).unwrap(),
            dirichlet_lpdf(&[0.2, 0.8], &[3.0, 1000.0]).unwrap(),
            1e-14
        ));
    }

    #[test]
    fn support_errors_differ_from_parameter_errors() {
        assert!(matches!(gamma_lpdf(-1.0, 1.0, 1.0), Err(DensityError::OutOfSupport { .. })));
        assert!(matches!(gamma_lpdf(1.0, -1.0, 1.0), Err(DensityError::InvalidParameter { .. })));
        assert!(matches!(normal_lpdf(0.0, 0.0, 0.0), Err(DensityError::InvalidParameter { .. })));
        assert!(matches!(poisson_lpmf(1.5, 1.0), Err(DensityError::OutOfSupport { .. })));
        assert!(matches!(poisson_lpmf(-1.0, 1.0), Err(DensityError::OutOfSupport { .. })));
        assert!(matches!(uniform_lpdf(2.0, 0.0, 1.0), Err(DensityError::OutOfSupport { .. })));
        assert!(matches!(bernoulli_logit_lpmf(2.0, 0.0), Err(DensityError::OutOfSupport { .. })));
        assert!(matches!(
            dirichlet_lpdf(&[0.5, 0.6], &[1.0, 1.0]),
            Err(DensityError::OutOfSupport { .. })
        ));
        assert!(matches!(lognormal_lpdf(0.0, 0.0, 1.0), Err(DensityError::OutOfSupport { .. })));
    }

    #[test]
    fn poisson_zero_rate() {
        assert_eq!(poisson_lpmf(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(poisson_lpmf(2.0, 0.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn bernoulli_masses_sum_to_one() {
        for &l in &[-30.0, -3.2, -0.1, 0.0, 0.4, 5.0, 30.0] {
            for &y in &[0.0, 1.0] {
                let a = bernoulli_logit_lpmf(y, l).unwrap().exp();
                let b = bernoulli_logit_lpmf(1.0 - y, -l).unwrap().exp();
                // Mass at y under l equals mass at 1 − y under −l.
                assert!((a - b).abs() < 1e-15);
                let other = bernoulli_logit_lpmf(1.0 - y, l).unwrap().exp();
                assert!((a + other - 1.0).abs() < 1e-12);
            }
        }
    }

    /// Adaptive Simpson on [a, b].
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        // Pre-split so narrow peaks are not missed by the first estimate.
        let pieces = 64;
        let w = (b - a) / pieces as f64;
        (0..pieces)
            .map(|i| {
                let (lo, hi) = (a + w * i as f64, a + w * (i + 1) as f64);
                let (fa, fb, fm) = (f(lo), f(hi), f(0.5 * (lo + hi)));
                let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
                rec(f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 50)
            })
            .sum()
    }

    #[test]
    fn univariate_densities_integrate_to_one() {
        let real_line: Vec<(&str, Box<dyn Fn(f64) -> f64>, f64, f64)> = vec![
            ("normal", Box::new(|x| normal_lpdf(x, 0.7, 1.9).unwrap().exp()), 0.7 - 8.0 * 1.9, 0.7 + 8.0 * 1.9),
        ];
        for (name, f, a, b) in &real_line {
            let mass = simpson(f.as_ref(), *a, *b, 1e-10);
            assert!((mass - 1.0).abs() < 1e-6, "{name}: {mass}");
        }
        // Cauchy via x = loc + s tan(u), dx = s sec²(u) du.
        let (loc, s) = (0.0, 10.0);
        let half = std::f64::consts::FRAC_PI_2 * (1.0 - 2e-12);
        let f = |u: f64| cauchy_lpdf(loc + s * u.tan(), loc, s).unwrap().exp() * s / u.cos().powi(2);
        let mass = simpson(&f, -half, half, 1e-10);
        assert!((mass - 1.0).abs() < 1e-6, "cauchy {mass}");

        // Positive support via x = e^u.
        let positive: Vec<(&str, Box<dyn Fn(f64) -> f64>)> = vec![
            ("lognormal", Box::new(|x| lognormal_lpdf(x, 0.0, 1.0).unwrap())),
            ("gamma", Box::new(|x| gamma_lpdf(x, 2.5, 4.2).unwrap())),
            ("gamma10", Box::new(|x| gamma_lpdf(x, 10.0, 10.0).unwrap())),
            ("inv_gamma", Box::new(|x| inv_gamma_lpdf(x, 3.0, 2.0).unwrap())),
            ("exponential", Box::new(|x| exponential_lpdf(x, 0.1).unwrap())),
            ("weibull", Box::new(|x| weibull_lpdf(x, 1.5, 1.0).unwrap())),
        ];
        for (name, lp) in &positive {
            let g = |u: f64| (lp(u.exp()) + u).exp();
            let mass = simpson(&g, -40.0, 9.0, 1e-10);
            assert!((mass - 1.0).abs() < 1e-6, "{name}: {mass}");
        }
        let mass = simpson(&|x| uniform_lpdf(x, -2.0, 3.0).unwrap().exp(), -2.0 + 1e-12, 3.0 - 1e-12, 1e-10);
        assert!((mass - 1.0).abs() < 1e-6);

        let pmf_sum: f64 = (0..200).map(|k| poisson_lpmf(k as f64, 7.3).unwrap().exp()).sum();
        assert!((pmf_sum - 1.0).abs() < 1e-12);
    }

    fn check_gradients(f: &dyn for<'t> Fn(&[Var<'t>]) -> Var<'t>, g: &dyn Fn(&[f64]) -> f64, at: &[f64]) {
        let tape = Tape::new();
        let vs = tape.vars(at);
        let out = f(&vs);
        let grad = tape.gradient(out, &vs).unwrap();
        for i in 0..at.len() {
            let h = 1e-6 * (at[i].abs() + 1.0);
            let mut up = at.to_vec();
            let mut dn = at.to_vec();
            up[i] += h;
            dn[i] -= h;
            let fd = (g(&up) - g(&dn)) / (2.0 * h);
            let err = (grad[i] - fd).abs() / fd.abs().max(1.0);
            assert!(err < 1e-6, "coordinate {i}: ad {} fd {fd}", grad[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(&|v| normal_lpdf(v[0], v[1], v[2]).unwrap(), &|x| normal_lpdf(x[0], x[1], x[2]).unwrap(), &[0.3, -0.4, 1.7]);
        check_gradients(&|v| lognormal_lpdf(v[0], v[1], v[2]).unwrap(), &|x| lognormal_lpdf(x[0], x[1], x[2]).unwrap(), &[1.3, 0.2, 0.8]);
        check_gradients(&|v| cauchy_lpdf(v[0], v[1], v[2]).unwrap(), &|x| cauchy_lpdf(x[0], x[1], x[2]).unwrap(), &[2.0, -1.0, 10.0]);
        check_gradients(&|v| gamma_lpdf(v[0], v[1], v[2]).unwrap(), &|x| gamma_lpdf(x[0], x[1], x[2]).unwrap(), &[0.9, 2.5, 4.2]);
        check_gradients(&|v| inv_gamma_lpdf(v[0], v[1], v[2]).unwrap(), &|x| inv_gamma_lpdf(x[0], x[1], x[2]).unwrap(), &[0.9, 1.5, 1.2]);
        check_gradients(&|v| exponential_lpdf(v[0], v[1]).unwrap(), &|x| exponential_lpdf(x[0], x[1]).unwrap(), &[0.9, 0.1]);
        check_gradients(&|v| weibull_lpdf(v[0], v[1], v[2]).unwrap(), &|x| weibull_lpdf(x[0], x[1], x[2]).unwrap(), &[0.9, 1.5, 1.3]);
        check_gradients(&|v| poisson_lpmf(3.0, v[0]).unwrap(), &|x| poisson_lpmf(3.0, x[0]).unwrap(), &[2.2]);
        check_gradients(&|v| poisson_log_lpmf(3.0, v[0]).unwrap(), &|x| poisson_log_lpmf(3.0, x[0]).unwrap(), &[0.2]);
        check_gradients(&|v| bernoulli_logit_lpmf(1.0, v[0]).unwrap(), &|x| bernoulli_logit_lpmf(1.0, x[0]).unwrap(), &[-0.7]);
        check_gradients(&|v| bernoulli_logit_lpmf(0.0, v[0]).unwrap(), &|x| bernoulli_logit_lpmf(0.0, x[0]).unwrap(), &[1.3]);
        // Dirichlet: free coordinates (θ₁, θ₂), θ₃ = 1 − θ₁ − θ₂, plus α.
        check_gradients(
            &|v| {
                let t3 = (v[0] + v[1]).rsub(1.0);
                dirichlet_lpdf(&[v[0], v[1], t3], &v[2..5]).unwrap()
            },
            &|x| dirichlet_lpdf(&[x[0], x[1], 1.0 - x[0] - x[1]], &x[2..5]).unwrap(),
            &[0.2, 0.5, 1.5, 2.0, 3.5],
        );
    }

    #[test]
    fn catalog_dispatch() {
        let d = Density::Gamma { shape: 10.0, rate: 10.0 };
        assert_eq!(d.name(), "gamma");
        assert_eq!(d.log_density(1.0).unwrap(), gamma_lpdf(1.0, 10.0, 10.0).unwrap());
        let p = Density::Poisson { rate: 1.0 };
        assert_eq!(p.log_density(0.0).unwrap(), -1.0);
    }
}
