use std::ops::Range;

use crate::autodiff::Real;
use crate::data::{Dataset, Field, Kind};
use crate::densities::{
    bernoulli_logit_lpmf, gamma_fixed_lpdf, inv_gamma_fixed_lpdf, normal_fixed_lpdf, normal_lpdf, normal_obs_lpdf,
    poisson_lpmf, weibull_lpdf,
};
use crate::linalg::Matrix;
use crate::special::HALF_LN_2PI;
use crate::transforms::{Constraint, ParamBlock, ParameterLayout};

use super::{dim, ranges, scaled_sum, ModelError, ModelSpec, Obs};

pub(super) const WEIBULL_POISSON_SCHEMA: &[Field] = &[Field::new("x", &["N"], Kind::Count)];

/// Counts with a Poisson likelihood and a Weibull(1.5, 1) prior on the rate.
pub struct WeibullPoisson {
    x: Vec<f64>,
    layout: ParameterLayout,
}

impl WeibullPoisson {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        data.validate(WEIBULL_POISSON_SCHEMA)?;
        Ok(Self {
            x: data.values("x")?.to_vec(),
            layout: ParameterLayout::new(vec![ParamBlock::scalar("theta", Constraint::LowerBounded(0.0))?])?,
        })
    }
}

impl ModelSpec for WeibullPoisson {
    fn name(&self) -> &str {
        "weibull_poisson"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        self.x.len()
    }
    fn supports_subsampling(&self) -> bool {
        true
    }
    fn log_joint<T: Real>(&self, theta: &[T], obs: Obs<'_>) -> Result<T, ModelError> {
        let rate = theta[0];
        let prior = weibull_lpdf(rate, rate.constant_like(1.5), rate.constant_like(1.0))?;
        let terms = obs
            .iter(self.x.len())
            .map(|n| poisson_lpmf(self.x[n], rate))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(prior + scaled_sum(rate, &terms, obs.scale()))
    }
    fn held_out_log_lik(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        data.validate(WEIBULL_POISSON_SCHEMA)?;
        Ok(data
            .values("x")?
            .iter()
            .map(|&x| poisson_lpmf(x, theta[0]))
            .collect::<Result<_, _>>()?)
    }
}

pub(super) const MVN_SCHEMA: &[Field] = &[
    Field::new("y", &["N", "D"], Kind::Real),
    Field::new("rho", &[], Kind::Real).optional(),
];

/// Unknown mean of a multivariate normal with known equicorrelated
/// covariance (unit variances, correlation `rho`, default 0.9) and a
/// N(0, I) prior.
pub struct MvnConjugate {
    y: Vec<f64>,
    n: usize,
    d: usize,
    cov: Matrix,
    precision: Matrix,
    log_norm: f64,
    layout: ParameterLayout,
}

impl MvnConjugate {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let dims = data.validate(MVN_SCHEMA)?;
        let (n, d) = (dim(&dims, "N"), dim(&dims, "D"));
        if d == 0 {
            return Err(ModelError::Invalid("mvn_conjugate needs at least one column".into()));
        }
        let rho = data.scalar_or("rho", 0.9)?;
        let mut cov = Matrix::identity(d);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    cov[(i, j)] = rho;
                }
            }
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| ModelError::Invalid(format!("rho = {rho} gives a singular covariance")))?;
        let precision = cov.spd_inverse().expect("positive definite");
        let log_norm = -(d as f64) * HALF_LN_2PI - chol.log_abs_det().expect("positive definite");
        Ok(Self {
            y: data.values("y")?.to_vec(),
            n,
            d,
            cov,
            precision,
            log_norm,
            layout: ParameterLayout::new(vec![ParamBlock::vector("mu", Constraint::Unconstrained, d)?])?,
        })
    }

    /// Observation covariance.
    pub fn covariance(&self) -> &Matrix {
        &self.cov
    }

    /// Exact posterior mean and covariance.
    pub fn analytic_posterior(&self) -> (Vec<f64>, Matrix) {
        let d = self.d;
        let mut post_precision = Matrix::identity(d);
        for i in 0..d {
            for j in 0..d {
                post_precision[(i, j)] += self.n as f64 * self.precision[(i, j)];
            }
        }
        let post_cov = post_precision.spd_inverse().expect("positive definite");
        let mut total = vec![0.0; d];
        for row in self.y.chunks(d) {
            for (t, v) in total.iter_mut().zip(row) {
                *t += v;
            }
        }
        let mean = post_cov.mul_vec(&self.precision.mul_vec(&total));
        (mean, post_cov)
    }

    fn point<T: Real>(&self, mu: &[T], y: &[f64]) -> T {
        let r: Vec<T> = mu.iter().zip(y).map(|(&m, &v)| m - v).collect();
        let pr: Vec<T> = (0..self.d).map(|i| T::dot_const(self.precision.row(i), &r)).collect();
        T::dot(&r, &pr) * -0.5 + self.log_norm
    }
}

impl ModelSpec for MvnConjugate {
    fn name(&self) -> &str {
        "mvn_conjugate"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        self.n
    }
    fn supports_subsampling(&self) -> bool {
        true
    }
    fn log_joint<T: Real>(&self, theta: &[T], obs: Obs<'_>) -> Result<T, ModelError> {
        let mut prior = Vec::with_capacity(self.d);
        for &m in theta {
            prior.push(normal_fixed_lpdf(m, 0.0, 1.0)?);
        }
        let terms: Vec<T> = obs
            .iter(self.n)
            .map(|n| self.point(theta, &self.y[n * self.d..(n + 1) * self.d]))
            .collect();
        Ok(T::sum(&prior) + scaled_sum(theta[0], &terms, obs.scale()))
    }
    fn held_out_log_lik(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let dims = data.validate(MVN_SCHEMA)?;
        if dim(&dims, "D") != self.d {
            return Err(ModelError::Invalid("held-out data has a different dimension".into()));
        }
        Ok(data.values("y")?.chunks(self.d).map(|y| self.point(theta, y)).collect())
    }
}

pub(super) const LOGISTIC_SCHEMA: &[Field] = &[
    Field::new("x", &["N", "D"], Kind::Real),
    Field::new("y", &["N"], Kind::Binary),
];

/// Bernoulli-logit regression with independent N(0, 1) coefficients. An
/// intercept is a column of ones in `x`.
pub struct LogisticRegression {
    x: Vec<f64>,
    y: Vec<f64>,
    d: usize,
    layout: ParameterLayout,
}

impl LogisticRegression {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let dims = data.validate(LOGISTIC_SCHEMA)?;
        let d = dim(&dims, "D");
        if d == 0 {
            return Err(ModelError::Invalid("logistic_regression needs at least one covariate".into()));
        }
        Ok(Self {
            x: data.values("x")?.to_vec(),
            y: data.values("y")?.to_vec(),
            d,
            layout: ParameterLayout::new(vec![ParamBlock::vector("beta", Constraint::Unconstrained, d)?])?,
        })
    }
}

impl ModelSpec for LogisticRegression {
    fn name(&self) -> &str {
        "logistic_regression"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        self.y.len()
    }
    fn supports_subsampling(&self) -> bool {
        true
    }
    fn log_joint<T: Real>(&self, theta: &[T], obs: Obs<'_>) -> Result<T, ModelError> {
        let prior = theta
            .iter()
            .map(|&b| normal_fixed_lpdf(b, 0.0, 1.0))
            .collect::<Result<Vec<_>, _>>()?;
        let terms = obs
            .iter(self.y.len())
            .map(|n| bernoulli_logit_lpmf(self.y[n], T::dot_const(&self.x[n * self.d..(n + 1) * self.d], theta)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(T::sum(&prior) + scaled_sum(theta[0], &terms, obs.scale()))
    }
    fn held_out_log_lik(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let dims = data.validate(LOGISTIC_SCHEMA)?;
        if dim(&dims, "D") != self.d {
            return Err(ModelError::Invalid("held-out data has a different number of covariates".into()));
        }
        let x = data.values("x")?;
        Ok(data
            .values("y")?
            .iter()
            .enumerate()
            .map(|(n, &y)| bernoulli_logit_lpmf(y, f64::dot_const(&x[n * self.d..(n + 1) * self.d], theta)))
            .collect::<Result<_, _>>()?)
    }
}

pub(super) const LINREG_SCHEMA: &[Field] = &[
    Field::new("x", &["N", "D"], Kind::Real),
    Field::new("y", &["N"], Kind::Real),
];

/// Linear regression with an automatic relevance determination prior:
/// w_d ~ N(0, σ/√α_d), σ ~ InvGamma(1, 1), α_d ~ Gamma(1, 1).
pub struct LinregArd {
    x: Vec<f64>,
    y: Vec<f64>,
    d: usize,
    layout: ParameterLayout,
    blocks: [Range<usize>; 3],
}

const ARD_HYPER: f64 = 1.0;

impl LinregArd {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let dims = data.validate(LINREG_SCHEMA)?;
        let d = dim(&dims, "D");
        if d == 0 {
            return Err(ModelError::Invalid("linreg_ard needs at least one regressor".into()));
        }
        let layout = ParameterLayout::new(vec![
            ParamBlock::vector("w", Constraint::Unconstrained, d)?,
            ParamBlock::scalar("sigma", Constraint::LowerBounded(0.0))?,
            ParamBlock::vector("alpha", Constraint::LowerBounded(0.0), d)?,
        ])?;
        let r = ranges(&layout, &["w", "sigma", "alpha"]);
        Ok(Self {
            x: data.values("x")?.to_vec(),
            y: data.values("y")?.to_vec(),
            d,
            layout,
            blocks: [r[0].clone(), r[1].clone(), r[2].clone()],
        })
    }
}

impl ModelSpec for LinregArd {
    fn name(&self) -> &str {
        "linreg_ard"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        self.y.len()
    }
    fn supports_subsampling(&self) -> bool {
        true
    }
    fn log_joint<T: Real>(&self, theta: &[T], obs: Obs<'_>) -> Result<T, ModelError> {
        let w = &theta[self.blocks[0].clone()];
        let sigma = theta[self.blocks[1].start];
        let alpha = &theta[self.blocks[2].clone()];
        let mut prior = vec![inv_gamma_fixed_lpdf(sigma, ARD_HYPER, ARD_HYPER)?];
        for (&wd, &ad) in w.iter().zip(alpha) {
            prior.push(gamma_fixed_lpdf(ad, ARD_HYPER, ARD_HYPER)?);
            prior.push(normal_lpdf(wd, wd.constant_like(0.0), sigma / ad.sqrt())?);
        }
        let terms = obs
            .iter(self.y.len())
            .map(|n| normal_obs_lpdf(self.y[n], T::dot_const(&self.x[n * self.d..(n + 1) * self.d], w), sigma))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(T::sum(&prior) + scaled_sum(sigma, &terms, obs.scale()))
    }
    fn held_out_log_lik(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let dims = data.validate(LINREG_SCHEMA)?;
        if dim(&dims, "D") != self.d {
            return Err(ModelError::Invalid("held-out data has a different number of regressors".into()));
        }
        let w = &theta[self.blocks[0].clone()];
        let sigma = theta[self.blocks[1].start];
        let x = data.values("x")?;
        Ok(data
            .values("y")?
            .iter()
            .enumerate()
            .map(|(n, &y)| normal_obs_lpdf(y, f64::dot_const(&x[n * self.d..(n + 1) * self.d], w), sigma))
            .collect::<Result<_, _>>()?)
    }
}
