//! Small targets with known answers, used by the studies and tests.

use crate::autodiff::Real;
use crate::data::{Dataset, Field, Kind};
use crate::densities::{gamma_fixed_lpdf, normal_fixed_lpdf, normal_obs_lpdf};
use crate::linalg::Matrix;
use crate::special::HALF_LN_2PI;
use crate::transforms::{Constraint, ParamBlock, ParameterLayout};

use super::{dim, scaled_sum, ModelError, ModelSpec, Obs};

/// A Gamma(shape, rate) density on one positive parameter, no data.
pub struct GammaTarget {
    pub shape: f64,
    pub rate: f64,
    layout: ParameterLayout,
}

impl GammaTarget {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self {
            shape,
            rate,
            layout: ParameterLayout::new(vec![ParamBlock::scalar("theta", Constraint::LowerBounded(0.0)).unwrap()])
                .unwrap(),
        }
    }

    pub fn log_density(&self, theta: f64) -> f64 {
        gamma_fixed_lpdf(theta, self.shape, self.rate).unwrap_or(f64::NEG_INFINITY)
    }
}

impl ModelSpec for GammaTarget {
    fn name(&self) -> &str {
        "gamma_target"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        0
    }
    fn log_joint<T: Real>(&self, theta: &[T], _obs: Obs<'_>) -> Result<T, ModelError> {
        Ok(gamma_fixed_lpdf(theta[0], self.shape, self.rate)?)
    }
}

/// Independent N(0, 1) on `dim` unconstrained coordinates.
pub struct StandardNormal {
    layout: ParameterLayout,
}

impl StandardNormal {
    pub fn new(dim: usize) -> Self {
        Self {
            layout: ParameterLayout::new(vec![ParamBlock::vector("theta", Constraint::Unconstrained, dim).unwrap()])
                .unwrap(),
        }
    }
}

impl ModelSpec for StandardNormal {
    fn name(&self) -> &str {
        "standard_normal"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        0
    }
    fn log_joint<T: Real>(&self, theta: &[T], _obs: Obs<'_>) -> Result<T, ModelError> {
        let terms = theta
            .iter()
            .map(|&t| normal_fixed_lpdf(t, 0.0, 1.0))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(T::sum(&terms))
    }
}

/// N(mean, cov) on unconstrained coordinates.
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    precision: Matrix,
    log_norm: f64,
    layout: ParameterLayout,
}

impl GaussianTarget {
    /// Panics unless `cov` is symmetric positive definite.
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Self {
        let k = mean.len();
        assert_eq!(cov.dim(), k, "covariance dimension");
        let chol = cov.cholesky().expect("covariance must be positive definite");
        let precision = cov.spd_inverse().expect("positive definite");
        let log_norm = -(k as f64) * HALF_LN_2PI - chol.log_abs_det().unwrap();
        Self {
            mean,
            cov,
            precision,
            log_norm,
            layout: ParameterLayout::new(vec![ParamBlock::vector("theta", Constraint::Unconstrained, k).unwrap()])
                .unwrap(),
        }
    }

    /// m = (1, −1), Σ = [[2, 0.9], [0.9, 1]].
    pub fn correlated_2d() -> Self {
        Self::new(vec![1.0, -1.0], Matrix::from_rows(&[vec![2.0, 0.9], vec![0.9, 1.0]]))
    }
}

impl ModelSpec for GaussianTarget {
    fn name(&self) -> &str {
        "gaussian_target"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        0
    }
    fn log_joint<T: Real>(&self, theta: &[T], _obs: Obs<'_>) -> Result<T, ModelError> {
        let r: Vec<T> = theta.iter().zip(&self.mean).map(|(&t, &m)| t - m).collect();
        let pr: Vec<T> = (0..r.len()).map(|i| T::dot_const(self.precision.row(i), &r)).collect();
        Ok(T::dot(&r, &pr) * -0.5 + self.log_norm)
    }
}

pub const TANH_SCHEMA: &[Field] = &[
    Field::new("x", &["N", "D"], Kind::Real),
    Field::new("y", &["N"], Kind::Real),
];

/// Nonlinear regression y_n ~ N(tanh(x_nᵀβ), 1) with β ~ N(0, I).
pub struct TanhRegression {
    x: Vec<f64>,
    y: Vec<f64>,
    d: usize,
    layout: ParameterLayout,
}

impl TanhRegression {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let dims = data.validate(TANH_SCHEMA)?;
        let d = dim(&dims, "D");
        if d == 0 {
            return Err(ModelError::Invalid("tanh regression needs at least one covariate".into()));
        }
        Ok(Self {
            x: data.values("x")?.to_vec(),
            y: data.values("y")?.to_vec(),
            d,
            layout: ParameterLayout::new(vec![ParamBlock::vector("beta", Constraint::Unconstrained, d)?])?,
        })
    }
}

impl ModelSpec for TanhRegression {
    fn name(&self) -> &str {
        "tanh_regression"
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
        let one = theta[0].constant_like(1.0);
        let terms = obs
            .iter(self.y.len())
            .map(|n| normal_obs_lpdf(self.y[n], T::dot_const(&self.x[n * self.d..(n + 1) * self.d], theta).tanh(), one))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(T::sum(&prior) + scaled_sum(one, &terms, obs.scale()))
    }
}

/// log p(ζ) = −(e^{10ζ} + e^{−10ζ}): finite everywhere in exact arithmetic
/// but overflows once |ζ| exceeds about 71.
pub struct Exploding {
    layout: ParameterLayout,
}

impl Exploding {
    pub fn new() -> Self {
        Self {
            layout: ParameterLayout::new(vec![ParamBlock::scalar("theta", Constraint::Unconstrained).unwrap()])
                .unwrap(),
        }
    }
}

impl Default for Exploding {
    fn default() -> Self {
        Self::new()
    }
}

impl ModelSpec for Exploding {
    fn name(&self) -> &str {
        "exploding"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        0
    }
    fn log_joint<T: Real>(&self, theta: &[T], _obs: Obs<'_>) -> Result<T, ModelError> {
        let z = theta[0] * 10.0;
        Ok(-(z.exp() + (-z).exp()))
    }
}
