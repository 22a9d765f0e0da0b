//! Compiled-in model zoo.
//!
//! A model is a [`ParameterLayout`] (named constrained blocks) plus a pure
//! log joint density over the constrained values. Model code implements
//! [`ModelSpec`] once, generically over [`Real`], and gets the object-safe
//! [`Model`] interface for free.

mod basic;
pub mod fixtures;
mod gmm;
mod hier;
mod nmf;
mod ppca;
pub mod simulate;
mod sv;

use std::ops::Range;

use thiserror::Error;

use crate::autodiff::{Real, Var};
use crate::data::{DataError, Dataset, Field};
use crate::densities::DensityError;
use crate::transforms::{ParameterLayout, TransformError};

pub use basic::{LinregArd, LogisticRegression, MvnConjugate, WeibullPoisson};
pub use gmm::Gmm;
pub use hier::HierLogistic;
pub use nmf::{DirichletExponentialNmf, GammaPoissonNmf};
pub use ppca::{retained_dimensions, PpcaArd, SupPpcaArd};
pub use sv::StochasticVolatility;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("{0}")]
    Invalid(String),
    #[error("model `{model}` does not support {what}")]
    Unsupported { model: String, what: &'static str },
}

/// Which observations enter the likelihood, and the factor applied to
/// their summed log likelihood.
#[derive(Clone, Copy, Debug)]
pub enum Obs<'a> {
    All,
    Batch { indices: &'a [usize], scale: f64 },
}

impl<'a> Obs<'a> {
    /// Minibatch with the N/B likelihood scaling.
    pub fn batch(indices: &'a [usize], n: usize) -> Self {
        Obs::Batch {
            indices,
            scale: n as f64 / indices.len() as f64,
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            Obs::All => 1.0,
            Obs::Batch { scale, .. } => *scale,
        }
    }

    pub fn iter(&self, n: usize) -> ObsIter<'a> {
        match *self {
            Obs::All => ObsIter::All(0..n),
            Obs::Batch { indices, .. } => ObsIter::Batch(indices.iter()),
        }
    }
}

pub enum ObsIter<'a> {
    All(Range<usize>),
    Batch(std::slice::Iter<'a, usize>),
}

impl Iterator for ObsIter<'_> {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        match self {
            ObsIter::All(r) => r.next(),
            ObsIter::Batch(it) => it.next().copied(),
        }
    }
}

/// Implemented by each model; generic over the scalar type.
pub trait ModelSpec: Send + Sync {
    fn name(&self) -> &str;
    fn layout(&self) -> &ParameterLayout;
    /// Number of observations a minibatch draws from.
    fn num_obs(&self) -> usize;
    fn supports_subsampling(&self) -> bool {
        false
    }
    /// log p(x, θ) at constrained θ (layout order).
    fn log_joint<T: Real>(&self, theta: &[T], obs: Obs<'_>) -> Result<T, ModelError>;
    /// log p(x_new | θ) for each held-out point in `data`.
    fn held_out_log_lik(&self, _theta: &[f64], _data: &Dataset) -> Result<Vec<f64>, ModelError> {
        Err(ModelError::Unsupported {
            model: self.name().to_string(),
            what: "held-out likelihood",
        })
    }
}

/// Object-safe model interface used by inference and evaluation.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;
    fn layout(&self) -> &ParameterLayout;
    fn num_obs(&self) -> usize;
    fn supports_subsampling(&self) -> bool;
    fn log_joint_f64(&self, theta: &[f64], obs: Obs<'_>) -> Result<f64, ModelError>;
    fn log_joint_var<'t>(&self, theta: &[Var<'t>], obs: Obs<'_>) -> Result<Var<'t>, ModelError>;
    fn held_out_log_lik(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError>;
}

impl<M: ModelSpec> Model for M {
    fn name(&self) -> &str {
        ModelSpec::name(self)
    }
    fn layout(&self) -> &ParameterLayout {
        ModelSpec::layout(self)
    }
    fn num_obs(&self) -> usize {
        ModelSpec::num_obs(self)
    }
    fn supports_subsampling(&self) -> bool {
        ModelSpec::supports_subsampling(self)
    }
    fn log_joint_f64(&self, theta: &[f64], obs: Obs<'_>) -> Result<f64, ModelError> {
        self.log_joint(theta, obs)
    }
    fn log_joint_var<'t>(&self, theta: &[Var<'t>], obs: Obs<'_>) -> Result<Var<'t>, ModelError> {
        self.log_joint(theta, obs)
    }
    fn held_out_log_lik(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        ModelSpec::held_out_log_lik(self, theta, data)
    }
}

/// A model evaluated under a different layout with the same constrained
/// space, e.g. softplus instead of `exp` for positive blocks.
pub struct Relayout {
    inner: Box<dyn Model>,
    layout: ParameterLayout,
}

impl Relayout {
    pub fn softplus_positive(inner: Box<dyn Model>) -> Self {
        let layout = inner.layout().softplus_lower_bounds();
        Self { inner, layout }
    }
}

impl Model for Relayout {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        self.inner.num_obs()
    }
    fn supports_subsampling(&self) -> bool {
        self.inner.supports_subsampling()
    }
    fn log_joint_f64(&self, theta: &[f64], obs: Obs<'_>) -> Result<f64, ModelError> {
        self.inner.log_joint_f64(theta, obs)
    }
    fn log_joint_var<'t>(&self, theta: &[Var<'t>], obs: Obs<'_>) -> Result<Var<'t>, ModelError> {
        self.inner.log_joint_var(theta, obs)
    }
    fn held_out_log_lik(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        self.inner.held_out_log_lik(theta, data)
    }
}

/// Names accepted by [`build`].
pub const MODEL_NAMES: &[&str] = &[
    "weibull_poisson",
    "mvn_conjugate",
    "logistic_regression",
    "stochastic_volatility",
    "linreg_ard",
    "hier_logistic",
    "gamma_poisson_nmf",
    "dirichlet_exponential_nmf",
    "gmm",
    "ppca_ard",
    "sup_ppca_ard",
];

/// Data schema of a registered model.
pub fn schema(name: &str) -> Result<&'static [Field], ModelError> {
    Ok(match name {
        "weibull_poisson" => basic::WEIBULL_POISSON_SCHEMA,
        "mvn_conjugate" => basic::MVN_SCHEMA,
        "logistic_regression" => basic::LOGISTIC_SCHEMA,
        "stochastic_volatility" => sv::SCHEMA,
        "linreg_ard" => basic::LINREG_SCHEMA,
        "hier_logistic" => hier::SCHEMA,
        "gamma_poisson_nmf" | "dirichlet_exponential_nmf" => nmf::SCHEMA,
        "gmm" => gmm::SCHEMA,
        "ppca_ard" => ppca::SCHEMA,
        "sup_ppca_ard" => ppca::SUP_SCHEMA,
        other => return Err(ModelError::UnknownModel(other.to_string())),
    })
}

/// Build a registered model from a dataset.
pub fn build(name: &str, data: &Dataset) -> Result<Box<dyn Model>, ModelError> {
    Ok(match name {
        "weibull_poisson" => Box::new(WeibullPoisson::from_data(data)?),
        "mvn_conjugate" => Box::new(MvnConjugate::from_data(data)?),
        "logistic_regression" => Box::new(LogisticRegression::from_data(data)?),
        "stochastic_volatility" => Box::new(StochasticVolatility::from_data(data)?),
        "linreg_ard" => Box::new(LinregArd::from_data(data)?),
        "hier_logistic" => Box::new(HierLogistic::from_data(data)?),
        "gamma_poisson_nmf" => Box::new(GammaPoissonNmf::from_data(data)?),
        "dirichlet_exponential_nmf" => Box::new(DirichletExponentialNmf::from_data(data)?),
        "gmm" => Box::new(Gmm::from_data(data)?),
        "ppca_ard" => Box::new(PpcaArd::from_data(data)?),
        "sup_ppca_ard" => Box::new(SupPpcaArd::from_data(data)?),
        other => return Err(ModelError::UnknownModel(other.to_string())),
    })
}

/// Constrained ranges of the named blocks, in the given order.
pub(crate) fn ranges(layout: &ParameterLayout, names: &[&str]) -> Vec<Range<usize>> {
    names
        .iter()
        .map(|n| layout.range(n).unwrap_or_else(|| panic!("block {n} missing")))
        .collect()
}

/// `scale · Σ terms`, or a zero constant when there are no terms.
pub(crate) fn scaled_sum<T: Real>(zero: T, terms: &[T], scale: f64) -> T {
    if terms.is_empty() {
        return zero.constant_like(0.0);
    }
    let s = T::sum(terms);
    if scale == 1.0 {
        s
    } else {
        s * scale
    }
}

/// Dimension bound by the schema, defaulting to 0 when absent.
pub(crate) fn dim(dims: &std::collections::HashMap<&'static str, usize>, name: &str) -> usize {
    dims.get(name).copied().unwrap_or(0)
}

/// A positive integer scalar field, or `default` when absent.
pub(crate) fn count_or(data: &Dataset, name: &str, default: usize) -> Result<usize, ModelError> {
    let v = data.scalar_or(name, default as f64)?;
    if !(v >= 1.0 && v.fract() == 0.0) {
        return Err(ModelError::Invalid(format!("`{name}` must be a positive integer, got {v}")));
    }
    Ok(v as usize)
}
