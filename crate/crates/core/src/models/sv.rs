use std::ops::Range;

use crate::autodiff::Real;
use crate::data::{Dataset, Field, Kind};
use crate::densities::{cauchy_lpdf, lognormal_lpdf, normal_lpdf, normal_obs_lpdf, uniform_lpdf};
use crate::transforms::{Constraint, ParamBlock, ParameterLayout};

use super::{dim, ranges, ModelError, ModelSpec, Obs};

pub(super) const SCHEMA: &[Field] = &[Field::new("y", &["T"], Kind::Real)];

/// Stochastic volatility: y_t ~ N(0, exp(h_t / 2)) with an AR(1) latent
/// log volatility h_t ~ N(μ + φ(h_{t−1} − μ), σ), stationary start.
///
/// Priors: μ ~ Cauchy(0, 10), φ ~ Uniform(−1, 1), σ ~ LogNormal(0, 10).
pub struct StochasticVolatility {
    y: Vec<f64>,
    layout: ParameterLayout,
    h: Range<usize>,
}

impl StochasticVolatility {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let dims = data.validate(SCHEMA)?;
        let t = dim(&dims, "T");
        if t == 0 {
            return Err(ModelError::Invalid("stochastic_volatility needs at least one time point".into()));
        }
        let layout = ParameterLayout::new(vec![
            ParamBlock::scalar("mu", Constraint::Unconstrained)?,
            ParamBlock::scalar("phi", Constraint::Interval(-1.0, 1.0))?,
            ParamBlock::scalar("sigma", Constraint::LowerBounded(0.0))?,
            ParamBlock::vector("h", Constraint::Unconstrained, t)?,
        ])?;
        let h = ranges(&layout, &["h"]).remove(0);
        Ok(Self {
            y: data.values("y")?.to_vec(),
            layout,
            h,
        })
    }
}

impl ModelSpec for StochasticVolatility {
    fn name(&self) -> &str {
        "stochastic_volatility"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        self.y.len()
    }
    fn log_joint<T: Real>(&self, theta: &[T], _obs: Obs<'_>) -> Result<T, ModelError> {
        let (mu, phi, sigma) = (theta[0], theta[1], theta[2]);
        let h = &theta[self.h.clone()];
        let zero = mu.constant_like(0.0);
        let mut terms = Vec::with_capacity(2 * h.len() + 3);
        terms.push(cauchy_lpdf(mu, zero, mu.constant_like(10.0))?);
        terms.push(uniform_lpdf(phi, -1.0, 1.0)?);
        terms.push(lognormal_lpdf(sigma, zero, mu.constant_like(10.0))?);
        let stationary_sd = sigma / (phi.square().rsub(1.0)).sqrt();
        terms.push(normal_lpdf(h[0], mu, stationary_sd)?);
        for t in 1..h.len() {
            terms.push(normal_lpdf(h[t], mu + phi * (h[t - 1] - mu), sigma)?);
        }
        for (t, &ht) in h.iter().enumerate() {
            terms.push(normal_obs_lpdf(self.y[t], zero, (ht * 0.5).exp())?);
        }
        Ok(T::sum(&terms))
    }
}
