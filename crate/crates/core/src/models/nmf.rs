use std::ops::Range;

use crate::autodiff::Real;
use crate::data::{Dataset, Field, Kind};
use crate::densities::{dirichlet_fixed_lpdf, exponential_lpdf, gamma_fixed_lpdf, poisson_lpmf};
use crate::transforms::{Constraint, ParamBlock, ParameterLayout};

use super::{count_or, dim, ranges, ModelError, ModelSpec, Obs};

pub(super) const SCHEMA: &[Field] = &[
    Field::new("y", &["U", "I"], Kind::Count),
    Field::new("k", &[], Kind::Count).optional(),
];

const DEFAULT_K: usize = 10;

struct Counts {
    y: Vec<f64>,
    users: usize,
    items: usize,
    k: usize,
}

impl Counts {
    fn load(data: &Dataset, min_k: usize) -> Result<Self, ModelError> {
        let dims = data.validate(SCHEMA)?;
        let (users, items) = (dim(&dims, "U"), dim(&dims, "I"));
        if users == 0 || items == 0 {
            return Err(ModelError::Invalid("count matrix must be non-empty".into()));
        }
        let k = count_or(data, "k", DEFAULT_K)?;
        if k < min_k {
            return Err(ModelError::Invalid(format!("k must be at least {min_k}")));
        }
        Ok(Self {
            y: data.values("y")?.to_vec(),
            users,
            items,
            k,
        })
    }

    /// Poisson(y_ui | θ_uᵀ β_i) summed over the matrix.
    fn likelihood<T: Real>(&self, theta: &[T], beta: &[T], out: &mut Vec<T>) -> Result<(), ModelError> {
        let k = self.k;
        for u in 0..self.users {
            let tu = &theta[u * k..(u + 1) * k];
            for i in 0..self.items {
                let rate = T::dot(tu, &beta[i * k..(i + 1) * k]);
                out.push(poisson_lpmf(self.y[u * self.items + i], rate)?);
            }
        }
        Ok(())
    }

    fn held_out(&self, theta: &[f64], beta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let dims = data.validate(SCHEMA)?;
        if dim(&dims, "U") != self.users || dim(&dims, "I") != self.items {
            return Err(ModelError::Invalid("held-out matrix must match the training shape".into()));
        }
        let y = data.values("y")?;
        let k = self.k;
        let mut out = Vec::with_capacity(y.len());
        for u in 0..self.users {
            for i in 0..self.items {
                let rate = f64::dot(&theta[u * k..(u + 1) * k], &beta[i * k..(i + 1) * k]);
                out.push(poisson_lpmf(y[u * self.items + i], rate)?);
            }
        }
        Ok(out)
    }
}

/// Gamma–Poisson factorization with positive ordered user factors and
/// Gamma(1, 1) priors on every factor entry.
pub struct GammaPoissonNmf {
    counts: Counts,
    layout: ParameterLayout,
    r: Vec<Range<usize>>,
}

impl GammaPoissonNmf {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let counts = Counts::load(data, 1)?;
        let layout = ParameterLayout::new(vec![
            ParamBlock::matrix("theta", Constraint::PositiveOrdered, counts.users, counts.k)?,
            ParamBlock::matrix("beta", Constraint::LowerBounded(0.0), counts.items, counts.k)?,
        ])?;
        let r = ranges(&layout, &["theta", "beta"]);
        Ok(Self { counts, layout, r })
    }
}

impl ModelSpec for GammaPoissonNmf {
    fn name(&self) -> &str {
        "gamma_poisson_nmf"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        self.counts.users
    }
    fn log_joint<T: Real>(&self, theta: &[T], _obs: Obs<'_>) -> Result<T, ModelError> {
        let (t, b) = (&theta[self.r[0].clone()], &theta[self.r[1].clone()]);
        let mut terms = Vec::with_capacity(theta.len() + self.counts.y.len());
        for &v in theta {
            terms.push(gamma_fixed_lpdf(v, 1.0, 1.0)?);
        }
        self.counts.likelihood(t, b, &mut terms)?;
        Ok(T::sum(&terms))
    }
    fn held_out_log_lik(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        self.counts
            .held_out(&theta[self.r[0].clone()], &theta[self.r[1].clone()], data)
    }
}

/// Dirichlet–Exponential factorization: θ_u ~ Dir(α₀), β_ik ~ Exp(λ₀).
/// Defaults α₀ = 1000 and λ₀ = 0.1 can be overridden by the data fields
/// `alpha0` and `lambda0`.
pub struct DirichletExponentialNmf {
    counts: Counts,
    alpha0: Vec<f64>,
    lambda0: f64,
    layout: ParameterLayout,
    r: Vec<Range<usize>>,
}

impl DirichletExponentialNmf {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let counts = Counts::load(data, 2)?;
        let alpha0 = data.scalar_or("alpha0", 1000.0)?;
        let lambda0 = data.scalar_or("lambda0", 0.1)?;
        if !(alpha0 > 0.0 && lambda0 > 0.0) {
            return Err(ModelError::Invalid("alpha0 and lambda0 must be positive".into()));
        }
        let layout = ParameterLayout::new(vec![
            ParamBlock::matrix("theta", Constraint::Simplex, counts.users, counts.k)?,
            ParamBlock::matrix("beta", Constraint::LowerBounded(0.0), counts.items, counts.k)?,
        ])?;
        let r = ranges(&layout, &["theta", "beta"]);
        Ok(Self {
            alpha0: vec![alpha0; counts.k],
            counts,
            lambda0,
            layout,
            r,
        })
    }
}

impl ModelSpec for DirichletExponentialNmf {
    fn name(&self) -> &str {
        "dirichlet_exponential_nmf"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        self.counts.users
    }
    fn log_joint<T: Real>(&self, theta: &[T], _obs: Obs<'_>) -> Result<T, ModelError> {
        let (t, b) = (&theta[self.r[0].clone()], &theta[self.r[1].clone()]);
        let k = self.counts.k;
        let mut terms = Vec::with_capacity(theta.len() + self.counts.y.len());
        for tu in t.chunks(k) {
            terms.push(dirichlet_fixed_lpdf(tu, &self.alpha0)?);
        }
        let rate = b[0].constant_like(self.lambda0);
        for &v in b {
            terms.push(exponential_lpdf(v, rate)?);
        }
        self.counts.likelihood(t, b, &mut terms)?;
        Ok(T::sum(&terms))
    }
    fn held_out_log_lik(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        self.counts
            .held_out(&theta[self.r[0].clone()], &theta[self.r[1].clone()], data)
    }
}
