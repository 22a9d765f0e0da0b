use std::ops::Range;

use crate::autodiff::Real;
use crate::data::{Dataset, Field, Kind};
use crate::densities::{bernoulli_logit_lpmf, normal_fixed_lpdf, normal_lpdf, uniform_lpdf};
use crate::transforms::{Constraint, ParamBlock, ParameterLayout};

use super::{count_or, dim, ranges, scaled_sum, ModelError, ModelSpec, Obs};

pub(super) const SCHEMA: &[Field] = &[
    Field::new("y", &["N"], Kind::Binary),
    Field::new("female", &["N"], Kind::Binary),
    Field::new("black", &["N"], Kind::Binary),
    Field::new("age", &["N"], Kind::Index("n_age")),
    Field::new("edu", &["N"], Kind::Index("n_edu")),
    Field::new("state", &["N"], Kind::Index("J")),
    Field::new("region", &["J"], Kind::Index("n_region")),
    Field::new("v_prev", &["J"], Kind::Real),
    Field::new("n_age", &[], Kind::Count),
    Field::new("n_edu", &[], Kind::Count),
    Field::new("n_region", &[], Kind::Count),
];

/// Fixed-effect prior standard deviation.
const BETA_SD: f64 = 100.0;
const SIGMA_MAX: f64 = 100.0;

/// Hierarchical logistic regression with age, education, age×education,
/// state and region effects. State effects are centred on their region
/// effect plus a coefficient times the previous vote share.
///
/// `beta` holds (intercept, female, black, female·black, v_prev); `sigma`
/// holds the scales of (age, edu, age_edu, state, region), each uniform on
/// (0, 100). Group indices in the data are 1-based.
pub struct HierLogistic {
    y: Vec<f64>,
    female: Vec<f64>,
    black: Vec<f64>,
    age: Vec<usize>,
    edu: Vec<usize>,
    state: Vec<usize>,
    region: Vec<usize>,
    v_prev: Vec<f64>,
    n_edu: usize,
    layout: ParameterLayout,
    r: Vec<Range<usize>>,
}

const BLOCKS: [&str; 7] = ["beta", "a_age", "a_edu", "a_age_edu", "a_state", "a_region", "sigma"];

impl HierLogistic {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let dims = data.validate(SCHEMA)?;
        let n_age = count_or(data, "n_age", 1)?;
        let n_edu = count_or(data, "n_edu", 1)?;
        let n_region = count_or(data, "n_region", 1)?;
        let j = dim(&dims, "J");
        if j == 0 {
            return Err(ModelError::Invalid("hier_logistic needs at least one state".into()));
        }
        let layout = ParameterLayout::new(vec![
            ParamBlock::vector("beta", Constraint::Unconstrained, 5)?,
            ParamBlock::vector("a_age", Constraint::Unconstrained, n_age)?,
            ParamBlock::vector("a_edu", Constraint::Unconstrained, n_edu)?,
            ParamBlock::matrix("a_age_edu", Constraint::Unconstrained, n_age, n_edu)?,
            ParamBlock::vector("a_state", Constraint::Unconstrained, j)?,
            ParamBlock::vector("a_region", Constraint::Unconstrained, n_region)?,
            ParamBlock::vector("sigma", Constraint::Interval(0.0, SIGMA_MAX), 5)?,
        ])?;
        let r = ranges(&layout, &BLOCKS);
        Ok(Self {
            y: data.values("y")?.to_vec(),
            female: data.values("female")?.to_vec(),
            black: data.values("black")?.to_vec(),
            age: data.indices("age")?,
            edu: data.indices("edu")?,
            state: data.indices("state")?,
            region: data.indices("region")?,
            v_prev: data.values("v_prev")?.to_vec(),
            n_edu,
            layout,
            r,
        })
    }

    fn block<'a, T>(&self, theta: &'a [T], i: usize) -> &'a [T] {
        &theta[self.r[i].clone()]
    }
}

impl ModelSpec for HierLogistic {
    fn name(&self) -> &str {
        "hier_logistic"
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
        let beta = self.block(theta, 0);
        let a_age = self.block(theta, 1);
        let a_edu = self.block(theta, 2);
        let a_age_edu = self.block(theta, 3);
        let a_state = self.block(theta, 4);
        let a_region = self.block(theta, 5);
        let sigma = self.block(theta, 6);
        let zero = beta[0].constant_like(0.0);

        let mut prior = Vec::new();
        for &b in beta {
            prior.push(normal_fixed_lpdf(b, 0.0, BETA_SD)?);
        }
        for &s in sigma {
            prior.push(uniform_lpdf(s, 0.0, SIGMA_MAX)?);
        }
        for (group, scale) in [(a_age, sigma[0]), (a_edu, sigma[1]), (a_age_edu, sigma[2]), (a_region, sigma[4])] {
            for &a in group {
                prior.push(normal_lpdf(a, zero, scale)?);
            }
        }
        for (j, &a) in a_state.iter().enumerate() {
            let centre = a_region[self.region[j]] + beta[4] * self.v_prev[j];
            prior.push(normal_lpdf(a, centre, sigma[3])?);
        }

        let mut terms = Vec::new();
        for n in obs.iter(self.y.len()) {
            let (f, b) = (self.female[n], self.black[n]);
            let (k, l) = (self.age[n], self.edu[n]);
            let args = [
                beta[0],
                beta[1],
                beta[2],
                beta[3],
                a_age[k],
                a_edu[l],
                a_age_edu[k * self.n_edu + l],
                a_state[self.state[n]],
            ];
            let logit = T::dot_const(&[1.0, f, b, f * b, 1.0, 1.0, 1.0, 1.0], &args);
            terms.push(bernoulli_logit_lpmf(self.y[n], logit)?);
        }
        Ok(T::sum(&prior) + scaled_sum(zero, &terms, obs.scale()))
    }
}
