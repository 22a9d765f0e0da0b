use std::ops::Range;

use crate::autodiff::Real;
use crate::data::{Dataset, Field, Kind};
use crate::densities::{inv_gamma_fixed_lpdf, lognormal_lpdf, normal_fixed_lpdf, normal_lpdf};
use crate::special::HALF_LN_2PI;
use crate::transforms::{Constraint, ParamBlock, ParameterLayout};

use super::{count_or, dim, ranges, ModelError, ModelSpec, Obs};

pub(super) const SCHEMA: &[Field] = &[
    Field::new("x", &["N", "D"], Kind::Real),
    Field::new("m", &[], Kind::Count).optional(),
];

pub(super) const SUP_SCHEMA: &[Field] = &[
    Field::new("x", &["N", "D"], Kind::Real),
    Field::new("y", &["N"], Kind::Real),
    Field::new("m", &[], Kind::Count).optional(),
];

/// Components whose ARD scale is at least a tenth of the largest one.
///
/// The loading prior is N(0, σ·α_m), so α_m is a scale: components the
/// data does not support shrink towards α_m → 0.
pub fn retained_dimensions(alpha: &[f64]) -> Vec<usize> {
    let max = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..alpha.len()).filter(|&m| alpha[m] >= max / 10.0).collect()
}

struct Shared {
    x: Vec<f64>,
    n: usize,
    d: usize,
    m: usize,
}

impl Shared {
    fn load(data: &Dataset, schema: &[Field]) -> Result<Self, ModelError> {
        let dims = data.validate(schema)?;
        let (n, d) = (dim(&dims, "N"), dim(&dims, "D"));
        if n == 0 || d < 2 {
            return Err(ModelError::Invalid("need N ≥ 1 rows and D ≥ 2 columns".into()));
        }
        let m = count_or(data, "m", d - 1)?;
        Ok(Self {
            x: data.values("x")?.to_vec(),
            n,
            d,
            m,
        })
    }

    fn blocks(&self) -> Result<Vec<ParamBlock>, ModelError> {
        Ok(vec![
            ParamBlock::matrix("z", Constraint::Unconstrained, self.n, self.m)?,
            ParamBlock::matrix("w", Constraint::Unconstrained, self.d, self.m)?,
            ParamBlock::scalar("sigma", Constraint::LowerBounded(0.0))?,
            ParamBlock::vector("alpha", Constraint::LowerBounded(0.0), self.m)?,
        ])
    }

    /// Priors on z, w, σ and α plus the likelihood of x.
    fn terms<T: Real>(&self, z: &[T], w: &[T], sigma: T, alpha: &[T], out: &mut Vec<T>) -> Result<(), ModelError> {
        let m = self.m;
        let zero = sigma.constant_like(0.0);
        let one = sigma.constant_like(1.0);
        out.push(lognormal_lpdf(sigma, zero, one)?);
        for &a in alpha {
            out.push(inv_gamma_fixed_lpdf(a, 1.0, 1.0)?);
        }
        let scales: Vec<T> = alpha.iter().map(|&a| sigma * a).collect();
        for wd in w.chunks(m) {
            for (&v, &s) in wd.iter().zip(&scales) {
                out.push(normal_lpdf(v, zero, s)?);
            }
        }
        for &v in z {
            out.push(normal_fixed_lpdf(v, 0.0, 1.0)?);
        }
        let mut resid = Vec::with_capacity(self.n * self.d);
        for (zn, xn) in z.chunks(m).zip(self.x.chunks(self.d)) {
            for (wd, &x) in w.chunks(m).zip(xn) {
                resid.push(T::dot(wd, zn) - x);
            }
        }
        out.push(gaussian_block(&resid, sigma));
        Ok(())
    }
}

/// Σ ln N(r_i | 0, σ) over a residual vector.
fn gaussian_block<T: Real>(resid: &[T], sigma: T) -> T {
    let count = resid.len() as f64;
    let ss = T::dot(resid, resid);
    -(ss / sigma.square() * 0.5) - sigma.ln() * count - count * HALF_LN_2PI
}

/// Probabilistic PCA with an ARD prior on the loadings:
/// x_n ~ N(W z_n, σ I), z_n ~ N(0, I), w_dm ~ N(0, σ α_m),
/// σ ~ LogNormal(0, 1), α_m ~ InvGamma(1, 1). `m` (default D − 1) is the
/// maximum number of components.
pub struct PpcaArd {
    s: Shared,
    layout: ParameterLayout,
    r: Vec<Range<usize>>,
}

impl PpcaArd {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let s = Shared::load(data, SCHEMA)?;
        let layout = ParameterLayout::new(s.blocks()?)?;
        let r = ranges(&layout, &["z", "w", "sigma", "alpha"]);
        Ok(Self { s, layout, r })
    }

    pub fn max_components(&self) -> usize {
        self.s.m
    }
}

impl ModelSpec for PpcaArd {
    fn name(&self) -> &str {
        "ppca_ard"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        self.s.n
    }
    fn log_joint<T: Real>(&self, theta: &[T], _obs: Obs<'_>) -> Result<T, ModelError> {
        let mut terms = Vec::with_capacity(theta.len() + 1);
        self.s.terms(
            &theta[self.r[0].clone()],
            &theta[self.r[1].clone()],
            theta[self.r[2].start],
            &theta[self.r[3].clone()],
            &mut terms,
        )?;
        Ok(T::sum(&terms))
    }
}

/// [`PpcaArd`] plus a response y_n ~ N(w_yᵀ z_n, σ) whose weights share the
/// ARD prior.
pub struct SupPpcaArd {
    s: Shared,
    y: Vec<f64>,
    layout: ParameterLayout,
    r: Vec<Range<usize>>,
}

impl SupPpcaArd {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let s = Shared::load(data, SUP_SCHEMA)?;
        let mut blocks = s.blocks()?;
        blocks.push(ParamBlock::vector("w_y", Constraint::Unconstrained, s.m)?);
        let layout = ParameterLayout::new(blocks)?;
        let r = ranges(&layout, &["z", "w", "sigma", "alpha", "w_y"]);
        Ok(Self {
            y: data.values("y")?.to_vec(),
            s,
            layout,
            r,
        })
    }
}

impl ModelSpec for SupPpcaArd {
    fn name(&self) -> &str {
        "sup_ppca_ard"
    }
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    fn num_obs(&self) -> usize {
        self.s.n
    }
    fn log_joint<T: Real>(&self, theta: &[T], _obs: Obs<'_>) -> Result<T, ModelError> {
        let z = &theta[self.r[0].clone()];
        let sigma = theta[self.r[2].start];
        let alpha = &theta[self.r[3].clone()];
        let wy = &theta[self.r[4].clone()];
        let mut terms = Vec::with_capacity(theta.len() + 2);
        self.s.terms(z, &theta[self.r[1].clone()], sigma, alpha, &mut terms)?;
        let zero = sigma.constant_like(0.0);
        for (&v, &a) in wy.iter().zip(alpha) {
            terms.push(normal_lpdf(v, zero, sigma * a)?);
        }
        let resid: Vec<T> = z
            .chunks(self.s.m)
            .zip(&self.y)
            .map(|(zn, &y)| T::dot(wy, zn) - y)
            .collect();
        terms.push(gaussian_block(&resid, sigma));
        Ok(T::sum(&terms))
    }
}
