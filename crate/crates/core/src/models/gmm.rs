use std::ops::Range;

use crate::autodiff::Real;
use crate::data::{Dataset, Field, Kind};
use crate::densities::{dirichlet_fixed_lpdf, lognormal_lpdf, normal_fixed_lpdf};
use crate::special::HALF_LN_2PI;
use crate::transforms::{Constraint, ParamBlock, ParameterLayout};

use super::{count_or, dim, ranges, scaled_sum, ModelError, ModelSpec, Obs};

pub(super) const SCHEMA: &[Field] = &[
    Field::new("y", &["N", "D"], Kind::Real),
    Field::new("k", &[], Kind::Count).optional(),
    Field::new("alpha0", &[], Kind::Real).optional(),
];

/// Diagonal Gaussian mixture with the assignments summed out:
/// p(y_n) = Σ_k θ_k Π_d N(y_nd | μ_kd, σ_kd).
///
/// Priors: θ ~ Dir(α₀) (default α₀ = 1000), μ_kd ~ N(0, 1),
/// σ_kd ~ LogNormal(0, 1). With `k = 1` there is no weight block.
pub struct Gmm {
    y: Vec<f64>,
    n: usize,
    d: usize,
    k: usize,
    alpha0: Vec<f64>,
    layout: ParameterLayout,
    mu: Range<usize>,
    sigma: Range<usize>,
}

impl Gmm {
    pub fn from_data(data: &Dataset) -> Result<Self, ModelError> {
        let dims = data.validate(SCHEMA)?;
        let (n, d) = (dim(&dims, "N"), dim(&dims, "D"));
        if d == 0 {
            return Err(ModelError::Invalid("gmm needs at least one column".into()));
        }
        let k = count_or(data, "k", 2)?;
        let alpha0 = data.scalar_or("alpha0", 1000.0)?;
        if !(alpha0 > 0.0) {
            return Err(ModelError::Invalid("alpha0 must be positive".into()));
        }
        let mut blocks = Vec::new();
        if k > 1 {
            blocks.push(ParamBlock::vector("theta", Constraint::Simplex, k)?);
        }
        blocks.push(ParamBlock::matrix("mu", Constraint::Unconstrained, k, d)?);
        blocks.push(ParamBlock::matrix("sigma", Constraint::LowerBounded(0.0), k, d)?);
        let layout = ParameterLayout::new(blocks)?;
        let r = ranges(&layout, &["mu", "sigma"]);
        Ok(Self {
            y: data.values("y")?.to_vec(),
            n,
            d,
            k,
            alpha0: vec![alpha0; k],
            layout,
            mu: r[0].clone(),
            sigma: r[1].clone(),
        })
    }

    pub fn components(&self) -> usize {
        self.k
    }

    /// Per-component constants ln θ_k − Σ_d ln σ_kd − D/2 ln 2π, and 1/σ.
    fn component_terms<T: Real>(&self, theta: &[T]) -> (Vec<T>, Vec<T>) {
        let sigma = &theta[self.sigma.clone()];
        let inv: Vec<T> = sigma.iter().map(|&s| s.recip_scaled(1.0)).collect();
        let offsets = (0..self.k)
            .map(|k| {
                let logs: Vec<T> = sigma[k * self.d..(k + 1) * self.d].iter().map(|s| s.ln()).collect();
                let base = -T::sum(&logs) - self.d as f64 * HALF_LN_2PI;
                if self.k > 1 {
                    base + theta[k].ln()
                } else {
                    base
                }
            })
            .collect();
        (offsets, inv)
    }

    fn point<T: Real>(&self, theta: &[T], offsets: &[T], inv: &[T], y: &[f64]) -> T {
        let mu = &theta[self.mu.clone()];
        let per: Vec<T> = (0..self.k)
            .map(|k| {
                let z: Vec<T> = (0..self.d)
                    .map(|j| (mu[k * self.d + j] - y[j]) * inv[k * self.d + j])
                    .collect();
                offsets[k] - T::dot(&z, &z) * 0.5
            })
            .collect();
        if per.len() == 1 {
            per[0]
        } else {
            T::log_sum_exp(&per)
        }
    }
}

impl ModelSpec for Gmm {
    fn name(&self) -> &str {
        "gmm"
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
        let zero = theta[0].constant_like(0.0);
        let one = theta[0].constant_like(1.0);
        let mut prior = Vec::new();
        if self.k > 1 {
            prior.push(dirichlet_fixed_lpdf(&theta[..self.k], &self.alpha0)?);
        }
        for &m in &theta[self.mu.clone()] {
            prior.push(normal_fixed_lpdf(m, 0.0, 1.0)?);
        }
        for &s in &theta[self.sigma.clone()] {
            prior.push(lognormal_lpdf(s, zero, one)?);
        }
        let (offsets, inv) = self.component_terms(theta);
        let terms: Vec<T> = obs
            .iter(self.n)
            .map(|n| self.point(theta, &offsets, &inv, &self.y[n * self.d..(n + 1) * self.d]))
            .collect();
        Ok(T::sum(&prior) + scaled_sum(zero, &terms, obs.scale()))
    }
    fn held_out_log_lik(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let dims = data.validate(SCHEMA)?;
        if dim(&dims, "D") != self.d {
            return Err(ModelError::Invalid("held-out data has a different dimension".into()));
        }
        let (offsets, inv) = self.component_terms(theta);
        Ok(data
            .values("y")?
            .chunks(self.d)
            .map(|y| self.point(theta, &offsets, &inv, y))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Array;
    use crate::densities::normal_lpdf;
    use crate::models::test_util::check_gradient;
    use crate::special::log_sum_exp;

    fn small(n: usize, k: usize) -> (Gmm, Vec<f64>) {
        let y: Vec<f64> = (0..2 * n).map(|i| ((i * 7 + 3) % 11) as f64 / 3.0 - 1.5).collect();
        let data = Dataset::new()
            .with("y", Array::matrix(n, 2, y))
            .with("k", Array::scalar(k as f64));
        let m = Gmm::from_data(&data).unwrap();
        let zeta: Vec<f64> = (0..m.layout().unconstrained_dim()).map(|i| (i as f64).cos() * 0.8).collect();
        let theta = m.layout().decode(&zeta).theta;
        (m, theta)
    }

    /// Σ over all K^N assignments of Π_n θ_{z_n} N(y_n | μ_{z_n}, σ_{z_n}).
    fn brute_force(m: &Gmm, theta: &[f64]) -> f64 {
        let (n, k, d) = (m.n, m.k, m.d);
        let weights: Vec<f64> = if k > 1 { theta[..k].to_vec() } else { vec![1.0] };
        let mu = &theta[m.mu.clone()];
        let sigma = &theta[m.sigma.clone()];
        let mut logs = Vec::new();
        for code in 0..k.pow(n as u32) {
            let mut c = code;
            let mut total = 0.0;
            for i in 0..n {
                let z = c % k;
                c /= k;
                total += weights[z].ln();
                for j in 0..d {
                    total += normal_lpdf(m.y[i * d + j], mu[z * d + j], sigma[z * d + j]).unwrap();
                }
            }
            logs.push(total);
        }
        log_sum_exp(&logs)
    }

    fn prior(m: &Gmm, theta: &[f64]) -> f64 {
        let mut p = 0.0;
        if m.k > 1 {
            p += dirichlet_fixed_lpdf(&theta[..m.k], &m.alpha0).unwrap();
        }
        p += theta[m.mu.clone()].iter().map(|&v| normal_fixed_lpdf(v, 0.0, 1.0).unwrap()).sum::<f64>();
        p += theta[m.sigma.clone()].iter().map(|&s| lognormal_lpdf(s, 0.0, 1.0).unwrap()).sum::<f64>();
        p
    }

    #[test]
    fn marginal_likelihood_matches_enumeration() {
        for n in 1..=4 {
            for k in 1..=3 {
                let (m, theta) = small(n, k);
                let got = m.log_joint(&theta, Obs::All).unwrap() - prior(&m, &theta);
                let want = brute_force(&m, &theta);
                assert!((got - want).abs() < 1e-10, "n={n} k={k}: {got} {want}");
            }
        }
    }

    #[test]
    fn likelihood_is_invariant_to_relabelling() {
        let (m, theta) = small(4, 3);
        let perm = [2, 0, 1];
        let d = m.d;
        let mut swapped = theta.clone();
        for (new, &old) in perm.iter().enumerate() {
            swapped[new] = theta[old];
            for j in 0..d {
                swapped[m.mu.start + new * d + j] = theta[m.mu.start + old * d + j];
                swapped[m.sigma.start + new * d + j] = theta[m.sigma.start + old * d + j];
            }
        }
        let a = m.log_joint(&theta, Obs::All).unwrap();
        let b = m.log_joint(&swapped, Obs::All).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (m, _) = small(6, 3);
        check_gradient(&m, 5, 4, 1e-5);
    }
}
