//! Post-fit diagnostics: posterior draws, predictive likelihood, quadrature
//! KL divergence, gradient variance and sample covariance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::models::fixtures::{GammaTarget, TanhRegression};
use crate::models::{Model, ModelError, Obs, Relayout};
use crate::optimizer::{fit, EtaScale, FitConfig, FitError, ObsPlan, Optimizer};
use crate::special::log_sum_exp;
use crate::transforms::{ParameterLayout, TransformError};
use crate::variational::{
    advi_gradient, bbvi_gradient, standard_normal, EstimatorOptions, Family, Params, VariationalError,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("at least {0} posterior draws are required")]
    TooFewDraws(usize),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Variational(#[from] VariationalError),
    #[error("{0}")]
    Transform(#[from] TransformError),
    #[error("{0}")]
    Fit(#[from] FitError),
    #[error("integrand is not finite at ζ = {0}")]
    NonIntegrable(f64),
    #[error("expected a one-dimensional problem, got dimension {0}")]
    NotOneDimensional(usize),
}

/// Draws from q mapped to the constrained space.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub theta: Vec<Vec<f64>>,
    pub zeta: Vec<Vec<f64>>,
    pub log_q: Vec<f64>,
    /// ln p(x, θ) per draw, once attached.
    pub log_joint: Option<Vec<f64>>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn attach_log_joint(&mut self, model: &dyn Model) -> Result<(), EvalError> {
        let lj = self
            .theta
            .iter()
            .map(|t| model.log_joint_f64(t, Obs::All))
            .collect::<Result<Vec<_>, _>>()?;
        self.log_joint = Some(lj);
        Ok(())
    }

    /// Column means of the constrained draws.
    pub fn mean(&self) -> Vec<f64> {
        column_mean(&self.theta)
    }
}

fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows.first().map_or(0, Vec::len)];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    m
}

/// `s` independent draws θ = T⁻¹(ζ), ζ ~ q.
pub fn draw_posterior(
    params: &Params,
    layout: &ParameterLayout,
    s: usize,
    seed: u64,
) -> Result<PosteriorSamples, EvalError> {
    if s == 0 {
        return Err(EvalError::TooFewDraws(1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PosteriorSamples {
        theta: Vec::with_capacity(s),
        zeta: Vec::with_capacity(s),
        log_q: Vec::with_capacity(s),
        log_joint: None,
    };
    for _ in 0..s {
        let draw = params.sample(&standard_normal(&mut rng, params.dim()));
        let point = layout.inverse(&draw.zeta)?;
        out.log_q.push(params.log_density(&draw.zeta)?);
        out.theta.push(point.theta);
        out.zeta.push(draw.zeta);
    }
    Ok(out)
}

/// Average over held-out points of ln (1/S) Σ_s p(x_n | θ_s).
pub fn predictive_log_likelihood(
    model: &dyn Model,
    held_out: &crate::data::Dataset,
    samples: &PosteriorSamples,
) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::TooFewDraws(1));
    }
    let per_draw = samples
        .theta
        .iter()
        .map(|t| model.held_out_log_lik(t, held_out))
        .collect::<Result<Vec<_>, _>>()?;
    let points = per_draw[0].len();
    if points == 0 {
        return Ok(0.0);
    }
    let ln_s = (samples.len() as f64).ln();
    let mut column = vec![0.0; samples.len()];
    let mut total = 0.0;
    for n in 0..points {
        for (c, d) in column.iter_mut().zip(&per_draw) {
            *c = d[n];
        }
        total += log_sum_exp(&column) - ln_s;
    }
    Ok(total / points as f64)
}

/// KL(q ‖ p) with its grid-refinement error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlEstimate {
    pub kl: f64,
    pub error: f64,
}

/// Two-sided standard normal quantile leaving 1e-10 outside.
const MASS_Z: f64 = 6.466_951_6;
const KL_NODES: usize = 1 << 14;

/// KL divergence from the constrained-space density q induces to a
/// normalized one-dimensional `log_p`. Integrated over ζ, where
/// q_θ(θ) / p(θ) = q(ζ) / (p(T⁻¹(ζ)) |J_{T⁻¹}(ζ)|).
pub fn kl_q_to_density(
    params: &Params,
    layout: &ParameterLayout,
    log_p: impl Fn(f64) -> f64,
) -> Result<KlEstimate, EvalError> {
    if params.dim() != 1 || layout.unconstrained_dim() != 1 {
        return Err(EvalError::NotOneDimensional(params.dim().max(layout.unconstrained_dim())));
    }
    let (mu, sd) = (params.mu()[0], params.marginal_sd()[0]);
    let (lo, hi) = (mu - MASS_Z * sd, mu + MASS_Z * sd);
    let integrand = |z: f64| -> Result<f64, EvalError> {
        let lq = params.log_density(&[z])?;
        let point = layout.inverse(&[z])?;
        let v = lq.exp() * (lq - log_p(point.theta[0]) - point.log_abs_det_jac_inv);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonIntegrable(z))
        }
    };
    let h = (hi - lo) / KL_NODES as f64;
    let values = (0..=KL_NODES)
        .map(|i| integrand(lo + h * i as f64))
        .collect::<Result<Vec<_>, _>>()?;
    let trapezoid = |stride: usize| {
        let inner: f64 = values[stride..KL_NODES].iter().step_by(stride).sum();
        (inner + 0.5 * (values[0] + values[KL_NODES])) * h * stride as f64
    };
    let fine = trapezoid(1);
    let coarse = trapezoid(2);
    Ok(KlEstimate {
        kl: fine,
        error: (fine - coarse).abs() / 3.0,
    })
}

/// Positive-parameter transform used in the KL study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositiveTransform {
    /// ζ = ln θ.
    Log,
    /// ζ = ln(e^θ − 1).
    Softplus,
}

impl PositiveTransform {
    pub fn label(self) -> &'static str {
        match self {
            PositiveTransform::Log => "log",
            PositiveTransform::Softplus => "softplus",
        }
    }
}

/// Gamma(shape, rate) targets of the transformation study.
pub const KL_TARGETS: [(f64, f64); 3] = [(1.0, 2.0), (2.5, 4.2), (10.0, 10.0)];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlRow {
    pub transform: PositiveTransform,
    pub shape: f64,
    pub rate: f64,
    pub kl: KlEstimate,
    pub mu: f64,
    pub omega: f64,
}

/// Fit settings for the KL study: many samples per step so the fitted
/// parameters sit close to the optimum.
pub fn kl_study_config(seed: u64) -> FitConfig {
    FitConfig {
        family: Family::MeanField,
        grad_samples: 50,
        max_iters: 4000,
        tol_rel: 1e-6,
        eta: EtaScale::Auto,
        seed,
        ..Default::default()
    }
}

/// Mean-field fit to each Gamma target under each positive transform,
/// then the quadrature KL of the result.
pub fn kl_study(config: &FitConfig) -> Result<Vec<KlRow>, EvalError> {
    let mut rows = Vec::new();
    for transform in [PositiveTransform::Log, PositiveTransform::Softplus] {
        for &(shape, rate) in &KL_TARGETS {
            let target = GammaTarget::new(shape, rate);
            let model: Box<dyn Model> = match transform {
                PositiveTransform::Log => Box::new(target),
                PositiveTransform::Softplus => Box::new(Relayout::softplus_positive(Box::new(target))),
            };
            let r = fit(model.as_ref(), config)?;
            let oracle = GammaTarget::new(shape, rate);
            let kl = kl_q_to_density(&r.params, model.layout(), |t| oracle.log_density(t))?;
            let Params::MeanField { mu, omega } = &r.params else {
                unreachable!("the study uses the mean-field family")
            };
            rows.push(KlRow {
                transform,
                shape,
                rate,
                kl,
                mu: mu[0],
                omega: omega[0],
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Advi,
    Bbvi,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Advi => "advi",
            Estimator::Bbvi => "bbvi",
        }
    }
}

/// Spread of repeated gradient estimates at a fixed q.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    pub estimator: Estimator,
    pub samples: usize,
    pub replications: usize,
    /// Per coordinate of the flattened gradient (μ then ω).
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Models used by the variance study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceFixture {
    /// Gamma(10, 10) on one positive parameter.
    Gamma,
    /// y ~ N(tanh(xᵀβ), 1) on 100 simulated points with 5 covariates.
    Tanh,
}

impl VarianceFixture {
    pub fn build(self, seed: u64) -> Box<dyn Model> {
        match self {
            VarianceFixture::Gamma => Box::new(GammaTarget::new(10.0, 10.0)),
            VarianceFixture::Tanh => Box::new(
                TanhRegression::from_data(&crate::models::simulate::tanh_regression(100, 5, seed))
                    .expect("simulated data matches the schema"),
            ),
        }
    }
}

/// Iterations of the short fit that fixes the variance-study point.
pub const REFERENCE_ITERS: usize = 100;

/// Mean-field parameters after [`REFERENCE_ITERS`] single-sample steps
/// with η = 0.1 from the standard initialization.
pub fn reference_point(model: &dyn Model, seed: u64) -> Result<Params, EvalError> {
    let config = FitConfig {
        family: Family::MeanField,
        seed,
        ..Default::default()
    };
    let mut opt = Optimizer::new(model, &config, 0.1, ObsPlan::All);
    for _ in 0..REFERENCE_ITERS {
        opt.step()?;
    }
    Ok(opt.params().clone())
}

/// `replications` independent estimates with `samples` draws each.
/// Replication r uses its own seeded stream, so the result does not depend
/// on the thread count.
pub fn gradient_variance(
    model: &dyn Model,
    params: &Params,
    estimator: Estimator,
    samples: usize,
    replications: usize,
    seed: u64,
) -> Result<VarianceReport, EvalError> {
    if replications < 2 {
        return Err(EvalError::TooFewDraws(2));
    }
    let k = params.dim();
    let grads = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let etas: Vec<Vec<f64>> = (0..samples).map(|_| standard_normal(&mut rng, k)).collect();
            let opts = EstimatorOptions {
                redraw_seed: seed ^ (r as u64).rotate_left(32),
                parallel: false,
            };
            match estimator {
                Estimator::Advi => advi_gradient(model, params, &etas, Obs::All, opts),
                Estimator::Bbvi => {
                    let zetas: Vec<Vec<f64>> = etas.iter().map(|e| params.sample(e).zeta).collect();
                    bbvi_gradient(model, params, &zetas, Obs::All, opts)
                }
            }
            .map(|g| g.flat())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean = column_mean(&grads);
    let mut variance = vec![0.0; mean.len()];
    for g in &grads {
        for ((v, x), m) in variance.iter_mut().zip(g).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    variance.iter_mut().for_each(|v| *v /= (replications - 1) as f64);
    Ok(VarianceReport {
        estimator,
        samples,
        replications,
        mean,
        variance,
    })
}

/// Both estimators at every M in `sample_sizes`, at the fixture's
/// reference point.
pub fn gradient_variance_study(
    fixture: VarianceFixture,
    sample_sizes: &[usize],
    replications: usize,
    seed: u64,
) -> Result<Vec<VarianceReport>, EvalError> {
    let model = fixture.build(seed);
    let params = reference_point(model.as_ref(), seed)?;
    let mut out = Vec::new();
    for estimator in [Estimator::Advi, Estimator::Bbvi] {
        for &m in sample_sizes {
            out.push(gradient_variance(model.as_ref(), &params, estimator, m, replications, seed)?);
        }
    }
    Ok(out)
}

/// Unbiased sample covariance of the chosen columns.
pub fn empirical_covariance(rows: &[Vec<f64>], coordinates: &[usize]) -> Result<Matrix, EvalError> {
    if rows.len() < 2 {
        return Err(EvalError::TooFewDraws(2));
    }
    let picked: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| coordinates.iter().map(|&c| r[c]).collect())
        .collect();
    let mean = column_mean(&picked);
    let k = coordinates.len();
    let mut cov = Matrix::zeros(k);
    for r in &picked {
        for i in 0..k {
            for j in 0..=i {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let denom = (rows.len() - 1) as f64;
    for i in 0..k {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Correlation matrix from a covariance matrix.
pub fn correlation(cov: &Matrix) -> Matrix {
    let k = cov.dim();
    let mut out = Matrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            out[(i, j)] = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
        }
    }
    out
}
