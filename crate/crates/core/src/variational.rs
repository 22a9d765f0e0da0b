//! Gaussian variational families on the unconstrained space and Monte
//! Carlo estimators of the evidence lower bound gradient.

use std::cell::RefCell;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::Tape;
use crate::linalg::{LowerTriangular, SingularFactor};
use crate::models::{Model, Obs};
use crate::special::HALF_LN_2PI;
use crate::transforms::ParameterLayout;

/// Attempts per Monte Carlo sample before it is given up.
pub const REDRAWS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariationalError {
    #[error("degenerate covariance factor: {0}")]
    Degenerate(SingularFactor),
    #[error("all {attempts} Monte Carlo draws gave non-finite values")]
    Diverged { attempts: usize },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Unsupported(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    MeanField,
    FullRank,
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "meanfield" => Ok(Family::MeanField),
            "fullrank" => Ok(Family::FullRank),
            other => Err(format!("unknown family `{other}` (meanfield or fullrank)")),
        }
    }
}

/// Gaussian q(ζ) = N(μ, diag(exp(ω))²) or N(μ, L Lᵀ).
#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    MeanField { mu: Vec<f64>, omega: Vec<f64> },
    FullRank { mu: Vec<f64>, l: LowerTriangular },
}

/// One draw ζ = μ + scale·η.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedDraw {
    pub eta: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl Params {
    /// μ = 0 with unit scale.
    pub fn init(family: Family, k: usize) -> Self {
        match family {
            Family::MeanField => Params::MeanField {
                mu: vec![0.0; k],
                omega: vec![0.0; k],
            },
            Family::FullRank => Params::FullRank {
                mu: vec![0.0; k],
                l: LowerTriangular::identity(k),
            },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Params::MeanField { .. } => Family::MeanField,
            Params::FullRank { .. } => Family::FullRank,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu().len()
    }

    pub fn mu(&self) -> &[f64] {
        match self {
            Params::MeanField { mu, .. } | Params::FullRank { mu, .. } => mu,
        }
    }

    /// μ followed by ω, or by the packed lower triangle of L.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.mu().to_vec();
        match self {
            Params::MeanField { omega, .. } => out.extend(omega),
            Params::FullRank { l, .. } => out.extend(l.packed()),
        }
        out
    }

    /// Inverse of [`Params::flat`] for the same family and dimension.
    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.flat().len(), "flat parameter length");
        let k = self.dim();
        match self {
            Params::MeanField { mu, omega } => {
                mu.copy_from_slice(&values[..k]);
                omega.copy_from_slice(&values[k..]);
            }
            Params::FullRank { mu, l } => {
                mu.copy_from_slice(&values[..k]);
                l.packed_mut().copy_from_slice(&values[k..]);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }

    /// ζ = μ + diag(exp ω) η, or μ + L η.
    pub fn sample(&self, eta: &[f64]) -> StandardizedDraw {
        assert_eq!(eta.len(), self.dim(), "noise dimension");
        let zeta = match self {
            Params::MeanField { mu, omega } => mu
                .iter()
                .zip(omega)
                .zip(eta)
                .map(|((m, w), e)| m + w.exp() * e)
                .collect(),
            Params::FullRank { mu, l } => l.mul_vec(eta).iter().zip(mu).map(|(a, m)| a + m).collect(),
        };
        StandardizedDraw {
            eta: eta.to_vec(),
            zeta,
        }
    }

    /// η = S_φ(ζ), the inverse of [`Params::sample`].
    pub fn standardize(&self, zeta: &[f64]) -> Result<Vec<f64>, VariationalError> {
        match self {
            Params::MeanField { mu, omega } => Ok(zeta
                .iter()
                .zip(mu)
                .zip(omega)
                .map(|((z, m), w)| (z - m) / w.exp())
                .collect()),
            Params::FullRank { mu, l } => {
                let centred: Vec<f64> = zeta.iter().zip(mu).map(|(z, m)| z - m).collect();
                l.solve(&centred).map_err(VariationalError::Degenerate)
            }
        }
    }

    /// Differential entropy of q.
    pub fn entropy(&self) -> Result<f64, VariationalError> {
        let k = self.dim() as f64;
        let base = 0.5 * k * (1.0 + (2.0 * PI).ln());
        match self {
            Params::MeanField { omega, .. } => Ok(base + omega.iter().sum::<f64>()),
            Params::FullRank { l, .. } => Ok(base + l.log_abs_det().map_err(VariationalError::Degenerate)?),
        }
    }

    /// ln q(ζ).
    pub fn log_density(&self, zeta: &[f64]) -> Result<f64, VariationalError> {
        let eta = self.standardize(zeta)?;
        let log_scale = match self {
            Params::MeanField { omega, .. } => omega.iter().sum::<f64>(),
            Params::FullRank { l, .. } => l.log_abs_det().map_err(VariationalError::Degenerate)?,
        };
        Ok(-(self.dim() as f64) * HALF_LN_2PI - log_scale - 0.5 * eta.iter().map(|e| e * e).sum::<f64>())
    }

    /// Marginal standard deviations of q on the unconstrained space.
    pub fn marginal_sd(&self) -> Vec<f64> {
        match self {
            Params::MeanField { omega, .. } => omega.iter().map(|w| w.exp()).collect(),
            Params::FullRank { l, .. } => {
                let g = l.gram();
                (0..l.dim()).map(|i| g[(i, i)].sqrt()).collect()
            }
        }
    }
}

/// Gradient of the ELBO with respect to the scale parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum ScaleGradient {
    Omega(Vec<f64>),
    L(LowerTriangular),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub grad_mu: Vec<f64>,
    pub grad_scale: ScaleGradient,
    pub elbo: f64,
    /// Samples that contributed.
    pub samples_used: usize,
    /// Non-finite draws thrown away and redrawn.
    pub discarded: usize,
    /// Clamped `exp` arguments while decoding.
    pub clamps: usize,
}

impl GradientEstimate {
    /// Same layout as [`Params::flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.grad_mu.clone();
        match &self.grad_scale {
            ScaleGradient::Omega(g) => out.extend(g),
            ScaleGradient::L(g) => out.extend(g.packed()),
        }
        out
    }
}

/// Why a single Monte Carlo draw was rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleFailure(pub String);

/// f(ζ) = ln p(x, T⁻¹(ζ)) + ln |det J_{T⁻¹}(ζ)|, without gradient.
pub fn log_target(model: &dyn Model, zeta: &[f64], obs: Obs<'_>) -> Result<(f64, usize), SampleFailure> {
    let d = model.layout().decode(zeta);
    let lp = model
        .log_joint_f64(&d.theta, obs)
        .map_err(|e| SampleFailure(e.to_string()))?;
    let value = lp + d.log_jac.unwrap_or(0.0);
    if !value.is_finite() {
        return Err(SampleFailure(format!("log density {value}")));
    }
    Ok((value, d.clamps))
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::new());
}

/// f(ζ) and ∇ζ f(ζ) by reverse-mode differentiation.
pub fn log_target_grad(
    model: &dyn Model,
    zeta: &[f64],
    obs: Obs<'_>,
) -> Result<(f64, Vec<f64>, usize), SampleFailure> {
    TAPE.with(|cell| {
        let mut tape = cell.borrow_mut();
        tape.clear();
        let tape = &*tape;
        let vars = tape.vars(zeta);
        let d = model.layout().decode(&vars);
        let mut out = model
            .log_joint_var(&d.theta, obs)
            .map_err(|e| SampleFailure(e.to_string()))?;
        if let Some(j) = d.log_jac {
            out = out + j;
        }
        let grad = tape.gradient(out, &vars).map_err(|e| SampleFailure(e.to_string()))?;
        let value = out.value();
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(SampleFailure(format!("non-finite value or gradient at {value}")));
        }
        Ok((value, grad, d.clamps))
    })
}

/// Standard normal vectors of length `k`.
pub fn standard_normal(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| StandardNormal.sample(rng)).collect()
}

/// Generator for the redraws of sample `m`; independent of thread count.
fn redraw_rng(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64 + 1);
    rng
}

struct Draw {
    eta: Vec<f64>,
    zeta: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    clamps: usize,
    discarded: usize,
}

/// Evaluate `f` at `first`; on failure retry with fresh noise up to
/// [`REDRAWS`] attempts in total.
fn with_redraws<F>(first: &[f64], seed: u64, m: usize, mut f: F) -> Result<Draw, usize>
where
    F: FnMut(&[f64]) -> Result<Draw, SampleFailure>,
{
    let mut rng = None;
    let mut eta = first.to_vec();
    for attempt in 0..REDRAWS {
        if let Ok(mut d) = f(&eta) {
            d.discarded = attempt;
            return Ok(d);
        }
        let r = rng.get_or_insert_with(|| redraw_rng(seed, m));
        eta = standard_normal(r, first.len());
    }
    Err(REDRAWS)
}

fn run_samples<F>(batch: &[Vec<f64>], seed: u64, parallel: bool, f: F) -> (Vec<Draw>, usize)
where
    F: Fn(&[f64]) -> Result<Draw, SampleFailure> + Sync,
{
    let one = |(m, eta): (usize, &Vec<f64>)| with_redraws(eta, seed, m, &f);
    let results: Vec<Result<Draw, usize>> = if parallel {
        batch.par_iter().enumerate().map(one).collect()
    } else {
        batch.iter().enumerate().map(one).collect()
    };
    let mut failed = 0;
    let mut draws = Vec::with_capacity(batch.len());
    for r in results {
        match r {
            Ok(d) => draws.push(d),
            Err(n) => failed += n,
        }
    }
    (draws, failed)
}

/// Options shared by the gradient estimators.
#[derive(Clone, Copy, Debug, Default)]
pub struct EstimatorOptions {
    /// Seed for redrawing non-finite samples.
    pub redraw_seed: u64,
    /// Evaluate samples on the rayon pool.
    pub parallel: bool,
}

/// Reparameterization gradient of the ELBO from a batch of standard
/// normal vectors. `obs` carries any minibatch scaling.
pub fn advi_gradient(
    model: &dyn Model,
    params: &Params,
    eta_batch: &[Vec<f64>],
    obs: Obs<'_>,
    opts: EstimatorOptions,
) -> Result<GradientEstimate, VariationalError> {
    let k = params.dim();
    check_dim(model.layout(), k)?;
    if eta_batch.is_empty() {
        return Err(VariationalError::Unsupported("at least one Monte Carlo sample is required"));
    }
    let entropy = params.entropy()?;
    let scale_grad_base = match params {
        Params::MeanField { .. } => None,
        Params::FullRank { l, .. } => Some(l.inverse_transpose_lower().map_err(VariationalError::Degenerate)?),
    };
    let (draws, failed) = run_samples(eta_batch, opts.redraw_seed, opts.parallel, |eta| {
        let StandardizedDraw { eta, zeta } = params.sample(eta);
        let (value, grad, clamps) = log_target_grad(model, &zeta, obs)?;
        Ok(Draw {
            eta,
            zeta,
            value,
            grad,
            clamps,
            discarded: 0,
        })
    });
    if draws.is_empty() {
        return Err(VariationalError::Diverged { attempts: failed });
    }
    let count = draws.len() as f64;
    let mut grad_mu = vec![0.0; k];
    let mut elbo = 0.0;
    let mut discarded = failed;
    let mut clamps = 0;
    let grad_scale = match params {
        Params::MeanField { omega, .. } => {
            let mut g_omega = vec![0.0; k];
            for d in &draws {
                for i in 0..k {
                    grad_mu[i] += d.grad[i];
                    g_omega[i] += d.grad[i] * d.eta[i] * omega[i].exp();
                }
            }
            g_omega.iter_mut().for_each(|g| *g = *g / count + 1.0);
            ScaleGradient::Omega(g_omega)
        }
        Params::FullRank { .. } => {
            let mut g_l = LowerTriangular::zeros(k);
            for d in &draws {
                for i in 0..k {
                    grad_mu[i] += d.grad[i];
                    for j in 0..=i {
                        g_l.set(i, j, g_l.get(i, j) + d.grad[i] * d.eta[j]);
                    }
                }
            }
            let base = scale_grad_base.expect("full-rank");
            for (g, b) in g_l.packed_mut().iter_mut().zip(base.packed()) {
                *g = *g / count + b;
            }
            ScaleGradient::L(g_l)
        }
    };
    for d in &draws {
        elbo += d.value;
        discarded += d.discarded;
        clamps += d.clamps;
        debug_assert_eq!(d.zeta.len(), k);
    }
    grad_mu.iter_mut().for_each(|g| *g /= count);
    Ok(GradientEstimate {
        grad_mu,
        grad_scale,
        elbo: elbo / count + entropy,
        samples_used: draws.len(),
        discarded,
        clamps,
    })
}

/// Score-function gradient of the ELBO for a mean-field q, from draws
/// ζ ~ q. Uses no model gradient and no control variates.
pub fn bbvi_gradient(
    model: &dyn Model,
    params: &Params,
    zeta_batch: &[Vec<f64>],
    obs: Obs<'_>,
    opts: EstimatorOptions,
) -> Result<GradientEstimate, VariationalError> {
    let Params::MeanField { mu, omega } = params else {
        return Err(VariationalError::Unsupported("the score-function estimator is mean-field only"));
    };
    let k = params.dim();
    check_dim(model.layout(), k)?;
    if zeta_batch.is_empty() {
        return Err(VariationalError::Unsupported("at least one Monte Carlo sample is required"));
    }
    let entropy = params.entropy()?;
    // Redraws happen in η-space; convert the given ζ once.
    let eta_batch: Vec<Vec<f64>> = zeta_batch
        .iter()
        .map(|z| params.standardize(z))
        .collect::<Result<_, _>>()?;
    let (draws, failed) = run_samples(&eta_batch, opts.redraw_seed, opts.parallel, |eta| {
        let StandardizedDraw { eta, zeta } = params.sample(eta);
        let (value, clamps) = log_target(model, &zeta, obs)?;
        let log_q = params.log_density(&zeta).map_err(|e| SampleFailure(e.to_string()))?;
        Ok(Draw {
            eta,
            zeta,
            value,
            grad: vec![value - log_q],
            clamps,
            discarded: 0,
        })
    });
    if draws.is_empty() {
        return Err(VariationalError::Diverged { attempts: failed });
    }
    let count = draws.len() as f64;
    let mut grad_mu = vec![0.0; k];
    let mut grad_omega = vec![0.0; k];
    let (mut elbo, mut discarded, mut clamps) = (0.0, failed, 0);
    for d in &draws {
        let weight = d.grad[0];
        for i in 0..k {
            let sd = omega[i].exp();
            let e = (d.zeta[i] - mu[i]) / sd;
            grad_mu[i] += e / sd * weight;
            grad_omega[i] += (e * e - 1.0) * weight;
        }
        elbo += d.value;
        discarded += d.discarded;
        clamps += d.clamps;
    }
    grad_mu.iter_mut().for_each(|g| *g /= count);
    grad_omega.iter_mut().for_each(|g| *g /= count);
    Ok(GradientEstimate {
        grad_mu,
        grad_scale: ScaleGradient::Omega(grad_omega),
        elbo: elbo / count + entropy,
        samples_used: draws.len(),
        discarded,
        clamps,
    })
}

fn check_dim(layout: &ParameterLayout, k: usize) -> Result<(), VariationalError> {
    if layout.unconstrained_dim() != k {
        return Err(VariationalError::DimensionMismatch {
            expected: layout.unconstrained_dim(),
            got: k,
        });
    }
    Ok(())
}

/// ln of the density q induces on the constrained space:
/// ln q(T(θ)) + ln |det J_T(θ)|. Infeasible θ gives −∞.
pub fn implicit_constrained_density(params: &Params, layout: &ParameterLayout, theta: &[f64]) -> f64 {
    let Ok(zeta) = layout.forward(theta) else {
        return f64::NEG_INFINITY;
    };
    let Ok(point) = layout.inverse(&zeta) else {
        return f64::NEG_INFINITY;
    };
    match params.log_density(&zeta) {
        Ok(lq) => lq - point.log_abs_det_jac_inv,
        Err(_) => f64::NEG_INFINITY,
    }
}
