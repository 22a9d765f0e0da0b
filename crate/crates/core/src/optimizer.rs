//! Stochastic gradient ascent on the ELBO with an adaptive step-size
//! sequence, step-size scale search, convergence detection and minibatches.

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::models::{Model, Obs};
use crate::variational::{advi_gradient, standard_normal, EstimatorOptions, Family, Params, VariationalError};

/// Candidate scales for the automatic search.
pub const ETA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("every step-size scale diverged during the pilot search")]
    SearchDiverged,
    #[error("{0}")]
    Variational(#[from] VariationalError),
}

/// Per-coordinate step sizes
/// ρ_k = η · i^(−1/2+ε) · (τ + √s_k)⁻¹ with s_k ← α g_k² + (1−α) s_k.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSizeState {
    pub s: Vec<f64>,
    /// Index of the next step, starting at 1.
    pub iteration: u64,
    pub eta_scale: f64,
    pub tau: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

impl StepSizeState {
    pub fn new(dim: usize, eta_scale: f64) -> Self {
        Self {
            s: vec![0.0; dim],
            iteration: 1,
            eta_scale,
            tau: 1.0,
            alpha: 0.1,
            epsilon: 1e-16,
        }
    }

    /// Update the gradient memory with `grad` and return ρ for this step.
    pub fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.s.len(), "gradient dimension");
        if self.iteration == 1 {
            for (s, g) in self.s.iter_mut().zip(grad) {
                *s = g * g;
            }
        } else {
            for (s, g) in self.s.iter_mut().zip(grad) {
                *s = self.alpha * g * g + (1.0 - self.alpha) * *s;
            }
        }
        let decay = self.eta_scale * (self.iteration as f64).powf(-0.5 + self.epsilon);
        self.iteration += 1;
        self.s.iter().map(|s| decay / (self.tau + s.sqrt())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaScale {
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub family: Family,
    /// Monte Carlo samples per gradient.
    pub grad_samples: usize,
    pub max_iters: usize,
    /// Convergence window W.
    pub window: usize,
    pub tol_rel: f64,
    /// Minibatch size; 0 uses all data.
    pub minibatch: usize,
    pub seed: u64,
    pub eta: EtaScale,
    pub pilot_iters: usize,
    pub pilot_points: usize,
    /// Worker threads for the Monte Carlo samples; 1 is sequential.
    pub threads: usize,
    /// Record wall-clock time in the trace; off gives 0.
    pub clock: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            family: Family::MeanField,
            grad_samples: 1,
            max_iters: 10_000,
            window: 50,
            tol_rel: 0.001,
            minibatch: 0,
            seed: 0,
            eta: EtaScale::Auto,
            pilot_iters: 200,
            pilot_points: 1000,
            threads: 1,
            clock: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, model: &dyn Model) -> Result<(), FitError> {
        let bad = |m: String| Err(FitError::Config(m));
        if self.grad_samples == 0 {
            return bad("grad_samples must be at least 1".into());
        }
        if !(self.tol_rel > 0.0) {
            return bad("tol must be positive".into());
        }
        if self.window == 0 {
            return bad("convergence window must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if let EtaScale::Fixed(e) = self.eta {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("eta must be positive and finite, got {e}"));
            }
        }
        let n = model.num_obs();
        if self.minibatch > n {
            return bad(format!("minibatch {} exceeds the {n} observations", self.minibatch));
        }
        if self.minibatch > 0 && self.minibatch < n && !model.supports_subsampling() {
            return bad(format!("model `{}` does not support minibatches", model.name()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub elapsed: f64,
    pub elbo: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub discarded_samples: usize,
    pub clamp_events: usize,
    pub eta_scale: f64,
    /// Final ELBO of each pilot run, `None` where it diverged.
    pub pilot: Vec<(f64, Option<f64>)>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: Params,
    pub trace: Vec<TracePoint>,
    pub termination: Termination,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    /// Mean ELBO over the last `w` iterations.
    pub fn smoothed_elbo(&self, w: usize) -> f64 {
        tail_mean(&self.trace, w)
    }
}

fn tail_mean(trace: &[TracePoint], w: usize) -> f64 {
    let tail = &trace[trace.len().saturating_sub(w.max(1))..];
    tail.iter().map(|t| t.elbo).sum::<f64>() / tail.len() as f64
}

/// Which observations each iteration sees.
#[derive(Clone, Debug)]
pub enum ObsPlan {
    All,
    /// Fresh uniform minibatch of this size every iteration.
    Minibatch(usize),
    /// The same subset every iteration, scaled up to the full data.
    Fixed(Vec<usize>),
}

/// Record of one iteration.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub elbo: f64,
    pub grad: Vec<f64>,
    pub rho: Vec<f64>,
}

/// One run of the ascent loop, advanced one iteration at a time.
pub struct Optimizer<'m> {
    model: &'m dyn Model,
    params: Params,
    state: StepSizeState,
    rng: ChaCha8Rng,
    grad_samples: usize,
    plan: ObsPlan,
    parallel: bool,
    pub discarded: usize,
    pub clamps: usize,
}

impl<'m> Optimizer<'m> {
    pub fn new(model: &'m dyn Model, config: &FitConfig, eta_scale: f64, plan: ObsPlan) -> Self {
        let k = model.layout().unconstrained_dim();
        let params = Params::init(config.family, k);
        let dim = params.flat().len();
        Self {
            model,
            params,
            state: StepSizeState::new(dim, eta_scale),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            grad_samples: config.grad_samples,
            plan,
            parallel: config.threads > 1,
            discarded: 0,
            clamps: 0,
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Draw η, estimate the gradient at the current parameters, and move
    /// them by ρ ⊙ ∇. The ELBO reported is the estimate before the move.
    pub fn step(&mut self) -> Result<StepRecord, VariationalError> {
        let n = self.model.num_obs();
        let k = self.params.dim();
        let batch;
        let obs = match &self.plan {
            ObsPlan::Minibatch(b) if *b > 0 && *b < n => {
                batch = index::sample(&mut self.rng, n, *b).into_vec();
                Obs::batch(&batch, n)
            }
            ObsPlan::Fixed(idx) => Obs::batch(idx, n),
            _ => Obs::All,
        };
        let etas: Vec<Vec<f64>> = (0..self.grad_samples)
            .map(|_| standard_normal(&mut self.rng, k))
            .collect();
        let opts = EstimatorOptions {
            redraw_seed: self.rng.random(),
            parallel: self.parallel,
        };
        let est = advi_gradient(self.model, &self.params, &etas, obs, opts)?;
        self.discarded += est.discarded;
        self.clamps += est.clamps;
        let grad = est.flat();
        let rho = self.state.step(&grad);
        let mut flat = self.params.flat();
        for ((p, r), g) in flat.iter_mut().zip(&rho).zip(&grad) {
            *p += r * g;
        }
        self.params.set_flat(&flat);
        Ok(StepRecord {
            elbo: est.elbo,
            grad,
            rho,
        })
    }
}

/// Relative change between the means of the last two windows of width `w`,
/// measured against the older mean floored at 1 in magnitude.
pub fn window_change(trace: &[TracePoint], w: usize) -> Option<f64> {
    if w == 0 || trace.len() < 2 * w {
        return None;
    }
    let end = trace.len();
    let mean = |r: std::ops::Range<usize>| trace[r].iter().map(|t| t.elbo).sum::<f64>() / w as f64;
    let cur = mean(end - w..end);
    let prev = mean(end - 2 * w..end - w);
    Some((cur - prev).abs() / prev.abs().max(1.0))
}

struct Run {
    params: Params,
    trace: Vec<TracePoint>,
    termination: Termination,
    discarded: usize,
    clamps: usize,
}

fn run(
    model: &dyn Model,
    config: &FitConfig,
    eta_scale: f64,
    plan: ObsPlan,
    iters: usize,
    check_convergence: bool,
) -> Run {
    let mut opt = Optimizer::new(model, config, eta_scale, plan);
    let start = Instant::now();
    let mut trace = Vec::with_capacity(iters.min(100_000));
    let mut last_good = opt.params().clone();
    let mut termination = Termination::MaxIters;
    let mut bad_elbos = 0;
    for iteration in 1..=iters {
        let rec = match opt.step() {
            Ok(r) => r,
            Err(_) => {
                termination = Termination::Diverged;
                break;
            }
        };
        let elapsed = if config.clock { start.elapsed().as_secs_f64() } else { 0.0 };
        trace.push(TracePoint {
            iteration,
            elapsed,
            elbo: rec.elbo,
        });
        bad_elbos = if rec.elbo.is_finite() { 0 } else { bad_elbos + 1 };
        if !opt.params().is_finite() || bad_elbos >= config.window {
            termination = Termination::Diverged;
            break;
        }
        last_good = opt.params().clone();
        if check_convergence && iteration % config.window == 0 {
            if let Some(change) = window_change(&trace, config.window) {
                if change < config.tol_rel {
                    termination = Termination::Converged;
                    break;
                }
            }
        }
    }
    Run {
        params: last_good,
        trace,
        termination,
        discarded: opt.discarded,
        clamps: opt.clamps,
    }
}

/// Fixed subset of at most `config.pilot_points` observations for the
/// pilot runs, or all data when the model cannot be subsampled.
fn pilot_plan(model: &dyn Model, config: &FitConfig) -> ObsPlan {
    let n = model.num_obs();
    if !model.supports_subsampling() || n <= config.pilot_points || config.pilot_points == 0 {
        return ObsPlan::All;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    let mut idx = index::sample(&mut rng, n, config.pilot_points).into_vec();
    idx.sort_unstable();
    ObsPlan::Fixed(idx)
}

/// Pick η from [`ETA_GRID`] by the mean ELBO over the last window of a
/// short pilot run per candidate. Ties go to the smaller scale; diverged
/// candidates are skipped.
pub fn search_eta_scale(model: &dyn Model, config: &FitConfig) -> Result<(f64, Vec<(f64, Option<f64>)>), FitError> {
    config.validate(model)?;
    let plan = pilot_plan(model, config);
    let mut pilot = Vec::with_capacity(ETA_GRID.len());
    let mut best: Option<(f64, f64)> = None;
    for &eta in &ETA_GRID {
        let r = with_pool(config.threads, || run(model, config, eta, plan.clone(), config.pilot_iters, false));
        let score = match r.termination {
            Termination::Diverged => None,
            _ => Some(tail_mean(&r.trace, config.window)).filter(|s| s.is_finite()),
        };
        pilot.push((eta, score));
        if let Some(s) = score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((eta, s));
            }
        }
    }
    best.map(|(eta, _)| (eta, pilot)).ok_or(FitError::SearchDiverged)
}

fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Run the ascent from μ = 0 and unit scale until convergence, the
/// iteration cap, or divergence.
pub fn fit(model: &dyn Model, config: &FitConfig) -> Result<FitResult, FitError> {
    config.validate(model)?;
    let (eta_scale, pilot) = match config.eta {
        EtaScale::Fixed(e) => (e, Vec::new()),
        EtaScale::Auto => search_eta_scale(model, config)?,
    };
    let plan = if config.minibatch > 0 {
        ObsPlan::Minibatch(config.minibatch)
    } else {
        ObsPlan::All
    };
    let r = with_pool(config.threads, || run(model, config, eta_scale, plan, config.max_iters, true));
    Ok(FitResult {
        params: r.params,
        trace: r.trace,
        termination: r.termination,
        diagnostics: Diagnostics {
            discarded_samples: r.discarded,
            clamp_events: r.clamps,
            eta_scale,
            pilot,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fixtures::{Exploding, GaussianTarget, StandardNormal};
    use crate::variational::Family;
    use proptest::prelude::*;

    fn cfg(family: Family, eta: f64, seed: u64) -> FitConfig {
        FitConfig {
            family,
            eta: EtaScale::Fixed(eta),
            seed,
            max_iters: 20_000,
            ..Default::default()
        }
    }

    #[test]
    fn step_size_examples() {
        let mut s = StepSizeState::new(1, 1.0);
        assert_eq!(s.step(&[1.0]), vec![0.5]);
        assert_eq!(s.s, vec![1.0]);

        let mut s = StepSizeState::new(2, 3.0);
        for i in 1..6u64 {
            let rho = s.step(&[0.0, 0.0]);
            let want = 3.0 * (i as f64).powf(-0.5 + 1e-16);
            assert!((rho[0] - want).abs() < 1e-12);
        }

        let mut s = StepSizeState::new(1, 10.0);
        s.iteration = 4;
        s.s = vec![4.0];
        // A zero gradient decays the memory: s = 0.9 · 4.
        let rho = s.step(&[0.0]);
        let want = 10.0 * 4f64.powf(-0.5 + 1e-16) / (1.0 + 3.6f64.sqrt());
        assert!((rho[0] - want).abs() < 1e-12);
        // With memory held at 4 the value is 10/(2·3).
        let direct = 10.0 * 4f64.powf(-0.5 + 1e-16) / (1.0 + 2.0);
        assert!((direct - 1.666_666_666_666_666_7).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn memory_stays_nonnegative_and_rho_follows_formula(
            grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..30),
            eta in prop::sample::select(ETA_GRID.to_vec()),
        ) {
            let mut s = StepSizeState::new(3, eta);
            let mut memory = [0.0f64; 3];
            for (i, g) in grads.iter().enumerate() {
                let rho = s.step(g);
                for k in 0..3 {
                    memory[k] = if i == 0 { g[k] * g[k] } else { 0.1 * g[k] * g[k] + 0.9 * memory[k] };
                    prop_assert!(s.s[k] >= 0.0);
                    let want = eta * ((i + 1) as f64).powf(-0.5 + 1e-16) / (1.0 + memory[k].sqrt());
                    prop_assert!((rho[k] - want).abs() <= 1e-12 * want.max(1.0));
                }
                prop_assert_eq!(s.iteration, i as u64 + 2);
            }
        }
    }

    #[test]
    fn standard_normal_target_converges_to_origin() {
        let model = StandardNormal::new(1);
        let r = fit(&model, &cfg(Family::MeanField, 1.0, 1)).unwrap();
        assert_ne!(r.termination, Termination::Diverged);
        let Params::MeanField { mu, omega } = &r.params else { panic!() };
        assert!(mu[0].abs() < 0.05, "mu {}", mu[0]);
        assert!(omega[0].abs() < 0.05, "omega {}", omega[0]);
    }

    #[test]
    fn full_rank_recovers_correlated_gaussian() {
        let target = GaussianTarget::correlated_2d();
        let mut c = cfg(Family::FullRank, 0.1, 2);
        c.grad_samples = 10;
        c.max_iters = 5000;
        c.tol_rel = 1e-4;
        let r = fit(&target, &c).unwrap();
        let Params::FullRank { l, .. } = &r.params else { panic!() };
        let err = l.gram().sub(&target.cov).frobenius() / target.cov.frobenius();
        assert!(err < 0.05, "relative Frobenius error {err}");
    }

    #[test]
    fn one_iteration_moves_params_by_rho_times_gradient() {
        let target = GaussianTarget::correlated_2d();
        for family in [Family::MeanField, Family::FullRank] {
            let c = cfg(family, 1.0, 3);
            let mut opt = Optimizer::new(&target, &c, 1.0, ObsPlan::All);
            opt.step().unwrap();
            let before = opt.params().flat();
            let rec = opt.step().unwrap();
            let after = opt.params().flat();
            for i in 0..before.len() {
                assert_eq!(after[i], before[i] + rec.rho[i] * rec.grad[i]);
            }
        }
    }

    #[test]
    fn identical_configs_give_identical_traces() {
        let data = crate::models::simulate::logistic_regression(200, 3, 4);
        let model = crate::models::build("logistic_regression", &data).unwrap();
        let mut c = cfg(Family::MeanField, 1.0, 9);
        c.clock = false;
        c.max_iters = 300;
        c.minibatch = 50;
        let a = fit(model.as_ref(), &c).unwrap();
        let b = fit(model.as_ref(), &c).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.params, b.params);
        c.threads = 3;
        let p = fit(model.as_ref(), &c).unwrap();
        assert_eq!(a.trace, p.trace);
    }

    #[test]
    fn eta_search_is_deterministic_and_excludes_divergent_scales() {
        let target = GaussianTarget::correlated_2d();
        let c = FitConfig::default();
        let (a, pa) = search_eta_scale(&target, &c).unwrap();
        let (b, pb) = search_eta_scale(&target, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(pa.iter().all(|(_, s)| s.is_some()));

        let (chosen, pilot) = search_eta_scale(&Exploding::new(), &c).unwrap();
        assert_eq!(pilot.last().unwrap(), &(100.0, None));
        assert!(chosen < 100.0);
    }

    #[test]
    fn config_validation() {
        let data = crate::models::simulate::logistic_regression(10, 2, 1);
        let model = crate::models::build("logistic_regression", &data).unwrap();
        let mut c = FitConfig {
            minibatch: 11,
            ..Default::default()
        };
        assert!(matches!(fit(model.as_ref(), &c), Err(FitError::Config(_))));
        c.minibatch = 0;
        c.grad_samples = 0;
        assert!(c.validate(model.as_ref()).is_err());
        let sv = crate::models::build("stochastic_volatility", &crate::models::simulate::stochastic_volatility(20, 1))
            .unwrap();
        let c = FitConfig {
            minibatch: 5,
            ..Default::default()
        };
        assert!(c.validate(sv.as_ref()).is_err());
    }

    #[test]
    fn window_change_uses_consecutive_windows() {
        let trace: Vec<TracePoint> = (0..6)
            .map(|i| TracePoint {
                iteration: i + 1,
                elapsed: 0.0,
                elbo: if i < 3 { -10.0 } else { -11.0 },
            })
            .collect();
        assert_eq!(window_change(&trace, 3), Some(0.1));
        assert_eq!(window_change(&trace[..5], 3), None);
    }
}
