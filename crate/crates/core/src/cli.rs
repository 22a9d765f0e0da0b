//! Command-line front end: `fit`, `eval` and `simulate`.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::evaluation::{
    draw_posterior, empirical_covariance, gradient_variance_study, kl_study, kl_study_config,
    predictive_log_likelihood, EvalError, PosteriorSamples, VarianceFixture, KL_TARGETS,
};
use crate::models::{build, simulate, Model, ModelError, Relayout};
use crate::optimizer::{fit, EtaScale, FitConfig, FitError, FitResult, Termination};
use crate::variational::Family;

/// Exit status for each failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const UNKNOWN_MODEL: u8 = 3;
    pub const INVALID_DATA: u8 = 4;
    pub const IO: u8 = 5;
    pub const DIVERGED: u8 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::UnknownModel(_) => exit::UNKNOWN_MODEL,
            CliError::Invalid(_) => exit::INVALID_DATA,
            CliError::Io { .. } => exit::IO,
            CliError::Diverged(_) => exit::DIVERGED,
            CliError::Internal(_) => exit::INTERNAL,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownModel(m) => CliError::UnknownModel(m),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Config(m) => CliError::Invalid(m),
            FitError::SearchDiverged => CliError::Diverged(e.to_string()),
            FitError::Variational(v) => CliError::Internal(v.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Fit(f) => f.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "advi", version, about = "Variational inference for the built-in model zoo")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model and write posterior draws and the ELBO trace.
    Fit(FitCommand),
    /// Evaluation studies and summaries.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Write a simulated dataset for a model as JSON.
    Simulate {
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List the available models.
    Models,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Meanfield,
    Fullrank,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PositiveArg {
    Log,
    Softplus,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// Model name, see `advi models`.
    pub model: String,
    /// JSON data file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "meanfield")]
    pub family: FamilyArg,
    /// Monte Carlo samples per gradient (M).
    #[arg(long = "grad-samples", default_value_t = 1)]
    pub grad_samples: usize,
    /// Step-size scale: `auto` or a positive number.
    #[arg(long, default_value = "auto", value_parser = parse_eta)]
    pub eta: EtaScale,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Minibatch size B; 0 uses all data.
    #[arg(long, default_value_t = 0)]
    pub minibatch: usize,
    #[arg(long = "max-iters", default_value_t = 10_000)]
    pub max_iters: usize,
    /// Relative ELBO change that counts as converged.
    #[arg(long, default_value_t = 0.001)]
    pub tol: f64,
    /// Iterations per convergence window.
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    /// Worker threads for the Monte Carlo samples.
    #[arg(long, env = "ADVI_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Transform for positive parameters.
    #[arg(long, value_enum, default_value = "log")]
    pub positive: PositiveArg,
    /// Write 0 for elapsed time so diagnostics are reproducible.
    #[arg(long = "no-clock")]
    pub no_clock: bool,
}

fn parse_eta(s: &str) -> Result<EtaScale, String> {
    if s == "auto" {
        return Ok(EtaScale::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(EtaScale::Fixed(v)),
        _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
    }
}

impl FitArgs {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            family: match self.family {
                FamilyArg::Meanfield => Family::MeanField,
                FamilyArg::Fullrank => Family::FullRank,
            },
            grad_samples: self.grad_samples,
            max_iters: self.max_iters,
            window: self.window,
            tol_rel: self.tol,
            minibatch: self.minibatch,
            seed: self.seed,
            eta: self.eta,
            threads: self.threads,
            clock: !self.no_clock,
            ..FitConfig::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct FitCommand {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Posterior draws CSV.
    #[arg(long, default_value = "output_advi.csv")]
    pub output: PathBuf,
    /// ELBO trace CSV.
    #[arg(long, default_value = "elbo_advi.csv")]
    pub diagnostic: PathBuf,
    /// Number of posterior draws written.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
}

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// Mean per-point log predictive density of held-out data.
    Predictive {
        #[command(flatten)]
        fit: FitArgs,
        /// Held-out JSON data with the training schema.
        #[arg(long = "held-out")]
        held_out: PathBuf,
        /// Draws CSV from an earlier `fit`; fits inline when omitted.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// KL divergence of mean-field fits to Gamma targets under both
    /// positive transforms.
    KlStudy {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Variance of the reparameterization and score-function gradients.
    VarianceStudy {
        #[arg(long, value_enum, default_value = "gamma")]
        fixture: FixtureArg,
        /// Comma-separated sample sizes M.
        #[arg(long = "grad-samples", value_delimiter = ',', default_value = "1,10,100")]
        grad_samples: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        replications: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Sample covariance of columns of a draws CSV.
    Covariance {
        /// Draws CSV from `fit`.
        #[arg(long)]
        samples: PathBuf,
        /// Comma-separated column names; all columns when omitted.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FixtureArg {
    Gamma,
    Tanh,
}

/// Float text with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_row<I, S>(w: &mut csv::Writer<File>, path: &Path, row: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| csv_err(path, e))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Invalid(format!("{}: {other:?}", path.display())),
    }
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).map_err(|e| match e {
        DataError::Io(io) => CliError::io(path, io),
        other => CliError::Invalid(format!("{}: {other}", path.display())),
    })
}

fn build_model(args: &FitArgs) -> Result<Box<dyn Model>, CliError> {
    crate::models::schema(&args.model)?;
    let data = load_data(&args.data)?;
    let model = build(&args.model, &data)?;
    Ok(match args.positive {
        PositiveArg::Log => model,
        PositiveArg::Softplus => Box::new(Relayout::softplus_positive(model)),
    })
}

fn run_fit(model: &dyn Model, args: &FitArgs) -> Result<FitResult, CliError> {
    let result = fit(model, &args.config())?;
    if result.termination == Termination::Diverged {
        return Err(CliError::Diverged(format!(
            "non-finite ELBO or parameters after {} iterations",
            result.trace.len()
        )));
    }
    Ok(result)
}

/// Seed for the posterior draws, distinct from the optimization stream.
fn draw_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
}

fn write_samples(path: &Path, names: &[String], samples: &PosteriorSamples) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_row(&mut w, path, names)?;
    for t in &samples.theta {
        write_row(&mut w, path, t.iter().map(|&v| fmt_f64(v)))?;
    }
    finish(w, path)
}

fn write_trace(path: &Path, result: &FitResult) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_row(&mut w, path, ["iter", "elapsed_seconds", "elbo"])?;
    for t in &result.trace {
        write_row(
            &mut w,
            path,
            [t.iteration.to_string(), fmt_f64(t.elapsed), fmt_f64(t.elbo)],
        )?;
    }
    finish(w, path)
}

fn read_samples(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn summarize(out: &mut impl Write, model: &dyn Model, result: &FitResult, samples: &PosteriorSamples) {
    let _ = writeln!(
        out,
        "{}: {:?} after {} iterations, eta {}, smoothed ELBO {:.6}",
        model.name(),
        result.termination,
        result.trace.len(),
        result.diagnostics.eta_scale,
        result.smoothed_elbo(50)
    );
    if result.diagnostics.discarded_samples > 0 || result.diagnostics.clamp_events > 0 {
        let _ = writeln!(
            out,
            "discarded draws {}, clamped exponentials {}",
            result.diagnostics.discarded_samples, result.diagnostics.clamp_events
        );
    }
    let names = model.layout().names();
    let mean = samples.mean();
    for (n, m) in names.iter().zip(&mean).take(20) {
        let _ = writeln!(out, "  {n:<20} {m:>12.5}");
    }
    if names.len() > 20 {
        let _ = writeln!(out, "  ... {} more", names.len() - 20);
    }
}

fn cmd_fit(c: &FitCommand) -> Result<(), CliError> {
    let model = build_model(&c.fit)?;
    if c.draws == 0 {
        return Err(CliError::Invalid("draws must be at least 1".into()));
    }
    // Fail on unwritable destinations before spending time on the fit.
    let out = create(&c.output)?;
    let diag = create(&c.diagnostic)?;
    drop((out, diag));
    let result = fit(model.as_ref(), &c.fit.config())?;
    write_trace(&c.diagnostic, &result)?;
    if result.termination == Termination::Diverged {
        return Err(CliError::Diverged(format!(
            "non-finite ELBO or parameters after {} iterations",
            result.trace.len()
        )));
    }
    let samples = draw_posterior(&result.params, model.layout(), c.draws, draw_seed(c.fit.seed))?;
    write_samples(&c.output, &model.layout().names(), &samples)?;
    summarize(&mut std::io::stderr(), model.as_ref(), &result, &samples);
    Ok(())
}

fn cmd_eval(e: &EvalCommand) -> Result<(), CliError> {
    match e {
        EvalCommand::Predictive {
            fit: args,
            held_out,
            samples,
            draws,
            output,
        } => {
            let model = build_model(args)?;
            let held = load_data(held_out)?;
            let draws = match samples {
                Some(path) => {
                    let (header, theta) = read_samples(path)?;
                    if header != model.layout().names() {
                        return Err(CliError::Invalid(format!(
                            "{}: columns do not match the parameters of `{}`",
                            path.display(),
                            args.model
                        )));
                    }
                    PosteriorSamples {
                        log_q: vec![f64::NAN; theta.len()],
                        zeta: Vec::new(),
                        theta,
                        log_joint: None,
                    }
                }
                None => {
                    let r = run_fit(model.as_ref(), args)?;
                    draw_posterior(&r.params, model.layout(), *draws, draw_seed(args.seed))?
                }
            };
            let value = predictive_log_likelihood(model.as_ref(), &held, &draws)?;
            let mut w = create(output)?;
            write_row(&mut w, output, ["model", "draws", "mean_log_predictive"])?;
            write_row(
                &mut w,
                output,
                [args.model.clone(), draws.len().to_string(), fmt_f64(value)],
            )?;
            finish(w, output)
        }
        EvalCommand::KlStudy { seed, output } => {
            let mut w = create(output)?;
            let rows = kl_study(&kl_study_config(*seed))?;
            let mut header = vec!["transform".to_string()];
            header.extend(KL_TARGETS.iter().map(|(a, b)| format!("gamma({a},{b})")));
            write_row(&mut w, output, &header)?;
            for chunk in rows.chunks(KL_TARGETS.len()) {
                let mut row = vec![chunk[0].transform.label().to_string()];
                row.extend(chunk.iter().map(|r| fmt_f64(r.kl.kl)));
                write_row(&mut w, output, &row)?;
            }
            finish(w, output)
        }
        EvalCommand::VarianceStudy {
            fixture,
            grad_samples,
            replications,
            seed,
            output,
        } => {
            if grad_samples.contains(&0) {
                return Err(CliError::Invalid("grad-samples entries must be positive".into()));
            }
            let mut w = create(output)?;
            let fixture = match fixture {
                FixtureArg::Gamma => VarianceFixture::Gamma,
                FixtureArg::Tanh => VarianceFixture::Tanh,
            };
            let reports = gradient_variance_study(fixture, grad_samples, *replications, *seed)?;
            write_row(
                &mut w,
                output,
                ["estimator", "grad_samples", "replications", "coordinate", "mean", "variance"],
            )?;
            for r in &reports {
                let k = r.variance.len() / 2;
                for (i, (m, v)) in r.mean.iter().zip(&r.variance).enumerate() {
                    let coord = if i < k {
                        format!("mu.{}", i + 1)
                    } else {
                        format!("omega.{}", i - k + 1)
                    };
                    write_row(
                        &mut w,
                        output,
                        [
                            r.estimator.label().to_string(),
                            r.samples.to_string(),
                            r.replications.to_string(),
                            coord,
                            fmt_f64(*m),
                            fmt_f64(*v),
                        ],
                    )?;
                }
            }
            finish(w, output)
        }
        EvalCommand::Covariance {
            samples,
            columns,
            output,
        } => {
            let (header, rows) = read_samples(samples)?;
            let picked: Vec<usize> = if columns.is_empty() {
                (0..header.len()).collect()
            } else {
                columns
                    .iter()
                    .map(|c| {
                        header
                            .iter()
                            .position(|h| h == c)
                            .ok_or_else(|| CliError::Invalid(format!("no column `{c}` in {}", samples.display())))
                    })
                    .collect::<Result<_, _>>()?
            };
            let cov = empirical_covariance(&rows, &picked)?;
            let mut w = create(output)?;
            let mut head = vec![String::new()];
            head.extend(picked.iter().map(|&i| header[i].clone()));
            write_row(&mut w, output, &head)?;
            for (a, &i) in picked.iter().enumerate() {
                let mut row = vec![header[i].clone()];
                row.extend((0..picked.len()).map(|b| fmt_f64(cov[(a, b)])));
                write_row(&mut w, output, &row)?;
            }
            finish(w, output)
        }
    }
}

fn cmd_simulate(model: &str, seed: u64, output: Option<&Path>) -> Result<(), CliError> {
    let data = simulate::default_dataset(model, seed)?;
    let text = data.to_json_string();
    match output {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e)),
        None => to_stdout(&text),
    }
}

/// Write a line to stdout; a closed pipe on the reading side is not an error.
fn to_stdout(text: &str) -> Result<(), CliError> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

/// Execute a parsed command.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit(c) => cmd_fit(c),
        Command::Eval(e) => cmd_eval(e),
        Command::Simulate { model, seed, output } => cmd_simulate(model, *seed, output.as_deref()),
        Command::Models => to_stdout(&crate::models::MODEL_NAMES.join("\n")),
    }
}

/// Parse `args` (including the program name), run, and report errors on
/// standard error.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
