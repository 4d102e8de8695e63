//! Monte-Carlo experiment orchestration.
//!
//! One experiment builds a random graph, selects a sampling set, then runs
//! independent trials, each with its own band-limited signal and noise stream.
//! All randomness comes from [`crate::rng::stream`], so the output depends on
//! the configuration alone and not on the number of worker threads.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    build_theory, mse_trajectory, stability_report, steady_state_msd, InitialMoments, MsePoint,
    NoiseCovariance, StabilityReport, SteadyState,
};
use crate::error::{Error, Result};
use crate::filters::{nmse_db, run_filter, Algorithm, ObservationModel, Trajectory};
use crate::quat::{QSignal, Quaternion};
use crate::rng::{self, Purpose, StreamRng, EXPERIMENT_WIDE};
use crate::sampling::{
    coupling_matrix, maxdet_select, mu_bound, random_select_with, recoverability_check,
    Recoverability, SamplingPlan, Strategy,
};
use crate::spectral::{gen_er_graph_with, SpectralGraph, Support};

/// NMSE level, in dB, used for convergence-speed comparisons.
pub const CONVERGENCE_DB: f64 = -10.0;

/// How the RLMS baseline step size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuRRule {
    /// `μ_r = 4μ`, matching the QGLMS imaginary-plane gain.
    FourMu,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmChoice {
    Qglms,
    Rlms,
    Both,
}

impl AlgorithmChoice {
    pub fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AlgorithmChoice::Qglms => vec![Algorithm::Qglms],
            AlgorithmChoice::Rlms => vec![Algorithm::Rlms],
            AlgorithmChoice::Both => vec![Algorithm::Qglms, Algorithm::Rlms],
        }
    }
}

impl FromStr for AlgorithmChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "qglms" => Ok(AlgorithmChoice::Qglms),
            "rlms" => Ok(AlgorithmChoice::Rlms),
            "both" => Ok(AlgorithmChoice::Both),
            other => Err(format!("unknown algorithm '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_nodes: usize,
    pub edge_prob: f64,
    pub bandwidth: usize,
    pub budget: usize,
    pub noise_sigma2: f64,
    /// Spectral coefficients are Uniform(−signal_range, signal_range) per component.
    pub signal_range: f64,
    /// `μ = mu_frac · mu_bound(M)`.
    pub mu_frac: f64,
    pub mu_r_rule: MuRRule,
    pub strategy: Strategy,
    pub algorithm: AlgorithmChoice,
    pub trials: usize,
    pub iters: usize,
    pub master_seed: u64,
    /// Draw a new graph (and sampling set) for every trial.
    pub graph_per_trial: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_nodes: 50,
            edge_prob: 0.2,
            bandwidth: 10,
            budget: 10,
            noise_sigma2: 0.01,
            signal_range: 2.0,
            mu_frac: 0.5,
            mu_r_rule: MuRRule::FourMu,
            strategy: Strategy::MaxDet,
            algorithm: AlgorithmChoice::Both,
            trials: 200,
            iters: 1000,
            master_seed: 42,
            graph_per_trial: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_nodes < 2 {
            return bad(format!("n_nodes must be >= 2, got {}", self.n_nodes));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob <= 1.0) {
            return bad(format!("edge_prob {} not in (0, 1]", self.edge_prob));
        }
        if self.bandwidth == 0 || self.bandwidth > self.n_nodes {
            return bad(format!("bandwidth {} not in 1..={}", self.bandwidth, self.n_nodes));
        }
        if self.budget == 0 || self.budget > self.n_nodes {
            return bad(format!("budget {} not in 1..={}", self.budget, self.n_nodes));
        }
        if !(self.noise_sigma2 >= 0.0 && self.noise_sigma2.is_finite()) {
            return bad(format!("noise_sigma2 {} must be >= 0", self.noise_sigma2));
        }
        if !(self.signal_range >= 0.0 && self.signal_range.is_finite()) {
            return bad(format!("signal_range {} must be >= 0", self.signal_range));
        }
        if !(self.mu_frac > 0.0 && self.mu_frac <= 1.0) {
            return bad(format!("mu_frac {} not in (0, 1]", self.mu_frac));
        }
        if let MuRRule::Explicit(v) = self.mu_r_rule {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("explicit mu_r {v} must be > 0"));
            }
        }
        if self.trials == 0 || self.iters == 0 {
            return bad("trials and iters must be >= 1".into());
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn mu_r(&self, mu: f64) -> f64 {
        match self.mu_r_rule {
            MuRRule::FourMu => 4.0 * mu,
            MuRRule::Explicit(v) => v,
        }
    }
}

/// Options that change how an experiment executes but not what it computes.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    /// Run even when the sampling set cannot recover the band.
    pub force: bool,
    /// Compute the theoretical learning curve.
    pub theory: bool,
}

/// Graph, sampling set and step sizes shared by the trials that use them.
#[derive(Debug, Clone)]
pub struct Context {
    pub sg: SpectralGraph,
    pub freq_set: Vec<usize>,
    pub u_f: DMatrix<f64>,
    pub plan: SamplingPlan,
    pub m: DMatrix<f64>,
    pub recoverability: Recoverability,
    pub mu_bound: f64,
    pub mu: f64,
    pub mu_r: f64,
    pub stability: StabilityReport,
}

/// Builds the graph, selects `S` and derives step sizes for `config`.
pub fn build_context(
    config: &ExperimentConfig,
    graph_rng: &mut StreamRng,
    sampling_rng: &mut StreamRng,
    force: bool,
) -> Result<Context> {
    let graph = gen_er_graph_with(config.n_nodes, config.edge_prob, graph_rng)?;
    let sg = SpectralGraph::new(graph)?;
    let freq_set: Vec<usize> = (0..config.bandwidth).collect();
    let u_f = sg.u_f(&freq_set)?;
    let plan = match config.strategy {
        Strategy::MaxDet => maxdet_select(&u_f, config.budget)?,
        Strategy::Random => random_select_with(config.n_nodes, config.budget, sampling_rng)?,
    };
    let m = coupling_matrix(&u_f, &plan.sample_set)?;
    let recoverability = recoverability_check(&m)?;
    if !recoverability.recoverable && !force {
        return Err(Error::Unrecoverable {
            lambda_min: recoverability.lambda_min,
        });
    }
    let bound = mu_bound(&m)?;
    let mu = config.mu_frac * bound;
    let stability = stability_report(&m, mu)?;
    Ok(Context {
        mu_r: config.mu_r(mu),
        sg,
        freq_set,
        u_f,
        plan,
        m,
        recoverability,
        mu_bound: bound,
        mu,
        stability,
    })
}

/// Experiment-wide context (graph stream and sampling stream keyed to the whole run).
pub fn shared_context(config: &ExperimentConfig, force: bool) -> Result<Context> {
    build_context(
        config,
        &mut rng::stream(config.master_seed, EXPERIMENT_WIDE, Purpose::Graph),
        &mut rng::stream(config.master_seed, EXPERIMENT_WIDE, Purpose::Sampling),
        force,
    )
}

/// Band-limited `x° = U_F ŝ` with every component of `ŝ` Uniform(−range, range).
/// Returns `(x°, ŝ)`.
pub fn synthesize_signal(
    sg: &SpectralGraph,
    freq_set: &[usize],
    range: f64,
    rng: &mut impl Rng,
) -> Result<(QSignal, QSignal)> {
    let coeffs: Vec<Quaternion> = freq_set
        .iter()
        .map(|_| {
            Quaternion::from(std::array::from_fn(|_| {
                if range > 0.0 {
                    rng.random_range(-range..range)
                } else {
                    0.0
                }
            }))
        })
        .collect();
    let s_hat = QSignal::from_entries(&coeffs)?;
    let x = s_hat.apply_real_matrix(&sg.u_f(freq_set)?)?;
    Ok((x, s_hat))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    /// Spectral coefficients of `x°` on `F` (so the initial error is `−ŝ°`).
    pub s_hat_true: QSignal,
    /// One trajectory per algorithm, in the order of [`AlgorithmChoice::algorithms`].
    pub trajectories: Vec<Trajectory>,
}

/// Mean NMSE over the last 10% of iterations (at least one).
pub fn steady_state_nmse(nmse: &[f64]) -> f64 {
    let tail = (nmse.len() / 10).max(1);
    let s = &nmse[nmse.len() - tail..];
    s.iter().sum::<f64>() / s.len() as f64
}

/// First iteration number (1-based) with NMSE at or below `db` decibels.
pub fn iterations_to_db(nmse: &[f64], db: f64) -> Option<usize> {
    nmse.iter().position(|&v| nmse_db(v) <= db).map(|k| k + 1)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One-sided sign-test p-value `P(X ≥ wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    if wins == 0 {
        return 1.0;
    }
    let ln_choose = |k: usize| -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
    };
    let ln_half_n = n as f64 * 0.5f64.ln();
    (wins..=n).map(|k| (ln_choose(k) + ln_half_n).exp()).sum::<f64>().min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub step: f64,
    pub nmse_mean: Vec<f64>,
    pub nmse_median: Vec<f64>,
    pub steady_state: Vec<f64>,
    pub steady_state_mean: f64,
    pub steady_state_median: f64,
    /// Per trial; `None` if the level was never reached.
    pub iters_to_convergence: Vec<Option<usize>>,
    /// Median with unreached trials counted as `iters + 1`.
    pub median_iters_to_convergence: f64,
}

impl AlgorithmSummary {
    pub fn nmse_db_mean(&self) -> Vec<f64> {
        self.nmse_mean.iter().map(|&v| nmse_db(v)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ExperimentConfig,
    /// `None` with `graph_per_trial`, where every trial has its own context.
    pub context: Option<Context>,
    pub trials: Vec<TrialResult>,
    pub summaries: Vec<AlgorithmSummary>,
    /// Theoretical `E‖ŝ[n]‖²`, `n = 0..=iters`, from the trials' initial errors.
    pub theory_curve: Option<Vec<MsePoint>>,
    pub steady_state_theory: Option<SteadyState>,
    pub wall_time_s: f64,
}

impl RunResult {
    pub fn summary(&self, algorithm: Algorithm) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }

    /// Per-trial `(spectral_real, spectral_imag)` curves for `algorithm`.
    pub fn trajectories(&self, algorithm: Algorithm) -> Vec<&Trajectory> {
        let idx = self
            .config
            .algorithm
            .algorithms()
            .iter()
            .position(|&a| a == algorithm);
        match idx {
            Some(i) => self.trials.iter().map(|t| &t.trajectories[i]).collect(),
            None => Vec::new(),
        }
    }
}

fn run_trial(
    config: &ExperimentConfig,
    ctx: &Context,
    trial: usize,
    algorithms: &[Algorithm],
) -> Result<TrialResult> {
    let t = trial as u64;
    let mut signal_rng = rng::stream(config.master_seed, t, Purpose::Signal);
    let (x_true, s_hat_true) =
        synthesize_signal(&ctx.sg, &ctx.freq_set, config.signal_range, &mut signal_rng)?;
    let support = Support::new(ctx.freq_set.clone(), ctx.plan.sample_set.clone(), ctx.sg.n())?;
    let model = ObservationModel::new(&ctx.sg, support, x_true, config.noise_sigma2)?;
    let trajectories = algorithms
        .iter()
        .map(|&alg| {
            // both algorithms see the same noise sequence
            let mut noise_rng = rng::stream(config.master_seed, t, Purpose::Noise);
            let step = match alg {
                Algorithm::Qglms => ctx.mu,
                Algorithm::Rlms => ctx.mu_r,
            };
            run_filter(&model, alg, step, config.iters, &mut noise_rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialResult {
        trial,
        s_hat_true,
        trajectories,
    })
}

fn summarize(
    config: &ExperimentConfig,
    trials: &[TrialResult],
    idx: usize,
    algorithm: Algorithm,
    step: f64,
) -> AlgorithmSummary {
    let iters = config.iters;
    let count = trials.len() as f64;
    let mut nmse_mean = vec![0.0; iters];
    let mut column = vec![0.0; trials.len()];
    let mut nmse_median = vec![0.0; iters];
    for k in 0..iters {
        for (j, t) in trials.iter().enumerate() {
            column[j] = t.trajectories[idx].nmse[k];
        }
        nmse_mean[k] = column.iter().sum::<f64>() / count;
        nmse_median[k] = median(&column);
    }
    let steady_state: Vec<f64> = trials
        .iter()
        .map(|t| steady_state_nmse(&t.trajectories[idx].nmse))
        .collect();
    let iters_to_convergence: Vec<Option<usize>> = trials
        .iter()
        .map(|t| iterations_to_db(&t.trajectories[idx].nmse, CONVERGENCE_DB))
        .collect();
    let as_f64: Vec<f64> = iters_to_convergence
        .iter()
        .map(|v| v.unwrap_or(iters + 1) as f64)
        .collect();
    AlgorithmSummary {
        algorithm,
        step,
        nmse_mean,
        nmse_median,
        steady_state_mean: steady_state.iter().sum::<f64>() / count,
        steady_state_median: median(&steady_state),
        steady_state,
        iters_to_convergence,
        median_iters_to_convergence: median(&as_f64),
    }
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs every trial of `config` and aggregates the learning curves.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let algorithms = config.algorithm.algorithms();

    let shared = if config.graph_per_trial {
        None
    } else {
        Some(shared_context(config, opts.force)?)
    };

    let trials: Vec<TrialResult> = with_pool(opts.workers, || {
        (0..config.trials)
            .into_par_iter()
            .map(|trial| match &shared {
                Some(ctx) => run_trial(config, ctx, trial, &algorithms),
                None => {
                    let t = trial as u64;
                    let ctx = build_context(
                        config,
                        &mut rng::stream(config.master_seed, t, Purpose::Graph),
                        &mut rng::stream(config.master_seed, t, Purpose::Sampling),
                        opts.force,
                    )?;
                    run_trial(config, &ctx, trial, &algorithms)
                }
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let summaries = algorithms
        .iter()
        .enumerate()
        .map(|(i, &alg)| {
            let step = match (&shared, alg) {
                (Some(ctx), Algorithm::Qglms) => ctx.mu,
                (Some(ctx), Algorithm::Rlms) => ctx.mu_r,
                (None, _) => f64::NAN,
            };
            summarize(config, &trials, i, alg, step)
        })
        .collect();

    let (mut theory_curve, mut steady_state_theory) = (None, None);
    if let Some(ctx) = &shared {
        if ctx.recoverability.recoverable {
            let theory = build_theory(
                &ctx.u_f,
                &ctx.plan.sample_set,
                ctx.mu,
                &NoiseCovariance::isotropic(config.noise_sigma2, config.n_nodes),
            )?;
            steady_state_theory = steady_state_msd(&theory).ok();
            if opts.theory {
                let initial: Vec<QSignal> = trials.iter().map(|t| t.s_hat_true.clone()).collect();
                let init = InitialMoments::from_signals(&initial);
                theory_curve = Some(mse_trajectory(&theory, &init, config.iters)?);
            }
        }
    }

    Ok(RunResult {
        config: config.clone(),
        context: shared,
        trials,
        summaries,
        theory_curve,
        steady_state_theory,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Budget,
    MuFrac,
    Sigma2,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Budget => "budget",
            SweepParam::MuFrac => "mu_frac",
            SweepParam::Sigma2 => "sigma2",
        })
    }
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "budget" => Ok(SweepParam::Budget),
            "mu_frac" | "mu-frac" => Ok(SweepParam::MuFrac),
            "sigma2" => Ok(SweepParam::Sigma2),
            other => Err(format!("unknown sweep parameter '{other}'")),
        }
    }
}

/// One experiment per value, all sharing the configured master seed.
pub fn sweep(
    config: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    opts: &RunOptions,
) -> Result<Vec<RunResult>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let mut cfg = config.clone();
            match param {
                SweepParam::Budget => {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(Error::InvalidParameter(format!("budget {v} is not a count")));
                    }
                    cfg.budget = v as usize;
                }
                SweepParam::MuFrac => cfg.mu_frac = v,
                SweepParam::Sigma2 => cfg.noise_sigma2 = v,
            }
            run_experiment(&cfg, opts)
        })
        .collect()
}

/// How per-trial trajectories are written by [`emit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerTrialOutput {
    #[default]
    None,
    /// One `trials_<alg>.csv` with a `trial` column.
    Aggregated,
    /// One `trials/<alg>_<trial>.csv` per trial.
    Files,
}

impl FromStr for PerTrialOutput {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(PerTrialOutput::None),
            "aggregated" => Ok(PerTrialOutput::Aggregated),
            "files" => Ok(PerTrialOutput::Files),
            other => Err(format!("unknown per-trial mode '{other}'")),
        }
    }
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn write_row<I, S>(w: &mut csv::Writer<fs::File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| Error::csv(path, e))
}

/// JSON summary written next to the CSV outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub graph_hash: Option<String>,
    pub sampling_plan: Option<SamplingPlan>,
    pub recoverability: Option<Recoverability>,
    pub mu_bound: Option<f64>,
    pub mu: Option<f64>,
    pub mu_r: Option<f64>,
    pub stability: Option<StabilityReport>,
    pub steady_state_theory: Option<SteadyState>,
    pub algorithms: Vec<AlgorithmReport>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlgorithmReport {
    pub algorithm: Algorithm,
    pub step: Option<f64>,
    pub steady_state_nmse_mean: f64,
    pub steady_state_nmse_median: f64,
    pub steady_state_nmse_db_mean: f64,
    pub median_iters_to_minus_10db: f64,
}

pub fn version_string() -> String {
    format!("qglms {}", env!("CARGO_PKG_VERSION"))
}

impl RunResult {
    pub fn to_summary(&self) -> Summary {
        let ctx = self.context.as_ref();
        Summary {
            version: version_string(),
            config: self.config.clone(),
            config_hash: self.config.hash(),
            graph_hash: ctx.map(|c| c.sg.graph().content_hash()),
            sampling_plan: ctx.map(|c| c.plan.clone()),
            recoverability: ctx.map(|c| c.recoverability),
            mu_bound: ctx.map(|c| c.mu_bound),
            mu: ctx.map(|c| c.mu),
            mu_r: ctx.map(|c| c.mu_r),
            stability: ctx.map(|c| c.stability),
            steady_state_theory: self.steady_state_theory,
            algorithms: self
                .summaries
                .iter()
                .map(|s| AlgorithmReport {
                    algorithm: s.algorithm,
                    step: s.step.is_finite().then_some(s.step),
                    steady_state_nmse_mean: s.steady_state_mean,
                    steady_state_nmse_median: s.steady_state_median,
                    steady_state_nmse_db_mean: nmse_db(s.steady_state_mean),
                    median_iters_to_minus_10db: s.median_iters_to_convergence,
                })
                .collect(),
            wall_time_s: self.wall_time_s,
        }
    }
}

/// Writes `aggregate_<alg>.csv`, optional per-trial CSVs, and `summary.json`
/// into `out_dir`. Returns the written paths.
pub fn emit(result: &RunResult, out_dir: impl AsRef<Path>, per_trial: PerTrialOutput) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let algorithms = result.config.algorithm.algorithms();

    for (i, s) in result.summaries.iter().enumerate() {
        let path = out_dir.join(format!("aggregate_{}.csv", s.algorithm));
        let mut w = csv_writer(&path)?;
        let theory = result.theory_curve.as_ref();
        let mut header = vec!["iter", "nmse_mean", "nmse_median", "nmse_db_mean"];
        if theory.is_some() {
            header.push("theory_mse_total");
        }
        write_row(&mut w, &path, header)?;
        let db = s.nmse_db_mean();
        for k in 0..s.nmse_mean.len() {
            let mut row = vec![
                (k + 1).to_string(),
                f(s.nmse_mean[k]),
                f(s.nmse_median[k]),
                f(db[k]),
            ];
            if let Some(curve) = theory {
                row.push(f(curve[k + 1].total));
            }
            write_row(&mut w, &path, row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);

        match per_trial {
            PerTrialOutput::None => {}
            PerTrialOutput::Aggregated => {
                let path = out_dir.join(format!("trials_{}.csv", algorithms[i]));
                let mut w = csv_writer(&path)?;
                write_row(&mut w, &path, ["trial", "iter", "nmse", "nmse_db"])?;
                for t in &result.trials {
                    for (k, &v) in t.trajectories[i].nmse.iter().enumerate() {
                        write_row(
                            &mut w,
                            &path,
                            [t.trial.to_string(), (k + 1).to_string(), f(v), f(nmse_db(v))],
                        )?;
                    }
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
            PerTrialOutput::Files => {
                let dir = out_dir.join("trials");
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for t in &result.trials {
                    let path = dir.join(format!("{}_{:04}.csv", algorithms[i], t.trial));
                    write_trajectory_csv(&t.trajectories[i], &path)?;
                    written.push(path);
                }
            }
        }
    }

    let path = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&result.to_summary())?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Single-trajectory CSV with columns `iter,nmse,nmse_db`.
pub fn write_trajectory_csv(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    write_row(&mut w, path, ["iter", "nmse", "nmse_db"])?;
    for (k, &v) in traj.nmse.iter().enumerate() {
        write_row(&mut w, path, [(k + 1).to_string(), f(v), f(nmse_db(v))])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the comparison table of a sweep.
pub fn write_sweep_table(
    param: SweepParam,
    values: &[f64],
    results: &[RunResult],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    write_row(
        &mut w,
        path,
        [
            "param",
            "value",
            "algorithm",
            "mu",
            "lambda_min",
            "steady_state_nmse_mean",
            "steady_state_nmse_median",
            "median_iters_to_minus_10db",
        ],
    )?;
    for (v, r) in values.iter().zip(results) {
        for s in &r.summaries {
            let lambda_min = r.context.as_ref().map(|c| c.recoverability.lambda_min);
            write_row(
                &mut w,
                path,
                [
                    param.to_string(),
                    f(*v),
                    s.algorithm.to_string(),
                    f(s.step),
                    lambda_min.map(f).unwrap_or_default(),
                    f(s.steady_state_mean),
                    f(s.steady_state_median),
                    f(s.median_iters_to_convergence),
                ],
            )?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Theory-only evaluation: isotropic initial moments `range²/3` per component.
pub struct TheoryRun {
    pub context: Context,
    pub curve: Vec<MsePoint>,
    pub steady_state: Option<SteadyState>,
}

pub fn run_theory(config: &ExperimentConfig, force: bool) -> Result<TheoryRun> {
    config.validate()?;
    let ctx = shared_context(config, force)?;
    let theory = build_theory(
        &ctx.u_f,
        &ctx.plan.sample_set,
        ctx.mu,
        &NoiseCovariance::isotropic(config.noise_sigma2, config.n_nodes),
    )?;
    let var = config.signal_range * config.signal_range / 3.0;
    let curve = mse_trajectory(
        &theory,
        &InitialMoments::isotropic(var, config.bandwidth),
        config.iters,
    )?;
    Ok(TheoryRun {
        steady_state: steady_state_msd(&theory).ok(),
        context: ctx,
        curve,
    })
}

pub fn write_theory_csv(curve: &[MsePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    write_row(&mut w, path, ["iter", "mse_real", "mse_imag", "mse_total"])?;
    for (k, p) in curve.iter().enumerate() {
        write_row(&mut w, path, [k.to_string(), f(p.real), f(p.imag), f(p.total)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
