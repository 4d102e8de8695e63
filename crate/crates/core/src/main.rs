use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qglms::harness::{
    emit, run_experiment, run_theory, sweep, write_sweep_table, write_theory_csv,
    AlgorithmChoice, ExperimentConfig, PerTrialOutput, RunOptions, SweepParam,
};
use qglms::sampling::Strategy;
use qglms::spectral::gen_er_graph;
use qglms::Error;

#[derive(Parser)]
#[command(name = "qglms", version, about = "Adaptive estimation of quaternion graph signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    algorithm: Option<AlgorithmChoice>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run even if the sampling set cannot recover the band.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(a) = self.algorithm {
            cfg.algorithm = a;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(i) = self.iters {
            cfg.iters = i;
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self, theory: bool) -> RunOptions {
        RunOptions {
            workers: self.workers,
            force: self.force,
            theory,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a connected Erdős–Rényi graph and write its edge list.
    GenGraph {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte-Carlo experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Add the theoretical learning curve to the aggregate CSV.
        #[arg(long)]
        theory: bool,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// none, aggregated or files
        #[arg(long, default_value = "none")]
        per_trial: PerTrialOutput,
    },
    /// Evaluate the theoretical MSE curve and stability report only.
    Theory {
        #[command(flatten)]
        common: Common,
        /// Output CSV; the stability report goes next to it as JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat an experiment over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// budget, mu_frac or sigma2
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "sweep")]
        out_dir: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_) => 2,
        Error::Unrecoverable { .. } => 3,
        _ => 1,
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenGraph { n, p, seed, out } => {
            let g = gen_er_graph(n, p, seed)?;
            g.write_edge_csv(&out)?;
            println!("{} edges, sha256 {}", g.edges().len(), g.content_hash());
        }
        Command::Run {
            common,
            theory,
            out_dir,
            per_trial,
        } => {
            let cfg = common.load()?;
            let result = run_experiment(&cfg, &common.options(theory))?;
            let files = emit(&result, &out_dir, per_trial)?;
            for s in &result.summaries {
                println!(
                    "{}: steady-state NMSE {:.3} dB (mean over trials)",
                    s.algorithm,
                    qglms::filters::nmse_db(s.steady_state_mean)
                );
            }
            println!("wrote {} files to {}", files.len(), out_dir.display());
        }
        Command::Theory { common, out } => {
            let cfg = common.load()?;
            let t = run_theory(&cfg, common.force)?;
            write_theory_csv(&t.curve, &out)?;
            let report = serde_json::json!({
                "mu": t.context.mu,
                "mu_bound": t.context.mu_bound,
                "recoverability": t.context.recoverability,
                "stability": t.context.stability,
                "steady_state": t.steady_state,
            });
            write_json(&out.with_extension("json"), &report)?;
            println!("wrote {}", out.display());
        }
        Command::Sweep {
            common,
            param,
            values,
            out_dir,
        } => {
            let cfg = common.load()?;
            let results = sweep(&cfg, param, &values, &common.options(false))?;
            fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            for (v, r) in values.iter().zip(&results) {
                emit(r, out_dir.join(format!("{param}_{v}")), PerTrialOutput::None)?;
            }
            let table = out_dir.join("sweep.csv");
            write_sweep_table(param, &values, &results, &table)?;
            println!("wrote {}", table.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
