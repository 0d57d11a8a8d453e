use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pbilevel::corpus::{synth_drift_corpus, PreparedData, SynthConfig};
use pbilevel::evaluation::parse_metrics_csv;
use pbilevel::experiment::{
    emit_generator_curves, emit_nonconvexity_surface, read_prepared, report, run_baseline, run_sweep, unit_grid,
    write_prepared, ExperimentConfig, CURVE_ALPHAS, CURVE_BETAS,
};
use pbilevel::Error;

#[derive(Parser)]
#[command(name = "pbilevel", version, about = "Adversary-aware logistic classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic drifting corpus as TSV.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        q: usize,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_per_period: usize,
        #[arg(long, default_value_t = 4)]
        periods: usize,
        #[arg(long, default_value_t = 0.6)]
        drift_strength: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenise, build the vocabulary, encode and split a corpus.
    Prep {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate plain logistic regression.
    TrainBaseline {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a single bilevel cell (first value of each grid).
    TrainBilevel {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Baselines plus every (rho, mu, zeta0, beta0 draw) cell.
    Sweep {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smoothed-step curves for varying alpha and varying beta.
    PlotGenerator {
        #[arg(long, default_value_t = 201)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adversary objective over an (alpha, beta) grid.
    PlotNonconvexity {
        #[arg(long, default_value_t = 81)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join metrics CSVs into a per-period P4 table.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Experiment settings; flags override the config file.
#[derive(Args)]
struct ExpArgs {
    /// INI-style experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory written by `prep`; used instead of the corpus.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<String>,
    #[arg(long)]
    stopwords: Option<String>,
    #[arg(long)]
    q_target: Option<String>,
    #[arg(long)]
    train_size: Option<String>,
    /// `year` or `month`.
    #[arg(long)]
    period: Option<String>,
    /// `df` or `tf`.
    #[arg(long)]
    count_mode: Option<String>,
    /// Comma-separated list; empty for baseline only.
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    alpha0: Option<String>,
    #[arg(long)]
    zeta0: Option<String>,
    #[arg(long)]
    beta0_sample_size: Option<String>,
    #[arg(long)]
    beta0_draws: Option<String>,
    #[arg(long)]
    adversarial_class: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
}

impl ExpArgs {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::read_ini(p)?,
            None => ExperimentConfig::default(),
        };
        let overrides = [
            ("corpus", &self.corpus),
            ("stopwords", &self.stopwords),
            ("q_target", &self.q_target),
            ("train_size", &self.train_size),
            ("period", &self.period),
            ("count_mode", &self.count_mode),
            ("rho", &self.rho),
            ("mu", &self.mu),
            ("alpha0", &self.alpha0),
            ("zeta0", &self.zeta0),
            ("beta0_sample_size", &self.beta0_sample_size),
            ("beta0_draws", &self.beta0_draws),
            ("adversarial_class", &self.adversarial_class),
            ("lm.max_iter", &self.max_iter),
        ];
        for (k, v) in overrides {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn data(&self, cfg: &ExperimentConfig) -> Result<PreparedData, Error> {
        match &self.data {
            Some(dir) => read_prepared(dir),
            None => cfg.load_corpus(),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_STALLED: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Singular { .. } => EXIT_STALLED,
        _ => EXIT_DATA,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Synth {
            seed,
            q,
            n_train,
            n_per_period,
            periods,
            drift_strength,
            out,
        } => {
            let synth = synth_drift_corpus(&SynthConfig {
                seed,
                q,
                n_train,
                n_per_period,
                periods,
                drift_strength,
                ..SynthConfig::default()
            })?;
            write(&out, &synth.corpus.to_tsv())?;
        }
        Command::Prep { exp, out } => {
            let cfg = exp.config()?;
            let data = exp.data(&cfg)?;
            write_prepared(&data, &out)?;
            eprintln!("q = {}, train rows = {}, test periods = {}", data.q(), data.train.n(), data.tests.len());
        }
        Command::TrainBaseline { exp, seed, out } => {
            let cfg = exp.config()?;
            let data = exp.data(&cfg)?;
            run_baseline(&cfg, &data, seed)?.write(&out)?;
        }
        Command::TrainBilevel { exp, seed, out } => {
            let mut cfg = exp.config()?;
            for grid in [&mut cfg.rho, &mut cfg.mu, &mut cfg.zeta0] {
                grid.truncate(1);
            }
            if cfg.rho.is_empty() {
                return Err(Error::Config("train-bilevel needs a rho value".into()));
            }
            cfg.beta0_draws = 1;
            let data = exp.data(&cfg)?;
            let res = run_sweep(&cfg, &data, seed)?;
            res.write(&out)?;
            if res.all_stalled() {
                return Ok(EXIT_STALLED);
            }
        }
        Command::Sweep { exp, seed, out } => {
            let cfg = exp.config()?;
            let data = exp.data(&cfg)?;
            let res = run_sweep(&cfg, &data, seed)?;
            res.write(&out)?;
            if res.all_stalled() {
                return Ok(EXIT_STALLED);
            }
        }
        Command::PlotGenerator { points, out } => {
            let (a, b) = emit_generator_curves(&CURVE_ALPHAS, 0.5, &CURVE_BETAS, 100.0, &unit_grid(points));
            write(&out.join("generator_alpha.csv"), &a.to_csv())?;
            write(&out.join("generator_beta.csv"), &b.to_csv())?;
        }
        Command::PlotNonconvexity { points, out } => {
            write(&out, &emit_nonconvexity_surface(points)?.to_csv())?;
        }
        Command::Report { metrics, out } => {
            let mut rows = Vec::new();
            for p in &metrics {
                let text = fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                rows.extend(parse_metrics_csv(&text)?);
            }
            let table = report(&rows);
            match out {
                Some(p) => write(&p, &table)?,
                None => print!("{table}"),
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
