//! Experiment orchestration: configuration, initial points, sweeps over
//! (rho, mu, zeta0, beta0) cells, per-period evaluation and figure data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baseline::{classify, train_baseline, BaselineConfig};
use crate::corpus::{
    dataset_from_text, dataset_to_text, prepare, read_stopwords, CountMode, PeriodGrouping, PreparedData,
    RawCorpus, SplitSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::evaluation::{confusion, MetricsRow, METRICS_HEADER};
use crate::generator::{smooth_step, GeneratorParams, NoiseMatrix};
use crate::lm_solver::{solve, LmConfig, SolverState, SolverStatus, TraceRecord, TRACE_HEADER, trace_line};
use crate::objectives::{AdversaryLabels, BowDataset, ModelWeights, Problem};
use crate::stationarity::{BilevelPoint, ResidualSystem, Stationarity};

/// Everything a sweep needs besides the data and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub q_target: usize,
    pub train_size: usize,
    pub period: PeriodGrouping,
    pub count_mode: CountMode,
    pub rho: Vec<f64>,
    pub mu: Vec<f64>,
    pub alpha0: f64,
    pub zeta0: Vec<f64>,
    /// Rows sampled per beta0 estimate; `None` means `min(200, available)`.
    pub beta0_sample_size: Option<usize>,
    /// Number of independent beta0 draws per (rho, mu, zeta0).
    pub beta0_draws: usize,
    pub adversarial_class: u8,
    pub threshold: f64,
    pub lm: LmConfig,
    pub baseline: BaselineConfig,
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            stopwords: None,
            q_target: 1000,
            train_size: 2000,
            period: PeriodGrouping::Year,
            count_mode: CountMode::DocumentFrequency,
            rho: vec![0.05, 0.075, 0.10, 0.125, 0.15, 0.20, 0.25],
            mu: vec![0.01],
            alpha0: 1000.0,
            zeta0: vec![1.0],
            beta0_sample_size: None,
            beta0_draws: 1,
            adversarial_class: 1,
            threshold: 0.5,
            lm: LmConfig::default(),
            baseline: BaselineConfig::default(),
            seed: None,
        }
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(key, s)).collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e: T::Err| Error::Config(format!("{key}: cannot parse {:?}: {e}", v.trim())))
}

impl ExperimentConfig {
    /// Parse flat `key = value` text. `[lm]` and `[baseline]` sections scope
    /// the solver keys; `#` and `;` start comments; lists are comma
    /// separated.
    pub fn parse_ini(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            cfg.set(&key, v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_ini(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_ini(&text)
    }

    /// Set one key; `lm.` and `baseline.` prefixes address the solver
    /// settings.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "corpus" => self.corpus = Some(PathBuf::from(v)),
            "stopwords" => self.stopwords = Some(PathBuf::from(v)),
            "q_target" => self.q_target = parse_num(key, v)?,
            "train_size" => self.train_size = parse_num(key, v)?,
            "period" => self.period = v.parse()?,
            "count_mode" => self.count_mode = v.parse()?,
            "rho" => self.rho = parse_list(key, v)?,
            "mu" => self.mu = parse_list(key, v)?,
            "alpha0" => self.alpha0 = parse_num(key, v)?,
            "zeta0" => self.zeta0 = parse_list(key, v)?,
            "beta0_sample_size" => {
                self.beta0_sample_size = if v == "auto" { None } else { Some(parse_num(key, v)?) }
            }
            "beta0_draws" => self.beta0_draws = parse_num(key, v)?,
            "adversarial_class" => self.adversarial_class = parse_num(key, v)?,
            "threshold" => self.threshold = parse_num(key, v)?,
            "seed" => self.seed = Some(parse_num(key, v)?),
            "lm.epsilon" => self.lm.epsilon = parse_num(key, v)?,
            "lm.max_iter" => self.lm.max_iter = parse_num(key, v)?,
            "lm.eta0" => self.lm.eta0 = parse_num(key, v)?,
            "lm.kappa" => self.lm.kappa = parse_num(key, v)?,
            "lm.tau" => self.lm.tau = parse_num(key, v)?,
            "lm.omega_min" => self.lm.omega_min = parse_num(key, v)?,
            "lm.eta_decay" => self.lm.eta_decay = parse_num(key, v)?,
            "baseline.max_iter" => self.baseline.max_iter = parse_num(key, v)?,
            "baseline.grad_tol" => self.baseline.grad_tol = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rho.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::Config(format!("rho entries must lie in (0,1], got {r}")));
        }
        if self.mu.is_empty() {
            return Err(Error::Config("mu grid is empty".into()));
        }
        if let Some(m) = self.mu.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return Err(Error::Config(format!("mu entries must be >= 0, got {m}")));
        }
        if self.zeta0.is_empty() || self.zeta0.iter().any(|z| !z.is_finite()) {
            return Err(Error::Config("zeta0 grid must be non-empty and finite".into()));
        }
        if !self.alpha0.is_finite() {
            return Err(Error::Config("alpha0 must be finite".into()));
        }
        if self.beta0_sample_size == Some(0) || self.beta0_draws == 0 {
            return Err(Error::Config("beta0_sample_size and beta0_draws must be >= 1".into()));
        }
        if self.adversarial_class > 1 {
            return Err(Error::Config("adversarial_class must be 0 or 1".into()));
        }
        if self.q_target == 0 {
            return Err(Error::Config("q_target must be >= 1".into()));
        }
        self.lm.validate()?;
        self.baseline.validate()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_size: self.train_size,
            period: self.period,
        }
    }

    /// Read and encode the configured corpus.
    pub fn load_corpus(&self) -> Result<PreparedData> {
        let path = self
            .corpus
            .as_ref()
            .ok_or_else(|| Error::Config("no corpus path configured".into()))?;
        let corpus = RawCorpus::read_tsv(path)?;
        let stop = match &self.stopwords {
            Some(p) => read_stopwords(p)?,
            None => Default::default(),
        };
        prepare(&corpus, self.split_spec(), &stop, self.q_target, self.count_mode)
    }
}

// Independent random streams derived from the experiment seed.
const STREAM_NOISE: u64 = 1 << 32;
const STREAM_BETA0: u64 = 2 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Column means of `b` rows drawn without replacement from `rows`.
pub fn init_beta0(rows: &BowDataset, b: usize, seed: u64) -> Result<Vec<f64>> {
    let n = rows.n();
    if b == 0 || b > n {
        return Err(Error::InvalidArgument(format!(
            "beta0 sample size {b} must lie in [1, {n}]"
        )));
    }
    let mut rng = stream_rng(seed, STREAM_BETA0);
    let mut picked = sample(&mut rng, n, b).into_vec();
    // sum in index order so the mean does not depend on draw order
    picked.sort_unstable();
    Ok((0..rows.q())
        .map(|j| picked.iter().map(|&i| rows.x[(i, j)]).sum::<f64>() / b as f64)
        .collect())
}

/// `round(rho * adversarial_rows)`, at least 1.
pub fn adversary_size(adversarial_rows: usize, rho: f64) -> usize {
    ((rho * adversarial_rows as f64).round() as usize).max(1)
}

/// The noise matrix shared by every cell with the same `(seed, m, q)`.
pub fn draw_noise(seed: u64, m: usize, q: usize) -> NoiseMatrix {
    let mut rng = stream_rng(seed, STREAM_NOISE | m as u64);
    NoiseMatrix::sample(&mut rng, m, q)
}

/// Training rows of one class.
pub fn class_rows(data: &BowDataset, class: u8) -> Result<BowDataset> {
    let idx = data.rows_with_label(class);
    let rows: Vec<Vec<u8>> = idx
        .iter()
        .map(|&i| data.x.row(i).iter().map(|&v| v as u8).collect())
        .collect();
    if rows.is_empty() {
        return Ok(BowDataset::empty(data.q()));
    }
    BowDataset::from_rows(&rows, vec![class; rows.len()])
}

/// One solver run of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub rho: f64,
    pub mu: f64,
    pub zeta0: f64,
    pub beta0_draw: usize,
}

impl CellSpec {
    pub fn id(&self) -> String {
        format!("bilevel-r{}-m{}-z{}-b{}", self.rho, self.mu, self.zeta0, self.beta0_draw)
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub spec: CellSpec,
    pub m: usize,
    pub weights: ModelWeights,
    pub point: BilevelPoint,
    pub status: SolverStatus,
    pub iterations: usize,
    pub residual_sq: f64,
    pub trace: Vec<TraceRecord>,
}

/// Solve the stationarity system from `(w = 0, alpha0 1, beta0, zeta0)`.
pub fn solve_cell(
    train: &BowDataset,
    noise: &NoiseMatrix,
    gamma: &AdversaryLabels,
    mu: f64,
    alpha0: f64,
    beta0: &[f64],
    zeta0: f64,
    lm: &LmConfig,
) -> Result<SolverState> {
    let problem = Problem::new(train, noise, gamma, mu)?;
    let system = Stationarity::new(problem);
    let start = BilevelPoint {
        w: ModelWeights::zeros(train.q()),
        theta: GeneratorParams::with_uniform_alpha(alpha0, beta0.to_vec())?,
        zeta: zeta0,
    };
    let x0 = start.pack();
    match solve(&system, x0.clone(), lm) {
        // a defective Jacobian ends this cell only
        Err(Error::Singular { eta }) => Ok(SolverState {
            residual_sq_history: vec![system.residual(&x0)?.norm_squared()],
            point: x0,
            eta,
            iter: 0,
            status: SolverStatus::Stalled,
            trace: Vec::new(),
        }),
        other => other,
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub mu: f64,
    pub weights: ModelWeights,
    pub converged: bool,
}

/// Everything a sweep produces, in deterministic order.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub seed: u64,
    pub periods: Vec<String>,
    pub baselines: Vec<BaselineOutcome>,
    pub cells: Vec<CellOutcome>,
    /// Baseline rows first, then cells; periods in order inside each.
    pub metrics: Vec<MetricsRow>,
}

impl SweepOutput {
    /// True when there were cells and none of them produced a usable solve.
    pub fn all_stalled(&self) -> bool {
        !self.cells.is_empty() && self.cells.iter().all(|c| c.status == SolverStatus::Stalled)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.metrics {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from("config_id,rho,mu,zeta0,beta0_draw,m,status,iterations,residual_sq\n");
        for c in &self.cells {
            let s = &c.spec;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:e}",
                s.id(),
                s.rho,
                s.mu,
                s.zeta0,
                s.beta0_draw,
                c.m,
                c.status,
                c.iterations,
                c.residual_sq
            )
            .expect("writing to a String");
        }
        out
    }

    /// Write `metrics.csv`, `cells.csv`, `traces/<id>.csv` and
    /// `weights/<id>.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let traces = dir.join("traces");
        let weights = dir.join("weights");
        for d in [dir, &traces, &weights] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        write_file(&dir.join("metrics.csv"), &self.metrics_csv())?;
        write_file(&dir.join("cells.csv"), &self.cells_csv())?;
        for b in &self.baselines {
            let name = format!("baseline-m{}.txt", b.mu);
            write_file(&weights.join(name), &crate::baseline::weights_to_text(&b.weights))?;
        }
        for c in &self.cells {
            let id = c.spec.id();
            let mut t = format!("{TRACE_HEADER}\n");
            for r in &c.trace {
                t.push_str(&trace_line(r));
                t.push('\n');
            }
            write_file(&traces.join(format!("{id}.csv")), &t)?;
            write_file(&weights.join(format!("{id}.txt")), &crate::baseline::weights_to_text(&c.weights))?;
        }
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn evaluate(
    id: &str,
    rho: Option<f64>,
    mu: f64,
    seed: u64,
    w: &ModelWeights,
    tests: &[(String, BowDataset)],
    threshold: f64,
) -> Result<Vec<MetricsRow>> {
    tests
        .iter()
        .map(|(period, ds)| {
            let preds = classify(w, &ds.x, threshold)?;
            Ok(MetricsRow {
                config_id: id.to_string(),
                period: period.clone(),
                rho,
                mu,
                seed,
                counts: confusion(&preds, &ds.y)?,
            })
        })
        .collect()
}

/// Baselines for every `mu` in the grid, evaluated on every test period.
pub fn run_baseline(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<SweepOutput> {
    let mut c = cfg.clone();
    c.rho.clear();
    run_sweep(&c, data, seed)
}

/// Full sweep: baselines for every `mu`, then one bilevel solve per cell of
/// `rho x mu x zeta0 x beta0_draws`. Cells run in parallel; output order is
/// the cell order regardless.
pub fn run_sweep(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<SweepOutput> {
    cfg.validate()?;
    let train = &data.train;
    if train.n() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let q = train.q();

    let mut metrics = Vec::new();
    let mut baselines = Vec::new();
    for &mu in &cfg.mu {
        let bcfg = BaselineConfig { mu, ..cfg.baseline.clone() };
        let fit = train_baseline(train, &bcfg)?;
        metrics.extend(evaluate(
            &format!("baseline-m{mu}"),
            None,
            mu,
            seed,
            &fit.weights,
            &data.tests,
            cfg.threshold,
        )?);
        baselines.push(BaselineOutcome {
            mu,
            weights: fit.weights,
            converged: fit.converged,
        });
    }

    let mut cells = Vec::new();
    if !cfg.rho.is_empty() {
        let adv = class_rows(train, cfg.adversarial_class)?;
        if adv.n() == 0 {
            return Err(Error::InvalidArgument(format!(
                "training set has no rows of adversarial class {}",
                cfg.adversarial_class
            )));
        }
        let b = cfg.beta0_sample_size.unwrap_or_else(|| adv.n().min(200));
        let beta0s = (0..cfg.beta0_draws)
            .map(|k| init_beta0(&adv, b, seed.wrapping_add(k as u64)))
            .collect::<Result<Vec<_>>>()?;

        let mut specs = Vec::new();
        for &rho in &cfg.rho {
            for &mu in &cfg.mu {
                for &zeta0 in &cfg.zeta0 {
                    for k in 0..cfg.beta0_draws {
                        specs.push(CellSpec {
                            rho,
                            mu,
                            zeta0,
                            beta0_draw: k,
                        });
                    }
                }
            }
        }
        let noises: BTreeMap<usize, NoiseMatrix> = cfg
            .rho
            .iter()
            .map(|&r| {
                let m = adversary_size(adv.n(), r);
                (m, draw_noise(seed, m, q))
            })
            .collect();

        cells = specs
            .into_par_iter()
            .map(|spec| {
                let m = adversary_size(adv.n(), spec.rho);
                let noise = &noises[&m];
                let gamma = AdversaryLabels::uniform(m, cfg.adversarial_class)?;
                let state = solve_cell(
                    train,
                    noise,
                    &gamma,
                    spec.mu,
                    cfg.alpha0,
                    &beta0s[spec.beta0_draw],
                    spec.zeta0,
                    &cfg.lm,
                )?;
                let point = BilevelPoint::unpack(&state.point)?;
                Ok(CellOutcome {
                    m,
                    weights: point.w.clone(),
                    point,
                    status: state.status,
                    iterations: state.iter,
                    residual_sq: state.residual_sq(),
                    trace: state.trace,
                    spec,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for c in &cells {
            metrics.extend(evaluate(
                &c.spec.id(),
                Some(c.spec.rho),
                c.spec.mu,
                seed,
                &c.weights,
                &data.tests,
                cfg.threshold,
            )?);
        }
    }

    Ok(SweepOutput {
        seed,
        periods: data.tests.iter().map(|(p, _)| p.clone()).collect(),
        baselines,
        cells,
        metrics,
    })
}

/// Write a prepared dataset as `vocab.tsv`, `train.txt`, `periods.txt` and
/// one `test-<period>.txt` per period.
pub fn write_prepared(data: &PreparedData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("vocab.tsv"), &data.vocab.to_tsv())?;
    write_file(&dir.join("train.txt"), &dataset_to_text(&data.train))?;
    let mut periods = String::new();
    for (p, ds) in &data.tests {
        periods.push_str(p);
        periods.push('\n');
        write_file(&dir.join(format!("test-{p}.txt")), &dataset_to_text(ds))?;
    }
    write_file(&dir.join("periods.txt"), &periods)
}

pub fn read_prepared(dir: &Path) -> Result<PreparedData> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let vocab = Vocabulary::parse_tsv(&read("vocab.tsv")?)?;
    let train = dataset_from_text(&read("train.txt")?)?;
    if train.q() != vocab.len() {
        return Err(Error::dim("prepared train width", vocab.len(), train.q()));
    }
    let mut tests = Vec::new();
    for p in read("periods.txt")?.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let ds = dataset_from_text(&read(&format!("test-{p}.txt"))?)?;
        if ds.q() != vocab.len() {
            return Err(Error::dim("prepared test width", vocab.len(), ds.q()));
        }
        tests.push((p.to_string(), ds));
    }
    Ok(PreparedData { vocab, train, tests })
}

/// Sampled smoothed-step curves.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFamily {
    /// `"alpha"` when alpha varies at fixed beta, `"beta"` otherwise.
    pub varying: &'static str,
    pub grid: Vec<f64>,
    /// `(alpha, beta, t on grid)` per curve.
    pub curves: Vec<(f64, f64, Vec<f64>)>,
}

impl CurveFamily {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("varying,alpha,beta,v,t\n");
        for (a, b, ts) in &self.curves {
            for (v, t) in self.grid.iter().zip(ts) {
                writeln!(out, "{},{a},{b},{v},{t:.12}", self.varying).expect("writing to a String");
            }
        }
        out
    }
}

/// Uniform grid of `points` values on `[0, 1]`.
pub fn unit_grid(points: usize) -> Vec<f64> {
    let steps = points.max(2) - 1;
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// Curves for every `alpha` at fixed `beta`, and for every `beta` at fixed
/// `alpha`.
pub fn emit_generator_curves(
    alphas: &[f64],
    beta_fixed: f64,
    betas: &[f64],
    alpha_fixed: f64,
    grid: &[f64],
) -> (CurveFamily, CurveFamily) {
    let curve = |a: f64, b: f64| grid.iter().map(|&v| smooth_step(v, a, b)).collect();
    (
        CurveFamily {
            varying: "alpha",
            grid: grid.to_vec(),
            curves: alphas.iter().map(|&a| (a, beta_fixed, curve(a, beta_fixed))).collect(),
        },
        CurveFamily {
            varying: "beta",
            grid: grid.to_vec(),
            curves: betas.iter().map(|&b| (alpha_fixed, b, curve(alpha_fixed, b))).collect(),
        },
    )
}

pub const CURVE_ALPHAS: [f64; 6] = [1.0, 5.0, 10.0, 20.0, 50.0, 100.0];
pub const CURVE_BETAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Lower-level objective on an `(alpha, beta)` grid for a one-feature,
/// one-row instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub w: f64,
    pub z: f64,
    pub mu: f64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `values[i][j]` is `f` at `(alphas[i], betas[j])`.
    pub values: Vec<Vec<f64>>,
}

impl Surface {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,f\n");
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, b) in self.betas.iter().enumerate() {
                writeln!(out, "{a},{b},{:.12}", self.values[i][j]).expect("writing to a String");
            }
        }
        out
    }

    /// Grid index of the smallest value among points with `alpha > 0`
    /// (`positive`) or `alpha < 0`.
    pub fn basin_minimum(&self, positive: bool) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, &a) in self.alphas.iter().enumerate() {
            if (positive && a <= 0.0) || (!positive && a >= 0.0) {
                continue;
            }
            for (j, &f) in self.values[i].iter().enumerate() {
                if best.is_none_or(|(_, _, b)| f < b) {
                    best = Some((i, j, f));
                }
            }
        }
        best.map(|(i, j, _)| (i, j))
    }
}

/// Evaluate `f(w, theta)` with a single generated row `z`, class `gamma`.
pub fn lower_objective_1d(w: f64, z: f64, gamma: u8, mu: f64, alpha: f64, beta: f64) -> Result<f64> {
    let data = BowDataset::empty(1);
    let noise = NoiseMatrix::from_row_slice(1, 1, &[z])?;
    let labels = AdversaryLabels::uniform(1, gamma)?;
    let p = Problem::new(&data, &noise, &labels, mu)?;
    p.lower_objective(&ModelWeights(DVector::from_element(1, w)), &GeneratorParams::new(vec![alpha], vec![beta])?)
}

/// The surface at `w = 10, z = 0.5, gamma = 1, mu = 0.1` on a grid symmetric
/// under `(alpha, beta) -> (-alpha, 1 - beta)`.
pub fn emit_nonconvexity_surface(points: usize) -> Result<Surface> {
    let (w, z, mu) = (10.0, 0.5, 0.1);
    let n = points.max(3) | 1;
    let half = (n - 1) as f64 / 2.0;
    // alpha in [-10, 10], beta in [z - 1, z + 1]; both grids are mirror
    // images of themselves around their centres
    let alphas: Vec<f64> = (0..n).map(|i| 10.0 * (i as f64 - half) / half).collect();
    let betas: Vec<f64> = (0..n).map(|j| z + (j as f64 - half) / half).collect();
    let values = alphas
        .iter()
        .map(|&a| betas.iter().map(|&b| lower_objective_1d(w, z, 1, mu, a, b)).collect())
        .collect::<Result<_>>()?;
    Ok(Surface {
        w,
        z,
        mu,
        alphas,
        betas,
        values,
    })
}

/// Per-period comparison of metrics rows: every configuration's P4 by
/// period, then the best bilevel cell and best baseline per period.
pub fn report(rows: &[MetricsRow]) -> String {
    let mut periods: Vec<&str> = Vec::new();
    let mut configs: Vec<&str> = Vec::new();
    let mut table: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in rows {
        if !periods.contains(&r.period.as_str()) {
            periods.push(&r.period);
        }
        if !configs.contains(&r.config_id.as_str()) {
            configs.push(&r.config_id);
        }
        table.insert((r.config_id.as_str(), r.period.as_str()), r.p4());
    }
    let mut out = String::from("config_id");
    for p in &periods {
        write!(out, ",{p}").expect("writing to a String");
    }
    out.push('\n');
    for c in &configs {
        out.push_str(c);
        for p in &periods {
            match table.get(&(*c, *p)) {
                Some(v) => write!(out, ",{v:.6}"),
                None => write!(out, ","),
            }
            .expect("writing to a String");
        }
        out.push('\n');
    }
    let is_baseline = |r: &MetricsRow| r.rho.is_none();
    for (label, pick) in [("best_baseline", true), ("best_bilevel", false)] {
        out.push_str(label);
        for p in &periods {
            let best = rows
                .iter()
                .filter(|r| r.period == *p && is_baseline(r) == pick)
                .map(MetricsRow::p4)
                .fold(f64::NAN, f64::max);
            if best.is_nan() {
                out.push(',');
            } else {
                write!(out, ",{best:.6}").expect("writing to a String");
            }
        }
        out.push('\n');
    }
    out
}

/// Largest P4 on `period` among baseline rows (`baseline = true`) or bilevel
/// rows.
pub fn best_p4(rows: &[MetricsRow], period: &str, baseline: bool) -> Option<f64> {
    rows.iter()
        .filter(|r| r.period == period && r.rho.is_none() == baseline)
        .map(MetricsRow::p4)
        .reduce(f64::max)
}
