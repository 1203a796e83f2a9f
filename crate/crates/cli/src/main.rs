//! `label-audit`: generate datasets, audit label-privacy mechanisms, check
//! advantage bounds and run privacy/utility sweeps.
//!
//! Exit codes: 0 on success, 1 when a checked bound is violated, 2 on usage
//! or input errors. `LABEL_AUDIT_THREADS` caps the worker pool.

mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use label_audit::advantage::{additive_adv, advantage_samples, empirical_cdf, percentile, scatter_samples};
use label_audit::bounds::{bounds_grid, BoundsGridConfig};
use label_audit::data::{gen_beta, gen_independent, gen_uniform, knn_eta_estimate, load_csv, save_csv};
use label_audit::learner::{default_bag_sizes, default_epsilons, default_learning_rates, tradeoff_sweep};
use label_audit::rng::{derive, domain};
use label_audit::{AuditError, CsvSchema, EtaDataset, EtaSampler, MechanismKind, PrivacyParams, SweepConfig, TrainConfig};

use table::{Cell, Format, Table};

#[derive(Parser)]
#[command(name = "label-audit", version, about = "Reconstruction-advantage audits for label privacy mechanisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with known priors.
    GenData(GenDataArgs),
    /// Additive and multiplicative advantage of one mechanism on a dataset.
    Audit(AuditArgs),
    /// Per-example (prior, posterior) pairs.
    Scatter(ScatterArgs),
    /// Empirical CDFs of |multiplicative advantage| and the additive gap.
    Cdf(ScatterArgs),
    /// Privacy/utility sweep: best-learning-rate AUC against advantage.
    Tradeoff(TradeoffArgs),
    /// Evaluate every advantage bound on a grid against exact or MC values.
    BoundsCheck(BoundsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Dist {
    Beta,
    Uniform,
    Independent,
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    dist: Dist,
    #[arg(long, default_value_t = 2.0)]
    a: f64,
    #[arg(long, default_value_t = 30.0)]
    b: f64,
    /// Constant prior for `independent`.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long)]
    m: usize,
    /// Pure-noise features appended after the informative one.
    #[arg(long, default_value_t = 2)]
    distractors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct OutputArgs {
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Serialize)]
struct DatasetArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "label")]
    label_col: String,
    #[arg(long, default_value = "eta")]
    eta_col: String,
    /// Estimate priors with this many nearest neighbors (conventionally 200).
    #[arg(long)]
    knn: Option<usize>,
    /// Labeled dataset the neighbors are drawn from; defaults to `--dataset`.
    #[arg(long, requires = "knn")]
    knn_train: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct MechArgs {
    #[arg(long, value_parser = parse_mechanism)]
    mechanism: MechanismKind,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    bag_size: Option<usize>,
}

#[derive(Args, Serialize)]
struct AuditArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    mech: MechArgs,
    /// Bags sampled from the dataset priors for the additive advantage.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Label draws over the whole dataset for multiplicative samples.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Serialize)]
struct ScatterArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    mech: MechArgs,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Serialize)]
struct TradeoffArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Leading fraction of rows used for training; the rest is evaluation.
    #[arg(long, default_value_t = 0.5)]
    train_frac: f64,
    #[arg(long, value_delimiter = ',', value_parser = parse_mechanism, default_value = "null,rr,llp,llp-geom")]
    mechanisms: Vec<MechanismKind>,
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    bag_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    learning_rates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    examples_per_batch: usize,
    #[arg(long, default_value_t = 2_000)]
    adv_trials: usize,
    #[arg(long, default_value_t = 1)]
    mult_runs: usize,
    /// Train on raw features instead of standardized ones.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Serialize)]
struct BoundsArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5")]
    ps: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "16,64,256")]
    ks: Vec<usize>,
    /// `a + b` of the Beta priors with mean `p`.
    #[arg(long, default_value_t = 10.0)]
    concentration: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.01")]
    deltas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "4096")]
    conf_ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.25,1,4")]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Replace every empirical value, to exercise the failure path.
    #[arg(long)]
    empirical_override: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parse_mechanism(s: &str) -> Result<MechanismKind, String> {
    s.parse().map_err(|e: AuditError| e.to_string())
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn config_json<T: Serialize>(command: &str, args: &T) -> Value {
    let mut v = serde_json::to_value(args).expect("arguments serialize");
    if let Value::Object(m) = &mut v {
        m.shift_insert(0, "command".into(), Value::String(command.into()));
    }
    v
}

impl MechArgs {
    fn params(&self) -> CliResult<PrivacyParams> {
        let eps = || self.epsilon.ok_or_else(|| usage(format!("--epsilon is required for {}", self.mechanism)));
        let k = || self.bag_size.ok_or_else(|| usage(format!("--bag-size is required for {}", self.mechanism)));
        let p = match self.mechanism {
            MechanismKind::Null => PrivacyParams::null(),
            MechanismKind::Rr => PrivacyParams::rr(eps()?),
            MechanismKind::Llp => PrivacyParams::llp(k()?),
            MechanismKind::LlpLap => PrivacyParams::llp_lap(k()?, eps()?),
            MechanismKind::LlpGeom => PrivacyParams::llp_geom(k()?, eps()?),
        };
        p.validate()?;
        Ok(p)
    }
}

impl DatasetArgs {
    /// Loads the dataset; priors come from the `eta` column unless `--knn`
    /// asks for nearest-neighbor estimates.
    fn load(&self) -> CliResult<EtaDataset> {
        let schema = CsvSchema { label: self.label_col.clone(), eta: self.eta_col.clone() };
        let mut ds = load_csv(&self.dataset, &schema)?;
        if let Some(k_nn) = self.knn {
            let train = match &self.knn_train {
                Some(p) => load_csv(p, &schema)?,
                None => ds.clone(),
            };
            ds.etas = Some(knn_eta_estimate(&train, &ds.features, k_nn)?);
        } else if ds.etas.is_none() {
            return Err(usage(format!(
                "{} has no '{}' column; pass --knn to estimate priors",
                self.dataset.display(),
                self.eta_col
            )));
        }
        Ok(ds)
    }
}

fn mech_cells(p: &PrivacyParams) -> [Cell; 3] {
    [p.mechanism.name().into(), p.effective_bag_size().into(), p.epsilon.into()]
}

fn cmd_gen_data(args: &GenDataArgs) -> CliResult<bool> {
    let ds = match args.dist {
        Dist::Beta => gen_beta(args.a, args.b, args.m, args.distractors, args.seed)?,
        Dist::Uniform => gen_uniform(args.m, args.distractors, args.seed)?,
        Dist::Independent => gen_independent(args.p, args.m, args.seed)?,
    };
    let comment = format!("config: {}", config_json("gen-data", args));
    save_csv(&ds, &args.out, Some(&comment))?;
    Ok(true)
}

fn cmd_audit(args: &AuditArgs) -> CliResult<bool> {
    let params = args.mech.params()?;
    let ds = args.data.load()?;
    let etas = ds.etas_or_err()?;
    let add = additive_adv(&EtaSampler::Empirical(etas.to_vec()), &params, args.trials, derive(args.seed, domain::ADVANTAGE))?;
    let records = scatter_samples(&ds, &params, args.runs, args.seed)?;
    let (samples, degenerate) = advantage_samples(&records);
    let abs: Vec<f64> = samples.iter().map(|s| s.mult_adv.abs()).collect();
    let pct = |q: f64| -> CliResult<Cell> {
        if abs.is_empty() {
            Ok(Cell::Empty)
        } else {
            Ok(percentile(&abs, q)?.into())
        }
    };
    let inf = abs.iter().filter(|v| v.is_infinite()).count() as f64 / abs.len().max(1) as f64;

    let mut t = Table::new(&[
        "mechanism",
        "k",
        "epsilon",
        "additive_adv",
        "additive_stderr",
        "trials",
        "mult_p50",
        "mult_p90",
        "mult_p98",
        "mult_inf_frac",
        "samples",
        "degenerate",
    ]);
    let mut row = mech_cells(&params).to_vec();
    row.extend([
        add.value.into(),
        add.stderr.into(),
        add.trials.into(),
        pct(0.5)?,
        pct(0.9)?,
        pct(0.98)?,
        inf.into(),
        abs.len().into(),
        degenerate.into(),
    ]);
    t.push(row);
    t.emit(&config_json("audit", args), args.output.format, args.output.out.as_deref())?;
    Ok(true)
}

fn cmd_scatter(args: &ScatterArgs) -> CliResult<bool> {
    let params = args.mech.params()?;
    let ds = args.data.load()?;
    let records = scatter_samples(&ds, &params, args.runs, args.seed)?;
    let mut t = Table::new(&["prior", "posterior", "mechanism", "k", "epsilon", "run", "index", "outcome"]);
    for r in &records {
        let mut row = vec![r.prior.into(), r.posterior.into()];
        row.extend(mech_cells(&params));
        row.extend([r.run.into(), r.index.into(), r.outcome.into()]);
        t.push(row);
    }
    t.emit(&config_json("scatter", args), args.output.format, args.output.out.as_deref())?;
    Ok(true)
}

fn cmd_cdf(args: &ScatterArgs) -> CliResult<bool> {
    let params = args.mech.params()?;
    let ds = args.data.load()?;
    let records = scatter_samples(&ds, &params, args.runs, args.seed)?;
    let (samples, _) = advantage_samples(&records);
    if samples.is_empty() {
        return Err(AuditError::EmptyInput.into());
    }
    let abs: Vec<f64> = samples.iter().map(|s| s.mult_adv.abs()).collect();
    let gaps: Vec<f64> = samples.iter().map(|s| s.additive_gap).collect();
    let inf_mass = abs.iter().filter(|v| v.is_infinite()).count() as f64 / abs.len() as f64;

    let mut t = Table::new(&["mechanism", "k", "epsilon", "measure", "value", "cdf", "inf_mass"]);
    for (measure, values, mass) in [("mult_abs", &abs, inf_mass), ("additive_gap", &gaps, 0.0)] {
        for (v, c) in empirical_cdf(values)? {
            let mut row = mech_cells(&params).to_vec();
            row.extend([measure.into(), v.into(), c.into(), mass.into()]);
            t.push(row);
        }
    }
    t.emit(&config_json("cdf", args), args.output.format, args.output.out.as_deref())?;
    Ok(true)
}

fn tradeoff_grid(args: &TradeoffArgs) -> Vec<PrivacyParams> {
    let eps = args.epsilons.clone().unwrap_or_else(default_epsilons);
    let ks = args.bag_sizes.clone().unwrap_or_else(default_bag_sizes);
    let mut grid = Vec::new();
    for &m in &args.mechanisms {
        match m {
            MechanismKind::Null => grid.push(PrivacyParams::null()),
            MechanismKind::Rr => grid.extend(eps.iter().map(|&e| PrivacyParams::rr(e))),
            MechanismKind::Llp => grid.extend(ks.iter().map(|&k| PrivacyParams::llp(k))),
            MechanismKind::LlpLap => {
                grid.extend(ks.iter().flat_map(|&k| eps.iter().map(move |&e| PrivacyParams::llp_lap(k, e))))
            }
            MechanismKind::LlpGeom => {
                grid.extend(ks.iter().flat_map(|&k| eps.iter().map(move |&e| PrivacyParams::llp_geom(k, e))))
            }
        }
    }
    grid
}

fn cmd_tradeoff(args: &TradeoffArgs) -> CliResult<bool> {
    if !(args.train_frac > 0.0 && args.train_frac < 1.0) {
        return Err(usage("--train-frac must lie in (0, 1)"));
    }
    let ds = args.data.load()?;
    let (train, eval) = ds.split(args.train_frac);
    let cfg = SweepConfig {
        mechanisms: tradeoff_grid(args),
        learning_rates: args.learning_rates.clone().unwrap_or_else(default_learning_rates),
        runs: args.runs,
        train: TrainConfig {
            epochs: args.epochs,
            examples_per_batch: args.examples_per_batch,
            ..TrainConfig::default()
        },
        adv_trials: args.adv_trials,
        mult_runs: args.mult_runs,
        standardize: !args.no_standardize,
        seed: args.seed,
    };
    let rows = tradeoff_sweep(&train, &eval, &cfg)?;
    let mut t = Table::new(&[
        "mechanism",
        "k",
        "epsilon",
        "additive_adv",
        "additive_stderr",
        "mult_adv_p98",
        "mult_inf_frac",
        "auc_mean",
        "auc_stderr",
        "auc_stderr_ok",
        "best_lr",
        "runs",
    ]);
    for r in rows {
        t.push(vec![
            r.mechanism.name().into(),
            r.k.into(),
            r.epsilon.into(),
            r.additive_adv.into(),
            r.additive_stderr.into(),
            r.mult_adv_p98.into(),
            r.mult_inf_frac.into(),
            r.auc_mean.into(),
            r.auc_stderr.into(),
            r.auc_stderr_ok.into(),
            r.best_lr.into(),
            r.runs.into(),
        ]);
    }
    t.emit(&config_json("tradeoff", args), args.output.format, args.output.out.as_deref())?;
    Ok(true)
}

fn cmd_bounds_check(args: &BoundsArgs) -> CliResult<bool> {
    let cfg = BoundsGridConfig {
        ps: args.ps.clone(),
        ks: args.ks.clone(),
        concentration: args.concentration,
        deltas: args.deltas.clone(),
        conf_ks: args.conf_ks.clone(),
        epsilons: args.epsilons.clone(),
        trials: args.trials,
        seed: args.seed,
    };
    let mut reports = bounds_grid(&cfg)?;
    if let Some(v) = args.empirical_override {
        reports = reports.into_iter().map(|r| r.with_empirical(v, 0.0)).collect();
    }
    let mut t = Table::new(&[
        "bound_name",
        "bound_value",
        "bound_prob",
        "empirical_value",
        "empirical_stderr",
        "satisfied",
        "p",
        "mu",
        "k",
        "epsilon",
        "delta",
        "beta",
    ]);
    for r in &reports {
        let q = &r.params;
        t.push(vec![
            r.bound_name.as_str().into(),
            r.bound_value.into(),
            r.bound_prob.into(),
            r.empirical_value.into(),
            r.empirical_stderr.into(),
            r.satisfied.into(),
            q.p.into(),
            q.mu.into(),
            q.k.into(),
            q.epsilon.into(),
            q.delta.into(),
            q.beta.into(),
        ]);
    }
    t.emit(&config_json("bounds-check", args), args.output.format, args.output.out.as_deref())?;
    let failed = reports.iter().filter(|r| !r.satisfied).count();
    if failed > 0 {
        eprintln!("{failed} of {} bound checks violated", reports.len());
    }
    Ok(failed == 0)
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("LABEL_AUDIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("LABEL_AUDIT_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(e.to_string()))
}

fn run(cli: &Cli) -> CliResult<bool> {
    configure_threads()?;
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Scatter(a) => cmd_scatter(a),
        Command::Cdf(a) => cmd_cdf(a),
        Command::Tradeoff(a) => cmd_tradeoff(a),
        Command::BoundsCheck(a) => cmd_bounds_check(a),
    }
}

/// A closed downstream pipe (`label-audit ... | head`) is not a failure.
fn is_broken_pipe(e: &std::io::Error) -> bool {
    use std::io::ErrorKind::BrokenPipe;
    e.kind() == BrokenPipe
        || e.get_ref()
            .and_then(|inner| inner.downcast_ref::<csv::Error>())
            .is_some_and(|c| matches!(c.kind(), csv::ErrorKind::Io(io) if io.kind() == BrokenPipe))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Io(e)) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
