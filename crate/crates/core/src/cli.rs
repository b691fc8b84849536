//! Command-line interface of the `nmg` binary.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::checks::{galerkin_check, gradcheck, spectral_check};
use crate::error::{Error, Result};
use crate::loss::{loss_median, LossConfig};
use crate::network::{MgNetwork, ModelKind};
use crate::problems::{ProblemSpec, PROBLEM_NAMES};
use crate::report::{Cell, ReportRow, TableReport};
use crate::train::{train_with, Optimizer, TrainConfig};

/// Seed of the probe vectors used for evaluation; distinct from the
/// default training seed.
pub const DEFAULT_EVAL_SEED: u64 = 1234;

/// Environment variable that fixes the size of the worker pool.
pub const THREADS_ENV: &str = "NMG_THREADS";

#[derive(Parser, Debug)]
#[command(name = "nmg", version, about = "Multigrid solvers built from trainable convolutions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Estimate rho1 over a range of grid depths.
    Eval(EvalArgs),
    /// Train every trainable model and tabulate all models per problem.
    Reproduce(ReproduceArgs),
    /// Compare gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Compare estimates and operators with dense linear algebra.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Learning rate; defaults to the per-model setting.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Optimizer; defaults to the per-model setting.
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Momentum for SGD.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long = "beta1", default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long = "beta2", default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Training seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probe vectors per loss evaluation.
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    /// Power of the error propagation operator in the loss.
    #[arg(long, default_value_t = 10)]
    pub power: usize,
    /// Reuse one probe batch for every step.
    #[arg(long)]
    pub fixed_batch: bool,
}

impl OptimArgs {
    pub fn config(&self, kind: ModelKind, train_j: u32) -> TrainConfig {
        let base = TrainConfig::for_model(kind);
        let optimizer = match self.optimizer {
            None => base.optimizer,
            Some(OptimizerArg::Adam) => Optimizer::Adam { beta1: self.beta1, beta2: self.beta2, eps: self.eps },
            Some(OptimizerArg::Sgd) => Optimizer::Sgd { momentum: self.momentum },
        };
        TrainConfig {
            steps: self.steps,
            learning_rate: self.lr.unwrap_or(base.learning_rate),
            optimizer,
            train_j,
            resample_each_step: !self.fixed_batch,
            seed: self.seed,
            power_k: self.power,
            n_batch: self.batch,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value = "p5")]
    pub problem: String,
    #[arg(long)]
    pub model: String,
    /// Depth of the training grid.
    #[arg(long = "J", default_value_t = 5)]
    pub j: u32,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Built-in model at its initialization.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub model: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Problem of a built-in model; checkpoints carry their own.
    #[arg(long, default_value = "p5")]
    pub problem: String,
    /// Single depth `8` or inclusive range `3:11`.
    #[arg(long = "J", default_value = "3:11")]
    pub j: String,
    #[arg(long, default_value_t = DEFAULT_EVAL_SEED)]
    pub seed: u64,
    /// Report the median over this many consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub power: usize,
    /// Also write the CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ReproduceArgs {
    /// Problem name, comma-separated list, or `all`.
    #[arg(long, default_value = "all")]
    pub problem: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated model names, or `all`.
    #[arg(long, default_value = "all")]
    pub models: String,
    #[arg(long = "J", default_value = "3:11")]
    pub j: String,
    #[arg(long = "train-J", default_value_t = 5)]
    pub train_j: u32,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = DEFAULT_EVAL_SEED)]
    pub eval_seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    /// Comma-separated model names, or `all` trainable ones.
    #[arg(long, default_value = "all")]
    pub model: String,
    #[arg(long, default_value = "p5,mixed34")]
    pub problem: String,
    #[arg(long = "J", default_value_t = 3)]
    pub j: u32,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
}

#[derive(Args, Debug, Clone)]
pub struct OracleArgs {
    #[arg(long, default_value = "all")]
    pub problem: String,
    /// Comma-separated depths, at most 4.
    #[arg(long = "J", default_value = "2,3")]
    pub j: String,
    #[arg(long, default_value_t = DEFAULT_EVAL_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0.03)]
    pub tol: f64,
}

/// Parses `8` or `3:11`.
pub fn parse_depths(s: &str) -> Result<Vec<u32>> {
    let bad = || Error::InvalidModel(format!("invalid depth range '{s}'"));
    let (lo, hi) = match s.split_once(':') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let j = s.trim().parse().map_err(|_| bad())?;
            (j, j)
        }
    };
    if lo < 2 || lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

fn parse_problems(s: &str) -> Result<Vec<ProblemSpec>> {
    if s == "all" {
        return PROBLEM_NAMES.iter().map(|n| ProblemSpec::by_name(n)).collect();
    }
    s.split(',').map(|n| ProblemSpec::by_name(n.trim())).collect()
}

fn parse_models(s: &str, trainable_only: bool) -> Result<Vec<ModelKind>> {
    if s == "all" {
        return Ok(ModelKind::ALL.into_iter().filter(|k| !trainable_only || k.is_trainable()).collect());
    }
    s.split(',').map(|n| n.trim().parse()).collect()
}

fn eval_config(seed: u64, batch: usize, power: usize) -> LossConfig {
    LossConfig { power_k: power, n_batch: batch, seed }
}

/// Rows of `rho1` for `net` laid out at every depth in `depths`.
pub fn evaluate_depths(
    source: &MgNetwork,
    depths: &[u32],
    cfg: &LossConfig,
    seeds: usize,
    trained_j: Option<u32>,
) -> Vec<ReportRow> {
    depths
        .par_iter()
        .map(|&j| {
            let cell = source
                .at_depth(j)
                .and_then(|net| loss_median(&net, cfg, seeds))
                .map(Cell::from_estimate)
                .unwrap_or_else(|e| Cell::Failed(e.to_string()));
            ReportRow {
                j,
                model: source.kind(),
                problem: source.problem().name().to_string(),
                cell,
                seed: cfg.seed,
                trained_j,
            }
        })
        .collect()
}

fn print_trajectory(history: &[Option<f64>]) {
    let n = history.len();
    if n == 0 {
        println!("no training steps");
        return;
    }
    let stride = (n / 10).max(1);
    for (step, l) in history.iter().enumerate() {
        if step % stride == 0 || step + 1 == n {
            match l {
                Some(v) => println!("step {step:>6}  loss {v:.6}"),
                None => println!("step {step:>6}  loss -"),
            }
        }
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<ExitCode> {
    let kind: ModelKind = args.model.parse()?;
    if !kind.is_trainable() {
        return Err(Error::NotTrainable(kind.label().into()));
    }
    let problem = ProblemSpec::by_name(&args.problem)?;
    let cfg = args.optim.config(kind, args.j);
    let start = Instant::now();
    let outcome = train_with(kind, &problem, &cfg, |_, _| {})?;
    outcome.checkpoint.save(&args.out)?;
    print_trajectory(&outcome.checkpoint.loss_history);
    if let Some(step) = outcome.diverged_at {
        eprintln!("training diverged at step {step}; partial checkpoint written to {}", args.out.display());
        return Ok(ExitCode::from(3));
    }
    match outcome.checkpoint.final_loss() {
        Some(l) => println!("final loss {l:.6}"),
        None => println!("final loss -"),
    }
    let net = outcome.checkpoint.network(args.j)?;
    let eval = loss_median(&net, &eval_config(DEFAULT_EVAL_SEED, cfg.n_batch, cfg.power_k), 1)?;
    println!("rho1 at J = {} (seed {DEFAULT_EVAL_SEED}) {}", args.j, Cell::from_estimate(eval).markdown());
    println!("trained in {:.1}s, checkpoint {}", start.elapsed().as_secs_f64(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<ExitCode> {
    let depths = parse_depths(&args.j)?;
    let (net, trained_j) = match (&args.checkpoint, &args.model) {
        (Some(path), _) => {
            let ck = Checkpoint::load(path)?;
            (ck.network(ck.train_j)?, Some(ck.train_j))
        }
        (None, Some(model)) => {
            let kind: ModelKind = model.parse()?;
            let problem = ProblemSpec::by_name(&args.problem)?;
            (MgNetwork::build(kind, depths[0], &problem)?, None)
        }
        (None, None) => return Err(Error::InvalidModel("either --model or --checkpoint is required".into())),
    };
    let cfg = eval_config(args.seed, args.batch, args.power);
    let mut report = TableReport::new(net.problem().name());
    for row in evaluate_depths(&net, &depths, &cfg, args.seeds, trained_j) {
        report.push(row);
    }
    report.sort();
    let csv = report.to_csv()?;
    print!("{csv}");
    if let Some(out) = &args.out {
        fs::write(out, &csv)?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Summary of one training run inside `reproduce`.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainingRecord {
    pub model: String,
    pub problem: String,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub seconds: f64,
    pub diverged_at: Option<usize>,
    pub error: Option<String>,
}

/// Trains and evaluates every requested model for one problem; failures
/// become annotated cells.
pub fn reproduce_problem(
    problem: &ProblemSpec,
    models: &[ModelKind],
    depths: &[u32],
    optim: &OptimArgs,
    train_j: u32,
    eval: &LossConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(TableReport, Vec<TrainingRecord>)> {
    let mut report = TableReport::new(problem.name());
    let mut records = Vec::new();
    for &kind in models {
        let cfg = &optim.config(kind, train_j);
        let (source, trained_j) = if kind.is_trainable() {
            let start = Instant::now();
            let outcome = train_with(kind, problem, cfg, |_, _| {});
            let seconds = start.elapsed().as_secs_f64();
            let mut record = TrainingRecord {
                model: kind.name().into(),
                problem: problem.name().into(),
                steps: cfg.steps,
                final_loss: None,
                seconds,
                diverged_at: None,
                error: None,
            };
            let source = match outcome {
                Ok(outcome) => {
                    record.final_loss = outcome.checkpoint.final_loss();
                    record.diverged_at = outcome.diverged_at;
                    if let Some(dir) = checkpoint_dir {
                        outcome.checkpoint.save(dir.join(format!("{}_{}.json", problem.name(), kind.name())))?;
                    }
                    match outcome.diverged_at {
                        Some(step) => Err(format!("training diverged at step {step}")),
                        None => outcome.checkpoint.network(cfg.train_j).map_err(|e| e.to_string()),
                    }
                }
                Err(e) => Err(e.to_string()),
            };
            if let Err(msg) = &source {
                record.error = Some(msg.clone());
            }
            records.push(record);
            (source, Some(cfg.train_j))
        } else {
            (MgNetwork::build(kind, cfg.train_j, problem).map_err(|e| e.to_string()), None)
        };
        match source {
            Ok(net) => {
                for row in evaluate_depths(&net, depths, eval, 1, trained_j) {
                    report.push(row);
                }
            }
            Err(msg) => {
                for &j in depths {
                    report.push(ReportRow {
                        j,
                        model: kind,
                        problem: problem.name().into(),
                        cell: Cell::Failed(msg.clone()),
                        seed: eval.seed,
                        trained_j,
                    });
                }
            }
        }
    }
    report.sort();
    Ok((report, records))
}

pub fn cmd_reproduce(args: &ReproduceArgs) -> Result<ExitCode> {
    let problems = parse_problems(&args.problem)?;
    let models = parse_models(&args.models, false)?;
    let depths = parse_depths(&args.j)?;
    for &kind in &models {
        args.optim.config(kind, args.train_j).validate()?;
    }
    let eval = eval_config(args.eval_seed, args.optim.batch, args.optim.power);
    let ck_dir = args.out_dir.join("checkpoints");
    fs::create_dir_all(&ck_dir)?;
    let mut summary = String::new();
    for problem in &problems {
        let start = Instant::now();
        let (report, records) =
            reproduce_problem(problem, &models, &depths, &args.optim, args.train_j, &eval, Some(&ck_dir))?;
        let name = problem.name();
        fs::write(args.out_dir.join(format!("{name}.csv")), report.to_csv()?)?;
        let md = report.to_markdown();
        fs::write(args.out_dir.join(format!("{name}.md")), &md)?;
        let mut w = csv::Writer::from_path(args.out_dir.join(format!("{name}_training.csv")))?;
        for r in &records {
            w.serialize(r)?;
        }
        w.flush()?;
        println!("{md}");
        eprintln!("{name}: {:.1}s", start.elapsed().as_secs_f64());
        summary.push_str(&md);
        summary.push('\n');
    }
    fs::write(args.out_dir.join("tables.md"), summary)?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let models = parse_models(&args.model, true)?;
    let problems = parse_problems(&args.problem)?;
    let cfg = eval_config(args.seed, 10, 10);
    let mut worst: f64 = 0.0;
    for problem in &problems {
        for &kind in &models {
            let net = MgNetwork::build(kind, args.j, problem)?;
            let r = gradcheck(&net, &cfg, args.step)?;
            let (name, entry) = r.worst.clone().unwrap_or_default();
            println!(
                "{:<8} {:<8} entries {:>3}  max rel err {:.3e}  ({name}[{entry}])",
                kind.name(),
                problem.name(),
                r.entries,
                r.max_rel_err
            );
            worst = worst.max(r.max_rel_err);
        }
    }
    println!("max rel err {worst:.3e} (tolerance {:.1e})", args.tol);
    Ok(if worst <= args.tol { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<ExitCode> {
    let problems = parse_problems(&args.problem)?;
    let depths: Vec<u32> = args
        .j
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::InvalidModel(format!("invalid depth '{s}'"))))
        .collect::<Result<_>>()?;
    let cfg = eval_config(args.seed, 10, 10);
    let mut ok = true;
    for problem in &problems {
        for &j in &depths {
            let s = spectral_check(problem, j, &cfg, args.seeds)?;
            let pass = s.gap() <= args.tol;
            ok &= pass;
            println!(
                "spectral {:<8} J={j}  rho1 {:.4}  exact {:.4}  gap {:.4}  {}",
                s.problem,
                s.rho1,
                s.rho_exact,
                s.gap(),
                if pass { "ok" } else { "FAIL" }
            );
            if j >= 3 {
                let net = MgNetwork::build(ModelKind::Lmg, j, problem)?;
                let diff = galerkin_check(&net, 2)?;
                let pass = diff <= 1e-12;
                ok &= pass;
                println!(
                    "galerkin {:<8} J={j}  level 2  max diff {diff:.2e}  {}",
                    problem.name(),
                    if pass { "ok" } else { "FAIL" }
                );
            }
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidModel(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        // A second initialization in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> ExitCode {
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reproduce(a) => cmd_reproduce(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Oracle(a) => cmd_oracle(a),
    });
    let _ = std::io::stdout().flush();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
