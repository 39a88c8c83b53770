//! `bgrpo`: generate synthetic corpora, warm up a classifier, refine it with
//! batch-as-group policy optimization, evaluate checkpoints, and check
//! gradients.
//!
//! Every failure prints one line `error[<kind>]: <message>` to stderr and
//! exits with status 2; `gradcheck` exits with status 1 when a check fails.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bgrpo::loss::{GradCheckSpec, LossKind};
use bgrpo::synthetic::{MixtureSpec, DEFAULT_SEPARATION};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{EvalArgs, GenArgs, GradcheckArgs, TrainBaselineArgs, TrainBgrpoArgs};
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "bgrpo", version, about = "Batch-as-group policy optimization for small classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Draw a Gaussian-mixture feature file (and optionally a second view).
    Gen(GenCmd),
    /// Supervised cross-entropy warmup.
    TrainBaseline(TrainBaselineCmd),
    /// Unlabeled refinement of a baseline checkpoint.
    TrainBgrpo(TrainBgrpoCmd),
    /// Score a checkpoint on a labeled feature file.
    Eval(EvalCmd),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckCmd),
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be > 0, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be >= 0, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args)]
struct GenCmd {
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_SEPARATION, value_parser = positive)]
    separation: f64,
    /// Seed for the class means; draws sharing it share one mixture.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for the noise draw; defaults to `--seed`.
    #[arg(long)]
    sample_seed: Option<u64>,
    /// Class `k` gets `per_class * ratio^k` samples.
    #[arg(long, value_parser = positive)]
    imbalance: Option<f64>,
    /// Dataset name written in the header; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write `<stem>_view2.feat`: rotated, noisy copy with the same ids.
    #[arg(long)]
    second_view: bool,
    #[arg(long, default_value_t = 1)]
    view_seed: u64,
    #[arg(long, default_value_t = 0.5, value_parser = non_negative)]
    view_noise: f64,
}

/// Flags shared by both training stages.
#[derive(Args)]
struct TrainFlags {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = ["adam", "sgd"])]
    optimizer: Option<String>,
    /// Also save a checkpoint every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Parent of the per-invocation run directory (env: BGRPO_OUTPUT_ROOT).
    #[arg(long)]
    output_root: Option<PathBuf>,
    /// Exact run directory, bypassing the numbered one under the output root.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

impl TrainFlags {
    fn overlay(&self) -> RunConfig {
        let mut rc = RunConfig::default();
        rc.paths.eval = self.eval.clone();
        rc.train.seed = self.seed;
        rc.train.learning_rate = self.lr;
        rc.train.batch_size = self.batch_size;
        rc.train.optimizer = self.optimizer.clone();
        rc.train.checkpoint_every = self.checkpoint_every;
        rc
    }

    fn layered(&self, flags: RunConfig) -> bgrpo::Result<RunConfig> {
        let file = RunConfig::load_optional(self.config.as_deref())?;
        Ok(file.layered(&self.overlay()).layered(&flags))
    }
}

#[derive(Args)]
struct TrainBaselineCmd {
    #[command(flatten)]
    common: TrainFlags,
    /// Labeled training feature file.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Train on this stratified fraction; the rest is written as `rl_half.feat`.
    #[arg(long)]
    split_fraction: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args)]
struct TrainBgrpoCmd {
    #[command(flatten)]
    common: TrainFlags,
    /// Warmed-up checkpoint; also the frozen reference.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Refinement feature file; labels in it are never read.
    #[arg(long)]
    rl: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = ["r1", "r2", "r3", "r4", "r5"])]
    reward: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    /// Reward paid when the reward condition fires.
    #[arg(long = "C", id = "reward_c")]
    c: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    penalty: Option<f64>,
    /// Teacher prediction table, or a checkpoint (needs --teacher-features).
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long)]
    teacher_features: Option<PathBuf>,
    #[arg(long, value_parser = ["positive_clip", "signed", "none"])]
    advantage_mode: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long, value_parser = ["greedy", "sample"])]
    action: Option<String>,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    /// Metrics record file in the report format; defaults to
    /// `<checkpoint stem>_eval_<eval stem>.csv` next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Ce,
    Bgrpo,
    All,
}

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long, value_enum, default_value_t = LossArg::All)]
    loss: LossArg,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5, value_parser = positive)]
    h: f64,
    #[arg(long, default_value_t = 1e-4, value_parser = non_negative)]
    tol: f64,
}

fn run(cli: Cli) -> bgrpo::Result<ExitCode> {
    match cli.command {
        Command::Gen(c) => {
            let mut spec = MixtureSpec {
                separation: c.separation,
                sigma: c.sigma,
                sample_seed: c.sample_seed.unwrap_or(c.seed),
                name: c.name.clone().unwrap_or_else(|| {
                    c.out.file_stem().and_then(|s| s.to_str()).unwrap_or("synthetic").to_string()
                }),
                ..MixtureSpec::balanced(c.classes, c.dim, c.per_class, c.seed)
            };
            if let Some(ratio) = c.imbalance {
                spec = spec.with_imbalance(ratio);
            }
            commands::gen(&GenArgs {
                spec,
                out: c.out,
                second_view: c.second_view,
                view_seed: c.view_seed,
                view_noise: c.view_noise,
            })?;
        }
        Command::TrainBaseline(c) => {
            let mut flags = RunConfig::default();
            flags.paths.train = c.train;
            flags.train.warmup_epochs = c.epochs;
            flags.data.split_fraction = c.split_fraction;
            flags.model.hidden = c.hidden;
            commands::train_baseline(&TrainBaselineArgs {
                config: c.common.layered(flags)?,
                output_root: c.common.output_root,
                run_dir: c.common.run_dir,
            })?;
        }
        Command::TrainBgrpo(c) => {
            let mut flags = RunConfig::default();
            flags.paths.baseline = c.baseline;
            flags.paths.rl = c.rl;
            flags.paths.teacher = c.teacher;
            flags.paths.teacher_features = c.teacher_features;
            flags.train.rl_epochs = c.epochs;
            flags.train.epsilon = c.epsilon;
            flags.train.beta = c.beta;
            flags.train.inner_steps = c.inner_steps;
            flags.train.action_selection = c.action;
            flags.train.advantage_mode = c.advantage_mode;
            flags.reward.kind = c.reward;
            flags.reward.c = c.c;
            flags.reward.delta = c.delta;
            flags.reward.theta = c.theta;
            flags.reward.penalty = c.penalty;
            commands::train_bgrpo(&TrainBgrpoArgs {
                config: c.common.layered(flags)?,
                output_root: c.common.output_root,
                run_dir: c.common.run_dir,
            })?;
        }
        Command::Eval(c) => commands::eval(&EvalArgs {
            checkpoint: c.checkpoint,
            eval: c.eval,
            out: c.out,
        })?,
        Command::Gradcheck(c) => {
            let kinds = match c.loss {
                LossArg::Ce => vec![LossKind::CrossEntropy],
                LossArg::Bgrpo => vec![LossKind::Bgrpo],
                LossArg::All => vec![LossKind::CrossEntropy, LossKind::Bgrpo],
            };
            let passed = commands::gradcheck(&GradcheckArgs {
                kinds,
                spec: GradCheckSpec {
                    dim: c.dim,
                    hidden: c.hidden,
                    classes: c.classes,
                    batch: c.batch,
                    seed: c.seed,
                    ..Default::default()
                },
                h: c.h,
                tol: c.tol,
            })?;
            if !passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid usage");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(2)
        }
    }
}
