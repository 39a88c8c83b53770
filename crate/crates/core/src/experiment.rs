//! End-to-end synthetic protocol: draw a mixture, warm up on a labeled half,
//! refine on the other half without labels, evaluate on a fresh draw.

use std::fmt::Write as _;

use crate::advantage::AdvantageMode;
use crate::error::Result;
use crate::features::{split_half, Dataset};
use crate::loss::BgrpoConfig;
use crate::metrics::Metrics;
use crate::policy::{init_params, PolicyParams, DEFAULT_HIDDEN};
use crate::rewards::RewardConfig;
use crate::synthetic::{generate, MixtureSpec, DEFAULT_SEPARATION};
use crate::trainer::{evaluate, train_bgrpo, train_supervised, StageReport};

/// Offset between the training and evaluation draws of one seed.
const EVAL_SAMPLE_OFFSET: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSpec {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
    /// Per-class size of the pool that is split into warmup and refinement halves.
    pub train_per_class: usize,
    pub eval_per_class: usize,
    pub split_fraction: f64,
    pub hidden: usize,
    pub config: BgrpoConfig,
    pub reward: RewardConfig,
}

impl Default for ProtocolSpec {
    /// 6 classes, 32 dims; 600 labeled / 600 unlabeled / 600 eval samples.
    fn default() -> Self {
        Self {
            classes: 6,
            dim: 32,
            separation: DEFAULT_SEPARATION,
            sigma: 1.0,
            train_per_class: 200,
            eval_per_class: 100,
            split_fraction: 0.5,
            hidden: DEFAULT_HIDDEN,
            config: BgrpoConfig::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl ProtocolSpec {
    fn mixture(&self, seed: u64, per_class: usize, sample_seed: u64, name: &str) -> MixtureSpec {
        MixtureSpec {
            num_classes: self.classes,
            dim: self.dim,
            separation: self.separation,
            sigma: self.sigma,
            per_class: vec![per_class; self.classes],
            mean_seed: seed,
            sample_seed,
            name: name.into(),
        }
    }
}

/// Data and warmed-up baseline for one seed.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub seed: u64,
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub eval: Dataset,
    pub baseline: PolicyParams,
    pub baseline_metrics: Metrics,
    pub warmup: StageReport,
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub seed: u64,
    pub baseline: Metrics,
    pub refined: Metrics,
    pub warmup: StageReport,
    pub refinement: StageReport,
    pub baseline_params: PolicyParams,
    pub final_params: PolicyParams,
}

impl ProtocolOutcome {
    /// `(refined - baseline) / baseline` in macro F1.
    pub fn relative_improvement(&self) -> f64 {
        (self.refined.macro_f1 - self.baseline.macro_f1) / self.baseline.macro_f1
    }
}

pub fn warm_start(spec: &ProtocolSpec, seed: u64) -> Result<WarmStart> {
    let pool = generate(&spec.mixture(seed, spec.train_per_class, seed, "train"))?;
    let eval = generate(&spec.mixture(
        seed,
        spec.eval_per_class,
        seed.wrapping_add(EVAL_SAMPLE_OFFSET),
        "eval",
    ))?;
    let (labeled, unlabeled) = split_half(&pool, spec.split_fraction, seed)?;
    let cfg = BgrpoConfig {
        seed,
        ..spec.config.clone()
    };
    let init = init_params(spec.dim, spec.hidden, spec.classes, seed)?;
    let (baseline, warmup) = train_supervised(init, &labeled, &eval, &cfg)?;
    let baseline_metrics = evaluate(&baseline, &eval)?;
    Ok(WarmStart {
        seed,
        labeled,
        unlabeled,
        eval,
        baseline,
        baseline_metrics,
        warmup,
    })
}

/// Refinement stage from a warm start with the given advantage mode.
pub fn refine(spec: &ProtocolSpec, start: &WarmStart, mode: AdvantageMode) -> Result<ProtocolOutcome> {
    let cfg = BgrpoConfig {
        seed: start.seed,
        advantage_mode: mode,
        ..spec.config.clone()
    };
    let (final_params, refinement) = train_bgrpo(
        start.baseline.clone(),
        start.unlabeled.unlabeled(),
        &start.eval,
        &spec.reward,
        None,
        &cfg,
    )?;
    Ok(ProtocolOutcome {
        seed: start.seed,
        baseline: start.baseline_metrics.clone(),
        refined: evaluate(&final_params, &start.eval)?,
        warmup: start.warmup.clone(),
        refinement,
        baseline_params: start.baseline.clone(),
        final_params,
    })
}

/// Warmup then refinement with the spec's own advantage mode.
pub fn run_protocol(spec: &ProtocolSpec, seed: u64) -> Result<ProtocolOutcome> {
    let start = warm_start(spec, seed)?;
    refine(spec, &start, spec.config.advantage_mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: AdvantageMode,
    pub baseline_f1: f64,
    pub refined_f1: f64,
    pub mean_relative_improvement: f64,
    /// Seeds where refinement did not lower macro F1.
    pub seeds_not_worse: usize,
    pub seeds: usize,
}

/// Runs every advantage mode from shared warm starts, one per seed.
pub fn advantage_ablation(spec: &ProtocolSpec, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let starts = seeds
        .iter()
        .map(|&s| warm_start(spec, s))
        .collect::<Result<Vec<_>>>()?;
    AdvantageMode::ALL
        .iter()
        .map(|&mode| {
            let outcomes = starts
                .iter()
                .map(|s| refine(spec, s, mode))
                .collect::<Result<Vec<_>>>()?;
            let n = outcomes.len() as f64;
            Ok(AblationRow {
                mode,
                baseline_f1: outcomes.iter().map(|o| o.baseline.macro_f1).sum::<f64>() / n,
                refined_f1: outcomes.iter().map(|o| o.refined.macro_f1).sum::<f64>() / n,
                mean_relative_improvement: outcomes.iter().map(ProtocolOutcome::relative_improvement).sum::<f64>() / n,
                seeds_not_worse: outcomes
                    .iter()
                    .filter(|o| o.refined.macro_f1 >= o.baseline.macro_f1)
                    .count(),
                seeds: outcomes.len(),
            })
        })
        .collect()
}

/// Plain-text comparison table, one row per mode.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from("mode           baseline_f1  refined_f1  rel_improvement  not_worse\n");
    for r in rows {
        writeln!(
            out,
            "{:<14} {:>11.4} {:>11.4} {:>16.4} {:>6}/{}",
            r.mode.to_string(),
            r.baseline_f1,
            r.refined_f1,
            r.mean_relative_improvement,
            r.seeds_not_worse,
            r.seeds
        )
        .unwrap();
    }
    out
}
