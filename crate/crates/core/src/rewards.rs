//! Per-sample rewards computed without gold labels.
//!
//! Self-rewards look only at the policy's own distribution: `R1` pays `C`
//! when the top probability exceeds `delta`, `R2` pays the top probability
//! itself. Teacher-rewards compare against a frozen teacher: `R3` pays `C` on
//! argmax agreement, `R4` requires both the `R1` and `R3` conditions, `R5`
//! pays `C` when `KL(teacher ‖ policy) < theta`. Conditions are strict; hitting
//! a threshold exactly takes the penalty branch.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy::ProbDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardKind {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl RewardKind {
    pub const ALL: [RewardKind; 5] = [Self::R1, Self::R2, Self::R3, Self::R4, Self::R5];

    pub fn needs_teacher(self) -> bool {
        matches!(self, Self::R3 | Self::R4 | Self::R5)
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::R1 => "r1",
            Self::R2 => "r2",
            Self::R3 => "r3",
            Self::R4 => "r4",
            Self::R5 => "r5",
        };
        f.write_str(s)
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r1" => Ok(Self::R1),
            "r2" => Ok(Self::R2),
            "r3" => Ok(Self::R3),
            "r4" => Ok(Self::R4),
            "r5" => Ok(Self::R5),
            _ => Err(Error::Config(format!("unknown reward kind `{s}` (expected r1..r5)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub kind: RewardKind,
    /// Reward paid when the condition fires.
    pub c: f64,
    /// Likelihood threshold for `R1`/`R4`.
    pub delta: f64,
    /// KL threshold for `R5`; `None` means `ln(N) / 2`.
    pub theta: Option<f64>,
    /// Value paid when the condition does not fire.
    pub penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            kind: RewardKind::R1,
            c: 1.0,
            delta: 0.5,
            theta: None,
            penalty: 0.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("reward C must be > 0, got {}", self.c)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if let Some(t) = self.theta {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("theta must be > 0, got {t}")));
            }
        }
        if !(self.penalty <= 0.0 && self.penalty.is_finite()) {
            return Err(Error::Config(format!("penalty must be <= 0, got {}", self.penalty)));
        }
        Ok(())
    }

    /// KL threshold for `num_classes` categories.
    pub fn theta_for(&self, num_classes: usize) -> f64 {
        self.theta.unwrap_or_else(|| (num_classes as f64).ln() / 2.0)
    }

    fn branch(&self, fired: bool) -> RewardOutcome {
        RewardOutcome {
            value: if fired { self.c } else { self.penalty },
            triggered: fired,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardOutcome {
    pub value: f64,
    pub triggered: bool,
}

fn same_width(a: &ProbDistribution, b: &ProbDistribution) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
            context: "teacher vs policy classes",
        });
    }
    Ok(())
}

pub fn reward_r1(dist: &ProbDistribution, cfg: &RewardConfig) -> RewardOutcome {
    cfg.branch(dist.max() > cfg.delta)
}

pub fn reward_r2(dist: &ProbDistribution) -> RewardOutcome {
    RewardOutcome {
        value: dist.max(),
        triggered: true,
    }
}

pub fn reward_r3(policy: &ProbDistribution, teacher: &ProbDistribution, cfg: &RewardConfig) -> Result<RewardOutcome> {
    same_width(policy, teacher)?;
    Ok(cfg.branch(policy.argmax() == teacher.argmax()))
}

pub fn reward_r4(policy: &ProbDistribution, teacher: &ProbDistribution, cfg: &RewardConfig) -> Result<RewardOutcome> {
    let agree = reward_r3(policy, teacher, cfg)?.triggered;
    Ok(cfg.branch(agree && reward_r1(policy, cfg).triggered))
}

pub fn reward_r5(policy: &ProbDistribution, teacher: &ProbDistribution, cfg: &RewardConfig) -> Result<RewardOutcome> {
    same_width(policy, teacher)?;
    let kl = kl_divergence(teacher, policy)?;
    Ok(cfg.branch(kl < cfg.theta_for(policy.len())))
}

/// `Σ p ln(p / q)` with `0 ln(0 / q) = 0`.
pub fn kl_divergence(p: &ProbDistribution, q: &ProbDistribution) -> Result<f64> {
    same_width(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::Distribution(
                "KL undefined: q has zero mass where p is positive".into(),
            ));
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can leave a tiny negative residue for p ≈ q.
    Ok(total.max(0.0))
}

/// Dispatches on `cfg.kind`; teacher-rewards require `teacher`.
pub fn compute_reward(
    cfg: &RewardConfig,
    policy: &ProbDistribution,
    teacher: Option<&ProbDistribution>,
) -> Result<RewardOutcome> {
    let need = || {
        teacher.ok_or_else(|| Error::Config(format!("reward {} requires a teacher", cfg.kind)))
    };
    match cfg.kind {
        RewardKind::R1 => Ok(reward_r1(policy, cfg)),
        RewardKind::R2 => Ok(reward_r2(policy)),
        RewardKind::R3 => reward_r3(policy, need()?, cfg),
        RewardKind::R4 => reward_r4(policy, need()?, cfg),
        RewardKind::R5 => reward_r5(policy, need()?, cfg),
    }
}
