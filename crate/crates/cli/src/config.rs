//! Run configuration: a TOML file layered under command-line flags.
//!
//! ```toml
//! [paths]
//! train = "data/train.feat"
//! eval = "data/eval.feat"
//! output_root = "runs"
//!
//! [model]
//! hidden = 128
//!
//! [train]
//! learning_rate = 1e-4
//! batch_size = 32
//! warmup_epochs = 100
//! rl_epochs = 100
//! advantage_mode = "positive_clip"
//!
//! [reward]
//! kind = "r1"
//! delta = 0.5
//! c = 1.0
//! ```
//!
//! Every key is optional. Values resolve as flag, then file, then default.

use std::path::{Path, PathBuf};

use bgrpo::loss::ActionSelection;
use bgrpo::optim::OptimizerKind;
use bgrpo::policy::DEFAULT_HIDDEN;
use bgrpo::{AdvantageMode, BgrpoConfig, Error, RewardConfig, RewardKind};
use serde::{Deserialize, Serialize};

pub const OUTPUT_ROOT_ENV: &str = "BGRPO_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

macro_rules! section {
    ($(#[$meta:meta])* $name:ident { $($field:ident: $ty:ty),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            $(
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            /// Replaces every field that `top` sets.
            fn overlay(&mut self, top: &Self) {
                $(
                    if top.$field.is_some() {
                        self.$field = top.$field.clone();
                    }
                )*
            }
        }
    };
}

section!(PathsSection {
    train: PathBuf,
    rl: PathBuf,
    eval: PathBuf,
    baseline: PathBuf,
    teacher: PathBuf,
    teacher_features: PathBuf,
    output_root: PathBuf,
});

section!(ModelSection { hidden: usize });

section!(
    /// `split_fraction` splits the training file into a labeled part and a
    /// held-back part written for the refinement stage.
    DataSection { split_fraction: f64 }
);

section!(TrainSection {
    epsilon: f64,
    beta: f64,
    batch_size: usize,
    eps_std: f64,
    advantage_mode: String,
    learning_rate: f64,
    optimizer: String,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    warmup_epochs: usize,
    rl_epochs: usize,
    inner_steps: usize,
    action_selection: String,
    seed: u64,
    checkpoint_every: usize,
});

section!(RewardSection {
    kind: String,
    c: f64,
    delta: f64,
    theta: f64,
    penalty: f64,
});

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub reward: RewardSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    /// Loads `path` when given, otherwise starts empty.
    pub fn load_optional(path: Option<&Path>) -> Result<Self, Error> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// `self` with every value set in `top` taking precedence.
    pub fn layered(mut self, top: &Self) -> Self {
        self.paths.overlay(&top.paths);
        self.model.overlay(&top.model);
        self.data.overlay(&top.data);
        self.train.overlay(&top.train);
        self.reward.overlay(&top.reward);
        self
    }

    pub fn hidden(&self) -> usize {
        self.model.hidden.unwrap_or(DEFAULT_HIDDEN)
    }

    /// Checkpoint interval in epochs; 0 writes only the final checkpoint.
    pub fn checkpoint_every(&self) -> usize {
        self.train.checkpoint_every.unwrap_or(0)
    }

    /// Output root: `flag`, then the environment, then the file, then `runs`.
    pub fn output_root(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .or_else(|| self.paths.output_root.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
    }

    pub fn bgrpo(&self) -> Result<BgrpoConfig, Error> {
        let d = BgrpoConfig::default();
        let t = &self.train;
        let optimizer = match t.optimizer.as_deref().unwrap_or("adam") {
            "sgd" => OptimizerKind::Sgd,
            "adam" => {
                let OptimizerKind::Adam { beta1, beta2, eps } = OptimizerKind::default() else {
                    unreachable!("adam is the default optimizer")
                };
                OptimizerKind::Adam {
                    beta1: t.adam_beta1.unwrap_or(beta1),
                    beta2: t.adam_beta2.unwrap_or(beta2),
                    eps: t.adam_eps.unwrap_or(eps),
                }
            }
            other => return Err(Error::Config(format!("unknown optimizer `{other}` (expected adam|sgd)"))),
        };
        let cfg = BgrpoConfig {
            epsilon: t.epsilon.unwrap_or(d.epsilon),
            beta: t.beta.unwrap_or(d.beta),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            eps_std: t.eps_std.unwrap_or(d.eps_std),
            advantage_mode: t
                .advantage_mode
                .as_deref()
                .map(str::parse::<AdvantageMode>)
                .transpose()?
                .unwrap_or(d.advantage_mode),
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            optimizer,
            warmup_epochs: t.warmup_epochs.unwrap_or(d.warmup_epochs),
            rl_epochs: t.rl_epochs.unwrap_or(d.rl_epochs),
            inner_steps: t.inner_steps.unwrap_or(d.inner_steps),
            action_selection: t
                .action_selection
                .as_deref()
                .map(str::parse::<ActionSelection>)
                .transpose()?
                .unwrap_or(d.action_selection),
            seed: t.seed.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn reward_config(&self) -> Result<RewardConfig, Error> {
        let d = RewardConfig::default();
        let r = &self.reward;
        let cfg = RewardConfig {
            kind: r.kind.as_deref().map(str::parse::<RewardKind>).transpose()?.unwrap_or(d.kind),
            c: r.c.unwrap_or(d.c),
            delta: r.delta.unwrap_or(d.delta),
            theta: r.theta.or(d.theta),
            penalty: r.penalty.unwrap_or(d.penalty),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fully resolved copy with every default spelled out, for run snapshots.
    pub fn resolved(&self, output_root: &Path) -> Result<Self, Error> {
        let cfg = self.bgrpo()?;
        let reward = self.reward_config()?;
        let (optimizer, adam) = match cfg.optimizer {
            OptimizerKind::Sgd => ("sgd", None),
            OptimizerKind::Adam { beta1, beta2, eps } => ("adam", Some((beta1, beta2, eps))),
        };
        Ok(Self {
            paths: PathsSection {
                output_root: Some(output_root.to_path_buf()),
                ..self.paths.clone()
            },
            model: ModelSection {
                hidden: Some(self.hidden()),
            },
            // Left as given: its presence is what requests a split.
            data: self.data.clone(),
            train: TrainSection {
                epsilon: Some(cfg.epsilon),
                beta: Some(cfg.beta),
                batch_size: Some(cfg.batch_size),
                eps_std: Some(cfg.eps_std),
                advantage_mode: Some(cfg.advantage_mode.to_string()),
                learning_rate: Some(cfg.learning_rate),
                optimizer: Some(optimizer.into()),
                adam_beta1: adam.map(|a| a.0),
                adam_beta2: adam.map(|a| a.1),
                adam_eps: adam.map(|a| a.2),
                warmup_epochs: Some(cfg.warmup_epochs),
                rl_epochs: Some(cfg.rl_epochs),
                inner_steps: Some(cfg.inner_steps),
                action_selection: Some(cfg.action_selection.to_string()),
                seed: Some(cfg.seed),
                checkpoint_every: Some(self.checkpoint_every()),
            },
            reward: RewardSection {
                kind: Some(reward.kind.to_string()),
                c: Some(reward.c),
                delta: Some(reward.delta),
                theta: reward.theta,
                penalty: Some(reward.penalty),
            },
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: RunConfig = toml::from_str(
            "[train]\nlearning_rate = 0.01\nbatch_size = 8\n[reward]\nkind = \"r2\"\n",
        )
        .unwrap();
        let mut flags = RunConfig::default();
        flags.train.batch_size = Some(4);
        let cfg = file.layered(&flags);
        let b = cfg.bgrpo().unwrap();
        assert_eq!(b.batch_size, 4);
        assert_eq!(b.learning_rate, 0.01);
        assert_eq!(b.epsilon, 0.2);
        assert_eq!(cfg.reward_config().unwrap().kind, RewardKind::R2);
        assert_eq!(cfg.hidden(), 128);
    }

    #[test]
    fn resolved_snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.optimizer = Some("sgd".into());
        let resolved = cfg.resolved(Path::new("out")).unwrap();
        let back: RunConfig = toml::from_str(&resolved.to_toml()).unwrap();
        assert_eq!(back, resolved);
        assert_eq!(back.bgrpo().unwrap(), cfg.bgrpo().unwrap());
    }

    #[test]
    fn output_root_flag_wins() {
        let mut cfg = RunConfig::default();
        cfg.paths.output_root = Some("from_file".into());
        assert_eq!(cfg.output_root(Some(Path::new("flag"))), PathBuf::from("flag"));
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        assert!(toml::from_str::<RunConfig>("[train]\nlr = 1\n").is_err());
        let mut cfg = RunConfig::default();
        cfg.train.advantage_mode = Some("sideways".into());
        assert_eq!(cfg.bgrpo().unwrap_err().kind(), "config");
        let mut cfg = RunConfig::default();
        cfg.reward.delta = Some(1.5);
        assert!(cfg.reward_config().is_err());
    }
}
