//! Batch-as-group relative policy optimization for small softmax classifiers.
//!
//! A classifier is first warmed up with supervised cross-entropy on a labeled
//! half of a corpus, then refined on unlabeled data: every minibatch is
//! treated as one group, per-sample rewards come from the model's own
//! confidence (or from agreement with a frozen teacher), rewards are
//! normalized within the batch, negative advantages are dropped, and the
//! policy is updated with a clipped surrogate objective plus a KL anchor to
//! the warmed-up reference model.
//!
//! The crate is organized bottom-up:
//!
//! - [`features`]: feature/teacher file ingestion, splitting and batching
//! - [`policy`]: the two-layer ReLU/softmax policy, snapshots, checkpoints
//! - [`metrics`]: macro F1 and friends
//! - [`rewards`]: self- and teacher-rewards
//! - [`advantage`]: batch-normalized advantages
//! - [`loss`]: clipped surrogate + KL estimator, cross-entropy, gradients
//! - [`optim`]: SGD and Adam
//! - [`trainer`]: the two-stage protocol and per-epoch reports
//! - [`synthetic`]: Gaussian-mixture data with a Bayes posterior
//! - [`experiment`]: end-to-end synthetic protocol and ablation harness

pub mod advantage;
pub mod error;
pub mod experiment;
pub mod features;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod report;
pub mod rewards;
pub mod synthetic;
pub mod trainer;

mod rng;

pub use advantage::{batch_advantages, AdvantageMode, AdvantageVector};
pub use error::{Error, Result};
pub use features::{Dataset, TeacherPredictionTable, UnlabeledView, UtteranceSample};
pub use loss::{BgrpoConfig, GradientSet, SampleRollout};
pub use metrics::{macro_f1, Metrics};
pub use policy::{PolicyParams, PolicySnapshot, ProbDistribution, SnapshotRole};
pub use rewards::{RewardConfig, RewardKind, RewardOutcome};
pub use trainer::{StageReport, TeacherSource};
