//! Two-stage protocol: supervised warmup, then batch-group policy refinement.
//!
//! Each refinement batch runs the same sequence: snapshot the old policy, roll
//! out actions and rewards with it, normalize the rewards inside the batch,
//! then take `inner_steps` gradient steps on the clipped objective anchored to
//! the frozen reference (the warmed-up model). The refinement stage only ever
//! sees an [`UnlabeledView`], so gold labels of its data cannot leak in.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::advantage::batch_advantages;
use crate::error::{Error, Result};
use crate::features::{make_batches, Dataset, TeacherPredictionTable, UnlabeledView, UtteranceSample};
use crate::loss::{batch_loss_and_gradients, ce_loss_and_grads, ActionSelection, BgrpoConfig, SampleRollout};
use crate::metrics::Metrics;
use crate::optim::Optimizer;
use crate::policy::{PolicyParams, ProbDistribution, SnapshotRole};
use crate::report::{EpochRecord, Stage};
use crate::rewards::{compute_reward, RewardConfig};
use crate::rng::{self, stream_rng};

/// Frozen source of teacher distributions, keyed by sample id.
#[derive(Debug, Clone)]
pub enum TeacherSource {
    Table(TeacherPredictionTable),
    /// A trained policy evaluated on its own feature view.
    Model {
        params: PolicyParams,
        features: HashMap<String, Vec<f64>>,
    },
}

impl TeacherSource {
    /// Teacher backed by `params` over `view`, which must match its input width.
    pub fn from_model(params: PolicyParams, view: &Dataset) -> Result<Self> {
        if params.dim() != view.dim() {
            return Err(Error::Dimension {
                expected: params.dim(),
                actual: view.dim(),
                context: "teacher checkpoint vs teacher features",
            });
        }
        let features = view
            .samples()
            .iter()
            .map(|s| (s.id.clone(), s.features.clone()))
            .collect();
        Ok(Self::Model { params, features })
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Self::Table(t) => t.num_classes(),
            Self::Model { params, .. } => params.classes(),
        }
    }

    pub fn distribution(&self, id: &str) -> Result<ProbDistribution> {
        match self {
            Self::Table(t) => t.get(id).cloned(),
            Self::Model { params, features } => {
                let x = features
                    .get(id)
                    .ok_or_else(|| Error::MissingTeacher(id.to_string()))?;
                Ok(params.forward(x)?.1)
            }
        }
    }
}

/// Loads a checkpoint and binds it to the teacher's feature view.
pub fn make_teacher_from_checkpoint(checkpoint: impl AsRef<Path>, view: &Dataset) -> Result<TeacherSource> {
    TeacherSource::from_model(PolicyParams::load(checkpoint)?, view)
}

/// Per-epoch records of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub records: Vec<EpochRecord>,
    /// Fingerprint of the reference policy after every refinement epoch.
    pub reference_fingerprints: Vec<u64>,
}

impl StageReport {
    fn new(stage: Stage) -> Self {
        Self {
            stage,
            records: Vec::new(),
            reference_fingerprints: Vec::new(),
        }
    }

    /// Epoch with the highest held-out macro F1 (earliest on ties).
    pub fn best_epoch(&self) -> Option<usize> {
        self.records
            .iter()
            .fold(None::<&EpochRecord>, |best, r| match best {
                Some(b) if b.macro_f1 >= r.macro_f1 => Some(b),
                _ => Some(r),
            })
            .map(|r| r.epoch)
    }
}

/// Hook called after each epoch, e.g. to stream reports or write checkpoints.
pub trait EpochObserver {
    fn on_epoch(&mut self, record: &EpochRecord, params: &PolicyParams) -> Result<()>;
}

impl EpochObserver for () {
    fn on_epoch(&mut self, _: &EpochRecord, _: &PolicyParams) -> Result<()> {
        Ok(())
    }
}

fn require_labels(dataset: &Dataset) -> Result<Vec<usize>> {
    dataset
        .samples()
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::MissingLabel(s.id.clone())))
        .collect()
}

fn check_dims(params: &PolicyParams, dim: usize, classes: usize) -> Result<()> {
    if params.dim() != dim {
        return Err(Error::Dimension {
            expected: params.dim(),
            actual: dim,
            context: "dataset features vs policy input",
        });
    }
    if params.classes() != classes {
        return Err(Error::Dimension {
            expected: params.classes(),
            actual: classes,
            context: "dataset classes vs policy output",
        });
    }
    Ok(())
}

/// Macro F1, per-class F1 and accuracy of `params` on a labeled dataset.
pub fn evaluate(params: &PolicyParams, dataset: &Dataset) -> Result<Metrics> {
    check_dims(params, dataset.dim(), dataset.num_classes())?;
    let labels = require_labels(dataset)?;
    let predictions = dataset
        .samples()
        .iter()
        .map(|s| params.predict(&s.features))
        .collect::<Result<Vec<_>>>()?;
    Metrics::compute(&predictions, &labels, dataset.num_classes())
}

/// Mean cross-entropy of `params` on a labeled dataset (0 when empty).
pub fn cross_entropy(params: &PolicyParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<&UtteranceSample> = dataset.samples().iter().collect();
    Ok(ce_loss_and_grads(params, &refs)?.0)
}

pub fn train_supervised(
    init: PolicyParams,
    train: &Dataset,
    eval: &Dataset,
    cfg: &BgrpoConfig,
) -> Result<(PolicyParams, StageReport)> {
    train_supervised_with(init, train, eval, cfg, &mut ())
}

/// Minibatch cross-entropy training for `cfg.warmup_epochs` epochs.
pub fn train_supervised_with(
    init: PolicyParams,
    train: &Dataset,
    eval: &Dataset,
    cfg: &BgrpoConfig,
    observer: &mut dyn EpochObserver,
) -> Result<(PolicyParams, StageReport)> {
    cfg.validate()?;
    check_dims(&init, train.dim(), train.num_classes())?;
    require_labels(train)?;
    require_labels(eval)?;
    if train.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training set `{}` needs at least 2 samples, has {}",
            train.name(),
            train.len()
        )));
    }

    let mut params = init;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut report = StageReport::new(Stage::Warmup);
    for epoch in 0..cfg.warmup_epochs {
        let batches = make_batches(train.len(), cfg.batch_size, cfg.seed, epoch as u64)?;
        let mut loss_sum = 0.0;
        for batch in &batches {
            let samples: Vec<&UtteranceSample> = batch.iter().map(|&i| &train.samples()[i]).collect();
            let (loss, grads) = ce_loss_and_grads(&params, &samples)?;
            loss_sum += loss;
            opt.step(&mut params, &grads);
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            stage: Stage::Warmup,
            loss: loss_sum / batches.len() as f64,
            macro_f1: evaluate(&params, eval)?.macro_f1,
            mean_reward: None,
            frac_pos_adv: None,
            frac_degenerate_batches: None,
        };
        observer.on_epoch(&record, &params)?;
        report.records.push(record);
    }
    Ok((params, report))
}

pub fn train_bgrpo(
    baseline: PolicyParams,
    rl: UnlabeledView<'_>,
    eval: &Dataset,
    reward: &RewardConfig,
    teacher: Option<&TeacherSource>,
    cfg: &BgrpoConfig,
) -> Result<(PolicyParams, StageReport)> {
    train_bgrpo_with(baseline, rl, eval, reward, teacher, cfg, &mut ())
}

fn select_action(dist: &ProbDistribution, selection: ActionSelection, rng: &mut impl Rng) -> usize {
    match selection {
        ActionSelection::Greedy => dist.argmax(),
        ActionSelection::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, &p) in dist.probs().iter().enumerate() {
                acc += p;
                if u < acc {
                    return k;
                }
            }
            dist.len() - 1
        }
    }
}

/// Unsupervised refinement for `cfg.rl_epochs` epochs, anchored to `baseline`.
pub fn train_bgrpo_with(
    baseline: PolicyParams,
    rl: UnlabeledView<'_>,
    eval: &Dataset,
    reward: &RewardConfig,
    teacher: Option<&TeacherSource>,
    cfg: &BgrpoConfig,
    observer: &mut dyn EpochObserver,
) -> Result<(PolicyParams, StageReport)> {
    cfg.validate()?;
    reward.validate()?;
    check_dims(&baseline, rl.dim(), rl.num_classes())?;
    require_labels(eval)?;
    if rl.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "refinement set `{}` needs at least 2 samples, has {}",
            rl.name(),
            rl.len()
        )));
    }

    // The teacher is frozen, so its distributions are fixed for the stage.
    let teacher_dists: Option<Vec<ProbDistribution>> = if reward.kind.needs_teacher() {
        let teacher = teacher.ok_or_else(|| {
            Error::Config(format!("reward {} requires a teacher source", reward.kind))
        })?;
        if teacher.num_classes() != rl.num_classes() {
            return Err(Error::Dimension {
                expected: rl.num_classes(),
                actual: teacher.num_classes(),
                context: "teacher classes",
            });
        }
        Some((0..rl.len()).map(|i| teacher.distribution(rl.id(i))).collect::<Result<_>>()?)
    } else {
        None
    };

    let reference = baseline.snapshot(SnapshotRole::Reference);
    let reference_dists: Vec<ProbDistribution> = (0..rl.len())
        .map(|i| reference.forward(rl.features(i)))
        .collect::<Result<_>>()?;

    let mut params = baseline;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut report = StageReport::new(Stage::Bgrpo);
    for epoch in 0..cfg.rl_epochs {
        let batches = make_batches(rl.len(), cfg.batch_size, cfg.seed, epoch as u64)?;
        let mut action_rng = stream_rng(cfg.seed, rng::STREAM_ACTIONS_BASE.wrapping_add(epoch as u64));
        let mut loss_sum = 0.0;
        let mut reward_sum = 0.0;
        let mut positive = 0usize;
        let mut seen = 0usize;
        let mut degenerate = 0usize;

        for batch in &batches {
            let old = params.snapshot(SnapshotRole::Old);
            let features: Vec<&[f64]> = batch.iter().map(|&i| rl.features(i)).collect();
            let mut actions = Vec::with_capacity(batch.len());
            let mut p_old = Vec::with_capacity(batch.len());
            let mut rewards = Vec::with_capacity(batch.len());
            for (&i, x) in batch.iter().zip(&features) {
                let dist = old.forward(x)?;
                let action = select_action(&dist, cfg.action_selection, &mut action_rng);
                let teacher = teacher_dists.as_ref().map(|t| &t[i]);
                rewards.push(compute_reward(reward, &dist, teacher)?.value);
                p_old.push(dist.get(action));
                actions.push(action);
            }
            let adv = batch_advantages(&rewards, cfg.advantage_mode, cfg.eps_std)?;
            let rollouts: Vec<SampleRollout> = batch
                .iter()
                .enumerate()
                .map(|(j, &i)| SampleRollout {
                    id: rl.id(i).to_string(),
                    action: actions[j],
                    p_old: p_old[j],
                    p_ref: reference_dists[i].get(actions[j]),
                    advantage: adv.values[j],
                })
                .collect();

            for step in 0..cfg.inner_steps {
                let (loss, grads) = batch_loss_and_gradients(&params, &features, &rollouts, cfg)?;
                if step == 0 {
                    loss_sum += loss;
                }
                opt.step(&mut params, &grads);
            }

            reward_sum += rewards.iter().sum::<f64>();
            positive += adv.count_positive();
            seen += batch.len();
            degenerate += usize::from(adv.degenerate);
        }

        let record = EpochRecord {
            epoch: epoch + 1,
            stage: Stage::Bgrpo,
            loss: loss_sum / batches.len() as f64,
            macro_f1: evaluate(&params, eval)?.macro_f1,
            mean_reward: Some(reward_sum / seen as f64),
            frac_pos_adv: Some(positive as f64 / seen as f64),
            frac_degenerate_batches: Some(degenerate as f64 / batches.len() as f64),
        };
        observer.on_epoch(&record, &params)?;
        report.records.push(record);
        report.reference_fingerprints.push(reference.params().fingerprint());
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::init_params;
    use crate::rewards::RewardKind;
    use crate::synthetic::{generate, MixtureSpec};

    fn mixture(per_class: usize, separation: f64, seed: u64) -> Dataset {
        generate(&MixtureSpec {
            num_classes: 3,
            dim: 4,
            separation,
            sigma: 1.0,
            per_class: vec![per_class; 3],
            mean_seed: 1,
            sample_seed: seed,
            name: "toy".into(),
        })
        .unwrap()
    }

    fn quick_cfg(epochs: usize) -> BgrpoConfig {
        BgrpoConfig {
            warmup_epochs: epochs,
            rl_epochs: epochs,
            batch_size: 8,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let data = mixture(10, 4.0, 2);
        let init = init_params(4, 8, 3, 0).unwrap();
        let (p, report) = train_supervised(init.clone(), &data, &data, &quick_cfg(0)).unwrap();
        assert_eq!(p, init);
        assert!(report.records.is_empty());
    }

    #[test]
    fn supervised_rejects_unlabeled_and_empty() {
        let data = mixture(5, 4.0, 2);
        let masked = data.map_labels(|i, l| if i == 3 { None } else { l }).unwrap();
        let init = init_params(4, 8, 3, 0).unwrap();
        assert!(matches!(
            train_supervised(init.clone(), &masked, &data, &quick_cfg(1)),
            Err(Error::MissingLabel(_))
        ));
        let empty = Dataset::new("e", 4, 3, vec![]).unwrap();
        assert!(train_supervised(init, &empty, &data, &quick_cfg(1)).is_err());
    }

    #[test]
    fn supervised_learns_separable_data() {
        let data = mixture(60, 8.0, 3);
        let init = init_params(4, 16, 3, 0).unwrap();
        let (p, report) = train_supervised(init, &data, &data, &quick_cfg(30)).unwrap();
        assert!(evaluate(&p, &data).unwrap().accuracy > 0.95);
        assert_eq!(report.records.len(), 30);
        assert!(report.best_epoch().is_some());
    }

    #[test]
    fn teacher_rewards_require_teacher() {
        let data = mixture(10, 4.0, 2);
        let init = init_params(4, 8, 3, 0).unwrap();
        let reward = RewardConfig { kind: RewardKind::R4, ..Default::default() };
        let err = train_bgrpo(init, data.unlabeled(), &data, &reward, None, &quick_cfg(1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn all_degenerate_batches_leave_params_unchanged() {
        let data = mixture(20, 4.0, 2);
        let init = init_params(4, 8, 3, 0).unwrap();
        // Every max probability exceeds this δ, so every reward is C.
        let reward = RewardConfig { delta: 1e-9, ..Default::default() };
        let cfg = BgrpoConfig { beta: 0.0, ..quick_cfg(3) };
        let (p, report) = train_bgrpo(init.clone(), data.unlabeled(), &data, &reward, None, &cfg).unwrap();
        assert_eq!(p, init);
        for r in &report.records {
            assert_eq!(r.frac_degenerate_batches, Some(1.0));
            assert_eq!(r.frac_pos_adv, Some(0.0));
            assert_eq!(r.mean_reward, Some(1.0));
        }
    }

    #[test]
    fn self_teacher_always_agrees() {
        let data = mixture(10, 4.0, 2);
        let params = init_params(4, 8, 3, 5).unwrap();
        let teacher = TeacherSource::from_model(params.clone(), &data).unwrap();
        let cfg = RewardConfig { kind: RewardKind::R3, ..Default::default() };
        for s in data.samples() {
            let mine = params.forward(&s.features).unwrap().1;
            let r = compute_reward(&cfg, &mine, Some(&teacher.distribution(&s.id).unwrap())).unwrap();
            assert_eq!(r.value, cfg.c);
        }
        let wrong = Dataset::new("w", 5, 3, vec![]).unwrap();
        assert!(TeacherSource::from_model(params, &wrong).is_err());
    }

    #[test]
    fn reference_is_frozen_and_run_is_deterministic() {
        let data = mixture(20, 3.0, 4);
        let init = init_params(4, 8, 3, 1).unwrap();
        let cfg = quick_cfg(4);
        let run = || train_bgrpo(init.clone(), data.unlabeled(), &data, &RewardConfig::default(), None, &cfg).unwrap();
        let (p1, r1) = run();
        let (p2, r2) = run();
        assert_eq!(p1.fingerprint(), p2.fingerprint());
        assert_eq!(r1, r2);
        assert!(r1.reference_fingerprints.iter().all(|&f| f == init.fingerprint()));
    }

    #[test]
    fn sampled_actions_are_supported() {
        let data = mixture(10, 3.0, 4);
        let init = init_params(4, 8, 3, 1).unwrap();
        let cfg = BgrpoConfig { action_selection: ActionSelection::Sample, inner_steps: 3, ..quick_cfg(2) };
        let reward = RewardConfig { kind: RewardKind::R2, ..Default::default() };
        let (p, _) = train_bgrpo(init.clone(), data.unlabeled(), &data, &reward, None, &cfg).unwrap();
        assert_ne!(p, init);
    }

    #[test]
    fn evaluate_is_order_invariant() {
        let data = mixture(15, 2.0, 6);
        let params = init_params(4, 8, 3, 2).unwrap();
        let mut samples = data.samples().to_vec();
        samples.reverse();
        let reversed = Dataset::new("r", 4, 3, samples).unwrap();
        assert_eq!(evaluate(&params, &data).unwrap(), evaluate(&params, &reversed).unwrap());
        assert!(evaluate(&PolicyParams::zeros(5, 2, 3), &data).is_err());
    }
}
