//! Training objectives and their exact gradients.
//!
//! The unsupervised objective for one batch of `B` rollouts is
//!
//! ```text
//! J = 1/B Σ_i [ min(t_i Â_i, clip(t_i, 1-ε, 1+ε) Â_i) - β (u_i - ln u_i - 1) ]
//! t_i = π(o_i|q_i) / π_old(o_i|q_i)      u_i = π_ref(o_i|q_i) / π(o_i|q_i)
//! ```
//!
//! and the trainer minimizes `-J`. `Â_i`, `π_old` and `π_ref` are constants
//! with respect to the live parameters.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::advantage::{AdvantageMode, DEFAULT_EPS_STD};
use crate::error::{Error, Result};
use crate::features::UtteranceSample;
use crate::optim::OptimizerKind;
use crate::policy::{init_params, ForwardPass, PolicyParams};
use crate::rng::{self, stream_rng};

/// How the action `o_i` is chosen from the old policy at rollout time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionSelection {
    /// Most likely class under the old policy.
    #[default]
    Greedy,
    /// A class drawn from the old policy's distribution.
    Sample,
}

impl FromStr for ActionSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" | "argmax" => Ok(Self::Greedy),
            "sample" => Ok(Self::Sample),
            _ => Err(Error::Config(format!("unknown action selection `{s}` (expected greedy|sample)"))),
        }
    }
}

impl fmt::Display for ActionSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::Sample => "sample",
        })
    }
}

/// Hyperparameters shared by both training stages.
#[derive(Debug, Clone, PartialEq)]
pub struct BgrpoConfig {
    /// Ratio clip range ε.
    pub epsilon: f64,
    /// KL coefficient β.
    pub beta: f64,
    pub batch_size: usize,
    pub eps_std: f64,
    pub advantage_mode: AdvantageMode,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub warmup_epochs: usize,
    pub rl_epochs: usize,
    /// Gradient steps per batch against one old-policy snapshot.
    pub inner_steps: usize,
    pub action_selection: ActionSelection,
    pub seed: u64,
}

impl Default for BgrpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.04,
            batch_size: 32,
            eps_std: DEFAULT_EPS_STD,
            advantage_mode: AdvantageMode::PositiveClip,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::default(),
            warmup_epochs: 100,
            rl_epochs: 100,
            inner_steps: 1,
            action_selection: ActionSelection::Greedy,
            seed: 0,
        }
    }
}

impl BgrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be >= 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.eps_std.is_nan() || self.eps_std < 0.0 {
            return Err(Error::Config(format!("eps_std must be >= 0, got {}", self.eps_std)));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be >= 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Everything about one sample that is frozen at rollout time.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRollout {
    pub id: String,
    /// Chosen class `o_i`.
    pub action: usize,
    /// `π_old(o_i | q_i)`.
    pub p_old: f64,
    /// `π_ref(o_i | q_i)`.
    pub p_ref: f64,
    pub advantage: f64,
}

/// Gradients with the shapes of [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Flattened in `[w1, b1, w2, b2]` order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// `u - ln u - 1`: non-negative, zero only at `u = 1`.
pub fn kl_penalty(u: f64) -> Result<f64> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::InvalidArgument(format!("KL ratio must be > 0, got {u}")));
    }
    Ok(u - u.ln() - 1.0)
}

fn check_rollout(p_cur: f64, r: &SampleRollout) -> Result<()> {
    let ok = |p: f64| p > 0.0 && p <= 1.0;
    if !(ok(p_cur) && ok(r.p_old) && ok(r.p_ref)) {
        return Err(Error::InvalidArgument(format!(
            "sample `{}`: probabilities must lie in (0, 1] (cur {p_cur}, old {}, ref {})",
            r.id, r.p_old, r.p_ref
        )));
    }
    Ok(())
}

/// Clipped surrogate minus the KL estimator for one sample (to be maximized).
pub fn per_sample_objective(p_cur: f64, rollout: &SampleRollout, cfg: &BgrpoConfig) -> Result<f64> {
    check_rollout(p_cur, rollout)?;
    let t = p_cur / rollout.p_old;
    let a = rollout.advantage;
    let clipped = t.clamp(1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
    let surrogate = (t * a).min(clipped * a);
    Ok(surrogate - cfg.beta * kl_penalty(rollout.p_ref / p_cur)?)
}

/// True when the unclipped term `t Â` is the active branch of the min.
///
/// Inside `[1-ε, 1+ε]` both branches coincide and the unclipped one is taken.
fn unclipped_active(t: f64, advantage: f64, epsilon: f64) -> bool {
    if advantage > 0.0 {
        t <= 1.0 + epsilon
    } else if advantage < 0.0 {
        t >= 1.0 - epsilon
    } else {
        false
    }
}

/// `d objective / d p_cur` for one sample.
fn objective_slope(p_cur: f64, rollout: &SampleRollout, cfg: &BgrpoConfig) -> f64 {
    let t = p_cur / rollout.p_old;
    let surrogate = if unclipped_active(t, rollout.advantage, cfg.epsilon) {
        rollout.advantage / rollout.p_old
    } else {
        0.0
    };
    // d/dp (u - ln u - 1) with u = p_ref / p equals (1 - u) / p.
    let u = rollout.p_ref / p_cur;
    surrogate - cfg.beta * (1.0 - u) / p_cur
}

/// Adds the gradient of a scalar with logit gradient `dlogits` to `grads`.
#[allow(clippy::needless_range_loop)]
fn backprop(params: &PolicyParams, features: &[f64], pass: &ForwardPass, dlogits: &[f64], grads: &mut GradientSet) {
    let h = params.hidden();
    let n = params.classes();
    let mut dpre = vec![0.0; h];
    for j in 0..h {
        let a = pass.hidden[j];
        let w_row = &params.w2[j * n..(j + 1) * n];
        let g_row = &mut grads.w2[j * n..(j + 1) * n];
        let mut dh = 0.0;
        for k in 0..n {
            g_row[k] += a * dlogits[k];
            dh += w_row[k] * dlogits[k];
        }
        if pass.pre_hidden[j] > 0.0 {
            dpre[j] = dh;
        }
    }
    for (g, d) in grads.b2.iter_mut().zip(dlogits) {
        *g += d;
    }
    for (g, d) in grads.b1.iter_mut().zip(&dpre) {
        *g += d;
    }
    for (i, &x) in features.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let g_row = &mut grads.w1[i * h..(i + 1) * h];
        for (g, d) in g_row.iter_mut().zip(&dpre) {
            *g += x * d;
        }
    }
}

fn check_batch(features: &[&[f64]], rollouts: &[SampleRollout], classes: usize) -> Result<()> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if features.len() != rollouts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples but {} rollouts",
            features.len(),
            rollouts.len()
        )));
    }
    if let Some(r) = rollouts.iter().find(|r| r.action >= classes) {
        return Err(Error::InvalidArgument(format!(
            "sample `{}`: action {} out of range",
            r.id, r.action
        )));
    }
    Ok(())
}

/// Negated mean objective over the batch.
pub fn batch_loss(params: &PolicyParams, features: &[&[f64]], rollouts: &[SampleRollout], cfg: &BgrpoConfig) -> Result<f64> {
    check_batch(features, rollouts, params.classes())?;
    let mut total = 0.0;
    for (x, r) in features.iter().zip(rollouts) {
        let (_, dist) = params.forward(x)?;
        total += per_sample_objective(dist.get(r.action), r, cfg)?;
    }
    Ok(-total / features.len() as f64)
}

/// Exact gradient of [`batch_loss`] with respect to every parameter.
pub fn batch_gradients(
    params: &PolicyParams,
    features: &[&[f64]],
    rollouts: &[SampleRollout],
    cfg: &BgrpoConfig,
) -> Result<GradientSet> {
    Ok(batch_loss_and_gradients(params, features, rollouts, cfg)?.1)
}

/// [`batch_loss`] and [`batch_gradients`] from one set of forward passes.
pub fn batch_loss_and_gradients(
    params: &PolicyParams,
    features: &[&[f64]],
    rollouts: &[SampleRollout],
    cfg: &BgrpoConfig,
) -> Result<(f64, GradientSet)> {
    check_batch(features, rollouts, params.classes())?;
    let mut grads = GradientSet::zeros_like(params);
    let mut total = 0.0;
    let mut dlogits = vec![0.0; params.classes()];
    for (x, r) in features.iter().zip(rollouts) {
        let pass = params.forward_pass(x)?;
        let p = pass.dist.get(r.action);
        total += per_sample_objective(p, r, cfg)?;
        let slope = objective_slope(p, r, cfg);
        if slope == 0.0 {
            continue;
        }
        // d p_a / d z_k = p_a (δ_ak - p_k)
        for (k, d) in dlogits.iter_mut().enumerate() {
            let delta = if k == r.action { 1.0 } else { 0.0 };
            *d = slope * p * (delta - pass.dist.get(k));
        }
        backprop(params, x, &pass, &dlogits, &mut grads);
    }
    let b = features.len() as f64;
    grads.scale(-1.0 / b);
    Ok((-total / b, grads))
}

/// Mean negative log-likelihood of the gold labels and its gradient.
pub fn ce_loss_and_grads(params: &PolicyParams, batch: &[&UtteranceSample]) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = params.classes();
    let mut grads = GradientSet::zeros_like(params);
    let mut total = 0.0;
    let mut dlogits = vec![0.0; n];
    for s in batch {
        let label = s.label.ok_or_else(|| Error::MissingLabel(s.id.clone()))?;
        if label >= n {
            return Err(Error::InvalidArgument(format!("sample `{}`: label {label} out of range", s.id)));
        }
        let pass = params.forward_pass(&s.features)?;
        // ln softmax from logits directly, to stay finite for confident models.
        let max = pass.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + pass.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total -= pass.logits[label] - lse;
        for (k, d) in dlogits.iter_mut().enumerate() {
            *d = pass.dist.get(k) - if k == label { 1.0 } else { 0.0 };
        }
        backprop(params, &s.features, &pass, &dlogits, &mut grads);
    }
    let b = batch.len() as f64;
    grads.scale(1.0 / b);
    Ok((total / b, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Bgrpo,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" | "cross_entropy" => Ok(Self::CrossEntropy),
            "bgrpo" => Ok(Self::Bgrpo),
            _ => Err(Error::Config(format!("unknown loss `{s}` (expected ce|bgrpo)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CrossEntropy => "ce",
            Self::Bgrpo => "bgrpo",
        })
    }
}

/// Shape and seed of a random gradient-check problem.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSpec {
    pub dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub batch: usize,
    pub seed: u64,
    pub config: BgrpoConfig,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        Self {
            dim: 8,
            hidden: 4,
            classes: 6,
            batch: 5,
            seed: 0,
            config: BgrpoConfig::default(),
        }
    }
}

/// A concrete problem: parameters, samples and (for the surrogate) rollouts.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub params: PolicyParams,
    pub samples: Vec<UtteranceSample>,
    pub rollouts: Vec<SampleRollout>,
    pub config: BgrpoConfig,
}

impl GradCheckInstance {
    pub fn loss(&self, kind: LossKind, params: &PolicyParams) -> Result<f64> {
        match kind {
            LossKind::CrossEntropy => {
                let refs: Vec<&UtteranceSample> = self.samples.iter().collect();
                Ok(ce_loss_and_grads(params, &refs)?.0)
            }
            LossKind::Bgrpo => batch_loss(params, &self.features(), &self.rollouts, &self.config),
        }
    }

    pub fn gradients(&self, kind: LossKind) -> Result<GradientSet> {
        match kind {
            LossKind::CrossEntropy => {
                let refs: Vec<&UtteranceSample> = self.samples.iter().collect();
                Ok(ce_loss_and_grads(&self.params, &refs)?.1)
            }
            LossKind::Bgrpo => batch_gradients(&self.params, &self.features(), &self.rollouts, &self.config),
        }
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.features.as_slice()).collect()
    }

    /// Surrogate ratio `t_i` for every rollout at the current parameters.
    pub fn ratios(&self) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .zip(&self.rollouts)
            .map(|(s, r)| Ok(self.params.forward(&s.features)?.1.get(r.action) / r.p_old))
            .collect()
    }

    /// Smallest distance of any ratio to a clip boundary and of any hidden
    /// pre-activation to the ReLU kink.
    fn kink_margin(&self) -> Result<(f64, f64)> {
        let eps = self.config.epsilon;
        let ratio_margin = self
            .ratios()?
            .iter()
            .map(|t| (t - (1.0 - eps)).abs().min((t - (1.0 + eps)).abs()))
            .fold(f64::INFINITY, f64::min);
        let mut relu_margin = f64::INFINITY;
        for s in &self.samples {
            let pass = self.params.forward_pass(&s.features)?;
            relu_margin = pass.pre_hidden.iter().fold(relu_margin, |m, z| m.min(z.abs()));
        }
        Ok((ratio_margin, relu_margin))
    }
}

/// Target ratio and advantage sign pattern used for the first rollouts so
/// every instance mixes clipped and unclipped samples.
const RATIO_PATTERN: [(f64, f64); 4] = [
    (1.0, 1.0),   // unclipped, Â > 0
    (1.5, 1.0),   // clipped flat, Â > 0
    (0.6, -1.0),  // clipped flat, Â < 0
    (1.45, -1.0), // unclipped, Â < 0
];

fn sample_instance(spec: &GradCheckSpec, attempt: u64) -> Result<GradCheckInstance> {
    let mut rng = stream_rng(spec.seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)), rng::STREAM_GRADCHECK);
    let mut params = init_params(spec.dim, spec.hidden, spec.classes, rng.random())?;
    for b in params.b1.iter_mut().chain(params.b2.iter_mut()) {
        *b = rng.random_range(-0.5..0.5);
    }
    let samples: Vec<UtteranceSample> = (0..spec.batch)
        .map(|i| UtteranceSample {
            id: format!("g{i}"),
            features: (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
            label: Some(rng.random_range(0..spec.classes)),
            corpus: "gradcheck".into(),
        })
        .collect();
    let mut rollouts = Vec::with_capacity(spec.batch);
    for (i, s) in samples.iter().enumerate() {
        let dist = params.forward(&s.features)?.1;
        let action = if i % 2 == 0 { dist.argmax() } else { rng.random_range(0..spec.classes) };
        let p_cur = dist.get(action);
        let (t, sign) = RATIO_PATTERN.get(i).copied().unwrap_or_else(|| {
            (rng.random_range(0.5..1.6), if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        });
        // Keep p_old inside (0, 1].
        let t = t.max(p_cur * 1.01);
        let p_ref = (p_cur * rng.random_range(-1.0f64..1.0).exp()).min(1.0);
        rollouts.push(SampleRollout {
            id: s.id.clone(),
            action,
            p_old: p_cur / t,
            p_ref,
            advantage: sign * rng.random_range(0.2..2.0),
        });
    }
    Ok(GradCheckInstance {
        params,
        samples,
        rollouts,
        config: spec.config.clone(),
    })
}

/// Draws an instance whose ratios stay `10 h` away from the clip boundaries
/// and whose hidden pre-activations stay clear of the ReLU kink.
pub fn gradcheck_instance(spec: &GradCheckSpec, h: f64) -> Result<GradCheckInstance> {
    for attempt in 0..1000 {
        let inst = sample_instance(spec, attempt)?;
        let (ratio_margin, relu_margin) = inst.kink_margin()?;
        let max_x = inst
            .samples
            .iter()
            .flat_map(|s| s.features.iter())
            .fold(1.0f64, |m, x| m.max(x.abs()));
        if ratio_margin > 10.0 * h && relu_margin > 10.0 * h * max_x {
            return Ok(inst);
        }
    }
    Err(Error::InvalidArgument(
        "could not draw a kink-free gradient-check instance".into(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub passed: bool,
    pub num_params: usize,
}

/// Central finite differences against analytic gradients on a given instance.
pub fn grad_check_instance(inst: &GradCheckInstance, kind: LossKind, h: f64, tol: f64) -> Result<GradCheckReport> {
    let analytic = inst.gradients(kind)?.to_flat();
    let mut probe = inst.params.clone();
    let mut max_err = 0.0f64;
    let mut flat_index = 0;
    for t in 0..4 {
        let len = probe.tensors()[t].len();
        for i in 0..len {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + h;
            let up = inst.loss(kind, &probe)?;
            probe.tensors_mut()[t][i] = orig - h;
            let down = inst.loss(kind, &probe)?;
            probe.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[flat_index];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            max_err = max_err.max(err);
            flat_index += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        passed: max_err < tol,
        num_params: analytic.len(),
    })
}

/// Builds a kink-free random instance and checks its gradients.
pub fn grad_check(kind: LossKind, spec: &GradCheckSpec, h: f64, tol: f64) -> Result<GradCheckReport> {
    let inst = gradcheck_instance(spec, h)?;
    grad_check_instance(&inst, kind, h, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout(p_old: f64, p_ref: f64, advantage: f64) -> SampleRollout {
        SampleRollout {
            id: "s".into(),
            action: 0,
            p_old,
            p_ref,
            advantage,
        }
    }

    fn cfg(beta: f64) -> BgrpoConfig {
        BgrpoConfig {
            beta,
            ..Default::default()
        }
    }

    #[test]
    fn kl_penalty_values() {
        assert_eq!(kl_penalty(1.0).unwrap(), 0.0);
        assert!((kl_penalty(2.0).unwrap() - 0.30685).abs() < 1e-5);
        assert!((kl_penalty(0.5).unwrap() - 0.19315).abs() < 1e-5);
        assert!(kl_penalty(0.0).is_err());
        assert!(kl_penalty(-1.0).is_err());
    }

    #[test]
    fn objective_cases() {
        // t = 1
        assert_eq!(per_sample_objective(0.4, &rollout(0.4, 0.4, 1.0), &cfg(0.0)).unwrap(), 1.0);
        // t = 1.5 clipped to 1.2
        let v = per_sample_objective(0.6, &rollout(0.4, 0.6, 1.0), &cfg(0.0)).unwrap();
        assert!((v - 1.2).abs() < 1e-12);
        // Â = 0 and p_ref = p_cur
        assert_eq!(per_sample_objective(0.3, &rollout(0.2, 0.3, 0.0), &cfg(0.04)).unwrap(), 0.0);
        assert!(per_sample_objective(0.0, &rollout(0.2, 0.3, 0.0), &cfg(0.04)).is_err());
        assert!(per_sample_objective(0.3, &rollout(1.2, 0.3, 0.0), &cfg(0.04)).is_err());
    }

    #[test]
    fn objective_monotone_in_ratio() {
        let c = cfg(0.0);
        let mut prev = f64::NEG_INFINITY;
        for i in 1..200 {
            let t = i as f64 * 0.01;
            let v = per_sample_objective(0.5 * t.min(2.0), &rollout(0.5, 0.5, 1.5), &c).unwrap();
            assert!(v >= prev);
            if t >= 1.2 {
                assert!((v - 1.2 * 1.5).abs() < 1e-12);
            }
            prev = v;
        }
        // Â < 0: flat below 1 - ε.
        for t in [0.1, 0.3, 0.79] {
            let v = per_sample_objective(0.5 * t, &rollout(0.5, 0.5 * t, -1.0), &c).unwrap();
            assert!((v + 0.8).abs() < 1e-12);
        }
    }

    fn two_sample_instance() -> (PolicyParams, Vec<Vec<f64>>) {
        let params = init_params(3, 4, 3, 9).unwrap();
        (params, vec![vec![0.5, -1.0, 2.0], vec![-0.3, 0.8, 0.1]])
    }

    #[test]
    fn zero_advantage_at_reference_is_exactly_zero() {
        let (params, xs) = two_sample_instance();
        let feats: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let rollouts: Vec<SampleRollout> = xs
            .iter()
            .map(|x| {
                let d = params.forward(x).unwrap().1;
                let a = d.argmax();
                SampleRollout { id: "x".into(), action: a, p_old: d.get(a), p_ref: d.get(a), advantage: 0.0 }
            })
            .collect();
        let (loss, g) = batch_loss_and_gradients(&params, &feats, &rollouts, &cfg(0.04)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
        // β = 0 and Â = 0 with p_ref ≠ p_cur: still zero gradient.
        let shifted: Vec<SampleRollout> = rollouts.iter().map(|r| SampleRollout { p_ref: r.p_ref * 0.5, ..r.clone() }).collect();
        assert_eq!(batch_gradients(&params, &feats, &shifted, &cfg(0.0)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn batch_loss_is_negated_mean() {
        let (params, xs) = two_sample_instance();
        let feats: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let p0 = params.forward(&xs[0]).unwrap().1.get(0);
        let p1 = params.forward(&xs[1]).unwrap().1.get(0);
        // Sample 0 at t = 1.5 (objective 1.2), sample 1 with Â = 0 at reference.
        let rollouts = vec![
            SampleRollout { id: "a".into(), action: 0, p_old: p0 / 1.5, p_ref: p0, advantage: 1.0 },
            SampleRollout { id: "b".into(), action: 0, p_old: p1, p_ref: p1, advantage: 0.0 },
        ];
        let loss = batch_loss(&params, &feats, &rollouts, &cfg(0.0)).unwrap();
        assert!((loss + 0.6).abs() < 1e-12);

        let doubled_f: Vec<&[f64]> = feats.iter().chain(&feats).copied().collect();
        let doubled_r: Vec<SampleRollout> = rollouts.iter().chain(&rollouts).cloned().collect();
        let l2 = batch_loss(&params, &doubled_f, &doubled_r, &cfg(0.0)).unwrap();
        assert!((l2 - loss).abs() < 1e-15);
        assert!(batch_loss(&params, &feats, &rollouts[..1], &cfg(0.0)).is_err());
    }

    #[test]
    fn clipped_sample_contributes_no_gradient() {
        let (params, xs) = two_sample_instance();
        let p = params.forward(&xs[0]).unwrap().1.get(1);
        let r = SampleRollout { id: "c".into(), action: 1, p_old: p / 1.5, p_ref: p, advantage: 2.0 };
        let g = batch_gradients(&params, &[&xs[0]], &[r], &cfg(0.0)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn ce_values() {
        let uniform = PolicyParams::zeros(2, 3, 6);
        let s = UtteranceSample { id: "a".into(), features: vec![1.0, 2.0], label: Some(3), corpus: String::new() };
        let (loss, _) = ce_loss_and_grads(&uniform, &[&s]).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);

        // Logit 60 on the gold class: probability rounds to 1.
        let mut sure = PolicyParams::zeros(2, 3, 6);
        sure.b2[3] = 60.0;
        let (loss, _) = ce_loss_and_grads(&sure, &[&s]).unwrap();
        assert!(loss.abs() < 1e-20);

        let unlabeled = UtteranceSample { label: None, ..s.clone() };
        assert!(matches!(ce_loss_and_grads(&uniform, &[&unlabeled]), Err(Error::MissingLabel(_))));
    }

    #[test]
    fn gradcheck_passes_and_fails() {
        let spec = GradCheckSpec::default();
        for kind in [LossKind::CrossEntropy, LossKind::Bgrpo] {
            let r = grad_check(kind, &spec, 1e-5, 1e-4).unwrap();
            assert!(r.passed, "{kind}: {}", r.max_rel_error);
            assert_eq!(r.num_params, 8 * 4 + 4 + 4 * 6 + 6);
            assert!(!grad_check(kind, &spec, 1e-5, 0.0).unwrap().passed);
        }
    }

    #[test]
    fn gradcheck_instance_mixes_clipped_and_unclipped() {
        let inst = gradcheck_instance(&GradCheckSpec::default(), 1e-5).unwrap();
        let eps = inst.config.epsilon;
        let states: Vec<bool> = inst
            .ratios()
            .unwrap()
            .iter()
            .zip(&inst.rollouts)
            .map(|(&t, r)| unclipped_active(t, r.advantage, eps))
            .collect();
        assert!(states.contains(&true) && states.contains(&false), "{states:?}");
    }

    #[test]
    fn config_validation() {
        assert!(BgrpoConfig::default().validate().is_ok());
        for bad in [
            BgrpoConfig { epsilon: 1.0, ..Default::default() },
            BgrpoConfig { beta: -0.1, ..Default::default() },
            BgrpoConfig { batch_size: 1, ..Default::default() },
            BgrpoConfig { learning_rate: 0.0, ..Default::default() },
            BgrpoConfig { inner_steps: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kl_penalty_nonnegative(log_u in -4.6f64..4.6) {
                let u = log_u.exp();
                let v = kl_penalty(u).unwrap();
                prop_assert!(v >= 0.0);
            }

            #[test]
            fn loss_splits_by_size_weight(seed: u64, cut in 1usize..6) {
                let spec = GradCheckSpec { batch: 7, seed, ..Default::default() };
                let inst = sample_instance(&spec, 0).unwrap();
                let f = inst.features();
                let c = &inst.config;
                let whole = batch_loss(&inst.params, &f, &inst.rollouts, c).unwrap();
                let a = batch_loss(&inst.params, &f[..cut], &inst.rollouts[..cut], c).unwrap();
                let b = batch_loss(&inst.params, &f[cut..], &inst.rollouts[cut..], c).unwrap();
                let combined = (a * cut as f64 + b * (7 - cut) as f64) / 7.0;
                prop_assert!((whole - combined).abs() < 1e-12);
            }
        }
    }
}
