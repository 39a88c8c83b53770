//! The policy: `linear(D→H) → ReLU → linear(H→N) → softmax`.
//!
//! Weights are stored row-major: `w1[i * H + j]` connects input `i` to hidden
//! unit `j`, and `w2[j * N + k]` connects hidden unit `j` to class `k`.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, stream_rng};

/// Hidden width used when none is configured.
pub const DEFAULT_HIDDEN: usize = 128;

/// Tolerance on `sum(probs) == 1`.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

const CHECKPOINT_MAGIC: &str = "bgrpo-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// A categorical distribution over `N` classes.
///
/// Entries are finite, lie in `[0, 1]` and sum to one within
/// [`PROB_SUM_TOLERANCE`]. Softmax outputs are strictly positive; teacher rows
/// may contain exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDistribution(Vec<f64>);

impl ProbDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Distribution("empty distribution".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(Error::Distribution(format!("entry {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Distribution(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Numerically stable softmax (max-subtracted).
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / total).collect())
    }

    /// Uniform distribution over `n` classes.
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }
}

/// Lowest index of the maximum value.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Parameters of the policy network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    dim: usize,
    hidden: usize,
    classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Hidden pre-activations `W1ᵀx + b1`.
    pub pre_hidden: Vec<f64>,
    /// `ReLU(pre_hidden)`.
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub dist: ProbDistribution,
}

impl PolicyParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            dim,
            hidden,
            classes,
            w1: vec![0.0; dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * classes],
            b2: vec![0.0; classes],
        }
    }

    /// Builds parameters from explicit tensors, checking shapes and finiteness.
    pub fn from_parts(
        dim: usize,
        hidden: usize,
        classes: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || hidden == 0 || classes == 0 {
            return Err(Error::InvalidArgument("policy dimensions must be at least 1".into()));
        }
        let checks = [
            (w1.len(), dim * hidden, "w1"),
            (b1.len(), hidden, "b1"),
            (w2.len(), hidden * classes, "w2"),
            (b2.len(), classes, "b2"),
        ];
        for (actual, expected, context) in checks {
            if actual != expected {
                return Err(Error::Dimension {
                    expected,
                    actual,
                    context,
                });
            }
        }
        let params = Self {
            dim,
            hidden,
            classes,
            w1,
            b1,
            w2,
            b2,
        };
        if !params.is_finite() {
            return Err(Error::InvalidArgument("policy parameters must be finite".into()));
        }
        Ok(params)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `[w1, b1, w2, b2]`.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Hash of the exact bit patterns of all parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (self.dim, self.hidden, self.classes).hash(&mut h);
        for t in self.tensors() {
            for v in t {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Full forward pass with intermediates.
    pub fn forward_pass(&self, features: &[f64]) -> Result<ForwardPass> {
        if features.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: features.len(),
                context: "policy input",
            });
        }
        let h = self.hidden;
        let n = self.classes;
        let mut pre_hidden = self.b1.clone();
        for (i, &x) in features.iter().enumerate() {
            let row = &self.w1[i * h..(i + 1) * h];
            for (acc, &w) in pre_hidden.iter_mut().zip(row) {
                *acc += x * w;
            }
        }
        let hidden: Vec<f64> = pre_hidden.iter().map(|&z| z.max(0.0)).collect();
        let mut logits = self.b2.clone();
        for (j, &a) in hidden.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &self.w2[j * n..(j + 1) * n];
            for (acc, &w) in logits.iter_mut().zip(row) {
                *acc += a * w;
            }
        }
        let dist = ProbDistribution::softmax(&logits);
        Ok(ForwardPass {
            pre_hidden,
            hidden,
            logits,
            dist,
        })
    }

    /// Logits and class distribution for one feature vector.
    pub fn forward(&self, features: &[f64]) -> Result<(Vec<f64>, ProbDistribution)> {
        let pass = self.forward_pass(features)?;
        Ok((pass.logits, pass.dist))
    }

    /// Most likely class (lowest index on ties).
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(self.forward(features)?.1.argmax())
    }

    /// Frozen copy for use as the old or reference policy.
    pub fn snapshot(&self, role: SnapshotRole) -> PolicySnapshot {
        PolicySnapshot {
            params: self.clone(),
            role,
        }
    }

    /// Text serialization. Values use shortest round-trip formatting, so
    /// [`PolicyParams::parse_checkpoint`] restores them bit for bit.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = format!(
            "{CHECKPOINT_MAGIC} version={CHECKPOINT_VERSION}\ndims {} {} {}\n",
            self.dim, self.hidden, self.classes
        );
        for (name, values) in ["w1", "b1", "w2", "b2"].into_iter().zip(self.tensors()) {
            out.push_str(name);
            for v in values {
                write!(out, " {v:e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_checkpoint(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("truncated checkpoint: missing {what}")))
        };

        let (ln, magic) = next("header")?;
        let version = magic
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|rest| rest.trim().strip_prefix("version="))
            .ok_or_else(|| Error::parse(path, ln, "not a checkpoint file"))?;
        if version.parse::<u32>().ok() != Some(CHECKPOINT_VERSION) {
            return Err(Error::parse(path, ln, format!("unsupported checkpoint version `{version}`")));
        }

        let (ln, dims) = next("dims")?;
        let dims: Vec<usize> = dims
            .strip_prefix("dims")
            .map(|rest| rest.split_whitespace().filter_map(|t| t.parse().ok()).collect())
            .unwrap_or_default();
        let [d, h, n] = dims[..] else {
            return Err(Error::parse(path, ln, "expected `dims <D> <H> <N>`"));
        };

        let mut tensor = |name: &str, expected: usize| -> Result<Vec<f64>> {
            let (ln, line) = next(name)?;
            let rest = line
                .strip_prefix(name)
                .ok_or_else(|| Error::parse(path, ln, format!("expected `{name}` row")))?;
            let values = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, ln, format!("`{t}` is not a number"))))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != expected {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("`{name}` has {} values, expected {expected}", values.len()),
                ));
            }
            Ok(values)
        };
        let w1 = tensor("w1", d * h)?;
        let b1 = tensor("b1", h)?;
        let w2 = tensor("w2", h * n)?;
        let b2 = tensor("b2", n)?;
        Self::from_parts(d, h, n, w1, b1, w2, b2)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_checkpoint(path, &text)
    }
}

/// Returns true if `text` starts like a checkpoint file.
pub fn looks_like_checkpoint(text: &str) -> bool {
    text.starts_with(CHECKPOINT_MAGIC)
}

/// Glorot-uniform weights (`|w| ≤ sqrt(6 / (fan_in + fan_out))`), zero biases.
pub fn init_params(dim: usize, hidden: usize, classes: usize, seed: u64) -> Result<PolicyParams> {
    if dim == 0 || hidden == 0 || classes == 0 {
        return Err(Error::InvalidArgument("policy dimensions must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, rng::STREAM_INIT);
    let mut uniform = |fan_in: usize, fan_out: usize| -> Vec<f64> {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        (0..fan_in * fan_out).map(|_| rng.random_range(-s..=s)).collect()
    };
    let mut params = PolicyParams::zeros(dim, hidden, classes);
    params.w1 = uniform(dim, hidden);
    params.w2 = uniform(hidden, classes);
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotRole {
    /// Parameters at rollout time; denominator of the importance ratio.
    Old,
    /// Frozen anchor for the KL penalty.
    Reference,
}

/// Immutable copy of policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    params: PolicyParams,
    role: SnapshotRole,
}

impl PolicySnapshot {
    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn forward(&self, features: &[f64]) -> Result<ProbDistribution> {
        Ok(self.params.forward(features)?.1)
    }
}
