//! Gaussian-mixture stand-ins for pooled utterance embeddings.
//!
//! Class means are random unit directions scaled by `separation`; samples add
//! isotropic noise with standard deviation `sigma`. Because the generating
//! model is known, [`MixtureModel::posterior`] gives the Bayes-optimal
//! classifier for any draw.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{Dataset, UtteranceSample};
use crate::policy::ProbDistribution;
use crate::rng::{self, stream_rng};

/// Mean separation giving a warmed-up baseline in the middle of the F1 range
/// (neither chance nor ceiling) for the default 6-class, 32-dim setup.
pub const DEFAULT_SEPARATION: f64 = 1.8;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Norm of every class mean.
    pub separation: f64,
    pub sigma: f64,
    /// Samples drawn from each class.
    pub per_class: Vec<usize>,
    /// Seed for the class means; draws sharing it share one mixture.
    pub mean_seed: u64,
    /// Seed for the noise and ordering of one draw.
    pub sample_seed: u64,
    pub name: String,
}

impl MixtureSpec {
    /// Equal class sizes, default separation, unit noise.
    pub fn balanced(num_classes: usize, dim: usize, per_class: usize, seed: u64) -> Self {
        Self {
            num_classes,
            dim,
            separation: DEFAULT_SEPARATION,
            sigma: 1.0,
            per_class: vec![per_class; num_classes],
            mean_seed: seed,
            sample_seed: seed,
            name: "synthetic".into(),
        }
    }

    /// Geometric class sizes: class `k` gets `per_class * ratio^k` samples (at least 1).
    pub fn with_imbalance(mut self, ratio: f64) -> Self {
        let base = self.per_class.first().copied().unwrap_or(0) as f64;
        self.per_class = (0..self.num_classes)
            .map(|k| ((base * ratio.powi(k as i32)).round() as usize).max(1))
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument("mixture needs at least one class and one dimension".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "separation must be >= 0, got {}",
                self.separation
            )));
        }
        if self.per_class.len() != self.num_classes || self.per_class.contains(&0) {
            return Err(Error::InvalidArgument(
                "per-class counts must list every class with at least one sample".into(),
            ));
        }
        Ok(())
    }

    /// Class means for this spec's `mean_seed`.
    pub fn means(&self) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(self.mean_seed, rng::STREAM_MEANS);
        (0..self.num_classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x / norm * self.separation).collect()
            })
            .collect()
    }

    pub fn model(&self) -> Result<MixtureModel> {
        self.validate()?;
        Ok(MixtureModel {
            means: self.means(),
            sigma: self.sigma,
        })
    }

    /// `key = value` lines describing the spec.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let counts: Vec<String> = self.per_class.iter().map(usize::to_string).collect();
        writeln!(s, "name = \"{}\"", self.name).unwrap();
        writeln!(s, "classes = {}", self.num_classes).unwrap();
        writeln!(s, "dim = {}", self.dim).unwrap();
        writeln!(s, "separation = {:?}", self.separation).unwrap();
        writeln!(s, "sigma = {:?}", self.sigma).unwrap();
        writeln!(s, "per_class = [{}]", counts.join(", ")).unwrap();
        writeln!(s, "mean_seed = {}", self.mean_seed).unwrap();
        writeln!(s, "sample_seed = {}", self.sample_seed).unwrap();
        s
    }
}

/// Equal-prior isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl MixtureModel {
    /// Exact class posterior: `softmax_k(-‖x - μ_k‖² / (2σ²))`.
    pub fn posterior(&self, features: &[f64]) -> Result<ProbDistribution> {
        let dim = self.means.first().map_or(0, Vec::len);
        if features.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: features.len(),
                context: "oracle input",
            });
        }
        let scale = 2.0 * self.sigma * self.sigma;
        let scores: Vec<f64> = self
            .means
            .iter()
            .map(|mu| -mu.iter().zip(features).map(|(m, x)| (x - m).powi(2)).sum::<f64>() / scale)
            .collect();
        Ok(ProbDistribution::softmax(&scores))
    }

    pub fn classify(&self, features: &[f64]) -> Result<(usize, ProbDistribution)> {
        let post = self.posterior(features)?;
        Ok((post.argmax(), post))
    }
}

/// Bayes-optimal class and posterior for `features` under `spec`.
pub fn bayes_oracle(spec: &MixtureSpec, features: &[f64]) -> Result<(usize, ProbDistribution)> {
    spec.model()?.classify(features)
}

/// Draws a labeled dataset from the mixture.
pub fn generate(spec: &MixtureSpec) -> Result<Dataset> {
    spec.validate()?;
    generate_with_means(spec, &spec.means())
}

/// Like [`generate`] but with explicit class means.
pub fn generate_with_means(spec: &MixtureSpec, means: &[Vec<f64>]) -> Result<Dataset> {
    spec.validate()?;
    if means.len() != spec.num_classes || means.iter().any(|m| m.len() != spec.dim) {
        return Err(Error::InvalidArgument("means do not match the mixture shape".into()));
    }
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(spec.per_class.iter().sum());
    for (k, (&count, mu)) in spec.per_class.iter().zip(means).enumerate() {
        // Per-class stream: classes can be drawn independently.
        let mut rng = stream_rng(spec.sample_seed, (rng::STREAM_SAMPLES << 16) | k as u64);
        for _ in 0..count {
            let x = mu
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.sigma * z
                })
                .collect();
            rows.push((k, x));
        }
    }
    let mut rng = stream_rng(spec.sample_seed, rng::STREAM_SAMPLES);
    rows.shuffle(&mut rng);
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(i, (label, features))| UtteranceSample {
            id: format!("{}-{i:06}", spec.name),
            features,
            label: Some(label),
            corpus: spec.name.clone(),
        })
        .collect();
    Dataset::new(spec.name.clone(), spec.dim, spec.num_classes, samples)
}

/// Random `dim × dim` orthogonal matrix (QR of a Gaussian matrix, sign-fixed).
pub fn random_orthogonal(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, rng::STREAM_ROTATION);
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Second feature view of the same utterances: a random rotation plus
/// Gaussian noise. Ids and labels are preserved.
pub fn second_view(dataset: &Dataset, rotation_seed: u64, noise_std: f64) -> Result<Dataset> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise std must be >= 0, got {noise_std}")));
    }
    let d = dataset.dim();
    let q = random_orthogonal(d, rotation_seed);
    let mut rng = stream_rng(rotation_seed, rng::STREAM_VIEW_NOISE);
    let samples = dataset
        .samples()
        .iter()
        .map(|s| {
            let features = (0..d)
                .map(|i| {
                    let rotated: f64 = (0..d).map(|j| q[(i, j)] * s.features[j]).sum();
                    let z: f64 = StandardNormal.sample(&mut rng);
                    rotated + noise_std * z
                })
                .collect();
            UtteranceSample {
                features,
                ..s.clone()
            }
        })
        .collect();
    Dataset::new(format!("{}_view2", dataset.name()), d, dataset.num_classes(), samples)
}
