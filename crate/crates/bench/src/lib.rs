//! Shared fixtures for the kernel benchmarks.

use bgrpo::advantage::{batch_advantages, AdvantageMode, DEFAULT_EPS_STD};
use bgrpo::policy::init_params;
use bgrpo::synthetic::{generate, MixtureSpec};
use bgrpo::{Dataset, PolicyParams, SampleRollout};

/// A protocol-sized problem: one batch of rollouts against a fresh policy.
pub struct Fixture {
    pub params: PolicyParams,
    pub data: Dataset,
    pub rollouts: Vec<SampleRollout>,
}

impl Fixture {
    pub fn new(batch: usize, dim: usize, hidden: usize, classes: usize) -> Self {
        let spec = MixtureSpec::balanced(classes, dim, batch.div_ceil(classes), 0);
        let data = generate(&spec).expect("valid mixture");
        let params = init_params(dim, hidden, classes, 0).expect("valid dims");
        let samples = &data.samples()[..batch];
        let rewards: Vec<f64> = (0..batch).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let adv = batch_advantages(&rewards, AdvantageMode::PositiveClip, DEFAULT_EPS_STD).expect("finite rewards");
        let rollouts = samples
            .iter()
            .zip(&adv.values)
            .map(|(s, &a)| {
                let dist = params.forward(&s.features).expect("matching width").1;
                let action = dist.argmax();
                SampleRollout {
                    id: s.id.clone(),
                    action,
                    p_old: dist.get(action),
                    p_ref: dist.get(action),
                    advantage: a,
                }
            })
            .collect();
        Self { params, data, rollouts }
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.data.samples()[..self.rollouts.len()]
            .iter()
            .map(|s| s.features.as_slice())
            .collect()
    }
}
