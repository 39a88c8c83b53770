//! Batch-as-group advantages.
//!
//! The whole minibatch is one group: `A_i = (r_i - mean) / std` with the
//! population standard deviation of the batch rewards. In the default mode
//! negative advantages are zeroed so below-average samples do not push the
//! policy at all.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Group std below which a batch counts as degenerate.
pub const DEFAULT_EPS_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AdvantageMode {
    /// `max(A_i, 0)`.
    #[default]
    PositiveClip,
    /// `A_i` unchanged.
    Signed,
    /// Constant 1 for every sample; rewards are ignored.
    None,
}

impl AdvantageMode {
    pub const ALL: [AdvantageMode; 3] = [Self::PositiveClip, Self::Signed, Self::None];
}

impl fmt::Display for AdvantageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PositiveClip => "positive_clip",
            Self::Signed => "signed",
            Self::None => "none",
        })
    }
}

impl FromStr for AdvantageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "positive_clip" | "positive" | "clip" => Ok(Self::PositiveClip),
            "signed" => Ok(Self::Signed),
            "none" => Ok(Self::None),
            _ => Err(Error::Config(format!(
                "unknown advantage mode `{s}` (expected positive_clip|signed|none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub mode: AdvantageMode,
    /// True when the reward spread fell below `eps_std` and the
    /// normalized advantages were zeroed.
    pub degenerate: bool,
}

impl AdvantageVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count_positive(&self) -> usize {
        self.values.iter().filter(|&&a| a > 0.0).count()
    }
}

/// Mean and population standard deviation (two-pass).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Normalized advantages for one batch of rewards.
pub fn batch_advantages(rewards: &[f64], mode: AdvantageMode, eps_std: f64) -> Result<AdvantageVector> {
    if rewards.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a group needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument("rewards must be finite".into()));
    }
    if mode == AdvantageMode::None {
        return Ok(AdvantageVector {
            values: vec![1.0; rewards.len()],
            mode,
            degenerate: false,
        });
    }
    let (mean, std) = mean_and_std(rewards);
    if std < eps_std {
        return Ok(AdvantageVector {
            values: vec![0.0; rewards.len()],
            mode,
            degenerate: true,
        });
    }
    let values = rewards
        .iter()
        .map(|r| {
            let a = (r - mean) / std;
            match mode {
                AdvantageMode::PositiveClip => a.max(0.0),
                _ => a,
            }
        })
        .collect();
    Ok(AdvantageVector {
        values,
        mode,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_case() {
        let clip = batch_advantages(&[1.0, 1.0, 0.0, 0.0], AdvantageMode::PositiveClip, DEFAULT_EPS_STD).unwrap();
        assert_eq!(clip.values, vec![1.0, 1.0, 0.0, 0.0]);
        let signed = batch_advantages(&[1.0, 1.0, 0.0, 0.0], AdvantageMode::Signed, DEFAULT_EPS_STD).unwrap();
        assert_eq!(signed.values, vec![1.0, 1.0, -1.0, -1.0]);
        assert_eq!(clip.count_positive(), 2);
    }

    #[test]
    fn degenerate_group() {
        for mode in [AdvantageMode::PositiveClip, AdvantageMode::Signed] {
            let a = batch_advantages(&[1.0; 4], mode, DEFAULT_EPS_STD).unwrap();
            assert_eq!(a.values, vec![0.0; 4]);
            assert!(a.degenerate);
        }
    }

    #[test]
    fn none_mode_is_all_ones() {
        for r in [[1.0, 1.0, 1.0], [0.3, -2.0, 7.0]] {
            let a = batch_advantages(&r, AdvantageMode::None, DEFAULT_EPS_STD).unwrap();
            assert_eq!(a.values, vec![1.0; 3]);
        }
    }

    #[test]
    fn rejects_small_or_nonfinite() {
        assert!(batch_advantages(&[1.0], AdvantageMode::Signed, DEFAULT_EPS_STD).is_err());
        assert!(batch_advantages(&[1.0, f64::NAN], AdvantageMode::Signed, DEFAULT_EPS_STD).is_err());
    }

    #[test]
    fn mode_parsing() {
        for m in AdvantageMode::ALL {
            assert_eq!(m.to_string().parse::<AdvantageMode>().unwrap(), m);
        }
        assert_eq!("positive-clip".parse::<AdvantageMode>().unwrap(), AdvantageMode::PositiveClip);
    }

    fn rewards() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), -3.0f64..3.0], 2..64)
    }

    proptest! {
        #[test]
        fn normalized(r in rewards()) {
            let a = batch_advantages(&r, AdvantageMode::Signed, DEFAULT_EPS_STD).unwrap();
            if !a.degenerate {
                let (m, s) = mean_and_std(&a.values);
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn clip_is_max_of_signed(r in rewards()) {
            let s = batch_advantages(&r, AdvantageMode::Signed, DEFAULT_EPS_STD).unwrap();
            let c = batch_advantages(&r, AdvantageMode::PositiveClip, DEFAULT_EPS_STD).unwrap();
            let expect: Vec<f64> = s.values.iter().map(|a| a.max(0.0)).collect();
            prop_assert_eq!(c.values, expect);
        }

        #[test]
        fn permutation_equivariant(r in rewards(), rot in 0usize..64) {
            let k = rot % r.len();
            let mut rotated = r.clone();
            rotated.rotate_left(k);
            let a = batch_advantages(&r, AdvantageMode::Signed, DEFAULT_EPS_STD).unwrap();
            let b = batch_advantages(&rotated, AdvantageMode::Signed, DEFAULT_EPS_STD).unwrap();
            let mut expect = a.values.clone();
            expect.rotate_left(k);
            for (x, y) in expect.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn scale_invariant(r in rewards(), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = r.iter().map(|x| x * c).collect();
            let a = batch_advantages(&r, AdvantageMode::Signed, DEFAULT_EPS_STD).unwrap();
            let b = batch_advantages(&scaled, AdvantageMode::Signed, DEFAULT_EPS_STD).unwrap();
            prop_assume!(!a.degenerate && !b.degenerate);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
