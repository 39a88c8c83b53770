//! First-order optimizers over [`PolicyParams`].

use crate::error::{Error, Result};
use crate::loss::GradientSet;
use crate::policy::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        if let Self::Adam { beta1, beta2, eps } = *self {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::Config(format!(
                    "adam needs beta1, beta2 in [0, 1) and eps > 0; got ({beta1}, {beta2}, {eps})"
                )));
            }
        }
        Ok(())
    }
}

/// Optimizer with its per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    first: [Vec<f64>; 4],
    second: [Vec<f64>; 4],
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &PolicyParams) -> Self {
        let zeros = || params.tensors().map(|t| vec![0.0; t.len()]);
        let (first, second) = match kind {
            OptimizerKind::Sgd => (Default::default(), Default::default()),
            OptimizerKind::Adam { .. } => (zeros(), zeros()),
        };
        Self {
            kind,
            learning_rate,
            step: 0,
            first,
            second,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut PolicyParams, grads: &GradientSet) {
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (w, d) in p.iter_mut().zip(g) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let bias1 = 1.0 - beta1.powi(self.step as i32);
                let bias2 = 1.0 - beta2.powi(self.step as i32);
                let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
                for (t, (p, g)) in tensors.enumerate() {
                    let m = &mut self.first[t];
                    let v = &mut self.second[t];
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
