//! SGD-with-momentum and Adam, plus the step-decay learning-rate schedule.

use crate::autodiff::Matrix;
use serde::{Deserialize, Serialize};

/// Optimizer family with its fixed hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimKind {
    SgdMomentum {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl OptimKind {
    pub fn sgd_momentum() -> Self {
        OptimKind::SgdMomentum { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Step-decay schedule: `base * factor^(epoch / period)`. A period of 0
/// disables decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub factor: f64,
    pub period_epochs: usize,
}

impl LrSchedule {
    pub fn none() -> Self {
        Self {
            factor: 1.0,
            period_epochs: 0,
        }
    }
}

/// Learning rate at a given epoch under the schedule.
pub fn lr_at(base: f64, schedule: &LrSchedule, epoch: usize) -> f64 {
    if schedule.period_epochs == 0 {
        return base;
    }
    base * schedule
        .factor
        .powi((epoch / schedule.period_epochs) as i32)
}

/// Mutable optimizer state: per-parameter moment buffers and step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimKind,
    /// Current learning rate; the training loop applies the schedule here.
    pub lr: f64,
    pub weight_decay: f64,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
    step_count: usize,
}

impl OptimizerState {
    pub fn new(kind: OptimKind, lr: f64, weight_decay: f64, params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        let second_moment = match kind {
            OptimKind::Adam { .. } => zeros.clone(),
            OptimKind::SgdMomentum { .. } => Vec::new(),
        };
        Self {
            kind,
            lr,
            weight_decay,
            first_moment: zeros,
            second_moment,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }
}

/// Applies one update in place.
///
/// SGD-momentum: `v = mu*v + g + wd*theta; theta -= lr*v`.
/// Adam: bias-corrected moments over `g + wd*theta` (classic L2 coupling).
pub fn optimizer_step(state: &mut OptimizerState, params: &mut [Matrix], grads: &[Matrix]) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(
        params.len(),
        state.first_moment.len(),
        "optimizer buffers mismatch"
    );
    state.step_count += 1;
    match state.kind {
        OptimKind::SgdMomentum { momentum } => {
            for ((theta, g), v) in params.iter_mut().zip(grads).zip(&mut state.first_moment) {
                assert_eq!(theta.shape(), g.shape(), "gradient shape mismatch");
                for i in 0..theta.len() {
                    let grad = g.data()[i] + state.weight_decay * theta.data()[i];
                    let vi = momentum * v.data()[i] + grad;
                    v.data_mut()[i] = vi;
                    theta.data_mut()[i] -= state.lr * vi;
                }
            }
        }
        OptimKind::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let t = state.step_count as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for (((theta, g), m), v) in params
                .iter_mut()
                .zip(grads)
                .zip(&mut state.first_moment)
                .zip(&mut state.second_moment)
            {
                assert_eq!(theta.shape(), g.shape(), "gradient shape mismatch");
                for i in 0..theta.len() {
                    let grad = g.data()[i] + state.weight_decay * theta.data()[i];
                    let mi = beta1 * m.data()[i] + (1.0 - beta1) * grad;
                    let vi = beta2 * v.data()[i] + (1.0 - beta2) * grad * grad;
                    m.data_mut()[i] = mi;
                    v.data_mut()[i] = vi;
                    let m_hat = mi / bc1;
                    let v_hat = vi / bc2;
                    theta.data_mut()[i] -= state.lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}
