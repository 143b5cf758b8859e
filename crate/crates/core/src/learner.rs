//! Online policy-gradient learner state: the discounted eligibility trace of
//! log-policy gradients and the reward-weighted parameter step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::NodeId;
use crate::policy::{ParamTable, PolicyError};

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("beta must lie in [0, 1), got {0}")]
    BadBeta(f64),
    #[error("gamma must be positive and finite, got {0}")]
    BadGamma(f64),
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("trace has {trace} entries, parameter table has {table}")]
    ShapeMismatch { trace: usize, table: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    #[default]
    Constant,
}

/// Whether the tick's reward multiplies the trace after or before that tick's
/// routing decisions are folded in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTiming {
    /// `z <- beta*z + grads; theta <- theta + gamma*r*z`. A drop penalty reaches
    /// the decision that caused it in the same tick.
    #[default]
    AfterDecisions,
    /// `theta <- theta + gamma*r*z; z <- beta*z + grads`.
    BeforeDecisions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub beta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub reward_timing: RewardTiming,
}

impl LearnerConfig {
    pub fn new(beta: f64, gamma: f64) -> Self {
        LearnerConfig {
            beta,
            gamma,
            schedule: StepSchedule::Constant,
            reward_timing: RewardTiming::AfterDecisions,
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(LearnerError::BadBeta(self.beta));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(LearnerError::BadGamma(self.gamma));
        }
        Ok(())
    }

    /// Step size at tick `t`.
    pub fn step_size(&self, _t: u64) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.gamma,
        }
    }
}

/// Discounted sum of log-policy gradients, shaped like the owning router's
/// [`ParamTable`].
#[derive(Clone, Debug, PartialEq)]
pub struct EligibilityTrace {
    table: ParamTable,
}

impl EligibilityTrace {
    pub fn shaped_like(p: &ParamTable) -> Self {
        let mut table = p.clone();
        table.values_mut().fill(0.0);
        EligibilityTrace { table }
    }

    pub fn row(&self, y: NodeId) -> Result<&[f64], PolicyError> {
        self.table.row(y)
    }

    pub fn row_mut(&mut self, y: NodeId) -> Result<&mut [f64], PolicyError> {
        self.table.row_mut(y)
    }

    pub fn values(&self) -> &[f64] {
        self.table.values()
    }

    pub fn decay(&mut self, beta: f64) {
        for z in self.table.values_mut() {
            *z *= beta;
        }
    }

    /// Adds one decision's row gradient into row `y`.
    pub fn add(&mut self, y: NodeId, grad: &[f64]) -> Result<(), LearnerError> {
        let row = self.table.row_mut(y)?;
        if row.len() != grad.len() {
            return Err(LearnerError::ShapeMismatch {
                trace: grad.len(),
                table: row.len(),
            });
        }
        for (z, g) in row.iter_mut().zip(grad) {
            *z += g;
        }
        Ok(())
    }
}

/// `z <- beta*z`, then each decision's row gradient is added into its
/// destination row. Several decisions in one tick add up.
pub fn begin_tick_accumulate<'a>(
    tr: &mut EligibilityTrace,
    cfg: &LearnerConfig,
    grads: impl IntoIterator<Item = (NodeId, &'a [f64])>,
) -> Result<(), LearnerError> {
    tr.decay(cfg.beta);
    for (y, g) in grads {
        tr.add(y, g)?;
    }
    Ok(())
}

/// `theta <- theta + gamma * r * z`.
pub fn apply_reward(
    p: &mut ParamTable,
    tr: &EligibilityTrace,
    step: f64,
    reward: f64,
) -> Result<(), LearnerError> {
    if !reward.is_finite() {
        return Err(LearnerError::NonFiniteReward(reward));
    }
    let z = tr.values();
    let theta = p.values_mut();
    if z.len() != theta.len() {
        return Err(LearnerError::ShapeMismatch {
            trace: z.len(),
            table: theta.len(),
        });
    }
    if reward == 0.0 {
        return Ok(());
    }
    let scale = step * reward;
    for (t, z) in theta.iter_mut().zip(z) {
        *t += scale * z;
    }
    Ok(())
}

/// Exact running mean of the reward stream.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningAverageReward {
    count: u64,
    sum: f64,
}

impl RunningAverageReward {
    pub fn observe(&mut self, r: f64) {
        self.count += 1;
        self.sum += r;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}
