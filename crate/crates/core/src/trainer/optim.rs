use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    SgdMomentum,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SgdMomentum => "sgd-momentum",
            Self::Adam => "adam",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" | "sgd-momentum" => Ok(Self::SgdMomentum),
            "adam" => Ok(Self::Adam),
            other => Err(config_err(format!("unknown optimizer `{other}`"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `v ← μ·v + g; p ← p − lr·v`
pub fn sgd_step(params: &mut [f32], grads: &[f32], velocity: &mut [f64], lr: f64, momentum: f64) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), velocity.len(), "parameter and velocity lengths differ");
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + f64::from(g);
        *p = (f64::from(*p) - lr * *v) as f32;
    }
}

/// First and second moments for one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps taken so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f32],
    grads: &[f32],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), state.m.len(), "parameter and state lengths differ");
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
        let g = f64::from(g);
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        *p = (f64::from(*p) - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
    }
}

/// Per-tensor optimizer state for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OptimizerState {
    SgdMomentum { momentum: f64, velocity: Vec<Vec<f64>> },
    Adam { slots: Vec<AdamState> },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, momentum: f64, lens: &[usize]) -> Self {
        match kind {
            OptimizerKind::SgdMomentum => Self::SgdMomentum {
                momentum,
                velocity: lens.iter().map(|&n| vec![0.0; n]).collect(),
            },
            OptimizerKind::Adam => Self::Adam {
                slots: lens.iter().map(|&n| AdamState::new(n)).collect(),
            },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Self::SgdMomentum { .. } => OptimizerKind::SgdMomentum,
            Self::Adam { .. } => OptimizerKind::Adam,
        }
    }

    /// Applies one update to parameter tensor `slot`.
    pub fn step(&mut self, slot: usize, params: &mut [f32], grads: &[f32], lr: f64) {
        match self {
            Self::SgdMomentum { momentum, velocity } => sgd_step(params, grads, &mut velocity[slot], lr, *momentum),
            Self::Adam { slots } => adam_step(params, grads, &mut slots[slot], lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS),
        }
    }
}
