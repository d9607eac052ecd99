//! Parameter updates restricted to update groups.

use std::str::FromStr;

use crate::error::UalError;
use crate::nn::params::{Gradients, Group, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient descent, `theta <- theta - lr * grad`.
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = UalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(UalError::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Optimizer state; moments are only allocated for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps taken per group, indexed by `Group as usize`.
    pub steps: [u64; 3],
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamSet) -> Self {
        let n = if kind == OptimizerKind::Adam { params.len() } else { 0 };
        Optimizer {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: [0; 3],
        }
    }

    /// Apply one update to every parameter of the listed groups; others are untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, groups: &[Group]) {
        for &g in groups {
            self.steps[g as usize] += 1;
        }
        let specs: Vec<_> = params
            .specs()
            .iter()
            .filter(|s| groups.contains(&s.group))
            .map(|s| (s.offset, s.len, s.group))
            .collect();
        let lr = self.lr;
        let values = params.values_mut();
        let grad = grads.values();
        for (offset, len, group) in specs {
            let range = offset..offset + len;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in values[range.clone()].iter_mut().zip(&grad[range]) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let t = self.steps[group as usize] as i32;
                    let c1 = 1.0 - BETA1.powi(t);
                    let c2 = 1.0 - BETA2.powi(t);
                    for i in range {
                        let g = grad[i];
                        self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
                        self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
                        let mh = self.m[i] / c1;
                        let vh = self.v[i] / c2;
                        values[i] -= lr * mh / (vh.sqrt() + EPS);
                    }
                }
            }
        }
    }
}
