// Copyright 2026 The gkd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! SGD with heavy-ball momentum and a step schedule.

use crate::autodiff::{Gradients, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Optimizer state for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    initial_lr: f64,
    learning_rate: f64,
    momentum: f64,
    velocity: ParamSet,
    /// `(epoch, multiplier)`: after `epoch` completes the rate is multiplied.
    schedule: Vec<(usize, f64)>,
}

impl SgdState {
    pub fn new(params: &ParamSet, learning_rate: f64, momentum: f64, schedule: Vec<(usize, f64)>) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidHyperparameter {
                name: "lr",
                value: learning_rate,
            });
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidHyperparameter {
                name: "momentum",
                value: momentum,
            });
        }
        if let Some(&(_, m)) = schedule.iter().find(|(_, m)| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidHyperparameter {
                name: "lr_decay",
                value: m,
            });
        }
        let mut velocity = ParamSet::new();
        for (name, p) in params.iter() {
            velocity.insert(name, Matrix::zeros(p.rows(), p.cols()));
        }
        Ok(Self {
            initial_lr: learning_rate,
            learning_rate,
            momentum,
            velocity,
            schedule,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn velocity(&self) -> &ParamSet {
        &self.velocity
    }

    /// Rate in effect once `epoch` epochs have completed.
    pub fn rate_after_epoch(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(trigger, _)| *trigger <= epoch)
            .fold(self.initial_lr, |lr, (_, m)| lr * m)
    }

    /// Sets the rate for the epoch that follows `completed` finished epochs.
    pub fn apply_schedule(&mut self, completed: usize) {
        self.learning_rate = self.rate_after_epoch(completed);
    }

    /// `v ← μv + g; p ← p − lr·v` for every parameter accepted by `update`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, update: impl Fn(&str) -> bool) -> Result<()> {
        let lr = self.learning_rate;
        let mu = self.momentum;
        for (name, p) in params.iter_mut() {
            if !update(name) {
                continue;
            }
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Structural(format!("no gradient for {name}")))?;
            let v = self
                .velocity
                .get_mut(name)
                .ok_or_else(|| Error::Structural(format!("no velocity for {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = mu * *vv + gv;
                *pv -= lr * *vv;
            }
            if !p.is_finite() {
                return Err(Error::NumericOverflow { op: "sgd_step" });
            }
        }
        Ok(())
    }
}
