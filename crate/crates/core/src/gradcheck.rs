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

//! Central finite differences, used as an independent check on [`Graph::backward`].
//!
//! [`Graph::backward`]: crate::autodiff::Graph::backward

use crate::autodiff::{Gradients, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Estimates `∂loss/∂p` for every entry of every parameter with
/// `(f(p + h) − f(p − h)) / 2h`.
///
/// The loss is evaluated twice at the unperturbed point first; any
/// disagreement means the oracle cannot be trusted.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &ParamSet, step: f64) -> Result<Gradients>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidHyperparameter {
            name: "step",
            value: step,
        });
    }
    let first = loss_fn(params)?;
    let second = loss_fn(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::OracleUnusable { first, second });
    }

    let mut work = params.clone();
    let mut out = Gradients::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let base = params.get(name).expect("name from same set").clone();
        let mut grad = vec![0.0; base.len()];
        for (i, g) in grad.iter_mut().enumerate() {
            let x = base.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = x + step;
            let plus = loss_fn(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = x - step;
            let minus = loss_fn(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = x;
            *g = (plus - minus) / (2.0 * step);
        }
        out.insert(name.clone(), Matrix::from_vec(base.rows(), base.cols(), grad)?);
    }
    Ok(out)
}

/// Largest relative error over all entries, `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps entries whose true gradient is ~0 from dominating.
pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, ga) in a.iter() {
        let Some(gb) = b.get(name) else {
            return f64::INFINITY;
        };
        if ga.shape() != gb.shape() {
            return f64::INFINITY;
        }
        for (x, y) in ga.data().iter().zip(gb.data()) {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
