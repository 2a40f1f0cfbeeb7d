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

//! Checks the tape gradient of the comparison-matching loss against
//! central finite differences on a tiny random model.
//!
//!     cargo run --example gradient_check

use gkd::data::SeedStream;
use gkd::embed::{comparison_matching_loss, mine_semihard_tuples, TupleReduction};
use gkd::gradcheck::{finite_diff_grad, max_relative_error};
use gkd::model::{MlpModel, ModelSpec};
use gkd::{Graph, Matrix, ParamSet, Result};
use rand::Rng;

fn loss(params: &ParamSet, x: &Matrix, labels: &[usize], teacher: &Matrix) -> Result<(Graph, gkd::Var)> {
    let model = MlpModel::from_params(params.clone())?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let f = model.forward(&mut g, xv)?;
    let z = g.row_l2_normalize(f.embedding)?;
    let tuples = mine_semihard_tuples(&model.embed(x)?.row_l2_normalize(), labels, None)?.tuples;
    let v = comparison_matching_loss(&mut g, teacher, z, &tuples, 2.0, 1.0, TupleReduction::Flat)?.value;
    Ok((g, v))
}

fn main() -> Result<()> {
    let spec = ModelSpec {
        input_dim: 4,
        hidden: vec![6],
        embed_dim: 5,
        classes: 3,
    };
    let mut model = MlpModel::new(&spec, 7)?;
    let mut s = SeedStream::new(7);
    // Move off the zero-bias ReLU kinks so the central difference is two-sided.
    for (name, p) in model.params_mut().iter_mut() {
        if name.ends_with("bias") {
            let values = (0..p.len()).map(|_| s.rng().random_range(-0.5..0.5)).collect();
            *p = Matrix::from_vec(p.rows(), p.cols(), values)?;
        }
    }
    let labels = vec![0, 0, 1, 1, 2, 2, 0, 1];
    let x = Matrix::from_vec(8, 4, (0..32).map(|_| s.rng().random_range(-1.0..1.0)).collect())?;
    let teacher =
        Matrix::from_vec(8, 3, (0..24).map(|_| s.rng().random_range(-1.0..1.0)).collect())?.row_l2_normalize();

    let (mut g, v) = loss(model.params(), &x, &labels, &teacher)?;
    println!("loss {:.6}", g.scalar(v));
    let tape = g.backward(v)?;
    let fd = finite_diff_grad(
        |p| {
            let (g, v) = loss(p, &x, &labels, &teacher)?;
            Ok(g.scalar(v))
        },
        model.params(),
        1e-5,
    )?;
    for (name, grad) in tape.iter() {
        println!("{name:<14} |grad| {:.4e}", grad.frobenius_norm());
    }
    println!("max relative error {:.3e}", max_relative_error(&tape, &fd, 1e-6));
    Ok(())
}
