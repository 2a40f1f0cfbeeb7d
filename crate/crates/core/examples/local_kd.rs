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

//! Builds class prototypes from a teacher embedding, scores a batch with
//! them and evaluates the weighted local-KD objective in every weight mode.

use gkd::classify::{class_prototypes, instance_weights, refilled_objective, LocalClassSet, WeightMode};
use gkd::model::{FrozenModel, MlpModel, ModelSpec};
use gkd::{Graph, Matrix, Result};

fn main() -> Result<()> {
    let x = Matrix::from_rows(&[
        vec![1.0, 0.2, 0.0],
        vec![0.9, 0.1, 0.1],
        vec![0.0, 1.0, 0.3],
        vec![0.1, 0.8, 0.2],
        vec![0.2, 0.1, 1.0],
        vec![0.0, 0.3, 0.9],
        vec![0.5, 0.5, 0.1],
        vec![0.4, 0.6, 0.0],
    ])?;
    let all_labels = vec![0, 0, 1, 1, 3, 3, 2, 2];
    let teacher = FrozenModel::new(MlpModel::new(
        &ModelSpec {
            input_dim: 3,
            hidden: vec![8],
            embed_dim: 4,
            classes: 5,
        },
        1,
    )?);
    let student = MlpModel::new(
        &ModelSpec {
            input_dim: 3,
            hidden: vec![8],
            embed_dim: 4,
            classes: 4,
        },
        2,
    )?;

    // Prototypes cover all four student classes; the batch holds only three.
    let protos = class_prototypes(&teacher.embed_normalized(&x)?, &all_labels, 4)?;
    let x = x.select_rows(&[0, 1, 2, 3, 4, 5]);
    let labels = all_labels[..6].to_vec();
    let scores = protos.scores(&teacher.embed_normalized(&x)?)?;
    let local = LocalClassSet::from_labels(&labels)?;
    println!("local classes {:?}", local.classes());

    for mode in [WeightMode::Pl, WeightMode::Gap, WeightMode::None] {
        let w = instance_weights(&scores, &student.logits(&x)?, &local, 1.0, 1.0, mode)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let f = student.forward(&mut g, xv)?;
        let obj = refilled_objective(&mut g, f.logits, &labels, &scores, 1.0, 1.0, mode)?;
        let w: Vec<String> = w.iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "{mode:<4} objective {:.5} weights [{}]",
            g.scalar(obj.value),
            w.join(" ")
        );
    }
    Ok(())
}
