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

//! Module-level invariants that need more than one component.

mod common;

use std::collections::BTreeSet;

use gkd::checkpoint::digest;
use gkd::classify::class_prototypes;
use gkd::config::ExperimentConfig;
use gkd::data::{make_gaussian_clusters, restrict, sample_balanced_batch, ClusterConfig, SeedStream};
use gkd::embed::{comparison_matching_loss, mine_semihard_tuples, TupleReduction};
use gkd::experiment::{prepare, sweep_overlap, BenchmarkConfig, Experiment, Method};
use gkd::model::{MlpModel, ModelSpec};
use gkd::train::train_teacher;
use gkd::{Graph, Matrix, ParamSet};

fn small() -> BenchmarkConfig {
    ExperimentConfig::parse(common::SMALL_CONFIG).unwrap().bench
}

fn cm_value(
    params: &ParamSet,
    x: &Matrix,
    teacher: &Matrix,
    tuples: &[gkd::embed::ComparisonTuple],
) -> (Graph, gkd::Var) {
    let model = MlpModel::from_params(params.clone()).unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let f = model.forward(&mut g, xv).unwrap();
    let z = g.row_l2_normalize(f.embedding).unwrap();
    let v = comparison_matching_loss(&mut g, teacher, z, tuples, 2.0, 1.0, TupleReduction::Flat)
        .unwrap()
        .value;
    (g, v)
}

#[test]
fn small_step_does_not_increase_comparison_loss() {
    let spec = ModelSpec {
        input_dim: 5,
        hidden: vec![8],
        embed_dim: 6,
        classes: 3,
    };
    for seed in 0..20 {
        let mut s = SeedStream::derived(seed, "descent");
        let model = MlpModel::new(&spec, seed).unwrap();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let x = common::gaussian_matrix(&mut s, 12, 5, 1.0);
        let teacher = common::gaussian_matrix(&mut s, 12, 4, 1.0).row_l2_normalize();
        let tuples = mine_semihard_tuples(&model.embed(&x).unwrap().row_l2_normalize(), &labels, None)
            .unwrap()
            .tuples;
        let (mut g, v) = cm_value(model.params(), &x, &teacher, &tuples);
        let before = g.scalar(v);
        let grads = g.backward(v).unwrap();
        let mut stepped = model.params().clone();
        for (name, p) in stepped.iter_mut() {
            *p = p.sub(&grads.get(name).unwrap().scale(1e-4)).unwrap();
        }
        let (g2, v2) = cm_value(&stepped, &x, &teacher, &tuples);
        assert!(
            g2.scalar(v2) <= before + 1e-12,
            "seed {seed}: {} -> {}",
            before,
            g2.scalar(v2)
        );
    }
}

#[test]
fn balanced_batches_pick_classes_uniformly() {
    let data = make_gaussian_clusters(&ClusterConfig {
        class_count: 10,
        per_class: 6,
        ..ClusterConfig::default()
    })
    .unwrap();
    let mut s = SeedStream::new(3);
    let mut counts = [0usize; 10];
    let rounds = 1000;
    for _ in 0..rounds {
        let batch = sample_balanced_batch(&data, 3, 2, &mut s).unwrap();
        let classes: BTreeSet<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        assert_eq!(classes.len(), 3);
        for c in classes {
            counts[c] += 1;
        }
    }
    let p = 0.3;
    let (mean, sd) = (rounds as f64 * p, (rounds as f64 * p * (1.0 - p)).sqrt());
    for (c, n) in counts.iter().enumerate() {
        assert!(
            (*n as f64 - mean).abs() < 3.0 * sd,
            "class {c} drawn {n} times, expected {mean} +- {sd:.1}"
        );
    }
}

#[test]
fn student_training_leaves_teacher_untouched() {
    let cfg = small();
    let data = prepare(&cfg, 1).unwrap();
    let (teacher, log) = train_teacher(
        &cfg.model_spec(data.split.teacher_classes.len()),
        &data.teacher.train,
        None,
        &cfg.teacher_optim,
        9,
    )
    .unwrap();
    let before = digest(teacher.params());
    let exp = Experiment::with_teacher(&cfg, 1, data, teacher, log).unwrap();
    for m in [Method::Refilled, Method::OneStage, Method::RefilledLkd] {
        exp.run(m).unwrap();
    }
    assert_eq!(digest(exp.teacher.params()), before);
}

#[test]
fn prototypes_match_per_class_loop() {
    let mut s = SeedStream::new(5);
    let e = common::gaussian_matrix(&mut s, 30, 4, 1.0).row_l2_normalize();
    let labels: Vec<usize> = (0..30).map(|i| (i * 7) % 5).collect();
    let p = class_prototypes(&e, &labels, 5).unwrap();
    for c in 0..5 {
        let rows: Vec<usize> = (0..30).filter(|&i| labels[i] == c).collect();
        for d in 0..4 {
            let mut acc = 0.0;
            for &i in &rows {
                acc += e.get(i, d);
            }
            assert!((p.centers.get(c, d) - acc / rows.len() as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn restrict_partitions_the_selected_classes() {
    let data = make_gaussian_clusters(&ClusterConfig {
        class_count: 6,
        per_class: 20,
        ..ClusterConfig::default()
    })
    .unwrap();
    let a = restrict(&data, &[0, 2, 4], 0.7, 1).unwrap();
    let b = restrict(&data, &[1, 3], 0.7, 1).unwrap();
    let src = |r: &gkd::data::Restricted| -> BTreeSet<usize> {
        r.train
            .source_index
            .iter()
            .chain(&r.test.source_index)
            .copied()
            .collect()
    };
    let expected: BTreeSet<usize> = (0..data.len())
        .filter(|&i| [0, 2, 4].contains(&data.labels[i]))
        .collect();
    assert_eq!(src(&a), expected);
    assert_eq!(a.train.len() + a.test.len(), expected.len());
    assert!(src(&a).is_disjoint(&src(&b)));
}

#[test]
fn vanishing_noise_makes_nearest_neighbor_exact() {
    let data = make_gaussian_clusters(&ClusterConfig {
        noise_sigma: 1e-6,
        per_class: 10,
        ..ClusterConfig::default()
    })
    .unwrap();
    let all: Vec<usize> = (0..data.class_count).collect();
    let r = restrict(&data, &all, 0.7, 2).unwrap();
    for i in 0..r.test.len() {
        let q = r.test.instances.row(i);
        let nearest = (0..r.train.len())
            .min_by(|&a, &b| {
                let d = |j: usize| {
                    r.train
                        .instances
                        .row(j)
                        .iter()
                        .zip(q)
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                };
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        assert_eq!(r.train.labels[nearest], r.test.labels[i]);
    }
}

#[test]
fn one_ratio_one_seed_sweep_gives_one_row() {
    let rows = sweep_overlap(&small(), &[0.5], &[0], &[Method::Vanilla]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].ratio, rows[0].seed, rows[0].method), (0.5, 0, Method::Vanilla));
}
