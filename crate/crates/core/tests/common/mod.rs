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

//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's math; only plain loops over `f64`.

#![allow(dead_code)]

use gkd::data::{LabeledDataset, SeedStream};
use gkd::model::{FrozenModel, MlpModel};
use gkd::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// A small config that keeps every CLI command under a few seconds.
pub const SMALL_CONFIG: &str = "\
[dataset]
classes = 8
dim = 6
per_class = 24
latent_dim = none
nuisance_sigma = none

[split]
teacher_window = 4
student_window = 4
overlap_ratio = 0.5
student_shots = none

[model]
hidden = 8
embed_dim = 6

[teacher]
epochs = 3
milestones = 2

[embedding]
epochs = 2
milestones = 1

[classifier]
epochs = 2
milestones = 1

[sweep]
ratios = 0, 0.5
seeds = 0
modes = vanilla, refilled

[analysis]
class_counts = 2, 4, 8
seeds = 0, 1
";

pub fn gaussian_matrix(s: &mut SeedStream, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| scale * s.rng().sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// A random point of the simplex with all entries positive; `spread`
/// controls how peaked it can get.
pub fn random_distribution(s: &mut SeedStream, k: usize, spread: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..k)
        .map(|_| spread * s.rng().sample::<f64, _>(StandardNormal))
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// `KL([p, 1−p] ‖ [σ(diff), 1−σ(diff)])`, written out term by term.
pub fn direct_binary_kl(p: f64, diff: f64) -> f64 {
    let q = 1.0 / (1.0 + (-diff).exp());
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

fn dist(z: &Matrix, a: usize, b: usize) -> f64 {
    z.row(a)
        .iter()
        .zip(z.row(b))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Every (anchor, positive, impostors) by exhaustive enumeration: for each
/// ordered same-class pair, scan all other members and keep the
/// different-class ones strictly farther than the positive.
pub fn brute_force_tuples(z: &Matrix, labels: &[usize], cap: Option<usize>) -> Vec<(usize, usize, Vec<usize>)> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let dp = dist(z, a, p);
            let mut imp: Vec<(f64, usize)> = Vec::new();
            for k in 0..n {
                if labels[k] != labels[a] && dist(z, a, k) > dp {
                    imp.push((dist(z, a, k), k));
                }
            }
            // Insertion sort by (distance, index).
            for i in 1..imp.len() {
                let mut j = i;
                while j > 0 && (imp[j].0 < imp[j - 1].0 || (imp[j].0 == imp[j - 1].0 && imp[j].1 < imp[j - 1].1)) {
                    imp.swap(j, j - 1);
                    j -= 1;
                }
            }
            let mut imp: Vec<usize> = imp.into_iter().map(|(_, k)| k).collect();
            if let Some(c) = cap {
                imp.truncate(c);
            }
            if !imp.is_empty() {
                out.push((a, p, imp));
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit_column(head: &Matrix, c: usize) -> Vec<f64> {
    let col: Vec<f64> = (0..head.rows()).map(|r| head.get(r, c)).collect();
    let n = dot(&col, &col).sqrt();
    col.iter().map(|v| v / n).collect()
}

/// Scores one instance at a time against the union of classes and returns
/// `[new_to_all, old_to_all, overall, harmonic]`.
pub fn score_incremental(
    student: &MlpModel,
    student_classes: &[usize],
    teacher: &FrozenModel,
    teacher_classes: &[usize],
    shared: bool,
    old_test: &LabeledDataset,
    new_test: &LabeledDataset,
) -> [f64; 4] {
    let predict = |x: &[f64]| -> usize {
        let xm = Matrix::from_vec(1, x.len(), x.to_vec()).unwrap();
        let zs = student.embed(&xm).unwrap().row(0).to_vec();
        let zt = if shared {
            zs.clone()
        } else {
            teacher.embed(&xm).unwrap().row(0).to_vec()
        };
        let mut best: Option<(f64, usize)> = None;
        let mut union: Vec<usize> = student_classes.iter().chain(teacher_classes).copied().collect();
        union.sort_unstable();
        union.dedup();
        for c in union {
            let score = if let Some(j) = student_classes.iter().position(|&s| s == c) {
                dot(&zs, &unit_column(student.head(), j))
            } else {
                let j = teacher_classes.iter().position(|&t| t == c).unwrap();
                dot(&zt, &unit_column(teacher.head(), j))
            };
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, c));
            }
        }
        best.unwrap().1
    };
    let hits = |d: &LabeledDataset| -> Vec<(usize, bool)> {
        (0..d.len())
            .map(|i| {
                let truth = d.class_ids[d.labels[i]];
                (d.source_index[i], predict(d.instances.row(i)) == truth)
            })
            .collect()
    };
    let frac = |h: &[(usize, bool)]| h.iter().filter(|x| x.1).count() as f64 / h.len() as f64;
    let old = hits(old_test);
    let new = hits(new_test);
    let mut union: Vec<(usize, bool)> = new.clone();
    for o in &old {
        if !union.iter().any(|u| u.0 == o.0) {
            union.push(*o);
        }
    }
    let (n, o) = (frac(&new), frac(&old));
    let h = if n + o == 0.0 { 0.0 } else { 2.0 * n * o / (n + o) };
    [n, o, frac(&union), h]
}

/// Removes the `seconds` column from CSV text.
pub fn strip_seconds(text: &str) -> String {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let cols: Vec<&str> = header.split(',').collect();
    let drop = cols.iter().position(|c| *c == "seconds");
    std::iter::once(header)
        .chain(lines)
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| Some(*i) != drop)
                .map(|(_, v)| v)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
