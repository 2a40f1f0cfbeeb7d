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

//! Embedding-stage distillation: semi-hard tuple mining, tuple probabilities
//! and the comparison-matching loss, plus the closed-form decompositions of
//! that loss into a logistic/contrastive part and a rectification part.

use std::path::Path;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{kl_divergence, log_sum_exp, sigmoid, softmax, Matrix};

/// An anchor, one same-class positive and `K ≥ 1` different-class impostors,
/// all as batch indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComparisonTuple {
    pub anchor: usize,
    pub positive: usize,
    pub impostors: Vec<usize>,
}

impl ComparisonTuple {
    /// Batch indices in probability order: positive first, then impostors.
    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.positive).chain(self.impostors.iter().copied())
    }
}

/// Output of [`mine_semihard_tuples`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinedTuples {
    pub tuples: Vec<ComparisonTuple>,
    /// Set when the batch had no same-class pair at all.
    pub no_positive_pair: bool,
}

/// Builds one tuple per ordered (anchor, positive) pair of same-class batch
/// members. Impostors are the different-class members strictly farther from
/// the anchor than the positive, sorted by distance (ties by index) and
/// truncated to `cap` when given. Pairs without any impostor are skipped.
///
/// `embeddings` are expected to be ℓ2-normalized rows.
pub fn mine_semihard_tuples(embeddings: &Matrix, labels: &[usize], cap: Option<usize>) -> Result<MinedTuples> {
    if labels.len() != embeddings.rows() {
        return Err(Error::ShapeMismatch {
            op: "mine_semihard_tuples",
            left: embeddings.shape(),
            right: (labels.len(), 1),
        });
    }
    if cap == Some(0) {
        return Err(Error::InvalidHyperparameter {
            name: "max_impostors",
            value: 0.0,
        });
    }
    let d = embeddings.pairwise_distances();
    let n = labels.len();
    let mut out = MinedTuples::default();
    let mut any_pair = false;
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            any_pair = true;
            let dap = d.get(a, p);
            let mut impostors: Vec<usize> = (0..n)
                .filter(|&k| labels[k] != labels[a] && d.get(a, k) > dap)
                .collect();
            if impostors.is_empty() {
                continue;
            }
            impostors.sort_by(|&x, &y| d.get(a, x).total_cmp(&d.get(a, y)).then(x.cmp(&y)));
            if let Some(k) = cap {
                impostors.truncate(k);
            }
            out.tuples.push(ComparisonTuple {
                anchor: a,
                positive: p,
                impostors,
            });
        }
    }
    out.no_positive_pair = !any_pair;
    Ok(out)
}

/// Probability vector over `[positive, impostor_1, …, impostor_K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TupleProbability {
    pub probs: Vec<f64>,
}

fn row_distance(m: &Matrix, i: usize, j: usize) -> f64 {
    if i == j {
        return 0.0;
    }
    let (a, b) = (m.row(i), m.row(j));
    let d2 = crate::tensor::dot(a, a) + crate::tensor::dot(b, b) - 2.0 * crate::tensor::dot(a, b);
    d2.max(0.0).sqrt()
}

/// Tempered softmax over the negated anchor-to-candidate distances.
pub fn tuple_probability(embeddings: &Matrix, tuple: &ComparisonTuple, tau: f64) -> Result<TupleProbability> {
    check_tau(tau)?;
    let neg: Vec<f64> = tuple
        .candidates()
        .map(|c| -row_distance(embeddings, tuple.anchor, c))
        .collect();
    Ok(TupleProbability {
        probs: softmax(&neg, tau),
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidHyperparameter {
            name: "temperature",
            value: tau,
        })
    }
}

/// How per-tuple divergences are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TupleReduction {
    /// Flat mean over every tuple.
    #[default]
    Flat,
    /// Mean over tuples of each anchor, then mean over anchors.
    PerAnchor,
}

/// A loss node together with a degeneracy flag.
#[derive(Clone, Copy, Debug)]
pub struct LossTerm {
    pub value: Var,
    /// The term had nothing to average and contributes exactly zero.
    pub degenerate: bool,
}

/// Mean over tuples of `KL(p_i(φ_T) ‖ p_i(φ))`.
///
/// `teacher_embeddings` are constants (normalized); `student_embeddings`
/// is the normalized student node. Only the student receives gradient.
pub fn comparison_matching_loss(
    g: &mut Graph,
    teacher_embeddings: &Matrix,
    student_embeddings: Var,
    tuples: &[ComparisonTuple],
    tau_teacher: f64,
    tau_student: f64,
    reduction: TupleReduction,
) -> Result<LossTerm> {
    check_tau(tau_teacher)?;
    check_tau(tau_student)?;
    let n = g.value(student_embeddings).rows();
    if teacher_embeddings.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "comparison_matching_loss",
            left: teacher_embeddings.shape(),
            right: g.value(student_embeddings).shape(),
        });
    }
    if tuples.is_empty() {
        let zero = g.constant(Matrix::scalar(0.0));
        return Ok(LossTerm {
            value: zero,
            degenerate: true,
        });
    }

    let weights = tuple_weights(tuples, n, reduction);
    let teacher_d = teacher_embeddings.pairwise_distances();
    let student_d = g.pairwise_dist(student_embeddings)?;
    let mut terms = Vec::with_capacity(tuples.len());
    for (t, w) in tuples.iter().zip(weights) {
        let flat: Vec<usize> = t.candidates().map(|c| t.anchor * n + c).collect();
        let teacher_logits: Vec<f64> = t.candidates().map(|c| -teacher_d.get(t.anchor, c)).collect();
        let teacher_row = g.constant(Matrix::row_vector(&teacher_logits)?);
        let dist = g.gather(student_d, &flat)?;
        let student_row = g.scale(dist, -1.0)?;
        let kl = g.kl_logits(teacher_row, student_row, tau_teacher, tau_student)?;
        terms.push(g.scale(kl, w)?);
    }
    let total = g.add_n(&terms)?;
    Ok(LossTerm {
        value: total,
        degenerate: false,
    })
}

fn tuple_weights(tuples: &[ComparisonTuple], n: usize, reduction: TupleReduction) -> Vec<f64> {
    match reduction {
        TupleReduction::Flat => vec![1.0 / tuples.len() as f64; tuples.len()],
        TupleReduction::PerAnchor => {
            let mut per_anchor = vec![0usize; n];
            tuples.iter().for_each(|t| per_anchor[t.anchor] += 1);
            let anchors = per_anchor.iter().filter(|&&c| c > 0).count() as f64;
            tuples
                .iter()
                .map(|t| 1.0 / (anchors * per_anchor[t.anchor] as f64))
                .collect()
        }
    }
}

/// The single-impostor split of `KL(p ‖ σ(Diff))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct K1Decomposition {
    /// `(1 − p) · Diff`
    pub rectification: f64,
    /// `ln(1 + e^(−Diff))`
    pub logistic: f64,
    /// `p ln p + (1 − p) ln(1 − p)`; does not depend on the student.
    pub entropy_constant: f64,
}

impl K1Decomposition {
    pub fn total(&self) -> f64 {
        self.rectification + self.logistic + self.entropy_constant
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Splits the K = 1 comparison-matching divergence, with `Diff = dist_neg − dist_pos`.
pub fn kl_decomposition_k1(teacher_prob: f64, dist_pos: f64, dist_neg: f64) -> Result<K1Decomposition> {
    if !(teacher_prob > 0.0 && teacher_prob < 1.0) {
        return Err(Error::Domain(format!(
            "teacher probability {teacher_prob} outside (0, 1)"
        )));
    }
    if !(dist_pos >= 0.0 && dist_neg >= 0.0) {
        return Err(Error::Domain("distances must be non-negative".into()));
    }
    let p = teacher_prob;
    let diff = dist_neg - dist_pos;
    Ok(K1Decomposition {
        rectification: (1.0 - p) * diff,
        logistic: softplus(-diff),
        entropy_constant: p * p.ln() + (1.0 - p) * (1.0 - p).ln(),
    })
}

/// Direct two-term `KL(p ‖ σ(Diff))`.
pub fn kl_binary(p: f64, diff: f64) -> f64 {
    let q = sigmoid(diff);
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Multi-impostor split at unit temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiKDecomposition {
    /// `KL(p_T ‖ p) − KL(e₀ ‖ p)`
    pub rectification: f64,
    /// `ln(1 + Σ_k exp(D(a,p) − D(a,n_k)))`
    pub contrastive: f64,
}

fn check_simplex(probs: &[f64]) -> Result<()> {
    let s: f64 = probs.iter().sum();
    if probs.iter().any(|p| p.is_nan() || *p < 0.0) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "teacher probabilities not on the simplex (sum {s})"
        )));
    }
    Ok(())
}

/// `distances = [D(a,p), D(a,n_1), …, D(a,n_K)]`, student probabilities
/// `p = softmax(−distances)`.
pub fn kl_decomposition_multik(teacher_probs: &[f64], distances: &[f64]) -> Result<MultiKDecomposition> {
    check_simplex(teacher_probs)?;
    if teacher_probs.len() < 2 || teacher_probs.len() != distances.len() {
        return Err(Error::Domain(format!(
            "need K+1 ≥ 2 matching entries, got {} probabilities and {} distances",
            teacher_probs.len(),
            distances.len()
        )));
    }
    let contrastive = softplus_sum(distances);
    let neg: Vec<f64> = distances.iter().map(|d| -d).collect();
    let student = softmax(&neg, 1.0);
    let kl = kl_divergence(teacher_probs, &student);
    Ok(MultiKDecomposition {
        rectification: kl - contrastive,
        contrastive,
    })
}

/// `ln(1 + Σ_k exp(d_0 − d_k))` via log-sum-exp.
fn softplus_sum(distances: &[f64]) -> f64 {
    let shifted: Vec<f64> = std::iter::once(0.0)
        .chain(distances[1..].iter().map(|d| distances[0] - d))
        .collect();
    log_sum_exp(&shifted, 1.0)
}

/// Writes `anchor,positive,impostor_list` with `;`-separated impostors.
pub fn write_tuples_csv(path: &Path, tuples: &[ComparisonTuple]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["anchor", "positive", "impostor_list"])?;
    for t in tuples {
        let imps: Vec<String> = t.impostors.iter().map(usize::to_string).collect();
        w.write_record([t.anchor.to_string(), t.positive.to_string(), imps.join(";")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap().row_l2_normalize()
    }

    #[test]
    fn separated_clusters_admit_every_negative() {
        let e = emb(&[vec![1.0, 0.05], vec![1.0, -0.05], vec![-1.0, 0.05], vec![-1.0, -0.05]]);
        let mined = mine_semihard_tuples(&e, &[0, 0, 1, 1], None).unwrap();
        assert_eq!(mined.tuples.len(), 4);
        for t in &mined.tuples {
            assert_eq!(t.impostors.len(), 2);
        }
    }

    #[test]
    fn closer_negative_is_excluded() {
        // anchor 0, positive 1 far away, negative 2 close, negative 3 farther than the positive
        let e = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.5, 0.0], vec![3.0, 0.0]]).unwrap();
        let mined = mine_semihard_tuples(&e, &[0, 0, 1, 2], None).unwrap();
        let t = mined.tuples.iter().find(|t| t.anchor == 0 && t.positive == 1).unwrap();
        assert_eq!(t.impostors, vec![3]);
    }

    #[test]
    fn cap_keeps_nearest() {
        let e = Matrix::from_rows(&[vec![0.0], vec![0.1], vec![3.0], vec![1.0], vec![2.0]]).unwrap();
        let mined = mine_semihard_tuples(&e, &[0, 0, 1, 2, 3], Some(2)).unwrap();
        let t = mined.tuples.iter().find(|t| t.anchor == 0).unwrap();
        assert_eq!(t.impostors, vec![3, 4]);
    }

    #[test]
    fn no_pair_sets_flag() {
        let e = emb(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mined = mine_semihard_tuples(&e, &[0, 1], None).unwrap();
        assert!(mined.tuples.is_empty());
        assert!(mined.no_positive_pair);
    }

    #[test]
    fn equal_distances_are_uniform() {
        let e = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let t = ComparisonTuple {
            anchor: 0,
            positive: 1,
            impostors: vec![2, 3],
        };
        let p = tuple_probability(&e, &t, 1.0).unwrap();
        for v in p.probs {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k1_ln2_example() {
        // distances [0, ln 2] → softmax([0, −ln 2]) = [2/3, 1/3]
        let e = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![std::f64::consts::LN_2]]).unwrap();
        let t = ComparisonTuple {
            anchor: 0,
            positive: 1,
            impostors: vec![2],
        };
        let p = tuple_probability(&e, &t, 1.0).unwrap();
        assert!((p.probs[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.probs[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(tuple_probability(&e, &t, 0.0).is_err());
    }

    #[test]
    fn k1_symmetric_case() {
        let d = kl_decomposition_k1(0.5, 0.7, 0.7).unwrap();
        assert!((d.logistic - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(d.rectification, 0.0);
        assert!((d.entropy_constant + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(d.total().abs() < 1e-15);
    }

    #[test]
    fn k1_domain() {
        assert!(kl_decomposition_k1(0.0, 0.1, 0.2).is_err());
        assert!(kl_decomposition_k1(1.0, 0.1, 0.2).is_err());
        assert!(kl_decomposition_k1(0.5, -0.1, 0.2).is_err());
    }

    #[test]
    fn multik_rejects_off_simplex() {
        assert!(kl_decomposition_multik(&[0.5, 0.6], &[0.1, 0.2]).is_err());
        assert!(kl_decomposition_multik(&[1.0], &[0.1]).is_err());
    }

    #[test]
    fn empty_tuples_give_flagged_zero() {
        let mut g = Graph::new();
        let s = g.constant(Matrix::zeros(2, 2));
        let term =
            comparison_matching_loss(&mut g, &Matrix::zeros(2, 2), s, &[], 2.0, 1.0, TupleReduction::Flat).unwrap();
        assert!(term.degenerate);
        assert_eq!(g.scalar(term.value), 0.0);
    }
}
