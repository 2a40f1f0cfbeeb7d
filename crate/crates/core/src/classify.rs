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

//! Classifier-stage distillation.
//!
//! The teacher's embedding induces a nearest-class-mean classifier over the
//! student's classes; its scores supervise the student's head through a KD
//! term restricted to the classes present in each mini-batch, weighted per
//! instance by the teacher's confidence.

use std::collections::BTreeSet;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{argmax, dot, kl_divergence, l2_norm, sigmoid, softmax, Matrix};

/// Per-class mean teacher embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    /// `C × d`, one center per row.
    pub centers: Matrix,
    /// `class_ids[c]` names the class of row `c`.
    pub class_ids: Vec<usize>,
}

/// Class centers `diag(1 ⊘ Yᵀ1) · Yᵀ · Φ`.
pub fn class_prototypes(teacher_embeddings: &Matrix, labels: &[usize], class_count: usize) -> Result<PrototypeSet> {
    if labels.len() != teacher_embeddings.rows() {
        return Err(Error::ShapeMismatch {
            op: "class_prototypes",
            left: teacher_embeddings.shape(),
            right: (labels.len(), 1),
        });
    }
    let mut onehot = Matrix::zeros(labels.len(), class_count);
    for (i, &l) in labels.iter().enumerate() {
        if l >= class_count {
            return Err(Error::Domain(format!("label {l} outside [0, {class_count})")));
        }
        onehot.data_mut()[i * class_count + l] = 1.0;
    }
    let counts: Vec<f64> = (0..class_count).map(|c| onehot.column(c).iter().sum()).collect();
    if let Some(c) = counts.iter().position(|&n| n == 0.0) {
        return Err(Error::MissingClass(c));
    }
    let mut centers = onehot.t_matmul(teacher_embeddings)?;
    for (c, n) in counts.iter().enumerate() {
        centers.row_mut(c).iter_mut().for_each(|v| *v /= n);
        if centers.row(c).iter().all(|v| *v == 0.0) {
            return Err(Error::Domain(format!("prototype of class {c} is the zero vector")));
        }
    }
    Ok(PrototypeSet {
        centers,
        class_ids: (0..class_count).collect(),
    })
}

impl PrototypeSet {
    pub fn class_count(&self) -> usize {
        self.centers.rows()
    }

    /// Raw similarity scores `φ_T(x)·p_c / ‖p_c‖` for every row of `teacher_embeddings` (`N × C`).
    pub fn scores(&self, teacher_embeddings: &Matrix) -> Result<Matrix> {
        teacher_embeddings.matmul_t(&self.centers.row_l2_normalize())
    }
}

/// NCM posterior for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct NcmPosterior {
    /// Unnormalized similarities, one per class.
    pub raw: Vec<f64>,
    /// Linear normalization of `raw`, or its softmax when the raw sum is not positive.
    pub posterior: Vec<f64>,
    /// The softmax fallback was used.
    pub degenerate: bool,
}

pub fn ncm_posterior(teacher_embedding: &[f64], prototypes: &PrototypeSet) -> Result<NcmPosterior> {
    if teacher_embedding.len() != prototypes.centers.cols() {
        return Err(Error::ShapeMismatch {
            op: "ncm_posterior",
            left: (1, teacher_embedding.len()),
            right: prototypes.centers.shape(),
        });
    }
    if l2_norm(teacher_embedding) == 0.0 {
        return Err(Error::Domain("zero teacher embedding".into()));
    }
    let raw: Vec<f64> = (0..prototypes.class_count())
        .map(|c| {
            let p = prototypes.centers.row(c);
            dot(teacher_embedding, p) / l2_norm(p)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let (posterior, degenerate) = if total > 0.0 {
        (raw.iter().map(|s| s / total).collect(), false)
    } else {
        (softmax(&raw, 1.0), true)
    };
    Ok(NcmPosterior {
        raw,
        posterior,
        degenerate,
    })
}

/// Sorted distinct classes of a mini-batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalClassSet(Vec<usize>);

impl LocalClassSet {
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let set: BTreeSet<usize> = labels.iter().copied().collect();
        if set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self(set.into_iter().collect()))
    }

    pub fn classes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-instance `KL(softmax(teacher scores over 𝒮) ‖ softmax(student logits over 𝒮 / τ_S))` as `N × 1`.
pub fn local_kd_rows(
    g: &mut Graph,
    student_logits: Var,
    teacher_scores: &Matrix,
    local: &LocalClassSet,
    tau_student: f64,
) -> Result<Var> {
    let logits = g.value(student_logits);
    if logits.shape() != teacher_scores.shape() {
        return Err(Error::ShapeMismatch {
            op: "local_kd",
            left: logits.shape(),
            right: teacher_scores.shape(),
        });
    }
    let student_local = g.select_cols(student_logits, local.classes())?;
    let teacher_local = g.constant(teacher_scores.select_cols(local.classes()));
    g.kl_logits(teacher_local, student_local, 1.0, tau_student)
}

/// Batch mean of [`local_kd_rows`]. A single-class batch contributes zero and is flagged.
pub fn local_kd_loss(
    g: &mut Graph,
    student_logits: Var,
    teacher_scores: &Matrix,
    local: &LocalClassSet,
    tau_student: f64,
) -> Result<crate::embed::LossTerm> {
    let rows = local_kd_rows(g, student_logits, teacher_scores, local, tau_student)?;
    let value = g.mean(rows)?;
    Ok(crate::embed::LossTerm {
        value,
        degenerate: local.len() == 1,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidHyperparameter {
            name: "lambda",
            value: lambda,
        })
    }
}

/// `2λ · σ(−CE(p̂_T, ŝ))` where `ŝ` is the arg-max of the teacher's
/// distribution over 𝒮 (ties to the lowest class).
pub fn adaptive_weight_pl(teacher_dist: &[f64], lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if teacher_dist.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let top = teacher_dist[argmax(teacher_dist)];
    let ce = -top.ln();
    Ok(2.0 * lambda * sigmoid(-ce))
}

/// `2λ · σ(−KL(p̂_T ‖ p̂_S))` over the same 𝒮.
pub fn adaptive_weight_gap(teacher_dist: &[f64], student_dist: &[f64], lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if teacher_dist.len() != student_dist.len() {
        return Err(Error::Structural(format!(
            "teacher covers {} classes, student {}",
            teacher_dist.len(),
            student_dist.len()
        )));
    }
    Ok(2.0 * lambda * sigmoid(-kl_divergence(teacher_dist, student_dist)))
}

/// How the local-KD term is weighted per instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightMode {
    /// Teacher confidence w.r.t. its own pseudo-label.
    #[default]
    Pl,
    /// Teacher–student prediction divergence.
    Gap,
    /// Uniform `λ`.
    None,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pl" => Ok(Self::Pl),
            "gap" => Ok(Self::Gap),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidConfig(format!("unknown weight_mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for WeightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pl => "pl",
            Self::Gap => "gap",
            Self::None => "none",
        })
    }
}

/// Objective node plus the detached per-instance weights that built it.
#[derive(Clone, Debug)]
pub struct Objective {
    pub value: Var,
    pub weights: Vec<f64>,
    pub degenerate: bool,
}

/// Per-instance weights for the local-KD term. Constants: no gradient flows through them.
pub fn instance_weights(
    teacher_scores: &Matrix,
    student_logits: &Matrix,
    local: &LocalClassSet,
    lambda: f64,
    tau_student: f64,
    mode: WeightMode,
) -> Result<Vec<f64>> {
    if lambda == 0.0 {
        return Ok(vec![0.0; teacher_scores.rows()]);
    }
    let t = teacher_scores.select_cols(local.classes()).softmax_rows(1.0);
    match mode {
        WeightMode::None => {
            check_lambda(lambda)?;
            Ok(vec![lambda; t.rows()])
        }
        WeightMode::Pl => (0..t.rows()).map(|r| adaptive_weight_pl(t.row(r), lambda)).collect(),
        WeightMode::Gap => {
            let s = student_logits.select_cols(local.classes()).softmax_rows(tau_student);
            (0..t.rows())
                .map(|r| adaptive_weight_gap(t.row(r), s.row(r), lambda))
                .collect()
        }
    }
}

/// Batch mean of `CE(f(x), y) + λ_i · LKD(x)`.
///
/// `teacher_scores` are raw NCM scores over all target classes for the batch rows.
pub fn refilled_objective(
    g: &mut Graph,
    student_logits: Var,
    labels: &[usize],
    teacher_scores: &Matrix,
    lambda: f64,
    tau_student: f64,
    mode: WeightMode,
) -> Result<Objective> {
    if lambda < 0.0 {
        return Err(Error::InvalidHyperparameter {
            name: "lambda",
            value: lambda,
        });
    }
    let local = LocalClassSet::from_labels(labels)?;
    let weights = instance_weights(
        teacher_scores,
        g.value(student_logits),
        &local,
        lambda,
        tau_student,
        mode,
    )?;
    let ce = g.cross_entropy_rows(student_logits, labels)?;
    let lkd = local_kd_rows(g, student_logits, teacher_scores, &local, tau_student)?;
    let w = g.constant(Matrix::column_vector(&weights)?);
    let weighted = g.mul(lkd, w)?;
    let total = g.add(ce, weighted)?;
    let value = g.mean(total)?;
    Ok(Objective {
        value,
        weights,
        degenerate: local.len() == 1,
    })
}

/// Batch mean of `CE(f(x), y) + λ · KL(s_τT(f_T(x)) ‖ s_τS(f(x)))`.
pub fn standard_kd_loss(
    g: &mut Graph,
    student_logits: Var,
    teacher_logits: &Matrix,
    labels: &[usize],
    lambda: f64,
    tau_teacher: f64,
    tau_student: f64,
) -> Result<Var> {
    let s = g.value(student_logits);
    if s.cols() != teacher_logits.cols() {
        return Err(Error::Structural(format!(
            "standard KD needs a shared class set: teacher has {} classes, student {}",
            teacher_logits.cols(),
            s.cols()
        )));
    }
    let ce = g.cross_entropy_rows(student_logits, labels)?;
    let t = g.constant(teacher_logits.clone());
    let kl = g.kl_logits(t, student_logits, tau_teacher, tau_student)?;
    let kl = g.scale(kl, lambda)?;
    let total = g.add(ce, kl)?;
    g.mean(total)
}

/// Batch mean cross-entropy.
pub fn cross_entropy_objective(g: &mut Graph, student_logits: Var, labels: &[usize]) -> Result<Var> {
    let ce = g.cross_entropy_rows(student_logits, labels)?;
    g.mean(ce)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prototype_mean() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = class_prototypes(&e, &[0, 0], 1).unwrap();
        assert_eq!(p.centers.row(0), &[0.5, 0.5]);
        let single = class_prototypes(&e, &[0, 1], 2).unwrap();
        assert_eq!(single.centers, e);
    }

    #[test]
    fn prototype_missing_class() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(class_prototypes(&e, &[0, 0], 2), Err(Error::MissingClass(1))));
    }

    #[test]
    fn posterior_single_class_and_orthogonal() {
        let p1 = PrototypeSet {
            centers: Matrix::from_rows(&[vec![2.0, 1.0]]).unwrap(),
            class_ids: vec![0],
        };
        assert_eq!(ncm_posterior(&[0.3, 0.4], &p1).unwrap().posterior, vec![1.0]);

        let p2 = PrototypeSet {
            centers: Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 5.0]]).unwrap(),
            class_ids: vec![0, 1],
        };
        let post = ncm_posterior(&[2.0, 0.0], &p2).unwrap();
        assert_eq!(post.raw, vec![2.0, 0.0]);
        assert_eq!(post.posterior, vec![1.0, 0.0]);
        assert!(!post.degenerate);
    }

    #[test]
    fn posterior_negative_sum_falls_back() {
        let p = PrototypeSet {
            centers: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            class_ids: vec![0, 1],
        };
        let post = ncm_posterior(&[-1.0, -0.5], &p).unwrap();
        assert!(post.degenerate);
        assert!((post.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(ncm_posterior(&[0.0, 0.0], &p).is_err());
    }

    #[test]
    fn pl_weight_examples() {
        assert!((adaptive_weight_pl(&[1.0, 0.0, 0.0], 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((adaptive_weight_pl(&[0.5, 0.5], 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(adaptive_weight_pl(&[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn gap_weight_examples() {
        let d = [0.2, 0.3, 0.5];
        assert!((adaptive_weight_gap(&d, &d, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            adaptive_weight_gap(&d, &[0.5, 0.5], 1.0),
            Err(Error::Structural(_))
        ));
        // KL([1,0] ‖ [1/2,1/2]) = ln 2 → 2σ(−ln 2) = 2/3
        assert!((adaptive_weight_gap(&[1.0, 0.0], &[0.5, 0.5], 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn local_set_sorted_distinct() {
        let s = LocalClassSet::from_labels(&[4, 1, 4, 2]).unwrap();
        assert_eq!(s.classes(), &[1, 2, 4]);
    }

    #[test]
    fn lkd_single_class_is_zero() {
        let mut g = Graph::new();
        let logits = g.constant(Matrix::from_rows(&[vec![0.3, 2.0], vec![-1.0, 0.5]]).unwrap());
        let teacher = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.4]]).unwrap();
        let local = LocalClassSet::from_labels(&[1, 1]).unwrap();
        let term = local_kd_loss(&mut g, logits, &teacher, &local, 1.0).unwrap();
        assert!(term.degenerate);
        assert_eq!(g.scalar(term.value), 0.0);
    }

    #[test]
    fn kd_requires_shared_classes() {
        let mut g = Graph::new();
        let logits = g.constant(Matrix::zeros(1, 3));
        let err = standard_kd_loss(&mut g, logits, &Matrix::zeros(1, 2), &[0], 1.0, 4.0, 1.0);
        assert!(matches!(err, Err(Error::Structural(_))));
    }

    #[test]
    fn ce_examples() {
        let mut g = Graph::new();
        let uniform = g.constant(Matrix::zeros(2, 5));
        let v = cross_entropy_objective(&mut g, uniform, &[0, 3]).unwrap();
        assert!((g.scalar(v) - 5f64.ln()).abs() < 1e-15);
        let confident = g.constant(Matrix::from_rows(&[vec![60.0, 0.0]]).unwrap());
        let v = cross_entropy_objective(&mut g, confident, &[0]).unwrap();
        assert!(g.scalar(v) < 1e-20);
    }
}
