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

//! Metrics and analysis studies: accuracy, nearest-class-mean accuracy,
//! harmonic mean, the joint incremental classifier, instance-weight AUC and
//! the gradient-norm comparison of CE against KD and local KD.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;

use crate::autodiff::Graph;
use crate::classify::{adaptive_weight_pl, class_prototypes, cross_entropy_objective, local_kd_loss, LocalClassSet};
use crate::data::{sample_balanced_from, LabeledDataset, SeedStream};
use crate::error::{Error, Result};
use crate::model::{FrozenModel, MlpModel, ModelSpec, HEAD};
use crate::tensor::{argmax, Matrix};

/// Anything that maps instance rows to class indices.
pub trait Predictor {
    fn predict(&self, x: &Matrix) -> Result<Vec<usize>>;
}

impl Predictor for MlpModel {
    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        MlpModel::predict(self, x)
    }
}

impl Predictor for FrozenModel {
    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        FrozenModel::predict(self, x)
    }
}

fn fraction_correct(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Fraction of rows whose arg-max prediction equals the label.
pub fn accuracy<P: Predictor + ?Sized>(model: &P, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(fraction_correct(&model.predict(&data.instances)?, &data.labels))
}

/// Nearest-center accuracy: centers are per-class means of `embed(train)`,
/// test rows go to the center at smallest Euclidean distance.
pub fn ncm_accuracy(
    embed: impl Fn(&Matrix) -> Result<Matrix>,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<f64> {
    if test.is_empty() || train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let centers = class_centers(&embed(&train.instances)?, &train.labels, train.class_count)?;
    if let Some(&l) = test.labels.iter().find(|&&l| l >= train.class_count) {
        return Err(Error::MissingClass(l));
    }
    let z = embed(&test.instances)?;
    let pred: Vec<usize> = (0..z.rows()).map(|i| nearest(z.row(i), &centers)).collect();
    Ok(fraction_correct(&pred, &test.labels))
}

fn class_centers(emb: &Matrix, labels: &[usize], class_count: usize) -> Result<Matrix> {
    let mut sums = Matrix::zeros(class_count, emb.cols());
    let mut counts = vec![0usize; class_count];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        sums.row_mut(l).iter_mut().zip(emb.row(i)).for_each(|(s, v)| *s += v);
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingClass(c));
    }
    for (c, n) in counts.iter().enumerate() {
        sums.row_mut(c).iter_mut().for_each(|s| *s /= *n as f64);
    }
    Ok(sums)
}

fn nearest(x: &[f64], centers: &Matrix) -> usize {
    let neg: Vec<f64> = (0..centers.rows())
        .map(|c| {
            -x.iter()
                .zip(centers.row(c))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .collect();
    argmax(&neg)
}

/// Whether accuracies are fractions or percentages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccuracyScale {
    Fraction,
    Percent,
}

/// `2ab / (a + b)`, zero when both are zero. The scale is inferred: both in
/// `[0, 1]` is read as fractions, both in `[0, 100]` with at least one above 1
/// as percentages.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    let scale = match (a <= 1.0, b <= 1.0) {
        (true, true) => AccuracyScale::Fraction,
        (false, false) => AccuracyScale::Percent,
        _ => {
            return Err(Error::Domain(format!(
                "accuracies {a} and {b} mix fraction and percent scales"
            )))
        }
    };
    harmonic_mean_scaled(a, b, scale)
}

pub fn harmonic_mean_scaled(a: f64, b: f64, scale: AccuracyScale) -> Result<f64> {
    let top = match scale {
        AccuracyScale::Fraction => 1.0,
        AccuracyScale::Percent => 100.0,
    };
    for v in [a, b] {
        if !(0.0..=top).contains(&v) {
            return Err(Error::Domain(format!("accuracy {v} outside [0, {top}]")));
        }
    }
    if a + b == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a * b / (a + b))
}

/// Which embedding scores the teacher's columns in a [`JointClassifier`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JointMode {
    /// Teacher columns score the teacher's own embedding.
    #[default]
    OwnEmbedding,
    /// Every column scores the student's embedding (dimensions must agree).
    SharedStudentEmbedding,
}

/// Student and teacher heads concatenated over the union of their classes.
///
/// Classes the student knows use the student's column; classes only the
/// teacher knows use the teacher's. Every column is ℓ2-normalized; heads
/// carry no bias.
#[derive(Clone, Debug)]
pub struct JointClassifier {
    student: MlpModel,
    teacher: FrozenModel,
    /// Sorted union of original class ids.
    pub classes: Vec<usize>,
    student_head: Matrix,
    teacher_head: Matrix,
    /// Union position of each student column.
    student_slots: Vec<usize>,
    /// Union position of each retained teacher column.
    teacher_slots: Vec<usize>,
    mode: JointMode,
}

/// The four incremental criteria, as fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncrementalReport {
    /// Student-class test instances classified over the union.
    pub new_to_all: f64,
    /// Teacher-class test instances classified over the union.
    pub old_to_all: f64,
    /// Every distinct test instance of either set.
    pub overall: f64,
    pub harmonic: f64,
}

fn check_map(map: &[usize], who: &str) -> Result<()> {
    let mut sorted = map.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != map.len() {
        return Err(Error::Structural(format!("{who} class map repeats a class")));
    }
    Ok(())
}

impl JointClassifier {
    pub fn new(
        student: &MlpModel,
        student_classes: &[usize],
        teacher: &FrozenModel,
        teacher_classes: &[usize],
        mode: JointMode,
    ) -> Result<Self> {
        check_map(student_classes, "student")?;
        check_map(teacher_classes, "teacher")?;
        if student_classes.len() != student.class_count() || teacher_classes.len() != teacher.class_count() {
            return Err(Error::Structural("class map length differs from head width".into()));
        }
        if mode == JointMode::SharedStudentEmbedding && student.embed_dim() != teacher.embed_dim() {
            return Err(Error::Structural(format!(
                "shared embedding needs equal widths, got {} and {}",
                student.embed_dim(),
                teacher.embed_dim()
            )));
        }
        let mut classes: Vec<usize> = student_classes.iter().chain(teacher_classes).copied().collect();
        classes.sort_unstable();
        classes.dedup();
        let slot = |c: &usize| classes.binary_search(c).unwrap();
        let student_slots: Vec<usize> = student_classes.iter().map(slot).collect();
        let kept: Vec<usize> = (0..teacher_classes.len())
            .filter(|&j| !student_classes.contains(&teacher_classes[j]))
            .collect();
        let teacher_slots: Vec<usize> = kept.iter().map(|&j| slot(&teacher_classes[j])).collect();
        Ok(Self {
            student: student.clone(),
            teacher: teacher.clone(),
            student_head: student.head().col_l2_normalize(),
            teacher_head: teacher.head().select_cols(&kept).col_l2_normalize(),
            student_slots,
            teacher_slots,
            classes,
            mode,
        })
    }

    /// Every normalized column with its original class id, in union order.
    pub fn columns(&self) -> Vec<(usize, Vec<f64>)> {
        let mut out: Vec<(usize, Vec<f64>)> = self
            .student_slots
            .iter()
            .enumerate()
            .map(|(j, &s)| (self.classes[s], self.student_head.column(j)))
            .chain(
                self.teacher_slots
                    .iter()
                    .enumerate()
                    .map(|(j, &s)| (self.classes[s], self.teacher_head.column(j))),
            )
            .collect();
        out.sort_by_key(|(c, _)| *c);
        out
    }

    /// Union-space scores, one column per entry of `classes`.
    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        let zs = self.student.embed(x)?;
        let s = zs.matmul(&self.student_head)?;
        let t = match self.mode {
            JointMode::OwnEmbedding => self.teacher.embed(x)?.matmul(&self.teacher_head)?,
            JointMode::SharedStudentEmbedding => zs.matmul(&self.teacher_head)?,
        };
        let mut out = Matrix::zeros(x.rows(), self.classes.len());
        for i in 0..x.rows() {
            for (j, &slot) in self.student_slots.iter().enumerate() {
                out.set(i, slot, s.get(i, j))?;
            }
            for (j, &slot) in self.teacher_slots.iter().enumerate() {
                out.set(i, slot, t.get(i, j))?;
            }
        }
        Ok(out)
    }

    /// Predicted original class ids.
    pub fn predict_ids(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self
            .scores(x)?
            .argmax_rows()
            .into_iter()
            .map(|p| self.classes[p])
            .collect())
    }

    /// `old_test` holds teacher-class instances and `new_test` student-class
    /// instances; labels are resolved through each set's `class_ids`.
    /// Instances present in both (same `source_index`) count once overall.
    pub fn evaluate(&self, old_test: &LabeledDataset, new_test: &LabeledDataset) -> Result<IncrementalReport> {
        if old_test.is_empty() || new_test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let old_pred = self.predict_ids(&old_test.instances)?;
        let new_pred = self.predict_ids(&new_test.instances)?;
        let old_truth = old_test.original_labels();
        let new_truth = new_test.original_labels();
        let old_to_all = fraction_correct(&old_pred, &old_truth);
        let new_to_all = fraction_correct(&new_pred, &new_truth);
        let mut seen = std::collections::BTreeMap::new();
        for (k, &src) in new_test.source_index.iter().enumerate() {
            seen.insert(src, new_pred[k] == new_truth[k]);
        }
        for (k, &src) in old_test.source_index.iter().enumerate() {
            seen.entry(src).or_insert(old_pred[k] == old_truth[k]);
        }
        let overall = seen.values().filter(|&&hit| hit).count() as f64 / seen.len() as f64;
        Ok(IncrementalReport {
            new_to_all,
            old_to_all,
            overall,
            harmonic: harmonic_mean_scaled(old_to_all, new_to_all, AccuracyScale::Fraction)?,
        })
    }
}

/// Area under the ROC curve of `scores` for separating `flags == true`
/// from `false`, via the rank-sum statistic with tied ranks averaged.
pub fn auc(scores: &[f64], flags: &[bool]) -> Result<f64> {
    if scores.len() != flags.len() {
        return Err(Error::Structural("scores and flags differ in length".into()));
    }
    let pos = flags.iter().filter(|&&f| f).count();
    let neg = flags.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AucUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| flags[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

pub const HISTOGRAM_BIN: f64 = 0.05;

/// Per-instance weights and their seen-versus-unseen separation.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightStudy {
    pub weights: Vec<f64>,
    pub seen: Vec<bool>,
    pub auc: f64,
    /// Counts over bins of width [`HISTOGRAM_BIN`] covering `(0, λ]`: `(seen, unseen)`.
    pub histogram: Vec<(usize, usize)>,
}

impl WeightStudy {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "lambda_i,seen_flag")?;
        for (w, s) in self.weights.iter().zip(&self.seen) {
            writeln!(f, "{w},{}", u8::from(*s))?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Confidence weights `λ_i` computed over every target class (not a
/// mini-batch subset) from raw teacher NCM scores, scored by [`auc`].
pub fn weight_study(teacher_scores: &Matrix, seen: &[bool], lambda: f64) -> Result<WeightStudy> {
    if teacher_scores.rows() != seen.len() {
        return Err(Error::Structural("one seen flag per instance required".into()));
    }
    let probs = teacher_scores.softmax_rows(1.0);
    let weights = (0..probs.rows())
        .map(|i| adaptive_weight_pl(probs.row(i), lambda))
        .collect::<Result<Vec<_>>>()?;
    let auc = auc(&weights, seen)?;
    let bins = ((lambda / HISTOGRAM_BIN).ceil() as usize).max(1);
    let mut histogram = vec![(0, 0); bins];
    for (w, s) in weights.iter().zip(seen) {
        let b = ((w / HISTOGRAM_BIN).ceil() as usize).clamp(1, bins) - 1;
        if *s {
            histogram[b].0 += 1;
        } else {
            histogram[b].1 += 1;
        }
    }
    Ok(WeightStudy {
        weights,
        seen: seen.to_vec(),
        auc,
        histogram,
    })
}

/// Settings of [`gradient_norm_study`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientStudyConfig {
    pub class_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Upper bound on classes per batch; a batch holds `min(c, this)` classes.
    pub classes_per_batch: usize,
    pub instances_per_class: usize,
    pub lambda: f64,
    pub kd_tau: f64,
    pub tau_student: f64,
}

impl Default for GradientStudyConfig {
    fn default() -> Self {
        Self {
            class_counts: vec![2, 4, 8, 12, 16, 20],
            seeds: (0..5).collect(),
            classes_per_batch: 8,
            instances_per_class: 4,
            lambda: 1.0,
            kd_tau: 4.0,
            tau_student: 1.0,
        }
    }
}

/// Mean-over-classes head-gradient differences, averaged over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientNormReport {
    pub class_counts: Vec<usize>,
    pub kd_norm_diff: Vec<f64>,
    pub lkd_norm_diff: Vec<f64>,
}

impl GradientNormReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "class_count,kd_norm_diff,lkd_norm_diff")?;
        for i in 0..self.class_counts.len() {
            writeln!(
                f,
                "{},{},{}",
                self.class_counts[i], self.kd_norm_diff[i], self.lkd_norm_diff[i]
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

fn mean_column_norm(a: &Matrix, b: &Matrix) -> f64 {
    let d = a.sub(b).expect("same head shape");
    (0..d.cols())
        .map(|c| d.column(c).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / d.cols() as f64
}

/// Head gradients of one freshly initialized student on one batch:
/// `(∇CE, ∇(CE + λ·KD), ∇(CE + λ·LKD))`.
fn head_gradients(
    student: &MlpModel,
    x: &Matrix,
    labels: &[usize],
    teacher_logits: &Matrix,
    teacher_scores: &Matrix,
    cfg: &GradientStudyConfig,
) -> Result<[Matrix; 3]> {
    let mut out = Vec::with_capacity(3);
    for which in 0..3 {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let f = student.forward(&mut g, xv)?;
        let ce = cross_entropy_objective(&mut g, f.logits, labels)?;
        let loss = match which {
            0 => ce,
            1 => {
                let t = g.constant(teacher_logits.clone());
                let kl = g.kl_logits(t, f.logits, cfg.kd_tau, cfg.tau_student)?;
                let kl = g.mean(kl)?;
                let kl = g.scale(kl, cfg.lambda)?;
                g.add(ce, kl)?
            }
            _ => {
                let local = LocalClassSet::from_labels(labels)?;
                let lkd = local_kd_loss(&mut g, f.logits, teacher_scores, &local, cfg.tau_student)?;
                let lkd = g.scale(lkd.value, cfg.lambda)?;
                g.add(ce, lkd)?
            }
        };
        let grads = g.backward(loss)?;
        out.push(grads.get(HEAD).expect("head registered").clone());
    }
    Ok([out.remove(0), out.remove(0), out.remove(0)])
}

/// For every class count `c`: sample `c` classes of `data`, restrict the
/// teacher's logits to them for KD, build NCM prototypes from the teacher's
/// embedding for local KD, initialize a fresh student with a `c`-way head and
/// compare head gradients on one balanced batch. All gradients come from the
/// tape.
pub fn gradient_norm_study(
    data: &LabeledDataset,
    teacher: &FrozenModel,
    student_spec: &ModelSpec,
    cfg: &GradientStudyConfig,
) -> Result<GradientNormReport> {
    if cfg.class_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "class count grid must be strictly increasing".into(),
        ));
    }
    if let Some(&c) = cfg.class_counts.iter().find(|&&c| c < 2 || c > data.class_count) {
        return Err(Error::InvalidConfig(format!(
            "class count {c} outside [2, {}]",
            data.class_count
        )));
    }
    if teacher.class_count() != data.class_count {
        return Err(Error::Structural(
            "teacher must cover every class of the study data".into(),
        ));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("gradient study needs at least one seed".into()));
    }
    let by_class = data.class_indices();
    let mut kd = Vec::new();
    let mut lkd = Vec::new();
    for &c in &cfg.class_counts {
        let (mut kd_sum, mut lkd_sum) = (0.0, 0.0);
        for &seed in &cfg.seeds {
            let mut stream = SeedStream::derived(seed, &format!("gradient-study/{c}"));
            let mut chosen = sample(stream.rng(), data.class_count, c).into_vec();
            chosen.sort_unstable();
            let local_by_class: Vec<Vec<usize>> = chosen.iter().map(|&k| by_class[k].clone()).collect();
            let mut relabel = vec![usize::MAX; data.class_count];
            chosen.iter().enumerate().for_each(|(j, &k)| relabel[k] = j);

            let all_rows: Vec<usize> = local_by_class.iter().flatten().copied().collect();
            let all_labels: Vec<usize> = all_rows.iter().map(|&i| relabel[data.labels[i]]).collect();
            let emb = teacher.embed_normalized(&data.instances.select_rows(&all_rows))?;
            let protos = class_prototypes(&emb, &all_labels, c)?;

            let batch = sample_balanced_from(
                &local_by_class,
                c.min(cfg.classes_per_batch),
                cfg.instances_per_class,
                &mut stream,
            )?;
            let x = data.instances.select_rows(&batch);
            let labels: Vec<usize> = batch.iter().map(|&i| relabel[data.labels[i]]).collect();
            let teacher_logits = teacher.logits(&x)?.select_cols(&chosen);
            let teacher_scores = protos.scores(&teacher.embed_normalized(&x)?)?;

            let spec = ModelSpec {
                classes: c,
                ..student_spec.clone()
            };
            let student = MlpModel::new(&spec, seed)?;
            let [g_ce, g_kd, g_lkd] = head_gradients(&student, &x, &labels, &teacher_logits, &teacher_scores, cfg)?;
            kd_sum += mean_column_norm(&g_ce, &g_kd);
            lkd_sum += mean_column_norm(&g_ce, &g_lkd);
        }
        let n = cfg.seeds.len() as f64;
        kd.push(kd_sum / n);
        lkd.push(lkd_sum / n);
    }
    Ok(GradientNormReport {
        class_counts: cfg.class_counts.clone(),
        kd_norm_diff: kd,
        lkd_norm_diff: lkd,
    })
}
