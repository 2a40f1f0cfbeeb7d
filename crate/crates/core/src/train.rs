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

//! Optimization loops: supervised pre-training, the two distillation stages,
//! the one-stage combined variant and standard logit distillation.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::autodiff::{Graph, Var};
use crate::classify::{
    class_prototypes, cross_entropy_objective, refilled_objective, standard_kd_loss, PrototypeSet, WeightMode,
};
use crate::data::{sample_balanced_from, LabeledDataset, SeedStream};
use crate::embed::{comparison_matching_loss, mine_semihard_tuples, TupleReduction};
use crate::error::{Error, Result};
use crate::eval::{accuracy, ncm_accuracy};
use crate::model::{Forward, FrozenModel, MlpModel, ModelSpec};
use crate::optim::SgdState;
use crate::tensor::Matrix;

/// Classes per batch times instances per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchScheme {
    pub classes_per_batch: usize,
    pub instances_per_class: usize,
}

impl Default for BatchScheme {
    fn default() -> Self {
        Self {
            classes_per_batch: 8,
            instances_per_class: 4,
        }
    }
}

/// SGD settings for one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Epochs after which the rate is multiplied by `decay`.
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub batch: BatchScheme,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 0.1,
            momentum: 0.9,
            milestones: vec![20, 40],
            decay: 0.2,
            batch: BatchScheme::default(),
        }
    }
}

impl OptimConfig {
    pub fn schedule(&self) -> Vec<(usize, f64)> {
        self.milestones.iter().map(|&m| (m, self.decay)).collect()
    }

    pub fn with_epochs(&self, epochs: usize) -> Self {
        Self { epochs, ..self.clone() }
    }
}

/// Distillation hyperparameters shared by every method.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    /// Teacher temperature for tuple probabilities.
    pub tau_teacher: f64,
    /// Student temperature for tuple probabilities and local KD.
    pub tau_student: f64,
    pub lambda: f64,
    pub weight_mode: WeightMode,
    /// Impostor cap per tuple; `None` keeps all semi-hard impostors.
    pub max_impostors: Option<usize>,
    pub reduction: TupleReduction,
    /// Keep `φ` fixed in the classifier stage.
    pub freeze_embedding: bool,
    pub kd_lambda: f64,
    pub kd_tau: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau_teacher: 2.0,
            tau_student: 1.0,
            lambda: 2.0,
            weight_mode: WeightMode::Pl,
            max_impostors: None,
            reduction: TupleReduction::Flat,
            freeze_embedding: false,
            kd_lambda: 1.0,
            kd_tau: 4.0,
        }
    }
}

/// One row of a [`TrainLog`].
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: String,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub const LOG_HEADER: &str = "epoch,stage,loss,train_acc,test_acc,seconds";

impl TrainLog {
    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{LOG_HEADER}")?;
        for r in &self.records {
            let test = r.test_acc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{},{},{:.3}",
                r.epoch, r.stage, r.loss, r.train_acc, test, r.seconds
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// What the frozen teacher contributes on the student's training set,
/// computed once before student training.
#[derive(Clone, Debug)]
pub struct TeacherKnowledge {
    /// ℓ2-normalized teacher embeddings, one row per training instance.
    pub embeddings: Matrix,
    pub prototypes: PrototypeSet,
    /// Raw NCM scores of every training instance against every student class.
    pub scores: Matrix,
}

impl TeacherKnowledge {
    pub fn new(teacher: &FrozenModel, train: &LabeledDataset) -> Result<Self> {
        let embeddings = teacher.embed_normalized(&train.instances)?;
        let prototypes = class_prototypes(&embeddings, &train.labels, train.class_count)?;
        let scores = prototypes.scores(&embeddings)?;
        Ok(Self {
            embeddings,
            prototypes,
            scores,
        })
    }
}

type BatchLoss<'a> = dyn FnMut(&MlpModel, &mut Graph, &[usize]) -> Result<Option<Var>> + 'a;
type Evaluate<'a> = dyn Fn(&MlpModel) -> Result<(f64, Option<f64>)> + 'a;

struct Stage<'a> {
    name: &'a str,
    stream_tag: &'a str,
    update: fn(&str) -> bool,
}

fn diverged(stage: &str, epoch: usize) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NumericOverflow { .. } => Error::TrainingDiverged {
            stage: stage.to_string(),
            epoch,
        },
        other => other,
    }
}

fn run_stage(
    model: &mut MlpModel,
    train: &LabeledDataset,
    optim: &OptimConfig,
    seed: u64,
    stage: Stage<'_>,
    batch_loss: &mut BatchLoss<'_>,
    evaluate: &Evaluate<'_>,
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    if optim.epochs == 0 {
        return Ok(log);
    }
    let cpb = optim.batch.classes_per_batch.min(train.class_count);
    let ipc = optim.batch.instances_per_class;
    let iterations = train.len().div_ceil(cpb * ipc).max(1);
    let by_class = train.class_indices();
    let mut stream = SeedStream::derived(seed, &format!("batches/{}", stage.stream_tag));
    let mut sgd = SgdState::new(model.params(), optim.lr, optim.momentum, optim.schedule())?;
    for epoch in 1..=optim.epochs {
        let started = Instant::now();
        sgd.apply_schedule(epoch - 1);
        let wrap = diverged(stage.name, epoch);
        let (mut total, mut used) = (0.0, 0usize);
        for _ in 0..iterations {
            let batch = sample_balanced_from(&by_class, cpb, ipc, &mut stream)?;
            let mut g = Graph::new();
            let Some(loss) = batch_loss(model, &mut g, &batch).map_err(&wrap)? else {
                continue;
            };
            let value = g.scalar(loss);
            let grads = g.backward(loss).map_err(&wrap)?;
            sgd.step(model.params_mut(), &grads, stage.update).map_err(&wrap)?;
            total += value;
            used += 1;
        }
        if used == 0 {
            return Err(Error::StageDegenerate(format!(
                "{}: no batch in epoch {epoch} produced a loss",
                stage.name
            )));
        }
        let (train_acc, test_acc) = evaluate(model).map_err(&wrap)?;
        log.records.push(EpochRecord {
            epoch,
            stage: stage.name.to_string(),
            loss: total / used as f64,
            train_acc,
            test_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

fn all_params(_: &str) -> bool {
    true
}

fn head_only(name: &str) -> bool {
    !MlpModel::is_embedding_param(name)
}

fn classifier_eval<'a>(
    train: &'a LabeledDataset,
    test: Option<&'a LabeledDataset>,
) -> impl Fn(&MlpModel) -> Result<(f64, Option<f64>)> + 'a {
    move |m: &MlpModel| {
        let test_acc = match test {
            Some(t) if !t.is_empty() => Some(accuracy(m, t)?),
            _ => None,
        };
        Ok((accuracy(m, train)?, test_acc))
    }
}

fn ncm_eval<'a>(
    train: &'a LabeledDataset,
    test: Option<&'a LabeledDataset>,
) -> impl Fn(&MlpModel) -> Result<(f64, Option<f64>)> + 'a {
    move |m: &MlpModel| {
        let embed = |x: &Matrix| Ok(m.embed(x)?.row_l2_normalize());
        let test_acc = match test {
            Some(t) if !t.is_empty() => Some(ncm_accuracy(embed, train, t)?),
            _ => None,
        };
        Ok((ncm_accuracy(embed, train, train)?, test_acc))
    }
}

/// Cross-entropy training of every parameter of `model`.
pub fn train_supervised(
    model: &mut MlpModel,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    optim: &OptimConfig,
    seed: u64,
) -> Result<TrainLog> {
    let mut loss = |m: &MlpModel, g: &mut Graph, batch: &[usize]| -> Result<Option<Var>> {
        let (x, y) = train.batch(batch);
        let xv = g.constant(x);
        let f = m.forward(g, xv)?;
        Ok(Some(cross_entropy_objective(g, f.logits, &y)?))
    };
    let stage = Stage {
        name: "supervised",
        stream_tag: "supervised",
        update: all_params,
    };
    run_stage(
        model,
        train,
        optim,
        seed,
        stage,
        &mut loss,
        &classifier_eval(train, test),
    )
}

/// Trains a fresh model on `train` and freezes it.
pub fn train_teacher(
    spec: &ModelSpec,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    optim: &OptimConfig,
    seed: u64,
) -> Result<(FrozenModel, TrainLog)> {
    let mut model = MlpModel::new(spec, seed)?;
    let log = train_supervised(&mut model, train, test, optim, seed)?;
    Ok((FrozenModel::new(model), log))
}

/// Stage one: comparison matching on mined tuples. Only `φ` moves.
///
/// Train/test accuracies in the log are nearest-class-mean accuracies of the
/// normalized student embedding.
#[allow(clippy::too_many_arguments)]
pub fn distill_embedding_stage(
    student: &mut MlpModel,
    knowledge: &TeacherKnowledge,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    optim: &OptimConfig,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<TrainLog> {
    let mut loss = |m: &MlpModel, g: &mut Graph, batch: &[usize]| -> Result<Option<Var>> {
        let (x, y) = train.batch(batch);
        let xv = g.constant(x);
        let h = m.forward_embedding(g, xv)?;
        let z = g.row_l2_normalize(h)?;
        let mined = mine_semihard_tuples(g.value(z), &y, cfg.max_impostors)?;
        if mined.tuples.is_empty() {
            return Ok(None);
        }
        let teacher = knowledge.embeddings.select_rows(batch);
        let term = comparison_matching_loss(
            g,
            &teacher,
            z,
            &mined.tuples,
            cfg.tau_teacher,
            cfg.tau_student,
            cfg.reduction,
        )?;
        Ok(Some(term.value))
    };
    let stage = Stage {
        name: "embedding",
        stream_tag: "embedding",
        update: MlpModel::is_embedding_param,
    };
    run_stage(student, train, optim, seed, stage, &mut loss, &ncm_eval(train, test))
}

/// Stage two: cross-entropy plus instance-weighted local KD against the
/// teacher's NCM scores. `φ` keeps training unless frozen by `cfg`.
#[allow(clippy::too_many_arguments)]
pub fn distill_classifier_stage(
    student: &mut MlpModel,
    knowledge: &TeacherKnowledge,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    optim: &OptimConfig,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<TrainLog> {
    train_one_stage_gamma(student, knowledge, train, test, 0.0, optim, cfg, seed).map(|mut log| {
        log.records.iter_mut().for_each(|r| r.stage = "classifier".into());
        log
    })
}

/// Batch value of `CE + λ_i·LKD + γ·CM`. Tuples are mined on the student's
/// normalized embedding; `γ = 0` skips mining.
pub fn one_stage_objective(
    g: &mut Graph,
    forward: &Forward,
    labels: &[usize],
    teacher_embeddings: &Matrix,
    teacher_scores: &Matrix,
    gamma: f64,
    cfg: &DistillConfig,
) -> Result<Var> {
    let objective = refilled_objective(
        g,
        forward.logits,
        labels,
        teacher_scores,
        cfg.lambda,
        cfg.tau_student,
        cfg.weight_mode,
    )?;
    if gamma == 0.0 {
        return Ok(objective.value);
    }
    let z = g.row_l2_normalize(forward.embedding)?;
    let mined = mine_semihard_tuples(g.value(z), labels, cfg.max_impostors)?;
    let cm = comparison_matching_loss(
        g,
        teacher_embeddings,
        z,
        &mined.tuples,
        cfg.tau_teacher,
        cfg.tau_student,
        cfg.reduction,
    )?;
    let cm = g.scale(cm.value, gamma)?;
    g.add(objective.value, cm)
}

/// `CE + λ_i·LKD + γ·CM` minimized jointly. `γ = 0` skips mining entirely.
#[allow(clippy::too_many_arguments)]
pub fn train_one_stage_gamma(
    student: &mut MlpModel,
    knowledge: &TeacherKnowledge,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    gamma: f64,
    optim: &OptimConfig,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<TrainLog> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidHyperparameter {
            name: "gamma",
            value: gamma,
        });
    }
    if knowledge.scores.shape() != (train.len(), train.class_count) {
        return Err(Error::ShapeMismatch {
            op: "teacher_scores",
            left: knowledge.scores.shape(),
            right: (train.len(), train.class_count),
        });
    }
    let mut loss = |m: &MlpModel, g: &mut Graph, batch: &[usize]| -> Result<Option<Var>> {
        let (x, y) = train.batch(batch);
        let xv = g.constant(x);
        let f = m.forward(g, xv)?;
        let scores = knowledge.scores.select_rows(batch);
        let teacher = knowledge.embeddings.select_rows(batch);
        Ok(Some(one_stage_objective(g, &f, &y, &teacher, &scores, gamma, cfg)?))
    };
    let stage = Stage {
        name: "one-stage",
        stream_tag: "classifier",
        update: if cfg.freeze_embedding { head_only } else { all_params },
    };
    run_stage(
        student,
        train,
        optim,
        seed,
        stage,
        &mut loss,
        &classifier_eval(train, test),
    )
}

/// Cross-entropy plus tempered logit matching against a teacher over the same classes.
pub fn train_standard_kd(
    student: &mut MlpModel,
    teacher: &FrozenModel,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    optim: &OptimConfig,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<TrainLog> {
    let teacher_logits = teacher.logits(&train.instances)?;
    if teacher_logits.cols() != student.class_count() {
        return Err(Error::Structural(format!(
            "standard KD needs a shared class set: teacher has {} classes, student {}",
            teacher_logits.cols(),
            student.class_count()
        )));
    }
    let mut loss = |m: &MlpModel, g: &mut Graph, batch: &[usize]| -> Result<Option<Var>> {
        let (x, y) = train.batch(batch);
        let xv = g.constant(x);
        let f = m.forward(g, xv)?;
        let t = teacher_logits.select_rows(batch);
        Ok(Some(standard_kd_loss(
            g,
            f.logits,
            &t,
            &y,
            cfg.kd_lambda,
            cfg.kd_tau,
            cfg.tau_student,
        )?))
    };
    let stage = Stage {
        name: "kd",
        stream_tag: "classifier",
        update: all_params,
    };
    run_stage(
        student,
        train,
        optim,
        seed,
        stage,
        &mut loss,
        &classifier_eval(train, test),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_clusters, ClusterConfig};

    fn toy() -> LabeledDataset {
        make_gaussian_clusters(&ClusterConfig {
            class_count: 4,
            dim: 6,
            per_class: 12,
            center_scale: 3.0,
            noise_sigma: 0.3,
            latent_dim: None,
            nuisance_sigma: None,
            seed: 5,
        })
        .unwrap()
    }

    fn spec() -> ModelSpec {
        ModelSpec {
            input_dim: 6,
            hidden: vec![16],
            embed_dim: 8,
            classes: 4,
        }
    }

    fn short() -> OptimConfig {
        OptimConfig {
            epochs: 3,
            lr: 0.05,
            milestones: vec![2],
            batch: BatchScheme {
                classes_per_batch: 4,
                instances_per_class: 3,
            },
            ..OptimConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let ds = toy();
        let (t, log) = train_teacher(&spec(), &ds, None, &short().with_epochs(0), 1).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(t.thaw_copy(), MlpModel::new(&spec(), 1).unwrap());
    }

    #[test]
    fn teacher_training_is_deterministic() {
        let ds = toy();
        let (a, la) = train_teacher(&spec(), &ds, Some(&ds), &short(), 3).unwrap();
        let (b, lb) = train_teacher(&spec(), &ds, Some(&ds), &short(), 3).unwrap();
        assert_eq!(a, b);
        let strip = |l: &TrainLog| l.records.iter().map(|r| (r.loss, r.train_acc)).collect::<Vec<_>>();
        assert_eq!(strip(&la), strip(&lb));
        assert_eq!(la.records.len(), 3);
        assert!(la.records.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn embedding_stage_leaves_head_alone() {
        let ds = toy();
        let (teacher, _) = train_teacher(&spec(), &ds, None, &short(), 1).unwrap();
        let knowledge = TeacherKnowledge::new(&teacher, &ds).unwrap();
        let mut student = MlpModel::new(&spec(), 2).unwrap();
        let head = student.head().clone();
        let before = teacher.params().clone();
        distill_embedding_stage(
            &mut student,
            &knowledge,
            &ds,
            None,
            &short(),
            &DistillConfig::default(),
            2,
        )
        .unwrap();
        assert_eq!(student.head(), &head);
        assert_eq!(teacher.params(), &before);
    }

    #[test]
    fn gamma_zero_matches_classifier_stage() {
        let ds = toy();
        let (teacher, _) = train_teacher(&spec(), &ds, None, &short(), 1).unwrap();
        let knowledge = TeacherKnowledge::new(&teacher, &ds).unwrap();
        let cfg = DistillConfig::default();
        let mut a = MlpModel::new(&spec(), 2).unwrap();
        let mut b = a.clone();
        distill_classifier_stage(&mut a, &knowledge, &ds, None, &short(), &cfg, 4).unwrap();
        train_one_stage_gamma(&mut b, &knowledge, &ds, None, 0.0, &short(), &cfg, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_embedding_only_moves_head() {
        let ds = toy();
        let (teacher, _) = train_teacher(&spec(), &ds, None, &short(), 1).unwrap();
        let knowledge = TeacherKnowledge::new(&teacher, &ds).unwrap();
        let cfg = DistillConfig {
            freeze_embedding: true,
            ..DistillConfig::default()
        };
        let mut s = MlpModel::new(&spec(), 2).unwrap();
        let before = s.clone();
        distill_classifier_stage(&mut s, &knowledge, &ds, None, &short(), &cfg, 4).unwrap();
        for (name, p) in s.params().iter() {
            assert_eq!(
                p == before.params().get(name).unwrap(),
                MlpModel::is_embedding_param(name),
                "{name}"
            );
        }
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let mut ds = toy();
        ds.instances = ds.instances.scale(1e160);
        match train_teacher(&spec(), &ds, None, &short(), 1) {
            Err(Error::TrainingDiverged { stage, epoch }) => {
                assert_eq!(stage, "supervised");
                assert!(epoch >= 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn negative_gamma_rejected() {
        let ds = toy();
        let (teacher, _) = train_teacher(&spec(), &ds, None, &short().with_epochs(0), 1).unwrap();
        let knowledge = TeacherKnowledge::new(&teacher, &ds).unwrap();
        let mut s = MlpModel::new(&spec(), 2).unwrap();
        assert!(train_one_stage_gamma(
            &mut s,
            &knowledge,
            &ds,
            None,
            -1.0,
            &short(),
            &DistillConfig::default(),
            0
        )
        .is_err());
    }
}
