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

//! Benchmark preparation and the roster of student-training methods.

use std::cell::OnceCell;
use std::io::Write as _;
use std::path::Path;

use crate::classify::WeightMode;
use crate::data::{
    derive_seed, make_gaussian_clusters, restrict, sliding_window_split_unequal, subsample_per_class, ClusterConfig,
    LabeledDataset, Restricted, SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::{accuracy, ncm_accuracy};
use crate::model::{FrozenModel, MlpModel, ModelSpec};
use crate::tensor::Matrix;
use crate::train::{
    distill_classifier_stage, distill_embedding_stage, train_one_stage_gamma, train_standard_kd, train_supervised,
    train_teacher, DistillConfig, OptimConfig, TeacherKnowledge, TrainLog,
};

/// Everything that defines one synthetic teacher/student run, except the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    /// Cluster geometry; its `seed` field is replaced per run.
    pub data: ClusterConfig,
    pub teacher_window: usize,
    pub student_window: usize,
    pub overlap_ratio: f64,
    pub train_fraction: f64,
    /// Cap on the student's training instances per class.
    pub student_shots: Option<usize>,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub teacher_optim: OptimConfig,
    pub embed_optim: OptimConfig,
    pub classifier_optim: OptimConfig,
    pub distill: DistillConfig,
    pub gamma: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let optim = OptimConfig::default();
        Self {
            data: ClusterConfig {
                class_count: 20,
                dim: 16,
                per_class: 400,
                center_scale: 3.0,
                noise_sigma: 1.0,
                latent_dim: Some(8),
                nuisance_sigma: Some(4.0),
                seed: 0,
            },
            teacher_window: 12,
            student_window: 8,
            overlap_ratio: 0.5,
            train_fraction: 0.7,
            student_shots: Some(8),
            hidden: vec![64],
            embed_dim: 32,
            teacher_optim: OptimConfig {
                lr: 0.05,
                ..optim.clone()
            },
            embed_optim: OptimConfig {
                lr: 16.0,
                ..optim.clone()
            },
            classifier_optim: OptimConfig { lr: 0.02, ..optim },
            distill: DistillConfig {
                lambda: 0.5,
                ..DistillConfig::default()
            },
            gamma: 1.0,
        }
    }
}

/// Student-training methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Cross-entropy from scratch.
    Vanilla,
    /// Comparison matching, then weighted local KD.
    Refilled,
    /// As `Refilled` with a uniform weight `λ`.
    RefilledMinus,
    /// Comparison matching, then cross-entropy fine-tuning.
    RefilledEmb,
    /// Weighted local KD from scratch.
    RefilledLkd,
    /// Both terms jointly, balanced by `γ`.
    OneStage,
    /// Standard logit distillation; teacher and student must share classes.
    Kd,
}

pub const ALL_METHODS: [Method; 7] = [
    Method::Vanilla,
    Method::Refilled,
    Method::RefilledMinus,
    Method::RefilledEmb,
    Method::RefilledLkd,
    Method::OneStage,
    Method::Kd,
];

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Refilled => "refilled",
            Method::RefilledMinus => "refilled-minus",
            Method::RefilledEmb => "refilled-emb",
            Method::RefilledLkd => "refilled-lkd",
            Method::OneStage => "one-stage",
            Method::Kd => "kd",
        }
    }

    /// Whether the method starts from the distilled embedding.
    pub fn uses_stage_one(self) -> bool {
        matches!(self, Method::Refilled | Method::RefilledMinus | Method::RefilledEmb)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_METHODS
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

/// Data and class splits of one run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: LabeledDataset,
    pub split: SplitSpec,
    pub teacher: Restricted,
    pub student: Restricted,
}

/// Generates the clusters, the class windows and the train/test splits.
pub fn prepare(cfg: &BenchmarkConfig, seed: u64) -> Result<Prepared> {
    let data_cfg = ClusterConfig {
        seed: derive_seed(seed, "data"),
        ..cfg.data.clone()
    };
    let dataset = make_gaussian_clusters(&data_cfg)?;
    let split = sliding_window_split_unequal(
        cfg.data.class_count,
        cfg.teacher_window,
        cfg.student_window,
        cfg.overlap_ratio,
    )?;
    let split_seed = derive_seed(seed, "split");
    let teacher = restrict(&dataset, &split.teacher_classes, cfg.train_fraction, split_seed)?;
    let mut student = restrict(&dataset, &split.student_classes, cfg.train_fraction, split_seed)?;
    if let Some(k) = cfg.student_shots {
        student.train = subsample_per_class(&student.train, k, derive_seed(seed, "shots"))?;
    }
    Ok(Prepared {
        dataset,
        split,
        teacher,
        student,
    })
}

impl BenchmarkConfig {
    pub fn model_spec(&self, classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim: self.data.dim,
            hidden: self.hidden.clone(),
            embed_dim: self.embed_dim,
            classes,
        }
    }
}

/// Outcome of one method on one run.
#[derive(Clone, Debug)]
pub struct MethodResult {
    pub method: Method,
    pub model: MlpModel,
    pub log: TrainLog,
    pub test_accuracy: f64,
}

/// A prepared run with its trained teacher. The stage-one embedding is
/// computed once and shared by the methods that start from it.
pub struct Experiment {
    pub cfg: BenchmarkConfig,
    pub seed: u64,
    pub data: Prepared,
    pub teacher: FrozenModel,
    pub teacher_log: TrainLog,
    pub knowledge: TeacherKnowledge,
    stage_one: OnceCell<(MlpModel, TrainLog)>,
}

impl Experiment {
    /// Prepares data and trains the teacher.
    pub fn new(cfg: &BenchmarkConfig, seed: u64) -> Result<Self> {
        let data = prepare(cfg, seed)?;
        let spec = cfg.model_spec(data.split.teacher_classes.len());
        let (teacher, teacher_log) = train_teacher(
            &spec,
            &data.teacher.train,
            Some(&data.teacher.test),
            &cfg.teacher_optim,
            derive_seed(seed, "teacher"),
        )?;
        Self::with_teacher(cfg, seed, data, teacher, teacher_log)
    }

    /// Uses an already trained teacher (e.g. loaded from a checkpoint).
    pub fn with_teacher(
        cfg: &BenchmarkConfig,
        seed: u64,
        data: Prepared,
        teacher: FrozenModel,
        teacher_log: TrainLog,
    ) -> Result<Self> {
        if teacher.class_count() != data.split.teacher_classes.len() {
            return Err(Error::Structural(format!(
                "teacher has {} classes, split expects {}",
                teacher.class_count(),
                data.split.teacher_classes.len()
            )));
        }
        let knowledge = TeacherKnowledge::new(&teacher, &data.student.train)?;
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            data,
            teacher,
            teacher_log,
            knowledge,
            stage_one: OnceCell::new(),
        })
    }

    /// Identical fresh student for every method of this run.
    pub fn fresh_student(&self) -> Result<MlpModel> {
        MlpModel::new(
            &self.cfg.model_spec(self.data.split.student_classes.len()),
            derive_seed(self.seed, "student"),
        )
    }

    fn train_seed(&self) -> u64 {
        derive_seed(self.seed, "student-batches")
    }

    /// The student after comparison matching, with its log.
    pub fn stage_one(&self) -> Result<&(MlpModel, TrainLog)> {
        if let Some(done) = self.stage_one.get() {
            return Ok(done);
        }
        let mut student = self.fresh_student()?;
        let log = distill_embedding_stage(
            &mut student,
            &self.knowledge,
            &self.data.student.train,
            Some(&self.data.student.test),
            &self.cfg.embed_optim,
            &self.cfg.distill,
            self.train_seed(),
        )?;
        Ok(self.stage_one.get_or_init(|| (student, log)))
    }

    pub fn run(&self, method: Method) -> Result<MethodResult> {
        let train = &self.data.student.train;
        let test = &self.data.student.test;
        let optim = &self.cfg.classifier_optim;
        let seed = self.train_seed();
        let (mut model, mut log) = if method.uses_stage_one() {
            self.stage_one()?.clone()
        } else {
            (self.fresh_student()?, TrainLog::default())
        };
        let with = |f: &dyn Fn(&mut DistillConfig)| {
            let mut d = self.cfg.distill.clone();
            f(&mut d);
            d
        };
        let stage_log = match method {
            Method::Vanilla => train_supervised(&mut model, train, Some(test), optim, seed)?,
            Method::Refilled | Method::RefilledLkd => distill_classifier_stage(
                &mut model,
                &self.knowledge,
                train,
                Some(test),
                optim,
                &self.cfg.distill,
                seed,
            )?,
            Method::RefilledMinus => {
                let d = with(&|d| d.weight_mode = WeightMode::None);
                distill_classifier_stage(&mut model, &self.knowledge, train, Some(test), optim, &d, seed)?
            }
            Method::RefilledEmb => {
                let d = with(&|d| d.lambda = 0.0);
                distill_classifier_stage(&mut model, &self.knowledge, train, Some(test), optim, &d, seed)?
            }
            Method::OneStage => train_one_stage_gamma(
                &mut model,
                &self.knowledge,
                train,
                Some(test),
                self.cfg.gamma,
                optim,
                &self.cfg.distill,
                seed,
            )?,
            Method::Kd => {
                if self.data.split.teacher_classes != self.data.split.student_classes {
                    return Err(Error::Structural(
                        "standard KD needs identical teacher and student classes".into(),
                    ));
                }
                train_standard_kd(
                    &mut model,
                    &self.teacher,
                    train,
                    Some(test),
                    optim,
                    &self.cfg.distill,
                    seed,
                )?
            }
        };
        log.extend(stage_log);
        let test_accuracy = accuracy(&model, test)?;
        Ok(MethodResult {
            method,
            model,
            log,
            test_accuracy,
        })
    }
}

impl Experiment {
    /// Whether each student training instance belongs to a teacher class.
    pub fn seen_flags(&self) -> Vec<bool> {
        self.data
            .student
            .train
            .original_labels()
            .iter()
            .map(|c| self.data.split.teacher_classes.contains(c))
            .collect()
    }

    /// NCM accuracy of the teacher, a vanilla student and the stage-one
    /// student, each on its own ℓ2-normalized embedding.
    pub fn ncm_quality(&self) -> Result<NcmQuality> {
        let train = &self.data.student.train;
        let test = &self.data.student.test;
        let teacher = ncm_accuracy(|x: &Matrix| self.teacher.embed_normalized(x), train, test)?;
        let vanilla = self.run(Method::Vanilla)?.model;
        let vanilla = ncm_accuracy(|x: &Matrix| Ok(vanilla.embed(x)?.row_l2_normalize()), train, test)?;
        let stage_one = &self.stage_one()?.0;
        let stage_one = ncm_accuracy(|x: &Matrix| Ok(stage_one.embed(x)?.row_l2_normalize()), train, test)?;
        Ok(NcmQuality {
            teacher,
            vanilla,
            stage_one,
        })
    }
}

/// Output of [`Experiment::ncm_quality`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NcmQuality {
    pub teacher: f64,
    pub vanilla: f64,
    pub stage_one: f64,
}

/// One measurement of an overlap sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub ratio: f64,
    pub seed: u64,
    pub method: Method,
    pub accuracy: f64,
}

pub const SWEEP_HEADER: &str = "ratio,seed,mode,accuracy";

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.ratio, r.seed, r.method, r.accuracy)?;
    }
    f.flush()?;
    Ok(())
}

/// Runs every method at every (ratio, seed). Each pair is an isolated job on
/// its own thread; rows come back in (ratio, seed, method) input order.
pub fn sweep_overlap(
    cfg: &BenchmarkConfig,
    ratios: &[f64],
    seeds: &[u64],
    methods: &[Method],
) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(f64, u64)> = ratios
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    let job = |(ratio, seed): (f64, u64)| -> Result<Vec<SweepRow>> {
        let cfg = BenchmarkConfig {
            overlap_ratio: ratio,
            ..cfg.clone()
        };
        let exp = Experiment::new(&cfg, seed)?;
        methods
            .iter()
            .map(|&method| {
                let accuracy = exp.run(method)?.test_accuracy;
                log::info!("ratio {ratio} seed {seed} {method}: {accuracy:.4}");
                Ok(SweepRow {
                    ratio,
                    seed,
                    method,
                    accuracy,
                })
            })
            .collect()
    };
    let mut results: Vec<Option<Result<Vec<SweepRow>>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_jobs, chunk_out) in jobs.chunks(workers).zip(results.chunks_mut(workers)) {
            let handles: Vec<_> = chunk_jobs.iter().map(|&j| scope.spawn(move || job(j))).collect();
            for (h, out) in handles.into_iter().zip(chunk_out) {
                *out = Some(h.join().expect("sweep job panicked"));
            }
        }
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r.expect("every job ran")?);
    }
    Ok(rows)
}

/// A teacher trained on every class of the run's dataset, with that split.
/// Used by the gradient study, which samples class subsets of the whole suite.
pub fn all_class_teacher(cfg: &BenchmarkConfig, seed: u64) -> Result<(Restricted, FrozenModel)> {
    let data = prepare(cfg, seed)?;
    let all: Vec<usize> = (0..cfg.data.class_count).collect();
    let split = restrict(&data.dataset, &all, cfg.train_fraction, derive_seed(seed, "split"))?;
    let (teacher, _) = train_teacher(
        &cfg.model_spec(all.len()),
        &split.train,
        None,
        &cfg.teacher_optim,
        derive_seed(seed, "teacher"),
    )?;
    Ok((split, teacher))
}
