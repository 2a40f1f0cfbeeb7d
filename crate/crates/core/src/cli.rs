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

//! Command-line front end: `train-teacher`, `distill`, `sweep-overlap` and
//! `analyze`. Every command writes its artifacts plus a `manifest.json`
//! under `--out`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{derive_seed, SeedStream};
use crate::embed::{mine_semihard_tuples, write_tuples_csv};
use crate::error::{Error, Result};
use crate::eval::{auc, gradient_norm_study, weight_study, GradientStudyConfig, JointClassifier, HISTOGRAM_BIN};
use crate::experiment::{all_class_teacher, prepare, sweep_overlap, write_sweep_csv, Experiment, Method};
use crate::model::{FrozenModel, MlpModel};
use crate::train::{train_teacher, TrainLog};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECKPOINT: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_OTHER: i32 = 1;

#[derive(Parser, Debug)]
#[command(name = "gkd", version, about = "Knowledge distillation across class sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Trains a teacher on the teacher window and saves its checkpoint.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
    },
    /// Trains a student with one method against a saved teacher.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: PathBuf,
        /// Overrides `[run] mode`.
        #[arg(long)]
        mode: Option<Method>,
        /// Also writes the tuples mined on the final student embedding.
        #[arg(long)]
        tuple_dump: bool,
    },
    /// Accuracy of every configured method over overlap ratios and seeds.
    SweepOverlap {
        #[command(flatten)]
        common: Common,
    },
    /// Runs one analysis study.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        study: Study,
        /// Teacher checkpoint; trained from the config when absent.
        /// Ignored by `gradient-norms`, which needs an all-class teacher.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    GradientNorms,
    WeightAuc,
    NcmQuality,
    Incremental,
}

impl clap::ValueEnum for Method {
    fn value_variants<'a>() -> &'a [Self] {
        &crate::experiment::ALL_METHODS
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    artifacts: Vec<String>,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. }
        | Error::InvalidConfig(_)
        | Error::InvalidRatio { .. }
        | Error::InvalidHyperparameter { .. } => EXIT_CONFIG,
        Error::MissingCheckpoint(_) => EXIT_CHECKPOINT,
        Error::TrainingDiverged { .. } | Error::NumericOverflow { .. } => EXIT_DIVERGED,
        _ => EXIT_OTHER,
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}

fn load_teacher(path: &Path) -> Result<FrozenModel> {
    Ok(FrozenModel::new(MlpModel::from_params(checkpoint::load(path)?)?))
}

struct Run {
    out: PathBuf,
    artifacts: Vec<String>,
}

impl Run {
    fn new(out: &Path) -> Result<Self> {
        if out.join("manifest.json").exists() {
            return Err(Error::InvalidConfig(format!(
                "{} already holds a finished run",
                out.display()
            )));
        }
        std::fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn finish(mut self, command: &str, cfg: &ExperimentConfig, seed: u64) -> Result<()> {
        std::fs::write(self.path("config.txt"), cfg.serialize())?;
        let manifest = Manifest {
            command,
            config_hash: cfg.hash(),
            seed,
            artifacts: self.artifacts,
        };
        std::fs::write(
            self.out.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(())
    }
}

fn write_rows(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn experiment(cfg: &ExperimentConfig, seed: u64, teacher: Option<&Path>) -> Result<Experiment> {
    match teacher {
        None => Experiment::new(&cfg.bench, seed),
        Some(path) => {
            let teacher = load_teacher(path)?;
            Experiment::with_teacher(
                &cfg.bench,
                seed,
                prepare(&cfg.bench, seed)?,
                teacher,
                TrainLog::default(),
            )
        }
    }
}

fn train_teacher_cmd(cfg: &ExperimentConfig, seed: u64, run: &mut Run) -> Result<()> {
    let data = prepare(&cfg.bench, seed)?;
    let spec = cfg.bench.model_spec(data.split.teacher_classes.len());
    let (teacher, log) = train_teacher(
        &spec,
        &data.teacher.train,
        Some(&data.teacher.test),
        &cfg.bench.teacher_optim,
        derive_seed(seed, "teacher"),
    )?;
    checkpoint::save(teacher.params(), &run.path("teacher"))?;
    log.write_csv(&run.path("teacher_log.csv"))?;
    Ok(())
}

fn distill_cmd(
    cfg: &ExperimentConfig,
    seed: u64,
    teacher: &Path,
    mode: Method,
    tuple_dump: bool,
    run: &mut Run,
) -> Result<()> {
    let exp = experiment(cfg, seed, Some(teacher))?;
    let result = exp.run(mode)?;
    checkpoint::save(result.model.params(), &run.path("student"))?;
    result.log.write_csv(&run.path("student_log.csv"))?;
    write_rows(
        &run.path("result.csv"),
        "mode,accuracy",
        &[format!("{mode},{}", result.test_accuracy)],
    )?;
    if tuple_dump {
        let train = &exp.data.student.train;
        let z = result.model.embed(&train.instances)?.row_l2_normalize();
        let mined = mine_semihard_tuples(&z, &train.labels, cfg.bench.distill.max_impostors)?;
        write_tuples_csv(&run.path("tuples.csv"), &mined.tuples)?;
    }
    Ok(())
}

fn analyze_cmd(cfg: &ExperimentConfig, seed: u64, study: Study, teacher: Option<&Path>, run: &mut Run) -> Result<()> {
    match study {
        Study::GradientNorms => {
            let (split, teacher) = all_class_teacher(&cfg.bench, seed)?;
            let study_cfg = GradientStudyConfig {
                class_counts: cfg.analysis.class_counts.clone(),
                seeds: cfg
                    .analysis
                    .seeds
                    .iter()
                    .map(|s| derive_seed(seed, &format!("gradients/{s}")))
                    .collect(),
                lambda: cfg.analysis.study_lambda,
                kd_tau: cfg.bench.distill.kd_tau,
                tau_student: cfg.bench.distill.tau_student,
                ..GradientStudyConfig::default()
            };
            let spec = cfg.bench.model_spec(cfg.bench.data.class_count);
            let report = gradient_norm_study(&split.train, &teacher, &spec, &study_cfg)?;
            report.write_csv(&run.path("gradient_norms.csv"))?;
        }
        Study::WeightAuc => {
            let exp = experiment(cfg, seed, teacher)?;
            let seen = exp.seen_flags();
            let study = weight_study(&exp.knowledge.scores, &seen, cfg.analysis.study_lambda)?;
            let mut shuffled = seen.clone();
            shuffled.shuffle(SeedStream::derived(seed, "shuffled-flags").rng());
            let baseline = auc(&study.weights, &shuffled)?;
            study.write_csv(&run.path("weights.csv"))?;
            write_rows(
                &run.path("weight_auc.csv"),
                "auc,shuffled_auc",
                &[format!("{},{}", study.auc, baseline)],
            )?;
            let rows: Vec<String> = study
                .histogram
                .iter()
                .enumerate()
                .map(|(b, (s, u))| {
                    format!(
                        "{},{},{s},{u}",
                        b as f64 * HISTOGRAM_BIN,
                        (b + 1) as f64 * HISTOGRAM_BIN
                    )
                })
                .collect();
            write_rows(&run.path("weight_histogram.csv"), "bin_low,bin_high,seen,unseen", &rows)?;
        }
        Study::NcmQuality => {
            let exp = experiment(cfg, seed, teacher)?;
            let q = exp.ncm_quality()?;
            write_rows(
                &run.path("ncm_quality.csv"),
                "embedding,ncm_accuracy",
                &[
                    format!("teacher,{}", q.teacher),
                    format!("vanilla,{}", q.vanilla),
                    format!("stage-one,{}", q.stage_one),
                ],
            )?;
        }
        Study::Incremental => {
            let exp = experiment(cfg, seed, teacher)?;
            let student = exp.run(cfg.mode)?.model;
            let joint = JointClassifier::new(
                &student,
                &exp.data.split.student_classes,
                &exp.teacher,
                &exp.data.split.teacher_classes,
                cfg.analysis.joint_mode,
            )?;
            let r = joint.evaluate(&exp.data.teacher.test, &exp.data.student.test)?;
            write_rows(
                &run.path("incremental.csv"),
                "mode,new_to_all,old_to_all,overall,harmonic",
                &[format!(
                    "{},{},{},{},{}",
                    cfg.mode, r.new_to_all, r.old_to_all, r.overall, r.harmonic
                )],
            )?;
        }
    }
    Ok(())
}

/// Runs one parsed invocation.
pub fn execute(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::TrainTeacher { common } => ("train-teacher", common),
        Command::Distill { common, .. } => ("distill", common),
        Command::SweepOverlap { common } => ("sweep-overlap", common),
        Command::Analyze { common, .. } => ("analyze", common),
    };
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let seed = cfg.seed;
    let mut run = Run::new(&common.out)?;
    match &cli.command {
        Command::TrainTeacher { .. } => train_teacher_cmd(&cfg, seed, &mut run)?,
        Command::Distill {
            teacher,
            mode,
            tuple_dump,
            ..
        } => {
            if let Some(m) = mode {
                cfg.mode = *m;
            }
            distill_cmd(&cfg, seed, teacher, cfg.mode, *tuple_dump, &mut run)?
        }
        Command::SweepOverlap { .. } => {
            let seeds: Vec<u64> = cfg.sweep.seeds.iter().map(|s| seed + s).collect();
            let rows = sweep_overlap(&cfg.bench, &cfg.sweep.ratios, &seeds, &cfg.sweep.modes)?;
            write_sweep_csv(&run.path("sweep.csv"), &rows)?;
        }
        Command::Analyze { study, teacher, .. } => analyze_cmd(&cfg, seed, *study, teacher.as_deref(), &mut run)?,
    }
    run.finish(name, &cfg, seed)
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
