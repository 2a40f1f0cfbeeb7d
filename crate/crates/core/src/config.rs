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

//! Plain-text experiment configuration: `[section]` headers and `key = value`
//! lines. `#` starts a comment. Unknown sections or keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::ClusterConfig;
use crate::embed::TupleReduction;
use crate::error::{Error, Result};
use crate::eval::JointMode;
use crate::experiment::{BenchmarkConfig, Method};
use crate::train::{BatchScheme, DistillConfig, OptimConfig};

/// Ratios, seeds and methods of an overlap sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub modes: Vec<Method>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            seeds: (0..5).collect(),
            modes: vec![Method::Vanilla, Method::RefilledMinus, Method::Refilled],
        }
    }
}

/// Settings of the analysis studies.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub class_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub study_lambda: f64,
    pub joint_mode: JointMode,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            class_counts: vec![2, 4, 8, 12, 16, 20],
            seeds: (0..5).collect(),
            study_lambda: 1.0,
            joint_mode: JointMode::OwnEmbedding,
        }
    }
}

/// Everything a CLI command needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Method,
    pub bench: BenchmarkConfig,
    pub sweep: SweepConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Method::Refilled,
            bench: BenchmarkConfig::default(),
            sweep: SweepConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Fields {
    entries: BTreeMap<(String, String), Entry>,
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, ()> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| ())).collect()
}

fn parse_option<T: FromStr>(s: &str) -> std::result::Result<Option<T>, ()> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| ())
    }
}

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line, content, "unterminated section header"))?;
                if !SECTIONS.contains(&name) {
                    return Err(parse_err(line, name, "unknown section"));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| parse_err(line, content, "expected `key = value`"))?;
            let key = key.trim();
            let sec = section
                .clone()
                .ok_or_else(|| parse_err(line, key, "key outside of any section"))?;
            let full = format!("{sec}.{key}");
            if entries
                .insert(
                    (sec, key.to_string()),
                    Entry {
                        value: value.trim().to_string(),
                        line,
                    },
                )
                .is_some()
            {
                return Err(parse_err(line, &full, "key given twice"));
            }
        }
        Ok(Self { entries })
    }

    /// Removes and converts one key; absent keys keep `default`.
    fn take<T>(
        &mut self,
        section: &str,
        key: &str,
        default: T,
        convert: impl Fn(&str) -> std::result::Result<T, ()>,
        valid: impl Fn(&T) -> bool,
        expected: &str,
    ) -> Result<T> {
        let full = format!("{section}.{key}");
        match self.entries.remove(&(section.to_string(), key.to_string())) {
            None => Ok(default),
            Some(Entry { value, line }) => {
                let v = convert(&value)
                    .map_err(|_| parse_err(line, &full, format!("expected {expected}, found `{value}`")))?;
                if valid(&v) {
                    Ok(v)
                } else {
                    Err(parse_err(line, &full, format!("`{value}` out of range: {expected}")))
                }
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some(((s, k), e)) => Err(parse_err(e.line, &format!("{s}.{k}"), "unknown key")),
        }
    }
}

const SECTIONS: [&str; 10] = [
    "run",
    "dataset",
    "split",
    "model",
    "teacher",
    "embedding",
    "classifier",
    "distill",
    "sweep",
    "analysis",
];

fn pos(v: &f64) -> bool {
    *v > 0.0 && v.is_finite()
}

fn nonneg(v: &f64) -> bool {
    *v >= 0.0 && v.is_finite()
}

fn take_optim(f: &mut Fields, section: &str, d: &OptimConfig) -> Result<OptimConfig> {
    let epochs = f.take(
        section,
        "epochs",
        d.epochs,
        |s| s.parse().map_err(|_| ()),
        |_| true,
        "an integer",
    )?;
    let lr = f.take(
        section,
        "lr",
        d.lr,
        |s| s.parse().map_err(|_| ()),
        pos,
        "a positive number",
    )?;
    let momentum = f.take(
        section,
        "momentum",
        d.momentum,
        |s| s.parse().map_err(|_| ()),
        |m| (0.0..1.0).contains(m),
        "a number in [0, 1)",
    )?;
    let milestones = f.take(
        section,
        "milestones",
        d.milestones.clone(),
        parse_list,
        |m: &Vec<usize>| m.windows(2).all(|w| w[0] < w[1]),
        "an increasing comma-separated list of epochs",
    )?;
    let decay = f.take(
        section,
        "decay",
        d.decay,
        |s| s.parse().map_err(|_| ()),
        pos,
        "a positive number",
    )?;
    let classes_per_batch = f.take(
        section,
        "classes_per_batch",
        d.batch.classes_per_batch,
        |s| s.parse().map_err(|_| ()),
        |v| *v >= 1,
        "an integer >= 1",
    )?;
    let instances_per_class = f.take(
        section,
        "instances_per_class",
        d.batch.instances_per_class,
        |s| s.parse().map_err(|_| ()),
        |v| *v >= 2,
        "an integer >= 2",
    )?;
    Ok(OptimConfig {
        epochs,
        lr,
        momentum,
        milestones,
        decay,
        batch: BatchScheme {
            classes_per_batch,
            instances_per_class,
        },
    })
}

fn write_optim(out: &mut String, section: &str, o: &OptimConfig) {
    let _ = writeln!(out, "[{section}]");
    let _ = writeln!(out, "epochs = {}", o.epochs);
    let _ = writeln!(out, "lr = {}", o.lr);
    let _ = writeln!(out, "momentum = {}", o.momentum);
    let _ = writeln!(out, "milestones = {}", join(&o.milestones));
    let _ = writeln!(out, "decay = {}", o.decay);
    let _ = writeln!(out, "classes_per_batch = {}", o.batch.classes_per_batch);
    let _ = writeln!(out, "instances_per_class = {}", o.batch.instances_per_class);
    let _ = writeln!(out);
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn show_option<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".to_string(), |x| x.to_string())
}

fn parse_reduction(s: &str) -> std::result::Result<TupleReduction, ()> {
    match s {
        "flat" => Ok(TupleReduction::Flat),
        "per-anchor" => Ok(TupleReduction::PerAnchor),
        _ => Err(()),
    }
}

fn show_reduction(r: TupleReduction) -> &'static str {
    match r {
        TupleReduction::Flat => "flat",
        TupleReduction::PerAnchor => "per-anchor",
    }
}

fn parse_joint(s: &str) -> std::result::Result<JointMode, ()> {
    match s {
        "own" => Ok(JointMode::OwnEmbedding),
        "shared" => Ok(JointMode::SharedStudentEmbedding),
        _ => Err(()),
    }
}

fn show_joint(m: JointMode) -> &'static str {
    match m {
        JointMode::OwnEmbedding => "own",
        JointMode::SharedStudentEmbedding => "shared",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut f = Fields::parse(text)?;
        let d = ExperimentConfig::default();
        let b = &d.bench;

        let seed = f.take(
            "run",
            "seed",
            d.seed,
            |s| s.parse().map_err(|_| ()),
            |_| true,
            "an unsigned integer",
        )?;
        let mode = f.take(
            "run",
            "mode",
            d.mode,
            |s| s.parse().map_err(|_| ()),
            |_| true,
            "a method name",
        )?;

        let g = |f: &mut Fields, key: &str, default: f64, valid: fn(&f64) -> bool, expected: &str| {
            f.take("dataset", key, default, |s| s.parse().map_err(|_| ()), valid, expected)
        };
        let class_count = f.take(
            "dataset",
            "classes",
            b.data.class_count,
            |s| s.parse().map_err(|_| ()),
            |v| *v >= 2,
            "an integer >= 2",
        )?;
        let dim = f.take(
            "dataset",
            "dim",
            b.data.dim,
            |s| s.parse().map_err(|_| ()),
            |v| *v >= 1,
            "an integer >= 1",
        )?;
        let per_class = f.take(
            "dataset",
            "per_class",
            b.data.per_class,
            |s| s.parse().map_err(|_| ()),
            |v| *v >= 2,
            "an integer >= 2",
        )?;
        let center_scale = g(&mut f, "center_scale", b.data.center_scale, pos, "a positive number")?;
        let noise_sigma = g(&mut f, "sigma", b.data.noise_sigma, pos, "a positive number")?;
        let latent_dim = f.take(
            "dataset",
            "latent_dim",
            b.data.latent_dim,
            parse_option,
            |v| v.is_none_or(|k| k >= 1 && k <= dim),
            "`none` or an integer in [1, dim]",
        )?;
        let nuisance_sigma = f.take(
            "dataset",
            "nuisance_sigma",
            b.data.nuisance_sigma,
            parse_option,
            |v| v.is_none_or(|s| pos(&s)),
            "`none` or a positive number",
        )?;

        let teacher_window = f.take(
            "split",
            "teacher_window",
            b.teacher_window,
            |s| s.parse().map_err(|_| ()),
            |v| *v >= 1 && *v <= class_count,
            "an integer in [1, classes]",
        )?;
        let student_window = f.take(
            "split",
            "student_window",
            b.student_window,
            |s| s.parse().map_err(|_| ()),
            |v| *v >= 1 && *v <= class_count,
            "an integer in [1, classes]",
        )?;
        let overlap_ratio = f.take(
            "split",
            "overlap_ratio",
            b.overlap_ratio,
            |s| s.parse().map_err(|_| ()),
            |v| (0.0..=1.0).contains(v),
            "a number in [0, 1]",
        )?;
        let train_fraction = f.take(
            "split",
            "train_fraction",
            b.train_fraction,
            |s| s.parse().map_err(|_| ()),
            |v| *v > 0.0 && *v < 1.0,
            "a number in (0, 1)",
        )?;
        let student_shots = f.take(
            "split",
            "student_shots",
            b.student_shots,
            parse_option,
            |v| v.is_none_or(|k| k >= 2),
            "`none` or an integer >= 2",
        )?;

        let hidden = f.take(
            "model",
            "hidden",
            b.hidden.clone(),
            parse_list,
            |v: &Vec<usize>| v.iter().all(|&w| w >= 1),
            "a comma-separated list of positive widths",
        )?;
        let embed_dim = f.take(
            "model",
            "embed_dim",
            b.embed_dim,
            |s| s.parse().map_err(|_| ()),
            |v| *v >= 1,
            "an integer >= 1",
        )?;

        let teacher_optim = take_optim(&mut f, "teacher", &b.teacher_optim)?;
        let embed_optim = take_optim(&mut f, "embedding", &b.embed_optim)?;
        let classifier_optim = take_optim(&mut f, "classifier", &b.classifier_optim)?;

        let dd = &b.distill;
        let num = |f: &mut Fields, key: &str, default: f64, valid: fn(&f64) -> bool, expected: &str| {
            f.take("distill", key, default, |s| s.parse().map_err(|_| ()), valid, expected)
        };
        let tau_teacher = num(&mut f, "tau_teacher", dd.tau_teacher, pos, "a positive number")?;
        let tau_student = num(&mut f, "tau_student", dd.tau_student, pos, "a positive number")?;
        let lambda = num(&mut f, "lambda", dd.lambda, nonneg, "a non-negative number")?;
        let kd_lambda = num(&mut f, "kd_lambda", dd.kd_lambda, nonneg, "a non-negative number")?;
        let kd_tau = num(&mut f, "kd_tau", dd.kd_tau, pos, "a positive number")?;
        let gamma = num(&mut f, "gamma", b.gamma, nonneg, "a non-negative number")?;
        let weight_mode = f.take(
            "distill",
            "weight_mode",
            dd.weight_mode,
            |s| s.parse().map_err(|_| ()),
            |_| true,
            "one of pl, gap, none",
        )?;
        let max_impostors = f.take(
            "distill",
            "max_impostors",
            dd.max_impostors,
            parse_option,
            |v| v.is_none_or(|k| k >= 1),
            "`none` or an integer >= 1",
        )?;
        let reduction = f.take(
            "distill",
            "reduction",
            dd.reduction,
            parse_reduction,
            |_| true,
            "flat or per-anchor",
        )?;
        let freeze_embedding = f.take(
            "distill",
            "freeze_embedding",
            dd.freeze_embedding,
            |s| s.parse().map_err(|_| ()),
            |_| true,
            "true or false",
        )?;

        let ratios = f.take(
            "sweep",
            "ratios",
            d.sweep.ratios.clone(),
            parse_list,
            |v: &Vec<f64>| !v.is_empty() && v.iter().all(|r| (0.0..=1.0).contains(r)),
            "a non-empty list of numbers in [0, 1]",
        )?;
        let sweep_seeds = f.take(
            "sweep",
            "seeds",
            d.sweep.seeds.clone(),
            parse_list,
            |v: &Vec<u64>| !v.is_empty(),
            "a non-empty list of seeds",
        )?;
        let modes = f.take(
            "sweep",
            "modes",
            d.sweep.modes.clone(),
            parse_list,
            |v: &Vec<Method>| !v.is_empty(),
            "a non-empty list of method names",
        )?;

        let a = "analysis";
        let class_counts = f.take(
            a,
            "class_counts",
            d.analysis.class_counts.clone(),
            parse_list,
            |v: &Vec<usize>| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]) && v[0] >= 2,
            "a strictly increasing list of class counts >= 2",
        )?;
        let analysis_seeds = f.take(
            a,
            "seeds",
            d.analysis.seeds.clone(),
            parse_list,
            |v: &Vec<u64>| !v.is_empty(),
            "a non-empty list of seeds",
        )?;
        let study_lambda = f.take(
            a,
            "lambda",
            d.analysis.study_lambda,
            |s| s.parse().map_err(|_| ()),
            pos,
            "a positive number",
        )?;
        let joint_mode = f.take(
            a,
            "joint_mode",
            d.analysis.joint_mode,
            parse_joint,
            |_| true,
            "own or shared",
        )?;
        f.finish()?;

        Ok(Self {
            seed,
            mode,
            bench: BenchmarkConfig {
                data: ClusterConfig {
                    class_count,
                    dim,
                    per_class,
                    center_scale,
                    noise_sigma,
                    latent_dim,
                    nuisance_sigma,
                    seed: 0,
                },
                teacher_window,
                student_window,
                overlap_ratio,
                train_fraction,
                student_shots,
                hidden,
                embed_dim,
                teacher_optim,
                embed_optim,
                classifier_optim,
                distill: DistillConfig {
                    tau_teacher,
                    tau_student,
                    lambda,
                    weight_mode,
                    max_impostors,
                    reduction,
                    freeze_embedding,
                    kd_lambda,
                    kd_tau,
                },
                gamma,
            },
            sweep: SweepConfig {
                ratios,
                seeds: sweep_seeds,
                modes,
            },
            analysis: AnalysisConfig {
                class_counts,
                seeds: analysis_seeds,
                study_lambda,
                joint_mode,
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let b = &self.bench;
        let mut out = String::new();
        let _ = writeln!(out, "[run]\nseed = {}\nmode = {}\n", self.seed, self.mode);
        let _ = writeln!(out, "[dataset]");
        let _ = writeln!(out, "classes = {}", b.data.class_count);
        let _ = writeln!(out, "dim = {}", b.data.dim);
        let _ = writeln!(out, "per_class = {}", b.data.per_class);
        let _ = writeln!(out, "center_scale = {}", b.data.center_scale);
        let _ = writeln!(out, "sigma = {}", b.data.noise_sigma);
        let _ = writeln!(out, "latent_dim = {}", show_option(&b.data.latent_dim));
        let _ = writeln!(out, "nuisance_sigma = {}\n", show_option(&b.data.nuisance_sigma));
        let _ = writeln!(out, "[split]");
        let _ = writeln!(out, "teacher_window = {}", b.teacher_window);
        let _ = writeln!(out, "student_window = {}", b.student_window);
        let _ = writeln!(out, "overlap_ratio = {}", b.overlap_ratio);
        let _ = writeln!(out, "train_fraction = {}", b.train_fraction);
        let _ = writeln!(out, "student_shots = {}\n", show_option(&b.student_shots));
        let _ = writeln!(
            out,
            "[model]\nhidden = {}\nembed_dim = {}\n",
            join(&b.hidden),
            b.embed_dim
        );
        write_optim(&mut out, "teacher", &b.teacher_optim);
        write_optim(&mut out, "embedding", &b.embed_optim);
        write_optim(&mut out, "classifier", &b.classifier_optim);
        let d = &b.distill;
        let _ = writeln!(out, "[distill]");
        let _ = writeln!(out, "tau_teacher = {}", d.tau_teacher);
        let _ = writeln!(out, "tau_student = {}", d.tau_student);
        let _ = writeln!(out, "lambda = {}", d.lambda);
        let _ = writeln!(out, "weight_mode = {}", d.weight_mode);
        let _ = writeln!(out, "max_impostors = {}", show_option(&d.max_impostors));
        let _ = writeln!(out, "reduction = {}", show_reduction(d.reduction));
        let _ = writeln!(out, "freeze_embedding = {}", d.freeze_embedding);
        let _ = writeln!(out, "kd_lambda = {}", d.kd_lambda);
        let _ = writeln!(out, "kd_tau = {}", d.kd_tau);
        let _ = writeln!(out, "gamma = {}\n", b.gamma);
        let _ = writeln!(out, "[sweep]");
        let _ = writeln!(out, "ratios = {}", join(&self.sweep.ratios));
        let _ = writeln!(out, "seeds = {}", join(&self.sweep.seeds));
        let _ = writeln!(out, "modes = {}\n", join(&self.sweep.modes));
        let _ = writeln!(out, "[analysis]");
        let _ = writeln!(out, "class_counts = {}", join(&self.analysis.class_counts));
        let _ = writeln!(out, "seeds = {}", join(&self.analysis.seeds));
        let _ = writeln!(out, "lambda = {}", self.analysis.study_lambda);
        let _ = writeln!(out, "joint_mode = {}", show_joint(self.analysis.joint_mode));
        out
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.serialize().as_bytes()))
    }
}
