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

use std::path::PathBuf;

use thiserror::Error;

pub type Shape = (usize, usize);

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("invalid hyperparameter {name} = {value}")]
    InvalidHyperparameter { name: &'static str, value: f64 },

    #[error("non-finite value produced by {op}")]
    NumericOverflow { op: &'static str },

    #[error("tape already consumed by a backward sweep; re-run the forward pass")]
    StaleTape,

    #[error("finite-difference oracle unusable: loss function is not deterministic ({first} != {second})")]
    OracleUnusable { first: f64, second: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("overlap ratio {ratio} is not attainable with window {window}; attainable: {attainable:?}")]
    InvalidRatio {
        ratio: f64,
        window: usize,
        attainable: Vec<f64>,
    },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid batch config: {0}")]
    InvalidBatchConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("class {0} has no instances")]
    MissingClass(usize),

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("training diverged in stage {stage} at epoch {epoch}")]
    TrainingDiverged { stage: String, epoch: usize },

    #[error("stage {0} is degenerate: no batch produced a usable tuple during an epoch")]
    StageDegenerate(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("AUC undefined: all flags belong to a single group")]
    AucUndefined,

    #[error("missing checkpoint at {0}")]
    MissingCheckpoint(PathBuf),

    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
