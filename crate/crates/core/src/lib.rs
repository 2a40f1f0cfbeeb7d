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

//! Knowledge distillation between small dense networks whose class sets
//! need not match.
//!
//! Distillation runs in two stages. The student's embedding first learns to
//! reproduce the teacher's relative comparisons inside semi-hard tuples;
//! its classifier is then trained with cross-entropy plus a local KD term
//! whose targets come from a nearest-class-mean classifier built on the
//! teacher's embedding. Teacher and student may share all, some or none of
//! their classes.

pub mod autodiff;
pub mod checkpoint;
pub mod classify;
pub mod cli;
pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, ParamSet, Var};
pub use error::{Error, Result};
pub use tensor::Matrix;
