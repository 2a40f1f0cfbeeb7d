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

//! Trains one teacher on a reduced benchmark and compares every student
//! method that applies to a partially overlapping class split.
//!
//!     cargo run --release --example distill_methods [seed]

use gkd::experiment::{BenchmarkConfig, Experiment, Method};
use gkd::Result;

fn main() -> Result<()> {
    env_logger::init();
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let mut cfg = BenchmarkConfig::default();
    cfg.data.per_class = 120;
    for o in [&mut cfg.teacher_optim, &mut cfg.embed_optim, &mut cfg.classifier_optim] {
        *o = o.with_epochs(20);
    }
    let exp = Experiment::new(&cfg, seed)?;
    let teacher = exp.teacher_log.last().and_then(|r| r.test_acc).unwrap_or(f64::NAN);
    println!("teacher test accuracy {teacher:.4}");
    for m in [
        Method::Vanilla,
        Method::RefilledLkd,
        Method::RefilledEmb,
        Method::RefilledMinus,
        Method::Refilled,
        Method::OneStage,
    ] {
        println!("{:<15} {:.4}", m.name(), exp.run(m)?.test_accuracy);
    }
    Ok(())
}
