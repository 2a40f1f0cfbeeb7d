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

//! How well the adaptive weights separate instances of classes the teacher
//! saw from the rest.

use gkd::eval::weight_study;
use gkd::experiment::{BenchmarkConfig, Experiment};
use gkd::Result;

fn main() -> Result<()> {
    let cfg = BenchmarkConfig {
        student_window: 10,
        overlap_ratio: 0.6,
        ..BenchmarkConfig::default()
    };
    let exp = Experiment::new(&cfg, 0)?;
    let study = weight_study(&exp.knowledge.scores, &exp.seen_flags(), 1.0)?;
    println!("AUC {:.4} over {} instances", study.auc, study.weights.len());
    println!("bin       seen unseen");
    for (i, (s, u)) in study.histogram.iter().enumerate() {
        if s + u > 0 {
            println!(
                "{:.2}-{:.2} {s:>5} {u:>6}",
                i as f64 * gkd::eval::HISTOGRAM_BIN,
                (i + 1) as f64 * gkd::eval::HISTOGRAM_BIN
            );
        }
    }
    Ok(())
}
