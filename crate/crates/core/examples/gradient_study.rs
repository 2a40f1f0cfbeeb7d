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

//! Compares head gradients of cross-entropy with and without a KD or local
//! KD term as the number of student classes grows.

use gkd::eval::{gradient_norm_study, GradientStudyConfig};
use gkd::experiment::{all_class_teacher, BenchmarkConfig};
use gkd::Result;

fn main() -> Result<()> {
    let cfg = BenchmarkConfig::default();
    let (split, teacher) = all_class_teacher(&cfg, 0)?;
    let study = GradientStudyConfig {
        seeds: vec![0, 1],
        ..GradientStudyConfig::default()
    };
    let report = gradient_norm_study(&split.train, &teacher, &cfg.model_spec(cfg.data.class_count), &study)?;
    println!("classes  kd-diff  lkd-diff");
    for i in 0..report.class_counts.len() {
        println!(
            "{:>7} {:>8.4} {:>9.4}",
            report.class_counts[i], report.kd_norm_diff[i], report.lkd_norm_diff[i]
        );
    }
    Ok(())
}
