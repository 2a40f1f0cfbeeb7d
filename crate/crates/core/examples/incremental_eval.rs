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

//! Joins a distilled student with its teacher and reports the four
//! incremental criteria under both joint modes.

use gkd::eval::{JointClassifier, JointMode};
use gkd::experiment::{BenchmarkConfig, Experiment, Method};
use gkd::Result;

fn main() -> Result<()> {
    let mut cfg = BenchmarkConfig::default();
    cfg.data.per_class = 120;
    let exp = Experiment::new(&cfg, 0)?;
    let student = exp.run(Method::Refilled)?.model;
    let split = &exp.data.split;
    for mode in [JointMode::OwnEmbedding, JointMode::SharedStudentEmbedding] {
        let joint = JointClassifier::new(
            &student,
            &split.student_classes,
            &exp.teacher,
            &split.teacher_classes,
            mode,
        )?;
        let r = joint.evaluate(&exp.data.teacher.test, &exp.data.student.test)?;
        println!(
            "{mode:?}: new->all {:.4} old->all {:.4} overall {:.4} harmonic {:.4}",
            r.new_to_all, r.old_to_all, r.overall, r.harmonic
        );
    }
    Ok(())
}
