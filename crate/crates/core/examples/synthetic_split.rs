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

//! Generates the Gaussian-cluster suite and shows which overlap ratios the
//! sliding-window split can realize for a few window sizes.

use gkd::data::{attainable_ratios, make_gaussian_clusters, sliding_window_split_unequal, ClusterConfig};
use gkd::Result;

fn main() -> Result<()> {
    let data = make_gaussian_clusters(&ClusterConfig {
        latent_dim: Some(8),
        nuisance_sigma: Some(4.0),
        center_scale: 3.0,
        noise_sigma: 1.0,
        per_class: 100,
        ..ClusterConfig::default()
    })?;
    println!(
        "{} instances, {} classes, dim {}",
        data.len(),
        data.class_count,
        data.dim()
    );

    for (t, s) in [(12, 8), (12, 10), (10, 10)] {
        let ratios: Vec<String> = attainable_ratios(20, t, s).iter().map(|r| format!("{r:.3}")).collect();
        println!("teacher {t:>2} student {s:>2}: {}", ratios.join(" "));
    }
    let split = sliding_window_split_unequal(20, 12, 8, 0.5)?;
    println!("teacher classes {:?}", split.teacher_classes);
    println!("student classes {:?}", split.student_classes);
    println!("measured overlap {}", split.measured_overlap());
    Ok(())
}
