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

//! A small overlap sweep written to CSV.
//!
//!     cargo run --release --example overlap_sweep -- sweep.csv

use gkd::experiment::{sweep_overlap, write_sweep_csv, BenchmarkConfig, Method};
use gkd::Result;

fn main() -> Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "sweep.csv".into());
    let mut cfg = BenchmarkConfig::default();
    cfg.data.per_class = 120;
    for o in [&mut cfg.teacher_optim, &mut cfg.embed_optim, &mut cfg.classifier_optim] {
        *o = o.with_epochs(15);
    }
    let rows = sweep_overlap(&cfg, &[0.0, 0.5, 1.0], &[0, 1], &[Method::Vanilla, Method::Refilled])?;
    for r in &rows {
        println!("{:<5} {} {:<9} {:.4}", r.ratio, r.seed, r.method, r.accuracy);
    }
    write_sweep_csv(std::path::Path::new(&path), &rows)?;
    println!("wrote {path}");
    Ok(())
}
