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

//! Parses an experiment config, prints its canonical form and hash, and
//! shows the error a malformed line produces.

use gkd::config::ExperimentConfig;

fn main() {
    let text = "[run]\nseed = 3\nmode = refilled-minus\n\n[split]\noverlap_ratio = 0.25\n";
    let cfg = ExperimentConfig::parse(text).expect("valid config");
    print!("{}", cfg.serialize());
    println!("hash {}", cfg.hash());
    match ExperimentConfig::parse("[split]\noverlap_ratio = 1.5\n") {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
}
