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

//! Mines semi-hard tuples on a toy embedding and splits one tuple's
//! divergence into its rectification and logistic parts.

use gkd::embed::{kl_binary, kl_decomposition_k1, mine_semihard_tuples, tuple_probability};
use gkd::{Matrix, Result};

fn main() -> Result<()> {
    let z = Matrix::from_rows(&[
        vec![1.0, 0.0],
        vec![0.8, 0.6],
        vec![0.0, 1.0],
        vec![-0.6, 0.8],
        vec![-1.0, 0.0],
    ])?;
    let labels = [0, 0, 1, 1, 0];
    let mined = mine_semihard_tuples(&z, &labels, Some(2))?;
    for t in &mined.tuples {
        let p = tuple_probability(&z, t, 1.0)?;
        let probs: Vec<String> = p.probs.iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "anchor {} positive {} impostors {:?} -> [{}]",
            t.anchor,
            t.positive,
            t.impostors,
            probs.join(", ")
        );
    }

    let (p, dp, dn) = (0.8, 0.4, 1.1);
    let d = kl_decomposition_k1(p, dp, dn)?;
    println!(
        "rectification {:.6} logistic {:.6} constant {:.6}",
        d.rectification, d.logistic, d.entropy_constant
    );
    println!("sum {:.12} direct {:.12}", d.total(), kl_binary(p, dn - dp));
    Ok(())
}
