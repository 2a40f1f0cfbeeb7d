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

//! Plain-text checkpoints.
//!
//! A checkpoint is a directory holding `manifest.txt` (one `name rows cols`
//! line per parameter) and one `<name>.txt` file per parameter whose first
//! line is `rows cols` followed by the row-major values, one row per line.
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MANIFEST: &str = "manifest.txt";

pub fn matrix_to_text(m: &Matrix) -> String {
    let mut s = format!("{} {}\n", m.rows(), m.cols());
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn matrix_from_text(text: &str) -> Result<Matrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "header", "empty file"))?;
    let (rows, cols) = parse_shape(header, 1)?;
    let mut data = Vec::with_capacity(rows * cols);
    for (i, tok) in lines.flat_map(str::split_whitespace).enumerate() {
        let v: f64 = tok
            .parse()
            .map_err(|_| parse_err(2 + i / cols.max(1), "value", &format!("bad float `{tok}`")))?;
        data.push(v);
    }
    if data.len() != rows * cols {
        return Err(parse_err(
            1,
            "header",
            &format!("expected {} values, found {}", rows * cols, data.len()),
        ));
    }
    Matrix::from_vec(rows, cols, data)
}

fn parse_shape(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace();
    let mut next = |field: &str| -> Result<usize> {
        it.next()
            .ok_or_else(|| parse_err(lineno, field, "missing"))?
            .parse()
            .map_err(|_| parse_err(lineno, field, "not a non-negative integer"))
    };
    Ok((next("rows")?, next("cols")?))
}

fn parse_err(line: usize, field: &str, message: &str) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.to_string(),
    }
}

pub fn save(params: &ParamSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (name, m) in params.iter() {
        writeln!(manifest, "{name} {} {}", m.rows(), m.cols()).unwrap();
        fs::write(dir.join(format!("{name}.txt")), matrix_to_text(m))?;
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ParamSet> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::MissingCheckpoint(dir.to_path_buf()));
    }
    let manifest = fs::read_to_string(manifest_path)?;
    let mut params = ParamSet::new();
    for (i, line) in manifest.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (name, shape) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(i + 1, "name", "expected `name rows cols`"))?;
        let (rows, cols) = parse_shape(shape, i + 1)?;
        let path = dir.join(format!("{name}.txt"));
        if !path.is_file() {
            return Err(Error::MissingCheckpoint(path));
        }
        let m = matrix_from_text(&fs::read_to_string(path)?)?;
        if m.shape() != (rows, cols) {
            return Err(Error::ShapeMismatch {
                op: "checkpoint::load",
                left: (rows, cols),
                right: m.shape(),
            });
        }
        params.insert(name, m);
    }
    Ok(params)
}

/// SHA-256 over the canonical text encoding of every parameter.
pub fn digest(params: &ParamSet) -> String {
    let mut h = Sha256::new();
    for (name, m) in params.iter() {
        h.update(name.as_bytes());
        h.update(matrix_to_text(m).as_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_format_layout() {
        let m = Matrix::from_rows(&[vec![1.0, -0.5], vec![1e-300, 3.25]]).unwrap();
        let s = matrix_to_text(&m);
        assert!(s.starts_with("2 2\n1.0 -0.5\n"));
        assert_eq!(matrix_from_text(&s).unwrap(), m);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.insert(
            "layer0.weight",
            Matrix::from_vec(2, 3, vec![0.1, 0.2, 1.0 / 3.0, -7.0, 1e-17, 2.5]).unwrap(),
        );
        p.insert(
            "head.weight",
            Matrix::from_vec(1, 1, vec![std::f64::consts::PI]).unwrap(),
        );
        save(&p, dir.path()).unwrap();
        let q = load(dir.path()).unwrap();
        assert_eq!(p, q);
        assert_eq!(digest(&p), digest(&q));
    }

    #[test]
    fn missing_manifest_is_missing_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load(&dir.path().join("nope")),
            Err(Error::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn truncated_values_are_rejected() {
        assert!(matrix_from_text("2 2\n1 2 3\n").is_err());
    }
}
