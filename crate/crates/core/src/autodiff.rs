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

//! Reverse-mode differentiation over a recorded tape of matrix primitives.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter the
//! tape through [`Graph::param`]; everything else is a constant. One call to
//! [`Graph::backward`] consumes the tape and returns a gradient for every
//! registered parameter.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{dot, log_softmax_in_place, softmax_in_place, Matrix, NORM_FLOOR};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Ordered, named collection of parameter matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Matrix)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter, keeping first-insertion order.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.entries.iter_mut().map(|(n, m)| (n.as_str(), m))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    /// Global ℓ2 norm across every entry.
    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|(_, m)| m.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Gradients keyed by parameter name, in registration order.
pub type Gradients = ParamSet;

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    RowL2Normalize(Var),
    PairwiseDist(Var),
    Softmax(Var, f64),
    LogSoftmax(Var, f64),
    Log(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    KlRows(Var, Var),
    KlLogits {
        teacher: Var,
        student: Var,
        tau_teacher: f64,
        tau_student: f64,
    },
    CrossEntropy(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    SelectRows(Var, Vec<usize>),
    AddN(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// A single-use tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<String>,
    consumed: bool,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidHyperparameter {
            name: "temperature",
            value: tau,
        })
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Result<Var> {
        let value = value.check_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a parameter leaf. Registering the same name twice returns
    /// the same node, so gradients from every use accumulate.
    pub fn param(&mut self, name: &str, value: &Matrix) -> Var {
        if let Some(v) = self.params.get(name) {
            return *v;
        }
        self.nodes.push(Node {
            value: value.clone(),
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        v
    }

    /// Registers every entry of a parameter set, returning the handles by name.
    pub fn params(&mut self, set: &ParamSet) -> HashMap<String, Var> {
        set.iter()
            .map(|(name, m)| (name.to_string(), self.param(name, m)))
            .collect()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        self.push(value, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        self.push(value, Op::Mul(a, b), "mul")
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.value(a).add_row_broadcast(self.value(row))?;
        self.push(value, Op::AddRow(a, row), "add_row")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).scale(k);
        self.push(value, Op::Scale(a, k), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).relu();
        self.push(value, Op::Relu(a), "relu")
    }

    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).row_l2_normalize();
        self.push(value, Op::RowL2Normalize(a), "row_l2_normalize")
    }

    /// All-pairs Euclidean distances between rows of `a` (clamped at zero before the root).
    pub fn pairwise_dist(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).pairwise_distances();
        self.push(value, Op::PairwiseDist(a), "pairwise_dist")
    }

    pub fn softmax_rows(&mut self, a: Var, tau: f64) -> Result<Var> {
        check_tau(tau)?;
        let value = self.value(a).softmax_rows(tau);
        self.push(value, Op::Softmax(a, tau), "softmax_rows")
    }

    pub fn log_softmax_rows(&mut self, a: Var, tau: f64) -> Result<Var> {
        check_tau(tau)?;
        let value = self.value(a).log_softmax_rows(tau);
        self.push(value, Op::LogSoftmax(a, tau), "log_softmax_rows")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a), "log")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a), "exp")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let value = Matrix::scalar(m.mean());
        self.push(value, Op::Mean(a), "mean")
    }

    /// Row sums as an `N × 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let sums: Vec<f64> = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
        let value = Matrix::from_raw(m.rows(), 1, sums);
        self.push(value, Op::SumRows(a), "sum_rows")
    }

    /// Per-row `KL(p ‖ q)` for probability rows, as an `N × 1` column.
    pub fn kl_rows(&mut self, p: Var, q: Var) -> Result<Var> {
        let (pm, qm) = (self.value(p), self.value(q));
        if pm.shape() != qm.shape() {
            return Err(Error::ShapeMismatch {
                op: "kl_rows",
                left: pm.shape(),
                right: qm.shape(),
            });
        }
        for m in [pm, qm] {
            for r in 0..m.rows() {
                let s: f64 = m.row(r).iter().sum();
                if (s - 1.0).abs() > 1e-6 || m.row(r).iter().any(|v| *v < 0.0) {
                    return Err(Error::Domain(format!("kl_rows: row {r} is not on the simplex")));
                }
            }
        }
        let vals: Vec<f64> = (0..pm.rows())
            .map(|r| crate::tensor::kl_divergence(pm.row(r), qm.row(r)))
            .collect();
        let value = Matrix::from_raw(pm.rows(), 1, vals);
        self.push(value, Op::KlRows(p, q), "kl_rows")
    }

    /// Per-row `KL(softmax(t/τ_t) ‖ softmax(s/τ_s))` computed in log space, as an `N × 1` column.
    pub fn kl_logits(&mut self, teacher: Var, student: Var, tau_teacher: f64, tau_student: f64) -> Result<Var> {
        check_tau(tau_teacher)?;
        check_tau(tau_student)?;
        let (t, s) = (self.value(teacher), self.value(student));
        if t.shape() != s.shape() {
            return Err(Error::ShapeMismatch {
                op: "kl_logits",
                left: t.shape(),
                right: s.shape(),
            });
        }
        let log_p = t.log_softmax_rows(tau_teacher);
        let log_q = s.log_softmax_rows(tau_student);
        let vals: Vec<f64> = (0..t.rows())
            .map(|r| {
                log_p
                    .row(r)
                    .iter()
                    .zip(log_q.row(r))
                    .map(|(lp, lq)| lp.exp() * (lp - lq))
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect();
        let value = Matrix::from_raw(t.rows(), 1, vals);
        self.push(
            value,
            Op::KlLogits {
                teacher,
                student,
                tau_teacher,
                tau_student,
            },
            "kl_logits",
        )
    }

    /// Per-row softmax cross-entropy against integer targets, as an `N × 1` column.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if targets.len() != z.rows() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_rows",
                left: z.shape(),
                right: (targets.len(), 1),
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= z.cols()) {
            return Err(Error::Domain(format!(
                "target class {t} out of range for {} logits",
                z.cols()
            )));
        }
        let vals: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| crate::tensor::log_sum_exp(z.row(r), 1.0) - z.get(r, t))
            .collect();
        let value = Matrix::from_raw(z.rows(), 1, vals);
        self.push(value, Op::CrossEntropy(logits, targets.to_vec()), "cross_entropy_rows")
    }

    /// Picks entries of `a` by flat row-major index into a `1 × k` row.
    pub fn gather(&mut self, a: Var, flat: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&i) = flat.iter().find(|&&i| i >= m.len()) {
            return Err(Error::ShapeMismatch {
                op: "gather",
                left: m.shape(),
                right: (i, 1),
            });
        }
        let value = Matrix::from_raw(1, flat.len(), flat.iter().map(|&i| m.data()[i]).collect());
        self.push(value, Op::Gather(a, flat.to_vec()), "gather")
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&c) = cols.iter().find(|&&c| c >= m.cols()) {
            return Err(Error::ShapeMismatch {
                op: "select_cols",
                left: m.shape(),
                right: (1, c),
            });
        }
        let value = m.select_cols(cols);
        self.push(value, Op::SelectCols(a, cols.to_vec()), "select_cols")
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&r) = rows.iter().find(|&&r| r >= m.rows()) {
            return Err(Error::ShapeMismatch {
                op: "select_rows",
                left: m.shape(),
                right: (r, 1),
            });
        }
        let value = m.select_rows(rows);
        self.push(value, Op::SelectRows(a, rows.to_vec()), "select_rows")
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, items: &[Var]) -> Result<Var> {
        let first = items
            .first()
            .ok_or_else(|| Error::Structural("add_n of an empty list".into()))?;
        let mut acc = self.value(*first).clone();
        for v in &items[1..] {
            let m = self.value(*v);
            if m.shape() != acc.shape() {
                return Err(Error::ShapeMismatch {
                    op: "add_n",
                    left: acc.shape(),
                    right: m.shape(),
                });
            }
            acc.add_assign(m);
        }
        self.push(acc, Op::AddN(items.to_vec()), "add_n")
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: self.value(loss).shape(),
                right: (1, 1),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Param = node.op {
                grads[idx] = Some(g);
                continue;
            }
            for (parent, contribution) in self.local_grads(idx, &g)? {
                let contribution = contribution.check_finite("backward")?;
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let mut out = Gradients::new();
        for name in &self.param_order {
            let v = self.params[name];
            let g = grads[v.0].take().unwrap_or_else(|| {
                let (r, c) = self.value(v).shape();
                Matrix::zeros(r, c)
            });
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn local_grads(&self, idx: usize, g: &Matrix) -> Result<Vec<(Var, Matrix)>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let grads = match &node.op {
            Op::Constant | Op::Param => vec![],
            Op::MatMul(a, b) => vec![(*a, g.matmul_t(val(b))?), (*b, val(a).t_matmul(g)?)],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => vec![(*a, g.hadamard(val(b))?), (*b, g.hadamard(val(a))?)],
            Op::AddRow(a, row) => {
                let mut col_sums = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (s, v) in col_sums.iter_mut().zip(g.row(r)) {
                        *s += v;
                    }
                }
                vec![(*a, g.clone()), (*row, Matrix::from_raw(1, g.cols(), col_sums))]
            }
            Op::Scale(a, k) => vec![(*a, g.scale(*k))],
            Op::Relu(a) => vec![(
                *a,
                g.zip_map(val(a), "relu_grad", |gv, x| if x > 0.0 { gv } else { 0.0 })?,
            )],
            Op::RowL2Normalize(a) => {
                let x = val(a);
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = dot(x.row(r), x.row(r)).sqrt();
                    let row = dx.row_mut(r);
                    if norm < NORM_FLOOR {
                        for (d, gv) in row.iter_mut().zip(g.row(r)) {
                            *d = gv / NORM_FLOOR;
                        }
                        continue;
                    }
                    let y = out.row(r);
                    let gy = dot(g.row(r), y);
                    for ((d, gv), yv) in row.iter_mut().zip(g.row(r)).zip(y) {
                        *d = (gv - yv * gy) / norm;
                    }
                }
                vec![(*a, dx)]
            }
            Op::PairwiseDist(a) => {
                // d_ij depends on rows i and j; zero distance gets subgradient 0.
                let x = val(a);
                let n = x.rows();
                let mut dx = Matrix::zeros(n, x.cols());
                for i in 0..n {
                    for j in 0..n {
                        let d = out.get(i, j);
                        let gij = g.get(i, j);
                        if d <= 0.0 || gij == 0.0 {
                            continue;
                        }
                        let coef = gij / d;
                        for c in 0..x.cols() {
                            let diff = x.get(i, c) - x.get(j, c);
                            dx.data_mut()[i * x.cols() + c] += coef * diff;
                            dx.data_mut()[j * x.cols() + c] -= coef * diff;
                        }
                    }
                }
                vec![(*a, dx)]
            }
            Op::Softmax(a, tau) => {
                let mut dx = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gy = dot(g.row(r), y);
                    for ((d, gv), yv) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(y) {
                        *d = yv * (gv - gy) / tau;
                    }
                }
                vec![(*a, dx)]
            }
            Op::LogSoftmax(a, tau) => {
                let mut dx = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    for ((d, gv), ly) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(out.row(r)) {
                        *d = (gv - ly.exp() * gsum) / tau;
                    }
                }
                vec![(*a, dx)]
            }
            Op::Log(a) => vec![(*a, g.zip_map(val(a), "log_grad", |gv, x| gv / x)?)],
            Op::Exp(a) => vec![(*a, g.hadamard(out)?)],
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                vec![(*a, Matrix::filled(r, c, g.item()))]
            }
            Op::Mean(a) => {
                let (r, c) = val(a).shape();
                vec![(*a, Matrix::filled(r, c, g.item() / (r * c) as f64))]
            }
            Op::SumRows(a) => {
                let (r, c) = val(a).shape();
                let mut dx = Matrix::zeros(r, c);
                for i in 0..r {
                    dx.row_mut(i).iter_mut().for_each(|d| *d = g.get(i, 0));
                }
                vec![(*a, dx)]
            }
            Op::KlRows(p, q) => {
                let (pm, qm) = (val(p), val(q));
                let mut dp = Matrix::zeros(pm.rows(), pm.cols());
                let mut dq = Matrix::zeros(pm.rows(), pm.cols());
                for r in 0..pm.rows() {
                    let gr = g.get(r, 0);
                    for c in 0..pm.cols() {
                        let (pv, qv) = (pm.get(r, c), qm.get(r, c));
                        let i = r * pm.cols() + c;
                        if pv > 0.0 {
                            dp.data_mut()[i] = gr * (pv.ln() - qv.ln() + 1.0);
                            dq.data_mut()[i] = -gr * pv / qv;
                        }
                    }
                }
                vec![(*p, dp), (*q, dq)]
            }
            Op::KlLogits {
                teacher,
                student,
                tau_teacher,
                tau_student,
            } => {
                let (t, s) = (val(teacher), val(student));
                let mut dt = Matrix::zeros(t.rows(), t.cols());
                let mut ds = Matrix::zeros(s.rows(), s.cols());
                for r in 0..t.rows() {
                    let gr = g.get(r, 0);
                    let mut log_p = t.row(r).to_vec();
                    log_softmax_in_place(&mut log_p, *tau_teacher);
                    let mut q = s.row(r).to_vec();
                    softmax_in_place(&mut q, *tau_student);
                    let kl = out.get(r, 0);
                    let log_q: Vec<f64> = {
                        let mut lq = s.row(r).to_vec();
                        log_softmax_in_place(&mut lq, *tau_student);
                        lq
                    };
                    for c in 0..t.cols() {
                        let p = log_p[c].exp();
                        ds.row_mut(r)[c] = gr * (q[c] - p) / tau_student;
                        dt.row_mut(r)[c] = gr * p * ((log_p[c] - log_q[c]) - kl) / tau_teacher;
                    }
                }
                vec![(*teacher, dt), (*student, ds)]
            }
            Op::CrossEntropy(logits, targets) => {
                let z = val(logits);
                let mut dz = z.softmax_rows(1.0);
                for (r, &t) in targets.iter().enumerate() {
                    let gr = g.get(r, 0);
                    let row = dz.row_mut(r);
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= gr);
                }
                vec![(*logits, dz)]
            }
            Op::Gather(a, flat) => {
                let (r, c) = val(a).shape();
                let mut dx = Matrix::zeros(r, c);
                for (k, &i) in flat.iter().enumerate() {
                    dx.data_mut()[i] += g.data()[k];
                }
                vec![(*a, dx)]
            }
            Op::SelectCols(a, cols) => {
                let (r, c) = val(a).shape();
                let mut dx = Matrix::zeros(r, c);
                for i in 0..r {
                    for (k, &col) in cols.iter().enumerate() {
                        dx.data_mut()[i * c + col] += g.get(i, k);
                    }
                }
                vec![(*a, dx)]
            }
            Op::SelectRows(a, rows) => {
                let (r, c) = val(a).shape();
                let mut dx = Matrix::zeros(r, c);
                for (k, &row) in rows.iter().enumerate() {
                    for (d, gv) in dx.row_mut(row).iter_mut().zip(g.row(k)) {
                        *d += gv;
                    }
                }
                vec![(*a, dx)]
            }
            Op::AddN(items) => items.iter().map(|v| (*v, g.clone())).collect(),
        };
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let w = m(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0]]);
        let mut g = Graph::new();
        let wv = g.param("w", &w);
        let loss = g.sum(wv).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap(), &Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn squared_norm_gradient_is_twice_input() {
        let x = m(&[vec![1.5, -2.0, 0.25]]);
        let mut g = Graph::new();
        let xv = g.param("x", &x);
        let sq = g.mul(xv, xv).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("x").unwrap(), &x.scale(2.0));
    }

    #[test]
    fn second_backward_is_stale() {
        let mut g = Graph::new();
        let w = g.param("w", &Matrix::scalar(2.0));
        let loss = g.sum(w).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::StaleTape)));
    }

    #[test]
    fn unused_param_gets_zero_gradient_of_same_shape() {
        let mut g = Graph::new();
        let a = g.param("a", &Matrix::scalar(2.0));
        g.param("unused", &Matrix::filled(3, 2, 1.0));
        let loss = g.sum(a).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("unused").unwrap(), &Matrix::zeros(3, 2));
    }

    #[test]
    fn repeated_param_registration_accumulates() {
        let mut g = Graph::new();
        let a = g.param("a", &Matrix::scalar(2.0));
        let b = g.param("a", &Matrix::scalar(2.0));
        assert_eq!(a, b);
        let s = g.add(a, b).unwrap();
        let loss = g.sum(s).unwrap();
        assert_eq!(g.backward(loss).unwrap().get("a").unwrap().item(), 2.0);
    }

    #[test]
    fn non_positive_temperature_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::zeros(1, 3));
        assert!(matches!(
            g.softmax_rows(a, 0.0),
            Err(Error::InvalidHyperparameter { .. })
        ));
        assert!(matches!(
            g.kl_logits(a, a, -1.0, 1.0),
            Err(Error::InvalidHyperparameter { .. })
        ));
    }

    #[test]
    fn log_of_zero_is_numeric_overflow() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::zeros(1, 1));
        match g.log(a) {
            Err(Error::NumericOverflow { op }) => assert_eq!(op, "log"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kl_rows_rejects_off_simplex() {
        let mut g = Graph::new();
        let p = g.constant(m(&[vec![0.5, 0.6]]));
        assert!(matches!(g.kl_rows(p, p), Err(Error::Domain(_))));
    }

    #[test]
    fn kl_rows_identity_is_zero() {
        let mut g = Graph::new();
        let p = g.constant(m(&[vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]]));
        let kl = g.kl_rows(p, p).unwrap();
        assert!(g.value(kl).data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn zero_distance_has_zero_subgradient() {
        let x = m(&[vec![0.3, 0.4], vec![0.3, 0.4], vec![1.0, 0.0]]);
        let mut g = Graph::new();
        let xv = g.param("x", &x);
        let d = g.pairwise_dist(xv).unwrap();
        let loss = g.sum(d).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get("x").unwrap().is_finite());
    }
}
