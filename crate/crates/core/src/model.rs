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

//! Multi-layer perceptrons split into an embedding `φ` and a bias-free linear head `W`.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ParamSet, Var};
use crate::data::SeedStream;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const HEAD: &str = "head.weight";

/// Layer widths of an [`MlpModel`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub classes: usize,
}

/// `f = W ∘ φ` where `φ` is a stack of affine + ReLU layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    params: ParamSet,
    layers: usize,
}

/// Nodes produced by [`MlpModel::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub embedding: Var,
    pub logits: Var,
}

fn weight_name(i: usize) -> String {
    format!("layer{i}.weight")
}

fn bias_name(i: usize) -> String {
    format!("layer{i}.bias")
}

fn he_normal(fan_in: usize, fan_out: usize, stream: &mut SeedStream) -> Matrix {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let data = (0..fan_in * fan_out).map(|_| dist.sample(stream.rng())).collect();
    Matrix::from_raw(fan_in, fan_out, data)
}

impl MlpModel {
    /// He-normal weights, zero biases. Deterministic in `seed`.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        if spec.input_dim == 0 || spec.embed_dim == 0 || spec.classes == 0 || spec.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!("degenerate model spec {spec:?}")));
        }
        let mut stream = SeedStream::derived(seed, "init");
        let mut params = ParamSet::new();
        let mut widths = vec![spec.input_dim];
        widths.extend(&spec.hidden);
        widths.push(spec.embed_dim);
        for (i, w) in widths.windows(2).enumerate() {
            params.insert(weight_name(i), he_normal(w[0], w[1], &mut stream));
            params.insert(bias_name(i), Matrix::zeros(1, w[1]));
        }
        let head_dist = Normal::new(0.0, (1.0 / spec.embed_dim as f64).sqrt()).expect("positive std");
        let head = (0..spec.embed_dim * spec.classes)
            .map(|_| head_dist.sample(stream.rng()))
            .collect();
        params.insert(HEAD, Matrix::from_raw(spec.embed_dim, spec.classes, head));
        Ok(Self {
            params,
            layers: widths.len() - 1,
        })
    }

    /// Rebuilds a model from named parameters (e.g. a loaded checkpoint).
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let mut layers = 0;
        while params.get(&weight_name(layers)).is_some() {
            layers += 1;
        }
        if layers == 0 {
            return Err(Error::Structural("no layer0.weight in parameter set".into()));
        }
        let mut prev = params.get(&weight_name(0)).unwrap().cols();
        for i in 0..layers {
            let w = params.get(&weight_name(i)).unwrap();
            let b = params
                .get(&bias_name(i))
                .ok_or_else(|| Error::Structural(format!("missing {}", bias_name(i))))?;
            if (i > 0 && w.rows() != prev) || b.shape() != (1, w.cols()) {
                return Err(Error::Structural(format!("layer {i} shapes do not chain")));
            }
            prev = w.cols();
        }
        let head = params
            .get(HEAD)
            .ok_or_else(|| Error::Structural(format!("missing {HEAD}")))?;
        if head.rows() != prev {
            return Err(Error::Structural("head does not match embedding width".into()));
        }
        if params.len() != 2 * layers + 1 {
            return Err(Error::Structural("unexpected extra parameters".into()));
        }
        Ok(Self { params, layers })
    }

    pub fn spec(&self) -> ModelSpec {
        let w0 = self.params.get(&weight_name(0)).unwrap();
        ModelSpec {
            input_dim: w0.rows(),
            hidden: (0..self.layers - 1)
                .map(|i| self.params.get(&weight_name(i)).unwrap().cols())
                .collect(),
            embed_dim: self.embed_dim(),
            classes: self.class_count(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn head(&self) -> &Matrix {
        self.params.get(HEAD).unwrap()
    }

    pub fn class_count(&self) -> usize {
        self.head().cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.head().rows()
    }

    /// Whether a parameter belongs to the embedding `φ` (as opposed to the head).
    pub fn is_embedding_param(name: &str) -> bool {
        name != HEAD
    }

    /// Same embedding, freshly initialized head over `classes` outputs.
    pub fn with_new_head(&self, classes: usize, seed: u64) -> Result<Self> {
        let mut spec = self.spec();
        spec.classes = classes;
        let fresh = Self::new(&spec, seed)?;
        let mut params = self.params.clone();
        params.insert(HEAD, fresh.head().clone());
        Ok(Self {
            params,
            layers: self.layers,
        })
    }

    /// Records the forward pass on `g`, registering every parameter.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Forward> {
        let vars = g.params(&self.params);
        self.forward_with(g, x, &vars)
    }

    /// Records the embedding only; the head is not registered.
    pub fn forward_embedding(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.layers {
            let w = g.param(&weight_name(i), self.params.get(&weight_name(i)).unwrap());
            let b = g.param(&bias_name(i), self.params.get(&bias_name(i)).unwrap());
            let z = g.matmul(h, w)?;
            let z = g.add_row(z, b)?;
            h = g.relu(z)?;
        }
        Ok(h)
    }

    fn forward_with(&self, g: &mut Graph, x: Var, vars: &HashMap<String, Var>) -> Result<Forward> {
        let mut h = x;
        for i in 0..self.layers {
            let z = g.matmul(h, vars[&weight_name(i)])?;
            let z = g.add_row(z, vars[&bias_name(i)])?;
            h = g.relu(z)?;
        }
        let logits = g.matmul(h, vars[HEAD])?;
        Ok(Forward { embedding: h, logits })
    }

    /// Tape-free embedding.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for i in 0..self.layers {
            let w = self.params.get(&weight_name(i)).unwrap();
            let b = self.params.get(&bias_name(i)).unwrap();
            h = h.matmul(w)?.add_row_broadcast(b)?.relu();
        }
        Ok(h)
    }

    /// Tape-free logits.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.embed(x)?.matmul(self.head())
    }

    /// Tape-free class predictions, ties to the lowest class.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.argmax_rows())
    }
}

/// A trained model that only offers inference. Nothing in the crate can
/// register a `FrozenModel`'s parameters on a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenModel(MlpModel);

impl FrozenModel {
    pub fn new(model: MlpModel) -> Self {
        Self(model)
    }

    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.0.embed(x)
    }

    /// ℓ2-normalized embedding rows.
    pub fn embed_normalized(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.0.embed(x)?.row_l2_normalize())
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.0.logits(x)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        self.0.predict(x)
    }

    pub fn head(&self) -> &Matrix {
        self.0.head()
    }

    pub fn params(&self) -> &ParamSet {
        self.0.params()
    }

    pub fn class_count(&self) -> usize {
        self.0.class_count()
    }

    pub fn embed_dim(&self) -> usize {
        self.0.embed_dim()
    }

    /// A trainable copy; the frozen original is untouched.
    pub fn thaw_copy(&self) -> MlpModel {
        self.0.clone()
    }
}
