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

//! Synthetic labeled data, class-window splits and class-balanced batches.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Deterministic random stream. Every random decision in the crate draws from one of these.
#[derive(Clone, Debug)]
pub struct SeedStream(ChaCha8Rng);

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream derived from `seed` and a label.
    pub fn derived(seed: u64, tag: &str) -> Self {
        Self::new(derive_seed(seed, tag))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.random()
    }
}

/// Mixes a seed with a tag (FNV-1a over the tag, then splitmix64).
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Instances with integer labels in `[0, class_count)`.
///
/// `class_ids[c]` is the id class `c` had in the dataset it was carved
/// from, and `source_index[i]` the original row of instance `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub instances: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub class_ids: Vec<usize>,
    pub source_index: Vec<usize>,
}

impl LabeledDataset {
    /// Validates labels and requires at least two instances per class.
    pub fn new(instances: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let ds = Self::with_min_count(instances, labels, class_count, 2)?;
        Ok(ds)
    }

    fn with_min_count(instances: Matrix, labels: Vec<usize>, class_count: usize, min: usize) -> Result<Self> {
        if labels.len() != instances.rows() {
            return Err(Error::ShapeMismatch {
                op: "LabeledDataset::new",
                left: instances.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidConfig(format!("label {l} outside [0, {class_count})")));
        }
        let mut counts = vec![0usize; class_count];
        labels.iter().for_each(|&l| counts[l] += 1);
        if let Some(c) = counts.iter().position(|&n| n < min) {
            return Err(Error::InvalidConfig(format!(
                "class {c} has {} instances, need at least {min}",
                counts[c]
            )));
        }
        let n = labels.len();
        Ok(Self {
            instances,
            labels,
            class_count,
            class_ids: (0..class_count).collect(),
            source_index: (0..n).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.instances.cols()
    }

    /// Row indices of every class, in row order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.class_indices().iter().map(Vec::len).collect()
    }

    /// Instance rows and labels for a batch of indices.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.instances.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Labels mapped back through `class_ids`.
    pub fn original_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| self.class_ids[l]).collect()
    }

    /// Writes `label,dim=D` followed by one `label,f1,...,fD` row per instance.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
        w.write_record(["label".to_string(), format!("dim={}", self.dim())])?;
        for (i, &l) in self.labels.iter().enumerate() {
            let mut rec = vec![l.to_string()];
            rec.extend(self.instances.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        let headers = r.headers()?.clone();
        let dim: usize = headers
            .get(1)
            .and_then(|h| h.strip_prefix("dim="))
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                field: "dim".into(),
                message: "expected header `label,dim=D`".into(),
            })?;
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != dim + 1 {
                return Err(Error::Parse {
                    line,
                    field: "row".into(),
                    message: format!("expected {} fields, found {}", dim + 1, rec.len()),
                });
            }
            labels.push(rec[0].parse().map_err(|_| Error::Parse {
                line,
                field: "label".into(),
                message: format!("bad label `{}`", &rec[0]),
            })?);
            for (j, f) in rec.iter().skip(1).enumerate() {
                data.push(f.parse().map_err(|_| Error::Parse {
                    line,
                    field: format!("f{}", j + 1),
                    message: format!("bad float `{f}`"),
                })?);
            }
        }
        let class_count = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(Matrix::from_vec(labels.len(), dim, data)?, labels, class_count)
    }
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfig {
    pub class_count: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Standard deviation of each center coordinate.
    pub center_scale: f64,
    /// Isotropic within-class noise.
    pub noise_sigma: f64,
    /// Centers vary only in the first `latent_dim` coordinates; `None` uses all of them.
    pub latent_dim: Option<usize>,
    /// Noise on the coordinates outside the latent subspace; `None` uses `noise_sigma`.
    pub nuisance_sigma: Option<f64>,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            class_count: 20,
            dim: 16,
            per_class: 60,
            center_scale: 1.0,
            noise_sigma: 0.5,
            latent_dim: None,
            nuisance_sigma: None,
            seed: 0,
        }
    }
}

/// Draws `per_class` instances around each of `class_count` random centers.
/// Rows are grouped by class. All coordinates are divided by one constant so
/// the expected per-coordinate variance, averaged over coordinates, is 1.
pub fn make_gaussian_clusters(cfg: &ClusterConfig) -> Result<LabeledDataset> {
    if cfg.class_count < 2 {
        return Err(Error::InvalidConfig("class_count must be at least 2".into()));
    }
    if cfg.per_class < 2 {
        return Err(Error::InvalidConfig("per_class must be at least 2".into()));
    }
    if cfg.dim == 0 {
        return Err(Error::InvalidConfig("dim must be positive".into()));
    }
    let nuisance_sigma = cfg.nuisance_sigma.unwrap_or(cfg.noise_sigma);
    if [cfg.noise_sigma, cfg.center_scale, nuisance_sigma]
        .iter()
        .any(|v| v.is_nan() || *v <= 0.0)
    {
        return Err(Error::InvalidConfig(
            "noise_sigma and center_scale must be positive".into(),
        ));
    }
    let latent = cfg.latent_dim.unwrap_or(cfg.dim);
    if latent == 0 || latent > cfg.dim {
        return Err(Error::InvalidConfig(format!("latent_dim must be in [1, {}]", cfg.dim)));
    }

    let center_dist = Normal::new(0.0, cfg.center_scale).expect("positive scale");
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("positive sigma");
    let nuisance = Normal::new(0.0, nuisance_sigma).expect("positive sigma");
    let mut centers_rng = SeedStream::derived(cfg.seed, "centers");
    let centers: Vec<Vec<f64>> = (0..cfg.class_count)
        .map(|_| {
            (0..cfg.dim)
                .map(|j| {
                    if j < latent {
                        center_dist.sample(centers_rng.rng())
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let expected_var = (latent as f64 * (cfg.center_scale.powi(2) + cfg.noise_sigma.powi(2))
        + (cfg.dim - latent) as f64 * nuisance_sigma.powi(2))
        / cfg.dim as f64;
    let unit = expected_var.sqrt().recip();

    let mut noise_rng = SeedStream::derived(cfg.seed, "noise");
    let n = cfg.class_count * cfg.per_class;
    let mut data = Vec::with_capacity(n * cfg.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..cfg.per_class {
            for (j, m) in center.iter().enumerate() {
                let dist = if j < latent { &noise } else { &nuisance };
                data.push((m + dist.sample(noise_rng.rng())) * unit);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, cfg.dim, data)?, labels, cfg.class_count)
}

/// Teacher and student class windows over a shared class universe.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub teacher_classes: Vec<usize>,
    pub student_classes: Vec<usize>,
    pub overlap_ratio: f64,
}

impl SplitSpec {
    /// `|teacher ∩ student| / |student|`, recomputed from the lists.
    pub fn measured_overlap(&self) -> f64 {
        let t: BTreeSet<_> = self.teacher_classes.iter().collect();
        let shared = self.student_classes.iter().filter(|c| t.contains(c)).count();
        shared as f64 / self.student_classes.len() as f64
    }

    /// Whether each student class was among the teacher's classes.
    pub fn seen_flags(&self) -> Vec<bool> {
        self.student_classes
            .iter()
            .map(|c| self.teacher_classes.contains(c))
            .collect()
    }

    /// Writes `teacher_classes.csv` and `student_classes.csv` (header `class_id`).
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        for (file, list) in [
            ("teacher_classes.csv", &self.teacher_classes),
            ("student_classes.csv", &self.student_classes),
        ] {
            let mut w = csv::Writer::from_path(dir.join(file))?;
            w.write_record(["class_id"])?;
            for c in list {
                w.write_record([c.to_string()])?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

const RATIO_EPS: f64 = 1e-9;

/// Equal-width sliding windows: teacher on `[0, window)`, student shifted by
/// `(1 − overlap_ratio) · window`.
pub fn sliding_window_split(total_classes: usize, window: usize, overlap_ratio: f64) -> Result<SplitSpec> {
    sliding_window_split_unequal(total_classes, window, window, overlap_ratio)
}

/// Sliding windows with independent teacher and student widths. The student
/// window starts where exactly `overlap_ratio · student_window` of its
/// classes fall inside the teacher's window.
pub fn sliding_window_split_unequal(
    total_classes: usize,
    teacher_window: usize,
    student_window: usize,
    overlap_ratio: f64,
) -> Result<SplitSpec> {
    if teacher_window == 0 || student_window == 0 || teacher_window > total_classes {
        return Err(Error::InvalidConfig(format!(
            "windows ({teacher_window}, {student_window}) invalid for {total_classes} classes"
        )));
    }
    let attainable = attainable_ratios(total_classes, teacher_window, student_window);
    let matched = attainable.iter().find(|r| (*r - overlap_ratio).abs() < RATIO_EPS);
    let Some(&ratio) = matched else {
        return Err(Error::InvalidRatio {
            ratio: overlap_ratio,
            window: student_window,
            attainable,
        });
    };
    let shared = (ratio * student_window as f64).round() as usize;
    let start = teacher_window - shared;
    Ok(SplitSpec {
        teacher_classes: (0..teacher_window).collect(),
        student_classes: (start..start + student_window).collect(),
        overlap_ratio: ratio,
    })
}

/// Every overlap ratio reachable by shifting a student window of the given width.
pub fn attainable_ratios(total_classes: usize, teacher_window: usize, student_window: usize) -> Vec<f64> {
    (0..=teacher_window.min(student_window))
        .filter(|&shared| teacher_window - shared + student_window <= total_classes)
        .map(|shared| shared as f64 / student_window as f64)
        .collect()
}

/// Result of [`restrict`]: labels are re-indexed to positions in `class_map`.
#[derive(Clone, Debug)]
pub struct Restricted {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// `class_map[local] = original class id`.
    pub class_map: Vec<usize>,
}

/// Stratified per-class train/test split over the listed classes.
///
/// Each class is shuffled by a stream keyed on `(seed, original class id)`,
/// so a class is split identically no matter which list it appears in.
pub fn restrict(dataset: &LabeledDataset, class_list: &[usize], train_fraction: f64, seed: u64) -> Result<Restricted> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut seen = BTreeSet::new();
    for &c in class_list {
        if c >= dataset.class_count {
            return Err(Error::InvalidSplit(format!("class {c} not in dataset")));
        }
        if !seen.insert(c) {
            return Err(Error::InvalidSplit(format!("class {c} listed twice")));
        }
    }
    let by_class = dataset.class_indices();
    let (mut tr_idx, mut tr_lab, mut te_idx, mut te_lab) = (vec![], vec![], vec![], vec![]);
    for (local, &c) in class_list.iter().enumerate() {
        let mut idx = by_class[c].clone();
        let mut rng = SeedStream::derived(seed, &format!("restrict/{}", dataset.class_ids[c]));
        idx.shuffle(rng.rng());
        let n_train = (idx.len() as f64 * train_fraction).round() as usize;
        if n_train < 2 {
            return Err(Error::InvalidSplit(format!(
                "class {c} keeps {n_train} training instances, need at least 2"
            )));
        }
        let (a, b) = idx.split_at(n_train.min(idx.len()));
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        tr_lab.extend(std::iter::repeat_n(local, a.len()));
        te_lab.extend(std::iter::repeat_n(local, b.len()));
        tr_idx.extend(a);
        te_idx.extend(b);
    }
    let class_map: Vec<usize> = class_list.iter().map(|&c| dataset.class_ids[c]).collect();
    let build = |idx: Vec<usize>, labels: Vec<usize>, min: usize| -> Result<LabeledDataset> {
        let mut ds =
            LabeledDataset::with_min_count(dataset.instances.select_rows(&idx), labels, class_list.len(), min)?;
        ds.class_ids = class_map.clone();
        ds.source_index = idx.iter().map(|&i| dataset.source_index[i]).collect();
        Ok(ds)
    };
    Ok(Restricted {
        train: build(tr_idx, tr_lab, 2)?,
        test: build(te_idx, te_lab, 0)?,
        class_map,
    })
}

/// Keeps at most `per_class` instances of every class, chosen by a stream
/// keyed on `(seed, original class id)`. Row order is preserved.
pub fn subsample_per_class(dataset: &LabeledDataset, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    if per_class < 2 {
        return Err(Error::InvalidSplit(format!("per-class cap {per_class} below 2")));
    }
    let mut keep = Vec::new();
    for (c, idx) in dataset.class_indices().into_iter().enumerate() {
        let mut idx = idx;
        let mut rng = SeedStream::derived(seed, &format!("subsample/{}", dataset.class_ids[c]));
        idx.shuffle(rng.rng());
        idx.truncate(per_class);
        keep.extend(idx);
    }
    keep.sort_unstable();
    let mut ds = LabeledDataset::new(
        dataset.instances.select_rows(&keep),
        keep.iter().map(|&i| dataset.labels[i]).collect(),
        dataset.class_count,
    )?;
    ds.class_ids = dataset.class_ids.clone();
    ds.source_index = keep.iter().map(|&i| dataset.source_index[i]).collect();
    Ok(ds)
}

/// Samples `classes_per_batch` distinct classes, then `instances_per_class`
/// distinct instances from each. Indices are grouped by class in sampling order.
pub fn sample_balanced_batch(
    dataset: &LabeledDataset,
    classes_per_batch: usize,
    instances_per_class: usize,
    stream: &mut SeedStream,
) -> Result<Vec<usize>> {
    let by_class = dataset.class_indices();
    sample_balanced_from(&by_class, classes_per_batch, instances_per_class, stream)
}

/// [`sample_balanced_batch`] over precomputed per-class index lists.
pub fn sample_balanced_from(
    by_class: &[Vec<usize>],
    classes_per_batch: usize,
    instances_per_class: usize,
    stream: &mut SeedStream,
) -> Result<Vec<usize>> {
    if instances_per_class < 2 {
        return Err(Error::InvalidBatchConfig(
            "instances_per_class must be at least 2 so every class has a positive pair".into(),
        ));
    }
    if classes_per_batch == 0 || classes_per_batch > by_class.len() {
        return Err(Error::InvalidBatchConfig(format!(
            "classes_per_batch {classes_per_batch} not in [1, {}]",
            by_class.len()
        )));
    }
    if let Some(c) = by_class.iter().position(|v| v.len() < instances_per_class) {
        return Err(Error::InvalidBatchConfig(format!(
            "class {c} has {} instances, batch needs {instances_per_class}",
            by_class[c].len()
        )));
    }
    let classes = rand::seq::index::sample(stream.rng(), by_class.len(), classes_per_batch);
    let mut out = Vec::with_capacity(classes_per_batch * instances_per_class);
    for c in classes.iter() {
        let pool = &by_class[c];
        let picks = rand::seq::index::sample(stream.rng(), pool.len(), instances_per_class);
        out.extend(picks.iter().map(|k| pool[k]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LabeledDataset {
        make_gaussian_clusters(&ClusterConfig {
            class_count: 6,
            dim: 4,
            per_class: 10,
            seed: 7,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn generator_is_deterministic() {
        let a = small();
        let b = small();
        assert_eq!(a, b);
        assert_eq!(a.len(), 60);
        assert!(a.class_counts().iter().all(|&n| n == 10));
    }

    #[test]
    fn generator_rejects_single_instance_classes() {
        let cfg = ClusterConfig {
            per_class: 1,
            ..Default::default()
        };
        assert!(matches!(make_gaussian_clusters(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn latent_dim_zeroes_center_tail() {
        let ds = make_gaussian_clusters(&ClusterConfig {
            class_count: 4,
            dim: 6,
            per_class: 400,
            latent_dim: Some(2),
            nuisance_sigma: None,
            noise_sigma: 0.1,
            ..Default::default()
        })
        .unwrap();
        let mean_last: f64 = (0..ds.len()).map(|i| ds.instances.get(i, 5)).sum::<f64>() / ds.len() as f64;
        assert!(mean_last.abs() < 0.02);
    }

    #[test]
    fn window_examples() {
        let full = sliding_window_split(20, 10, 1.0).unwrap();
        assert_eq!(full.student_classes, full.teacher_classes);
        let none = sliding_window_split(20, 10, 0.0).unwrap();
        assert_eq!(none.student_classes, (10..20).collect::<Vec<_>>());
        let half = sliding_window_split(20, 10, 0.5).unwrap();
        assert_eq!(half.student_classes, (5..15).collect::<Vec<_>>());
    }

    #[test]
    fn unattainable_ratio_lists_grid() {
        match sliding_window_split(20, 10, 0.25) {
            Err(Error::InvalidRatio { attainable, .. }) => {
                assert_eq!(attainable.len(), 11);
                assert!(attainable.contains(&0.5));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn window_must_fit() {
        // teacher [0,15) and a disjoint 15-wide student window cannot fit in 20 classes
        assert!(sliding_window_split(20, 15, 0.0).is_err());
    }

    #[test]
    fn restrict_counts_and_reindexing() {
        let ds = make_gaussian_clusters(&ClusterConfig::default()).unwrap();
        let r = restrict(&ds, &[5, 2, 9], 0.7, 1).unwrap();
        assert_eq!(r.class_map, vec![5, 2, 9]);
        assert_eq!(r.train.class_counts(), vec![42, 42, 42]);
        assert_eq!(r.test.class_counts(), vec![18, 18, 18]);
        assert_eq!(r.train.original_labels()[0], 5);
    }

    #[test]
    fn restrict_rejects_tiny_train() {
        let ds = small();
        assert!(matches!(restrict(&ds, &[0], 0.1, 0), Err(Error::InvalidSplit(_))));
    }

    #[test]
    fn batch_construction() {
        let ds = small();
        let mut s = SeedStream::new(3);
        let b = sample_balanced_batch(&ds, 2, 2, &mut s).unwrap();
        assert_eq!(b.len(), 4);
        let labels: Vec<_> = b.iter().map(|&i| ds.labels[i]).collect();
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[2], labels[3]);
        assert_ne!(labels[0], labels[2]);
    }

    #[test]
    fn infeasible_batches_rejected() {
        let ds = small();
        let mut s = SeedStream::new(3);
        assert!(sample_balanced_batch(&ds, 7, 2, &mut s).is_err());
        assert!(sample_balanced_batch(&ds, 2, 11, &mut s).is_err());
        assert!(sample_balanced_batch(&ds, 2, 1, &mut s).is_err());
    }

    #[test]
    fn subsample_caps_every_class() {
        let ds = small();
        let sub = subsample_per_class(&ds, 2, 4).unwrap();
        assert!(sub.class_counts().iter().all(|&n| n == 2));
        assert_eq!(sub, subsample_per_class(&ds, 2, 4).unwrap());
        assert!(sub.source_index.iter().all(|i| ds.source_index.contains(i)));
        assert!(subsample_per_class(&ds, 1, 4).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        ds.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("label,dim=4\n"));
        assert_eq!(LabeledDataset::read_csv(&p).unwrap(), ds);
    }
}
