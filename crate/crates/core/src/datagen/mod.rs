//! Synthetic reference, shifted and pre-training distributions.
//!
//! Classes are isotropic Gaussian clusters around means drawn once per
//! [`GenSpec::seed`]. Shifts and pre-training styles are both expressed as a
//! [`ShiftSpec`]: a rotation in a random 2-plane, a per-class mean
//! displacement, coordinate masking and additive noise, applied in that
//! order.

mod csv_io;

pub use csv_io::{read_dataset, read_dataset_str, write_dataset, write_dataset_string};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
    pub tag: String,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
        tag: impl Into<String>,
        split: Split,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Structural("dataset dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Structural(format!(
                "{} feature values for {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {num_classes})")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            dim,
            labels,
            num_classes,
            tag: tag.into(),
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            dim: self.dim,
            labels,
            num_classes: self.num_classes,
            tag: self.tag.clone(),
            split: self.split,
        }
    }

    fn concat(parts: Vec<Dataset>, tag: &str) -> Dataset {
        let first = &parts[0];
        let (dim, num_classes, split) = (first.dim, first.num_classes, first.split);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            features.extend(p.features);
            labels.extend(p.labels);
        }
        Dataset {
            features,
            dim,
            labels,
            num_classes,
            tag: tag.to_string(),
            split,
        }
    }
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub k: usize,
    pub d_in: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub cluster_spread: f64,
    pub pretrain_style_count: usize,
    /// Upper bound on the per-class mean displacement of a pre-training
    /// style; rotation angles scale with it too. Style noise stays below
    /// `cluster_spread`.
    #[serde(default = "default_style_strength")]
    pub style_strength: f64,
    pub seed: u64,
}

fn default_style_strength() -> f64 {
    1.0
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("d_in", self.d_in),
            ("per_class_train", self.per_class_train),
            ("per_class_test", self.per_class_test),
            ("pretrain_style_count", self.pretrain_style_count),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("gen.{name} must be positive")));
            }
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::Config("gen.cluster_spread must be positive".into()));
        }
        if !(self.style_strength >= 0.0 && self.style_strength.is_finite()) {
            return Err(Error::Config("gen.style_strength must be non-negative".into()));
        }
        Ok(())
    }

    /// Class means, one row of length `d_in` per class.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = Rng::stream(self.seed, "gen.means", 0);
        (0..self.k)
            .map(|_| (0..self.d_in).map(|_| rng.normal()).collect())
            .collect()
    }

    /// Style transform of pre-training component `style`; style 0 is the
    /// identity.
    pub fn style(&self, style: usize) -> ShiftSpec {
        if style == 0 {
            return ShiftSpec::identity();
        }
        let mut rng = Rng::stream(self.seed, "gen.style", style as u64);
        let s = self.style_strength;
        ShiftSpec {
            rotation_angle: rng.uniform_range(-1.0, 1.0) * s * std::f64::consts::FRAC_PI_2,
            noise_sigma: rng.uniform() * self.cluster_spread,
            mean_shift: rng.uniform() * s,
            mask_fraction: 0.0,
            seed: rng.next_u64(),
        }
    }
}

/// Distribution shift applied to an existing dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    #[serde(default)]
    pub rotation_angle: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub mean_shift: f64,
    #[serde(default)]
    pub mask_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self {
            rotation_angle: 0.0,
            noise_sigma: 0.0,
            mean_shift: 0.0,
            mask_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::Domain(format!(
                "mask_fraction {} outside [0, 1)",
                self.mask_fraction
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Domain("noise_sigma must be non-negative".into()));
        }
        if !self.rotation_angle.is_finite() || !self.mean_shift.is_finite() {
            return Err(Error::Domain("shift parameters must be finite".into()));
        }
        Ok(())
    }

    /// Orthonormal pair spanning the rotation plane.
    pub fn rotation_plane(&self, dim: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = Rng::stream(self.seed, "shift.plane", 0);
        let u = rng.unit_vector(dim);
        loop {
            let mut v = rng.unit_vector(dim);
            let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(&u) {
                *vi -= proj * ui;
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                return (u, v);
            }
        }
    }

    /// Displacement applied to every row of class `class`.
    pub fn class_displacement(&self, class: usize, dim: usize) -> Vec<f64> {
        let mut rng = Rng::stream(self.seed, "shift.mean", class as u64);
        rng.unit_vector(dim)
            .into_iter()
            .map(|x| x * self.mean_shift)
            .collect()
    }

    /// Coordinates zeroed by the mask, sorted.
    pub fn masked_coords(&self, dim: usize) -> Vec<usize> {
        let count = (self.mask_fraction * dim as f64).floor() as usize;
        if count == 0 {
            return Vec::new();
        }
        let mut idx: Vec<usize> = (0..dim).collect();
        Rng::stream(self.seed, "shift.mask", 0).shuffle(&mut idx);
        let mut out = idx[..count].to_vec();
        out.sort_unstable();
        out
    }
}

fn sample_clusters(
    means: &[Vec<f64>],
    spread: f64,
    per_class: usize,
    rng: &mut Rng,
    tag: &str,
    split: Split,
) -> Dataset {
    let k = means.len();
    let dim = means[0].len();
    let mut features = Vec::with_capacity(k * per_class * dim);
    let mut labels = Vec::with_capacity(k * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            features.extend(mean.iter().map(|m| m + spread * rng.normal()));
            labels.push(c);
        }
    }
    Dataset {
        features,
        dim,
        labels,
        num_classes: k,
        tag: tag.to_string(),
        split,
    }
}

/// Reference train and test sets, class-major row order.
pub fn gen_reference(spec: &GenSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let means = spec.class_means();
    let mut train_rng = Rng::stream(spec.seed, "gen.ref.train", 0);
    let mut test_rng = Rng::stream(spec.seed, "gen.ref.test", 0);
    let train = sample_clusters(
        &means,
        spec.cluster_spread,
        spec.per_class_train,
        &mut train_rng,
        "reference",
        Split::Train,
    );
    let test = sample_clusters(
        &means,
        spec.cluster_spread,
        spec.per_class_test,
        &mut test_rng,
        "reference",
        Split::Test,
    );
    Ok((train, test))
}

fn mixture(spec: &GenSpec, purpose: &str, tag: &str) -> Result<Dataset> {
    spec.validate()?;
    let means = spec.class_means();
    let parts = (0..spec.pretrain_style_count)
        .map(|s| {
            let mut rng = Rng::stream(spec.seed, purpose, s as u64);
            let base = sample_clusters(
                &means,
                spec.cluster_spread,
                spec.per_class_train,
                &mut rng,
                tag,
                Split::Train,
            );
            apply_shift(&base, &spec.style(s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::concat(parts, tag))
}

/// Union of `pretrain_style_count` style-transformed draws from the
/// reference clusters, each with its own sample stream.
pub fn gen_pretrain_mixture(spec: &GenSpec) -> Result<Dataset> {
    mixture(spec, "gen.pretrain", "pretrain")
}

/// Second, independent draw from the pre-training mixture; used for class
/// prototypes.
pub fn gen_pretrain_heldout(spec: &GenSpec) -> Result<Dataset> {
    mixture(spec, "gen.pretrain.heldout", "pretrain-heldout")
}

/// Applies rotation, class mean shift, masking and noise, in that order.
/// Zero-valued parameters skip their step, so the identity spec returns the
/// input unchanged.
pub fn apply_shift(d: &Dataset, s: &ShiftSpec) -> Result<Dataset> {
    s.validate()?;
    let dim = d.dim;
    if s.rotation_angle != 0.0 && dim < 2 {
        return Err(Error::Domain("rotation needs at least two dimensions".into()));
    }
    let mut out = d.clone();
    if s.rotation_angle != 0.0 {
        let (u, v) = s.rotation_plane(dim);
        let (sin, cos) = s.rotation_angle.sin_cos();
        for row in out.features.chunks_exact_mut(dim) {
            let a: f64 = row.iter().zip(&u).map(|(x, y)| x * y).sum();
            let b: f64 = row.iter().zip(&v).map(|(x, y)| x * y).sum();
            let da = a * cos - b * sin - a;
            let db = a * sin + b * cos - b;
            for i in 0..dim {
                row[i] += da * u[i] + db * v[i];
            }
        }
    }
    if s.mean_shift != 0.0 {
        let shifts: Vec<Vec<f64>> = (0..d.num_classes)
            .map(|c| s.class_displacement(c, dim))
            .collect();
        for (row, &label) in out.features.chunks_exact_mut(dim).zip(&d.labels) {
            for (x, dx) in row.iter_mut().zip(&shifts[label]) {
                *x += dx;
            }
        }
    }
    let masked = s.masked_coords(dim);
    if !masked.is_empty() {
        for row in out.features.chunks_exact_mut(dim) {
            for &i in &masked {
                row[i] = 0.0;
            }
        }
    }
    if s.noise_sigma != 0.0 {
        let mut rng = Rng::stream(s.seed, "shift.noise", 0);
        for x in out.features.iter_mut() {
            *x += s.noise_sigma * rng.normal();
        }
    }
    Ok(out)
}

/// Exactly `k_shot` rows per class, drawn without replacement. Output is
/// ordered by class, then by draw order.
pub fn subsample_per_class(d: &Dataset, k_shot: usize, seed: u64) -> Result<Dataset> {
    if k_shot == 0 {
        return Err(Error::Domain("k_shot must be positive".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.num_classes];
    for (i, &l) in d.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut picked = Vec::with_capacity(k_shot * d.num_classes);
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < k_shot {
            return Err(Error::Data(format!(
                "class {c} has {} samples, fewer than k_shot={k_shot}",
                idx.len()
            )));
        }
        Rng::stream(seed, "subsample", c as u64).shuffle(&mut idx);
        picked.extend_from_slice(&idx[..k_shot]);
    }
    let mut out = d.select(&picked);
    out.tag = format!("{}-{}shot", d.tag, k_shot);
    Ok(out)
}
