//! Multilayer perceptron encoder with a bias-free linear head.
//!
//! Parameter names: `enc.{l}.w` (shape `[out, in]`), `enc.{l}.b` (`[out]`)
//! for each encoder layer, and `head` (`[d, k]`, row-major). The activation
//! is applied after every encoder layer except the last, so the embedding is
//! an affine function of the last hidden layer. With `normalize_features`
//! the embedding is scaled to unit norm before the head.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta, ParamLayout};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const HEAD: &str = "head";
pub const ENC_PREFIX: &str = "enc.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `(d_in, hidden..., d)`; at least two entries.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub k: usize,
    pub normalize_features: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config("layer_widths needs at least (d_in, d)".into()));
        }
        if self.layer_widths.contains(&0) || self.k == 0 {
            return Err(Error::Config("layer widths and k must be positive".into()));
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn embed_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn layout(&self) -> Result<ParamLayout> {
        self.validate()?;
        let mut items = Vec::new();
        for (l, pair) in self.layer_widths.windows(2).enumerate() {
            items.push((format!("enc.{l}.w"), vec![pair[1], pair[0]]));
            items.push((format!("enc.{l}.b"), vec![pair[1]]));
        }
        items.push((HEAD.to_string(), vec![self.embed_dim(), self.k]));
        ParamLayout::new(items)
    }

    /// Random initialization: He-normal weights for relu, Glorot-normal for
    /// identity, zero biases, head entries with variance `1/d`.
    pub fn init(&self, seed: u64) -> Result<Checkpoint> {
        let layout = self.layout()?;
        let mut rng = Rng::stream(seed, "model.init", 0);
        let mut values = vec![0.0; layout.total_len()];
        for (l, pair) in self.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0] as f64, pair[1] as f64);
            let std = match self.activation {
                Activation::Relu => (2.0 / fan_in).sqrt(),
                Activation::Identity => (2.0 / (fan_in + fan_out)).sqrt(),
            };
            let entry = layout.get(&format!("enc.{l}.w")).unwrap();
            for v in &mut values[entry.range()] {
                *v = std * rng.normal();
            }
        }
        let head = layout.get(HEAD).unwrap();
        let std = (1.0 / self.embed_dim() as f64).sqrt();
        for v in &mut values[head.range()] {
            *v = std * rng.normal();
        }
        Checkpoint::new(
            layout,
            values,
            CheckpointMeta {
                seed,
                step: 0,
                tag: "init".into(),
            },
        )
    }
}

/// Borrowed view of a checkpoint's tensors, resolved once.
pub struct Network<'a> {
    spec: &'a ModelSpec,
    layers: Vec<(&'a [f64], &'a [f64])>,
    head: &'a [f64],
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each encoder layer; `inputs[0]` is the sample.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each encoder layer.
    pub pre: Vec<Vec<f64>>,
    /// Encoder output before normalization.
    pub raw: Vec<f64>,
    pub raw_norm: f64,
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Encoder output. `degenerate` marks a zero vector that could not be
/// normalized (it is passed through as zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

impl<'a> Network<'a> {
    pub fn new(spec: &'a ModelSpec, c: &'a Checkpoint) -> Result<Self> {
        if c.layout() != &spec.layout()? {
            return Err(Error::Structural("checkpoint layout does not match model spec".into()));
        }
        let layers = (0..spec.num_layers())
            .map(|l| {
                (
                    c.param(&format!("enc.{l}.w")).unwrap(),
                    c.param(&format!("enc.{l}.b")).unwrap(),
                )
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            head: c.param(HEAD).unwrap(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn head(&self) -> &[f64] {
        self.head
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.d_in() {
            return Err(Error::Structural(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.spec.d_in()
            )));
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_vec();
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let out_dim = b.len();
            let in_dim = h.len();
            let z: Vec<f64> = (0..out_dim)
                .map(|o| {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    b[o] + row.iter().zip(&h).map(|(a, x)| a * x).sum::<f64>()
                })
                .collect();
            let next = if l + 1 < n {
                z.iter().map(|&v| self.spec.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        let raw = h;
        let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let embedding = if self.spec.normalize_features {
            if raw_norm > 0.0 {
                raw.iter().map(|v| v / raw_norm).collect()
            } else {
                vec![0.0; raw.len()]
            }
        } else {
            raw.clone()
        };
        let logits = head_logits(self.head, &embedding, self.spec.k);
        Ok(ForwardTrace {
            inputs,
            pre,
            raw,
            raw_norm,
            embedding,
            logits,
        })
    }

    pub fn features(&self, x: &[f64]) -> Result<Embedding> {
        let t = self.trace(x)?;
        Ok(Embedding {
            degenerate: self.spec.normalize_features && t.raw_norm == 0.0,
            values: t.embedding,
        })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.logits)
    }

    pub fn logits_batch(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        data.rows().map(|x| self.logits(x)).collect()
    }

    pub fn features_batch(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        data.rows().map(|x| Ok(self.features(x)?.values)).collect()
    }

    /// Backpropagates `dlogits` through the network, accumulating into
    /// `grad` (same layout as the checkpoint). Encoder gradients are skipped
    /// when `head_only`.
    pub(crate) fn backward(
        &self,
        layout: &ParamLayout,
        t: &ForwardTrace,
        dlogits: &[f64],
        grad: &mut [f64],
        head_only: bool,
    ) {
        let k = self.spec.k;
        let d = self.spec.embed_dim();
        let head_off = layout.get(HEAD).unwrap().offset;
        let mut demb = vec![0.0; d];
        for i in 0..d {
            let row = &self.head[i * k..(i + 1) * k];
            let grow = &mut grad[head_off + i * k..head_off + (i + 1) * k];
            let e = t.embedding[i];
            let mut acc = 0.0;
            for j in 0..k {
                grow[j] += e * dlogits[j];
                acc += row[j] * dlogits[j];
            }
            demb[i] = acc;
        }
        if head_only {
            return;
        }
        let mut dh = if self.spec.normalize_features {
            if t.raw_norm > 0.0 {
                let dot: f64 = t.embedding.iter().zip(&demb).map(|(a, b)| a * b).sum();
                demb.iter()
                    .zip(&t.embedding)
                    .map(|(g, y)| (g - y * dot) / t.raw_norm)
                    .collect()
            } else {
                vec![0.0; d]
            }
        } else {
            demb
        };
        for l in (0..self.layers.len()).rev() {
            let (w, _) = self.layers[l];
            let input = &t.inputs[l];
            let in_dim = input.len();
            let dz: Vec<f64> = if l + 1 < self.layers.len() {
                dh.iter()
                    .zip(&t.pre[l])
                    .map(|(g, &z)| g * self.spec.activation.derivative(z))
                    .collect()
            } else {
                dh
            };
            let w_off = layout.get(&format!("enc.{l}.w")).unwrap().offset;
            let b_off = layout.get(&format!("enc.{l}.b")).unwrap().offset;
            let mut dprev = vec![0.0; in_dim];
            for (o, &g) in dz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[b_off + o] += g;
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                let grow = &mut grad[w_off + o * in_dim..w_off + (o + 1) * in_dim];
                for i in 0..in_dim {
                    grow[i] += g * input[i];
                    dprev[i] += g * wrow[i];
                }
            }
            dh = dprev;
        }
    }
}

fn head_logits(head: &[f64], emb: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (i, e) in emb.iter().enumerate() {
        if *e == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(&head[i * k..(i + 1) * k]) {
            *o += e * w;
        }
    }
    out
}

/// Encoder output for one sample.
pub fn forward_features(spec: &ModelSpec, c: &Checkpoint, x: &[f64]) -> Result<Embedding> {
    Network::new(spec, c)?.features(x)
}

/// `embedding^T * head`.
pub fn logits(spec: &ModelSpec, c: &Checkpoint, x: &[f64]) -> Result<Vec<f64>> {
    Network::new(spec, c)?.logits(x)
}

/// Argmax with lowest-index tie-break.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Largest minus second-largest score.
pub fn margin(logits: &[f64]) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::Domain("margin needs at least two classes".into()));
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in logits {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    Ok(first - second)
}

/// Class-prototype head: column `j` is the normalized mean of the class-`j`
/// embeddings. Returned row-major as `[d, k]`.
pub fn build_zero_shot_head(prototype_sets: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let k = prototype_sets.len();
    if k == 0 {
        return Err(Error::Data("no classes given".into()));
    }
    let d = prototype_sets
        .iter()
        .find_map(|s| s.first().map(Vec::len))
        .ok_or_else(|| Error::Data("every class has an empty prototype set".into()))?;
    let mut head = vec![0.0; d * k];
    for (j, protos) in prototype_sets.iter().enumerate() {
        if protos.is_empty() {
            return Err(Error::Data(format!("class {j} has no prototypes")));
        }
        let mut mean = vec![0.0; d];
        let mut scale: f64 = 0.0;
        for p in protos {
            if p.len() != d {
                return Err(Error::Structural(format!(
                    "class {j} prototype has length {}, expected {d}",
                    p.len()
                )));
            }
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
            scale = scale.max(p.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        let n = protos.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale.max(f64::MIN_POSITIVE) || norm == 0.0 {
            return Err(Error::DegenerateClass { class: j });
        }
        for i in 0..d {
            head[i * k + j] = mean[i] / norm;
        }
    }
    Ok(head)
}

/// Copy of `c` with its head replaced.
pub fn with_head(c: &Checkpoint, head: &[f64]) -> Result<Checkpoint> {
    let entry = c
        .layout()
        .get(HEAD)
        .ok_or_else(|| Error::Structural("checkpoint has no head".into()))?;
    if entry.len() != head.len() {
        return Err(Error::Structural(format!(
            "head has {} values, layout expects {}",
            head.len(),
            entry.len()
        )));
    }
    let mut values = c.values().to_vec();
    values[entry.range()].copy_from_slice(head);
    c.with_values(values)
}

/// Groups the embeddings of `data` by label, for [`build_zero_shot_head`].
pub fn class_prototypes(net: &Network<'_>, data: &Dataset) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut sets = vec![Vec::new(); net.spec().k];
    for (x, &y) in data.rows().zip(data.labels()) {
        if y >= sets.len() {
            return Err(Error::Data(format!("label {y} outside model classes")));
        }
        sets[y].push(net.features(x)?.values);
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_spec(d: usize, k: usize, normalize: bool) -> ModelSpec {
        ModelSpec {
            layer_widths: vec![d, d],
            activation: Activation::Identity,
            k,
            normalize_features: normalize,
        }
    }

    fn identity_ckpt(spec: &ModelSpec, head: &[f64]) -> Checkpoint {
        let d = spec.d_in();
        let mut values = vec![0.0; spec.layout().unwrap().total_len()];
        for i in 0..d {
            values[i * d + i] = 1.0;
        }
        let off = d * d + d;
        values[off..].copy_from_slice(head);
        Checkpoint::new(spec.layout().unwrap(), values, CheckpointMeta::default()).unwrap()
    }

    #[test]
    fn layout_names() {
        let spec = ModelSpec {
            layer_widths: vec![4, 8, 3],
            activation: Activation::Relu,
            k: 5,
            normalize_features: true,
        };
        let names: Vec<_> = spec.layout().unwrap().entries().iter().map(|e| e.name.clone()).collect();
        assert_eq!(names, ["enc.0.w", "enc.0.b", "enc.1.w", "enc.1.b", "head"]);
        assert_eq!(spec.layout().unwrap().get("head").unwrap().shape, vec![3, 5]);
    }

    #[test]
    fn identity_network_passes_input_through() {
        let spec = identity_spec(3, 2, false);
        let c = identity_ckpt(&spec, &[0.0; 6]);
        let x = [0.5, -1.0, 2.0];
        assert_eq!(forward_features(&spec, &c, &x).unwrap().values, x.to_vec());
        assert!(matches!(forward_features(&spec, &c, &[1.0]), Err(Error::Structural(_))));
    }

    #[test]
    fn normalized_output_has_unit_norm() {
        let spec = ModelSpec {
            layer_widths: vec![3, 6, 4],
            activation: Activation::Relu,
            k: 2,
            normalize_features: true,
        };
        let c = spec.init(1).unwrap();
        let mut rng = Rng::from_seed(2);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let e = forward_features(&spec, &c, &x).unwrap();
            if !e.degenerate {
                let n: f64 = e.values.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_embedding_is_flagged() {
        let spec = identity_spec(2, 2, true);
        let c = identity_ckpt(&spec, &[1.0, 0.0, 0.0, 1.0]);
        let e = forward_features(&spec, &c, &[0.0, 0.0]).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.values, vec![0.0, 0.0]);
        assert_eq!(logits(&spec, &c, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn two_layer_relu_hand_case() {
        // x = (1, 2); layer 0: W = [[1, -1], [2, 0.5]], b = (0.5, -1)
        //   pre = (1 - 2 + 0.5, 2 + 1 - 1) = (-0.5, 2) -> relu (0, 2)
        // layer 1: W = [[1, 3], [-1, 0.25]], b = (0.1, 0.2)
        //   out = (0 + 6 + 0.1, 0 + 0.5 + 0.2) = (6.1, 0.7)
        let spec = ModelSpec {
            layer_widths: vec![2, 2, 2],
            activation: Activation::Relu,
            k: 2,
            normalize_features: false,
        };
        let values = vec![
            1.0, -1.0, 2.0, 0.5, 0.5, -1.0, // enc.0
            1.0, 3.0, -1.0, 0.25, 0.1, 0.2, // enc.1
            1.0, 0.0, 0.0, 1.0, // head
        ];
        let c = Checkpoint::new(spec.layout().unwrap(), values, CheckpointMeta::default()).unwrap();
        let e = forward_features(&spec, &c, &[1.0, 2.0]).unwrap().values;
        assert!((e[0] - 6.1).abs() < 1e-12 && (e[1] - 0.7).abs() < 1e-12, "{e:?}");
    }

    #[test]
    fn logits_hand_cases() {
        let spec = identity_spec(2, 2, false);
        let c = identity_ckpt(&spec, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(logits(&spec, &c, &[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        // head [[1, 2], [3, -1]], x = (2, -1): (2 - 3, 4 + 1) = (-1, 5)
        let c = identity_ckpt(&spec, &[1.0, 2.0, 3.0, -1.0]);
        assert_eq!(logits(&spec, &c, &[2.0, -1.0]).unwrap(), vec![-1.0, 5.0]);
    }

    #[test]
    fn normalized_linear_encoder_is_scale_invariant_without_bias() {
        let spec = ModelSpec {
            layer_widths: vec![3, 4],
            activation: Activation::Identity,
            k: 3,
            normalize_features: true,
        };
        let c = spec.init(9).unwrap();
        let x = [0.3, -1.2, 0.7];
        let a = logits(&spec, &c, &x).unwrap();
        let b = logits(&spec, &c, &x.map(|v| v * 7.5)).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_and_margin() {
        assert_eq!(predict(&[3.0, 1.0, 0.0]), 0);
        assert_eq!(margin(&[3.0, 1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(predict(&[1.0, 1.0]), 0);
        assert_eq!(margin(&[1.0, 1.0]).unwrap(), 0.0);
        assert!(margin(&[1.0]).is_err());
        let shifted: Vec<f64> = [0.2, 1.7, -0.4].iter().map(|v| v + 11.0).collect();
        assert_eq!(predict(&shifted), 1);
        assert!((margin(&shifted).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn predict_invariant_under_monotone_transform() {
        let l = [0.3, -2.0, 1.1, 1.0];
        let t: Vec<f64> = l.iter().map(|v: &f64| v.exp() * 3.0 + 1.0).collect();
        assert_eq!(predict(&l), predict(&t));
    }

    #[test]
    fn zero_shot_head_cases() {
        let head = build_zero_shot_head(&[vec![vec![3.0, 4.0]], vec![vec![0.0, -2.0]]]).unwrap();
        // column 0 = (0.6, 0.8), column 1 = (0, -1)
        assert_eq!(head, vec![0.6, 0.0, 0.8, -1.0]);

        let err = build_zero_shot_head(&[vec![vec![1.0, 0.0]], vec![vec![1.0, 1.0], vec![-1.0, -1.0]]]);
        assert!(matches!(err, Err(Error::DegenerateClass { class: 1 })));
        assert!(matches!(build_zero_shot_head(&[vec![vec![1.0]], vec![]]), Err(Error::Data(_))));

        // (1,0), (0,1), (2,2) -> mean (1, 1) -> (1/sqrt2, 1/sqrt2)
        let head = build_zero_shot_head(&[
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]],
            vec![vec![-1.0, 0.0], vec![-2.0, 0.0], vec![0.0, 0.0]],
        ])
        .unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((head[0] - r).abs() < 1e-15 && (head[2] - r).abs() < 1e-15);
        assert_eq!((head[1], head[3]), (-1.0, 0.0));
    }

    #[test]
    fn zero_shot_columns_have_unit_norm() {
        let mut rng = Rng::from_seed(4);
        let sets: Vec<Vec<Vec<f64>>> = (0..5)
            .map(|_| (0..4).map(|_| (0..6).map(|_| rng.normal()).collect()).collect())
            .collect();
        let head = build_zero_shot_head(&sets).unwrap();
        for j in 0..5 {
            let n: f64 = (0..6).map(|i| head[i * 5 + j].powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
