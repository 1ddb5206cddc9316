//! Flat parameter vectors with a named layout, and the weight-space algebra
//! built on them.

mod codec;
mod ema;

pub use codec::{decode, encode, load, save, MAGIC, VERSION};
pub use ema::{ema_final, ema_recovery_alpha, ema_update, EmaState, EmaVariant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, contiguous description of how a flat vector splits into named
/// tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
}

impl ParamLayout {
    /// Builds a layout from `(name, shape)` pairs, assigning offsets in order.
    pub fn new<S: Into<String>>(items: impl IntoIterator<Item = (S, Vec<usize>)>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (name, shape) in items {
            let entry = ParamEntry {
                name: name.into(),
                shape,
                offset,
            };
            offset += entry.len();
            entries.push(entry);
        }
        let layout = Self { entries };
        layout.validate()?;
        Ok(layout)
    }

    /// Accepts explicit entries (e.g. decoded from a file) after checking
    /// contiguity, positivity of dims, and name uniqueness.
    pub fn from_entries(entries: Vec<ParamEntry>) -> Result<Self> {
        let layout = Self { entries };
        layout.validate()?;
        Ok(layout)
    }

    fn validate(&self) -> Result<()> {
        let mut expected = 0;
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if e.shape.is_empty() || e.shape.contains(&0) {
                return Err(Error::Structural(format!(
                    "entry `{}` has non-positive shape {:?}",
                    e.name, e.shape
                )));
            }
            if e.offset != expected {
                return Err(Error::Structural(format!(
                    "entry `{}` at offset {} but expected {}",
                    e.name, e.offset, expected
                )));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Structural(format!("duplicate entry `{}`", e.name)));
            }
            expected += e.len();
        }
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(ParamEntry::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
    pub tag: String,
}

/// A parameter vector together with its layout and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    layout: ParamLayout,
    values: Vec<f64>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(layout: ParamLayout, values: Vec<f64>, meta: CheckpointMeta) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Structural(format!(
                "layout expects {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            layout,
            values,
            meta,
        })
    }

    pub fn zeros(layout: ParamLayout, meta: CheckpointMeta) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self {
            layout,
            values,
            meta,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Slice of the named tensor, row-major.
    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|e| &self.values[e.range()])
    }

    /// Replaces all values, keeping layout and meta. Fails on length mismatch
    /// or non-finite input.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Checkpoint::new(self.layout.clone(), values, self.meta.clone())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn ensure_same_layout(&self, other: &Checkpoint) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Structural(
                "checkpoints have different layouts".into(),
            ));
        }
        Ok(())
    }
}

/// Weight-space interpolation `(1 - alpha) * c0 + alpha * c1`.
///
/// For `alpha > 0.5` the weights are formed from `1 - alpha` (exact by
/// Sterbenz), so `interpolate(c0, c1, a)` and `interpolate(c1, c0, 1 - a)`
/// multiply the same operand pairs whenever `1 - (1 - a) == a` in floating
/// point. The endpoints return clones of the inputs.
pub fn interpolate(c0: &Checkpoint, c1: &Checkpoint, alpha: f64) -> Result<Checkpoint> {
    c0.ensure_same_layout(c1)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let values = if alpha == 0.0 {
        c0.values.clone()
    } else if alpha == 1.0 {
        c1.values.clone()
    } else {
        let (w0, w1) = if alpha <= 0.5 {
            (1.0 - alpha, alpha)
        } else {
            let w0 = 1.0 - alpha;
            (w0, 1.0 - w0)
        };
        c0.values
            .iter()
            .zip(&c1.values)
            .map(|(a, b)| w0 * a + w1 * b)
            .collect()
    };
    let mut meta = c0.meta.clone();
    meta.tag = format!("interpolate(alpha={alpha})");
    Ok(Checkpoint {
        layout: c0.layout.clone(),
        values,
        meta,
    })
}

/// Euclidean distance between parameter vectors.
pub fn param_distance(c0: &Checkpoint, c1: &Checkpoint) -> Result<f64> {
    c0.ensure_same_layout(c1)?;
    Ok(c0
        .values
        .iter()
        .zip(&c1.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec_ckpt(values: Vec<f64>) -> Checkpoint {
        let layout = ParamLayout::new([("w", vec![values.len()])]).unwrap();
        Checkpoint::new(layout, values, CheckpointMeta::default()).unwrap()
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        let l = ParamLayout::new([("enc.0.w", vec![3, 2]), ("enc.0.b", vec![3]), ("head", vec![3, 4])])
            .unwrap();
        assert_eq!(l.total_len(), 6 + 3 + 12);
        assert_eq!(l.get("head").unwrap().offset, 9);
    }

    #[test]
    fn layout_rejects_duplicates_and_gaps() {
        assert!(ParamLayout::new([("a", vec![2]), ("a", vec![1])]).is_err());
        let bad = vec![ParamEntry {
            name: "a".into(),
            shape: vec![2],
            offset: 1,
        }];
        assert!(ParamLayout::from_entries(bad).is_err());
        assert!(ParamLayout::new([("a", vec![0])]).is_err());
    }

    #[test]
    fn checkpoint_rejects_nonfinite() {
        let layout = ParamLayout::new([("w", vec![2])]).unwrap();
        assert!(Checkpoint::new(layout.clone(), vec![1.0, f64::NAN], Default::default()).is_err());
        assert!(Checkpoint::new(layout, vec![1.0], Default::default()).is_err());
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let c0 = vec_ckpt(vec![0.0, 2.0]);
        let c1 = vec_ckpt(vec![2.0, 4.0]);
        assert_eq!(interpolate(&c0, &c1, 0.0).unwrap().values(), c0.values());
        assert_eq!(interpolate(&c0, &c1, 1.0).unwrap().values(), c1.values());
        assert_eq!(interpolate(&c0, &c1, 0.5).unwrap().values(), &[1.0, 3.0]);
        assert_eq!(interpolate(&c0, &c1, 0.5).unwrap().meta.tag, "interpolate(alpha=0.5)");
    }

    #[test]
    fn interpolate_errors() {
        let c0 = vec_ckpt(vec![0.0, 2.0]);
        let c1 = vec_ckpt(vec![2.0, 4.0, 5.0]);
        assert!(matches!(interpolate(&c0, &c1, 0.5), Err(Error::Structural(_))));
        assert!(matches!(interpolate(&c0, &c0, 1.5), Err(Error::Domain(_))));
        assert!(matches!(interpolate(&c0, &c0, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn distance_cases() {
        let a = vec_ckpt(vec![0.0, 0.0]);
        let b = vec_ckpt(vec![3.0, 4.0]);
        assert_eq!(param_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(param_distance(&b, &b).unwrap(), 0.0);
    }

    fn finite_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1e3f64..1e3, n)
    }

    proptest! {
        #[test]
        fn interpolate_swap_symmetry(a in finite_vec(6), b in finite_vec(6), alpha in 0.5f64..=1.0) {
            // alpha >= 0.5 makes 1 - alpha exact, so 1 - (1 - alpha) == alpha.
            let c0 = vec_ckpt(a);
            let c1 = vec_ckpt(b);
            let x = interpolate(&c0, &c1, alpha).unwrap();
            let y = interpolate(&c1, &c0, 1.0 - alpha).unwrap();
            prop_assert_eq!(x.values(), y.values());
        }

        #[test]
        fn interpolate_swap_symmetry_dyadic(a in finite_vec(6), b in finite_vec(6), m in 0u32..=1024) {
            let alpha = f64::from(m) / 1024.0;
            let x = interpolate(&vec_ckpt(a.clone()), &vec_ckpt(b.clone()), alpha).unwrap();
            let y = interpolate(&vec_ckpt(b), &vec_ckpt(a), 1.0 - alpha).unwrap();
            prop_assert_eq!(x.values(), y.values());
        }

        #[test]
        fn interpolation_is_affine(a in finite_vec(5), b in finite_vec(5), alpha in 0.0f64..=1.0) {
            let c0 = vec_ckpt(a.clone());
            let c1 = vec_ckpt(b.clone());
            let x = interpolate(&c0, &c1, alpha).unwrap();
            let y = interpolate(&c0, &c1, 1.0 - alpha).unwrap();
            for i in 0..a.len() {
                let lhs = x.values()[i] + y.values()[i];
                let rhs = a[i] + b[i];
                let scale = a[i].abs().max(b[i].abs()).max(1.0);
                prop_assert!((lhs - rhs).abs() <= 8.0 * f64::EPSILON * scale);
            }
        }

        #[test]
        fn distance_triangle_inequality(a in finite_vec(4), b in finite_vec(4), c in finite_vec(4)) {
            let (a, b, c) = (vec_ckpt(a), vec_ckpt(b), vec_ckpt(c));
            let ab = param_distance(&a, &b).unwrap();
            let bc = param_distance(&b, &c).unwrap();
            let ac = param_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert_eq!(ab, param_distance(&b, &a).unwrap());
        }
    }
}
