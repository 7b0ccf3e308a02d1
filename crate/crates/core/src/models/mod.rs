//! Toy isotropic and hierarchical vision models.
//!
//! A model is a [`ModelSpec`] plus a [`Parameters`] table. Every tensor name,
//! shape and per-axis meaning is a pure function of the spec (see
//! [`layout`]); the forward pass looks tensors up by canonical name.

mod forward;
pub mod init;
mod layout;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use forward::{bind, forward, forward_on_tape, patchify, Bound};
pub use init::{build_model, Init};
pub use layout::{layout, AxisRole, DimKind, ParamKind, SemanticDim, TensorLayout};

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Isotropic,
    Hierarchical,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Isotropic => "isotropic",
            Family::Hierarchical => "hierarchical",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const DESK: ImageShape = ImageShape { channels: 1, height: 32, width: 32 };

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Architecture description. Stage depths may be zero (a stage that only
/// downsamples); widths must be positive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub stage_depths: Vec<usize>,
    pub stage_dims: Vec<usize>,
    /// Attention heads; only meaningful for the isotropic family.
    #[serde(default = "one")]
    pub heads: usize,
    pub patch: usize,
    pub image: ImageShape,
    pub classes: usize,
}

fn one() -> usize {
    1
}

impl ModelSpec {
    pub fn isotropic(depth: usize, dim: usize, heads: usize, classes: usize) -> Self {
        Self {
            family: Family::Isotropic,
            stage_depths: vec![depth],
            stage_dims: vec![dim],
            heads,
            patch: 4,
            image: ImageShape::DESK,
            classes,
        }
    }

    pub fn hierarchical(depths: &[usize], dims: &[usize], classes: usize) -> Self {
        Self {
            family: Family::Hierarchical,
            stage_depths: depths.to_vec(),
            stage_dims: dims.to_vec(),
            heads: 1,
            patch: 4,
            image: ImageShape::DESK,
            classes,
        }
    }

    /// Desk-scale ViT-S analogue: depth 4, width 64, 4 heads.
    pub fn toy_isotropic_teacher(classes: usize) -> Self {
        Self::isotropic(4, 64, 4, classes)
    }

    /// Desk-scale ViT-T analogue: depth 4, width 32, 2 heads.
    pub fn toy_isotropic_student(classes: usize) -> Self {
        Self::isotropic(4, 32, 2, classes)
    }

    /// Desk-scale ConvNeXt-T analogue.
    pub fn toy_hierarchical_teacher(classes: usize) -> Self {
        Self::hierarchical(&[2, 2, 3, 2], &[16, 32, 64, 128], classes)
    }

    /// Desk-scale ConvNeXt-F analogue.
    pub fn toy_hierarchical_student(classes: usize) -> Self {
        Self::hierarchical(&[1, 1, 2, 1], &[8, 16, 32, 64], classes)
    }

    pub fn with_classes(&self, classes: usize) -> Self {
        Self { classes, ..self.clone() }
    }

    pub fn stages(&self) -> usize {
        self.stage_dims.len()
    }

    /// Side lengths of the patch grid produced by the stem.
    pub fn patch_grid(&self) -> (usize, usize) {
        (self.image.height / self.patch, self.image.width / self.patch)
    }

    pub fn num_patches(&self) -> usize {
        let (h, w) = self.patch_grid();
        h * w
    }

    pub fn patch_features(&self) -> usize {
        self.image.channels * self.patch * self.patch
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::SpecValidation(msg));
        if self.stage_depths.len() != self.stage_dims.len() || self.stage_dims.is_empty() {
            return fail(format!(
                "stage_depths {:?} and stage_dims {:?} must be non-empty and of equal length",
                self.stage_depths, self.stage_dims
            ));
        }
        if self.stage_dims.contains(&0) {
            return fail(format!("stage_dims {:?} must be positive", self.stage_dims));
        }
        if self.classes < 2 {
            return fail(format!("classes must be at least 2, got {}", self.classes));
        }
        let img = self.image;
        if img.channels == 0 || self.patch == 0 || img.height % self.patch != 0 || img.width % self.patch != 0 || img.height == 0 || img.width == 0 {
            return fail(format!("patch {} must divide image {}x{}", self.patch, img.height, img.width));
        }
        match self.family {
            Family::Isotropic => {
                if self.stages() != 1 {
                    return fail(format!("isotropic models have one stage, got {}", self.stages()));
                }
                if self.heads == 0 || self.stage_dims[0] % self.heads != 0 {
                    return fail(format!("heads {} must divide width {}", self.heads, self.stage_dims[0]));
                }
            }
            Family::Hierarchical => {
                if let Some(w) = self.stage_dims.windows(2).find(|w| w[1] != 2 * w[0]) {
                    return fail(format!("stage widths must double stage to stage, got {} -> {}", w[0], w[1]));
                }
                let shrink = 1usize << (self.stages() - 1);
                let (gh, gw) = self.patch_grid();
                if gh % shrink != 0 || gw % shrink != 0 {
                    return fail(format!(
                        "patch grid {gh}x{gw} cannot be halved {} times",
                        self.stages() - 1
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Canonical-name → tensor table of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters {
    tensors: BTreeMap<String, Tensor>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Like [`get`](Self::get) but a missing name is an error.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.tensors.values_mut().for_each(|t| t.set_requires_grad(requires_grad));
    }

    /// Checks names and shapes against the layout of `spec`.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let table = layout(spec)?;
        if table.len() != self.len() {
            return Err(Error::Contract(format!(
                "parameter table has {} tensors, spec expects {}",
                self.len(),
                table.len()
            )));
        }
        for entry in &table {
            let t = self.require(&entry.name)?;
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "`{}` has shape {:?}, spec expects {:?}",
                    entry.name,
                    t.shape(),
                    entry.shape
                )));
            }
        }
        Ok(())
    }

    /// Largest elementwise distance over all shared tensors.
    pub fn max_abs_diff(&self, other: &Parameters) -> Result<f32> {
        let mut m = 0.0f32;
        for (name, t) in self.iter() {
            m = m.max(t.max_abs_diff(other.require(name)?)?);
        }
        Ok(m)
    }
}

impl FromIterator<(String, Tensor)> for Parameters {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self { tensors: iter.into_iter().collect() }
    }
}

impl IntoIterator for Parameters {
    type Item = (String, Tensor);
    type IntoIter = std::collections::btree_map::IntoIter<String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.into_iter()
    }
}

pub fn count_parameters(params: &Parameters) -> usize {
    params.iter().map(|(_, t)| t.numel()).sum()
}
