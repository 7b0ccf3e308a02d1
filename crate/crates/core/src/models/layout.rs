//! Canonical parameter tables.
//!
//! Names follow `stage{i}.block{j}.{component}.{weight|bias}` for blocks,
//! `stage{i}.down.*` for hierarchical downsampling, and `embed.*`, `pos`,
//! `head.*` for the stem, positional table and classifier. Each axis of each
//! tensor is tagged with the semantic width it spans, which is what weight
//! selection slices on.

use std::fmt;

use super::{Family, ModelSpec};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DimKind {
    /// Residual-stream width of a stage.
    Embed,
    /// MLP hidden width of a stage (4× embed).
    Hidden,
}

/// A width shared by every tensor axis that touches it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticDim {
    pub stage: usize,
    pub kind: DimKind,
}

impl SemanticDim {
    pub fn embed(stage: usize) -> Self {
        Self { stage, kind: DimKind::Embed }
    }

    pub fn hidden(stage: usize) -> Self {
        Self { stage, kind: DimKind::Hidden }
    }

    pub fn width(&self, spec: &ModelSpec) -> usize {
        let d = spec.stage_dims[self.stage];
        match self.kind {
            DimKind::Embed => d,
            DimKind::Hidden => 4 * d,
        }
    }
}

impl fmt::Display for SemanticDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DimKind::Embed => "embed",
            DimKind::Hidden => "hidden",
        };
        write!(f, "stage{}.{kind}", self.stage)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisRole {
    /// Extent does not depend on model width (patch pixels, kernel taps,
    /// token positions).
    Fixed,
    /// `groups` consecutive copies of a semantic width, e.g. the fused q/k/v
    /// output axis (3 groups) or a 2×2 patch-merge input (4 groups).
    Dim { dim: SemanticDim, groups: usize },
    /// Class axis of the classifier head.
    Classes,
}

impl AxisRole {
    fn dim(dim: SemanticDim) -> Self {
        AxisRole::Dim { dim, groups: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    Positional,
    HeadWeight,
    HeadBias,
}

impl ParamKind {
    pub fn is_head(self) -> bool {
        matches!(self, ParamKind::HeadWeight | ParamKind::HeadBias)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorLayout {
    pub name: String,
    pub shape: Vec<usize>,
    pub axes: Vec<AxisRole>,
    pub kind: ParamKind,
}

impl TensorLayout {
    /// (fan_in, fan_out) in the PyTorch convention: dim 1 times receptive
    /// field is fan-in, dim 0 times receptive field is fan-out. Depthwise
    /// kernels have one input channel per group.
    pub fn fans(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (*n, *n),
            [o, i] => (*i, *o),
            [o, rest @ ..] => {
                let receptive: usize = rest.iter().product();
                (receptive, o * receptive)
            }
            [] => (1, 1),
        }
    }
}

struct Builder<'a> {
    spec: &'a ModelSpec,
    out: Vec<TensorLayout>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, axes: &[(usize, AxisRole)], kind: ParamKind) {
        self.out.push(TensorLayout {
            name,
            shape: axes.iter().map(|a| a.0).collect(),
            axes: axes.iter().map(|a| a.1).collect(),
            kind,
        });
    }

    fn width(&self, dim: SemanticDim) -> usize {
        dim.width(self.spec)
    }

    fn norm(&mut self, prefix: &str, dim: SemanticDim) {
        let w = self.width(dim);
        self.push(format!("{prefix}.weight"), &[(w, AxisRole::dim(dim))], ParamKind::NormScale);
        self.push(format!("{prefix}.bias"), &[(w, AxisRole::dim(dim))], ParamKind::NormShift);
    }

    /// Dense layer `(out, in)` with bias.
    fn dense(&mut self, prefix: &str, out: (SemanticDim, usize), inp: (SemanticDim, usize)) {
        let out_role = AxisRole::Dim { dim: out.0, groups: out.1 };
        let in_role = AxisRole::Dim { dim: inp.0, groups: inp.1 };
        let (wo, wi) = (self.width(out.0) * out.1, self.width(inp.0) * inp.1);
        self.push(format!("{prefix}.weight"), &[(wo, out_role), (wi, in_role)], ParamKind::Weight);
        self.push(format!("{prefix}.bias"), &[(wo, out_role)], ParamKind::Bias);
    }

    fn mlp(&mut self, prefix: &str, stage: usize) {
        let (e, h) = (SemanticDim::embed(stage), SemanticDim::hidden(stage));
        self.dense(&format!("{prefix}.mlp.fc1"), (h, 1), (e, 1));
        self.dense(&format!("{prefix}.mlp.fc2"), (e, 1), (h, 1));
    }

    fn stem(&mut self) {
        let e = SemanticDim::embed(0);
        let (w, f) = (self.width(e), self.spec.patch_features());
        self.push("embed.weight".into(), &[(w, AxisRole::dim(e)), (f, AxisRole::Fixed)], ParamKind::Weight);
        self.push("embed.bias".into(), &[(w, AxisRole::dim(e))], ParamKind::Bias);
    }

    fn head(&mut self) {
        let last = SemanticDim::embed(self.spec.stages() - 1);
        let (k, w) = (self.spec.classes, self.width(last));
        self.push("head.weight".into(), &[(k, AxisRole::Classes), (w, AxisRole::dim(last))], ParamKind::HeadWeight);
        self.push("head.bias".into(), &[(k, AxisRole::Classes)], ParamKind::HeadBias);
    }
}

/// The full name/shape/axis table of `spec`, in forward-pass order.
pub fn layout(spec: &ModelSpec) -> Result<Vec<TensorLayout>> {
    spec.validate()?;
    let mut b = Builder { spec, out: Vec::new() };
    b.stem();
    match spec.family {
        Family::Isotropic => {
            let e = SemanticDim::embed(0);
            let w = b.width(e);
            b.push("pos".into(), &[(spec.num_patches(), AxisRole::Fixed), (w, AxisRole::dim(e))], ParamKind::Positional);
            for j in 0..spec.stage_depths[0] {
                let p = format!("stage0.block{j}");
                b.norm(&format!("{p}.norm1"), e);
                b.dense(&format!("{p}.attn.qkv"), (e, 3), (e, 1));
                b.dense(&format!("{p}.attn.proj"), (e, 1), (e, 1));
                b.norm(&format!("{p}.norm2"), e);
                b.mlp(&p, 0);
            }
        }
        Family::Hierarchical => {
            b.norm("embed.norm", SemanticDim::embed(0));
            for (i, &depth) in spec.stage_depths.iter().enumerate() {
                let e = SemanticDim::embed(i);
                if i > 0 {
                    let prev = SemanticDim::embed(i - 1);
                    b.norm(&format!("stage{i}.down.norm"), prev);
                    b.dense(&format!("stage{i}.down.reduction"), (e, 1), (prev, 4));
                }
                for j in 0..depth {
                    let p = format!("stage{i}.block{j}");
                    let w = b.width(e);
                    b.push(
                        format!("{p}.dwconv.weight"),
                        &[(w, AxisRole::dim(e)), (3, AxisRole::Fixed), (3, AxisRole::Fixed)],
                        ParamKind::Weight,
                    );
                    b.push(format!("{p}.dwconv.bias"), &[(w, AxisRole::dim(e))], ParamKind::Bias);
                    b.norm(&format!("{p}.norm"), e);
                    b.mlp(&p, i);
                }
            }
        }
    }
    b.head();
    Ok(b.out)
}
