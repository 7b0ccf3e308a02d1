use std::collections::HashMap;

use super::{Family, ModelSpec, Parameters};
use crate::tensor::Grid;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Parameter name → tape node for one forward pass.
#[derive(Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Contract(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Registers every tensor of `params` on `tape` as a leaf.
pub fn bind(tape: &mut Tape, params: &Parameters) -> Bound {
    Bound { vars: params.iter().map(|(name, t)| (name.to_string(), tape.leaf(t))).collect() }
}

/// Cuts a (B, C, H, W) batch into non-overlapping patches:
/// (B·gh·gw, C·p·p), tokens row-major over the grid, features ordered
/// (channel, dy, dx).
pub fn patchify(batch: &Tensor, spec: &ModelSpec) -> Result<Tensor> {
    let img = spec.image;
    let b = match batch.shape() {
        [b, c, h, w] if *c == img.channels && *h == img.height && *w == img.width => *b,
        s => {
            return Err(Error::Dimension(format!(
                "batch of shape {s:?} does not match image {}x{}x{}",
                img.channels, img.height, img.width
            )))
        }
    };
    let p = spec.patch;
    let (gh, gw) = spec.patch_grid();
    let x = batch.data();
    let mut out = Vec::with_capacity(x.len());
    for bi in 0..b {
        for gy in 0..gh {
            for gx in 0..gw {
                for c in 0..img.channels {
                    for dy in 0..p {
                        let row = ((bi * img.channels + c) * img.height + gy * p + dy) * img.width + gx * p;
                        out.extend_from_slice(&x[row..row + p]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![b * gh * gw, spec.patch_features()], out)
}

/// Records the forward pass of `spec` on `tape` and returns the (B, K) logits.
pub fn forward_on_tape(tape: &mut Tape, bound: &Bound, spec: &ModelSpec, batch: &Tensor) -> Result<Var> {
    let patches = patchify(batch, spec)?;
    let b = batch.shape()[0];
    let x = tape.constant(&patches);
    let p = |name: &str| bound.get(name);
    let x = tape.linear(x, p("embed.weight")?, Some(p("embed.bias")?))?;
    let pooled = match spec.family {
        Family::Isotropic => {
            let tokens = spec.num_patches();
            let mut x = tape.add_tiled(x, p("pos")?)?;
            for j in 0..spec.stage_depths[0] {
                let pre = format!("stage0.block{j}");
                let w = |c: &str| p(&format!("{pre}.{c}"));
                let h = tape.layernorm(x, w("norm1.weight")?, w("norm1.bias")?)?;
                let qkv = tape.linear(h, w("attn.qkv.weight")?, Some(w("attn.qkv.bias")?))?;
                let a = tape.attention(qkv, b, tokens, spec.heads)?;
                let a = tape.linear(a, w("attn.proj.weight")?, Some(w("attn.proj.bias")?))?;
                x = tape.add(x, a)?;
                let h = tape.layernorm(x, w("norm2.weight")?, w("norm2.bias")?)?;
                let h = mlp(tape, h, &pre, &p)?;
                x = tape.add(x, h)?;
            }
            tape.mean_pool(x, tokens)?
        }
        Family::Hierarchical => {
            let (gh, gw) = spec.patch_grid();
            let mut geom = Grid { batch: b, h: gh, w: gw, c: spec.stage_dims[0] };
            let mut x = tape.layernorm(x, p("embed.norm.weight")?, p("embed.norm.bias")?)?;
            for (i, &depth) in spec.stage_depths.iter().enumerate() {
                if i > 0 {
                    let w = |c: &str| p(&format!("stage{i}.down.{c}"));
                    let h = tape.layernorm(x, w("norm.weight")?, w("norm.bias")?)?;
                    let merged = tape.patch_merge(h, geom)?;
                    x = tape.linear(merged, w("reduction.weight")?, Some(w("reduction.bias")?))?;
                    geom = Grid { batch: b, h: geom.h / 2, w: geom.w / 2, c: spec.stage_dims[i] };
                }
                for j in 0..depth {
                    let pre = format!("stage{i}.block{j}");
                    let w = |c: &str| p(&format!("{pre}.{c}"));
                    let h = tape.dwconv3(x, w("dwconv.weight")?, w("dwconv.bias")?, geom)?;
                    let h = tape.layernorm(h, w("norm.weight")?, w("norm.bias")?)?;
                    let h = mlp(tape, h, &pre, &p)?;
                    x = tape.add(x, h)?;
                }
            }
            tape.mean_pool(x, geom.h * geom.w)?
        }
    };
    tape.linear(pooled, p("head.weight")?, Some(p("head.bias")?))
}

fn mlp(tape: &mut Tape, h: Var, prefix: &str, p: &impl Fn(&str) -> Result<Var>) -> Result<Var> {
    let w = |c: &str| p(&format!("{prefix}.mlp.{c}"));
    let h = tape.linear(h, w("fc1.weight")?, Some(w("fc1.bias")?))?;
    let h = tape.gelu(h);
    tape.linear(h, w("fc2.weight")?, Some(w("fc2.bias")?))
}

/// Inference-only forward pass.
pub fn forward(params: &Parameters, spec: &ModelSpec, batch: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::no_grad();
    let bound = bind(&mut tape, params);
    let logits = forward_on_tape(&mut tape, &bound, spec, batch)?;
    Ok(tape.tensor(logits))
}
