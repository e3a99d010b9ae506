//! Pre-LN ViT forward pass on the autodiff tape.
//!
//! Every block computes
//!
//! ```text
//! x = x + Attn(LN1(x))
//! a = fc2(gelu(fc1(LN2(x))))      <- tapped: post-fc2, pre-residual
//! x = x + a
//! ```
//!
//! The final layernorm of the CLS token is the embedding precursor; the
//! feature head reads it directly and the optional projection maps it to the
//! image embedding.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ModelWeights, ViTConfig};
use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::tensor::{Tape, Tensor, Var};

/// Per-channel pixel normalization: `(v / 255 - MEAN) / STD`.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.5;

/// One monitored MLP output unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub unit: usize,
}

impl NeuronId {
    pub fn new(layer: usize, unit: usize) -> Self {
        Self { layer, unit }
    }

    /// Row index in layer-major order.
    pub fn flat(&self, d_model: usize) -> usize {
        self.layer * d_model + self.unit
    }
}

impl std::fmt::Display for NeuronId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}U{}", self.layer, self.unit)
    }
}

/// Which neurons to record during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Taps {
    None,
    All,
    Some(Vec<NeuronId>),
}

impl Taps {
    fn resolve(&self, config: &ViTConfig) -> Result<Vec<NeuronId>> {
        match self {
            Taps::None => Ok(Vec::new()),
            Taps::All => Ok((0..config.layers)
                .flat_map(|l| (0..config.d_model).map(move |u| NeuronId::new(l, u)))
                .collect()),
            Taps::Some(list) => {
                for n in list {
                    if n.layer >= config.layers || n.unit >= config.d_model {
                        return Err(Error::Input(format!(
                            "tap {n} outside {} layers x {} units",
                            config.layers, config.d_model
                        )));
                    }
                }
                Ok(list.clone())
            }
        }
    }
}

/// Activations of one neuron over the token sequence (CLS first).
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord {
    pub neuron: NeuronId,
    pub per_token: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEmbedding {
    pub image_id: u64,
    pub vector: Vec<f64>,
}

/// Result of an inference pass over one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult {
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
    pub records: Vec<ActivationRecord>,
}

/// Model parameters registered on a tape, addressable by name.
pub struct BoundParams<'t> {
    pub vars: Vec<Var<'t>>,
    index: HashMap<String, usize>,
}

impl<'t> BoundParams<'t> {
    pub fn bind(tape: &'t Tape, weights: &ModelWeights, requires_grad: bool) -> Self {
        let vars = weights
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), requires_grad))
            .collect();
        let index = weights
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Self { vars, index }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }
}

/// Handles to the interesting nodes of one forward graph.
pub struct Graph<'t> {
    /// `(B, 16)` feature logits.
    pub logits: Var<'t>,
    /// `(B, d_model)` final-layernorm CLS representation.
    pub precursor: Var<'t>,
    /// `(B, embed_dim)` image embedding (the precursor when unprojected).
    pub embedding: Var<'t>,
    /// Per block, the `(B, T, d_model)` MLP output after any hook.
    pub mlp_out: Vec<Var<'t>>,
}

/// `(B, H, W, 3)` normalized pixel tensor.
pub fn pixel_tensor(images: &[&RasterImage], config: &ViTConfig) -> Result<Tensor> {
    let side = config.image_size;
    if images.is_empty() {
        return Err(Error::Input("empty image batch".into()));
    }
    let mut data = Vec::with_capacity(images.len() * side * side * 3);
    for img in images {
        if img.width as usize != side || img.height as usize != side {
            return Err(Error::Input(format!(
                "image is {}x{}, encoder expects {side}x{side}",
                img.width, img.height
            )));
        }
        data.extend(
            img.pixels
                .iter()
                .map(|&v| (v as f64 / 255.0 - PIXEL_MEAN) / PIXEL_STD),
        );
    }
    Tensor::new(&[images.len(), side, side, 3], data)
}

fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
    let y = x.matmul(&w)?;
    match b {
        Some(b) => {
            let rows = y.shape()[0];
            y.add(&b.broadcast_leading(rows)?)
        }
        None => Ok(y),
    }
}

/// CLS + patch tokens with positional embeddings, `(B, T, d_model)`.
pub fn embed_tokens<'t>(c: &ViTConfig, p: &BoundParams<'t>, pixels: Var<'t>) -> Result<Var<'t>> {
    let shape = pixels.shape();
    if shape.len() != 4 || shape[1] != c.image_size || shape[2] != c.image_size || shape[3] != 3 {
        return Err(Error::Input(format!(
            "pixel tensor {shape:?} does not match image size {}",
            c.image_size
        )));
    }
    let (b, g, ps, d) = (shape[0], c.grid(), c.patch_size, c.d_model);
    let patches = pixels
        .reshape(&[b, g, ps, g, ps, 3])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b * g * g, c.patch_dim()])?;
    let tokens =
        linear(patches, p.get("patch.w")?, Some(p.get("patch.b")?))?.reshape(&[b, g * g, d])?;
    let cls = p.get("cls")?.broadcast_leading(b)?;
    let seq = Var::concat(&[cls, tokens], 1)?;
    seq.add(&p.get("pos")?.broadcast_leading(b)?)
}

fn attention<'t>(c: &ViTConfig, p: &BoundParams<'t>, l: usize, h: Var<'t>) -> Result<Var<'t>> {
    let shape = h.shape();
    let (b, t, d) = (shape[0], shape[1], shape[2]);
    let (heads, hd) = (c.heads, c.head_dim());
    let name = |s: &str| format!("blocks.{l}.attn.{s}");
    let qkv = linear(
        h.reshape(&[b * t, d])?,
        p.get(&name("qkv.w"))?,
        Some(p.get(&name("qkv.b"))?),
    )?
    .reshape(&[b, t, 3, heads, hd])?
    .permute(&[2, 0, 3, 1, 4])?;
    let part =
        |i: usize| -> Result<Var<'t>> { qkv.slice(0, i, i + 1)?.reshape(&[b, heads, t, hd]) };
    let (q, k, v) = (part(0)?, part(1)?, part(2)?);
    let scores = q
        .matmul(&k.transpose(2, 3)?)?
        .scale(1.0 / (hd as f64).sqrt());
    let mixed = scores
        .softmax(3)?
        .matmul(&v)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b * t, d])?;
    linear(mixed, p.get(&name("out.w"))?, Some(p.get(&name("out.b"))?))?.reshape(&[b, t, d])
}

fn mlp<'t>(p: &BoundParams<'t>, l: usize, h: Var<'t>) -> Result<Var<'t>> {
    let shape = h.shape();
    let (b, t, d) = (shape[0], shape[1], shape[2]);
    let name = |s: &str| format!("blocks.{l}.mlp.{s}");
    let hidden = linear(
        h.reshape(&[b * t, d])?,
        p.get(&name("fc1.w"))?,
        Some(p.get(&name("fc1.b"))?),
    )?
    .gelu();
    linear(hidden, p.get(&name("fc2.w"))?, Some(p.get(&name("fc2.b"))?))?.reshape(&[b, t, d])
}

fn layernorm<'t>(p: &BoundParams<'t>, prefix: &str, x: Var<'t>, eps: f64) -> Result<Var<'t>> {
    x.layernorm(
        &p.get(&format!("{prefix}.g"))?,
        &p.get(&format!("{prefix}.b"))?,
        eps,
    )
}

/// Build the full forward graph. `hook(layer, mlp_out)` may replace each
/// block's MLP output before the residual addition; return the input to
/// leave it unchanged.
pub fn build_graph<'t>(
    c: &ViTConfig,
    p: &BoundParams<'t>,
    pixels: Var<'t>,
    hook: &mut dyn FnMut(usize, Var<'t>) -> Result<Var<'t>>,
) -> Result<Graph<'t>> {
    let mut x = embed_tokens(c, p, pixels)?;
    let mut mlp_out = Vec::with_capacity(c.layers);
    for l in 0..c.layers {
        let h = layernorm(p, &format!("blocks.{l}.ln1"), x, c.eps)?;
        x = x.add(&attention(c, p, l, h)?)?;
        let h = layernorm(p, &format!("blocks.{l}.ln2"), x, c.eps)?;
        let a = hook(l, mlp(p, l, h)?)?;
        mlp_out.push(a);
        x = x.add(&a)?;
    }
    let b = x.shape()[0];
    let precursor = layernorm(p, "ln_f", x, c.eps)?
        .slice(1, 0, 1)?
        .reshape(&[b, c.d_model])?;
    let logits = linear(precursor, p.get("head.w")?, Some(p.get("head.b")?))?;
    let embedding = match c.embed_dim {
        Some(_) => linear(precursor, p.get("proj.w")?, None)?,
        None => precursor,
    };
    Ok(Graph {
        logits,
        precursor,
        embedding,
        mlp_out,
    })
}

pub fn no_hook<'t>(_: usize, v: Var<'t>) -> Result<Var<'t>> {
    Ok(v)
}

/// Token sequence `(T, d_model)` for one image: CLS first, positions added.
pub fn patch_embed(weights: &ModelWeights, image: &RasterImage) -> Result<Tensor> {
    let c = &weights.config;
    let tape = Tape::new();
    let p = BoundParams::bind(&tape, weights, false);
    let pixels = tape.constant(pixel_tensor(&[image], c)?);
    let seq = embed_tokens(c, &p, pixels)?;
    seq.to_tensor().reshape(&[c.seq_len(), c.d_model])
}

/// Inference over a batch of images, recording the requested taps.
pub fn forward_batch(
    weights: &ModelWeights,
    images: &[&RasterImage],
    taps: &Taps,
) -> Result<Vec<ForwardResult>> {
    let c = &weights.config;
    let neurons = taps.resolve(c)?;
    let tape = Tape::new();
    let p = BoundParams::bind(&tape, weights, false);
    let pixels = tape.constant(pixel_tensor(images, c)?);
    let g = build_graph(c, &p, pixels, &mut no_hook)?;
    let logits = g.logits.to_tensor();
    let emb = g.embedding.to_tensor();
    let acts: Vec<Tensor> = if neurons.is_empty() {
        Vec::new()
    } else {
        g.mlp_out.iter().map(|v| v.to_tensor()).collect()
    };
    let (nf, e, t, d) = (c.num_outputs(), c.embedding_dim(), c.seq_len(), c.d_model);
    Ok((0..images.len())
        .map(|i| ForwardResult {
            logits: logits.data()[i * nf..(i + 1) * nf].to_vec(),
            embedding: emb.data()[i * e..(i + 1) * e].to_vec(),
            records: neurons
                .iter()
                .map(|n| {
                    let a = acts[n.layer].data();
                    ActivationRecord {
                        neuron: *n,
                        per_token: (0..t).map(|tok| a[(i * t + tok) * d + n.unit]).collect(),
                    }
                })
                .collect(),
        })
        .collect())
}

pub fn forward(weights: &ModelWeights, image: &RasterImage, taps: &Taps) -> Result<ForwardResult> {
    Ok(forward_batch(weights, &[image], taps)?.remove(0))
}

/// Embed many images in fixed-size chunks.
pub fn embed_images(
    weights: &ModelWeights,
    images: &[RasterImage],
    ids: &[u64],
    chunk: usize,
) -> Result<Vec<ImageEmbedding>> {
    let mut out = Vec::with_capacity(images.len());
    for (imgs, ids) in images.chunks(chunk.max(1)).zip(ids.chunks(chunk.max(1))) {
        let refs: Vec<&RasterImage> = imgs.iter().collect();
        for (r, &id) in forward_batch(weights, &refs, &Taps::None)?
            .into_iter()
            .zip(ids)
        {
            out.push(ImageEmbedding {
                image_id: id,
                vector: r.embedding,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_rows_are_contiguous_blocks() {
        let (b, side, ps) = (2, 8, 4);
        let g = side / ps;
        let data: Vec<f64> = (0..b * side * side * 3).map(|v| v as f64).collect();
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[b, side, side, 3], data.clone()).unwrap());
        let patches = x
            .reshape(&[b, g, ps, g, ps, 3])
            .unwrap()
            .permute(&[0, 1, 3, 2, 4, 5])
            .unwrap()
            .reshape(&[b * g * g, ps * ps * 3])
            .unwrap()
            .to_tensor();
        for n in 0..b {
            for gy in 0..g {
                for gx in 0..g {
                    let row = (n * g + gy) * g + gx;
                    for py in 0..ps {
                        for px in 0..ps {
                            for ch in 0..3 {
                                let (y, xx) = (gy * ps + py, gx * ps + px);
                                let want = data[((n * side + y) * side + xx) * 3 + ch];
                                let got =
                                    patches.data()[row * ps * ps * 3 + (py * ps + px) * 3 + ch];
                                assert_eq!(got, want);
                            }
                        }
                    }
                }
            }
        }
    }
}
