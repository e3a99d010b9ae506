//! Gradient-weighted class activation maps over MLP outputs.
//!
//! The score being explained is a sum of feature logits: `{green}` scores a
//! single attribute, `{green, square}` stands in for the conjunction "a green
//! square". The activation map `A` is the chosen block's post-fc2 output at
//! the patch tokens, shaped `(H, W, C)`; `G = dScore/dA` comes from one
//! backward pass. Channel weights are the spatial means of `G`, and the map
//! is `ReLU(sum_c alpha_c A^c)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureId;
use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::tensor::{Tape, Tensor, Var};
use crate::vit::{build_graph, pixel_tensor, BoundParams, ModelWeights};

/// Nonempty set of features whose logits are summed into the score.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ScoreSelector {
    features: Vec<FeatureId>,
}

impl ScoreSelector {
    pub fn new(features: impl IntoIterator<Item = FeatureId>) -> Result<Self> {
        let mut features: Vec<FeatureId> = features.into_iter().collect();
        features.sort();
        features.dedup();
        if features.is_empty() {
            return Err(Error::Input(
                "score selector needs at least one feature".into(),
            ));
        }
        Ok(Self { features })
    }

    /// Parse `"green+square"`.
    pub fn parse(text: &str) -> Result<Self> {
        let features = text
            .split('+')
            .map(|name| {
                FeatureId::from_name(name.trim())
                    .ok_or_else(|| Error::Input(format!("unknown feature {name:?} in selector")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(features)
    }

    pub fn features(&self) -> &[FeatureId] {
        &self.features
    }

    pub fn name(&self) -> String {
        self.features
            .iter()
            .map(|f| f.name())
            .collect::<Vec<_>>()
            .join("+")
    }

    fn score<'t>(&self, logits: Var<'t>) -> Result<Var<'t>> {
        let mut total: Option<Var<'t>> = None;
        for f in &self.features {
            let z = logits.slice(1, f.index(), f.index() + 1)?;
            total = Some(match total {
                Some(t) => t.add(&z)?,
                None => z,
            });
        }
        Ok(total.expect("selector is nonempty"))
    }
}

impl Serialize for ScoreSelector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for ScoreSelector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        ScoreSelector::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// How the selector's logit sum becomes the differentiated score.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScoreMode {
    /// The raw logit sum.
    #[default]
    LogitSum,
    /// Probability of the target under a softmax over the target and the
    /// competing selectors' logit sums.
    Softmax { candidates: Vec<ScoreSelector> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Capture {
    pub layer: usize,
    /// `(H, W, C)` patch-token activations.
    pub activations: Tensor,
    /// `(H, W, C)` gradient of the score with respect to `activations`.
    pub gradients: Tensor,
    pub score: f64,
}

fn check_layer(weights: &ModelWeights, layer: usize) -> Result<()> {
    if layer >= weights.config.layers {
        return Err(Error::Input(format!(
            "layer {layer} outside the {} blocks",
            weights.config.layers
        )));
    }
    Ok(())
}

fn score_var<'t>(logits: Var<'t>, selector: &ScoreSelector, mode: &ScoreMode) -> Result<Var<'t>> {
    let target = selector.score(logits)?;
    let s = match mode {
        ScoreMode::LogitSum => target,
        ScoreMode::Softmax { candidates } => {
            let mut parts = vec![target];
            for c in candidates {
                parts.push(c.score(logits)?);
            }
            Var::concat(&parts, 1)?.softmax(1)?.slice(1, 0, 1)?
        }
    };
    s.reshape(&[])
}

/// Drop the CLS token and reshape `(1, T, C)` to the `(H, W, C)` patch grid.
fn to_grid(tokens: &Tensor, grid: usize) -> Result<Tensor> {
    let c = *tokens.shape().last().unwrap();
    Tensor::new(&[grid, grid, c], tokens.data()[c..].to_vec())
}

/// Activations and score gradients at block `layer` (default: last block).
pub fn capture(
    weights: &ModelWeights,
    image: &RasterImage,
    selector: &ScoreSelector,
    layer: Option<usize>,
    mode: &ScoreMode,
) -> Result<Capture> {
    let c = &weights.config;
    let layer = layer.unwrap_or(c.layers - 1);
    check_layer(weights, layer)?;
    let tape = Tape::new();
    let p = BoundParams::bind(&tape, weights, false);
    let pixels = tape.constant(pixel_tensor(&[image], c)?);
    let g = build_graph(c, &p, pixels, &mut |l, a| {
        if l == layer {
            Ok(tape.leaf(a.to_tensor(), true))
        } else {
            Ok(a)
        }
    })?;
    let a = g.mlp_out[layer];
    let score = score_var(g.logits, selector, mode)?;
    let value = score.value().item()?;
    let grads = tape.backward(score)?;
    let activations = to_grid(&a.to_tensor(), c.grid())?;
    let gradients = to_grid(&grads.get_or_zeros(a), c.grid())?;
    Ok(Capture {
        layer,
        activations,
        gradients,
        score: value,
    })
}

/// Score of `image` when block `layer`'s MLP output is replaced by
/// `replacement` (shape `(1, T, C)`, CLS first).
pub fn score_with_replaced_activation(
    weights: &ModelWeights,
    image: &RasterImage,
    selector: &ScoreSelector,
    layer: usize,
    mode: &ScoreMode,
    replacement: &Tensor,
) -> Result<f64> {
    let c = &weights.config;
    check_layer(weights, layer)?;
    let tape = Tape::new();
    let p = BoundParams::bind(&tape, weights, false);
    let pixels = tape.constant(pixel_tensor(&[image], c)?);
    let g = build_graph(c, &p, pixels, &mut |l, a| {
        if l != layer {
            return Ok(a);
        }
        if a.shape() != replacement.shape() {
            return Err(Error::dim(
                "replace_activation",
                &a.shape(),
                replacement.shape(),
            ));
        }
        Ok(tape.constant(replacement.clone()))
    })?;
    let s = score_var(g.logits, selector, mode)?;
    s.to_tensor().item()
}

/// `alpha_c = (1 / HW) sum_ij G_ij^c`.
pub fn channel_weights(gradients: &Tensor) -> Result<Vec<f64>> {
    let shape = gradients.shape();
    if shape.len() != 3 {
        return Err(Error::dim("channel_weights", shape, &[0, 0, 0]));
    }
    let (cells, c) = (shape[0] * shape[1], shape[2]);
    let mut alpha = vec![0.0; c];
    for cell in gradients.data().chunks_exact(c) {
        for (a, g) in alpha.iter_mut().zip(cell) {
            *a += g;
        }
    }
    for a in &mut alpha {
        *a /= cells as f64;
    }
    Ok(alpha)
}

/// Nonnegative attribution grid and its `[0, 1]`-normalized copy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatMap {
    pub height: usize,
    pub width: usize,
    pub grid: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl HeatMap {
    pub fn from_grid(height: usize, width: usize, grid: Vec<f64>) -> Self {
        let max = grid.iter().copied().fold(0.0, f64::max);
        let normalized = if max > 0.0 {
            grid.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; grid.len()]
        };
        Self {
            height,
            width,
            grid,
            normalized,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.width + col]
    }
}

/// `grid_ij = max(0, sum_c alpha_c A_ij^c)`.
pub fn heatmap(activations: &Tensor, alpha: &[f64]) -> Result<HeatMap> {
    let shape = activations.shape();
    if shape.len() != 3 || shape[2] != alpha.len() {
        return Err(Error::dim("heatmap", shape, &[alpha.len()]));
    }
    let grid = activations
        .data()
        .chunks_exact(alpha.len())
        .map(|cell| {
            let s: f64 = cell.iter().zip(alpha).map(|(a, w)| a * w).sum();
            s.max(0.0)
        })
        .collect();
    Ok(HeatMap::from_grid(shape[0], shape[1], grid))
}

fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Piecewise-linear ramp over `[0, 1]`: blue (0,0,255) → green (0,255,0) →
/// yellow (255,255,0) → red (255,0,0), one third of the range per segment,
/// channels rounded half-up. Inputs are clamped to `[0, 1]`.
pub fn color_ramp(v: f64) -> [u8; 3] {
    let t = 3.0 * v.clamp(0.0, 1.0);
    let (r, g, b) = if t <= 1.0 {
        (0.0, 255.0 * t, 255.0 * (1.0 - t))
    } else if t <= 2.0 {
        (255.0 * (t - 1.0), 255.0, 0.0)
    } else {
        (255.0, 255.0 * (3.0 - t), 0.0)
    };
    [round_half_up(r), round_half_up(g), round_half_up(b)]
}

/// Nearest-neighbour upsampling of a `[0, 1]` grid through [`color_ramp`].
pub fn colorize(values: &[f64], rows: usize, cols: usize, width: u32, height: u32) -> RasterImage {
    let mut out = RasterImage::white(width, height);
    for y in 0..height {
        let r = y as usize * rows / height as usize;
        for x in 0..width {
            let c = x as usize * cols / width as usize;
            out.set_pixel(x, y, color_ramp(values[r * cols + c]));
        }
    }
    out
}

/// Per-channel `0.5 * image + 0.5 * colored`, rounded half-up.
pub fn blend(image: &RasterImage, colored: &RasterImage) -> RasterImage {
    let pixels = image
        .pixels
        .iter()
        .zip(&colored.pixels)
        .map(|(&a, &b)| (a as u16 + b as u16).div_ceil(2) as u8)
        .collect();
    RasterImage {
        width: image.width,
        height: image.height,
        pixels,
    }
}

/// Colored heatmap and its 50/50 overlay on `image`.
pub fn render_overlay(heatmap: &HeatMap, image: &RasterImage) -> (RasterImage, RasterImage) {
    let colored = colorize(
        &heatmap.normalized,
        heatmap.height,
        heatmap.width,
        image.width,
        image.height,
    );
    let overlay = blend(image, &colored);
    (colored, overlay)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub l2: f64,
    pub positive: usize,
}

impl AlphaSummary {
    pub fn of(alpha: &[f64]) -> Self {
        Self {
            min: alpha.iter().copied().fold(f64::INFINITY, f64::min),
            max: alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: alpha.iter().sum::<f64>() / alpha.len().max(1) as f64,
            l2: alpha.iter().map(|a| a * a).sum::<f64>().sqrt(),
            positive: alpha.iter().filter(|&&a| a > 0.0).count(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCamSidecar {
    pub image_id: u64,
    pub selector: String,
    pub mode: ScoreMode,
    pub layer: usize,
    pub score: f64,
    pub alpha: AlphaSummary,
    pub heat_max: f64,
    pub grid: Vec<Vec<f64>>,
}

/// Run capture → weights → heatmap → overlay for one (image, selector) pair
/// and write `{image_id}_{selector}.heat.ppm`, `.overlay.ppm` and `.json`.
pub fn run_and_write(
    dir: &Path,
    weights: &ModelWeights,
    image_id: u64,
    image: &RasterImage,
    selector: &ScoreSelector,
    layer: Option<usize>,
    mode: &ScoreMode,
) -> Result<GradCamSidecar> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cap = capture(weights, image, selector, layer, mode)?;
    let alpha = channel_weights(&cap.gradients)?;
    let map = heatmap(&cap.activations, &alpha)?;
    let (colored, overlay) = render_overlay(&map, image);
    let stem = format!("{image_id}_{}", selector.name());
    colored.write_ppm(&dir.join(format!("{stem}.heat.ppm")))?;
    overlay.write_ppm(&dir.join(format!("{stem}.overlay.ppm")))?;
    let sidecar = GradCamSidecar {
        image_id,
        selector: selector.name(),
        mode: mode.clone(),
        layer: cap.layer,
        score: cap.score,
        alpha: AlphaSummary::of(&alpha),
        heat_max: map.grid.iter().copied().fold(0.0, f64::max),
        grid: map.grid.chunks(map.width).map(|r| r.to_vec()).collect(),
    };
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(sidecar)
}
