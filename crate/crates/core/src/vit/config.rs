use serde::{Deserialize, Serialize};

use crate::dataset::NUM_FEATURES;
use crate::error::{Error, Result};

/// Encoder geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub eps: f64,
    /// Width of the optional embedding projection applied to the final CLS.
    pub embed_dim: Option<usize>,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ViTConfig {
    /// Desk-scale default: 512 monitored neurons, minutes to train.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            layers: 4,
            d_model: 128,
            heads: 4,
            mlp_hidden: 256,
            eps: 1e-5,
            embed_dim: Some(64),
        }
    }

    /// CLIP-ViT-L/14 geometry (never instantiated with weights here).
    pub fn full_scale() -> Self {
        Self {
            image_size: 224,
            patch_size: 14,
            layers: 24,
            d_model: 1024,
            heads: 16,
            mlp_hidden: 4096,
            eps: 1e-5,
            embed_dim: Some(768),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("mlp_hidden", self.mlp_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("layernorm eps must be positive".into()));
        }
        if self.embed_dim == Some(0) {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// CLS plus patch tokens.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    /// One tap per MLP output unit per block.
    pub fn monitored_neurons(&self) -> usize {
        self.layers * self.d_model
    }

    pub fn embedding_dim(&self) -> usize {
        self.embed_dim.unwrap_or(self.d_model)
    }

    pub fn num_outputs(&self) -> usize {
        NUM_FEATURES
    }
}
