//! Parameter storage, seeded initialization and the binary weight format.
//!
//! File layout (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "VITW"
//! version    u32      1
//! config     u64 x 6  image_size patch_size layers d_model heads mlp_hidden
//!            f64      eps
//!            u64      embed_dim (0 = no projection)
//! count      u32      number of tensors
//! tensor*    u32 name length, UTF-8 name,
//!            u32 rank, u64 x rank dims,
//!            f64 x prod(dims) row-major data
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256StarStar;

use super::ViTConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"VITW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: ViTConfig,
    pub params: Vec<Param>,
}

enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation.
    Normal(f64),
    /// Fixed 2D sine-cosine table over the patch grid; the CLS row is zero.
    SinCos2d,
}

/// Row `1 + gy * grid + gx` holds `[sin(gy w), cos(gy w), sin(gx w), cos(gx w)]`
/// with `w_i = 10000^(-i / (d/4))`, `i < d/4`. Needs `d % 4 == 0`.
fn sincos_2d(grid: usize, d: usize) -> Tensor {
    let q = d / 4;
    Tensor::from_fn(&[1 + grid * grid, d], |flat| {
        let (row, col) = (flat / d, flat % d);
        if row == 0 {
            return 0.0;
        }
        let cell = row - 1;
        let (block, i) = (col / q, col % q);
        let coord = if block < 2 { cell / grid } else { cell % grid } as f64;
        let w = libm::pow(10000.0, -(i as f64) / q as f64);
        if block % 2 == 0 {
            libm::sin(coord * w)
        } else {
            libm::cos(coord * w)
        }
    })
}

/// Parameter names, shapes and initializers in canonical order.
fn layout(c: &ViTConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.d_model;
    let fan = |n: usize| Init::Normal(1.0 / (n as f64).sqrt());
    let mut out = vec![
        (
            "patch.w".to_string(),
            vec![c.patch_dim(), d],
            fan(c.patch_dim()),
        ),
        ("patch.b".to_string(), vec![d], Init::Zeros),
        ("cls".to_string(), vec![1, d], Init::Normal(0.02)),
        (
            "pos".to_string(),
            vec![c.seq_len(), d],
            if d.is_multiple_of(4) {
                Init::SinCos2d
            } else {
                Init::Normal(0.02)
            },
        ),
    ];
    for l in 0..c.layers {
        let p = |s: &str| format!("blocks.{l}.{s}");
        out.extend([
            (p("ln1.g"), vec![d], Init::Ones),
            (p("ln1.b"), vec![d], Init::Zeros),
            (p("attn.qkv.w"), vec![d, 3 * d], fan(d)),
            (p("attn.qkv.b"), vec![3 * d], Init::Zeros),
            (p("attn.out.w"), vec![d, d], fan(d)),
            (p("attn.out.b"), vec![d], Init::Zeros),
            (p("ln2.g"), vec![d], Init::Ones),
            (p("ln2.b"), vec![d], Init::Zeros),
            (p("mlp.fc1.w"), vec![d, c.mlp_hidden], fan(d)),
            (p("mlp.fc1.b"), vec![c.mlp_hidden], Init::Zeros),
            (p("mlp.fc2.w"), vec![c.mlp_hidden, d], fan(c.mlp_hidden)),
            (p("mlp.fc2.b"), vec![d], Init::Zeros),
        ]);
    }
    out.extend([
        ("ln_f.g".to_string(), vec![d], Init::Ones),
        ("ln_f.b".to_string(), vec![d], Init::Zeros),
        ("head.w".to_string(), vec![d, c.num_outputs()], fan(d)),
        ("head.b".to_string(), vec![c.num_outputs()], Init::Zeros),
    ]);
    if let Some(e) = c.embed_dim {
        out.push(("proj.w".to_string(), vec![d, e], fan(d)));
    }
    out
}

impl ModelWeights {
    /// Seeded initialization: normal `1/sqrt(fan_in)` for projection
    /// matrices, normal 0.02 for the CLS token, a fixed 2D sine-cosine table
    /// for positions (normal 0.02 when `d_model % 4 != 0`), zero biases, unit
    /// layernorm gains. Draws come from xoshiro256** in layout order.
    pub fn init(config: &ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let params = layout(config)
            .into_iter()
            .map(|(name, shape, init)| {
                let value = match init {
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::full(&shape, 1.0),
                    Init::SinCos2d => sincos_2d(config.grid(), config.d_model),
                    Init::Normal(std) => {
                        let dist = Normal::new(0.0, std).expect("positive std");
                        Tensor::from_fn(&shape, |_| dist.sample(&mut rng))
                    }
                };
                Param { name, value }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + self.param_count() * 8);
        out.extend_from_slice(&WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        for v in [
            c.image_size,
            c.patch_size,
            c.layers,
            c.d_model,
            c.heads,
            c.mlp_hidden,
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&c.eps.to_le_bytes());
        out.extend_from_slice(&(c.embed_dim.unwrap_or(0) as u64).to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decode a weight file, requiring its config echo to equal `expected`.
    pub fn from_bytes(bytes: &[u8], expected: &ViTConfig) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != WEIGHTS_MAGIC {
            return Err(Error::Format(format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(&WEIGHTS_MAGIC),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!(
                "unsupported weight format version {version}"
            )));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u64()? as usize;
        }
        let eps = r.f64()?;
        let embed = r.u64()? as usize;
        let config = ViTConfig {
            image_size: dims[0],
            patch_size: dims[1],
            layers: dims[2],
            d_model: dims[3],
            heads: dims[4],
            mlp_hidden: dims[5],
            eps,
            embed_dim: (embed != 0).then_some(embed),
        };
        if &config != expected {
            return Err(Error::Format(format!(
                "weight file config {config:?} does not match expected {expected:?}"
            )));
        }
        let layout = layout(&config);
        let count = r.u32()? as usize;
        if count != layout.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {count}",
                layout.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for (want_name, want_shape, _) in layout {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            if name != want_name {
                return Err(Error::Format(format!(
                    "expected tensor {want_name}, found {name}"
                )));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != want_shape {
                return Err(Error::Format(format!(
                    "tensor {name}: expected shape {want_shape:?}, found {shape:?}"
                )));
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(Param {
                name,
                value: Tensor::new(&shape, data)?,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { config, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Format(format!(
                "truncated weight file: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    std::fs::write(path, weights.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path, expected: &ViTConfig) -> Result<ModelWeights> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelWeights::from_bytes(&bytes, expected)
}
