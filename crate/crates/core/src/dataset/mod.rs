//! Synthetic shapes dataset: deterministic generation, annotation and
//! rendering.
//!
//! All randomness comes from [`DatasetRng`] seeded by the caller's seed. The
//! training images and the probe set use separate streams
//! (`seed` and `seed ^ PROBE_STREAM`), so changing the probe repetitions never
//! perturbs the training images.
//!
//! Per training image the draws happen in this order:
//!
//! 1. object count `n = min + below(max - min + 1)`;
//! 2. positions: partial Fisher-Yates over the five position cells
//!    (`j = i + below(5 - i)`, swap, take slot `i`) for `i in 0..n`;
//! 3. per object: `shape = below(5)`, `color = below(6)`,
//!    `scale = 0.15 + 0.15 * unit()`, `jitter_x`, `jitter_y` each uniform in
//!    `[-J, J]` with `J = floor(0.1 * canvas / 2)`.
//!
//! Probe images enumerate `(repetition, shape, color, position)` in nested
//! order and draw `scale, jitter_x, jitter_y` the same way.

pub mod feature;
pub mod raster;
pub mod rng;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use feature::{Color, FeatureId, FeatureKind, Position, Shape, NUM_FEATURES};
pub use raster::render_image;
pub use rng::DatasetRng;

use crate::error::{Error, Result};
use crate::image::RasterImage;

pub const PROBE_STREAM: u64 = 0x5052_4f42_4553_4554;
pub const MIN_SCALE: f64 = 0.15;
pub const MAX_SCALE: f64 = 0.30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: Color,
    pub position: Position,
    /// Circumscribed diameter as a fraction of the canvas side.
    pub scale: f64,
    /// Pixel offset from the position anchor.
    pub jitter: [i32; 2],
}

impl ObjectSpec {
    pub fn features(&self) -> [FeatureId; 3] {
        [self.shape.into(), self.color.into(), self.position.into()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageAnnotation {
    pub image_id: u64,
    pub objects: Vec<ObjectSpec>,
    pub feature_counts: [u32; NUM_FEATURES],
    pub feature_present: [u8; NUM_FEATURES],
}

impl ImageAnnotation {
    pub fn new(image_id: u64, objects: Vec<ObjectSpec>) -> Self {
        let feature_counts = feature_vector(&objects);
        let feature_present = feature_counts.map(|c| u8::from(c > 0));
        Self {
            image_id,
            objects,
            feature_counts,
            feature_present,
        }
    }

    pub fn has(&self, feature: FeatureId) -> bool {
        self.feature_counts[feature.index()] > 0
    }

    /// Checks the annotation invariants (used when loading a manifest).
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.objects.len() > 5 {
            return Err(Error::Consistency(format!(
                "image {} has {} objects",
                self.image_id,
                self.objects.len()
            )));
        }
        let expected = feature_vector(&self.objects);
        if expected != self.feature_counts
            || self.feature_present != expected.map(|c| u8::from(c > 0))
        {
            return Err(Error::Consistency(format!(
                "image {} feature vectors disagree with its objects",
                self.image_id
            )));
        }
        Ok(())
    }
}

/// Object-level feature counts in [`FeatureId`] order.
pub fn feature_vector(objects: &[ObjectSpec]) -> [u32; NUM_FEATURES] {
    let mut counts = [0u32; NUM_FEATURES];
    for object in objects {
        for f in object.features() {
            counts[f.index()] += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub image_count: usize,
    /// Side of the square canvas in pixels.
    pub canvas: u32,
    /// Encoder patch size; the canvas must be a multiple of it.
    pub patch_size: u32,
    pub min_objects: u32,
    pub max_objects: u32,
    /// Repetitions of the full 5x6x5 single-object probe grid; 0 disables it.
    pub probe_repeats: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            image_count: 500,
            canvas: 64,
            patch_size: 8,
            min_objects: 1,
            max_objects: 5,
            probe_repeats: 1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas == 0 {
            return Err(Error::Config("canvas must be nonzero".into()));
        }
        if self.patch_size == 0 || !self.canvas.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "canvas {} is not divisible by patch size {}",
                self.canvas, self.patch_size
            )));
        }
        if self.min_objects < 1 || self.max_objects > 5 || self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "object range {}..={} is not within 1..=5",
                self.min_objects, self.max_objects
            )));
        }
        // Smallest canvas on which the largest jittered object at a corner
        // anchor still spans at least one pixel of margin.
        if self.canvas < 16 {
            return Err(Error::Config(format!(
                "canvas {} is too small for the object size range",
                self.canvas
            )));
        }
        Ok(())
    }

    fn jitter_bound(&self) -> u32 {
        (0.1 * self.canvas as f64 / 2.0).floor() as u32
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: DatasetConfig,
    /// Feature names in index order, for readers of the JSON.
    pub features: Vec<String>,
    pub annotations: Vec<ImageAnnotation>,
    pub probe_set: Vec<ImageAnnotation>,
}

fn sample_object(
    rng: &mut DatasetRng,
    shape: Shape,
    color: Color,
    position: Position,
    jitter: u32,
) -> ObjectSpec {
    let scale = MIN_SCALE + (MAX_SCALE - MIN_SCALE) * rng.unit();
    let jx = rng.symmetric(jitter);
    let jy = rng.symmetric(jitter);
    ObjectSpec {
        shape,
        color,
        position,
        scale,
        jitter: [jx, jy],
    }
}

fn sample_image(rng: &mut DatasetRng, config: &DatasetConfig, image_id: u64) -> ImageAnnotation {
    let span = (config.max_objects - config.min_objects + 1) as u64;
    let n = config.min_objects as usize + rng.below(span) as usize;
    let mut cells = Position::ALL;
    for i in 0..n {
        let j = i + rng.below((cells.len() - i) as u64) as usize;
        cells.swap(i, j);
    }
    let objects = cells[..n]
        .iter()
        .map(|&position| {
            let shape = Shape::ALL[rng.below(5) as usize];
            let color = Color::ALL[rng.below(6) as usize];
            sample_object(rng, shape, color, position, config.jitter_bound())
        })
        .collect();
    ImageAnnotation::new(image_id, objects)
}

/// Generate the annotated dataset (training images plus probe set).
pub fn generate_dataset(config: &DatasetConfig, seed: u64) -> Result<DatasetManifest> {
    config.validate()?;
    let mut rng = DatasetRng::new(seed);
    let annotations = (0..config.image_count as u64)
        .map(|id| sample_image(&mut rng, config, id))
        .collect();
    let probe_set = if config.probe_repeats == 0 {
        Vec::new()
    } else {
        generate_probe_set(config, seed)?
    };
    Ok(DatasetManifest {
        seed,
        config: config.clone(),
        features: FeatureId::names(),
        annotations,
        probe_set,
    })
}

/// One single-object image per (shape, color, position) and repetition.
pub fn generate_probe_set(config: &DatasetConfig, seed: u64) -> Result<Vec<ImageAnnotation>> {
    config.validate()?;
    if config.probe_repeats == 0 {
        return Err(Error::Config(
            "probe set needs at least one repetition".into(),
        ));
    }
    let mut rng = DatasetRng::new(seed ^ PROBE_STREAM);
    let mut probes = Vec::with_capacity(150 * config.probe_repeats as usize);
    for _ in 0..config.probe_repeats {
        for shape in Shape::ALL {
            for color in Color::ALL {
                for position in Position::ALL {
                    let object =
                        sample_object(&mut rng, shape, color, position, config.jitter_bound());
                    probes.push(ImageAnnotation::new(probes.len() as u64, vec![object]));
                }
            }
        }
    }
    Ok(probes)
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.features != FeatureId::names() {
            return Err(Error::Consistency(
                "manifest feature list is not canonical".into(),
            ));
        }
        for (i, a) in self.annotations.iter().enumerate() {
            if a.image_id != i as u64 {
                return Err(Error::Consistency(format!(
                    "annotation {i} carries image_id {}",
                    a.image_id
                )));
            }
            a.validate()?;
        }
        for p in &self.probe_set {
            p.validate()?;
            if p.objects.len() != 1 {
                return Err(Error::Consistency(format!(
                    "probe {} has {} objects",
                    p.image_id,
                    p.objects.len()
                )));
            }
        }
        Ok(())
    }

    pub fn render(&self, annotation: &ImageAnnotation) -> Result<RasterImage> {
        render_image(annotation, self.config.canvas)
    }

    pub fn render_all(&self) -> Result<Vec<RasterImage>> {
        self.annotations.iter().map(|a| self.render(a)).collect()
    }

    pub fn render_probes(&self) -> Result<Vec<RasterImage>> {
        self.probe_set.iter().map(|a| self.render(a)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    /// Write `manifest.json`, `img/{id}.ppm` and `probe/{id}.ppm` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let img_dir = dir.join("img");
        let probe_dir = dir.join("probe");
        for d in [dir, &img_dir, &probe_dir] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let manifest = dir.join("manifest.json");
        std::fs::write(&manifest, self.to_json()?).map_err(|e| Error::io(&manifest, e))?;
        for a in &self.annotations {
            self.render(a)?
                .write_ppm(&img_dir.join(format!("{}.ppm", a.image_id)))?;
        }
        for p in &self.probe_set {
            self.render(p)?
                .write_ppm(&probe_dir.join(format!("{}.ppm", p.image_id)))?;
        }
        Ok(())
    }

    pub fn read_from(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }
}
