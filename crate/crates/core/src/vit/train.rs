//! Multi-label feature-detection training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::model::{build_graph, forward_batch, no_hook, pixel_tensor, BoundParams, Taps};
use super::{ModelWeights, ViTConfig};
use crate::dataset::{DatasetManifest, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Linear warmup length in optimizer steps; cosine decay afterwards.
    pub warmup_steps: usize,
    /// Fraction of images held out for validation.
    pub val_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Apply the label-preserving augmentation of [`super::augment`].
    pub augment: bool,
    /// Largest translation in pixels when augmenting.
    pub max_shift: u32,
    /// Draw from all eight symmetries of the square instead of only the
    /// horizontal mirror.
    pub dihedral: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            warmup_steps: 50,
            val_fraction: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            augment: true,
            max_shift: 2,
            dihedral: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_macro_f1\n");
    for e in log {
        s.push_str(&format!(
            "{},{:.12},{:.6}\n",
            e.epoch, e.train_loss, e.val_macro_f1
        ));
    }
    s
}

/// Deterministic split of image indices into (train, validation).
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed ^ 0x5350_4c49_5421);
    idx.shuffle(&mut rng);
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Mean over features of per-feature F1, predicting present when logit > 0.
/// A feature with no positives and no predictions scores 1.
pub fn macro_f1(logits: &[Vec<f64>], targets: &[[u8; NUM_FEATURES]]) -> f64 {
    let mut total = 0.0;
    for f in 0..NUM_FEATURES {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (z, t) in logits.iter().zip(targets) {
            match (z[f] > 0.0, t[f] == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
        total += if tp + fp + fneg == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
        };
    }
    total / NUM_FEATURES as f64
}

fn lr_at(hyper: &TrainConfig, step: usize, total: usize) -> f64 {
    if step < hyper.warmup_steps {
        return hyper.lr * (step + 1) as f64 / hyper.warmup_steps as f64;
    }
    let span = total.saturating_sub(hyper.warmup_steps).max(1);
    let progress = (step - hyper.warmup_steps) as f64 / span as f64;
    hyper.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

/// Mean BCE loss and parameter gradients for one batch.
pub fn batch_gradients(
    weights: &ModelWeights,
    images: &[&RasterImage],
    targets: &[[u8; NUM_FEATURES]],
) -> Result<(f64, Vec<Tensor>)> {
    let c = &weights.config;
    let tape = Tape::new();
    let p = BoundParams::bind(&tape, weights, true);
    let pixels = tape.constant(pixel_tensor(images, c)?);
    let g = build_graph(c, &p, pixels, &mut no_hook)?;
    let target = Tensor::new(
        &[images.len(), NUM_FEATURES],
        targets
            .iter()
            .flat_map(|t| t.iter().map(|&v| v as f64))
            .collect(),
    )?;
    let loss = g.logits.sigmoid_bce(&target)?;
    let value = loss.value().item()?;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = tape.backward(loss)?;
    Ok((
        value,
        p.vars.iter().map(|&v| grads.get_or_zeros(v)).collect(),
    ))
}

/// Logits for many images, evaluated in chunks.
pub fn predict(
    weights: &ModelWeights,
    images: &[&RasterImage],
    chunk: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for batch in images.chunks(chunk.max(1)) {
        out.extend(
            forward_batch(weights, batch, &Taps::None)?
                .into_iter()
                .map(|r| r.logits),
        );
    }
    Ok(out)
}

/// Train from a seeded initialization. `images[i]` must be the rendering of
/// `manifest.annotations[i]`. `seed` drives weight init, the validation
/// split and batch shuffling.
pub fn train(
    manifest: &DatasetManifest,
    images: &[RasterImage],
    config: &ViTConfig,
    hyper: &TrainConfig,
    seed: u64,
) -> Result<(ModelWeights, Vec<EpochLog>)> {
    let weights = ModelWeights::init(config, seed)?;
    train_from(weights, manifest, images, hyper, seed)
}

pub fn train_from(
    mut weights: ModelWeights,
    manifest: &DatasetManifest,
    images: &[RasterImage],
    hyper: &TrainConfig,
    seed: u64,
) -> Result<(ModelWeights, Vec<EpochLog>)> {
    if manifest.annotations.is_empty() {
        return Err(Error::Training("dataset is empty".into()));
    }
    if images.len() != manifest.annotations.len() {
        return Err(Error::Consistency(format!(
            "{} images for {} annotations",
            images.len(),
            manifest.annotations.len()
        )));
    }
    if hyper.batch_size == 0
        || !(0.0..1.0).contains(&hyper.val_fraction)
        || hyper.lr.is_nan()
        || hyper.lr < 0.0
    {
        return Err(Error::Config(format!(
            "invalid training hyperparameters {hyper:?}"
        )));
    }
    let targets: Vec<[u8; NUM_FEATURES]> = manifest
        .annotations
        .iter()
        .map(|a| a.feature_present)
        .collect();
    let (mut train_idx, val_idx) = split_indices(images.len(), hyper.val_fraction, seed);
    let val_images: Vec<&RasterImage> = val_idx.iter().map(|&i| &images[i]).collect();
    let val_targets: Vec<_> = val_idx.iter().map(|&i| targets[i]).collect();

    let names: Vec<String> = weights.params.iter().map(|p| p.name.clone()).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut state = AdamState::new(weights.params.iter().map(|p| &p.value));
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed ^ 0x0053_4855_4646_4c45);
    let mut aug_rng = Xoshiro256StarStar::seed_from_u64(seed ^ 0x0041_5547_4d45_4e54);
    let steps_per_epoch = train_idx.len().div_ceil(hyper.batch_size);
    let total_steps = steps_per_epoch * hyper.epochs;
    let mut step = 0;
    let mut log = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in train_idx.chunks(hyper.batch_size).enumerate() {
            let (owned, tgts): (Vec<RasterImage>, Vec<_>) = if hyper.augment {
                batch
                    .iter()
                    .map(|&i| {
                        augment(
                            &images[i],
                            &targets[i],
                            hyper.max_shift,
                            hyper.dihedral,
                            &mut aug_rng,
                        )
                    })
                    .unzip()
            } else {
                (Vec::new(), batch.iter().map(|&i| targets[i]).collect())
            };
            let imgs: Vec<&RasterImage> = if hyper.augment {
                owned.iter().collect()
            } else {
                batch.iter().map(|&i| &images[i]).collect()
            };
            let (loss, grads) = batch_gradients(&weights, &imgs, &tgts)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += loss * batch.len() as f64;
            let adam = AdamConfig {
                lr: lr_at(hyper, step, total_steps),
                beta1: hyper.beta1,
                beta2: hyper.beta2,
                eps: hyper.adam_eps,
            };
            let mut params: Vec<&mut Tensor> =
                weights.params.iter_mut().map(|p| &mut p.value).collect();
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            adam_step(&mut params, &grad_refs, &name_refs, &mut state, &adam)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
            step += 1;
        }
        let val_macro_f1 = if val_images.is_empty() {
            f64::NAN
        } else {
            macro_f1(&predict(&weights, &val_images, 50)?, &val_targets)
        };
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            val_macro_f1,
        });
    }
    Ok((weights, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_f1_perfect_and_inverted() {
        let mut t = [0u8; NUM_FEATURES];
        t[0] = 1;
        let good = vec![(0..NUM_FEATURES)
            .map(|f| if f == 0 { 1.0 } else { -1.0 })
            .collect()];
        assert_eq!(macro_f1(&good, &[t]), 1.0);
        let bad = vec![(0..NUM_FEATURES)
            .map(|f| if f == 0 { -1.0 } else { 1.0 })
            .collect()];
        assert_eq!(macro_f1(&bad, &[t]), 0.0);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a, b) = split_indices(500, 0.2, 3);
        assert_eq!((a.len(), b.len()), (400, 100));
        assert_eq!(split_indices(500, 0.2, 3), (a.clone(), b.clone()));
        assert!(b.iter().all(|i| !a.contains(i)));
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let h = TrainConfig {
            lr: 1.0,
            warmup_steps: 10,
            ..Default::default()
        };
        assert!((lr_at(&h, 0, 100) - 0.1).abs() < 1e-12);
        assert!((lr_at(&h, 10, 100) - 1.0).abs() < 1e-12);
        assert!(lr_at(&h, 99, 100) < 0.01);
    }
}
