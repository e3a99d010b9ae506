//! Entropy-based discovery of feature neurons.
//!
//! For each monitored neuron: rank all images by activation, keep the top
//! `k`, average the per-image feature counts into occurrence rates `o`,
//! normalize to affinities `a = o / sum(o)`, and score selectivity by the
//! Shannon entropy `H = -sum a_i log2 a_i`. Neurons are then sorted by
//! ascending entropy; the lowest-entropy tail are the feature neurons.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureId, ImageAnnotation, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::vit::{forward, forward_batch, ActivationRecord, ModelWeights, NeuronId, Taps};

pub const DEFAULT_TOP_K: usize = 30;
pub const DEFAULT_CUTOFF_PERCENT: f64 = 1.0;
/// Upper end of the entropy range for 16 features, in bits.
pub const MAX_ENTROPY: f64 = 4.0;

/// Reduction of a neuron's per-token activations to one value per image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    MeanPatches,
    MaxPatches,
    Cls,
}

impl Aggregator {
    fn code(self) -> u8 {
        match self {
            Aggregator::MeanPatches => 0,
            Aggregator::MaxPatches => 1,
            Aggregator::Cls => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Aggregator::MeanPatches),
            1 => Some(Aggregator::MaxPatches),
            2 => Some(Aggregator::Cls),
            _ => None,
        }
    }
}

/// `per_token` is CLS first, then patch tokens.
pub fn aggregate(per_token: &[f64], aggregator: Aggregator) -> Result<f64> {
    let (cls, patches) = per_token
        .split_first()
        .ok_or_else(|| Error::Input("empty activation record".into()))?;
    if patches.is_empty() && aggregator != Aggregator::Cls {
        return Err(Error::Input("activation record has no patch tokens".into()));
    }
    Ok(match aggregator {
        Aggregator::MeanPatches => patches.iter().sum::<f64>() / patches.len() as f64,
        Aggregator::MaxPatches => patches.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregator::Cls => *cls,
    })
}

pub fn image_activation(record: &ActivationRecord, aggregator: Aggregator) -> Result<f64> {
    aggregate(&record.per_token, aggregator)
}

/// Neurons × images table of per-image activations.
///
/// Binary layout (little-endian):
///
/// ```text
/// magic "ACTM", u32 version 1, u8 aggregator (0 mean, 1 max, 2 cls),
/// u64 rows, u64 cols, rows x (u32 layer, u32 unit), cols x u64 image_id,
/// rows x cols f64 row-major
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix {
    pub aggregator: Aggregator,
    pub neurons: Vec<NeuronId>,
    pub image_ids: Vec<u64>,
    data: Vec<f64>,
}

const MATRIX_MAGIC: [u8; 4] = *b"ACTM";

impl ActivationMatrix {
    pub fn new(
        aggregator: Aggregator,
        neurons: Vec<NeuronId>,
        image_ids: Vec<u64>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != neurons.len() * image_ids.len() {
            return Err(Error::dim(
                "activation_matrix",
                &[data.len()],
                &[neurons.len(), image_ids.len()],
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Consistency(format!(
                "non-finite activation for neuron {} on image {}",
                neurons[i / image_ids.len()],
                image_ids[i % image_ids.len()]
            )));
        }
        Ok(Self {
            aggregator,
            neurons,
            image_ids,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.neurons.len()
    }

    pub fn cols(&self) -> usize {
        self.image_ids.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols()..(r + 1) * self.cols()]
    }

    pub fn row_of(&self, neuron: NeuronId) -> Option<usize> {
        self.neurons.iter().position(|&n| n == neuron)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.data.len() * 8);
        out.extend_from_slice(&MATRIX_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.push(self.aggregator.code());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols() as u64).to_le_bytes());
        for n in &self.neurons {
            out.extend_from_slice(&(n.layer as u32).to_le_bytes());
            out.extend_from_slice(&(n.unit as u32).to_le_bytes());
        }
        for id in &self.image_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| {
                    Error::Format(format!("truncated activation matrix at offset {pos}"))
                })?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4)? != MATRIX_MAGIC {
            return Err(Error::Format(
                "bad activation matrix magic, expected \"ACTM\"".into(),
            ));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != 1 {
            return Err(Error::Format(format!(
                "unsupported activation matrix version {version}"
            )));
        }
        let code = take(1)?[0];
        let aggregator = Aggregator::from_code(code)
            .ok_or_else(|| Error::Format(format!("unknown aggregator code {code}")))?;
        let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut neurons = Vec::with_capacity(rows.min(1 << 20));
        for _ in 0..rows {
            let layer = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let unit = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            neurons.push(NeuronId::new(layer, unit));
        }
        let mut image_ids = Vec::with_capacity(cols.min(1 << 20));
        for _ in 0..cols {
            image_ids.push(u64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        let raw = take(
            rows.checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .unwrap_or(usize::MAX),
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if pos != bytes.len() {
            return Err(Error::Format(
                "trailing bytes after activation matrix".into(),
            ));
        }
        Self::new(aggregator, neurons, image_ids, data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// One forward pass per image with every monitored neuron tapped, in
/// batches of `chunk` images.
pub fn build_activation_matrix(
    annotations: &[ImageAnnotation],
    images: &[RasterImage],
    weights: &ModelWeights,
    aggregator: Aggregator,
    chunk: usize,
) -> Result<ActivationMatrix> {
    if images.len() != annotations.len() {
        return Err(Error::Consistency(format!(
            "{} images for {} annotations",
            images.len(),
            annotations.len()
        )));
    }
    let c = &weights.config;
    let neurons: Vec<NeuronId> = (0..c.layers)
        .flat_map(|l| (0..c.d_model).map(move |u| NeuronId::new(l, u)))
        .collect();
    let cols = images.len();
    let mut data = vec![0.0; neurons.len() * cols];
    let mut col = 0;
    for batch in images.chunks(chunk.max(1)) {
        let refs: Vec<&RasterImage> = batch.iter().collect();
        for result in forward_batch(weights, &refs, &Taps::All)? {
            for (r, rec) in result.records.iter().enumerate() {
                data[r * cols + col] = image_activation(rec, aggregator)?;
            }
            col += 1;
        }
    }
    ActivationMatrix::new(
        aggregator,
        neurons,
        annotations.iter().map(|a| a.image_id).collect(),
        data,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronProfile {
    pub neuron: NeuronId,
    pub k: usize,
    /// Object-level occurrences per image, averaged over the top-k images.
    pub occurrence: [f64; NUM_FEATURES],
    /// `None` when the neuron has zero activity.
    pub affinity: Option<[f64; NUM_FEATURES]>,
    /// Bits; `None` when the neuron has zero activity.
    pub entropy: Option<f64>,
    /// Set by [`rank_neurons`].
    pub percentile: Option<f64>,
    pub feature_neuron: bool,
    /// Sorted by (activation desc, image_id asc).
    pub top_images: Vec<u64>,
    pub top_activations: Vec<f64>,
}

impl NeuronProfile {
    pub fn zero_activity(&self) -> bool {
        self.affinity.is_none()
    }

    /// Features by descending affinity, zeros dropped.
    pub fn top_features(&self) -> Vec<(FeatureId, f64, f64)> {
        let Some(a) = self.affinity else {
            return Vec::new();
        };
        let mut out: Vec<_> = FeatureId::all()
            .filter(|f| a[f.index()] > 0.0)
            .map(|f| (f, a[f.index()], self.occurrence[f.index()]))
            .collect();
        out.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        out
    }
}

/// `-sum a_i log2 a_i` with `0 log 0 = 0`.
pub fn shannon_entropy(a: &[f64]) -> f64 {
    let h: f64 = a.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    h.max(0.0)
}

/// Indices of the `k` largest values, ties by ascending image id.
pub fn top_k(values: &[f64], image_ids: &[u64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .total_cmp(&values[i])
            .then(image_ids[i].cmp(&image_ids[j]))
    });
    order.truncate(k);
    order
}

/// `annotations` must be column-aligned with the matrix.
pub fn profile_neuron(
    matrix: &ActivationMatrix,
    annotations: &[ImageAnnotation],
    row: usize,
    k: usize,
) -> Result<NeuronProfile> {
    if annotations.len() != matrix.cols()
        || annotations
            .iter()
            .zip(&matrix.image_ids)
            .any(|(a, &id)| a.image_id != id)
    {
        return Err(Error::Consistency(
            "annotations do not match activation matrix columns".into(),
        ));
    }
    if k == 0 || k > matrix.cols() {
        return Err(Error::Input(format!(
            "top-k size {k} must be in 1..={}",
            matrix.cols()
        )));
    }
    let values = matrix.row(row);
    let top = top_k(values, &matrix.image_ids, k);
    let mut occurrence = [0.0; NUM_FEATURES];
    for &i in &top {
        for (o, &c) in occurrence.iter_mut().zip(&annotations[i].feature_counts) {
            *o += c as f64;
        }
    }
    for o in &mut occurrence {
        *o /= k as f64;
    }
    let total: f64 = occurrence.iter().sum();
    let flat = values.iter().all(|&v| v == values[0]);
    let affinity = (total > 0.0 && !flat).then(|| occurrence.map(|o| o / total));
    Ok(NeuronProfile {
        neuron: matrix.neurons[row],
        k,
        occurrence,
        entropy: affinity.map(|a| shannon_entropy(&a)),
        affinity,
        percentile: None,
        feature_neuron: false,
        top_images: top.iter().map(|&i| matrix.image_ids[i]).collect(),
        top_activations: top.iter().map(|&i| values[i]).collect(),
    })
}

pub fn profile_all(
    matrix: &ActivationMatrix,
    annotations: &[ImageAnnotation],
    k: usize,
) -> Result<Vec<NeuronProfile>> {
    (0..matrix.rows())
        .map(|r| profile_neuron(matrix, annotations, r, k))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Ascending entropy, ties by (layer, unit); percentiles assigned.
    pub ranked: Vec<NeuronProfile>,
    /// Zero-activity neurons, in (layer, unit) order.
    pub excluded: Vec<NeuronProfile>,
}

impl Ranking {
    pub fn feature_neurons(&self) -> impl Iterator<Item = &NeuronProfile> {
        self.ranked.iter().filter(|p| p.feature_neuron)
    }
}

/// Percentile of rank `r` (1-based) is `r / total * 100`; neurons at or
/// below `cutoff_percent` are feature neurons.
pub fn rank_neurons(profiles: Vec<NeuronProfile>, cutoff_percent: f64) -> Ranking {
    let (mut ranked, mut excluded): (Vec<_>, Vec<_>) =
        profiles.into_iter().partition(|p| p.entropy.is_some());
    ranked.sort_by(|x, y| {
        x.entropy
            .unwrap()
            .total_cmp(&y.entropy.unwrap())
            .then(x.neuron.cmp(&y.neuron))
    });
    excluded.sort_by_key(|p| p.neuron);
    let total = ranked.len() as f64;
    for (i, p) in ranked.iter_mut().enumerate() {
        let pct = (i + 1) as f64 / total * 100.0;
        p.percentile = Some(pct);
        p.feature_neuron = pct <= cutoff_percent;
    }
    Ranking { ranked, excluded }
}

/// A neuron's activation at every patch token, on the patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMap {
    pub neuron: NeuronId,
    pub side: usize,
    pub grid: Vec<f64>,
}

pub fn patchwise_map(
    weights: &ModelWeights,
    image: &RasterImage,
    neuron: NeuronId,
) -> Result<PatchMap> {
    let result = forward(weights, image, &Taps::Some(vec![neuron]))?;
    Ok(PatchMap {
        neuron,
        side: weights.config.grid(),
        grid: result.records[0].per_token[1..].to_vec(),
    })
}

impl PatchMap {
    /// Signed min-max normalization: min maps to 0, max to 1, a constant
    /// field to 0.5.
    pub fn normalized(&self) -> Vec<f64> {
        let lo = self.grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            self.grid.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.5; self.grid.len()]
        }
    }

    pub fn render(&self, width: u32, height: u32) -> RasterImage {
        crate::gradcam::colorize(&self.normalized(), self.side, self.side, width, height)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over `[0, 4]` bits; each bin is `[lo, hi)` except the
/// last, which is closed.
pub fn entropy_histogram(entropies: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::Input("histogram needs at least one bin".into()));
    }
    let edge = |i: usize| MAX_ENTROPY * i as f64 / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: edge(i),
            hi: edge(i + 1),
            count: 0,
        })
        .collect();
    for &h in entropies {
        let b = out.iter().position(|bin| h < bin.hi).unwrap_or(bins - 1);
        out[b].count += 1;
    }
    Ok(out)
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{}", b.lo, b.hi, b.count);
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per neuron: ranked neurons first, then excluded ones.
pub fn profiles_csv(ranking: &Ranking) -> String {
    let mut s = String::from("neuron,layer,unit,entropy,percentile,feature_neuron,status");
    for i in 0..NUM_FEATURES {
        let _ = write!(s, ",a_{i}");
    }
    for i in 0..NUM_FEATURES {
        let _ = write!(s, ",o_{i}");
    }
    s.push_str(",top_images\n");
    let rows = ranking
        .ranked
        .iter()
        .map(|p| (p, "ranked"))
        .chain(ranking.excluded.iter().map(|p| (p, "zero_activity")));
    for (p, status) in rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            p.neuron,
            p.neuron.layer,
            p.neuron.unit,
            opt(p.entropy),
            opt(p.percentile),
            p.feature_neuron,
            status
        );
        for i in 0..NUM_FEATURES {
            let _ = write!(s, ",{}", opt(p.affinity.map(|a| a[i])));
        }
        for o in p.occurrence {
            let _ = write!(s, ",{o}");
        }
        let ids: Vec<String> = p.top_images.iter().map(u64::to_string).collect();
        let _ = writeln!(s, ",{}", ids.join(" "));
    }
    s
}

/// Markdown block in the style "Entropy: 3.36 (0.18 %ile)" followed by the
/// top features with affinity and occurrence rate.
pub fn describe(profile: &NeuronProfile, max_features: usize) -> String {
    let mut s = format!("**{}**", profile.neuron);
    match (profile.entropy, profile.percentile) {
        (Some(h), Some(p)) => {
            let _ = write!(s, ": Entropy: {h:.2} ({p:.2} %ile)");
        }
        (Some(h), None) => {
            let _ = write!(s, ": Entropy: {h:.2}");
        }
        _ => s.push_str(": zero activity"),
    }
    s.push('\n');
    for (f, a, o) in profile.top_features().into_iter().take(max_features) {
        let _ = writeln!(s, "- {f}: a = {a:.2}, o = {o:.2}");
    }
    s
}
