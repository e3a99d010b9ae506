//! Superposition score, embedding separability, and their correlation.
//!
//! For a feature pair `(f1, f2)`:
//!
//! * `S` sums `(a_f1 + a_f2) / sum_j a_j` over the `n` lowest-entropy
//!   neurons;
//! * `D` is the Euclidean distance between the two single-feature probe
//!   centroids;
//! * `M` is the fraction of probe embeddings whose nearest centroid belongs
//!   to the other feature.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::{FeatureId, ImageAnnotation, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::neurons::NeuronProfile;
use crate::stats::{pearson, spearman};
use crate::vit::ImageEmbedding;

pub const DEFAULT_SUPERPOSITION_NEURONS: usize = 1000;

fn check_pair(f1: FeatureId, f2: FeatureId) -> Result<()> {
    if f1 == f2 {
        return Err(Error::Input(format!(
            "feature pair needs distinct features, got {f1} twice"
        )));
    }
    Ok(())
}

fn leading<'p>(
    ranked: &'p [NeuronProfile],
    n: usize,
) -> Result<impl Iterator<Item = [f64; NUM_FEATURES]> + 'p> {
    if n == 0 {
        return Err(Error::Input("superposition score needs n >= 1".into()));
    }
    if n > ranked.len() {
        return Err(Error::Input(format!(
            "n = {n} exceeds the {} ranked neurons",
            ranked.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for p in &ranked[..n] {
        out.push(
            p.affinity
                .ok_or_else(|| Error::Input(format!("neuron {} has no affinity", p.neuron)))?,
        );
    }
    Ok(out.into_iter())
}

/// Written form: `sum_i (a_f1 + a_f2) / sum_j a_j` over the first `n`
/// neurons of an ascending-entropy ranking.
pub fn superposition_s(
    f1: FeatureId,
    f2: FeatureId,
    ranked: &[NeuronProfile],
    n: usize,
) -> Result<f64> {
    check_pair(f1, f2)?;
    Ok(leading(ranked, n)?
        .map(|a| (a[f1.index()] + a[f2.index()]) / a.iter().sum::<f64>())
        .sum())
}

/// Normalized form `sum_i (a_f1 + a_f2)`.
pub fn superposition_s_simplified(
    f1: FeatureId,
    f2: FeatureId,
    ranked: &[NeuronProfile],
    n: usize,
) -> Result<f64> {
    check_pair(f1, f2)?;
    Ok(leading(ranked, n)?
        .map(|a| a[f1.index()] + a[f2.index()])
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCluster {
    pub feature: FeatureId,
    pub image_ids: Vec<u64>,
    pub embeddings: Vec<Vec<f64>>,
    pub centroid: Vec<f64>,
}

impl FeatureCluster {
    pub fn new(feature: FeatureId, members: Vec<(u64, Vec<f64>)>) -> Result<Self> {
        let Some(dim) = members.first().map(|m| m.1.len()) else {
            return Err(Error::Metric(format!("cluster for {feature} is empty")));
        };
        if let Some(m) = members.iter().find(|m| m.1.len() != dim) {
            return Err(Error::dim("feature_cluster", &[dim], &[m.1.len()]));
        }
        let mut centroid = vec![0.0; dim];
        for (_, e) in &members {
            for (c, v) in centroid.iter_mut().zip(e) {
                *c += v;
            }
        }
        for c in &mut centroid {
            *c /= members.len() as f64;
        }
        let (image_ids, embeddings) = members.into_iter().unzip();
        Ok(Self {
            feature,
            image_ids,
            embeddings,
            centroid,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Probe embeddings showing exactly one of `f1`, `f2`; images showing both
/// are left out of either side. `embeddings[i]` belongs to `probes[i]`.
pub fn build_clusters(
    probes: &[ImageAnnotation],
    embeddings: &[ImageEmbedding],
    f1: FeatureId,
    f2: FeatureId,
) -> Result<(FeatureCluster, FeatureCluster)> {
    check_pair(f1, f2)?;
    if probes.len() != embeddings.len()
        || probes
            .iter()
            .zip(embeddings)
            .any(|(p, e)| p.image_id != e.image_id)
    {
        return Err(Error::Consistency(
            "probe embeddings do not match probe annotations".into(),
        ));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (p, e) in probes.iter().zip(embeddings) {
        match (p.has(f1), p.has(f2)) {
            (true, false) => a.push((p.image_id, e.vector.clone())),
            (false, true) => b.push((p.image_id, e.vector.clone())),
            _ => {}
        }
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Metric(format!(
            "pair ({f1}, {f2}) has an empty cluster ({} vs {} members)",
            a.len(),
            b.len()
        )));
    }
    Ok((FeatureCluster::new(f1, a)?, FeatureCluster::new(f2, b)?))
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn distance_d(c1: &FeatureCluster, c2: &FeatureCluster) -> Result<f64> {
    if c1.centroid.len() != c2.centroid.len() {
        return Err(Error::dim(
            "distance_d",
            &[c1.centroid.len()],
            &[c2.centroid.len()],
        ));
    }
    Ok(sq_dist(&c1.centroid, &c2.centroid).sqrt())
}

/// Nearest-centroid error rate over both clusters; ties count as correct.
/// With `leave_one_out`, each member's own centroid omits that member
/// (singleton clusters keep their full centroid).
pub fn misclassification_m(c1: &FeatureCluster, c2: &FeatureCluster, leave_one_out: bool) -> f64 {
    let wrong = |own: &FeatureCluster, other: &FeatureCluster| -> usize {
        own.embeddings
            .iter()
            .filter(|e| {
                let n = own.len() as f64;
                let d_own = if leave_one_out && own.len() > 1 {
                    let loo: Vec<f64> = own
                        .centroid
                        .iter()
                        .zip(e.iter())
                        .map(|(c, x)| (c * n - x) / (n - 1.0))
                        .collect();
                    sq_dist(e, &loo)
                } else {
                    sq_dist(e, &own.centroid)
                };
                sq_dist(e, &other.centroid) < d_own
            })
            .count()
    };
    let total = c1.len() + c2.len();
    (wrong(c1, c2) + wrong(c2, c1)) as f64 / total as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairMetrics {
    pub f1: FeatureId,
    pub f2: FeatureId,
    pub s: f64,
    pub d: Option<f64>,
    pub m: Option<f64>,
    pub n1: usize,
    pub n2: usize,
    /// Why `d`/`m` are missing, if they are.
    pub flag: Option<String>,
}

impl PairMetrics {
    pub fn is_valid(&self) -> bool {
        self.d.is_some() && self.m.is_some()
    }
}

/// All unordered pairs in `(f1, f2)` index order.
pub fn feature_pairs() -> Vec<(FeatureId, FeatureId)> {
    let all: Vec<FeatureId> = FeatureId::all().collect();
    let mut out = Vec::with_capacity(NUM_FEATURES * (NUM_FEATURES - 1) / 2);
    for (i, &f1) in all.iter().enumerate() {
        for &f2 in &all[i + 1..] {
            out.push((f1, f2));
        }
    }
    out
}

pub fn pairwise_sweep(
    ranked: &[NeuronProfile],
    probes: &[ImageAnnotation],
    embeddings: &[ImageEmbedding],
    n: usize,
    leave_one_out: bool,
) -> Result<Vec<PairMetrics>> {
    feature_pairs()
        .into_iter()
        .map(|(f1, f2)| {
            let s = superposition_s(f1, f2, ranked, n)?;
            let row = match build_clusters(probes, embeddings, f1, f2) {
                Ok((c1, c2)) => PairMetrics {
                    f1,
                    f2,
                    s,
                    d: Some(distance_d(&c1, &c2)?),
                    m: Some(misclassification_m(&c1, &c2, leave_one_out)),
                    n1: c1.len(),
                    n2: c2.len(),
                    flag: None,
                },
                Err(e @ Error::Metric(_)) => PairMetrics {
                    f1,
                    f2,
                    s,
                    d: None,
                    m: None,
                    n1: 0,
                    n2: 0,
                    flag: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            Ok(row)
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn pairs_csv(rows: &[PairMetrics]) -> String {
    let mut s = String::from("f1,f2,S,D,M,n1,n2,flag\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.f1,
            r.f2,
            r.s,
            opt(r.d),
            opt(r.m),
            r.n1,
            r.n2,
            r.flag.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    s
}

/// `pair,S,<y>` rows for valid pairs, ready for a scatter plot.
pub fn scatter_csv(
    rows: &[PairMetrics],
    y_name: &str,
    y: impl Fn(&PairMetrics) -> Option<f64>,
) -> String {
    let mut s = format!("pair,S,{y_name}\n");
    for r in rows {
        if let Some(v) = y(r) {
            let _ = writeln!(s, "{}+{},{},{}", r.f1, r.f2, r.s, v);
        }
    }
    s
}

/// A coefficient, or the reason it is undefined.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Coefficient {
    Value(f64),
    Undefined { undefined: String },
}

impl Coefficient {
    fn from(v: Option<f64>, what: &str) -> Self {
        match v {
            Some(x) => Coefficient::Value(x),
            None => Coefficient::Undefined {
                undefined: format!("{what}: zero variance"),
            },
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Coefficient::Value(v) => Some(*v),
            Coefficient::Undefined { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Correlations {
    pub rows: usize,
    pub spearman_sd: Coefficient,
    pub pearson_sd: Coefficient,
    pub spearman_sm: Coefficient,
    pub pearson_sm: Coefficient,
}

/// Correlations over rows where both `D` and `M` are defined.
pub fn correlate(rows: &[PairMetrics]) -> Result<Correlations> {
    let valid: Vec<&PairMetrics> = rows.iter().filter(|r| r.is_valid()).collect();
    if valid.len() < 3 {
        return Err(Error::Metric(format!(
            "correlation needs at least 3 valid pairs, have {}",
            valid.len()
        )));
    }
    let s: Vec<f64> = valid.iter().map(|r| r.s).collect();
    let d: Vec<f64> = valid.iter().map(|r| r.d.unwrap()).collect();
    let m: Vec<f64> = valid.iter().map(|r| r.m.unwrap()).collect();
    Ok(Correlations {
        rows: valid.len(),
        spearman_sd: Coefficient::from(spearman(&s, &d), "spearman(S, D)"),
        pearson_sd: Coefficient::from(pearson(&s, &d), "pearson(S, D)"),
        spearman_sm: Coefficient::from(spearman(&s, &m), "spearman(S, M)"),
        pearson_sm: Coefficient::from(pearson(&s, &m), "pearson(S, M)"),
    })
}
