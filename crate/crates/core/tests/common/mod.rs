#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use vitscope::dataset::ImageAnnotation;
use vitscope::gradcam::{ScoreMode, ScoreSelector};
use vitscope::image::RasterImage;
use vitscope::neurons::{profile_all, rank_neurons, ActivationMatrix, Aggregator};
use vitscope::tensor::{Tape, Tensor, Var};
use vitscope::vit::{ModelWeights, NeuronId, ViTConfig};
use vitscope::Result;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub enum Stencil {
    /// `(f(h) - f(-h)) / 2h`, truncation error O(h^2).
    Central,
    /// Five-point central difference, truncation error O(h^4). Needed where
    /// a near-degenerate layernorm input makes the curvature large.
    FivePoint,
}

impl Stencil {
    pub fn derivative(self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = FD_STEP;
        match self {
            Stencil::Central => (f(h) - f(-h)) / (2.0 * h),
            Stencil::FivePoint => {
                (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
            }
        }
    }
}

/// `|a - f| / max(|a|, |f|, 1e-3)`: relative above the floor, absolute
/// below it, so exact zeros do not blow up.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn rng(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Entries bounded away from zero, for kinked primitives.
pub fn random_away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub type LossFn = dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>;

fn eval(inputs: &[Tensor], f: &LossFn) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    f(&tape, &vars).unwrap().to_tensor().item().unwrap()
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of a scalar loss over every entry of every input.
pub fn max_gradient_error(inputs: &[Tensor], f: &LossFn) -> f64 {
    max_gradient_error_with(inputs, f, Stencil::Central)
}

pub fn max_gradient_error_with(inputs: &[Tensor], f: &LossFn, stencil: Stencil) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k]);
        for i in 0..input.len() {
            let numeric = stencil.derivative(|dx| {
                let mut moved = inputs.to_vec();
                moved[k].data_mut()[i] += dx;
                eval(&moved, f)
            });
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

/// Reduce any output to a scalar through a fixed random weighting so every
/// output entry influences the loss.
pub fn weighted_sum<'t>(tape: &'t Tape, out: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let w = random_tensor(&out.shape(), &mut rng(seed));
    out.mul(&tape.constant(w))?.sum_all()
}

/// 16x16 images, 2x2 patch grid, two narrow blocks.
pub fn tiny_config() -> ViTConfig {
    ViTConfig {
        image_size: 16,
        patch_size: 8,
        layers: 2,
        d_model: 8,
        heads: 2,
        mlp_hidden: 16,
        eps: 1e-5,
        embed_dim: Some(4),
    }
}

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub loss: Box<LossFn>,
}

fn case<F>(name: &'static str, inputs: Vec<Tensor>, f: F) -> GradCase
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + 'static,
{
    GradCase {
        name,
        inputs,
        loss: Box::new(f),
    }
}

/// One case per differentiable primitive on the tape.
pub fn primitive_cases() -> Vec<GradCase> {
    let mut r = rng(2024);
    let t = |shape: &[usize], r: &mut Xoshiro256StarStar| random_tensor(shape, r);
    vec![
        case(
            "matmul",
            vec![t(&[3, 4], &mut r), t(&[4, 2], &mut r)],
            |tp, v| weighted_sum(tp, v[0].matmul(&v[1])?, 1),
        ),
        case(
            "batched_matmul",
            vec![t(&[2, 3, 4], &mut r), t(&[2, 4, 3], &mut r)],
            |tp, v| weighted_sum(tp, v[0].matmul(&v[1])?, 2),
        ),
        case(
            "add",
            vec![t(&[2, 3], &mut r), t(&[2, 3], &mut r)],
            |tp, v| weighted_sum(tp, v[0].add(&v[1])?, 3),
        ),
        case(
            "sub",
            vec![t(&[2, 3], &mut r), t(&[2, 3], &mut r)],
            |tp, v| weighted_sum(tp, v[0].sub(&v[1])?, 4),
        ),
        case(
            "mul",
            vec![t(&[2, 3], &mut r), t(&[2, 3], &mut r)],
            |tp, v| weighted_sum(tp, v[0].mul(&v[1])?, 5),
        ),
        case("mul_self", vec![t(&[5], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].mul(&v[0])?, 6)
        }),
        case("scale", vec![t(&[4], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].scale(-2.5), 7)
        }),
        case("permute", vec![t(&[2, 3, 4], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].permute(&[2, 0, 1])?, 8)
        }),
        case("transpose", vec![t(&[3, 4], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].transpose(0, 1)?, 9)
        }),
        case("reshape", vec![t(&[2, 6], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].reshape(&[3, 2, 2])?, 10)
        }),
        case("slice", vec![t(&[3, 5], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].slice(1, 1, 4)?, 11)
        }),
        case(
            "concat",
            vec![t(&[2, 3], &mut r), t(&[2, 2], &mut r)],
            |tp, v| weighted_sum(tp, Var::concat(&[v[0], v[1]], 1)?, 12),
        ),
        case("broadcast_leading", vec![t(&[2, 3], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].broadcast_leading(3)?, 13)
        }),
        case(
            "layernorm",
            vec![t(&[3, 5], &mut r), t(&[5], &mut r), t(&[5], &mut r)],
            |tp, v| weighted_sum(tp, v[0].layernorm(&v[1], &v[2], 1e-5)?, 14),
        ),
        case("gelu", vec![t(&[3, 4], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].gelu(), 15)
        }),
        case(
            "relu",
            vec![random_away_from_zero(&[3, 4], &mut r)],
            |tp, v| weighted_sum(tp, v[0].relu(), 16),
        ),
        case("softmax_last", vec![t(&[3, 4], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].softmax(1)?, 17)
        }),
        case("softmax_first", vec![t(&[3, 4], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].softmax(0)?, 18)
        }),
        case("sum_axes", vec![t(&[2, 3, 4], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].sum(&[0, 2])?, 19)
        }),
        case("mean_axes", vec![t(&[2, 3, 4], &mut r)], |tp, v| {
            weighted_sum(tp, v[0].mean(&[1])?, 20)
        }),
        case("sum_all", vec![t(&[2, 3], &mut r)], |_, v| {
            v[0].mul(&v[0])?.sum_all()
        }),
        case("cross_entropy", vec![t(&[4, 5], &mut r)], |_, v| {
            v[0].scale(3.0).cross_entropy_with_logits(&[0, 4, 2, 2])
        }),
        case("sigmoid_bce", vec![t(&[3, 4], &mut r)], |_, v| {
            let targets = Tensor::from_fn(&[3, 4], |i| (i % 3 == 0) as u8 as f64);
            v[0].scale(4.0).sigmoid_bce(&targets)
        }),
    ]
}

pub fn random_image(side: u32, seed: u64) -> RasterImage {
    let mut r = rng(seed);
    RasterImage {
        width: side,
        height: side,
        pixels: (0..side * side * 3).map(|_| r.gen()).collect(),
    }
}

/// Worst relative error of Grad-CAM's `dScore/dA` against central
/// differences taken by replacing the tapped block's MLP output.
pub fn capture_gradient_error(
    weights: &ModelWeights,
    image: &RasterImage,
    selector: &ScoreSelector,
    layer: usize,
    mode: &ScoreMode,
) -> f64 {
    use vitscope::gradcam::{capture, score_with_replaced_activation};
    use vitscope::vit::{forward, Taps};
    let c = &weights.config;
    let (t, d) = (c.seq_len(), c.d_model);
    let cap = capture(weights, image, selector, Some(layer), mode).unwrap();
    let taps = Taps::Some((0..d).map(|u| NeuronId::new(layer, u)).collect());
    let rec = forward(weights, image, &taps).unwrap().records;
    let base = Tensor::from_fn(&[1, t, d], |i| rec[i % d].per_token[i / d]);
    let mut worst: f64 = 0.0;
    for tok in 1..t {
        for u in 0..d {
            let i = tok * d + u;
            let numeric = Stencil::Central.derivative(|dx| {
                let mut moved = base.clone();
                moved.data_mut()[i] += dx;
                score_with_replaced_activation(weights, image, selector, layer, mode, &moved)
                    .unwrap()
            });
            worst = worst.max(rel_err(cap.gradients.data()[(tok - 1) * d + u], numeric));
        }
    }
    worst
}

/// Gradient error of logit `j` with respect to the normalized pixel tensor.
pub fn pixel_gradient_error(weights: &ModelWeights, images: &[&RasterImage], j: usize) -> f64 {
    use vitscope::vit::{build_graph, model::no_hook, pixel_tensor, BoundParams};
    let pixels = pixel_tensor(images, &weights.config).unwrap();
    let w = weights.clone();
    max_gradient_error(&[pixels], &move |tp, v| {
        let p = BoundParams::bind(tp, &w, false);
        let g = build_graph(&w.config, &p, v[0], &mut no_hook)?;
        g.logits.slice(1, j, j + 1)?.sum_all()
    })
}

/// Straight-line reference for the neuron ranking: selection-based top-k,
/// occurrence averaging, normalization, base-2 entropy, selection sort.
pub struct OracleProfile {
    pub row: usize,
    pub top: Vec<u64>,
    pub o: [f64; 16],
    pub a: [f64; 16],
    pub h: f64,
}

pub fn oracle_profiles(
    acts: &[Vec<f64>],
    ids: &[u64],
    counts: &[[u32; 16]],
    k: usize,
) -> Vec<OracleProfile> {
    let mut out = Vec::new();
    for (row, values) in acts.iter().enumerate() {
        let mut taken = vec![false; values.len()];
        let mut top_idx = Vec::new();
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for j in 0..values.len() {
                if taken[j] {
                    continue;
                }
                best = match best {
                    None => Some(j),
                    Some(b)
                        if values[j] > values[b] || (values[j] == values[b] && ids[j] < ids[b]) =>
                    {
                        Some(j)
                    }
                    keep => keep,
                };
            }
            let b = best.unwrap();
            taken[b] = true;
            top_idx.push(b);
        }
        let mut o = [0.0; 16];
        for i in 0..16 {
            let mut total = 0u32;
            for &j in &top_idx {
                total += counts[j][i];
            }
            o[i] = total as f64 / k as f64;
        }
        let mut norm = 0.0;
        for v in o {
            norm += v;
        }
        let mut a = [0.0; 16];
        let mut h = 0.0;
        for i in 0..16 {
            a[i] = o[i] / norm;
            if a[i] > 0.0 {
                h -= a[i] * a[i].log2();
            }
        }
        out.push(OracleProfile {
            row,
            top: top_idx.iter().map(|&j| ids[j]).collect(),
            o,
            a,
            h: h.max(0.0),
        });
    }
    out
}

/// Row order by ascending entropy, ties by row (layer, unit order).
pub fn oracle_ranking(profiles: &[OracleProfile]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            let (p, q) = (&profiles[order[i]], &profiles[order[j]]);
            if q.h < p.h || (q.h == p.h && q.row < p.row) {
                order.swap(i, j);
            }
        }
    }
    order.into_iter().map(|i| profiles[i].row).collect()
}

/// Ten hand-placed images and five neurons with designed preferences,
/// including activation ties.
pub fn hand_instance() -> (Vec<ImageAnnotation>, Vec<Vec<f64>>) {
    use vitscope::dataset::{Color::*, ObjectSpec, Position::*, Shape::*};
    let o = |shape, color, position| ObjectSpec {
        shape,
        color,
        position,
        scale: 0.2,
        jitter: [0, 0],
    };
    let images = vec![
        vec![o(Circle, Red, TopLeft)],
        vec![o(Circle, Red, TopRight), o(Circle, Blue, Center)],
        vec![o(Square, Green, BottomLeft)],
        vec![o(Square, Green, Center), o(Triangle, Green, TopLeft)],
        vec![o(Hexagon, Black, BottomRight)],
        vec![
            o(Pentagon, Yellow, Center),
            o(Circle, Pink, TopRight),
            o(Square, Blue, BottomLeft),
        ],
        vec![o(Triangle, Red, TopLeft), o(Triangle, Red, BottomRight)],
        vec![o(Hexagon, Pink, Center)],
        vec![
            o(Circle, Black, TopLeft),
            o(Square, Yellow, TopRight),
            o(Triangle, Blue, BottomLeft),
            o(Pentagon, Green, BottomRight),
            o(Hexagon, Red, Center),
        ],
        vec![o(Pentagon, Blue, BottomRight)],
    ];
    let anns = images
        .into_iter()
        .enumerate()
        .map(|(i, objs)| ImageAnnotation::new(i as u64, objs))
        .collect();
    let acts = vec![
        // Circle/red detector.
        vec![9.0, 8.0, 0.1, 0.2, 0.0, 3.0, 4.0, 0.3, 2.0, 0.0],
        // Green detector with a three-way tie at the top.
        vec![0.0, 0.0, 5.0, 5.0, 0.5, 1.0, 0.0, 0.0, 5.0, 0.2],
        // Indiscriminate: favours the busiest images.
        vec![1.0, 2.0, 1.0, 2.0, 1.0, 6.0, 2.0, 1.0, 7.0, 1.0],
        // All ties: top-k falls back to ascending id.
        vec![1.5; 10],
        // Hexagon-ish with negative activations.
        vec![-3.0, -2.0, -2.5, -1.0, 4.0, -0.5, -2.0, 3.5, 1.0, -4.0],
    ];
    (anns, acts)
}

/// Pipeline profiles and ranking must equal the reference exactly.
pub fn check_against_oracle(anns: &[ImageAnnotation], acts: &[Vec<f64>], k: usize) {
    let ids: Vec<u64> = anns.iter().map(|a| a.image_id).collect();
    let counts: Vec<[u32; 16]> = anns.iter().map(|a| a.feature_counts).collect();
    let neurons: Vec<NeuronId> = (0..acts.len()).map(|u| NeuronId::new(0, u)).collect();
    let m = ActivationMatrix::new(Aggregator::MeanPatches, neurons, ids.clone(), acts.concat())
        .unwrap();
    let ranking = rank_neurons(profile_all(&m, anns, k).unwrap(), 1.0);
    let oracle = oracle_profiles(acts, &ids, &counts, k);
    let order = oracle_ranking(&oracle);
    let total = ranking.ranked.len();

    let got: Vec<usize> = ranking.ranked.iter().map(|p| p.neuron.unit).collect();
    let want: Vec<usize> = order
        .into_iter()
        .filter(|&r| !ranking.excluded.iter().any(|e| e.neuron.unit == r))
        .collect();
    assert_eq!(got, want);
    for (rank, p) in ranking.ranked.iter().enumerate() {
        let o = &oracle[p.neuron.unit];
        assert_eq!(p.top_images, o.top);
        assert_eq!(p.occurrence, o.o);
        assert_eq!(p.affinity.unwrap(), o.a);
        assert_eq!(p.entropy.unwrap(), o.h);
        assert_eq!(
            p.percentile.unwrap(),
            (rank + 1) as f64 / total as f64 * 100.0
        );
    }
}
