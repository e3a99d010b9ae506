//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The full-size pipeline runs are archived under the cargo target
//! tmpdir (`acceptance/`) for inspection.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use vitscope::dataset::{
    generate_dataset, Color, DatasetConfig, DatasetManifest, FeatureId, Position, Shape,
};
use vitscope::gradcam::{channel_weights, heatmap, ScoreMode, ScoreSelector};
use vitscope::neurons::{shannon_entropy, NeuronProfile, MAX_ENTROPY};
use vitscope::pipeline::{Pipeline, RunConfig};
use vitscope::superpos::{
    correlate, pairwise_sweep, superposition_s, superposition_s_simplified, PairMetrics,
};
use vitscope::tensor::Tensor;
use vitscope::vit::{ModelWeights, NeuronId, ViTConfig};

type Verdict = Result<String, String>;

const GRAD_TOLERANCE: f64 = 1e-4;
const TRAIN_BUDGET: Duration = Duration::from_secs(15 * 60);
const SIGN_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// `0.6 log2(10/3) + 0.4 log2(5)`, evaluated independently of the crate.
fn reference_entropy() -> f64 {
    0.6 * (10.0f64 / 3.0).log2() + 0.4 * 5.0f64.log2()
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(msg.replace('\n', " "))
    })
}

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac1_dataset() -> Verdict {
    let config = DatasetConfig::default();
    let start = Instant::now();
    let a = generate_dataset(&config, 0).map_err(|e| e.to_string())?;
    let images = a.render_all().map_err(|e| e.to_string())?;
    let probes = a.render_probes().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let b = generate_dataset(&config, 0).map_err(|e| e.to_string())?;
    let identical = a.to_json().unwrap() == b.to_json().unwrap()
        && images
            .iter()
            .zip(b.render_all().unwrap())
            .all(|(x, y)| x.to_ppm() == y.to_ppm())
        && probes
            .iter()
            .zip(b.render_probes().unwrap())
            .all(|(x, y)| x.to_ppm() == y.to_ppm());

    let objects: Vec<_> = a.annotations.iter().flat_map(|ann| &ann.objects).collect();
    let n = objects.len() as f64;
    let freq = |pred: &dyn Fn(&&&vitscope::dataset::ObjectSpec) -> bool| {
        objects.iter().filter(pred).count() as f64 / n
    };
    let mut worst: Vec<String> = Vec::new();
    let mut balanced = true;
    let mut check = |name: &str, f: f64, target: f64| {
        if (f - target).abs() > 0.05 {
            balanced = false;
            worst.push(format!("{name}={f:.3}"));
        }
    };
    for s in Shape::ALL {
        check(FeatureId::from(s).name(), freq(&|o| o.shape == s), 0.2);
    }
    for c in Color::ALL {
        check(
            FeatureId::from(c).name(),
            freq(&|o| o.color == c),
            1.0 / 6.0,
        );
    }
    for p in Position::ALL {
        check(FeatureId::from(p).name(), freq(&|o| o.position == p), 0.2);
    }
    let fast = elapsed < Duration::from_secs(10);
    ensure(
        identical && balanced && fast,
        format!(
            "byte-identical={identical}, {} objects, out of band: [{}], generate+render {:.2}s",
            objects.len(),
            worst.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn ac2_autodiff() -> Verdict {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    for c in primitive_cases() {
        let err = max_gradient_error(&c.inputs, c.loss.as_ref());
        if err > worst.0 {
            worst = (err, c.name.to_string());
        }
    }
    let w = ModelWeights::init(&tiny_config(), 3).unwrap();
    let (a, b) = (random_image(16, 1), random_image(16, 2));
    for j in 0..16 {
        let err = pixel_gradient_error(&w, &[&a, &b], j);
        if err > worst.0 {
            worst = (err, format!("dlogit{j}/dpixel"));
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst.0 < GRAD_TOLERANCE && elapsed < Duration::from_secs(60),
        format!(
            "{} primitives + 16 logit paths, max rel err {:.2e} ({}), {:.1}s",
            primitive_cases().len(),
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

fn ac3_entropy(profiles: &[NeuronProfile]) -> Verdict {
    let in_bounds = profiles
        .iter()
        .filter_map(|p| p.entropy)
        .all(|h| (0.0..=MAX_ENTROPY).contains(&h));
    let uniform = shannon_entropy(&[1.0 / 16.0; 16]);
    let mut one_hot = [0.0; 16];
    one_hot[5] = 1.0;
    let zero = shannon_entropy(&one_hot);
    let mut mixed = [0.0; 16];
    mixed[..4].copy_from_slice(&[0.3, 0.3, 0.2, 0.2]);
    let h = shannon_entropy(&mixed);
    let reference = reference_entropy();
    ensure(
        in_bounds
            && (uniform - 4.0).abs() < 1e-12
            && zero == 0.0
            && (h - 1.9710).abs() < 1e-3
            && (h - reference).abs() < 1e-12,
        format!(
            "{} trained profiles in [0,4]={in_bounds}, uniform={uniform:.12}, one-hot={zero}, \
             (0.3,0.3,0.2,0.2)={h:.12} (reference {reference:.12})",
            profiles.len()
        ),
    )
}

fn ac4_ranking() -> Verdict {
    let (anns, acts) = hand_instance();
    for k in [1, 3, 5, 10] {
        check_against_oracle(&anns, &acts, k);
    }
    Ok(
        "5 neurons x 10 images, k in {1,3,5,10}: top-k, o, a, H and ranking equal the reference"
            .into(),
    )
}

fn ac5_gradcam() -> Verdict {
    let mut r = rng(55);
    for case in 0..100 {
        let a = random_tensor(&[3, 3, 5], &mut r);
        let g = random_tensor(&[3, 3, 5], &mut r);
        let map = heatmap(&a, &channel_weights(&g).unwrap()).unwrap();
        if map.grid.iter().any(|&v| v < 0.0) {
            return Err(format!("negative cell in random case {case}"));
        }
    }
    let a = random_tensor(&[3, 3, 5], &mut r);
    let zero = heatmap(&a, &channel_weights(&Tensor::zeros(&[3, 3, 5])).unwrap()).unwrap();
    let zero_ok = zero.grid.iter().all(|&v| v == 0.0) && zero.normalized.iter().all(|&v| v == 0.0);

    let hand = Tensor::new(&[2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
    let hand_map = heatmap(&hand, &[1.0, -1.0]).unwrap();
    let hand_ok = hand_map.grid == vec![1.0, 0.0, 0.0, 1.0];

    let w = ModelWeights::init(&tiny_config(), 7).unwrap();
    let img = random_image(16, 8);
    let green_square = ScoreSelector::parse("green+square").unwrap();
    let modes = [
        ScoreMode::LogitSum,
        ScoreMode::Softmax {
            candidates: vec![
                green_square.clone(),
                ScoreSelector::parse("circle").unwrap(),
            ],
        },
    ];
    let mut worst: f64 = 0.0;
    for layer in 0..2 {
        for mode in &modes {
            worst = worst.max(capture_gradient_error(&w, &img, &green_square, layer, mode));
        }
    }
    ensure(
        zero_ok && hand_ok && worst < GRAD_TOLERANCE,
        format!(
            "100 random maps nonnegative, zero-gradient map zero={zero_ok}, hand case {:?}, \
             capture path max rel err {worst:.2e}",
            hand_map.grid
        ),
    )
}

fn ac6_geometry() -> Verdict {
    let full = ViTConfig::full_scale().monitored_neurons();
    let desk = ViTConfig::desk().monitored_neurons();
    ensure(
        full == 24_576 && desk == 512,
        format!("L=24 d=1024 -> {full} neurons, desk -> {desk}"),
    )
}

/// One full default-config pipeline run, with the training stage timed.
struct FullRun {
    pipeline: Pipeline,
    train_time: Duration,
}

fn full_run(root: &Path, seed: u64, with_gradcam: bool) -> Result<FullRun, String> {
    if root.exists() {
        std::fs::remove_dir_all(root).map_err(|e| format!("{}: {e}", root.display()))?;
    }
    let config = RunConfig {
        workspace: root.to_path_buf(),
        seed,
        ..Default::default()
    };
    let pipeline = Pipeline::new(config).map_err(|e| e.to_string())?;
    let stage =
        |name: &str, r: vitscope::Result<_>| r.map(|_| ()).map_err(|e| format!("{name}: {e}"));
    stage("gen", pipeline.gen(false))?;
    let start = Instant::now();
    stage("train", pipeline.train(false))?;
    let train_time = start.elapsed();
    stage("neurons", pipeline.neurons(false))?;
    if with_gradcam {
        stage("gradcam", pipeline.gradcam(false))?;
    }
    stage("superpos", pipeline.superpos(false))?;
    if with_gradcam {
        stage("report", pipeline.report(false))?;
    }
    Ok(FullRun {
        pipeline,
        train_time,
    })
}

fn final_f1(run: &FullRun) -> Result<(usize, f64), String> {
    let log = std::fs::read_to_string(
        run.pipeline
            .dir(vitscope::pipeline::Stage::Train)
            .join("train_log.csv"),
    )
    .map_err(|e| e.to_string())?;
    let last = log.lines().last().ok_or("empty training log")?;
    let cols: Vec<&str> = last.split(',').collect();
    let epochs = cols[0].parse::<usize>().map_err(|e| e.to_string())? + 1;
    let f1 = cols[2].parse::<f64>().map_err(|e| e.to_string())?;
    Ok((epochs, f1))
}

fn ac7_trainability(a: &FullRun, b: &FullRun) -> Verdict {
    let (epochs, f1) = final_f1(a)?;
    let weights = |r: &FullRun| {
        std::fs::read(
            r.pipeline
                .dir(vitscope::pipeline::Stage::Train)
                .join("weights.bin"),
        )
    };
    let deterministic =
        weights(a).map_err(|e| e.to_string())? == weights(b).map_err(|e| e.to_string())?;
    ensure(
        f1 >= 0.9 && epochs <= 30 && a.train_time <= TRAIN_BUDGET && deterministic,
        format!(
            "held-out macro-F1 {f1:.4} after {epochs} epochs, training {:.0}s, rerun weights identical={deterministic}",
            a.train_time.as_secs_f64()
        ),
    )
}

fn sweep(run: &FullRun) -> vitscope::Result<(Vec<NeuronProfile>, Vec<PairMetrics>)> {
    let p = &run.pipeline;
    let manifest: DatasetManifest = p.manifest()?;
    let weights = p.weights()?;
    let ranking = p.ranking()?;
    let probes = manifest.render_probes()?;
    let ids: Vec<u64> = manifest.probe_set.iter().map(|a| a.image_id).collect();
    let embeddings = vitscope::vit::embed_images(&weights, &probes, &ids, 50)?;
    let n = p.config.superposition_neurons().min(ranking.ranked.len());
    let rows = pairwise_sweep(&ranking.ranked, &manifest.probe_set, &embeddings, n, false)?;
    Ok((ranking.ranked, rows))
}

fn ac8_superposition(ranked: &[NeuronProfile], rows: &[PairMetrics], n: usize) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut bounded = true;
    for r in rows {
        let simple =
            superposition_s_simplified(r.f1, r.f2, ranked, n).map_err(|e| e.to_string())?;
        worst = worst.max((r.s - simple).abs());
        bounded &= (0.0..=n as f64).contains(&r.s);
    }
    let uniform: Vec<NeuronProfile> = (0..1000)
        .map(|u| NeuronProfile {
            neuron: NeuronId::new(u / 128, u % 128),
            k: 30,
            occurrence: [1.0; 16],
            affinity: Some([1.0 / 16.0; 16]),
            entropy: Some(4.0),
            percentile: None,
            feature_neuron: false,
            top_images: vec![],
            top_activations: vec![],
        })
        .collect();
    let red = FeatureId::from(Color::Red);
    let circle = FeatureId::from(Shape::Circle);
    let fixture = superposition_s(red, circle, &uniform, 1000).map_err(|e| e.to_string())?;
    ensure(
        worst <= 1e-12 && bounded && fixture == 125.0 && rows.len() == 120,
        format!(
            "{} pairs at n={n}: max |S - S_simplified| {worst:.1e}, 0<=S<=n={bounded}, uniform fixture S={fixture}",
            rows.len()
        ),
    )
}

fn signs(rows: &[PairMetrics]) -> Result<(f64, f64), String> {
    let c = correlate(rows).map_err(|e| e.to_string())?;
    let sd = c.spearman_sd.value().ok_or("spearman(S,D) undefined")?;
    let sm = c.spearman_sm.value().ok_or("spearman(S,M) undefined")?;
    Ok((sd, sm))
}

fn ac9_trend(default_rows: &[PairMetrics], archive: &Path) -> Verdict {
    let (sd, sm) = signs(default_rows)?;
    if sd < 0.0 && sm > 0.0 {
        return Ok(format!(
            "seed 0: spearman(S,D)={sd:.4} < 0, spearman(S,M)={sm:.4} > 0"
        ));
    }
    let mut lines = vec![format!(
        "seed 0: spearman(S,D)={sd:.4}, spearman(S,M)={sm:.4}; rerunning 5 seeds"
    )];
    let (mut d_ok, mut m_ok) = (0, 0);
    for seed in SIGN_SEEDS {
        let run = full_run(&archive.join(format!("seed_{seed}")), seed, false)?;
        let (_, rows) = sweep(&run).map_err(|e| e.to_string())?;
        let (sd, sm) = signs(&rows)?;
        d_ok += (sd < 0.0) as usize;
        m_ok += (sm > 0.0) as usize;
        lines.push(format!("seed {seed}: S,D {sd:.4} S,M {sm:.4}"));
    }
    lines.push(format!(
        "negative S,D in {d_ok}/5, positive S,M in {m_ok}/5"
    ));
    ensure(d_ok >= 4 && m_ok >= 4, lines.join("; "))
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn ac10_reproducibility(a: &Path, b: &Path) -> Verdict {
    let (fa, fb) = (files_under(a), files_under(b));
    let mut differing: Vec<String> = Vec::new();
    for (rel, bytes) in &fa {
        if fb.get(rel) != Some(bytes) {
            differing.push(rel.display().to_string());
        }
    }
    for rel in fb.keys().filter(|r| !fa.contains_key(*r)) {
        differing.push(rel.display().to_string());
    }
    let count = |ext: &str| {
        fa.keys()
            .filter(|p| p.extension().is_some_and(|e| e == ext))
            .count()
    };
    ensure(
        differing.is_empty(),
        format!(
            "{} files ({} csv, {} ppm, {} bin) compared, differing: [{}]",
            fa.len(),
            count("csv"),
            count("ppm"),
            count("bin"),
            differing.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let archive = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut results: Vec<(&str, Verdict)> = vec![
        ("AC-1", guarded(ac1_dataset)),
        ("AC-2", guarded(ac2_autodiff)),
    ];

    let runs = guarded(|| {
        let a = full_run(&archive.join("run_a"), 0, true)?;
        let b = full_run(&archive.join("run_b"), 0, true)?;
        let (ranked, rows) = sweep(&a).map_err(|e| e.to_string())?;
        Ok((a, b, ranked, rows))
    });
    match runs {
        Ok((a, b, ranked, rows)) => {
            let n = a.pipeline.config.superposition_neurons().min(ranked.len());
            results.push(("AC-3", guarded(|| ac3_entropy(&ranked))));
            results.push(("AC-4", guarded(ac4_ranking)));
            results.push(("AC-5", guarded(ac5_gradcam)));
            results.push(("AC-6", guarded(ac6_geometry)));
            results.push(("AC-7", guarded(|| ac7_trainability(&a, &b))));
            results.push(("AC-8", guarded(|| ac8_superposition(&ranked, &rows, n))));
            results.push(("AC-9", guarded(|| ac9_trend(&rows, &archive.join("signs")))));
            results.push((
                "AC-10",
                guarded(|| ac10_reproducibility(a.pipeline.root(), b.pipeline.root())),
            ));
        }
        Err(e) => {
            let msg = format!("pipeline run failed: {e}");
            results.push(("AC-3", Err(msg.clone())));
            results.push(("AC-4", guarded(ac4_ranking)));
            results.push(("AC-5", guarded(ac5_gradcam)));
            results.push(("AC-6", guarded(ac6_geometry)));
            for id in ["AC-7", "AC-8", "AC-9", "AC-10"] {
                results.push((id, Err(msg.clone())));
            }
        }
    }

    let mut failed = 0;
    for (id, verdict) in &results {
        match verdict {
            Ok(detail) => println!("{id} PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
