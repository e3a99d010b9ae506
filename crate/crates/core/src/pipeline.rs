//! Stage orchestration over a workspace directory.
//!
//! ```text
//! <workspace>/
//!   dataset/   manifest.json img/*.ppm probe/*.ppm
//!   model/     weights.bin train_log.csv
//!   analysis/  activations.bin profiles.csv ranking.json entropy_hist.csv neurons/<id>/
//!   gradcam/   <image>_<selector>.{heat.ppm,overlay.ppm,json}
//!   metrics/   pairs.csv correlations.json scatter_SD.csv scatter_SM.csv
//!   report.md
//! ```
//!
//! Every stage directory holds a `fingerprint` file: the SHA-256 of the
//! stage's own configuration chained with its upstream fingerprints. A
//! stage whose fingerprint matches is up to date and is not rerun; a
//! downstream stage refuses to read from an upstream whose fingerprint
//! disagrees with the current configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetConfig, DatasetManifest};
use crate::error::{Error, Result};
use crate::gradcam::{self, ScoreMode, ScoreSelector};
use crate::image::RasterImage;
use crate::neurons::{self, Aggregator, Ranking};
use crate::superpos::{self, DEFAULT_SUPERPOSITION_NEURONS};
use crate::vit::{
    self, embed_images, load_weights, save_weights, ModelWeights, TrainConfig, ViTConfig,
};

const FORWARD_CHUNK: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub top_k: usize,
    pub aggregator: Aggregator,
    /// Neurons entering the superposition score; `None` means
    /// `min(1000, monitored neurons)`.
    pub superposition_neurons: Option<usize>,
    pub cutoff_percent: f64,
    pub histogram_bins: usize,
    pub leave_one_out: bool,
    /// Lowest-entropy neurons that get a report folder.
    pub report_neurons: usize,
    /// Top images per reported neuron that get a patch-wise map.
    pub patch_maps: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            top_k: neurons::DEFAULT_TOP_K,
            aggregator: Aggregator::MeanPatches,
            superposition_neurons: None,
            cutoff_percent: neurons::DEFAULT_CUTOFF_PERCENT,
            histogram_bins: 20,
            leave_one_out: false,
            report_neurons: 5,
            patch_maps: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCamConfig {
    pub images: Vec<u64>,
    pub selectors: Vec<ScoreSelector>,
    /// Block to explain; `None` means the last block.
    pub layer: Option<usize>,
    pub mode: ScoreMode,
}

impl Default for GradCamConfig {
    fn default() -> Self {
        let sel = |s: &str| ScoreSelector::parse(s).expect("valid default selector");
        Self {
            images: vec![0, 1, 2, 3],
            selectors: vec![
                sel("green"),
                sel("square"),
                sel("green+square"),
                sel("circle"),
            ],
            layer: None,
            mode: ScoreMode::LogitSum,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub workspace: PathBuf,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ViTConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
    pub gradcam: GradCamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("workspace"),
            seed: 0,
            dataset: DatasetConfig::default(),
            model: ViTConfig::desk(),
            train: TrainConfig::default(),
            analysis: AnalysisConfig::default(),
            gradcam: GradCamConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        if self.model.image_size as u32 != self.dataset.canvas
            || self.model.patch_size as u32 != self.dataset.patch_size
        {
            return Err(Error::Config(format!(
                "model geometry {}px/{}px disagrees with dataset canvas {}px/{}px",
                self.model.image_size,
                self.model.patch_size,
                self.dataset.canvas,
                self.dataset.patch_size
            )));
        }
        if self.analysis.top_k == 0 || self.analysis.top_k > self.dataset.image_count {
            return Err(Error::Config(format!(
                "top_k = {} must be in 1..={}",
                self.analysis.top_k, self.dataset.image_count
            )));
        }
        if self.analysis.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        Ok(())
    }

    pub fn superposition_neurons(&self) -> usize {
        self.analysis
            .superposition_neurons
            .unwrap_or(DEFAULT_SUPERPOSITION_NEURONS.min(self.model.monitored_neurons()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Gen,
    Train,
    Neurons,
    GradCam,
    Superpos,
    Report,
}

impl Stage {
    pub fn command(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Train => "train",
            Stage::Neurons => "neurons",
            Stage::GradCam => "gradcam",
            Stage::Superpos => "superpos",
            Stage::Report => "report",
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Gen => "dataset",
            Stage::Train => "model",
            Stage::Neurons => "analysis",
            Stage::GradCam => "gradcam",
            Stage::Superpos => "metrics",
            Stage::Report => "report",
        }
    }

    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Gen => &[],
            Stage::Train => &[Stage::Gen],
            Stage::Neurons => &[Stage::Train],
            Stage::GradCam => &[Stage::Train],
            Stage::Superpos => &[Stage::Neurons],
            Stage::Report => &[Stage::Neurons, Stage::Superpos],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

fn sha_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

/// Stage handle bound to a workspace and configuration.
pub struct Pipeline {
    pub config: RunConfig,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn root(&self) -> &Path {
        &self.config.workspace
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::Report => self.root().to_path_buf(),
            _ => self.root().join(stage.dir_name()),
        }
    }

    fn fingerprint_path(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::Report => self.root().join("report.fingerprint"),
            _ => self.dir(stage).join("fingerprint"),
        }
    }

    /// Expected fingerprint of `stage` under the current configuration.
    pub fn fingerprint(&self, stage: Stage) -> String {
        let c = &self.config;
        let own = match stage {
            Stage::Gen => json(&(&c.seed, &c.dataset)),
            Stage::Train => json(&(&c.seed, &c.model, &c.train)),
            Stage::Neurons => json(&(
                c.analysis.top_k,
                c.analysis.aggregator,
                c.analysis.cutoff_percent,
                c.analysis.histogram_bins,
                c.analysis.report_neurons,
                c.analysis.patch_maps,
            )),
            Stage::GradCam => json(&c.gradcam),
            Stage::Superpos => json(&(c.superposition_neurons(), c.analysis.leave_one_out)),
            Stage::Report => String::new(),
        };
        let mut parts = vec![stage.command().to_string(), own];
        parts.extend(stage.upstream().iter().map(|&u| self.fingerprint(u)));
        if stage == Stage::Report {
            parts.push(self.fingerprint(Stage::GradCam));
        }
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        sha_hex(&refs)
    }

    fn stored_fingerprint(&self, stage: Stage) -> Option<String> {
        std::fs::read_to_string(self.fingerprint_path(stage))
            .ok()
            .map(|s| s.trim().to_string())
    }

    pub fn is_fresh(&self, stage: Stage) -> bool {
        self.stored_fingerprint(stage).as_deref() == Some(self.fingerprint(stage).as_str())
    }

    /// Fail unless `stage` has completed under the current configuration.
    pub fn require(&self, stage: Stage) -> Result<()> {
        match self.stored_fingerprint(stage) {
            None => Err(Error::MissingPrerequisite {
                path: self.fingerprint_path(stage),
                command: stage.command(),
            }),
            Some(found) if found != self.fingerprint(stage) => Err(Error::Stale {
                stage: stage.command(),
                detail: format!(
                    "{} was produced under a different configuration",
                    self.dir(stage).display()
                ),
                command: stage.command(),
            }),
            Some(_) => Ok(()),
        }
    }

    fn finish(&self, stage: Stage) -> Result<Outcome> {
        let path = self.fingerprint_path(stage);
        write_text(&path, &format!("{}\n", self.fingerprint(stage)))?;
        Ok(Outcome::Ran)
    }

    fn begin(&self, stage: Stage, force: bool) -> Result<Option<Outcome>> {
        for &u in stage.upstream() {
            self.require(u)?;
        }
        if !force && self.is_fresh(stage) {
            return Ok(Some(Outcome::UpToDate));
        }
        let _ = std::fs::remove_file(self.fingerprint_path(stage));
        let dir = self.dir(stage);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(None)
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        self.require(Stage::Gen)?;
        DatasetManifest::read_from(&self.dir(Stage::Gen))
    }

    pub fn weights(&self) -> Result<ModelWeights> {
        self.require(Stage::Train)?;
        let path = self.dir(Stage::Train).join("weights.bin");
        if !path.exists() {
            return Err(Error::MissingPrerequisite {
                path,
                command: Stage::Train.command(),
            });
        }
        load_weights(&path, &self.config.model)
    }

    pub fn ranking(&self) -> Result<Ranking> {
        self.require(Stage::Neurons)?;
        let path = self.dir(Stage::Neurons).join("ranking.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn gen(&self, force: bool) -> Result<Outcome> {
        if let Some(o) = self.begin(Stage::Gen, force)? {
            return Ok(o);
        }
        let manifest = crate::dataset::generate_dataset(&self.config.dataset, self.config.seed)?;
        manifest.write_to(&self.dir(Stage::Gen))?;
        self.finish(Stage::Gen)
    }

    pub fn train(&self, force: bool) -> Result<Outcome> {
        if let Some(o) = self.begin(Stage::Train, force)? {
            return Ok(o);
        }
        let manifest = self.manifest()?;
        let images = manifest.render_all()?;
        let (weights, log) = vit::train(
            &manifest,
            &images,
            &self.config.model,
            &self.config.train,
            self.config.seed,
        )?;
        let dir = self.dir(Stage::Train);
        save_weights(&weights, &dir.join("weights.bin"))?;
        write_text(&dir.join("train_log.csv"), &vit::train::log_to_csv(&log))?;
        self.finish(Stage::Train)
    }

    pub fn neurons(&self, force: bool) -> Result<Outcome> {
        if let Some(o) = self.begin(Stage::Neurons, force)? {
            return Ok(o);
        }
        let a = &self.config.analysis;
        let manifest = self.manifest()?;
        let weights = self.weights()?;
        let images = manifest.render_all()?;
        let matrix = neurons::build_activation_matrix(
            &manifest.annotations,
            &images,
            &weights,
            a.aggregator,
            FORWARD_CHUNK,
        )?;
        let dir = self.dir(Stage::Neurons);
        matrix.write(&dir.join("activations.bin"))?;
        let profiles = neurons::profile_all(&matrix, &manifest.annotations, a.top_k)?;
        let ranking = neurons::rank_neurons(profiles, a.cutoff_percent);
        write_text(&dir.join("profiles.csv"), &neurons::profiles_csv(&ranking))?;
        write_text(&dir.join("ranking.json"), &serde_json::to_string(&ranking)?)?;
        let entropies: Vec<f64> = ranking.ranked.iter().filter_map(|p| p.entropy).collect();
        let hist = neurons::entropy_histogram(&entropies, a.histogram_bins)?;
        write_text(
            &dir.join("entropy_hist.csv"),
            &neurons::histogram_csv(&hist),
        )?;

        let by_id = |id: u64| -> Result<&RasterImage> {
            manifest
                .annotations
                .iter()
                .position(|x| x.image_id == id)
                .map(|i| &images[i])
                .ok_or_else(|| Error::Consistency(format!("image {id} missing from dataset")))
        };
        let folders = dir.join("neurons");
        let _ = std::fs::remove_dir_all(&folders);
        for p in ranking.ranked.iter().take(a.report_neurons) {
            let nd = folders.join(p.neuron.to_string());
            std::fs::create_dir_all(&nd).map_err(|e| Error::io(&nd, e))?;
            write_text(&nd.join("profile.md"), &neurons::describe(p, 5))?;
            for (rank, &id) in p.top_images.iter().enumerate() {
                let img = by_id(id)?;
                img.write_ppm(&nd.join(format!("top_{rank:02}_{id}.ppm")))?;
                if rank < a.patch_maps {
                    let map = neurons::patchwise_map(&weights, img, p.neuron)?;
                    map.render(img.width, img.height)
                        .write_ppm(&nd.join(format!("patch_{rank:02}_{id}.ppm")))?;
                }
            }
        }
        self.finish(Stage::Neurons)
    }

    pub fn gradcam(&self, force: bool) -> Result<Outcome> {
        if let Some(o) = self.begin(Stage::GradCam, force)? {
            return Ok(o);
        }
        let g = &self.config.gradcam;
        let manifest = self.manifest()?;
        let weights = self.weights()?;
        let dir = self.dir(Stage::GradCam);
        for &id in &g.images {
            let ann = manifest
                .annotations
                .iter()
                .find(|a| a.image_id == id)
                .ok_or_else(|| Error::Input(format!("image {id} is not in the dataset")))?;
            let img = manifest.render(ann)?;
            img.write_ppm(&dir.join(format!("{id}.ppm")))?;
            for sel in &g.selectors {
                gradcam::run_and_write(&dir, &weights, id, &img, sel, g.layer, &g.mode)?;
            }
        }
        self.finish(Stage::GradCam)
    }

    pub fn superpos(&self, force: bool) -> Result<Outcome> {
        if let Some(o) = self.begin(Stage::Superpos, force)? {
            return Ok(o);
        }
        let manifest = self.manifest()?;
        let weights = self.weights()?;
        let ranking = self.ranking()?;
        if manifest.probe_set.is_empty() {
            return Err(Error::Config(
                "probe set is empty; set dataset.probe_repeats >= 1 and rerun `gen`".into(),
            ));
        }
        let probes = manifest.render_probes()?;
        let ids: Vec<u64> = manifest.probe_set.iter().map(|p| p.image_id).collect();
        let embeddings = embed_images(&weights, &probes, &ids, FORWARD_CHUNK)?;
        // An explicit n is a contract; the default shrinks to what ranking kept.
        let n = match self.config.analysis.superposition_neurons {
            Some(n) => n,
            None => self
                .config
                .superposition_neurons()
                .min(ranking.ranked.len()),
        };
        let rows = superpos::pairwise_sweep(
            &ranking.ranked,
            &manifest.probe_set,
            &embeddings,
            n,
            self.config.analysis.leave_one_out,
        )?;
        let corr = superpos::correlate(&rows)?;
        let dir = self.dir(Stage::Superpos);
        write_text(&dir.join("pairs.csv"), &superpos::pairs_csv(&rows))?;
        write_text(
            &dir.join("correlations.json"),
            &serde_json::to_string_pretty(&corr)?,
        )?;
        write_text(
            &dir.join("scatter_SD.csv"),
            &superpos::scatter_csv(&rows, "D", |r| r.d),
        )?;
        write_text(
            &dir.join("scatter_SM.csv"),
            &superpos::scatter_csv(&rows, "M", |r| r.m),
        )?;
        self.finish(Stage::Superpos)
    }

    pub fn report(&self, force: bool) -> Result<Outcome> {
        if let Some(o) = self.begin(Stage::Report, force)? {
            return Ok(o);
        }
        let text = self.render_report()?;
        write_text(&self.root().join("report.md"), &text)?;
        self.finish(Stage::Report)
    }

    /// `gen → train → neurons → gradcam → superpos → report`.
    pub fn run_all(&self, force: bool) -> Result<()> {
        self.gen(force)?;
        self.train(force)?;
        self.neurons(force)?;
        self.gradcam(force)?;
        self.superpos(force)?;
        self.report(force)?;
        Ok(())
    }

    fn render_report(&self) -> Result<String> {
        let c = &self.config;
        let ranking = self.ranking()?;
        let mut s = String::from("# Feature-neuron and superposition report\n\n");
        let _ = writeln!(
            s,
            "Seed {}, {} images, ViT {}x{} patches, {} blocks x {} units ({} monitored neurons).\n",
            c.seed,
            c.dataset.image_count,
            c.model.grid(),
            c.model.grid(),
            c.model.layers,
            c.model.d_model,
            c.model.monitored_neurons()
        );

        let log_path = self.dir(Stage::Train).join("train_log.csv");
        if let Ok(log) = std::fs::read_to_string(&log_path) {
            if let Some(last) = log.lines().last() {
                let _ = writeln!(
                    s,
                    "## Training\n\nFinal epoch (epoch,train_loss,val_macro_f1): `{last}`\n"
                );
            }
        }

        s.push_str("## Entropy distribution\n\n| bits | count | |\n|---|---|---|\n");
        let hist_path = self.dir(Stage::Neurons).join("entropy_hist.csv");
        let hist = std::fs::read_to_string(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
        let rows: Vec<(String, String, usize)> = hist
            .lines()
            .skip(1)
            .filter_map(|l| {
                let mut it = l.split(',');
                Some((
                    it.next()?.into(),
                    it.next()?.into(),
                    it.next()?.parse().ok()?,
                ))
            })
            .collect();
        let peak = rows.iter().map(|r| r.2).max().unwrap_or(0).max(1);
        for (lo, hi, n) in &rows {
            let bar = "#".repeat((n * 40).div_ceil(peak));
            let _ = writeln!(s, "| {lo}-{hi} | {n} | `{bar}` |");
        }
        let _ = writeln!(
            s,
            "\n{} ranked neurons, {} zero-activity neurons excluded.\n",
            ranking.ranked.len(),
            ranking.excluded.len()
        );

        s.push_str("## Lowest-entropy neurons\n\n| neuron | entropy | percentile | top features (affinity / occurrence) |\n|---|---|---|---|\n");
        for p in ranking
            .ranked
            .iter()
            .take(c.analysis.report_neurons.max(10))
        {
            let feats: Vec<String> = p
                .top_features()
                .into_iter()
                .take(4)
                .map(|(f, a, o)| format!("{f} ({a:.2} / {o:.2})"))
                .collect();
            let _ = writeln!(
                s,
                "| {} | {:.2} | {:.2} %ile | {} |",
                p.neuron,
                p.entropy.unwrap_or(f64::NAN),
                p.percentile.unwrap_or(f64::NAN),
                feats.join(", ")
            );
        }

        s.push_str("\n## Patch-wise activation maps\n\n");
        for p in ranking.ranked.iter().take(c.analysis.report_neurons) {
            let _ = writeln!(s, "{}", neurons::describe(p, 3));
            for (rank, id) in p.top_images.iter().take(c.analysis.patch_maps).enumerate() {
                let base = format!("analysis/neurons/{}", p.neuron);
                let _ = writeln!(
                    s,
                    "- image {id}: [image]({base}/top_{rank:02}_{id}.ppm) | [map]({base}/patch_{rank:02}_{id}.ppm)"
                );
            }
            s.push('\n');
        }

        if self.is_fresh(Stage::GradCam) {
            s.push_str("## Grad-CAM\n\n| image | selector | score | heatmap | overlay |\n|---|---|---|---|---|\n");
            for &id in &c.gradcam.images {
                for sel in &c.gradcam.selectors {
                    let stem = format!("{id}_{}", sel.name());
                    let side = self.dir(Stage::GradCam).join(format!("{stem}.json"));
                    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
                    let v: serde_json::Value = serde_json::from_str(&text)?;
                    let _ = writeln!(
                        s,
                        "| [{id}](gradcam/{id}.ppm) | {} | {:.4} | [heat](gradcam/{stem}.heat.ppm) | [overlay](gradcam/{stem}.overlay.ppm) |",
                        sel.name(),
                        v["score"].as_f64().unwrap_or(f64::NAN)
                    );
                }
            }
            s.push('\n');
        }

        let mdir = self.dir(Stage::Superpos);
        let corr_path = mdir.join("correlations.json");
        let corr = std::fs::read_to_string(&corr_path).map_err(|e| Error::io(&corr_path, e))?;
        let _ = writeln!(
            s,
            "## Superposition vs. separability\n\nS over the {} lowest-entropy neurons.\n\n```json\n{}\n```\n",
            c.superposition_neurons(),
            corr.trim()
        );
        s.push_str("Scatter data: [S vs D](metrics/scatter_SD.csv), [S vs M](metrics/scatter_SM.csv), full table [pairs.csv](metrics/pairs.csv).\n");
        Ok(s)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(RunConfig::from_json(r#"{"seed": 3}"#).is_ok());
        let err = RunConfig::from_json(r#"{"sede": 3}"#).unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(RunConfig::from_json(r#"{"train": {"epochs": 2, "momentum": 1}}"#).is_err());
    }

    #[test]
    fn config_round_trips() {
        let c = RunConfig::default();
        assert_eq!(
            RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap(),
            c
        );
    }

    #[test]
    fn fingerprints_chain() {
        let a = Pipeline::new(RunConfig::default()).unwrap();
        let c = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        let b = Pipeline::new(c).unwrap();
        for s in [Stage::Gen, Stage::Train, Stage::Neurons, Stage::Superpos] {
            assert_ne!(a.fingerprint(s), b.fingerprint(s));
        }
        let mut c = RunConfig::default();
        c.analysis.top_k = 10;
        let d = Pipeline::new(c).unwrap();
        assert_eq!(a.fingerprint(Stage::Train), d.fingerprint(Stage::Train));
        assert_ne!(a.fingerprint(Stage::Neurons), d.fingerprint(Stage::Neurons));
    }

    #[test]
    fn missing_upstream_names_the_command() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            workspace: dir.path().to_path_buf(),
            ..Default::default()
        };
        let p = Pipeline::new(c).unwrap();
        match p.neurons(false) {
            Err(Error::MissingPrerequisite { command, .. }) => assert_eq!(command, "train"),
            other => panic!("{other:?}"),
        }
    }
}
