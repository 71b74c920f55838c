use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::{DatasetConfig, ExperimentConfig};
use crate::cvae::{train, ModelCheckpoint, TrainOptions};
use crate::detector::{detect_volume, threshold_masks};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, PatientMeta, Split};
use crate::metrics::{evaluate, EvalItem, MetricsReport};
use crate::phantom::generate_dataset;
use crate::registration::{register_volume, synthesize_template, BBox};
use crate::volume::{MaskVolume, Volume};

const COMPLETE: &str = "COMPLETE";

/// Builds a cache directory atomically: `build` fills a private temporary
/// directory which is then renamed into place. If another process finished
/// first, its result is kept.
fn build_cached(dir: &Path, build: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if dir.join(COMPLETE).exists() {
        return Ok(());
    }
    let parent = dir.parent().ok_or_else(|| Error::Validation(format!("{} has no parent", dir.display())))?;
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let name = dir.file_name().unwrap().to_string_lossy();
    let tmp = parent.join(format!(".tmp-{name}-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    build(&tmp)?;
    fs::write(tmp.join(COMPLETE), b"").map_err(|e| Error::io(&tmp, e))?;
    if dir.exists() && !dir.join(COMPLETE).exists() {
        // Leftover from an interrupted run without the completion marker.
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if let Err(e) = fs::rename(&tmp, dir) {
        if dir.join(COMPLETE).exists() {
            let _ = fs::remove_dir_all(&tmp);
        } else {
            return Err(Error::io(dir, e));
        }
    }
    Ok(())
}

/// Generates the dataset under `root/datasets/<dataset hash>` unless cached.
pub fn ensure_dataset(cfg: &ExperimentConfig, root: &Path) -> Result<(PathBuf, DatasetManifest)> {
    let dir = root.join("datasets").join(cfg.dataset_hash());
    build_cached(&dir, |tmp| {
        let d: &DatasetConfig = &cfg.dataset;
        info!("generating dataset {} ({} train / {} test)", cfg.dataset_hash(), d.n_train, d.n_test);
        generate_dataset(&d.phantom, d.n_train, d.n_test, &d.lesion, d.seed, tmp)?;
        let text = toml::to_string_pretty(d).map_err(|e| Error::format("dataset config", e.to_string()))?;
        fs::write(tmp.join("dataset.toml"), text).map_err(|e| Error::io(tmp, e))
    })?;
    let manifest = DatasetManifest::load(dir.join("manifest.jsonl"))?;
    Ok((dir, manifest))
}

/// One registered volume. Paths are relative to the set directory on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiRecord {
    pub path: PathBuf,
    pub meta: PatientMeta,
    pub split: Split,
    /// Ground truth mapped into ROI coordinates (test volumes).
    pub truth_path: Option<PathBuf>,
    pub bbox: BBox,
    pub source_dims: [usize; 3],
}

/// Registered ROIs of a dataset.
#[derive(Debug, Clone)]
pub struct RegisteredSet {
    pub dir: PathBuf,
    pub records: Vec<RoiRecord>,
}

impl RegisteredSet {
    pub fn train(&self) -> impl Iterator<Item = &RoiRecord> {
        self.records.iter().filter(|r| r.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &RoiRecord> {
        self.records.iter().filter(|r| r.split == Split::Test)
    }

    pub fn load_volume(&self, rec: &RoiRecord) -> Result<Volume> {
        Volume::load(self.dir.join(&rec.path))
    }

    pub fn load_truth(&self, rec: &RoiRecord) -> Result<MaskVolume> {
        let p = rec
            .truth_path
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("{} has no ground truth", rec.path.display())))?;
        MaskVolume::load(self.dir.join(p))
    }

    pub fn training_volumes(&self) -> Result<Vec<(Volume, PatientMeta)>> {
        self.train().map(|r| Ok((self.load_volume(r)?, r.meta))).collect()
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a registered set written by [`ensure_registered`] or the
/// `register` command.
pub fn load_registered(dir: &Path) -> Result<RegisteredSet> {
    let path = dir.join("rois.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::format(path.display().to_string(), format!("line {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<RoiRecord>>>()?;
    Ok(RegisteredSet { dir: dir.to_path_buf(), records })
}

/// Registers every volume of a dataset into `dir`.
pub fn register_dataset(cfg: &ExperimentConfig, manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    let template = synthesize_template(&cfg.dataset.phantom, &cfg.registration)?;
    Volume::new([1, template.height, template.width], template.data.clone(), 1.0, 1.0)?
        .save(dir.join("template.volz"))?;
    let mut records = Vec::with_capacity(manifest.entries.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        let v = Volume::load(&e.path)?;
        let roi = register_volume(&v, &template, &cfg.registration)?;
        let tag = match e.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let path = PathBuf::from(format!("{tag}_{i:04}.volz"));
        roi.volume.save(dir.join(&path))?;
        let truth_path = match &e.mask_path {
            Some(mp) => {
                let mapped = roi.map_mask(&MaskVolume::load(mp)?)?;
                let p = PathBuf::from(format!("{tag}_{i:04}_truth.volz"));
                mapped.save(dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        records.push(RoiRecord {
            path,
            meta: e.meta,
            split: e.split,
            truth_path,
            bbox: roi.bbox,
            source_dims: roi.source_dims,
        });
    }
    write_jsonl(&dir.join("rois.jsonl"), &records)
}

/// Registers the configuration's dataset under
/// `root/registered/<registration hash>` unless cached.
pub fn ensure_registered(cfg: &ExperimentConfig, root: &Path) -> Result<RegisteredSet> {
    let (_, manifest) = ensure_dataset(cfg, root).map_err(|e| e.in_stage("gen-data"))?;
    let dir = root.join("registered").join(cfg.registration_hash());
    build_cached(&dir, |tmp| register_dataset(cfg, &manifest, tmp)).map_err(|e| e.in_stage("register"))?;
    load_registered(&dir)
}

/// Trains one model on the registered training volumes and saves it.
pub fn fit_stage(cfg: &ExperimentConfig, set: &RegisteredSet, seed: u64, checkpoint: &Path) -> Result<ModelCheckpoint> {
    let volumes = set.training_volumes()?;
    let (ckpt, report) =
        train(&volumes, &cfg.model_for_seed(seed), &TrainOptions { flags: cfg.conditioning, ..Default::default() })?;
    info!("seed {seed}: {} steps in {:.1}s", report.steps, report.seconds);
    ckpt.save(checkpoint)?;
    Ok(ckpt)
}

/// Detection outputs for a test set, in test-record order.
#[derive(Debug, Clone, PartialEq)]
pub struct Detections {
    /// Continuous, median-filtered anomaly maps.
    pub scores: Vec<MaskVolume>,
    /// Thresholded binary masks.
    pub masks: Vec<MaskVolume>,
    pub thresholds: Vec<f64>,
}

impl Detections {
    /// Writes `scores_XXXX.volz`, `mask_XXXX.volz` and `thresholds.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, (s, m)) in self.scores.iter().zip(&self.masks).enumerate() {
            s.save(dir.join(format!("scores_{i:04}.volz")))?;
            m.save(dir.join(format!("mask_{i:04}.volz")))?;
        }
        let json = serde_json::to_string(&self.thresholds).map_err(|e| Error::format("thresholds", e.to_string()))?;
        write_text_atomic(&dir.join("thresholds.json"), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("thresholds.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let thresholds: Vec<f64> =
            serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let mut scores = Vec::with_capacity(thresholds.len());
        let mut masks = Vec::with_capacity(thresholds.len());
        for i in 0..thresholds.len() {
            scores.push(MaskVolume::load(dir.join(format!("scores_{i:04}.volz")))?);
            masks.push(MaskVolume::load(dir.join(format!("mask_{i:04}.volz")))?);
        }
        Ok(Detections { scores, masks, thresholds })
    }
}

/// Detects anomalies in every test volume of the set.
pub fn detect_stage(cfg: &ExperimentConfig, ckpt: &mut ModelCheckpoint, set: &RegisteredSet) -> Result<Detections> {
    let mut scores = Vec::new();
    for rec in set.test() {
        let roi = set.load_volume(rec)?;
        scores.push(detect_volume(ckpt, &roi, &rec.meta, &cfg.detection)?);
    }
    let (masks, thresholds) = threshold_masks(&scores, &cfg.detection)?.into_iter().unzip();
    Ok(Detections { scores, masks, thresholds })
}

/// Pooled metrics of detection outputs against the mapped ground truth.
pub fn eval_stage(set: &RegisteredSet, det: &Detections) -> Result<MetricsReport> {
    let truths = set.test().map(|r| set.load_truth(r)).collect::<Result<Vec<_>>>()?;
    if truths.len() != det.scores.len() || det.masks.len() != det.scores.len() {
        return Err(Error::shape(truths.len(), det.scores.len()));
    }
    let items: Vec<EvalItem<'_>> = det
        .scores
        .iter()
        .zip(&det.masks)
        .zip(&truths)
        .map(|((scores, binary), truth)| EvalItem { scores, binary, truth })
        .collect();
    evaluate(&items)
}

/// Everything recorded about one seed of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub config_hash: String,
    pub seed: u64,
    pub threshold: f64,
    pub metrics: MetricsReport,
    pub train_seconds: f64,
    pub detect_seconds: f64,
}

pub(super) fn write_text_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(super) fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}
