use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::Digest as _;

use super::config::RunConfig;
use super::manifest::{split_dataset, DatasetManifest, Split};
use crate::augment::Variant;
use crate::baselines::{extract_all, write_features_csv, Baseline, FeatureKind};
use crate::error::{Error, Result};
use crate::imageops::{read_image, write_image};
use crate::label::OriginLabel;
use crate::network::{
    export_filters, load_frozen_weights, patch_accuracy, read_frozen_weights, train, weight_variance_report,
    write_variance_csv, Checkpoint, EpochStats, LabeledPatches, OriginNet, Scenario,
};
use crate::rng::derive_seed;
use crate::robustness::{emit_curves, run_robustness_from, PerturbationSpec, RobustnessCurve};
use crate::sampler::sample_patches_with;
use crate::tensor::{Scalar, ScalarKind};
use crate::vote::{evaluate, EvalReport, ImageClassifier, PatchVoter, TestImage};

pub const CONFIG_ECHO: &str = "config.json";

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }
    pub fn patches_dir(&self) -> PathBuf {
        self.root.join("patches")
    }
    pub fn patch_index(&self) -> PathBuf {
        self.patches_dir().join("patches.csv")
    }
    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.train_dir().join("checkpoint.bin")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn baseline_dir(&self, kind: FeatureKind) -> PathBuf {
        self.root.join("baselines").join(kind.name())
    }
    pub fn robustness_dir(&self, classifier: &str) -> PathBuf {
        self.root.join("robustness").join(classifier)
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn require(path: PathBuf, stage: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            path,
            stage: stage.to_string(),
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Create `dir` and drop the resolved config into it.
fn stage_dir(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join(CONFIG_ECHO), &cfg.to_json())
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = require(Layout::new(&cfg.out_dir).manifest(), "sample")?;
    DatasetManifest::read_csv(path, &cfg.data_root)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    /// Images per (split, class), rows train/val/test, columns npi/cgg/dgi.
    pub images: [[usize; 3]; 3],
    pub patches_written: usize,
    pub skipped: Vec<String>,
}

/// Split the dataset and store raw train/val patches as PPM plus an index.
/// Test images are sampled afresh at evaluation time.
pub fn run_sample(cfg: &RunConfig) -> Result<SampleSummary> {
    let layout = Layout::new(&cfg.out_dir);
    stage_dir(cfg, &layout.root)?;
    let manifest = split_dataset(&cfg.data_root, cfg.seed())?;
    manifest.write_csv(layout.manifest())?;

    let dir = layout.patches_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    stage_dir(cfg, &dir)?;
    let items: Vec<(Split, TestImage)> = [Split::Train, Split::Val]
        .into_iter()
        .flat_map(|s| manifest.images(s).into_iter().map(move |i| (s, i)))
        .collect();
    type Row = [String; 8];
    let per_image: Vec<Result<Option<Vec<Row>>>> = items
        .par_iter()
        .map(|(split, item)| {
            let img = item.load()?;
            let set = match sample_patches_with(
                &img,
                &item.id,
                cfg.patch_side,
                cfg.patches_per_image,
                cfg.pool_factor,
                cfg.seed(),
            ) {
                Ok(s) => s,
                Err(Error::ImageTooSmall { .. }) => {
                    log::warn!("skipping {}: smaller than {} pixels", item.id, cfg.patch_side);
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let stem = item.id.replace('/', "_");
            let stem = stem.rsplit_once('.').map(|(s, _)| s.to_string()).unwrap_or(stem);
            let sub = dir.join(split.name()).join(item.label.name());
            create_dir(&sub)?;
            let mut rows = Vec::with_capacity(set.patches.len());
            for (k, p) in set.patches.iter().enumerate() {
                let file = format!("{}/{}/{stem}_{k:03}.ppm", split.name(), item.label.name());
                write_image(dir.join(&file), &p.pixels)?;
                rows.push([
                    split.name().to_string(),
                    item.id.clone(),
                    item.label.name().to_string(),
                    k.to_string(),
                    p.candidate.x.to_string(),
                    p.candidate.y.to_string(),
                    p.candidate.fitness.to_string(),
                    file,
                ]);
            }
            Ok(Some(rows))
        })
        .collect();

    let mut w = csv::Writer::from_path(layout.patch_index())?;
    w.write_record(["split", "image", "label", "index", "x", "y", "fitness", "file"])?;
    let mut written = 0;
    let mut skipped = Vec::new();
    for ((_, item), rows) in items.iter().zip(per_image) {
        match rows? {
            None => skipped.push(item.id.clone()),
            Some(rows) => {
                written += rows.len();
                for r in rows {
                    w.write_record(&r)?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(layout.patch_index(), e))?;

    let mut images = [[0usize; 3]; 3];
    for (si, s) in Split::ALL.iter().enumerate() {
        for l in OriginLabel::ALL {
            images[si][l.index()] = manifest.count(l, *s);
        }
    }
    Ok(SampleSummary {
        images,
        patches_written: written,
        skipped,
    })
}

/// Stored patches of one split; training patches are expanded six-fold.
pub fn load_patches(cfg: &RunConfig, split: Split, augment: bool) -> Result<LabeledPatches> {
    let layout = Layout::new(&cfg.out_dir);
    let index = require(layout.patch_index(), "sample")?;
    let mut r = csv::Reader::from_path(&index)?;
    let mut out = LabeledPatches::new(cfg.patch_side);
    for rec in r.records() {
        let rec = rec?;
        let bad = || Error::Dataset(format!("{}: malformed row", index.display()));
        if rec.get(0).ok_or_else(bad)? != split.name() {
            continue;
        }
        let label: OriginLabel = rec.get(2).ok_or_else(bad)?.parse()?;
        let patch = read_image(layout.patches_dir().join(rec.get(7).ok_or_else(bad)?))?;
        if augment {
            for v in Variant::ALL {
                out.push(&v.apply(&patch), label)?;
            }
        } else {
            out.push(&patch, label)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub train_patches: usize,
    pub val_patches: usize,
    /// Inference-mode accuracy of the saved network on the (augmented)
    /// training patches.
    pub train_patch_accuracy: f64,
    pub val_patch_accuracy: Option<f64>,
    pub checkpoint_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn train_typed<T: Scalar>(
    cfg: &RunConfig,
    train_set: &LabeledPatches,
    val_set: &LabeledPatches,
) -> Result<TrainSummary> {
    let layout = Layout::new(&cfg.out_dir);
    let mut net = OriginNet::<T>::new(cfg.train.scenario, cfg.patch_side, derive_seed(cfg.seed(), "init", &[]))?;
    if cfg.train.scenario == Scenario::Vgg {
        let path = cfg.frozen_weights.as_ref().ok_or_else(|| {
            Error::InvalidArgument("the vgg scenario needs a frozen-weight file (--frozen-weights)".into())
        })?;
        load_frozen_weights(&mut net, &read_frozen_weights(path)?)?;
    }
    let outcome = train(net, train_set, val_set, &cfg.train)?;
    let bytes = outcome.best.to_bytes();
    let ckpt_path = layout.checkpoint();
    std::fs::write(&ckpt_path, &bytes).map_err(|e| Error::io(&ckpt_path, e))?;

    let hist_path = layout.train_dir().join("history.csv");
    let mut w = csv::Writer::from_path(&hist_path)?;
    w.write_record(["epoch", "train_loss", "train_accuracy", "val_accuracy"])?;
    for h in &outcome.history {
        w.write_record([
            h.epoch.to_string(),
            format!("{:.6}", h.train_loss),
            format!("{:.6}", h.train_accuracy),
            h.val_accuracy.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&hist_path, e))?;

    let net = &outcome.best.net;
    let summary = TrainSummary {
        history: outcome.history.clone(),
        best_epoch: outcome.best.epoch,
        train_patches: train_set.len(),
        val_patches: val_set.len(),
        train_patch_accuracy: patch_accuracy(net, train_set)?,
        val_patch_accuracy: if val_set.is_empty() {
            None
        } else {
            Some(patch_accuracy(net, val_set)?)
        },
        checkpoint_sha256: hex(&sha2::Sha256::digest(&bytes)),
    };
    write_text(
        &layout.train_dir().join("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// Train on the stored patches and save the best checkpoint.
pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let layout = Layout::new(&cfg.out_dir);
    require(layout.patch_index(), "sample")?;
    stage_dir(cfg, &layout.train_dir())?;
    let train_set = load_patches(cfg, Split::Train, true)?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("no training patches were sampled".into()));
    }
    let val_set = load_patches(cfg, Split::Val, false)?;
    match cfg.train.scalar {
        ScalarKind::F32 => train_typed::<f32>(cfg, &train_set, &val_set),
        ScalarKind::F64 => train_typed::<f64>(cfg, &train_set, &val_set),
    }
}

/// The trained network of either precision.
pub enum TrainedNet {
    F32(OriginNet<f32>),
    F64(OriginNet<f64>),
}

impl TrainedNet {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let path = require(Layout::new(&cfg.out_dir).checkpoint(), "train")?;
        Ok(match cfg.train.scalar {
            ScalarKind::F32 => TrainedNet::F32(Checkpoint::<f32>::load(&path)?.net),
            ScalarKind::F64 => TrainedNet::F64(Checkpoint::<f64>::load(&path)?.net),
        })
    }

    pub fn voter_eval(&self, cfg: &RunConfig, images: &[TestImage]) -> Result<EvalReport> {
        self.with_voter(cfg, |v| evaluate(v, images))
    }

    pub fn with_voter<R>(&self, cfg: &RunConfig, f: impl FnOnce(&dyn ImageClassifier) -> Result<R>) -> Result<R> {
        match self {
            TrainedNet::F32(n) => f(&PatchVoter {
                classifier: n,
                patches_per_image: cfg.patches_per_image,
                pool_factor: cfg.pool_factor,
                seed: cfg.seed(),
            }),
            TrainedNet::F64(n) => f(&PatchVoter {
                classifier: n,
                patches_per_image: cfg.patches_per_image,
                pool_factor: cfg.pool_factor,
                seed: cfg.seed(),
            }),
        }
    }

    pub fn variances(&self) -> Vec<f64> {
        match self {
            TrainedNet::F32(n) => weight_variance_report(n),
            TrainedNet::F64(n) => weight_variance_report(n),
        }
    }

    pub fn export_filters(&self, layer: usize, channel: usize, dir: &Path) -> Result<Vec<PathBuf>> {
        match self {
            TrainedNet::F32(n) => export_filters(n, layer, channel, dir),
            TrainedNet::F64(n) => export_filters(n, layer, channel, dir),
        }
    }
}

/// Fresh patch sampling, prediction and voting on the test split.
pub fn run_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let layout = Layout::new(&cfg.out_dir);
    let net = TrainedNet::load(cfg)?;
    let manifest = load_manifest(cfg)?;
    stage_dir(cfg, &layout.eval_dir())?;
    let report = net.voter_eval(cfg, &manifest.images(Split::Test))?;
    report.write(layout.eval_dir())?;
    Ok(report)
}

/// Train every configured baseline on the training split and score it on
/// the test split.
pub fn run_baselines(cfg: &RunConfig) -> Result<Vec<(FeatureKind, EvalReport)>> {
    let layout = Layout::new(&cfg.out_dir);
    let manifest = load_manifest(cfg)?;
    let train_imgs = manifest.images(Split::Train);
    let test_imgs = manifest.images(Split::Test);
    let mut out = Vec::new();
    for &kind in &cfg.baselines {
        let dir = layout.baseline_dir(kind);
        stage_dir(cfg, &dir)?;
        let train_feats = extract_all(kind, &train_imgs)?;
        write_features_csv(dir.join("features_train.csv"), &train_imgs, &train_feats)?;
        let labels: Vec<OriginLabel> = train_imgs.iter().map(|i| i.label).collect();
        let model = Baseline::fit(kind, &train_feats, &labels, cfg.ridge)?;
        model.save(dir.join("model.json"))?;
        let test_feats = extract_all(kind, &test_imgs)?;
        write_features_csv(dir.join("features_test.csv"), &test_imgs, &test_feats)?;
        let report = evaluate(&model, &test_imgs)?;
        report.write(&dir)?;
        out.push((kind, report));
    }
    Ok(out)
}

/// Robustness curves for the CNN and for every baseline trained so far.
pub fn run_robustness_stage(cfg: &RunConfig) -> Result<Vec<(String, Vec<RobustnessCurve>)>> {
    let layout = Layout::new(&cfg.out_dir);
    let net = TrainedNet::load(cfg)?;
    let manifest = load_manifest(cfg)?;
    let test = manifest.images(Split::Test);
    let specs: Vec<PerturbationSpec> = cfg.families.iter().map(|&f| PerturbationSpec::default_for(f)).collect();
    let curves_for = |c: &dyn ImageClassifier| -> Result<Vec<RobustnessCurve>> {
        let original = evaluate(c, &test)?;
        specs
            .iter()
            .map(|s| run_robustness_from(c, &test, s, &original))
            .collect()
    };
    let mut out = Vec::new();
    if !specs.is_empty() {
        let cnn = net.with_voter(cfg, curves_for)?;
        let dir = layout.robustness_dir("cnn");
        stage_dir(cfg, &dir)?;
        emit_curves(&cnn, &dir)?;
        out.push(("cnn".to_string(), cnn));
        for &kind in &cfg.baselines {
            let model_path = layout.baseline_dir(kind).join("model.json");
            if !model_path.exists() {
                continue;
            }
            let model = Baseline::load(&model_path)?;
            let curves = curves_for(&model)?;
            let dir = layout.robustness_dir(kind.name());
            stage_dir(cfg, &dir)?;
            emit_curves(&curves, &dir)?;
            out.push((kind.name().to_string(), curves));
        }
    }
    Ok(out)
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Consolidated accuracy table, first-layer variance CSV and filter images.
pub fn run_report(cfg: &RunConfig) -> Result<String> {
    let layout = Layout::new(&cfg.out_dir);
    let cnn = read_report(&require(layout.eval_dir().join("report.json"), "eval")?)?;
    let net = TrainedNet::load(cfg)?;
    let dir = layout.report_dir();
    stage_dir(cfg, &dir)?;

    let mut rows: Vec<(String, EvalReport)> = vec![(format!("CNN ({})", cfg.train.scenario), cnn)];
    for &kind in &cfg.baselines {
        let p = layout.baseline_dir(kind).join("report.json");
        if p.exists() {
            rows.push((format!("{kind} + LDA"), read_report(&p)?));
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "Identification accuracy (test split)");
    let _ = writeln!(
        s,
        "{:<22} {:>10} {:>10} {:>9}",
        "method", "patch/unit", "image", "boost"
    );
    for (name, r) in &rows {
        let _ = writeln!(
            s,
            "{:<22} {:>9.2}% {:>9.2}% {:>+8.2}%",
            name,
            100.0 * r.patch_accuracy(),
            100.0 * r.image_accuracy(),
            100.0 * r.boost()
        );
    }
    let _ = writeln!(s, "\nCNN confusion and votes:\n{}", rows[0].1.summary_text());

    let variances = net.variances();
    write_variance_csv(dir.join("conv1_variance.csv"), &variances)?;
    let _ = writeln!(s, "conv1 weight variance per input channel:");
    for (c, v) in ["R", "G", "B"].iter().zip(&variances) {
        let _ = writeln!(s, "  {c}: {v:.6e}");
    }
    if variances.len() == 3 && variances[1] > 0.0 {
        let _ = writeln!(
            s,
            "  R/G = {:.4}, B/G = {:.4}",
            variances[0] / variances[1],
            variances[2] / variances[1]
        );
    }
    let filters = dir.join("filters");
    let mut n = 0;
    for c in 0..3 {
        n += net.export_filters(1, c, &filters)?.len();
    }
    let _ = writeln!(s, "{n} conv1 filter images in {}", filters.display());

    let curves_root = layout.root.join("robustness");
    if curves_root.exists() {
        let _ = writeln!(s, "\nrobustness curves in {}", curves_root.display());
    }
    write_text(&dir.join("report.txt"), &s)?;
    Ok(s)
}
