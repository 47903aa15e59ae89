//! Majority voting over patch predictions and image/patch-level evaluation.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{read_image, ImageRGB8};
use crate::label::OriginLabel;
use crate::network::{label_of, OriginNet};
use crate::sampler::sample_patches_with;
use crate::tensor::{Scalar, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: OriginLabel,
    pub confidences: [f64; NUM_CLASSES],
}

impl Prediction {
    /// Softmax of one logit row; ties in the argmax go to the lowest index.
    pub fn from_logits<T: Scalar>(row: &[T]) -> Self {
        let p = crate::tensor::softmax_row(row);
        Self::from_confidences([p[0], p[1], p[2]])
    }

    pub fn from_confidences(confidences: [f64; NUM_CLASSES]) -> Self {
        Prediction {
            label: label_of(&confidences),
            confidences,
        }
    }

    /// A prediction with all confidence on `label`.
    pub fn certain(label: OriginLabel) -> Self {
        let mut confidences = [0.0; NUM_CLASSES];
        confidences[label.index()] = 1.0;
        Prediction { label, confidences }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTable {
    pub counts: [usize; NUM_CLASSES],
    pub confidence_sums: [f64; NUM_CLASSES],
    pub total: usize,
    pub decision: OriginLabel,
}

/// Most-voted label; ties broken by summed confidence, then lowest index.
pub fn majority_vote(predictions: &[Prediction]) -> Result<VoteTable> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("majority vote over no predictions".into()));
    }
    let mut counts = [0usize; NUM_CLASSES];
    for p in predictions {
        counts[p.label.index()] += 1;
    }
    // summing sorted values keeps the result independent of input order
    let mut confidence_sums = [0.0; NUM_CLASSES];
    for (k, sum) in confidence_sums.iter_mut().enumerate() {
        let mut vals: Vec<f64> = predictions.iter().map(|p| p.confidences[k]).collect();
        vals.sort_by(f64::total_cmp);
        *sum = vals.iter().sum();
    }
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if counts[k] > counts[best] || (counts[k] == counts[best] && confidence_sums[k] > confidence_sums[best]) {
            best = k;
        }
    }
    Ok(VoteTable {
        counts,
        confidence_sums,
        total: predictions.len(),
        decision: OriginLabel::ALL[best],
    })
}

/// Something that labels square patches.
pub trait PatchClassifier: Sync {
    fn patch_side(&self) -> usize;
    fn classify(&self, patches: &[ImageRGB8]) -> Result<Vec<Prediction>>;
}

impl<T: Scalar> PatchClassifier for OriginNet<T> {
    fn patch_side(&self) -> usize {
        OriginNet::patch_side(self)
    }

    fn classify(&self, patches: &[ImageRGB8]) -> Result<Vec<Prediction>> {
        self.predict(patches)
    }
}

/// Something that turns a whole image into one or more unit predictions
/// (patches for the CNN, channels or a single vector for the baselines).
pub trait ImageClassifier: Sync {
    fn assess(&self, id: &str, image: &ImageRGB8) -> Result<Vec<Prediction>>;
}

/// Patch sampling followed by per-patch classification.
pub struct PatchVoter<'a, C: PatchClassifier + ?Sized> {
    pub classifier: &'a C,
    pub patches_per_image: usize,
    pub pool_factor: usize,
    pub seed: u64,
}

impl<C: PatchClassifier + ?Sized> ImageClassifier for PatchVoter<'_, C> {
    fn assess(&self, id: &str, image: &ImageRGB8) -> Result<Vec<Prediction>> {
        let set = sample_patches_with(
            image,
            id,
            self.classifier.patch_side(),
            self.patches_per_image,
            self.pool_factor,
            self.seed,
        )?;
        let pixels: Vec<ImageRGB8> = set.patches.into_iter().map(|p| p.pixels).collect();
        self.classifier.classify(&pixels)
    }
}

#[derive(Debug, Clone)]
pub enum ImageData {
    InMemory(ImageRGB8),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct TestImage {
    pub id: String,
    pub label: OriginLabel,
    pub data: ImageData,
}

impl TestImage {
    pub fn load(&self) -> Result<Cow<'_, ImageRGB8>> {
        match &self.data {
            ImageData::InMemory(img) => Ok(Cow::Borrowed(img)),
            ImageData::File(path) => read_image(path).map(Cow::Owned),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageVote {
    pub id: String,
    pub label: OriginLabel,
    pub table: VoteTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub patch_correct: usize,
    pub patch_total: usize,
    pub image_correct: usize,
    pub image_total: usize,
    /// Rows are true labels, columns decisions.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub votes: Vec<ImageVote>,
    /// Images that could not be assessed (too small to sample).
    pub skipped: Vec<String>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl EvalReport {
    pub fn patch_accuracy(&self) -> f64 {
        ratio(self.patch_correct, self.patch_total)
    }

    pub fn image_accuracy(&self) -> f64 {
        ratio(self.image_correct, self.image_total)
    }

    /// Image accuracy minus patch accuracy.
    pub fn boost(&self) -> f64 {
        self.image_accuracy() - self.patch_accuracy()
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images evaluated : {}", self.image_total);
        let _ = writeln!(s, "images skipped   : {}", self.skipped.len());
        let _ = writeln!(
            s,
            "patch accuracy   : {:.4} ({}/{})",
            self.patch_accuracy(),
            self.patch_correct,
            self.patch_total
        );
        let _ = writeln!(
            s,
            "image accuracy   : {:.4} ({}/{})",
            self.image_accuracy(),
            self.image_correct,
            self.image_total
        );
        let _ = writeln!(s, "voting boost     : {:+.4}", self.boost());
        let _ = writeln!(s, "confusion (rows = truth, cols = decision)");
        let _ = writeln!(s, "        NPI    CGG    DGI");
        for (l, row) in OriginLabel::ALL.iter().zip(&self.confusion) {
            let _ = writeln!(s, "{:<5}{:>6} {:>6} {:>6}", l.to_string(), row[0], row[1], row[2]);
        }
        s
    }

    /// `summary.csv`, `confusion.csv`, `votes.csv`, `report.json` and
    /// `summary.txt` in `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["metric", "correct", "total", "accuracy"])?;
        w.write_record([
            "patch".to_string(),
            self.patch_correct.to_string(),
            self.patch_total.to_string(),
            format!("{:.6}", self.patch_accuracy()),
        ])?;
        w.write_record([
            "image".to_string(),
            self.image_correct.to_string(),
            self.image_total.to_string(),
            format!("{:.6}", self.image_accuracy()),
        ])?;
        w.write_record([
            "boost".to_string(),
            String::new(),
            String::new(),
            format!("{:.6}", self.boost()),
        ])?;
        w.write_record([
            "skipped".to_string(),
            self.skipped.len().to_string(),
            String::new(),
            String::new(),
        ])?;
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = csv::Writer::from_path(dir.join("confusion.csv"))?;
        w.write_record(["truth", "npi", "cgg", "dgi"])?;
        for (l, row) in OriginLabel::ALL.iter().zip(&self.confusion) {
            w.write_record([
                l.name().to_string(),
                row[0].to_string(),
                row[1].to_string(),
                row[2].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = csv::Writer::from_path(dir.join("votes.csv"))?;
        w.write_record([
            "id",
            "label",
            "decision",
            "votes_npi",
            "votes_cgg",
            "votes_dgi",
            "conf_npi",
            "conf_cgg",
            "conf_dgi",
        ])?;
        for v in &self.votes {
            let t = &v.table;
            w.write_record([
                v.id.clone(),
                v.label.name().to_string(),
                t.decision.name().to_string(),
                t.counts[0].to_string(),
                t.counts[1].to_string(),
                t.counts[2].to_string(),
                format!("{:.6}", t.confidence_sums[0]),
                format!("{:.6}", t.confidence_sums[1]),
                format!("{:.6}", t.confidence_sums[2]),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("summary.txt");
        std::fs::write(&path, self.summary_text()).map_err(|e| Error::io(&path, e))
    }
}

/// Assess every image (after `transform`), vote, and tally both accuracy
/// levels. Images too small for the classifier are skipped and listed.
pub fn evaluate_with(
    classifier: &dyn ImageClassifier,
    images: &[TestImage],
    transform: &(dyn Fn(&ImageRGB8) -> Result<ImageRGB8> + Sync),
) -> Result<EvalReport> {
    let outcomes: Vec<Result<Option<(Vec<Prediction>, VoteTable)>>> = images
        .par_iter()
        .map(|item| {
            let img = transform(item.load()?.as_ref())?;
            match classifier.assess(&item.id, &img) {
                Ok(preds) => {
                    let table = majority_vote(&preds)?;
                    Ok(Some((preds, table)))
                }
                Err(Error::ImageTooSmall { width, height, min }) => {
                    log::warn!("skipping {}: {width}x{height} is smaller than {min}", item.id);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut report = EvalReport {
        patch_correct: 0,
        patch_total: 0,
        image_correct: 0,
        image_total: 0,
        confusion: [[0; NUM_CLASSES]; NUM_CLASSES],
        votes: Vec::with_capacity(images.len()),
        skipped: Vec::new(),
    };
    for (item, outcome) in images.iter().zip(outcomes) {
        match outcome? {
            None => report.skipped.push(item.id.clone()),
            Some((preds, table)) => {
                report.patch_total += preds.len();
                report.patch_correct += preds.iter().filter(|p| p.label == item.label).count();
                report.image_total += 1;
                report.image_correct += (table.decision == item.label) as usize;
                report.confusion[item.label.index()][table.decision.index()] += 1;
                report.votes.push(ImageVote {
                    id: item.id.clone(),
                    label: item.label,
                    table,
                });
            }
        }
    }
    Ok(report)
}

pub fn evaluate(classifier: &dyn ImageClassifier, images: &[TestImage]) -> Result<EvalReport> {
    evaluate_with(classifier, images, &|img| Ok(img.clone()))
}

/// Monte Carlo of a patch predictor that is right with probability
/// `accuracy` and otherwise picks one of the two wrong labels uniformly.
/// Returns `(patch accuracy, image accuracy)` over `images` images of `m`
/// patches each, with true labels cycling through the three classes.
pub fn simulate_voting(accuracy: f64, m: usize, images: usize, seed: u64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&accuracy) || m == 0 || images == 0 {
        return Err(Error::InvalidArgument(
            "simulation needs accuracy in [0, 1] and positive sizes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut patch_ok, mut image_ok) = (0usize, 0usize);
    for i in 0..images {
        let truth = i % NUM_CLASSES;
        let preds: Vec<Prediction> = (0..m)
            .map(|_| {
                let label = if rng.gen_bool(accuracy) {
                    truth
                } else {
                    (truth + 1 + rng.gen_range(0..NUM_CLASSES - 1)) % NUM_CLASSES
                };
                Prediction::certain(OriginLabel::ALL[label])
            })
            .collect();
        patch_ok += preds.iter().filter(|p| p.label.index() == truth).count();
        image_ok += (majority_vote(&preds)?.decision.index() == truth) as usize;
    }
    Ok((patch_ok as f64 / (m * images) as f64, image_ok as f64 / images as f64))
}
