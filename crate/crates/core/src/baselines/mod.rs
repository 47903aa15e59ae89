//! Handcrafted-feature baselines classified by linear discriminant analysis.
//!
//! The three feature constructions are reconstructions of matching arity:
//! a 7-bin per-channel intensity histogram, an 8-dimensional under/over
//! exposure descriptor and a 162-dimensional order-3 co-occurrence of
//! truncated first-order differences.

mod features;
mod lda;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use features::{
    cooccurrence_feature, histogram_feature, saturation_feature, FeatureKind, FeatureVector, COOCCURRENCE_DIM,
    HISTOGRAM_BINS, SATURATION_DIM,
};
pub use lda::{lda_predict, lda_train, LdaModel, DEFAULT_RIDGE};

use crate::error::{Error, Result};
use crate::imageops::ImageRGB8;
use crate::label::OriginLabel;
use crate::vote::{ImageClassifier, Prediction, TestImage};

/// Features of every image, in input order.
pub fn extract_all(kind: FeatureKind, images: &[TestImage]) -> Result<Vec<Vec<FeatureVector>>> {
    images
        .par_iter()
        .map(|item| kind.extract(item.load()?.as_ref()))
        .collect()
}

/// One row per image: id, label, then every value (channel-major for the
/// histogram).
pub fn write_features_csv(path: impl AsRef<Path>, images: &[TestImage], features: &[Vec<FeatureVector>]) -> Result<()> {
    let path = path.as_ref();
    if images.len() != features.len() {
        return Err(Error::shape("write_features_csv", "rows", images.len(), features.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let width = features
        .first()
        .map(|f| f.iter().map(|v| v.dim()).sum::<usize>())
        .unwrap_or(0);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..width).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (item, fs) in images.iter().zip(features) {
        let mut row = vec![item.id.clone(), item.label.name().to_string()];
        row.extend(fs.iter().flat_map(|f| f.values.iter().map(|v| format!("{v:.9}"))));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A trained baseline: one model per histogram channel, a single model for
/// the other kinds. Its unit predictions are per channel (histogram) or per
/// image, so unit accuracy is the mean channel accuracy for the histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub kind: FeatureKind,
    pub models: Vec<LdaModel>,
}

impl Baseline {
    pub fn train(kind: FeatureKind, images: &[TestImage], ridge: f64) -> Result<Self> {
        let feats = extract_all(kind, images)?;
        Self::fit(kind, &feats, &images.iter().map(|i| i.label).collect::<Vec<_>>(), ridge)
    }

    pub fn fit(kind: FeatureKind, features: &[Vec<FeatureVector>], labels: &[OriginLabel], ridge: f64) -> Result<Self> {
        let per_image = match kind {
            FeatureKind::Histogram => 3,
            _ => 1,
        };
        let mut models = Vec::with_capacity(per_image);
        for u in 0..per_image {
            let xs: Vec<Vec<f64>> = features
                .iter()
                .map(|f| {
                    f.get(u)
                        .map(|v| v.values.clone())
                        .ok_or_else(|| Error::shape("baseline features", "units", per_image, f.len()))
                })
                .collect::<Result<_>>()?;
            models.push(lda_train(&xs, labels, ridge)?);
        }
        Ok(Baseline { kind, models })
    }

    pub fn predict_features(&self, features: &[FeatureVector]) -> Result<Vec<Prediction>> {
        if features.len() != self.models.len() {
            return Err(Error::shape(
                "baseline predict",
                "units",
                self.models.len(),
                features.len(),
            ));
        }
        self.models
            .iter()
            .zip(features)
            .map(|(m, f)| m.predict(&f.values))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let b: Baseline = serde_json::from_str(&text)?;
        let expected = if b.kind == FeatureKind::Histogram { 3 } else { 1 };
        if b.models.len() != expected || b.models.iter().any(|m| m.dim != b.kind.dim()) {
            return Err(Error::MalformedWeights(format!(
                "{} does not hold a {} baseline",
                path.display(),
                b.kind
            )));
        }
        Ok(b)
    }
}

impl ImageClassifier for Baseline {
    fn assess(&self, _id: &str, image: &ImageRGB8) -> Result<Vec<Prediction>> {
        self.predict_features(&self.kind.extract(image)?)
    }
}
