use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::OriginLabel;
use crate::tensor::NUM_CLASSES;
use crate::vote::Prediction;

pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Gaussian linear discriminant with a ridge-regularised pooled covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub dim: usize,
    pub ridge: f64,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim x dim`, ridge included.
    pub covariance: Vec<f64>,
    pub priors: Vec<f64>,
    coefficients: Vec<Vec<f64>>,
    intercepts: Vec<f64>,
}

pub fn lda_train(features: &[Vec<f64>], labels: &[OriginLabel], ridge: f64) -> Result<LdaModel> {
    if features.is_empty() {
        return Err(Error::EmptyDataset("discriminant training set".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::shape("lda_train", "labels", features.len(), labels.len()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be finite and non-negative, got {ridge}"
        )));
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::InvalidArgument("zero-length feature vectors".into()));
    }
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::shape("lda_train", "feature", dim, bad.len()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature value".into()));
    }

    let mut counts = [0usize; NUM_CLASSES];
    let mut sums = vec![DVector::<f64>::zeros(dim); NUM_CLASSES];
    for (f, l) in features.iter().zip(labels) {
        counts[l.index()] += 1;
        sums[l.index()] += DVector::from_column_slice(f);
    }
    for (l, &n) in OriginLabel::ALL.iter().zip(&counts) {
        if n < 2 {
            return Err(Error::Dataset(format!(
                "class {l} has {n} training samples; at least 2 are needed"
            )));
        }
    }
    let means: Vec<DVector<f64>> = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();

    let mut scatter = DMatrix::<f64>::zeros(dim, dim);
    for (f, l) in features.iter().zip(labels) {
        let d = DVector::from_column_slice(f) - &means[l.index()];
        scatter.ger(1.0, &d, &d, 1.0);
    }
    let n = features.len();
    let mut cov = scatter / (n - NUM_CLASSES) as f64;
    // exact symmetry before factorising
    cov = (&cov + cov.transpose()) * 0.5;
    for i in 0..dim {
        cov[(i, i)] += ridge;
    }
    let chol = cov.clone().cholesky().ok_or_else(|| {
        Error::InvalidArgument("pooled covariance is not positive definite; increase the ridge".into())
    })?;

    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut coefficients = Vec::with_capacity(NUM_CLASSES);
    let mut intercepts = Vec::with_capacity(NUM_CLASSES);
    for (mu, prior) in means.iter().zip(&priors) {
        let a = chol.solve(mu);
        intercepts.push(-0.5 * mu.dot(&a) + prior.ln());
        coefficients.push(a.as_slice().to_vec());
    }
    Ok(LdaModel {
        dim,
        ridge,
        means: means.iter().map(|m| m.as_slice().to_vec()).collect(),
        covariance: cov.transpose().as_slice().to_vec(),
        priors,
        coefficients,
        intercepts,
    })
}

impl LdaModel {
    /// Linear discriminant score of every class.
    pub fn scores(&self, feature: &[f64]) -> Result<[f64; NUM_CLASSES]> {
        if feature.len() != self.dim {
            return Err(Error::shape("lda_predict", "feature", self.dim, feature.len()));
        }
        let mut s = [0.0; NUM_CLASSES];
        for (k, out) in s.iter_mut().enumerate() {
            *out = self.intercepts[k]
                + self.coefficients[k]
                    .iter()
                    .zip(feature)
                    .map(|(a, x)| a * x)
                    .sum::<f64>();
        }
        Ok(s)
    }

    /// Argmax of the scores (lowest index on ties), with class posteriors
    /// as confidences.
    pub fn predict(&self, feature: &[f64]) -> Result<Prediction> {
        let s = self.scores(feature)?;
        let label = OriginLabel::ALL[crate::network::argmax(&s)];
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(Prediction {
            label,
            confidences: [e[0] / z, e[1] / z, e[2] / z],
        })
    }
}

pub fn lda_predict(model: &LdaModel, feature: &[f64]) -> Result<OriginLabel> {
    Ok(model.predict(feature)?.label)
}
