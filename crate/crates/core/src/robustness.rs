//! Accuracy under post-processing: JPEG, rescaling, geometric transforms and
//! contrast stretching, each re-run through the full sample/predict/vote path.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::Variant;
use crate::error::{Error, Result};
use crate::imageops::{bicubic_resize, contrast_stretch, jpeg_compress, ImageRGB8};
use crate::vote::{evaluate_with, EvalReport, ImageClassifier, TestImage};

pub const JPEG_QUALITIES: [u8; 5] = [90, 70, 50, 30, 10];
pub const SCALE_FACTORS: [f64; 9] = [0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7];
pub const GEOMETRIC_VARIANTS: [Variant; 5] = [
    Variant::Rot90,
    Variant::Rot180,
    Variant::Rot270,
    Variant::HFlip,
    Variant::VFlip,
];
pub const CONTRAST_ALPHAS: [f64; 5] = [0.05, 0.10, 0.15, 0.20, 0.25];
pub const ORIGINAL: &str = "Original";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Jpeg,
    Scaling,
    Geometric,
    Contrast,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Jpeg, Family::Scaling, Family::Geometric, Family::Contrast];

    pub fn name(self) -> &'static str {
        match self {
            Family::Jpeg => "jpeg",
            Family::Scaling => "scaling",
            Family::Geometric => "geometric",
            Family::Contrast => "contrast",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown family {s:?} (expected jpeg, scaling, geometric or contrast)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Perturbation {
    Jpeg(u8),
    Scale(f64),
    Geometric(Variant),
    Contrast(f64),
}

impl Perturbation {
    pub fn family(&self) -> Family {
        match self {
            Perturbation::Jpeg(_) => Family::Jpeg,
            Perturbation::Scale(_) => Family::Scaling,
            Perturbation::Geometric(_) => Family::Geometric,
            Perturbation::Contrast(_) => Family::Contrast,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Perturbation::Jpeg(q) => q.to_string(),
            Perturbation::Scale(s) => format!("{s:.2}"),
            Perturbation::Geometric(v) => v.name().to_string(),
            Perturbation::Contrast(a) => format!("{a:.2}"),
        }
    }

    fn sort_key(&self) -> f64 {
        match self {
            Perturbation::Jpeg(q) => *q as f64,
            Perturbation::Scale(s) => *s,
            Perturbation::Geometric(v) => Variant::ALL.iter().position(|x| x == v).unwrap_or(0) as f64,
            Perturbation::Contrast(a) => *a,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Perturbation::Jpeg(q) => (1..=100).contains(&q),
            Perturbation::Scale(s) => (0.1..=10.0).contains(&s),
            Perturbation::Geometric(_) => true,
            Perturbation::Contrast(a) => (0.0..1.0).contains(&a),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{} parameter {} is out of range",
                self.family(),
                self.label()
            )))
        }
    }

    pub fn apply(&self, img: &ImageRGB8) -> Result<ImageRGB8> {
        match *self {
            Perturbation::Jpeg(q) => jpeg_compress(img, q),
            Perturbation::Scale(s) => bicubic_resize(img, s),
            Perturbation::Geometric(v) => Ok(v.apply(img)),
            Perturbation::Contrast(a) => contrast_stretch(img, a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub family: Family,
    pub grid: Vec<Perturbation>,
}

impl PerturbationSpec {
    pub fn default_for(family: Family) -> Self {
        let grid = match family {
            Family::Jpeg => JPEG_QUALITIES.iter().map(|&q| Perturbation::Jpeg(q)).collect(),
            Family::Scaling => SCALE_FACTORS.iter().map(|&s| Perturbation::Scale(s)).collect(),
            Family::Geometric => GEOMETRIC_VARIANTS.iter().map(|&v| Perturbation::Geometric(v)).collect(),
            Family::Contrast => CONTRAST_ALPHAS.iter().map(|&a| Perturbation::Contrast(a)).collect(),
        };
        PerturbationSpec { family, grid }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument(format!("{} grid is empty", self.family)));
        }
        for p in &self.grid {
            if p.family() != self.family {
                return Err(Error::InvalidArgument(format!(
                    "{} parameter {} in the {} grid",
                    p.family(),
                    p.label(),
                    self.family
                )));
            }
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub parameter: String,
    pub image_accuracy: f64,
    pub patch_accuracy: f64,
    pub image_correct: usize,
    pub image_total: usize,
    pub patch_correct: usize,
    pub patch_total: usize,
    pub skipped: usize,
}

impl CurvePoint {
    fn from_report(parameter: String, r: &EvalReport) -> Self {
        CurvePoint {
            parameter,
            image_accuracy: r.image_accuracy(),
            patch_accuracy: r.patch_accuracy(),
            image_correct: r.image_correct,
            image_total: r.image_total,
            patch_correct: r.patch_correct,
            patch_total: r.patch_total,
            skipped: r.skipped.len(),
        }
    }
}

/// "Original" first, then grid points in ascending parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub family: Family,
    pub points: Vec<CurvePoint>,
}

impl RobustnessCurve {
    pub fn original(&self) -> &CurvePoint {
        &self.points[0]
    }

    pub fn point(&self, parameter: &str) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.parameter == parameter)
    }
}

/// Evaluate `classifier` on the untouched images and at every grid point.
/// Source images are only read.
pub fn run_robustness(
    classifier: &dyn ImageClassifier,
    images: &[TestImage],
    spec: &PerturbationSpec,
) -> Result<RobustnessCurve> {
    spec.validate()?;
    let original = evaluate_with(classifier, images, &|img| Ok(img.clone()))?;
    run_robustness_from(classifier, images, spec, &original)
}

/// As [`run_robustness`], reusing an already computed unperturbed report.
pub fn run_robustness_from(
    classifier: &dyn ImageClassifier,
    images: &[TestImage],
    spec: &PerturbationSpec,
    original: &EvalReport,
) -> Result<RobustnessCurve> {
    spec.validate()?;
    let mut grid = spec.grid.clone();
    grid.sort_by(|a, b| a.sort_key().total_cmp(&b.sort_key()));
    let mut points = vec![CurvePoint::from_report(ORIGINAL.to_string(), original)];
    for p in &grid {
        log::info!("robustness: {} {}", spec.family, p.label());
        let report = evaluate_with(classifier, images, &|img| p.apply(img))?;
        points.push(CurvePoint::from_report(p.label(), &report));
    }
    Ok(RobustnessCurve {
        family: spec.family,
        points,
    })
}

/// One `robustness_<family>.csv` plus a JSON mirror per curve.
pub fn emit_curves(curves: &[RobustnessCurve], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("no robustness curves to write".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::new();
    for c in curves {
        let path = out_dir.join(format!("robustness_{}.csv", c.family));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "family",
            "parameter",
            "image_acc",
            "patch_acc",
            "image_correct",
            "image_total",
            "patch_correct",
            "patch_total",
            "skipped",
        ])?;
        for p in &c.points {
            w.write_record([
                c.family.name().to_string(),
                p.parameter.clone(),
                format!("{:.6}", p.image_accuracy),
                format!("{:.6}", p.patch_accuracy),
                p.image_correct.to_string(),
                p.image_total.to_string(),
                p.patch_correct.to_string(),
                p.patch_total.to_string(),
                p.skipped.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);

        let path = out_dir.join(format!("robustness_{}.json", c.family));
        let json = serde_json::to_string_pretty(c)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
