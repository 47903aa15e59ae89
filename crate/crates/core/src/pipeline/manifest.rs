use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::OriginLabel;
use crate::rng::derive_seed;
use crate::vote::{ImageData, TestImage};

const IMAGE_EXTENSIONS: [&str; 2] = ["png", "ppm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the dataset root, `/`-separated; doubles as the image id.
    pub path: String,
    pub label: OriginLabel,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

/// Validation and test sizes per class (floored); the rest is training.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let test = n / 5;
    (n - val - test, val, test)
}

fn list_class(root: &Path, label: OriginLabel) -> Result<Vec<String>> {
    let dir = root.join(label.name());
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("missing class directory {}", dir.display())));
    }
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            let name = entry.file_name().to_string_lossy().into_owned();
            names.push(format!("{}/{name}", label.name()));
        }
    }
    if names.is_empty() {
        return Err(Error::EmptyDataset(format!("no PNG/PPM images in {}", dir.display())));
    }
    names.sort();
    Ok(names)
}

/// Stratified seeded 70/10/20 split of `root/{npi,cgg,dgi}`.
pub fn split_dataset(root: impl AsRef<Path>, seed: u64) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let mut entries = Vec::new();
    for label in OriginLabel::ALL {
        let names = list_class(root, label)?;
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            "split",
            &[label.index() as u64],
        )));
        let (_, val, test) = split_sizes(names.len());
        let mut splits = vec![Split::Train; names.len()];
        for (rank, &i) in order.iter().enumerate() {
            if rank < test {
                splits[i] = Split::Test;
            } else if rank < test + val {
                splits[i] = Split::Val;
            }
        }
        entries.extend(
            names
                .into_iter()
                .zip(splits)
                .map(|(path, split)| ManifestEntry { path, label, split }),
        );
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        seed,
        entries,
    })
}

impl DatasetManifest {
    pub fn count(&self, label: OriginLabel, split: Split) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label == label && e.split == split)
            .count()
    }

    pub fn images(&self, split: Split) -> Vec<TestImage> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| TestImage {
                id: e.path.clone(),
                label: e.label,
                data: ImageData::File(self.root.join(&e.path)),
            })
            .collect()
    }

    /// Columns: path, label, split, seed.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path", "label", "split", "seed"])?;
        for e in &self.entries {
            w.write_record([e.path.as_str(), e.label.name(), e.split.name(), &self.seed.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, root: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        let mut seed = None;
        let mut seen = HashSet::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| {
                rec.get(i)
                    .ok_or_else(|| Error::Dataset(format!("{}: short manifest row", path.display())))
            };
            let entry = ManifestEntry {
                path: field(0)?.to_string(),
                label: field(1)?.parse()?,
                split: field(2)?.parse()?,
            };
            let s: u64 = field(3)?
                .parse()
                .map_err(|_| Error::Dataset(format!("{}: bad seed column", path.display())))?;
            if *seed.get_or_insert(s) != s {
                return Err(Error::Dataset(format!("{}: mixed seeds", path.display())));
            }
            if !seen.insert(entry.path.clone()) {
                return Err(Error::Dataset(format!(
                    "{}: duplicate path {}",
                    path.display(),
                    entry.path
                )));
            }
            entries.push(entry);
        }
        Ok(DatasetManifest {
            root: root.as_ref().to_path_buf(),
            seed: seed.ok_or_else(|| Error::EmptyDataset(format!("{} has no entries", path.display())))?,
            entries,
        })
    }
}
