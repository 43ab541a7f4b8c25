use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scene classes in label order.
pub const SCENES: [&str; 10] = [
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
];

pub fn scene_index(name: &str) -> Option<usize> {
    SCENES.iter().position(|s| *s == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    /// Path relative to the manifest directory; doubles as the clip id.
    pub clip_path: String,
    pub scene: String,
    pub device: String,
    pub split: Split,
}

impl ClipRecord {
    pub fn label(&self) -> usize {
        scene_index(&self.scene).expect("validated on construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    root: PathBuf,
    records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ClipRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.clip_path.as_str()) {
                return Err(Error::Config(format!("duplicate clip path {}", r.clip_path)));
            }
            if scene_index(&r.scene).is_none() {
                return Err(Error::Config(format!("unknown scene {:?} for {}", r.scene, r.clip_path)));
            }
            if r.device.is_empty() {
                return Err(Error::Config(format!("empty device id for {}", r.clip_path)));
            }
        }
        if !records.iter().any(|r| r.split == Split::Val) {
            return Err(Error::Config("manifest has no validation clips".into()));
        }
        Ok(Manifest {
            root: root.into(),
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let records = rdr.deserialize().collect::<std::result::Result<Vec<ClipRecord>, _>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(root, records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ClipRecord] {
        &self.records
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn resolve(&self, r: &ClipRecord) -> PathBuf {
        self.root.join(&r.clip_path)
    }

    pub fn train_devices(&self) -> BTreeSet<&str> {
        self.split(Split::Train).map(|r| r.device.as_str()).collect()
    }

    /// Validation devices that never occur in the training split.
    pub fn unseen_devices(&self) -> BTreeSet<&str> {
        let train = self.train_devices();
        self.split(Split::Val)
            .map(|r| r.device.as_str())
            .filter(|d| !train.contains(d))
            .collect()
    }

    /// A copy restricted to records accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&ClipRecord) -> bool) -> Result<Self> {
        Self::new(self.root.clone(), self.records.iter().filter(|r| keep(r)).cloned().collect())
    }
}
