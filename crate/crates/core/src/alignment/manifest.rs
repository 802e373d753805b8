use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// One dialogue grid on disk. `grid_path` is resolved relative to the
/// manifest's directory when it is not absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub grid_path: String,
    pub duration_s: f64,
    pub split: String,
}

impl ManifestRecord {
    pub fn resolve(&self, manifest_path: &Path) -> PathBuf {
        let p = Path::new(&self.grid_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| Error::Invalid(format!("opening manifest {}: {e}", path.display())))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| Error::Invalid(format!("creating manifest {}: {e}", path.display())))?;
    for r in records {
        writer
            .serialize(r)
            .map_err(|e| Error::Invalid(format!("writing manifest: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: u32,
    pub valid: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 94,
            valid: 3,
            test: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then `floor(valid share · n)` items to valid,
/// `floor(test share · n)` to test and the remainder to train.
pub fn split_manifest<T: Clone>(items: &[T], ratios: SplitRatios, seed: u64) -> Result<Split<T>> {
    if items.is_empty() {
        return Err(Error::Invalid("cannot split an empty manifest".into()));
    }
    if ratios.train == 0 || ratios.valid == 0 || ratios.test == 0 {
        return Err(Error::Invalid("split ratios must be positive".into()));
    }
    let total = (ratios.train + ratios.valid + ratios.test) as usize;
    let n = items.len();
    let n_valid = n * ratios.valid as usize / total;
    let n_test = n * ratios.test as usize / total;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| items[i].clone()).collect();
    Ok(Split {
        valid: pick(0..n_valid),
        test: pick(n_valid..n_valid + n_test),
        train: pick(n_valid + n_test..n),
    })
}
