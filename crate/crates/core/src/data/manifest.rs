//! JSON-lines clip manifests and stratified train/validation splitting.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Modality;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One clip in one modality.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub label: usize,
    pub modality: Modality,
    pub frames: usize,
    /// Path of the clip file, relative to the manifest's root directory.
    pub path: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    /// Directory that record paths are relative to.
    pub root: PathBuf,
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ClipRecord>) -> Self {
        Manifest {
            root: root.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clip_path(&self, record: &ClipRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    fn filtered(&self, keep: impl Fn(&ClipRecord) -> bool) -> Manifest {
        Manifest {
            root: self.root.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn modality(&self, modality: Modality) -> Manifest {
        self.filtered(|r| r.modality == modality)
    }

    pub fn split(&self, split: Split) -> Manifest {
        self.filtered(|r| r.split == split)
    }

    pub fn splits(&self, splits: &[Split]) -> Manifest {
        self.filtered(|r| splits.contains(&r.split))
    }

    /// Concatenation of two manifests sharing a root.
    pub fn union(&self, other: &Manifest) -> Manifest {
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Manifest {
            root: self.root.clone(),
            records,
        }
    }

    /// Ground-truth label per clip id.
    pub fn labels(&self) -> HashMap<String, usize> {
        self.records
            .iter()
            .map(|r| (r.id.clone(), r.label))
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; record paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            records.push(record);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { root, records })
    }
}

/// Stratified split of the clips in `manifest` into train and validation.
///
/// Splitting is done per clip id, so every modality of a clip lands on the
/// same side. Per class, `round(ratio * n)` ids go to train. Records keep
/// their order and get their split tag rewritten.
pub fn split(manifest: &Manifest, ratio: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(
            "split",
            format!("ratio {ratio} outside (0, 1)"),
        ));
    }
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for r in &manifest.records {
        match seen.get(r.id.as_str()) {
            Some(&label) if label != r.label => {
                return Err(Error::invalid(
                    "split",
                    format!("clip {} has labels {label} and {}", r.id, r.label),
                ));
            }
            Some(_) => {}
            None => {
                seen.insert(&r.id, r.label);
                by_class.entry(r.label).or_default().push(&r.id);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = std::collections::HashSet::new();
    for ids in by_class.values_mut() {
        ids.shuffle(&mut rng);
        let n_train = (ratio * ids.len() as f64).round() as usize;
        train_ids.extend(ids[..n_train].iter().copied());
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for r in &manifest.records {
        let mut r = r.clone();
        if train_ids.contains(r.id.as_str()) {
            r.split = Split::Train;
            train.push(r);
        } else {
            r.split = Split::Val;
            val.push(r);
        }
    }
    Ok((
        Manifest::new(manifest.root.clone(), train),
        Manifest::new(manifest.root.clone(), val),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(per_class: usize, classes: usize) -> Manifest {
        let records = (0..per_class * classes)
            .map(|i| ClipRecord {
                id: format!("clip{i:05}"),
                label: i % classes,
                modality: Modality::Ir,
                frames: 8,
                path: format!("ir/clip{i:05}.tsmv"),
                split: Split::Train,
            })
            .collect();
        Manifest::new("data", records)
    }

    #[test]
    fn eighty_twenty_per_class() {
        let m = pool(20, 5);
        let (train, val) = split(&m, 0.8, 1).unwrap();
        assert_eq!((train.len(), val.len()), (80, 20));
        for c in 0..5 {
            assert_eq!(train.records.iter().filter(|r| r.label == c).count(), 16);
            assert_eq!(val.records.iter().filter(|r| r.label == c).count(), 4);
        }
        let (train2, val2) = split(&m, 0.8, 1).unwrap();
        assert_eq!((train, val), (train2, val2));
    }

    #[test]
    fn partition_is_exact() {
        let m = pool(7, 3);
        let (train, val) = split(&m, 0.6, 9).unwrap();
        let mut ids: Vec<_> = train
            .records
            .iter()
            .chain(&val.records)
            .map(|r| r.id.clone())
            .collect();
        ids.sort();
        let mut want: Vec<_> = m.records.iter().map(|r| r.id.clone()).collect();
        want.sort();
        assert_eq!(ids, want);
    }

    #[test]
    fn modalities_split_together() {
        let mut m = pool(10, 2);
        let rgb: Vec<_> = m
            .records
            .iter()
            .map(|r| ClipRecord {
                modality: Modality::Rgb,
                ..r.clone()
            })
            .collect();
        m.records.extend(rgb);
        let (train, _) = split(&m, 0.5, 3).unwrap();
        let ir: Vec<_> = train
            .modality(Modality::Ir)
            .records
            .into_iter()
            .map(|r| r.id)
            .collect();
        let rgb: Vec<_> = train
            .modality(Modality::Rgb)
            .records
            .into_iter()
            .map(|r| r.id)
            .collect();
        assert_eq!(ir, rgb);
    }

    #[test]
    fn bad_ratio() {
        assert!(split(&pool(2, 2), 1.0, 0).is_err());
        assert!(split(&pool(2, 2), 0.0, 0).is_err());
    }

    #[test]
    fn jsonl_field_layout() {
        let m = pool(1, 2);
        let line = m.to_jsonl().unwrap();
        assert_eq!(
            line.lines().next().unwrap(),
            r#"{"id":"clip00000","label":0,"modality":"ir","frames":8,"path":"ir/clip00000.tsmv","split":"train"}"#
        );
    }
}
