//! End-to-end run: data generation, per-member two-phase training, weight
//! search on validation, ensembling and reporting.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.json                      resolved RunConfig
//! data/manifest.jsonl              every clip, both modalities
//! data/{train,val,test}.jsonl      split manifests
//! members/<name>/phase1.ckpt       phase-1 checkpoint
//! members/<name>/phase1_log.csv
//! members/<name>/val_preds.jsonl   phase-1 predictions on val
//! members/<name>/phase2.ckpt       only when phase 2 is enabled
//! members/<name>/phase2_log.csv
//! members/<name>/test_preds.jsonl  final model on test
//! ensemble.json                    searched weights over test predictions
//! ensemble_{val,test}.jsonl
//! report_{val,test}.{txt,csv}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, DatasetSpec, Manifest, Modality, Split};
use crate::ensemble::{
    self, EnsembleMember, EnsembleSpec, MetricReport, PredictionSet, WeightSearch,
};
use crate::error::{Error, Result};
use crate::model::{Capacity, ModelConfig};
use crate::train::{self, EpochRecord, TrainConfig, TrainLog, TrainOptions};
use crate::tsm::{DEFAULT_FOLD_DIV, DEFAULT_SEGMENTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberConfig {
    pub name: String,
    pub modality: Modality,
    pub capacity: Capacity,
    pub shift: bool,
}

/// Settings shared by every member's model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDefaults {
    pub num_segments: usize,
    pub fold_div: usize,
    pub dropout_rate: f64,
}

impl Default for ModelDefaults {
    fn default() -> Self {
        ModelDefaults {
            num_segments: DEFAULT_SEGMENTS,
            fold_div: DEFAULT_FOLD_DIV,
            dropout_rate: 0.5,
        }
    }
}

/// Everything that determines a run. `seed` overrides the seeds inside
/// `data` and `train`; the resolved config written next to the outputs shows
/// the values actually used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DatasetSpec,
    pub model: ModelDefaults,
    pub train: TrainConfig,
    pub members: Vec<MemberConfig>,
    pub train_ratio: f64,
    /// Retrain on train + val before predicting test. Without it, test
    /// predictions come from the phase-1 checkpoints.
    pub phase2: bool,
    pub ensemble_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let member = |name: &str, modality, capacity| MemberConfig {
            name: name.into(),
            modality,
            capacity,
            shift: true,
        };
        RunConfig {
            seed: 0,
            data: DatasetSpec::default(),
            model: ModelDefaults::default(),
            train: TrainConfig::default(),
            members: vec![
                member("ir-large", Modality::Ir, Capacity::Large),
                member("ir-small", Modality::Ir, Capacity::Small),
                member("rgb-small", Modality::Rgb, Capacity::Small),
            ],
            train_ratio: 0.8,
            phase2: true,
            ensemble_step: ensemble::DEFAULT_GRID_STEP,
        }
    }
}

impl RunConfig {
    /// Copies the master seed into the nested configs.
    pub fn resolved(&self) -> RunConfig {
        let mut out = self.clone();
        out.data.seed = self.seed;
        out.train.seed = self.seed;
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("run config", msg));
        self.data.validate()?;
        self.train.validate()?;
        if self.members.is_empty() || self.members.len() > 4 {
            return bad(format!("needs 1 to 4 members, got {}", self.members.len()));
        }
        for (i, m) in self.members.iter().enumerate() {
            if m.name.is_empty() || m.name.contains(['/', '\\']) || m.name.starts_with('.') {
                return bad(format!(
                    "member name {:?} is not a plain directory name",
                    m.name
                ));
            }
            if self.members[..i].iter().any(|o| o.name == m.name) {
                return bad(format!("member name {:?} is used twice", m.name));
            }
            self.model_config(m).validate()?;
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad(format!("train_ratio {} outside (0, 1)", self.train_ratio));
        }
        Ok(())
    }

    pub fn model_config(&self, member: &MemberConfig) -> ModelConfig {
        ModelConfig {
            num_classes: self.data.num_classes,
            in_channels: member.modality.channels(),
            num_segments: self.model.num_segments,
            capacity: member.capacity.clone(),
            dropout_rate: self.model.dropout_rate,
            shift_enabled: member.shift,
            fold_div: self.model.fold_div,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Generated data and its splits.
#[derive(Clone, Debug)]
pub struct Splits {
    pub all: Manifest,
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

/// Generates the dataset under `dir` and writes the split manifests.
pub fn prepare_data(cfg: &RunConfig, dir: &Path) -> Result<Splits> {
    let all = data::generate(&cfg.data, dir)?;
    all.save(&dir.join("manifest.jsonl"))?;
    let pool = all.split(Split::Train);
    let (train, val) = data::split(&pool, cfg.train_ratio, cfg.seed)?;
    let test = all.split(Split::Test);
    train.save(&dir.join("train.jsonl"))?;
    val.save(&dir.join("val.jsonl"))?;
    test.save(&dir.join("test.jsonl"))?;
    Ok(Splits {
        all,
        train,
        val,
        test,
    })
}

#[derive(Clone, Debug)]
pub struct MemberResult {
    pub config: MemberConfig,
    pub phase1_log: TrainLog,
    pub val: PredictionSet,
    pub test: PredictionSet,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub members: Vec<MemberResult>,
    /// Weights searched on validation; `[1.0]` for a single member.
    pub weights: WeightSearch,
    pub val_report: MetricReport,
    pub test_report: MetricReport,
}

/// Progress messages emitted while a run executes.
pub enum Progress<'a> {
    Stage(String),
    Epoch {
        member: &'a str,
        phase: u8,
        record: &'a EpochRecord,
    },
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_member(
    cfg: &RunConfig,
    member: &MemberConfig,
    splits: &Splits,
    dir: &Path,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<MemberResult> {
    let model_cfg = cfg.model_config(member);
    let train = splits.train.modality(member.modality);
    let val = splits.val.modality(member.modality);
    let test = splits.test.modality(member.modality);
    let batch = cfg.train.batch_size;

    progress(Progress::Stage(format!("{}: phase 1", member.name)));
    let mut on_epoch = |r: &EpochRecord| {
        progress(Progress::Epoch {
            member: &member.name,
            phase: 1,
            record: r,
        })
    };
    let opts = TrainOptions {
        init_from: None,
        on_epoch: Some(&mut on_epoch),
    };
    let (ckpt, log) = train::train_phase1(&model_cfg, &cfg.train, &train, &val, opts)?;
    ckpt.save(&dir.join("phase1.ckpt"))?;
    log.save(&dir.join("phase1_log.csv"))?;
    let val_preds = train::predict(&ckpt, &val, batch)?;
    val_preds.save(&dir.join("val_preds.jsonl"))?;

    let final_ckpt = if cfg.phase2 {
        progress(Progress::Stage(format!("{}: phase 2", member.name)));
        let mut on_epoch = |r: &EpochRecord| {
            progress(Progress::Epoch {
                member: &member.name,
                phase: 2,
                record: r,
            })
        };
        let opts = TrainOptions {
            init_from: None,
            on_epoch: Some(&mut on_epoch),
        };
        let (ckpt2, log2) = train::train_phase2(&model_cfg, &cfg.train, &train.union(&val), opts)?;
        ckpt2.save(&dir.join("phase2.ckpt"))?;
        log2.save(&dir.join("phase2_log.csv"))?;
        ckpt2
    } else {
        ckpt
    };
    let test_preds = train::predict(&final_ckpt, &test, batch)?;
    test_preds.save(&dir.join("test_preds.jsonl"))?;
    Ok(MemberResult {
        config: member.clone(),
        phase1_log: log,
        val: val_preds,
        test: test_preds,
    })
}

/// Executes a whole run into `out_dir`.
pub fn run(
    cfg: &RunConfig,
    out_dir: &Path,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<RunSummary> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    mkdir(out_dir)?;
    cfg.save(&out_dir.join("config.json"))?;

    progress(Progress::Stage("generating data".into()));
    let data_dir = out_dir.join("data");
    mkdir(&data_dir)?;
    let splits = prepare_data(&cfg, &data_dir)?;

    let mut members = Vec::with_capacity(cfg.members.len());
    for m in &cfg.members {
        let dir = out_dir.join("members").join(&m.name);
        mkdir(&dir)?;
        members.push(train_member(&cfg, m, &splits, &dir, progress)?);
    }

    progress(Progress::Stage("ensembling".into()));
    let val_labels = splits.val.labels();
    let test_labels = splits.test.labels();
    let val_sets: Vec<&PredictionSet> = members.iter().map(|m| &m.val).collect();
    let weights = if members.len() == 1 {
        WeightSearch {
            weights: vec![1.0],
            top1: ensemble::topk_accuracy(val_sets[0], &val_labels, 1)?,
            top5: ensemble::topk_accuracy(val_sets[0], &val_labels, 5)?,
        }
    } else {
        ensemble::search_weights(&val_sets, &val_labels, cfg.ensemble_step)?
    };
    let spec = EnsembleSpec {
        members: members
            .iter()
            .zip(&weights.weights)
            .map(|(m, &weight)| EnsembleMember {
                path: member_file(&m.config.name, "test_preds.jsonl"),
                weight,
            })
            .collect(),
    };
    spec.save(&out_dir.join("ensemble.json"))?;
    let fuse = |sets: Vec<&PredictionSet>| {
        let pairs: Vec<_> = sets
            .into_iter()
            .zip(weights.weights.iter().copied())
            .collect();
        ensemble::ensemble(&pairs)
    };
    let ens_val = fuse(val_sets)?;
    let ens_test = fuse(members.iter().map(|m| &m.test).collect())?;
    ens_val.save(&out_dir.join("ensemble_val.jsonl"))?;
    ens_test.save(&out_dir.join("ensemble_test.jsonl"))?;

    let rows = |pick: fn(&MemberResult) -> &PredictionSet, ens| {
        let mut rows: Vec<(String, &PredictionSet)> = members
            .iter()
            .map(|m| (m.config.name.clone(), pick(m)))
            .collect();
        rows.push(("ensemble".into(), ens));
        rows
    };
    let val_report = ensemble::report(&rows(|m| &m.val, &ens_val), &val_labels)?;
    let test_report = ensemble::report(&rows(|m| &m.test, &ens_test), &test_labels)?;
    for (name, r) in [("val", &val_report), ("test", &test_report)] {
        write_text(
            &out_dir.join(format!("report_{name}.txt")),
            &r.render_text(),
        )?;
        write_text(&out_dir.join(format!("report_{name}.csv")), &r.render_csv())?;
    }
    Ok(RunSummary {
        members,
        weights,
        val_report,
        test_report,
    })
}

fn member_file(name: &str, file: &str) -> String {
    PathBuf::from("members")
        .join(name)
        .join(file)
        .to_string_lossy()
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_carries_master_seed() {
        let cfg = RunConfig {
            seed: 9,
            ..RunConfig::default()
        };
        let r = cfg.resolved();
        assert_eq!((r.data.seed, r.train.seed), (9, 9));
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.members, cfg.members);
    }

    #[test]
    fn rejects_bad_members() {
        let mut cfg = RunConfig::default();
        cfg.members[1].name = cfg.members[0].name.clone();
        assert!(cfg.validate().is_err());
        cfg.members[1].name = "../x".into();
        assert!(cfg.validate().is_err());
        cfg.members.clear();
        assert!(cfg.validate().is_err());
    }
}
