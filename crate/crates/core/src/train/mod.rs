//! Two-phase training.
//!
//! Phase one trains on the train split and scores the validation split after
//! every epoch. Phase two starts again from a fresh initialization and trains
//! on train and validation together for a longer schedule, with no
//! validation. Every random choice (shuffling, segment sampling,
//! augmentation, dropout) is drawn from streams derived from the run seed and
//! the epoch and batch indices, so a run is a pure function of its inputs.

mod checkpoint;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::data::{
    load_clips, sample_segments, LoadedClip, Manifest, Modality, Motion, SampleMode,
};
use crate::ensemble::{topk_accuracy, PredictionRow, PredictionSet};
use crate::error::{Error, Result};
use crate::model::{build_model, Mode, Model, ModelConfig, VideoBatch};
use crate::ops::{self, SgdHyper};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub seed: u64,
    /// Horizontal flips (for flip-symmetric classes) and brightness jitter.
    pub augment: bool,
    /// Fill the `seconds` column of the log with wall-clock time. Off by
    /// default so that logs are reproducible byte for byte.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sgd = SgdHyper::default();
        TrainConfig {
            lr: sgd.lr,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            batch_size: 8,
            epochs_phase1: 100,
            epochs_phase2: 200,
            seed: 0,
            augment: true,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("train config", msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "learning rate {} must be a nonnegative number",
                self.lr
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs_phase1 == 0 || self.epochs_phase2 == 0 {
            return bad("epoch counts must be positive".into());
        }
        Ok(())
    }

    /// Step decay: x0.1 at 50% and again at 75% of `epochs`.
    pub fn lr_at(&self, epoch: usize, epochs: usize) -> f64 {
        let drops = [epochs / 2, epochs * 3 / 4]
            .iter()
            .filter(|&&m| m > 0 && epoch >= m)
            .count();
        self.lr * 0.1f64.powi(drops as i32)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("train config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: Option<f64>,
    pub val_top5: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,val_top1,val_top5,seconds\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.6},{},{},{:.3}",
                r.epoch,
                r.train_loss,
                opt(r.val_top1),
                opt(r.val_top5),
                r.seconds
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Checks that every clip of `manifest` matches the model's input channels.
pub fn check_modality(manifest: &Manifest, cfg: &ModelConfig) -> Result<()> {
    for r in &manifest.records {
        if r.modality.channels() != cfg.in_channels {
            let expected = Modality::from_channels(cfg.in_channels).map_or_else(
                || format!("{} channels", cfg.in_channels),
                |m| m.to_string(),
            );
            return Err(Error::ModalityMismatch {
                expected,
                actual: r.modality.to_string(),
            });
        }
    }
    Ok(())
}

/// Stacks `T` sampled frames of each clip into a `[N*T, C, H, W]` batch.
///
/// In training mode each clip draws its own segment offsets and, when
/// `augment` is set, a horizontal flip (flip-symmetric classes only) and a
/// brightness factor in `[0.85, 1.15]`.
pub fn assemble_batch(
    clips: &[&LoadedClip],
    segments: usize,
    mode: SampleMode,
    seed: u64,
    augment: bool,
) -> Result<VideoBatch<f32>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::invalid("assemble_batch", "empty batch"))?;
    let (c, h, w) = (first.data.channels, first.data.height, first.data.width);
    let frame_len = c * h * w;
    let mut values = Vec::with_capacity(clips.len() * segments * frame_len);
    for (i, clip) in clips.iter().enumerate() {
        if (clip.data.channels, clip.data.height, clip.data.width) != (c, h, w) {
            return Err(Error::invalid(
                "assemble_batch",
                format!(
                    "clip {} has a different frame shape than clip {}",
                    clip.id, first.id
                ),
            ));
        }
        let clip_seed = derive_seed(seed, &[i as u64]);
        let indices = sample_segments(clip.data.frames, segments, mode, clip_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(clip_seed, &[1]));
        let jitter = augment && mode == SampleMode::Train;
        let flip = jitter
            && Motion::from_label(clip.label).is_some_and(Motion::flip_safe)
            && rng.random_bool(0.5);
        let gain = if jitter {
            rng.random_range(0.85f32..1.15)
        } else {
            1.0
        };
        for &f in &indices {
            let frame = clip.data.frame(f);
            if flip {
                for row in frame.chunks(w) {
                    values.extend(row.iter().rev().map(|&v| (v * gain).clamp(0.0, 1.0)));
                }
            } else if gain != 1.0 {
                values.extend(frame.iter().map(|&v| (v * gain).clamp(0.0, 1.0)));
            } else {
                values.extend_from_slice(frame);
            }
        }
    }
    Ok(VideoBatch {
        frames: Tensor::from_vec(&[clips.len() * segments, c, h, w], values)?,
        labels: clips.iter().map(|c| c.label).collect(),
        ids: clips.iter().map(|c| c.id.clone()).collect(),
    })
}

/// Eval-mode class probabilities for every clip, in clip order.
///
/// Clips are processed in consecutive groups of `batch_size`; normalization
/// statistics come from each group.
pub fn predict_clips(
    model: &Model<f32>,
    clips: &[LoadedClip],
    batch_size: usize,
) -> Result<PredictionSet> {
    if batch_size == 0 {
        return Err(Error::invalid("predict", "batch_size must be positive"));
    }
    let mut rows = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(batch_size) {
        let refs: Vec<&LoadedClip> = chunk.iter().collect();
        let batch = assemble_batch(
            &refs,
            model.config().num_segments,
            SampleMode::Eval,
            0,
            false,
        )?;
        let logits = model.forward(&batch.frames, Mode::Eval)?.cast::<f64>();
        let probs = ops::softmax(&logits)?;
        for (id, p) in batch
            .ids
            .into_iter()
            .zip(probs.data().chunks(model.config().num_classes))
        {
            rows.push(PredictionRow {
                id,
                probs: p.to_vec(),
            });
        }
    }
    PredictionSet::new(rows)
}

/// Optional knobs of a training run.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Start from these parameters instead of a fresh initialization.
    pub init_from: Option<&'a Checkpoint>,
    /// Called after every completed epoch.
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

struct RunOutput {
    checkpoint: Checkpoint,
    log: TrainLog,
}

fn run(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    epochs: usize,
    train: &[LoadedClip],
    val: Option<&[LoadedClip]>,
    opts: TrainOptions<'_>,
) -> Result<RunOutput> {
    train_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("train", "no training clips"));
    }
    let mut model = build_model::<f32>(model_cfg, derive_seed(train_cfg.seed, &[0]))?;
    if let Some(init) = opts.init_from {
        if init.model_config != *model_cfg {
            return Err(Error::invalid(
                "train",
                "initial checkpoint was built with a different model config",
            ));
        }
        model.params_mut().load(init.params.clone())?;
    }
    let mut on_epoch = opts.on_epoch;
    let mut velocity = model.params().zeros_like();
    let mut log = TrainLog::default();
    let val_labels = val.map(|v| v.iter().map(|c| (c.id.clone(), c.label)).collect());
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..epochs {
        let started = Instant::now();
        let epoch_seed = derive_seed(train_cfg.seed, &[1, epoch as u64]);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let hyper = SgdHyper {
            lr: train_cfg.lr_at(epoch, epochs),
            momentum: train_cfg.momentum,
            weight_decay: train_cfg.weight_decay,
        };
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(train_cfg.batch_size).enumerate() {
            let clips: Vec<&LoadedClip> = idx.iter().map(|&i| &train[i]).collect();
            let batch_seed = derive_seed(epoch_seed, &[b as u64]);
            let batch = assemble_batch(
                &clips,
                model_cfg.num_segments,
                SampleMode::Train,
                batch_seed,
                train_cfg.augment,
            )?;
            let mode = Mode::Train {
                dropout_seed: derive_seed(batch_seed, &[u64::MAX]),
            };
            let (loss, _, grads) = model.loss_and_grads(&batch, mode)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("training loss at epoch {epoch}, batch {b}"),
                });
            }
            loss_sum += loss as f64 * clips.len() as f64;
            ops::sgd_step(
                model.params_mut().tensors_mut(),
                grads.tensors(),
                &mut velocity,
                &hyper,
            )
            .map_err(|e| match e {
                Error::NonFinite { what } => Error::NonFinite {
                    what: format!("{what} at epoch {epoch}, batch {b}"),
                },
                other => other,
            })?;
        }
        let (val_top1, val_top5) = match (val, &val_labels) {
            (Some(v), Some(labels)) if !v.is_empty() => {
                let preds = predict_clips(&model, v, train_cfg.batch_size)?;
                (
                    Some(topk_accuracy(&preds, labels, 1)?),
                    Some(topk_accuracy(&preds, labels, 5)?),
                )
            }
            _ => (None, None),
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            val_top1,
            val_top5,
            seconds: if train_cfg.log_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        if let Some(cb) = on_epoch.as_mut() {
            cb(&record);
        }
        log.records.push(record);
    }
    let checkpoint = Checkpoint::from_model(
        &model,
        velocity,
        train_cfg.digest(),
        epochs,
        RngState {
            seed: train_cfg.seed,
            next_epoch: epochs,
        },
    );
    Ok(RunOutput { checkpoint, log })
}

/// Trains for `epochs_phase1` epochs on `train`, scoring `val` each epoch.
pub fn train_phase1(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &Manifest,
    val: &Manifest,
    opts: TrainOptions<'_>,
) -> Result<(Checkpoint, TrainLog)> {
    check_modality(train, model_cfg)?;
    check_modality(val, model_cfg)?;
    let train_ids = train.labels();
    if let Some(r) = val.records.iter().find(|r| train_ids.contains_key(&r.id)) {
        return Err(Error::invalid(
            "train_phase1",
            format!(
                "clip {} is in both the train and validation manifests",
                r.id
            ),
        ));
    }
    let train_clips = load_clips(train)?;
    let val_clips = load_clips(val)?;
    let out = run(
        model_cfg,
        train_cfg,
        train_cfg.epochs_phase1,
        &train_clips,
        Some(&val_clips),
        opts,
    )?;
    Ok((out.checkpoint, out.log))
}

/// Retrains from scratch on the whole of `full` for `epochs_phase2` epochs.
pub fn train_phase2(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    full: &Manifest,
    opts: TrainOptions<'_>,
) -> Result<(Checkpoint, TrainLog)> {
    check_modality(full, model_cfg)?;
    let clips = load_clips(full)?;
    let out = run(
        model_cfg,
        train_cfg,
        train_cfg.epochs_phase2,
        &clips,
        None,
        opts,
    )?;
    Ok((out.checkpoint, out.log))
}

/// Eval-mode predictions of a checkpoint on every clip of `manifest`.
pub fn predict(
    checkpoint: &Checkpoint,
    manifest: &Manifest,
    batch_size: usize,
) -> Result<PredictionSet> {
    check_modality(manifest, &checkpoint.model_config)?;
    let model = checkpoint.model()?;
    let clips = load_clips(manifest)?;
    predict_clips(&model, &clips, batch_size)
}
