//! Deterministic synthetic multi-modal clips.
//!
//! Every clip is rendered from a class motion program in two modalities: a
//! dark, low-contrast, noisy three-channel `rgb` stream and a bright,
//! high-contrast, clean one-channel `ir` stream. Both share the clip's motion
//! draw, frame count and label.

pub mod clipfile;
pub mod manifest;
pub mod motion;
pub mod sampling;

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use clipfile::{read_clip, write_clip, ClipData};
pub use manifest::{split, ClipRecord, Manifest, Split};
pub use motion::{Motion, MAX_CLASSES};
pub use sampling::{sample_segments, SampleMode};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use motion::{blobs_at, render_signal, MotionParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Ir,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Ir => 1,
        }
    }

    pub fn from_channels(channels: usize) -> Option<Modality> {
        match channels {
            3 => Some(Modality::Rgb),
            1 => Some(Modality::Ir),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Ir => "ir",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "ir" => Ok(Modality::Ir),
            other => Err(Error::invalid(
                "modality",
                format!("unknown modality `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub num_classes: usize,
    /// Clips per class in the train/validation pool.
    pub clips_per_class: usize,
    /// Clips per class in the held-out test set.
    pub test_clips_per_class: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub resolution: usize,
    pub sigma_rgb: f64,
    pub sigma_ir: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_classes: 5,
            clips_per_class: 50,
            test_clips_per_class: 10,
            min_frames: 8,
            max_frames: 24,
            resolution: 32,
            sigma_rgb: 0.10,
            sigma_ir: 0.03,
            seed: 0,
        }
    }
}

/// Intensity mapping of the noise-free signal for one modality.
#[derive(Clone, Copy, Debug)]
struct Appearance {
    background: [f64; 3],
    gain: [f64; 3],
}

impl Appearance {
    fn of(modality: Modality) -> Self {
        match modality {
            Modality::Rgb => Appearance {
                background: [0.05, 0.04, 0.06],
                gain: [0.12, 0.10, 0.07],
            },
            Modality::Ir => Appearance {
                background: [0.08, 0.0, 0.0],
                gain: [0.85, 0.0, 0.0],
            },
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("dataset spec", msg));
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return bad(format!(
                "num_classes {} outside [2, {MAX_CLASSES}]",
                self.num_classes
            ));
        }
        if self.clips_per_class == 0 {
            return bad("clips_per_class must be positive".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!(
                "frame range [{}, {}]",
                self.min_frames, self.max_frames
            ));
        }
        if self.resolution < 8 {
            return bad(format!("resolution {} below 8", self.resolution));
        }
        if !(self.sigma_ir >= 0.0 && self.sigma_ir < self.sigma_rgb) {
            return bad(format!(
                "need 0 <= sigma_ir < sigma_rgb, got {} and {}",
                self.sigma_ir, self.sigma_rgb
            ));
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.num_classes * self.clips_per_class
    }

    pub fn total_clips(&self) -> usize {
        self.num_classes * (self.clips_per_class + self.test_clips_per_class)
    }

    pub fn sigma(&self, modality: Modality) -> f64 {
        match modality {
            Modality::Rgb => self.sigma_rgb,
            Modality::Ir => self.sigma_ir,
        }
    }

    /// Label of clip `index`; classes cycle within the pool and the test set.
    pub fn label(&self, index: usize) -> usize {
        let pool = self.pool_size();
        if index < pool {
            index % self.num_classes
        } else {
            (index - pool) % self.num_classes
        }
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index < self.pool_size() {
            Split::Train
        } else {
            Split::Test
        }
    }

    pub fn clip_id(index: usize) -> String {
        format!("clip{index:05}")
    }
}

/// One rendered clip with its noise-free component kept alongside.
#[derive(Clone, Debug)]
pub struct RenderedClip {
    pub label: usize,
    /// Noise-free modality response, `[T, C, H, W]`.
    pub signal: ClipData,
    /// What the sensor records: signal plus noise, clamped to `[0, 1]`.
    pub observed: ClipData,
}

/// Renders clip `index` of `spec` in one modality.
pub fn render_clip(spec: &DatasetSpec, index: usize, modality: Modality) -> Result<RenderedClip> {
    let label = spec.label(index);
    let motion = Motion::from_label(label).ok_or_else(|| {
        Error::invalid(
            "render_clip",
            format!("no motion program for label {label}"),
        )
    })?;
    let mut draw = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[index as u64, 0]));
    let frames = draw.random_range(spec.min_frames..=spec.max_frames);
    let params = MotionParams::sample(motion, &mut draw);
    let stream = match modality {
        Modality::Rgb => 1,
        Modality::Ir => 2,
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[index as u64, stream]));
    let noise = Normal::new(0.0, spec.sigma(modality)).expect("finite sigma");
    let look = Appearance::of(modality);
    let size = spec.resolution;
    let channels = modality.channels();
    let mut signal = Vec::with_capacity(frames * channels * size * size);
    let mut observed = Vec::with_capacity(signal.capacity());
    for f in 0..frames {
        let tau = if frames > 1 {
            f as f64 / (frames - 1) as f64
        } else {
            0.0
        };
        let base = render_signal(&blobs_at(&params, tau, size), size);
        for c in 0..channels {
            for &s in &base {
                let clean = look.background[c] + look.gain[c] * s;
                signal.push(clean as f32);
                observed.push((clean + noise.sample(&mut noise_rng)).clamp(0.0, 1.0) as f32);
            }
        }
    }
    let clip = |values| ClipData {
        frames,
        channels,
        height: size,
        width: size,
        values,
    };
    Ok(RenderedClip {
        label,
        signal: clip(signal),
        observed: clip(observed),
    })
}

/// Writes every clip of `spec` in both modalities under `out_dir` and returns
/// the manifest (pool clips tagged `train`, held-out clips tagged `test`).
pub fn generate(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let mut records = Vec::with_capacity(2 * spec.total_clips());
    for index in 0..spec.total_clips() {
        let id = DatasetSpec::clip_id(index);
        for modality in [Modality::Rgb, Modality::Ir] {
            let clip = render_clip(spec, index, modality)?;
            let rel = format!("{modality}/{id}.tsmv");
            write_clip(&out_dir.join(&rel), &clip.observed)?;
            records.push(ClipRecord {
                id: id.clone(),
                label: clip.label,
                modality,
                frames: clip.observed.frames,
                path: rel,
                split: spec.split_of(index),
            });
        }
    }
    Ok(Manifest::new(out_dir, records))
}

/// A clip loaded into memory for training or prediction.
#[derive(Clone, Debug)]
pub struct LoadedClip {
    pub id: String,
    pub label: usize,
    pub data: ClipData,
}

/// Loads every clip of `manifest`, checking the recorded frame counts.
pub fn load_clips(manifest: &Manifest) -> Result<Vec<LoadedClip>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let path = manifest.clip_path(r);
            let data = read_clip(&path)?;
            if data.frames != r.frames || data.channels != r.modality.channels() {
                return Err(Error::format(
                    &path,
                    format!(
                        "manifest says {} frames of {}, file holds {} frames x {} channels",
                        r.frames, r.modality, data.frames, data.channels
                    ),
                ));
            }
            Ok(LoadedClip {
                id: r.id.clone(),
                label: r.label,
                data,
            })
        })
        .collect()
}
