//! Temporal shift: moves a fraction of the channels one step along time.
//!
//! Activations are laid out `[N*T, C, H, W]` with the `T` frames of each clip
//! contiguous. With `f = C / fold_div`, channels `[0, f)` take their value from
//! the next frame, channels `[f, 2f)` from the previous frame and the rest are
//! left alone. Out-of-range frames read as zero. No arithmetic is performed on
//! the values; every output element is a copy of an input element or zero.

mod block;

use serde::{Deserialize, Serialize};

pub use block::{shifted_residual_block, BlockCache, ResidualBlock};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const DEFAULT_SEGMENTS: usize = 8;
pub const DEFAULT_FOLD_DIV: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub num_segments: usize,
    pub fold_div: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            num_segments: DEFAULT_SEGMENTS,
            fold_div: DEFAULT_FOLD_DIV,
        }
    }
}

impl ShiftConfig {
    pub fn new(num_segments: usize, fold_div: usize) -> Self {
        ShiftConfig {
            num_segments,
            fold_div,
        }
    }

    /// Number of channels moved in each direction for a `channels`-wide layer.
    pub fn fold(&self, channels: usize) -> usize {
        channels / self.fold_div
    }

    /// Checks the configuration against a layer of `channels` channels.
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.num_segments == 0 {
            return Err(Error::invalid(
                "temporal_shift",
                "num_segments must be at least 1",
            ));
        }
        if self.fold_div < 2 {
            return Err(Error::invalid(
                "temporal_shift",
                format!("fold_div {} must be at least 2", self.fold_div),
            ));
        }
        if 2 * self.fold(channels) > channels {
            return Err(Error::invalid(
                "temporal_shift",
                format!(
                    "fold_div {} shifts more than {channels} channels",
                    self.fold_div
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Adjoint,
}

fn shift<F: Float>(x: &Tensor<F>, cfg: &ShiftConfig, dir: Direction) -> Result<Tensor<F>> {
    let (nt, c, h, w) = x.dims4("temporal_shift")?;
    cfg.validate(c)?;
    let t = cfg.num_segments;
    if nt % t != 0 {
        return Err(Error::invalid(
            "temporal_shift",
            format!(
                "leading extent {nt} of {:?} is not divisible by {t} segments",
                x.shape()
            ),
        ));
    }
    let fold = cfg.fold(c);
    let plane = h * w;
    let frame = c * plane;
    let src = x.data();
    let mut out = Tensor::zeros(x.shape());
    let dst = out.data_mut();
    // Frame offset read by the first and second shifted groups.
    let (first, second): (isize, isize) = match dir {
        Direction::Forward => (1, -1),
        Direction::Adjoint => (-1, 1),
    };
    for clip in 0..nt / t {
        for step in 0..t {
            let base = (clip * t + step) * frame;
            let read = |offset: isize| {
                let s = step as isize + offset;
                (0..t as isize)
                    .contains(&s)
                    .then(|| (clip * t + s as usize) * frame)
            };
            if let Some(from) = read(first) {
                dst[base..base + fold * plane].copy_from_slice(&src[from..from + fold * plane]);
            }
            if let Some(from) = read(second) {
                let r = fold * plane..2 * fold * plane;
                dst[base + r.start..base + r.end]
                    .copy_from_slice(&src[from + r.start..from + r.end]);
            }
            let r = 2 * fold * plane..frame;
            dst[base + r.start..base + r.end].copy_from_slice(&src[base + r.start..base + r.end]);
        }
    }
    Ok(out)
}

/// Bidirectional zero-padded shift of `[N*T, C, H, W]` activations.
pub fn temporal_shift<F: Float>(x: &Tensor<F>, cfg: &ShiftConfig) -> Result<Tensor<F>> {
    shift(x, cfg, Direction::Forward)
}

/// Adjoint of [`temporal_shift`]: the same shift with both directions swapped.
pub fn temporal_shift_backward<F: Float>(grad: &Tensor<F>, cfg: &ShiftConfig) -> Result<Tensor<F>> {
    shift(grad, cfg, Direction::Adjoint)
}
