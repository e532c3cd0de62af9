//! Raw clip files: `TSMV1`, little-endian `u32` extents `T, C, H, W`, then
//! `T*C*H*W` little-endian `f32` values in row-major `[T, C, H, W]` order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CLIP_MAGIC: &[u8; 5] = b"TSMV1";

#[derive(Clone, Debug, PartialEq)]
pub struct ClipData {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ClipData {
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        let n = self.frame_len();
        &self.values[index * n..(index + 1) * n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CLIP_MAGIC.len() + 16 + 4 * self.values.len());
        out.extend_from_slice(CLIP_MAGIC);
        for d in [self.frames, self.channels, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let header = CLIP_MAGIC.len() + 16;
        if bytes.len() < header || &bytes[..CLIP_MAGIC.len()] != CLIP_MAGIC {
            return Err(Error::format(path, "missing TSMV1 header"));
        }
        let dim = |i: usize| {
            let at = CLIP_MAGIC.len() + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
        };
        let (frames, channels, height, width) = (dim(0), dim(1), dim(2), dim(3));
        let count = frames * channels * height * width;
        if bytes.len() != header + 4 * count {
            return Err(Error::format(
                path,
                format!(
                    "header declares {count} values but payload has {} bytes",
                    bytes.len() - header
                ),
            ));
        }
        let values = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(ClipData {
            frames,
            channels,
            height,
            width,
            values,
        })
    }
}

pub fn write_clip(path: &Path, clip: &ClipData) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, clip.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_clip(path: &Path) -> Result<ClipData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ClipData::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let clip = ClipData {
            frames: 1,
            channels: 1,
            height: 1,
            width: 2,
            values: vec![0.5, 1.0],
        };
        let bytes = clip.to_bytes();
        let mut want = b"TSMV1".to_vec();
        for d in [1u32, 1, 1, 2] {
            want.extend_from_slice(&d.to_le_bytes());
        }
        want.extend_from_slice(&0.5f32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, want);
        assert_eq!(ClipData::from_bytes(&bytes, Path::new("x")).unwrap(), clip);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let clip = ClipData {
            frames: 2,
            channels: 1,
            height: 2,
            width: 2,
            values: vec![0.0; 8],
        };
        let bytes = clip.to_bytes();
        assert!(ClipData::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(ClipData::from_bytes(b"TSMV2", Path::new("x")).is_err());
    }
}
