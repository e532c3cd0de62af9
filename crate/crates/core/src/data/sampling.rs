//! Segment-based frame sampling.
//!
//! A clip of `F` frames is cut into `T` equal segments and one frame is taken
//! from each: a uniformly random one while training, the segment center
//! `floor((i + 0.5) * F / T)` otherwise. Short clips (`F < T`) repeat frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Train,
    Eval,
}

fn center(i: usize, frames: usize, segments: usize) -> usize {
    (2 * i + 1) * frames / (2 * segments)
}

pub fn sample_segments(
    frames: usize,
    segments: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<Vec<usize>> {
    if frames == 0 || segments == 0 {
        return Err(Error::invalid(
            "sample_segments",
            format!("need at least one frame and one segment, got F={frames}, T={segments}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..segments)
        .map(|i| match mode {
            SampleMode::Eval => center(i, frames, segments),
            SampleMode::Train => {
                let lo = i * frames / segments;
                let hi = (i + 1) * frames / segments;
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    center(i, frames, segments)
                }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eval_examples() {
        assert_eq!(
            sample_segments(8, 8, SampleMode::Eval, 0).unwrap(),
            (0..8).collect::<Vec<_>>()
        );
        assert_eq!(
            sample_segments(16, 8, SampleMode::Eval, 0).unwrap(),
            vec![1, 3, 5, 7, 9, 11, 13, 15]
        );
        assert_eq!(
            sample_segments(4, 8, SampleMode::Eval, 0).unwrap(),
            vec![0, 0, 1, 1, 2, 2, 3, 3]
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert!(sample_segments(0, 8, SampleMode::Eval, 0).is_err());
        assert!(sample_segments(8, 0, SampleMode::Train, 0).is_err());
        assert_eq!(
            sample_segments(1, 3, SampleMode::Train, 4).unwrap(),
            vec![0, 0, 0]
        );
    }

    proptest! {
        #[test]
        fn indices_sorted_and_in_range(frames in 1usize..64, segments in 1usize..16, seed: u64, train: bool) {
            let mode = if train { SampleMode::Train } else { SampleMode::Eval };
            let idx = sample_segments(frames, segments, mode, seed).unwrap();
            prop_assert_eq!(idx.len(), segments);
            prop_assert!(idx.iter().all(|&i| i < frames));
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            if !train {
                prop_assert_eq!(idx, sample_segments(frames, segments, mode, seed ^ 1).unwrap());
            }
        }
    }
}
