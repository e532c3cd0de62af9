//! Motion programs that define the synthetic action classes.
//!
//! Each class is a deterministic trajectory of one or two Gaussian blobs
//! parameterized by normalized clip time `tau` in `[0, 1]`. Classes come in
//! direction-confusable pairs (up/down, left/right, clockwise/counter-clockwise,
//! grow/shrink, ...) whose per-frame appearance distributions are identical,
//! so only frame order separates them.

use std::f64::consts::TAU;

use rand::Rng;

pub const MAX_CLASSES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motion {
    Up,
    Down,
    OscillateHorizontal,
    RotateClockwise,
    Flicker,
    Left,
    Right,
    RotateCounterClockwise,
    Grow,
    Shrink,
    Approach,
    Separate,
    OscillateVertical,
    DiagonalUpRight,
    DiagonalDownLeft,
    Zigzag,
    Bounce,
    BlinkFast,
    Pulse,
    Static,
}

impl Motion {
    pub const ALL: [Motion; MAX_CLASSES] = [
        Motion::Up,
        Motion::Down,
        Motion::OscillateHorizontal,
        Motion::RotateClockwise,
        Motion::Flicker,
        Motion::Left,
        Motion::Right,
        Motion::RotateCounterClockwise,
        Motion::Grow,
        Motion::Shrink,
        Motion::Approach,
        Motion::Separate,
        Motion::OscillateVertical,
        Motion::DiagonalUpRight,
        Motion::DiagonalDownLeft,
        Motion::Zigzag,
        Motion::Bounce,
        Motion::BlinkFast,
        Motion::Pulse,
        Motion::Static,
    ];

    pub fn from_label(label: usize) -> Option<Motion> {
        Self::ALL.get(label).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Motion::Up => "move up",
            Motion::Down => "move down",
            Motion::OscillateHorizontal => "oscillate horizontally",
            Motion::RotateClockwise => "rotate clockwise",
            Motion::Flicker => "static flicker",
            Motion::Left => "move left",
            Motion::Right => "move right",
            Motion::RotateCounterClockwise => "rotate counter-clockwise",
            Motion::Grow => "grow",
            Motion::Shrink => "shrink",
            Motion::Approach => "approach",
            Motion::Separate => "separate",
            Motion::OscillateVertical => "oscillate vertically",
            Motion::DiagonalUpRight => "diagonal up-right",
            Motion::DiagonalDownLeft => "diagonal down-left",
            Motion::Zigzag => "zigzag",
            Motion::Bounce => "bounce",
            Motion::BlinkFast => "blink fast",
            Motion::Pulse => "pulse",
            Motion::Static => "static",
        }
    }

    /// Whether a horizontal flip maps this class onto itself.
    pub fn flip_safe(self) -> bool {
        !matches!(
            self,
            Motion::Left
                | Motion::Right
                | Motion::RotateClockwise
                | Motion::RotateCounterClockwise
                | Motion::DiagonalUpRight
                | Motion::DiagonalDownLeft
        )
    }
}

/// A blob at one instant, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub y: f64,
    pub x: f64,
    pub radius: f64,
    pub intensity: f64,
}

/// Per-clip random draw shared by every frame of the clip.
#[derive(Clone, Copy, Debug)]
pub struct MotionParams {
    pub motion: Motion,
    /// Start of the travelled path along the motion axis, in `[0, 1]`.
    pub start: f64,
    /// Position on the axis orthogonal to the motion, in `[0, 1]`.
    pub cross: f64,
    pub phase: f64,
    pub radius: f64,
    pub intensity: f64,
}

impl MotionParams {
    pub fn sample<R: Rng>(motion: Motion, rng: &mut R) -> Self {
        MotionParams {
            motion,
            start: rng.random(),
            cross: rng.random(),
            phase: rng.random::<f64>() * TAU,
            radius: rng.random_range(2.5..3.5),
            intensity: rng.random_range(0.8..1.0),
        }
    }
}

/// Blobs visible at normalized time `tau` on a `size x size` frame.
pub fn blobs_at(p: &MotionParams, tau: f64, size: usize) -> Vec<Blob> {
    let s = size as f64;
    let margin = 0.2 * s;
    let span = s - 2.0 * margin;
    // Linear travel covers 60% of the usable span; the start offset is drawn
    // so the set of visited positions is the same for opposite directions.
    let travel = 0.6 * span;
    let lo = margin + p.start * (span - travel);
    let cross = margin + p.cross * span;
    let mid = s / 2.0;
    let blob = |y: f64, x: f64| Blob {
        y,
        x,
        radius: p.radius,
        intensity: p.intensity,
    };
    let forward = lo + travel * tau;
    let backward = lo + travel * (1.0 - tau);
    match p.motion {
        Motion::Up => vec![blob(backward, cross)],
        Motion::Down => vec![blob(forward, cross)],
        Motion::Left => vec![blob(cross, backward)],
        Motion::Right => vec![blob(cross, forward)],
        Motion::DiagonalUpRight => vec![blob(backward, forward)],
        Motion::DiagonalDownLeft => vec![blob(forward, backward)],
        Motion::OscillateHorizontal => {
            vec![blob(
                cross,
                mid + 0.3 * s * (TAU * 1.5 * tau + p.phase).sin(),
            )]
        }
        Motion::OscillateVertical => {
            vec![blob(
                mid + 0.3 * s * (TAU * 1.5 * tau + p.phase).sin(),
                cross,
            )]
        }
        Motion::RotateClockwise | Motion::RotateCounterClockwise => {
            let dir = if p.motion == Motion::RotateClockwise {
                1.0
            } else {
                -1.0
            };
            let angle = p.phase + dir * TAU * 0.75 * tau;
            let r = 0.25 * s;
            vec![blob(mid + r * angle.sin(), mid + r * angle.cos())]
        }
        Motion::Flicker => {
            let on = (TAU * 3.0 * tau + p.phase).sin() > 0.0;
            vec![Blob {
                intensity: if on { p.intensity } else { 0.3 * p.intensity },
                ..blob(lo + 0.5 * travel, cross)
            }]
        }
        Motion::BlinkFast => {
            let on = (TAU * 7.0 * tau + p.phase).sin() > 0.0;
            vec![Blob {
                intensity: if on { p.intensity } else { 0.0 },
                ..blob(lo + 0.5 * travel, cross)
            }]
        }
        Motion::Grow | Motion::Shrink => {
            let t = if p.motion == Motion::Grow {
                tau
            } else {
                1.0 - tau
            };
            vec![Blob {
                radius: 1.5 + 4.5 * t,
                ..blob(mid, cross)
            }]
        }
        Motion::Pulse => vec![Blob {
            radius: 3.5 + 2.0 * (TAU * 2.0 * tau + p.phase).sin(),
            ..blob(mid, cross)
        }],
        Motion::Approach | Motion::Separate => {
            let t = if p.motion == Motion::Separate {
                tau
            } else {
                1.0 - tau
            };
            let gap = 0.05 * s + 0.3 * s * t;
            vec![blob(cross, mid - gap), blob(cross, mid + gap)]
        }
        Motion::Zigzag => vec![blob(
            backward,
            mid + 0.2 * s * (TAU * 3.0 * tau + p.phase).sin(),
        )],
        Motion::Bounce => {
            let height = (TAU * tau + p.phase).sin().abs();
            vec![blob(margin + span * (1.0 - height), cross)]
        }
        Motion::Static => vec![blob(lo + 0.5 * travel, cross)],
    }
}

/// Noise-free intensity map in `[0, 1]`, row-major `size x size`.
pub fn render_signal(blobs: &[Blob], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for (i, v) in out.iter_mut().enumerate() {
        let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
        let mut acc: f64 = 0.0;
        for b in blobs {
            let d2 = (y - b.y).powi(2) + (x - b.x).powi(2);
            acc += b.intensity * (-d2 / (2.0 * (0.6 * b.radius).powi(2))).exp();
        }
        *v = acc.min(1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn up_and_down_visit_the_same_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let up = MotionParams::sample(Motion::Up, &mut rng);
        let down = MotionParams {
            motion: Motion::Down,
            ..up
        };
        let frames = 9;
        for f in 0..frames {
            let tau = f as f64 / (frames - 1) as f64;
            let a = blobs_at(&up, tau, 32);
            let b = blobs_at(&down, 1.0 - tau, 32);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn blobs_stay_inside_the_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in Motion::ALL {
            for _ in 0..20 {
                let p = MotionParams::sample(m, &mut rng);
                for f in 0..=10 {
                    for b in blobs_at(&p, f as f64 / 10.0, 32) {
                        assert!(
                            (0.0..32.0).contains(&b.y) && (0.0..32.0).contains(&b.x),
                            "{m:?} {b:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn signal_is_bounded() {
        let p = MotionParams {
            motion: Motion::Approach,
            start: 0.5,
            cross: 0.5,
            phase: 0.0,
            radius: 3.0,
            intensity: 1.0,
        };
        let s = render_signal(&blobs_at(&p, 0.0, 32), 32);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(s.iter().cloned().fold(0.0, f64::max) > 0.5);
    }
}
