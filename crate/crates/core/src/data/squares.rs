//! Synthetic "number of squares" images.
//!
//! Each image holds `n` (uniform in 0..=9) filled white axis-aligned squares
//! on black, with sides drawn uniformly from a small range. Placement is by
//! rejection sampling and squares keep at least `gap` blank pixels between
//! them, so the number of 8-connected white components is exactly `n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Sample, TypeTag, PIXELS};
use crate::error::{Error, Result};

const SIDE: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SquaresConfig {
    pub min_side: usize,
    pub max_side: usize,
    /// Minimum blank pixels between two squares along some axis.
    pub gap: usize,
    /// Rejected placements tolerated per image before starting over.
    pub max_rejections: usize,
}

impl Default for SquaresConfig {
    fn default() -> Self {
        Self {
            min_side: 3,
            max_side: 7,
            gap: 1,
            max_rejections: 1000,
        }
    }
}

#[derive(Clone, Copy)]
struct Rect {
    x: usize,
    y: usize,
    side: usize,
}

impl Rect {
    fn clear_of(&self, other: &Rect, gap: usize) -> bool {
        self.x + self.side + gap <= other.x
            || other.x + other.side + gap <= self.x
            || self.y + self.side + gap <= other.y
            || other.y + other.side + gap <= self.y
    }
}

/// Tries to render `n` squares. Returns `None` once `max_rejections`
/// placements have been rejected.
pub fn render_squares<R: Rng>(n: usize, config: &SquaresConfig, rng: &mut R) -> Option<Box<[u8; PIXELS]>> {
    let mut placed: Vec<Rect> = Vec::with_capacity(n);
    let mut rejections = 0;
    while placed.len() < n {
        let side = rng.random_range(config.min_side..=config.max_side);
        let rect = Rect {
            x: rng.random_range(0..=SIDE - side),
            y: rng.random_range(0..=SIDE - side),
            side,
        };
        if placed.iter().all(|p| p.clear_of(&rect, config.gap)) {
            placed.push(rect);
        } else {
            rejections += 1;
            if rejections >= config.max_rejections {
                return None;
            }
        }
    }
    let mut px = Box::new([0u8; PIXELS]);
    for r in &placed {
        for y in r.y..r.y + r.side {
            px[y * SIDE + r.x..y * SIDE + r.x + r.side].fill(255);
        }
    }
    Some(px)
}

/// Generates `count` squares samples, deterministically for a given seed.
pub fn gen_squares(count: usize, seed: u64, config: &SquaresConfig) -> Result<Vec<Sample>> {
    if config.min_side == 0 || config.min_side > config.max_side || config.max_side > SIDE {
        return Err(Error::Config(format!(
            "square sides {}..={} invalid for a {SIDE}x{SIDE} field",
            config.min_side, config.max_side
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n: u8 = rng.random_range(0..=9);
        let px = loop {
            if let Some(px) = render_squares(n as usize, config, &mut rng) {
                break px;
            }
        };
        out.push(Sample::new(px, n, TypeTag::Squares)?);
    }
    Ok(out)
}
