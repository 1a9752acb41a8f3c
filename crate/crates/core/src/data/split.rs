use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, data_err};
use crate::Result;

/// Where a tile sits in its source raster, clipped to the source extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub source: usize,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Footprint {
    pub fn intersects(&self, other: &Footprint) -> bool {
        self.source == other.source
            && self.row < other.row + other.height
            && other.row < self.row + self.height
            && self.col < other.col + other.width
            && other.col < self.col + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    /// Tiles removed from training because they overlap a validation tile.
    pub dropped: Vec<usize>,
}

/// Picks `round(fraction * n)` (at least one) validation tiles uniformly
/// with a seeded generator, then drops every remaining tile that overlaps
/// one of them.
pub fn split_train_val(tiles: &[Footprint], fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(config_err!("validation fraction {fraction} outside (0, 1)"));
    }
    if tiles.is_empty() {
        return Err(data_err!("no tiles to split"));
    }
    let count = ((tiles.len() as f64 * fraction).round() as usize).clamp(1, tiles.len());
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = order[..count].to_vec();
    val.sort_unstable();
    let (mut train, mut dropped) = (Vec::new(), Vec::new());
    for i in 0..tiles.len() {
        if val.binary_search(&i).is_ok() {
            continue;
        }
        if val.iter().any(|&v| tiles[v].intersects(&tiles[i])) {
            dropped.push(i);
        } else {
            train.push(i);
        }
    }
    if train.is_empty() {
        return Err(data_err!(
            "every training tile overlaps the validation set ({} tiles, {count} for validation)",
            tiles.len()
        ));
    }
    Ok(Split {
        train,
        val,
        dropped,
    })
}
