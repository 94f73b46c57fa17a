//! Geographic block splitting: scenes inherit the split of their grid
//! cell, so near-duplicate fields never leak across folds.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub grid_shape: (usize, usize),
    /// Row-major cell assignments.
    pub cell_to_split: Vec<Split>,
    pub fractions: (f64, f64, f64),
    /// Geo bounds covered by the grid: (min_x, min_y, max_x, max_y).
    pub bounds: (f64, f64, f64, f64),
}

/// Randomly assign grid cells to train/val/test with largest-remainder
/// quotas, then derive scene splits from their locations.
pub fn assign_splits(
    locations: &[(f64, f64)],
    grid_shape: (usize, usize),
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    if locations.is_empty() {
        return Err(FieldkitError::InvalidArgument("no scene locations".to_string()));
    }
    let (rows, cols) = grid_shape;
    if rows == 0 || cols == 0 {
        return Err(FieldkitError::InvalidArgument("grid must be at least 1x1".to_string()));
    }
    let sum = fractions.0 + fractions.1 + fractions.2;
    if (sum - 1.0).abs() > 1e-9 || fractions.0 < 0.0 || fractions.1 < 0.0 || fractions.2 < 0.0 {
        return Err(FieldkitError::InvalidArgument(format!(
            "fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let min_x = locations.iter().map(|l| l.0).fold(f64::INFINITY, f64::min);
    let max_x = locations.iter().map(|l| l.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = locations.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
    let max_y = locations.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
    // Nudge the upper bounds so max-coordinate scenes land inside the grid.
    let w = (max_x - min_x).max(1e-9) * (1.0 + 1e-12);
    let h = (max_y - min_y).max(1e-9) * (1.0 + 1e-12);
    let bounds = (min_x, min_y, min_x + w, min_y + h);

    let n = rows * cols;
    let quota = largest_remainder(n, fractions);
    let mut cells: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);
    let mut cell_to_split = vec![Split::Train; n];
    for (i, &cell) in cells.iter().enumerate() {
        cell_to_split[cell] = if i < quota.0 {
            Split::Train
        } else if i < quota.0 + quota.1 {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(SplitAssignment { grid_shape, cell_to_split, fractions, bounds })
}

fn largest_remainder(n: usize, fractions: (f64, f64, f64)) -> (usize, usize, usize) {
    let raw = [fractions.0 * n as f64, fractions.1 * n as f64, fractions.2 * n as f64];
    let mut counts = [raw[0].floor() as usize, raw[1].floor() as usize, raw[2].floor() as usize];
    let mut rema: Vec<(usize, f64)> =
        raw.iter().enumerate().map(|(i, r)| (i, r - r.floor())).collect();
    rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut left = n - counts.iter().sum::<usize>();
    for (i, _) in rema {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    (counts[0], counts[1], counts[2])
}

impl SplitAssignment {
    pub fn cell_of(&self, loc: (f64, f64)) -> (usize, usize) {
        let (rows, cols) = self.grid_shape;
        let (min_x, min_y, max_x, max_y) = self.bounds;
        let fx = ((loc.0 - min_x) / (max_x - min_x)).clamp(0.0, 1.0 - 1e-15);
        let fy = ((loc.1 - min_y) / (max_y - min_y)).clamp(0.0, 1.0 - 1e-15);
        ((fy * rows as f64) as usize, (fx * cols as f64) as usize)
    }

    pub fn split_of(&self, loc: (f64, f64)) -> Split {
        let (r, c) = self.cell_of(loc);
        self.cell_to_split[r * self.grid_shape.1 + c]
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0usize, 0usize, 0usize);
        for s in &self.cell_to_split {
            match s {
                Split::Train => c.0 += 1,
                Split::Val => c.1 += 1,
                Split::Test => c.2 += 1,
            }
        }
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}
