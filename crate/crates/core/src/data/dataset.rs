//! In-memory training datasets and their on-disk manifests.
//!
//! A [`TileRecord`] holds one scene's model input (already composed for the
//! chosen temporal mode) plus its full-resolution label stack. Crop windows
//! are re-drawn every epoch from the record, so the model sees fresh crops
//! rather than a frozen tiling; windows that supervise nothing are retried
//! a few times before falling back.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{s, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};
use crate::geom::LabelStack;

use super::augment::{apply_d4_to_labels, apply_d4_to_stack, D4};
use super::split::Split;

/// One scene ready for sampling.
#[derive(Debug, Clone)]
pub struct TileRecord {
    pub scene_id: String,
    /// Model input, (channels, H, W) in [0, 1].
    pub image: Array3<f32>,
    pub labels: LabelStack,
}

impl TileRecord {
    pub fn new(scene_id: &str, image: Array3<f32>, labels: LabelStack) -> Result<Self> {
        let (_, h, w) = image.dim();
        if labels.extent.dim() != (h, w) {
            return Err(FieldkitError::ShapeMismatch(format!(
                "image {h}x{w} vs labels {:?}",
                labels.extent.dim()
            )));
        }
        Ok(Self { scene_id: scene_id.to_string(), image, labels })
    }

    /// Deterministically draw a training tile: a random `tile`-sized crop
    /// (retrying unsupervisable windows) plus an optional square symmetry.
    pub fn draw_tile(&self, tile: usize, augment: bool, seed: u64) -> (Array3<f32>, LabelStack) {
        let (_, h, w) = self.image.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut image, mut labels) = if h == tile && w == tile {
            (self.image.clone(), self.labels.clone())
        } else {
            let mut pick = None;
            for _ in 0..8 {
                let r0 = rng.gen_range(0..=h.saturating_sub(tile));
                let c0 = rng.gen_range(0..=w.saturating_sub(tile));
                let window = self.crop(r0, c0, tile);
                if window.1.is_supervisable() {
                    pick = Some(window);
                    break;
                }
                if pick.is_none() {
                    pick = Some(window);
                }
            }
            pick.expect("at least one window drawn")
        };
        if augment {
            let op = D4::draw(rng.gen());
            image = apply_d4_to_stack(&image, op);
            labels = apply_d4_to_labels(&labels, op);
        }
        (image, labels)
    }

    fn crop(&self, r0: usize, c0: usize, tile: usize) -> (Array3<f32>, LabelStack) {
        let image = self.image.slice(s![.., r0..r0 + tile, c0..c0 + tile]).to_owned();
        let labels = LabelStack {
            extent: self.labels.extent.slice(s![r0..r0 + tile, c0..c0 + tile]).to_owned(),
            boundary: self.labels.boundary.slice(s![r0..r0 + tile, c0..c0 + tile]).to_owned(),
            distance: self.labels.distance.slice(s![r0..r0 + tile, c0..c0 + tile]).to_owned(),
            mask: self.labels.mask.slice(s![r0..r0 + tile, c0..c0 + tile]).to_owned(),
        };
        (image, labels)
    }
}

/// A train/val pair with an identifier that lands in checkpoint
/// provenance.
#[derive(Debug, Clone)]
pub struct TrainDataset {
    pub id: String,
    pub train: Vec<TileRecord>,
    pub val: Vec<TileRecord>,
}

impl TrainDataset {
    pub fn in_channels(&self) -> usize {
        self.train.first().or(self.val.first()).map(|r| r.image.dim().0).unwrap_or(0)
    }
}

/// Manifest row: one sample with relative file paths, serialized as JSON
/// lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scene_id: String,
    /// (row, col, height, width).
    pub crop_window: (usize, usize, usize, usize),
    pub imagery_ref: String,
    pub labelstack_ref: String,
    pub split: Split,
    /// Season indices composing the input.
    pub months: Vec<usize>,
}

impl SampleRecord {
    pub fn write_manifest(records: &[SampleRecord], path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
        let file = fs::File::open(path)?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(records)
    }
}
