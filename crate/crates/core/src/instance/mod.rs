//! Field instances from extent/boundary probability maps.
//!
//! The extraction contract, shared by the fast path and the reference
//! implementation in [`crate::reference::watershed_oracle`]:
//!
//! 1. Height surface: `mix * boundary + (1 - mix) * (1 - extent)`.
//! 2. Markers: 4-connected components of `{surface < marker_threshold}`,
//!    numbered in scan order.
//! 3. Priority flood from the markers. Queue entries pop by
//!    `(height, plateau step, row-major index, label id)`; the first pop
//!    labels a pixel. The plateau step count splits equal-height ridges
//!    evenly between basins instead of raster-order sweeps, and the label
//!    tie-break keeps the order a pure function of the data.
//! 4. Hierarchical merging: adjacent regions merge while the chosen
//!    criterion (dynamics: pass height minus the shallower region's
//!    minimum; area: smaller region's pixel count) stays below
//!    `persistence`, lowest criterion value first, ties by region ids.
//! 5. Pixels with `extent < extent_cutoff` become background, remaining
//!    labels are split into 4-connected components.
//! 6. Components smaller than `min_instance_px` merge into the instance
//!    neighbor across their lowest shared-boundary height (background if
//!    none), smallest first.
//! 7. Ids are re-compacted to 1..n in scan order, which makes the output
//!    canonical: two runs on the same inputs are identical arrays.

mod cropmask;
mod tune;
mod watershed;

pub use cropmask::apply_cropland_mask;
pub use tune::{default_grid, tune_params, TuneOutcome, TuneTile};
pub use watershed::watershed_segment;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};

/// Which attribute drives hierarchy merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchyCriterion {
    Dynamics,
    Area,
}

/// Tunable knobs of the instance extractor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WatershedParams {
    /// Blend weight of the boundary map in the height surface, in [0, 1].
    pub surface_mix: f64,
    /// Marker threshold in (0, 1): basins seed where the surface is lower.
    pub marker_threshold: f64,
    pub hierarchy_criterion: HierarchyCriterion,
    /// Merge threshold: surface-height units for dynamics, pixels for area.
    pub persistence: f64,
    /// Instances below this pixel count are merged away.
    pub min_instance_px: usize,
    /// Pixels with extent probability below this become background.
    pub extent_cutoff: f64,
}

impl Default for WatershedParams {
    fn default() -> Self {
        Self {
            surface_mix: 0.5,
            marker_threshold: 0.3,
            hierarchy_criterion: HierarchyCriterion::Dynamics,
            persistence: 0.05,
            min_instance_px: 4,
            extent_cutoff: 0.5,
        }
    }
}

impl WatershedParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.surface_mix) {
            return Err(FieldkitError::InvalidArgument(format!(
                "surface_mix {} outside [0,1]",
                self.surface_mix
            )));
        }
        for (name, v) in [("marker_threshold", self.marker_threshold), ("extent_cutoff", self.extent_cutoff)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(FieldkitError::InvalidArgument(format!("{name} {v} outside (0,1)")));
            }
        }
        if self.persistence < 0.0 {
            return Err(FieldkitError::InvalidArgument(format!(
                "persistence {} negative",
                self.persistence
            )));
        }
        Ok(())
    }
}

/// Per-pixel field-instance assignment; 0 is background and positive ids
/// are contiguous from 1, each forming one 4-connected region.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMap {
    pub labels: Array2<u32>,
    pub n_instances: usize,
}

impl InstanceMap {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { labels: Array2::zeros((rows, cols)), n_instances: 0 }
    }

    /// Re-number positive labels to 1..n in scan order of first occurrence.
    pub fn canonicalize(labels: &Array2<u32>) -> Self {
        let mut map: Vec<(u32, u32)> = Vec::new(); // old -> new, small n
        let mut out = labels.clone();
        let mut next = 0u32;
        for v in out.iter_mut() {
            if *v == 0 {
                continue;
            }
            let new = match map.iter().find(|(old, _)| *old == *v) {
                Some(&(_, n)) => n,
                None => {
                    next += 1;
                    map.push((*v, next));
                    next
                }
            };
            *v = new;
        }
        Self { labels: out, n_instances: next as usize }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dim()
    }

    /// Pixels assigned to any instance.
    pub fn foreground_px(&self) -> usize {
        self.labels.iter().filter(|&&v| v > 0).count()
    }
}

/// Shared by both watershed implementations: the height surface.
pub(crate) fn build_surface(extent: &Array2<f32>, boundary: &Array2<f32>, mix: f64) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(extent.dim());
    for ((o, &e), &b) in out.iter_mut().zip(extent.iter()).zip(boundary.iter()) {
        *o = mix * b as f64 + (1.0 - mix) * (1.0 - e as f64);
    }
    out
}

pub(crate) const NEIGHBORS4: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
