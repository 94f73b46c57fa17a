//! Validation-set grid search over watershed hyperparameters.

use ndarray::Array2;

use crate::error::{FieldkitError, Result};
use crate::eval::{aggregate_instances, match_fields, MatchPolicy};
use crate::parallel::par_map_slice;

use super::{watershed_segment, WatershedParams};

/// One validation tile: extent prediction, boundary prediction, and the
/// ground-truth instance raster of its labeled fields.
pub type TuneTile = (Array2<f32>, Array2<f32>, Array2<u32>);

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub params: WatershedParams,
    pub median_iou: f64,
    pub iou_50: f64,
    /// Set when fewer than 5 labeled fields back the choice.
    pub low_confidence: bool,
}

/// Grid-search argmax of the pooled median IoU over labeled validation
/// fields; ties break toward higher IoU_50, then lower min_instance_px,
/// then grid order.
pub fn tune_params(tiles: &[TuneTile], grid: &[WatershedParams]) -> Result<TuneOutcome> {
    if grid.is_empty() {
        return Err(FieldkitError::InvalidArgument("empty watershed search grid".to_string()));
    }
    let n_fields: usize = tiles
        .iter()
        .map(|(_, _, gt)| {
            let mut seen = std::collections::BTreeSet::new();
            for &v in gt.iter() {
                if v > 0 {
                    seen.insert(v);
                }
            }
            seen.len()
        })
        .sum();
    if n_fields == 0 {
        return Err(FieldkitError::InvalidArgument(
            "tuning requires at least one labeled validation field".to_string(),
        ));
    }

    let scored: Vec<Result<(f64, f64)>> = par_map_slice(grid, |params| {
        let mut pooled = Vec::new();
        for (extent, boundary, gt) in tiles {
            let inst = watershed_segment(extent, boundary, params)?;
            pooled.extend(match_fields(gt, &inst, MatchPolicy::BestOverlap));
        }
        let curve = aggregate_instances(&pooled);
        let iou_50 = curve.points.iter().find(|(k, _)| *k == 50).map(|&(_, f)| f).unwrap_or(0.0);
        Ok((curve.median_iou, iou_50))
    });

    let mut best: Option<(usize, f64, f64)> = None;
    for (i, s) in scored.into_iter().enumerate() {
        let (median, iou50) = s?;
        let better = match best {
            None => true,
            Some((bi, bm, b50)) => {
                median > bm
                    || (median == bm
                        && (iou50 > b50
                            || (iou50 == b50
                                && grid[i].min_instance_px < grid[bi].min_instance_px)))
            }
        };
        if better {
            best = Some((i, median, iou50));
        }
    }
    let (idx, median_iou, iou_50) = best.expect("grid checked non-empty");
    Ok(TuneOutcome {
        params: grid[idx],
        median_iou,
        iou_50,
        low_confidence: n_fields < 5,
    })
}

/// Cartesian-product grid builder with the spec'd default axes.
pub fn default_grid() -> Vec<WatershedParams> {
    let mut grid = Vec::new();
    for &surface_mix in &[0.3, 0.5, 0.7] {
        for &marker_threshold in &[0.2, 0.35, 0.5] {
            for &persistence in &[0.0, 0.05, 0.15] {
                for &extent_cutoff in &[0.4, 0.5] {
                    grid.push(WatershedParams {
                        surface_mix,
                        marker_threshold,
                        persistence,
                        extent_cutoff,
                        ..WatershedParams::default()
                    });
                }
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crisp_tile() -> TuneTile {
        // Two fields split by a ridge, ground truth matching.
        let mut extent = Array2::<f32>::ones((8, 10));
        let mut boundary = Array2::<f32>::zeros((8, 10));
        let mut gt = Array2::<u32>::zeros((8, 10));
        for r in 0..8 {
            boundary[(r, 4)] = 0.9;
            boundary[(r, 5)] = 0.9;
            for c in 0..5 {
                gt[(r, c)] = 1;
            }
            for c in 5..10 {
                gt[(r, c)] = 2;
            }
        }
        for v in extent.iter_mut() {
            *v = 1.0;
        }
        (extent, boundary, gt)
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let tile = crisp_tile();
        let grid = vec![WatershedParams::default()];
        let out = tune_params(&[tile], &grid).unwrap();
        assert_eq!(out.params, grid[0]);
        assert!(out.low_confidence, "two fields is low confidence");
    }

    #[test]
    fn empty_grid_is_invalid() {
        let tile = crisp_tile();
        assert!(tune_params(&[tile], &[]).is_err());
    }

    #[test]
    fn picks_the_separating_params() {
        let tile = crisp_tile();
        // marker_threshold above the ridge height merges the two fields;
        // below it separates them.
        let bad = WatershedParams { marker_threshold: 0.95, ..WatershedParams::default() };
        let good = WatershedParams { marker_threshold: 0.3, ..WatershedParams::default() };
        let out = tune_params(&[tile], &[bad, good]).unwrap();
        assert_eq!(out.params, good);
        assert!(out.median_iou > 0.9, "median {}", out.median_iou);
    }

    #[test]
    fn no_labeled_fields_is_invalid() {
        let (e, b, _) = crisp_tile();
        let gt = Array2::<u32>::zeros((8, 10));
        assert!(tune_params(&[(e, b, gt)], &[WatershedParams::default()]).is_err());
    }
}
