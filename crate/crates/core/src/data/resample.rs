//! Block-mean resolution reduction.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};
use crate::raster::RasterGrid;

/// Emitted when the input had to be cropped to a divisible window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropReport {
    pub original: (usize, usize),
    pub cropped: (usize, usize),
}

/// Downsample by an integer factor with block averaging; pixel size scales
/// by the factor, so a field of A px^2 maps to about A/factor^2 px^2.
pub fn downsample_imagery(
    grid: &RasterGrid<f32>,
    factor: usize,
) -> Result<(RasterGrid<f32>, Option<CropReport>)> {
    if factor == 0 {
        return Err(FieldkitError::InvalidArgument("factor must be >= 1".to_string()));
    }
    if factor == 1 {
        return Ok((grid.clone(), None));
    }
    let (c, h, w) = grid.data.dim();
    let (nh, nw) = (h / factor, w / factor);
    if nh == 0 || nw == 0 {
        return Err(FieldkitError::InvalidArgument(format!(
            "{h}x{w} image cannot be downsampled by {factor}"
        )));
    }
    let crop = (h % factor != 0 || w % factor != 0)
        .then_some(CropReport { original: (h, w), cropped: (nh * factor, nw * factor) });
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = Array3::<f32>::zeros((c, nh, nw));
    for ci in 0..c {
        for r in 0..nh {
            for cc in 0..nw {
                let mut acc = 0.0f32;
                for dr in 0..factor {
                    for dc in 0..factor {
                        acc += grid.data[(ci, r * factor + dr, cc * factor + dc)];
                    }
                }
                out[(ci, r, cc)] = acc * norm;
            }
        }
    }
    let down = RasterGrid::new(
        out,
        grid.pixel_size * factor as f64,
        grid.origin,
        grid.band_names.clone(),
    )?;
    Ok((down, crop))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, ps: f64) -> RasterGrid<f32> {
        let data = Array3::from_shape_fn((2, h, w), |(c, r, cc)| (c * 100 + r * w + cc) as f32);
        RasterGrid::new(data, ps, (0.0, 0.0), vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn factor_one_is_identity() {
        let g = grid(6, 6, 4.77);
        let (d, crop) = downsample_imagery(&g, 1).unwrap();
        assert_eq!(d, g);
        assert!(crop.is_none());
    }

    #[test]
    fn constant_image_stays_constant_under_factor_two() {
        let mut g = grid(8, 8, 4.77);
        g.data.fill(3.25);
        let (d, crop) = downsample_imagery(&g, 2).unwrap();
        assert!(crop.is_none());
        assert_eq!(d.data.dim(), (2, 4, 4));
        assert!(d.data.iter().all(|&v| v == 3.25));
        assert_eq!(d.pixel_size, 9.54);
    }

    #[test]
    fn factor_three_scales_pixel_size_exactly() {
        let g = grid(9, 9, 4.77);
        let (d, _) = downsample_imagery(&g, 3).unwrap();
        assert!((d.pixel_size - 14.31).abs() < 1e-12);
        assert_eq!(d.data.dim(), (2, 3, 3));
    }

    #[test]
    fn non_divisible_inputs_are_cropped_and_reported() {
        let g = grid(7, 10, 1.0);
        let (d, crop) = downsample_imagery(&g, 3).unwrap();
        assert_eq!(d.data.dim(), (2, 2, 3));
        assert_eq!(crop, Some(CropReport { original: (7, 10), cropped: (6, 9) }));
    }

    #[test]
    fn zero_factor_is_invalid() {
        assert!(downsample_imagery(&grid(4, 4, 1.0), 0).is_err());
    }

    #[test]
    fn block_mean_value() {
        let g = grid(2, 2, 1.0);
        let (d, _) = downsample_imagery(&g, 2).unwrap();
        // Band 0 holds 0,1,2,3 -> mean 1.5.
        assert_eq!(d.data[(0, 0, 0)], 1.5);
    }
}
