//! Brute-force per-pixel label rasterization.
//!
//! Every pixel is decided independently: point-in-polygon by a full
//! edge-loop ray cast, distances by scanning the entire complement. O(N^2)
//! and unapologetic about it; meant for scenes of at most a few thousand
//! pixels.

use ndarray::Array2;

use crate::geom::FieldPolygon;
use crate::raster::GridGeometry;

/// Even-odd ray cast to +x: odd number of edge crossings strictly right of
/// the point means inside.
fn point_in_polygon(px: f64, py: f64, rings: &[Vec<(f64, f64)>]) -> bool {
    let mut crossings = 0usize;
    for ring in rings {
        let n = ring.len();
        for i in 0..n {
            let (x1, y1) = ring[i];
            let (x2, y2) = ring[(i + 1) % n];
            if (y1 > py) != (y2 > py) {
                let x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1);
                if x_cross > px {
                    crossings += 1;
                }
            }
        }
    }
    crossings % 2 == 1
}

fn rings_in_pixel_space(poly: &FieldPolygon, geom: &GridGeometry) -> Vec<Vec<(f64, f64)>> {
    std::iter::once(&poly.ring)
        .chain(poly.holes.iter())
        .map(|ring| ring.iter().map(|&(x, y)| geom.geo_to_pixel(x, y)).collect())
        .collect()
}

/// Same degeneracy rule the production path applies before rasterizing.
fn usable(poly: &FieldPolygon, geom: &GridGeometry) -> bool {
    poly.validate().is_ok() && poly.area() >= geom.pixel_size * geom.pixel_size
}

/// Per-field membership mask by testing every pixel center.
pub fn field_pixels(poly: &FieldPolygon, geom: &GridGeometry) -> Array2<bool> {
    let rings = rings_in_pixel_space(poly, geom);
    let mut out = Array2::from_elem((geom.height, geom.width), false);
    for r in 0..geom.height {
        for c in 0..geom.width {
            let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
            out[(r, c)] = point_in_polygon(px, py, &rings);
        }
    }
    out
}

pub fn extent(polys: &[FieldPolygon], geom: &GridGeometry) -> Array2<u8> {
    let mut out = Array2::<u8>::zeros((geom.height, geom.width));
    for poly in polys.iter().filter(|p| usable(p, geom)) {
        let m = field_pixels(poly, geom);
        for (dst, &v) in out.iter_mut().zip(m.iter()) {
            if v {
                *dst = 1;
            }
        }
    }
    out
}

/// Chebyshev distance from a field pixel to the nearest non-field pixel,
/// scanning every cell plus the straight-line distance to the image
/// exterior.
fn chebyshev_scan(mask: &Array2<bool>, r: usize, c: usize) -> u32 {
    let (rows, cols) = mask.dim();
    let mut best = (r.min(rows - 1 - r).min(c).min(cols - 1 - c) + 1) as u32;
    for rr in 0..rows {
        for cc in 0..cols {
            if !mask[(rr, cc)] {
                let d = (rr as i64 - r as i64).abs().max((cc as i64 - c as i64).abs()) as u32;
                best = best.min(d);
            }
        }
    }
    best
}

pub fn boundary(polys: &[FieldPolygon], geom: &GridGeometry, thickness: u32) -> Array2<u8> {
    let mut out = Array2::<u8>::zeros((geom.height, geom.width));
    for poly in polys.iter().filter(|p| usable(p, geom)) {
        let m = field_pixels(poly, geom);
        for r in 0..geom.height {
            for c in 0..geom.width {
                if m[(r, c)] && chebyshev_scan(&m, r, c) <= thickness {
                    out[(r, c)] = 1;
                }
            }
        }
    }
    out
}

fn squared_euclid_scan(mask: &Array2<bool>, r: usize, c: usize) -> f64 {
    let (rows, cols) = mask.dim();
    let side = (r + 1).min(rows - r).min(c + 1).min(cols - c) as i64;
    let mut best = side * side;
    for rr in 0..rows {
        for cc in 0..cols {
            if !mask[(rr, cc)] {
                let dr = rr as i64 - r as i64;
                let dc = cc as i64 - c as i64;
                best = best.min(dr * dr + dc * dc);
            }
        }
    }
    best as f64
}

pub fn distance(polys: &[FieldPolygon], geom: &GridGeometry) -> Array2<f32> {
    let mut out = Array2::<f32>::zeros((geom.height, geom.width));
    let mut owner = Array2::<u32>::zeros((geom.height, geom.width));
    for poly in polys.iter().filter(|p| usable(p, geom)) {
        let m = field_pixels(poly, geom);
        let mut d2 = Array2::<f64>::zeros((geom.height, geom.width));
        let mut max_d2 = 0.0f64;
        for r in 0..geom.height {
            for c in 0..geom.width {
                if m[(r, c)] {
                    let d = squared_euclid_scan(&m, r, c);
                    d2[(r, c)] = d;
                    max_d2 = max_d2.max(d);
                }
            }
        }
        if max_d2 <= 0.0 {
            continue;
        }
        let norm = max_d2.sqrt();
        for r in 0..geom.height {
            for c in 0..geom.width {
                if m[(r, c)] && owner[(r, c)] == 0 {
                    owner[(r, c)] = poly.id;
                    out[(r, c)] = (d2[(r, c)].sqrt() / norm) as f32;
                }
            }
        }
    }
    out
}

pub fn mask(polys: &[FieldPolygon], geom: &GridGeometry, dilation: u32) -> Array2<u8> {
    let ext = extent(polys, geom);
    let (rows, cols) = ext.dim();
    let mut out = Array2::<u8>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            'search: for rr in 0..rows {
                for cc in 0..cols {
                    if ext[(rr, cc)] == 1 {
                        let d =
                            (rr as i64 - r as i64).abs().max((cc as i64 - c as i64).abs()) as u32;
                        if d <= dilation {
                            out[(r, c)] = 1;
                            break 'search;
                        }
                    }
                }
            }
        }
    }
    out
}
