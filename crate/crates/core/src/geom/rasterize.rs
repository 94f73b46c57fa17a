//! Polygon-to-raster conversion: the three training labels plus the
//! supervision mask.
//!
//! Pixel membership is pixel-center-in-polygon with even-odd parity. The
//! boundary ring is measured on the interior side with Chebyshev distance
//! (exact two-pass chamfer); the distance label uses an exact squared
//! Euclidean transform (column pass + row-wise parabola envelope), each
//! normalized per field by its own maximum. Image exterior counts as
//! non-field, so fields clipped by the tile edge still get a ring.

use ndarray::Array2;

use crate::error::{FieldkitError, Result};
use crate::raster::GridGeometry;

use super::polygon::FieldPolygon;

/// A polygon that was left out of a rasterization, and why.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPolygon {
    pub id: u32,
    pub reason: String,
}

/// The four aligned single-band label rasters for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStack {
    /// 1 where the pixel center lies inside a labeled field.
    pub extent: Array2<u8>,
    /// 1 on the interior boundary ring of a labeled field.
    pub boundary: Array2<u8>,
    /// Normalized distance to the field boundary, in [0, 1]; 0 outside.
    pub distance: Array2<f32>,
    /// 1 where the loss may be evaluated.
    pub mask: Array2<u8>,
}

impl LabelStack {
    /// A tile with an empty mask cannot supervise anything.
    pub fn is_supervisable(&self) -> bool {
        self.mask.iter().any(|&v| v == 1)
    }

    /// Fraction of pixels covered by the supervision mask.
    pub fn mask_coverage(&self) -> f64 {
        let n = self.mask.len();
        if n == 0 {
            return 0.0;
        }
        self.mask.iter().filter(|&&v| v == 1).count() as f64 / n as f64
    }
}

/// Polygon rings converted into continuous pixel coordinates, plus the
/// pixel-space bounding box clipped to the image.
struct PixelPoly {
    id: u32,
    rings: Vec<Vec<(f64, f64)>>,
    r0: usize,
    r1: usize, // exclusive
    c0: usize,
    c1: usize, // exclusive
}

impl PixelPoly {
    fn from_polygon(poly: &FieldPolygon, geom: &GridGeometry) -> Option<Self> {
        let mut rings = Vec::with_capacity(1 + poly.holes.len());
        for ring in std::iter::once(&poly.ring).chain(poly.holes.iter()) {
            rings.push(ring.iter().map(|&(x, y)| geom.geo_to_pixel(x, y)).collect::<Vec<_>>());
        }
        let (mut minx, mut miny) = (f64::INFINITY, f64::INFINITY);
        let (mut maxx, mut maxy) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in rings.iter().flatten() {
            minx = minx.min(x);
            maxx = maxx.max(x);
            miny = miny.min(y);
            maxy = maxy.max(y);
        }
        let r0 = miny.floor().max(0.0) as usize;
        let c0 = minx.floor().max(0.0) as usize;
        let r1 = (maxy.ceil().max(0.0) as usize).min(geom.height);
        let c1 = (maxx.ceil().max(0.0) as usize).min(geom.width);
        if r0 >= r1 || c0 >= c1 {
            return None;
        }
        Some(Self { id: poly.id, rings, r0, r1, c0, c1 })
    }

    /// Scanline fill over the bounding box. A pixel center (c+0.5, r+0.5)
    /// is inside when an odd number of ring-edge crossings of its row line
    /// lie strictly to its right (identical predicate to a per-pixel ray
    /// cast, evaluated once per row).
    fn fill(&self) -> Array2<bool> {
        let rows = self.r1 - self.r0;
        let cols = self.c1 - self.c0;
        let mut mask = Array2::from_elem((rows, cols), false);
        let mut crossings: Vec<f64> = Vec::new();
        for r in 0..rows {
            let py = (self.r0 + r) as f64 + 0.5;
            crossings.clear();
            for ring in &self.rings {
                let n = ring.len();
                for i in 0..n {
                    let (x1, y1) = ring[i];
                    let (x2, y2) = ring[(i + 1) % n];
                    if (y1 > py) != (y2 > py) {
                        crossings.push(x1 + (py - y1) * (x2 - x1) / (y2 - y1));
                    }
                }
            }
            crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = crossings.len();
            let mut idx = 0usize; // first crossing strictly greater than px
            for c in 0..cols {
                let px = (self.c0 + c) as f64 + 0.5;
                while idx < m && crossings[idx] <= px {
                    idx += 1;
                }
                if (m - idx) % 2 == 1 {
                    mask[(r, c)] = true;
                }
            }
        }
        mask
    }
}

/// Validate and convert polygons; degenerate ones (invalid geometry, area
/// below one pixel, or entirely off-grid) are skipped and reported.
fn prepare(
    polys: &[FieldPolygon],
    geom: &GridGeometry,
) -> (Vec<PixelPoly>, Vec<SkippedPolygon>) {
    let pixel_area = geom.pixel_size * geom.pixel_size;
    let mut kept = Vec::with_capacity(polys.len());
    let mut skipped = Vec::new();
    for poly in polys {
        if let Err(e) = poly.validate() {
            skipped.push(SkippedPolygon { id: poly.id, reason: e.to_string() });
            continue;
        }
        if poly.area() < pixel_area {
            skipped.push(SkippedPolygon {
                id: poly.id,
                reason: format!("degenerate: area {} below one pixel ({pixel_area})", poly.area()),
            });
            continue;
        }
        match PixelPoly::from_polygon(poly, geom) {
            Some(p) => kept.push(p),
            None => skipped.push(SkippedPolygon {
                id: poly.id,
                reason: "outside grid extent".to_string(),
            }),
        }
    }
    (kept, skipped)
}

/// Binary field-extent raster: 1 iff the pixel center lies inside any
/// polygon.
pub fn rasterize_extent(
    polys: &[FieldPolygon],
    geom: &GridGeometry,
) -> (Array2<u8>, Vec<SkippedPolygon>) {
    let (kept, skipped) = prepare(polys, geom);
    let mut out = Array2::<u8>::zeros((geom.height, geom.width));
    for p in &kept {
        let m = p.fill();
        for ((r, c), &v) in m.indexed_iter() {
            if v {
                out[(p.r0 + r, p.c0 + c)] = 1;
            }
        }
    }
    (out, skipped)
}

/// Instance-id raster: each pixel gets the id of the first polygon (in list
/// order) containing its center, 0 for background.
pub fn rasterize_instances(
    polys: &[FieldPolygon],
    geom: &GridGeometry,
) -> (Array2<u32>, Vec<SkippedPolygon>) {
    let (kept, skipped) = prepare(polys, geom);
    let mut out = Array2::<u32>::zeros((geom.height, geom.width));
    for p in &kept {
        let m = p.fill();
        for ((r, c), &v) in m.indexed_iter() {
            let cell = &mut out[(p.r0 + r, p.c0 + c)];
            if v && *cell == 0 {
                *cell = p.id;
            }
        }
    }
    (out, skipped)
}

/// Interior boundary ring: field pixels within `thickness` (Chebyshev) of
/// the nearest non-field pixel of the same field, unioned over fields.
/// Shared edges between abutting polygons ring both sides.
pub fn rasterize_boundary(
    polys: &[FieldPolygon],
    geom: &GridGeometry,
    thickness: u32,
) -> Result<(Array2<u8>, Vec<SkippedPolygon>)> {
    if thickness < 1 {
        return Err(FieldkitError::InvalidArgument(format!(
            "boundary thickness must be >= 1, got {thickness}"
        )));
    }
    let (kept, skipped) = prepare(polys, geom);
    let mut out = Array2::<u8>::zeros((geom.height, geom.width));
    for p in &kept {
        let m = p.fill();
        let dist = chebyshev_to_complement(&m);
        for ((r, c), &inside) in m.indexed_iter() {
            if inside && dist[(r, c)] <= thickness {
                out[(p.r0 + r, p.c0 + c)] = 1;
            }
        }
    }
    Ok((out, skipped))
}

/// Per-field max-normalized Euclidean distance to the boundary. Pixels of
/// the first field containing them (list order); 0 outside all fields.
pub fn rasterize_distance(
    polys: &[FieldPolygon],
    geom: &GridGeometry,
) -> (Array2<f32>, Vec<SkippedPolygon>) {
    let (kept, skipped) = prepare(polys, geom);
    let mut out = Array2::<f32>::zeros((geom.height, geom.width));
    let mut owner = Array2::<u32>::zeros((geom.height, geom.width));
    for p in &kept {
        let m = p.fill();
        let d2 = squared_euclidean_to_complement(&m);
        let mut max_d2 = 0.0f64;
        for (&inside, &d) in m.iter().zip(d2.iter()) {
            if inside && d > max_d2 {
                max_d2 = d;
            }
        }
        if max_d2 <= 0.0 {
            continue;
        }
        let norm = max_d2.sqrt();
        for ((r, c), &inside) in m.indexed_iter() {
            if inside {
                let cell = (p.r0 + r, p.c0 + c);
                if owner[cell] == 0 {
                    owner[cell] = p.id;
                    out[cell] = (d2[(r, c)].sqrt() / norm) as f32;
                }
            }
        }
    }
    (out, skipped)
}

/// Supervision mask: the union of labeled-field pixels dilated by
/// `dilation` (Chebyshev), so the boundary between labeled neighbors is
/// supervised. All-zero output means the tile is unsupervisable.
pub fn build_mask(
    polys: &[FieldPolygon],
    geom: &GridGeometry,
    dilation: u32,
) -> (Array2<u8>, Vec<SkippedPolygon>) {
    let (extent, skipped) = rasterize_extent(polys, geom);
    let inside = extent.mapv(|v| v == 1);
    let dist = chebyshev_to_sources(&inside);
    let mut out = Array2::<u8>::zeros((geom.height, geom.width));
    for ((r, c), &d) in dist.indexed_iter() {
        if d <= dilation {
            out[(r, c)] = 1;
        }
    }
    (out, skipped)
}

/// Build all four label planes in one pass. Returns the stack plus every
/// skipped polygon (deduplicated by id).
pub fn build_label_stack(
    polys: &[FieldPolygon],
    geom: &GridGeometry,
    thickness: u32,
    dilation: u32,
) -> Result<(LabelStack, Vec<SkippedPolygon>)> {
    let (extent, skipped) = rasterize_extent(polys, geom);
    let (boundary, _) = rasterize_boundary(polys, geom, thickness)?;
    let (distance, _) = rasterize_distance(polys, geom);
    let (mask, _) = build_mask(polys, geom, dilation);
    Ok((LabelStack { extent, boundary, distance, mask }, skipped))
}

/// Exact Chebyshev distance from every cell of `mask` to the nearest
/// `false` cell, where everything outside the array also counts as false.
/// Two-pass chamfer with unit weights (exact for the Chebyshev metric).
fn chebyshev_to_complement(mask: &Array2<bool>) -> Array2<u32> {
    let (rows, cols) = mask.dim();
    let big = u32::MAX / 4;
    let mut d = Array2::<u32>::from_elem((rows, cols), big);
    for ((r, c), &inside) in mask.indexed_iter() {
        if !inside {
            d[(r, c)] = 0;
        } else {
            // Straight-line Chebyshev distance to the region outside the
            // array (half-planes), exact.
            let border =
                (r.min(rows - 1 - r).min(c).min(cols - 1 - c) + 1) as u32;
            d[(r, c)] = border;
        }
    }
    chamfer_pass(&mut d);
    d
}

/// Chebyshev distance from every cell to the nearest `true` cell of
/// `sources` (no virtual exterior; used for dilation).
fn chebyshev_to_sources(sources: &Array2<bool>) -> Array2<u32> {
    let big = u32::MAX / 4;
    let mut d = sources.mapv(|s| if s { 0u32 } else { big });
    chamfer_pass(&mut d);
    d
}

fn chamfer_pass(d: &mut Array2<u32>) {
    let (rows, cols) = d.dim();
    for r in 0..rows {
        for c in 0..cols {
            let mut best = d[(r, c)];
            if r > 0 {
                best = best.min(d[(r - 1, c)] + 1);
                if c > 0 {
                    best = best.min(d[(r - 1, c - 1)] + 1);
                }
                if c + 1 < cols {
                    best = best.min(d[(r - 1, c + 1)] + 1);
                }
            }
            if c > 0 {
                best = best.min(d[(r, c - 1)] + 1);
            }
            d[(r, c)] = best;
        }
    }
    for r in (0..rows).rev() {
        for c in (0..cols).rev() {
            let mut best = d[(r, c)];
            if r + 1 < rows {
                best = best.min(d[(r + 1, c)] + 1);
                if c > 0 {
                    best = best.min(d[(r + 1, c - 1)] + 1);
                }
                if c + 1 < cols {
                    best = best.min(d[(r + 1, c + 1)] + 1);
                }
            }
            if c + 1 < cols {
                best = best.min(d[(r, c + 1)] + 1);
            }
            d[(r, c)] = best;
        }
    }
}

/// Exact squared Euclidean distance from every `true` cell to the nearest
/// `false` cell (array exterior counts as false). Column scan for the
/// per-column nearest source, then a row-wise parabola lower envelope.
fn squared_euclidean_to_complement(mask: &Array2<bool>) -> Array2<f64> {
    let (rows, cols) = mask.dim();
    let inf = f64::INFINITY;

    // Pass 1: per column, squared distance to nearest false cell in the
    // same column, treating the cells just beyond both ends as false.
    let mut g = Array2::<f64>::zeros((rows, cols));
    for c in 0..cols {
        let mut last_false: i64 = -1; // virtual false at row -1
        for r in 0..rows {
            if !mask[(r, c)] {
                last_false = r as i64;
                g[(r, c)] = 0.0;
            } else {
                let d = r as i64 - last_false;
                g[(r, c)] = (d * d) as f64;
            }
        }
        let mut next_false: i64 = rows as i64; // virtual false at row `rows`
        for r in (0..rows).rev() {
            if !mask[(r, c)] {
                next_false = r as i64;
            } else {
                let d = next_false - r as i64;
                g[(r, c)] = g[(r, c)].min((d * d) as f64);
            }
        }
    }

    // Pass 2: per row, lower envelope of parabolas y(x) = f[p] + (x-p)^2,
    // with two virtual zero parabolas just beyond the row ends for the
    // array exterior (columns are embedded at index c+1 in the extended
    // site array, which leaves all pairwise distances unchanged).
    let mut out = Array2::<f64>::zeros((rows, cols));
    let mut f = vec![0.0f64; cols + 2];
    for r in 0..rows {
        f[0] = 0.0;
        for c in 0..cols {
            f[c + 1] = g[(r, c)];
        }
        f[cols + 1] = 0.0;
        let d = lower_envelope_dt(&f, inf);
        for c in 0..cols {
            out[(r, c)] = d[c + 1];
        }
    }
    out
}

/// 1-D squared-distance transform d[x] = min_p ((x - p)^2 + f[p]).
fn lower_envelope_dt(f: &[f64], inf: f64) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0f64; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = inf;
                break;
            }
        }
    }
    k = 0;
    for x in 0..n {
        while z[k + 1] < x as f64 {
            k += 1;
        }
        let p = v[k];
        let dx = x as f64 - p as f64;
        d[x] = dx * dx + f[p];
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px_geom(h: usize, w: usize) -> GridGeometry {
        GridGeometry::pixels(h, w)
    }

    #[test]
    fn empty_polygon_list_gives_all_zero() {
        let (out, skipped) = rasterize_extent(&[], &px_geom(8, 8));
        assert_eq!(out.sum(), 0);
        assert!(skipped.is_empty());
    }

    #[test]
    fn square_covers_expected_pixel_block() {
        // Covers pixel centers in rows/cols 2..5 inclusive -> 16 ones.
        let poly = FieldPolygon::rect(1, 2.0, -6.0, 6.0, -2.0, "px");
        let (out, skipped) = rasterize_extent(&[poly], &px_geom(8, 8));
        assert!(skipped.is_empty());
        assert_eq!(out.iter().map(|&v| v as u32).sum::<u32>(), 16);
        for r in 2..6 {
            for c in 2..6 {
                assert_eq!(out[(r, c)], 1, "pixel ({r},{c})");
            }
        }
    }

    #[test]
    fn disjoint_squares_union_counts_add() {
        let a = FieldPolygon::rect(1, 0.0, -3.0, 3.0, 0.0, "px");
        let b = FieldPolygon::rect(2, 5.0, -8.0, 8.0, -5.0, "px");
        let geom = px_geom(8, 8);
        let (ua, _) = rasterize_extent(std::slice::from_ref(&a), &geom);
        let (ub, _) = rasterize_extent(std::slice::from_ref(&b), &geom);
        let (uu, _) = rasterize_extent(&[a, b], &geom);
        let s = |m: &Array2<u8>| m.iter().map(|&v| v as u32).sum::<u32>();
        assert_eq!(s(&uu), s(&ua) + s(&ub));
    }

    #[test]
    fn degenerate_polygon_skipped_and_reported() {
        let tiny = FieldPolygon::rect(9, 0.0, -0.5, 0.5, 0.0, "px");
        let (out, skipped) = rasterize_extent(&[tiny], &px_geom(4, 4));
        assert_eq!(out.sum(), 0);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].id, 9);
        assert!(skipped[0].reason.contains("degenerate"));
    }

    #[test]
    fn boundary_of_six_square_leaves_2x2_interior() {
        let poly = FieldPolygon::rect(1, 1.0, -7.0, 7.0, -1.0, "px");
        let geom = px_geom(8, 8);
        let (b, _) = rasterize_boundary(&[poly], &geom, 2).unwrap();
        // 6x6 block minus the interior 2x2.
        assert_eq!(b.iter().map(|&v| v as u32).sum::<u32>(), 32);
        assert_eq!(b[(3, 3)], 0);
        assert_eq!(b[(4, 4)], 0);
        assert_eq!(b[(1, 1)], 1);
        assert_eq!(b[(2, 2)], 1);
    }

    #[test]
    fn saturating_thickness_rings_everything() {
        let poly = FieldPolygon::rect(1, 1.0, -7.0, 7.0, -1.0, "px");
        let geom = px_geom(8, 8);
        let (b, _) = rasterize_boundary(std::slice::from_ref(&poly), &geom, 3).unwrap();
        let (e, _) = rasterize_extent(&[poly], &geom);
        assert_eq!(b, e);
    }

    #[test]
    fn zero_thickness_is_invalid() {
        assert!(rasterize_boundary(&[], &px_geom(4, 4), 0).is_err());
    }

    #[test]
    fn abutting_squares_ring_both_sides_of_shared_edge() {
        let a = FieldPolygon::rect(1, 0.0, -8.0, 4.0, 0.0, "px");
        let b = FieldPolygon::rect(2, 4.0, -8.0, 8.0, 0.0, "px");
        let geom = px_geom(8, 8);
        let (bd, _) = rasterize_boundary(&[a, b], &geom, 1).unwrap();
        // Columns 3 and 4 flank the shared edge at x=4; both are boundary.
        for r in 0..8 {
            assert_eq!(bd[(r, 3)], 1, "left side of shared edge, row {r}");
            assert_eq!(bd[(r, 4)], 1, "right side of shared edge, row {r}");
        }
    }

    #[test]
    fn distance_peaks_at_center_of_odd_square() {
        let poly = FieldPolygon::rect(1, 1.0, -6.0, 6.0, -1.0, "px");
        let geom = px_geom(8, 8);
        let (d, _) = rasterize_distance(&[poly], &geom);
        assert_eq!(d[(3, 3)], 1.0);
        // Corner pixels of the 5x5 field carry the minimum positive value.
        let corner = d[(1, 1)];
        assert!(corner > 0.0);
        for ((_, _), &v) in d.indexed_iter() {
            if v > 0.0 {
                assert!(v >= corner - 1e-7);
            }
        }
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn distance_single_interior_pixel_gets_one() {
        let poly = FieldPolygon::rect(1, 3.0, -4.0, 4.0, -3.0, "px");
        let (d, _) = rasterize_distance(&[poly], &px_geom(8, 8));
        assert_eq!(d[(3, 3)], 1.0);
    }

    #[test]
    fn distance_of_two_fields_normalized_independently() {
        let a = FieldPolygon::rect(1, 0.0, -3.0, 3.0, 0.0, "px");
        let b = FieldPolygon::rect(2, 5.0, -12.0, 12.0, -5.0, "px");
        let (d, _) = rasterize_distance(&[a, b], &px_geom(12, 12));
        let max_a = (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).map(|i| d[i]).fold(0.0f32, f32::max);
        let max_b =
            (5..12).flat_map(|r| (5..12).map(move |c| (r, c))).map(|i| d[i]).fold(0.0f32, f32::max);
        assert_eq!(max_a, 1.0);
        assert_eq!(max_b, 1.0);
    }

    #[test]
    fn no_polygons_distance_all_zero() {
        let (d, _) = rasterize_distance(&[], &px_geom(6, 6));
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_is_dilated_union_and_flags_empty() {
        let poly = FieldPolygon::rect(1, 2.0, -5.0, 5.0, -2.0, "px");
        let geom = px_geom(8, 8);
        let (mask, _) = build_mask(std::slice::from_ref(&poly), &geom, 2);
        let (extent, _) = rasterize_extent(&[poly], &geom);
        for (m, e) in mask.iter().zip(extent.iter()) {
            assert!(m >= e, "mask must contain the extent");
        }
        // Dilation by 2 from a 3x3 block centered in an 8x8 grid covers 7x7.
        assert_eq!(mask.iter().map(|&v| v as u32).sum::<u32>(), 49);

        let (empty_mask, _) = build_mask(&[], &geom, 2);
        assert_eq!(empty_mask.sum(), 0);
        let (stack, _) = build_label_stack(&[], &geom, 2, 2).unwrap();
        assert!(!stack.is_supervisable());
    }

    #[test]
    fn label_stack_invariants_hold_on_small_scene() {
        let polys = vec![
            FieldPolygon::rect(1, 0.0, -6.0, 6.0, 0.0, "px"),
            FieldPolygon::rect(2, 6.0, -6.0, 12.0, 0.0, "px"),
            FieldPolygon::rect(3, 2.0, -11.0, 9.0, -7.0, "px"),
        ];
        let geom = px_geom(12, 12);
        let (stack, skipped) = build_label_stack(&polys, &geom, 2, 2).unwrap();
        assert!(skipped.is_empty());
        for ((r, c), &b) in stack.boundary.indexed_iter() {
            if b == 1 {
                assert_eq!(stack.extent[(r, c)], 1, "boundary outside extent at ({r},{c})");
            }
        }
        for ((r, c), &d) in stack.distance.indexed_iter() {
            if d > 0.0 {
                assert_eq!(stack.extent[(r, c)], 1, "distance outside extent at ({r},{c})");
            }
            if stack.extent[(r, c)] == 1 {
                assert!(d > 0.0, "zero distance inside field at ({r},{c})");
            }
        }
        for ((r, c), &e) in stack.extent.indexed_iter() {
            if e == 1 || stack.boundary[(r, c)] == 1 {
                assert_eq!(stack.mask[(r, c)], 1);
            }
        }
        assert!(stack.is_supervisable());
    }
}
