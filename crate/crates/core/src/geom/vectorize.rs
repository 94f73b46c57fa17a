//! Instance rasters back to polygons.
//!
//! Traces the pixel-edge outline of every instance id: directed unit edges
//! are emitted with the region on the walking direction's left, stitched
//! into cycles with a leftmost-turn rule (which pinches diagonal contacts,
//! matching 4-connectivity), and collinear runs are merged. In pixel space
//! (y down) outer rings come out with negative shoelace area and holes
//! positive; converting to geo coordinates (y up) flips both, so exteriors
//! end up counter-clockwise.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{FieldkitError, Result};
use crate::raster::GridGeometry;

use super::polygon::{polygon_area, FieldPolygon, Ring};
use super::rasterize::SkippedPolygon;

type V = (i64, i64); // lattice vertex (x, y) in pixel space

/// One polygon per instance id, tracing the pixel-region outline exactly.
/// Ids with zero pixels are skipped and reported. Re-rasterizing the result
/// on the same grid reproduces the input pixel sets bit-exactly.
pub fn vectorize_instances(
    labels: &Array2<u32>,
    geom: &GridGeometry,
    crs_tag: &str,
) -> Result<(Vec<FieldPolygon>, Vec<SkippedPolygon>)> {
    let (rows, cols) = labels.dim();
    if rows != geom.height || cols != geom.width {
        return Err(FieldkitError::ShapeMismatch(format!(
            "labels {rows}x{cols} vs geometry {}x{}",
            geom.height, geom.width
        )));
    }
    let max_id = labels.iter().copied().max().unwrap_or(0);
    let mut polys = Vec::new();
    let mut skipped = Vec::new();
    for id in 1..=max_id {
        let cycles = trace_cycles(labels, id);
        if cycles.is_empty() {
            skipped.push(SkippedPolygon { id, reason: "no pixels".to_string() });
            continue;
        }
        // Pixel space is y-down, so outer rings have negative area here.
        let mut outers: Vec<Ring> = Vec::new();
        let mut holes: Vec<Ring> = Vec::new();
        for cycle in cycles {
            let ring: Ring = cycle.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
            if polygon_area(&ring) < 0.0 {
                outers.push(ring);
            } else {
                holes.push(ring);
            }
        }
        if outers.len() != 1 {
            return Err(FieldkitError::InvalidInstanceMap(format!(
                "id {id} traces {} outer rings; ids must be 4-connected",
                outers.len()
            )));
        }
        let to_geo =
            |ring: &Ring| -> Ring { ring.iter().map(|&(x, y)| geom.pixel_to_geo(x, y)).collect() };
        polys.push(FieldPolygon {
            id,
            ring: to_geo(&outers[0]),
            holes: holes.iter().map(to_geo).collect(),
            crs_tag: crs_tag.to_string(),
        });
    }
    Ok((polys, skipped))
}

/// Directed boundary edges of the pixel set `labels == id`, stitched into
/// cycles. Vertices are lattice corners; edges keep the region on the left
/// (y-down convention).
fn trace_cycles(labels: &Array2<u32>, id: u32) -> Vec<Vec<V>> {
    let (rows, cols) = labels.dim();
    let inside = |r: i64, c: i64| -> bool {
        r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols
            && labels[(r as usize, c as usize)] == id
    };
    // start vertex -> list of end vertices, deterministic order.
    let mut edges: BTreeMap<V, Vec<V>> = BTreeMap::new();
    let mut n_edges = 0usize;
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            if !inside(r, c) {
                continue;
            }
            let (x, y) = (c, r);
            let mut push = |from: V, to: V| {
                edges.entry(from).or_default().push(to);
                n_edges += 1;
            };
            if !inside(r - 1, c) {
                push((x + 1, y), (x, y)); // west along top
            }
            if !inside(r + 1, c) {
                push((x, y + 1), (x + 1, y + 1)); // east along bottom
            }
            if !inside(r, c - 1) {
                push((x, y), (x, y + 1)); // south along left
            }
            if !inside(r, c + 1) {
                push((x + 1, y + 1), (x + 1, y)); // north along right
            }
        }
    }
    for ends in edges.values_mut() {
        ends.sort();
    }

    let mut cycles = Vec::new();
    let mut consumed = 0usize;
    while consumed < n_edges {
        // Smallest unused edge starts the next cycle.
        let (start, first_to) = edges
            .iter()
            .find_map(|(&from, tos)| tos.first().map(|&to| (from, to)))
            .expect("edge count says one remains");
        take_edge(&mut edges, start, first_to);
        consumed += 1;
        let mut cycle = vec![start];
        let mut prev = start;
        let mut cur = first_to;
        while cur != start {
            cycle.push(cur);
            let dir = (cur.0 - prev.0, cur.1 - prev.1);
            let next = pick_leftmost(&edges, cur, dir);
            take_edge(&mut edges, cur, next);
            consumed += 1;
            prev = cur;
            cur = next;
        }
        cycles.push(simplify_collinear(cycle));
    }
    cycles
}

fn take_edge(edges: &mut BTreeMap<V, Vec<V>>, from: V, to: V) {
    let ends = edges.get_mut(&from).expect("edge exists");
    let pos = ends.iter().position(|&e| e == to).expect("edge exists");
    ends.remove(pos);
    if ends.is_empty() {
        edges.remove(&from);
    }
}

/// Prefer the sharpest left turn (y-down: left of (dx,dy) is (dy,-dx)),
/// then straight, then right; a reversal never occurs on valid outlines.
fn pick_leftmost(edges: &BTreeMap<V, Vec<V>>, at: V, dir: (i64, i64)) -> V {
    let candidates = edges.get(&at).map(|v| v.as_slice()).unwrap_or(&[]);
    let left = (dir.1, -dir.0);
    let right = (-dir.1, dir.0);
    for want in [left, dir, right] {
        let target = (at.0 + want.0, at.1 + want.1);
        if candidates.contains(&target) {
            return target;
        }
    }
    panic!("outline trace dead-ends at {at:?}; boundary edges are inconsistent");
}

fn simplify_collinear(cycle: Vec<V>) -> Vec<V> {
    let n = cycle.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let prev = cycle[(i + n - 1) % n];
        let cur = cycle[i];
        let next = cycle[(i + 1) % n];
        let d1 = (cur.0 - prev.0, cur.1 - prev.1);
        let d2 = (next.0 - cur.0, next.1 - cur.1);
        if d1 != d2 {
            out.push(cur);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rasterize::rasterize_instances;

    fn px_geom(h: usize, w: usize) -> GridGeometry {
        GridGeometry::pixels(h, w)
    }

    #[test]
    fn single_rectangle_gives_four_corners() {
        let mut labels = Array2::<u32>::zeros((6, 6));
        for r in 1..4 {
            for c in 2..5 {
                labels[(r, c)] = 1;
            }
        }
        let (polys, skipped) = vectorize_instances(&labels, &px_geom(6, 6), "px").unwrap();
        assert!(skipped.is_empty());
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].ring.len(), 4);
        assert_eq!(polys[0].area(), 9.0);
    }

    #[test]
    fn empty_map_gives_empty_list() {
        let labels = Array2::<u32>::zeros((4, 4));
        let (polys, skipped) = vectorize_instances(&labels, &px_geom(4, 4), "px").unwrap();
        assert!(polys.is_empty());
        assert!(skipped.is_empty());
    }

    #[test]
    fn missing_id_reported_skipped() {
        let mut labels = Array2::<u32>::zeros((4, 4));
        labels[(1, 1)] = 2; // id 1 has no pixels
        let (polys, skipped) = vectorize_instances(&labels, &px_geom(4, 4), "px").unwrap();
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].id, 2);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].id, 1);
    }

    #[test]
    fn instance_with_hole_reports_hole_ring() {
        let mut labels = Array2::<u32>::zeros((7, 7));
        for r in 1..6 {
            for c in 1..6 {
                labels[(r, c)] = 1;
            }
        }
        labels[(3, 3)] = 0;
        let (polys, _) = vectorize_instances(&labels, &px_geom(7, 7), "px").unwrap();
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].holes.len(), 1);
        assert_eq!(polys[0].area(), 24.0);
    }

    #[test]
    fn round_trip_reproduces_pixels_exactly() {
        // An L-shaped region plus a separate block.
        let mut labels = Array2::<u32>::zeros((8, 8));
        for r in 1..6 {
            labels[(r, 1)] = 1;
        }
        for c in 1..5 {
            labels[(5, c)] = 1;
        }
        for r in 2..4 {
            for c in 4..7 {
                labels[(r, c)] = 2;
            }
        }
        let geom = GridGeometry::new(8, 8, 4.8, (1000.0, 2000.0));
        let (polys, _) = vectorize_instances(&labels, &geom, "m").unwrap();
        let (back, skipped) = rasterize_instances(&polys, &geom);
        assert!(skipped.is_empty());
        assert_eq!(back, labels);
    }
}
