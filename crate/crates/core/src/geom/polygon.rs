//! The vector field-plot primitive.

use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};

/// A closed ring of (x, y) vertices. The closing edge from the last vertex
/// back to the first is implicit; rings never repeat the first vertex.
pub type Ring = Vec<(f64, f64)>;

/// A georeferenced simple polygon with a field identifier: the atomic label
/// unit. Coordinates are real-valued (meters or pixel units per `crs_tag`),
/// so re-rasterization at any resolution is lossless at the vector level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPolygon {
    pub id: u32,
    /// Outer ring.
    pub ring: Ring,
    /// Interior rings (holes); usually empty, but instance vectorization
    /// reports them when a region wraps around a void.
    #[serde(default)]
    pub holes: Vec<Ring>,
    /// Opaque name of the coordinate frame the vertices live in.
    pub crs_tag: String,
}

impl FieldPolygon {
    pub fn new(id: u32, ring: Ring, crs_tag: &str) -> Result<Self> {
        let poly = Self { id, ring, holes: Vec::new(), crs_tag: crs_tag.to_string() };
        poly.validate()?;
        Ok(poly)
    }

    /// Axis-aligned rectangle helper, used pervasively in tests.
    pub fn rect(id: u32, x0: f64, y0: f64, x1: f64, y1: f64, crs_tag: &str) -> Self {
        Self {
            id,
            ring: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)],
            holes: Vec::new(),
            crs_tag: crs_tag.to_string(),
        }
    }

    /// Checks the structural invariants: >= 3 vertices, positive area, and a
    /// simple (non-self-intersecting) outer ring.
    pub fn validate(&self) -> Result<()> {
        if self.ring.len() < 3 {
            return Err(FieldkitError::InvalidArgument(format!(
                "polygon {} has {} vertices",
                self.id,
                self.ring.len()
            )));
        }
        if self.area() <= 0.0 {
            return Err(FieldkitError::InvalidArgument(format!(
                "polygon {} has non-positive area",
                self.id
            )));
        }
        if ring_self_intersects(&self.ring) {
            return Err(FieldkitError::InvalidArgument(format!(
                "polygon {} outer ring self-intersects",
                self.id
            )));
        }
        Ok(())
    }

    /// Unsigned area of the outer ring minus the holes.
    pub fn area(&self) -> f64 {
        let outer = polygon_area(&self.ring).abs();
        let holes: f64 = self.holes.iter().map(|h| polygon_area(h).abs()).sum();
        outer - holes
    }

    /// Vertex-average centroid of the outer ring (adequate for anchoring).
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.ring.len() as f64;
        let (sx, sy) = self.ring.iter().fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x, ay + y));
        (sx / n, sy / n)
    }
}

/// Signed shoelace area of a ring.
pub fn polygon_area(ring: &Ring) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x1, y1) = ring[i];
        let (x2, y2) = ring[(i + 1) % n];
        acc += x1 * y2 - x2 * y1;
    }
    acc / 2.0
}

/// O(n^2) segment-pair check; fine at label scale (rings are short).
fn ring_self_intersects(ring: &Ring) -> bool {
    let n = ring.len();
    let seg = |i: usize| (ring[i], ring[(i + 1) % n]);
    for i in 0..n {
        for j in (i + 1)..n {
            // Adjacent segments share an endpoint by construction.
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (a, b) = seg(i);
            let (c, d) = seg(j);
            if segments_properly_intersect(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

fn segments_properly_intersect(
    a: (f64, f64),
    b: (f64, f64),
    c: (f64, f64),
    d: (f64, f64),
) -> bool {
    let cross = |o: (f64, f64), p: (f64, f64), q: (f64, f64)| -> f64 {
        (p.0 - o.0) * (q.1 - o.1) - (p.1 - o.1) * (q.0 - o.0)
    };
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}
