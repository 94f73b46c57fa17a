//! GeoJSON FeatureCollection ingest/emit for field polygons.
//!
//! One feature per field with an integer `id` property and a `crs_tag`
//! property naming the coordinate frame. Exteriors are written
//! counter-clockwise and holes clockwise; readers accept any orientation.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{FieldkitError, Result};

use super::polygon::{polygon_area, FieldPolygon, Ring};

pub fn write_geojson(polys: &[FieldPolygon], path: &Path) -> Result<()> {
    let features: Vec<Value> = polys
        .iter()
        .map(|p| {
            let mut rings: Vec<Vec<[f64; 2]>> = Vec::with_capacity(1 + p.holes.len());
            rings.push(ring_coords(&p.ring, true));
            for hole in &p.holes {
                rings.push(ring_coords(hole, false));
            }
            json!({
                "type": "Feature",
                "properties": { "id": p.id, "crs_tag": p.crs_tag },
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    let doc = json!({ "type": "FeatureCollection", "features": features });
    fs::write(path, serde_json::to_vec_pretty(&doc)?)?;
    Ok(())
}

/// Closed coordinate list (first vertex repeated last), oriented CCW for
/// exteriors and CW for holes.
fn ring_coords(ring: &Ring, exterior: bool) -> Vec<[f64; 2]> {
    let ccw = polygon_area(ring) > 0.0;
    let mut pts: Vec<[f64; 2]> = ring.iter().map(|&(x, y)| [x, y]).collect();
    if ccw != exterior {
        pts.reverse();
    }
    if let Some(&first) = pts.first() {
        pts.push(first);
    }
    pts
}

pub fn read_geojson(path: &Path) -> Result<Vec<FieldPolygon>> {
    let doc: Value = serde_json::from_slice(&fs::read(path)?)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| FieldkitError::Format("GeoJSON lacks a features array".to_string()))?;
    let mut polys = Vec::with_capacity(features.len());
    for (i, feat) in features.iter().enumerate() {
        let props = feat.get("properties").cloned().unwrap_or(Value::Null);
        let id = props
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| FieldkitError::Format(format!("feature {i} lacks integer id")))?
            as u32;
        let crs_tag =
            props.get("crs_tag").and_then(Value::as_str).unwrap_or("unspecified").to_string();
        let geom = feat
            .get("geometry")
            .ok_or_else(|| FieldkitError::Format(format!("feature {i} lacks geometry")))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(FieldkitError::Format(format!("feature {i} is not a Polygon")));
        }
        let rings = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| FieldkitError::Format(format!("feature {i} lacks coordinates")))?;
        if rings.is_empty() {
            return Err(FieldkitError::Format(format!("feature {i} has no rings")));
        }
        let mut parsed: Vec<Ring> = Vec::with_capacity(rings.len());
        for ring in rings {
            parsed.push(parse_ring(ring, i)?);
        }
        let outer = parsed.remove(0);
        polys.push(FieldPolygon { id, ring: outer, holes: parsed, crs_tag });
    }
    Ok(polys)
}

fn parse_ring(v: &Value, feat: usize) -> Result<Ring> {
    let coords = v
        .as_array()
        .ok_or_else(|| FieldkitError::Format(format!("feature {feat} ring is not an array")))?;
    let mut ring: Ring = Vec::with_capacity(coords.len());
    for pt in coords {
        let pair = pt
            .as_array()
            .filter(|a| a.len() >= 2)
            .ok_or_else(|| FieldkitError::Format(format!("feature {feat} has a bad coordinate")))?;
        let x = pair[0].as_f64().ok_or_else(|| {
            FieldkitError::Format(format!("feature {feat} has a non-numeric coordinate"))
        })?;
        let y = pair[1].as_f64().ok_or_else(|| {
            FieldkitError::Format(format!("feature {feat} has a non-numeric coordinate"))
        })?;
        ring.push((x, y));
    }
    // Drop the GeoJSON closing vertex; rings here are implicitly closed.
    if ring.len() >= 2 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(FieldkitError::Format(format!("feature {feat} ring has < 3 vertices")));
    }
    Ok(ring)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geojson_round_trip_preserves_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = FieldPolygon::rect(3, 10.0, 20.0, 30.0, 44.0, "utm-like");
        p.holes.push(vec![(15.0, 25.0), (15.0, 30.0), (20.0, 30.0), (20.0, 25.0)]);
        let path = dir.path().join("fields.geojson");
        write_geojson(&[p.clone()], &path).unwrap();
        let back = read_geojson(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].id, 3);
        assert_eq!(back[0].crs_tag, "utm-like");
        assert!((back[0].area() - p.area()).abs() < 1e-9);
        assert_eq!(back[0].holes.len(), 1);
    }

    #[test]
    fn rejects_documents_without_features() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.geojson");
        std::fs::write(&path, b"{\"type\": \"FeatureCollection\"}").unwrap();
        assert!(read_geojson(&path).is_err());
    }
}
