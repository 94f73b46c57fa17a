//! Field polygons and their conversion to and from label rasters.
//!
//! Rasterization follows a pixel-center-in-polygon rule with even-odd
//! parity, so it is deterministic and cheap to verify against a brute-force
//! per-pixel oracle. The three training labels follow the multi-task
//! recipe: binary field extent, a 2-px interior boundary ring, and a
//! per-field max-normalized distance-to-boundary, plus a supervision mask
//! that limits the loss to labeled fields and their dilated surroundings.

mod geojson;
mod polygon;
mod rasterize;
mod vectorize;

pub use geojson::{read_geojson, write_geojson};
pub use polygon::{polygon_area, FieldPolygon, Ring};
pub use rasterize::{
    build_label_stack, build_mask, rasterize_boundary, rasterize_distance, rasterize_extent,
    rasterize_instances, LabelStack, SkippedPolygon,
};
pub use vectorize::vectorize_instances;
