//! Raster containers and their on-disk format.
//!
//! A [`RasterGrid`] is an H×W×C array (stored planar, band-major) with a
//! ground resolution and a geographic origin. On disk it becomes a pair of
//! files: `<stem>.bin`, the raw little-endian planar array, and
//! `<stem>.json`, a sidecar with
//! `{height, width, channels, dtype, pixel_size_m, origin_xy, band_names}`.
//! Supported dtypes are `f32` (imagery, labels, predictions), `u8` (binary
//! masks) and `u32` (instance ids).

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};

/// Geometry of a raster without its data: enough to place pixels on the
/// ground. `origin` is the geo coordinate of the *outer top-left corner* of
/// pixel (0, 0); x grows with columns, y shrinks with rows (north up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub height: usize,
    pub width: usize,
    /// Ground size of one pixel in meters.
    pub pixel_size: f64,
    /// Geo (x, y) of the top-left corner.
    pub origin: (f64, f64),
}

impl GridGeometry {
    pub fn new(height: usize, width: usize, pixel_size: f64, origin: (f64, f64)) -> Self {
        Self { height, width, pixel_size, origin }
    }

    /// Geometry in bare pixel units (pixel_size 1, origin 0).
    pub fn pixels(height: usize, width: usize) -> Self {
        Self::new(height, width, 1.0, (0.0, 0.0))
    }

    /// Geo coordinates of the center of pixel (row, col).
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.pixel_size,
            self.origin.1 - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Map a geo coordinate into continuous pixel space (col-like x, row-like y).
    pub fn geo_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin.0) / self.pixel_size, (self.origin.1 - y) / self.pixel_size)
    }

    /// Map a continuous pixel-space coordinate back to geo.
    pub fn pixel_to_geo(&self, px: f64, py: f64) -> (f64, f64) {
        (self.origin.0 + px * self.pixel_size, self.origin.1 - py * self.pixel_size)
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Element types the raster container can hold.
pub trait RasterElem: Copy + Default + Send + Sync + 'static {
    const DTYPE: &'static str;
    fn write_le(buf: &mut Vec<u8>, v: Self);
    fn read_le(bytes: &[u8]) -> Self;
    fn byte_len() -> usize;
}

impl RasterElem for f32 {
    const DTYPE: &'static str = "f32";
    fn write_le(buf: &mut Vec<u8>, v: Self) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
    fn byte_len() -> usize {
        4
    }
}

impl RasterElem for u8 {
    const DTYPE: &'static str = "u8";
    fn write_le(buf: &mut Vec<u8>, v: Self) {
        buf.push(v);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
    fn byte_len() -> usize {
        1
    }
}

impl RasterElem for u32 {
    const DTYPE: &'static str = "u32";
    fn write_le(buf: &mut Vec<u8>, v: Self) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
    fn byte_len() -> usize {
        4
    }
}

/// Sidecar metadata mirroring the binary blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub dtype: String,
    pub pixel_size_m: f64,
    pub origin_xy: (f64, f64),
    pub band_names: Vec<String>,
}

/// An H×W×C raster (stored as C×H×W planar) with ground geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid<T: RasterElem> {
    /// Planar band data, shape (channels, height, width).
    pub data: Array3<T>,
    pub pixel_size: f64,
    pub origin: (f64, f64),
    pub band_names: Vec<String>,
}

impl<T: RasterElem> RasterGrid<T> {
    pub fn new(
        data: Array3<T>,
        pixel_size: f64,
        origin: (f64, f64),
        band_names: Vec<String>,
    ) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(FieldkitError::InvalidArgument(format!(
                "raster dims must be >= 1, got {c}x{h}x{w}"
            )));
        }
        if pixel_size <= 0.0 {
            return Err(FieldkitError::InvalidArgument(format!(
                "pixel_size must be > 0, got {pixel_size}"
            )));
        }
        if band_names.len() != c {
            return Err(FieldkitError::InvalidArgument(format!(
                "{} band names for {c} channels",
                band_names.len()
            )));
        }
        Ok(Self { data, pixel_size, origin, band_names })
    }

    /// Single-band raster in bare pixel geometry.
    pub fn single_band(plane: Array2<T>, name: &str) -> Self {
        let data = plane.insert_axis(ndarray::Axis(0));
        Self { data, pixel_size: 1.0, origin: (0.0, 0.0), band_names: vec![name.to_string()] }
    }

    /// Single-band raster with explicit geometry.
    pub fn single_band_geo(plane: Array2<T>, name: &str, geom: &GridGeometry) -> Self {
        let data = plane.insert_axis(ndarray::Axis(0));
        Self {
            data,
            pixel_size: geom.pixel_size,
            origin: geom.origin,
            band_names: vec![name.to_string()],
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(self.height(), self.width(), self.pixel_size, self.origin)
    }

    /// Write `<stem>.bin` + `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let sidecar = RasterSidecar {
            height: self.height(),
            width: self.width(),
            channels: self.channels(),
            dtype: T::DTYPE.to_string(),
            pixel_size_m: self.pixel_size,
            origin_xy: self.origin,
            band_names: self.band_names.clone(),
        };
        let mut buf = Vec::with_capacity(self.data.len() * T::byte_len());
        for v in self.data.iter() {
            T::write_le(&mut buf, *v);
        }
        fs::write(stem.with_extension("bin"), &buf)?;
        fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Read a raster written by [`RasterGrid::save`].
    pub fn load(stem: &Path) -> Result<Self> {
        let sidecar: RasterSidecar =
            serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        if sidecar.dtype != T::DTYPE {
            return Err(FieldkitError::Format(format!(
                "raster {} holds dtype {}, requested {}",
                stem.display(),
                sidecar.dtype,
                T::DTYPE
            )));
        }
        let raw = fs::read(stem.with_extension("bin"))?;
        let n = sidecar.channels * sidecar.height * sidecar.width;
        if raw.len() != n * T::byte_len() {
            return Err(FieldkitError::Format(format!(
                "raster {} has {} bytes, expected {}",
                stem.display(),
                raw.len(),
                n * T::byte_len()
            )));
        }
        let values: Vec<T> = raw.chunks_exact(T::byte_len()).map(T::read_le).collect();
        let data =
            Array3::from_shape_vec((sidecar.channels, sidecar.height, sidecar.width), values)
                .map_err(|e| FieldkitError::Format(e.to_string()))?;
        RasterGrid::new(data, sidecar.pixel_size_m, sidecar.origin_xy, sidecar.band_names)
    }
}
