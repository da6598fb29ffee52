//! Band-sequential `f32` rasters with a JSON sidecar.
//!
//! Geometry is a plain lon/lat grid: `origin_x`/`origin_y` is the upper-left
//! corner and cells are half-open, so a point exactly on a cell edge belongs
//! to the cell to its right (longitude) or below it (latitude).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write_bytes, put_f32s, read_file, read_json, write_json};

/// 25 m expressed in degrees of latitude.
pub const PIXEL_SIZE_DEG: f64 = 25.0 / 111_320.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterGeometry {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl RasterGeometry {
    pub fn new(
        width: usize,
        height: usize,
        origin_x: f64,
        origin_y: f64,
        pixel_size: f64,
    ) -> Result<Self> {
        if width == 0
            || height == 0
            || !(pixel_size > 0.0)
            || !origin_x.is_finite()
            || !origin_y.is_finite()
        {
            return Err(Error::InvalidArgument(format!(
                "raster geometry {width}x{height} at ({origin_x}, {origin_y}) with pixel size {pixel_size}"
            )));
        }
        Ok(Self {
            width,
            height,
            origin_x,
            origin_y,
            pixel_size,
        })
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    /// `(row, col)` of the cell containing the point, if inside the raster.
    pub fn pixel_of(&self, lon: f64, lat: f64) -> Option<(usize, usize)> {
        let col = ((lon - self.origin_x) / self.pixel_size).floor();
        let row = ((self.origin_y - lat) / self.pixel_size).floor();
        (col >= 0.0 && row >= 0.0 && col < self.width as f64 && row < self.height as f64)
            .then_some((row as usize, col as usize))
    }

    /// Centre of a cell.
    pub fn center_of(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Centre of a square window whose upper-left cell is `(row0, col0)`.
    /// Rows and columns may be negative for windows hanging off the raster.
    pub fn window_center(&self, row0: isize, col0: isize, size: usize) -> (f64, f64) {
        let half = size as f64 / 2.0;
        (
            self.origin_x + (col0 as f64 + half) * self.pixel_size,
            self.origin_y - (row0 as f64 + half) * self.pixel_size,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RasterSidecar {
    #[serde(flatten)]
    pub geometry: RasterGeometry,
    /// Always NaN; serialised as `null` because JSON has no NaN.
    pub nodata: Option<f64>,
    pub bands: Vec<String>,
    /// Producer-specific metadata.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub geometry: RasterGeometry,
    pub bands: Vec<String>,
    /// Band-sequential, row-major; NaN marks nodata.
    pub data: Vec<f32>,
}

/// Path of the sidecar that accompanies raster `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Raster {
    pub fn filled(geometry: RasterGeometry, bands: Vec<String>, value: f32) -> Self {
        let data = vec![value; geometry.cells() * bands.len()];
        Self {
            geometry,
            bands,
            data,
        }
    }

    pub fn from_bands(geometry: RasterGeometry, bands: Vec<(String, Vec<f32>)>) -> Result<Self> {
        let mut names = Vec::with_capacity(bands.len());
        let mut data = Vec::with_capacity(geometry.cells() * bands.len());
        for (name, values) in bands {
            if values.len() != geometry.cells() {
                return Err(Error::InvalidArgument(format!(
                    "band {name} has {} values, geometry needs {}",
                    values.len(),
                    geometry.cells()
                )));
            }
            names.push(name);
            data.extend(values);
        }
        Ok(Self {
            geometry,
            bands: names,
            data,
        })
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.geometry.cells();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.geometry.cells();
        &mut self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn get(&self, b: usize, row: usize, col: usize) -> f32 {
        self.data[(b * self.geometry.height + row) * self.geometry.width + col]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_with(path, serde_json::Map::new())
    }

    /// Band-sequential little-endian `f32` payload, as written to disk.
    pub fn data_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        put_f32s(&mut bytes, &self.data);
        bytes
    }

    pub fn write_with(
        &self,
        path: &Path,
        extra: serde_json::Map<String, serde_json::Value>,
    ) -> Result<()> {
        atomic_write_bytes(path, &self.data_bytes())?;
        let sidecar = RasterSidecar {
            geometry: self.geometry,
            nodata: None,
            bands: self.bands.clone(),
            extra,
        };
        write_json(&sidecar_path(path), &sidecar)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(Self::read_with_sidecar(path)?.0)
    }

    pub fn read_with_sidecar(path: &Path) -> Result<(Self, RasterSidecar)> {
        let sidecar: RasterSidecar = read_json(&sidecar_path(path))?;
        let g = sidecar.geometry;
        RasterGeometry::new(g.width, g.height, g.origin_x, g.origin_y, g.pixel_size).map_err(
            |e| Error::CorruptFile {
                path: sidecar_path(path),
                reason: e.to_string(),
            },
        )?;
        let bytes = read_file(path)?;
        let expected = g.cells() * sidecar.bands.len() * 4;
        if bytes.len() != expected {
            return Err(Error::CorruptFile {
                path: path.to_path_buf(),
                reason: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let raster = Self {
            geometry: g,
            bands: sidecar.bands.clone(),
            data,
        };
        Ok((raster, sidecar))
    }
}
