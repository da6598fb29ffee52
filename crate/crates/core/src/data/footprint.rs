//! Point observations and their aggregation onto the pixel grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::raster::{Raster, RasterGeometry};
use crate::error::{Error, Result};
use crate::io::{csv_error, write_csv};

/// One lidar footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintRecord {
    pub lon: f64,
    pub lat: f64,
    /// Quarter index counted from the start of the record period.
    pub quarter: i32,
    pub wsci: f64,
    /// Passed quality filtering.
    pub valid: bool,
}

impl FootprintRecord {
    pub fn usable(&self) -> bool {
        self.valid
            && self.wsci.is_finite()
            && self.wsci > 0.0
            && (-180.0..180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }
}

/// Mean of the usable footprints of `quarter` in each cell; NaN elsewhere.
pub fn grid_footprints<'a>(
    records: impl IntoIterator<Item = &'a FootprintRecord>,
    geometry: RasterGeometry,
    quarter: i32,
) -> Raster {
    let n = geometry.cells();
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for r in records {
        if r.quarter != quarter || !r.usable() {
            continue;
        }
        if let Some((row, col)) = geometry.pixel_of(r.lon, r.lat) {
            let i = row * geometry.width + col;
            sum[i] += r.wsci;
            count[i] += 1;
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| {
            if c == 0 {
                f32::NAN
            } else {
                (s / c as f64) as f32
            }
        })
        .collect();
    Raster {
        geometry,
        bands: vec!["wsci".into()],
        data,
    }
}

pub fn write_footprints(path: &Path, records: &[FootprintRecord]) -> Result<()> {
    write_csv(path, records)
}

pub fn read_footprints(path: &Path) -> Result<Vec<FootprintRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(std::io::BufReader::new(file))
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error(path, e))
}
