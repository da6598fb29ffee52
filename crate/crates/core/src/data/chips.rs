//! Chips: 40x40 training/inference samples, their file format and the input
//! normalisation computed over them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::blocks::{block_id, split_of, Split, BLOCK_SIZE_DEG, TEST_FRACTION};
use crate::data::raster::Raster;
use crate::error::{Error, Result};
use crate::io::{atomic_write, put_f32s, read_file, LeReader};
use crate::network::{CHIP_SIZE, INPUT_CHANNELS};
use crate::rng::RngStream;

/// Input layer order.
pub const LAYER_NAMES: [&str; INPUT_CHANNELS] = [
    "hh",
    "hv",
    "vv",
    "vh",
    "inc_palsar",
    "inc_sentinel",
    "dem",
    "sin_lon",
    "cos_lon",
    "lat_scaled",
];
/// Raster-derived layers; the remaining three are coordinate encodings.
pub const SAR_LAYERS: usize = 7;
pub const CHIP_PIXELS: usize = CHIP_SIZE * CHIP_SIZE;
pub const MIN_VALID_TARGETS: usize = 16;
pub const MAX_CHIPS_PER_BLOCK: usize = 300;

const MAGIC: &[u8; 4] = b"WSCF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    pub id: u64,
    pub lon: f64,
    pub lat: f64,
    pub quarter: i32,
    pub block: u64,
    /// `10 x 40 x 40`, layer order [`LAYER_NAMES`].
    pub input: Vec<f32>,
    /// `40 x 40`, NaN where unobserved.
    pub target: Vec<f32>,
}

impl Chip {
    pub fn valid_targets(&self) -> usize {
        self.target.iter().filter(|v| is_valid(**v)).count()
    }

    /// Upper-left raster cell of the chip, recovered from its id.
    pub fn origin(&self) -> (usize, usize) {
        (
            ((self.id >> 24) & 0xFF_FFFF) as usize,
            (self.id & 0xFF_FFFF) as usize,
        )
    }
}

#[inline]
fn is_valid(v: f32) -> bool {
    v.is_finite() && v > 0.0
}

pub fn chip_id(quarter: i32, row0: usize, col0: usize) -> u64 {
    ((quarter as u16 as u64) << 48) | ((row0 as u64 & 0xFF_FFFF) << 24) | (col0 as u64 & 0xFF_FFFF)
}

/// `sin(lon)`, `cos(lon)` and `lat / 90`.
pub fn encode_coordinates(lon: f64, lat: f64) -> [f32; 3] {
    let r = lon.to_radians();
    [r.sin() as f32, r.cos() as f32, (lat / 90.0) as f32]
}

/// Copies the `size x size` window at `(row0, col0)` of the SAR stack into
/// `out` (`10 x size x size`) and appends the coordinate layers of the window
/// centre. Cells outside the raster are NaN. Returns whether the window is
/// complete.
pub fn fill_window(
    inputs: &Raster,
    row0: isize,
    col0: isize,
    size: usize,
    out: &mut [f32],
) -> bool {
    let g = inputs.geometry;
    let plane = size * size;
    debug_assert_eq!(out.len(), INPUT_CHANNELS * plane);
    let mut complete = true;
    for b in 0..SAR_LAYERS {
        let band = inputs.band(b);
        for r in 0..size {
            let rr = row0 + r as isize;
            let dst = &mut out[b * plane + r * size..b * plane + (r + 1) * size];
            if rr < 0 || rr >= g.height as isize {
                dst.fill(f32::NAN);
                complete = false;
                continue;
            }
            for (c, d) in dst.iter_mut().enumerate() {
                let cc = col0 + c as isize;
                *d = if cc < 0 || cc >= g.width as isize {
                    f32::NAN
                } else {
                    band[rr as usize * g.width + cc as usize]
                };
                complete &= d.is_finite();
            }
        }
    }
    let (lon, lat) = g.window_center(row0, col0, size);
    for (k, v) in encode_coordinates(lon, lat).into_iter().enumerate() {
        out[(SAR_LAYERS + k) * plane..(SAR_LAYERS + k + 1) * plane].fill(v);
    }
    complete
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub quarter: i32,
    /// Spacing between chip origins in pixels.
    pub stride: usize,
    pub min_valid: usize,
    pub max_per_block: usize,
    pub block_size_deg: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            quarter: 0,
            stride: CHIP_SIZE,
            min_valid: MIN_VALID_TARGETS,
            max_per_block: MAX_CHIPS_PER_BLOCK,
            block_size_deg: BLOCK_SIZE_DEG,
            seed: 0,
        }
    }
}

/// Whether a candidate window qualifies as a chip.
pub fn accept_window(input_complete: bool, target: &[f32], min_valid: usize) -> bool {
    input_complete && target.iter().filter(|v| is_valid(**v)).count() >= min_valid
}

/// Scans the rasters on a `stride` grid and keeps windows with a complete
/// input stack and at least `min_valid` observed targets, then caps each
/// block at `max_per_block` by seeded reservoir sampling. Output is sorted by
/// chip id.
pub fn sample_chips(inputs: &Raster, target: &Raster, cfg: &SampleConfig) -> Result<Vec<Chip>> {
    if inputs.geometry != target.geometry {
        return Err(Error::InvalidArgument(
            "input and target rasters are not aligned".into(),
        ));
    }
    if inputs.band_count() != SAR_LAYERS || target.band_count() != 1 {
        return Err(Error::InvalidArgument(format!(
            "expected {SAR_LAYERS} input bands and 1 target band, got {} and {}",
            inputs.band_count(),
            target.band_count()
        )));
    }
    if cfg.stride == 0 {
        return Err(Error::InvalidArgument(
            "chip stride must be positive".into(),
        ));
    }
    let g = inputs.geometry;
    let mut reservoirs: BTreeMap<u64, (u64, Vec<Chip>)> = BTreeMap::new();
    if g.width < CHIP_SIZE || g.height < CHIP_SIZE {
        return Ok(Vec::new());
    }
    let base = RngStream::new(cfg.seed, 0x5A3F_1E00);
    let mut input = vec![0.0f32; INPUT_CHANNELS * CHIP_PIXELS];
    for row0 in (0..=g.height - CHIP_SIZE).step_by(cfg.stride) {
        for col0 in (0..=g.width - CHIP_SIZE).step_by(cfg.stride) {
            let mut tgt = Vec::with_capacity(CHIP_PIXELS);
            for r in 0..CHIP_SIZE {
                let start = (row0 + r) * g.width + col0;
                tgt.extend_from_slice(&target.data[start..start + CHIP_SIZE]);
            }
            if tgt.iter().filter(|v| is_valid(**v)).count() < cfg.min_valid {
                continue;
            }
            let complete = fill_window(inputs, row0 as isize, col0 as isize, CHIP_SIZE, &mut input);
            if !accept_window(complete, &tgt, cfg.min_valid) {
                continue;
            }
            let (lon, lat) = g.window_center(row0 as isize, col0 as isize, CHIP_SIZE);
            let block = block_id(lon, lat, cfg.block_size_deg);
            let chip = Chip {
                id: chip_id(cfg.quarter, row0, col0),
                lon,
                lat,
                quarter: cfg.quarter,
                block,
                input: input.clone(),
                target: tgt
                    .iter()
                    .map(|&v| if is_valid(v) { v } else { f32::NAN })
                    .collect(),
            };
            let (seen, kept) = reservoirs.entry(block).or_default();
            if kept.len() < cfg.max_per_block {
                kept.push(chip);
            } else {
                let j = base.derive(&[block]).u64_at(*seen) % (*seen + 1);
                if (j as usize) < cfg.max_per_block {
                    kept[j as usize] = chip;
                }
            }
            *seen += 1;
        }
    }
    let mut out: Vec<Chip> = reservoirs.into_values().flat_map(|(_, v)| v).collect();
    out.sort_by_key(|c| c.id);
    Ok(out)
}

/// Seeded block-level split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            test_fraction: TEST_FRACTION,
        }
    }
}

impl SplitConfig {
    pub fn split(&self, chip: &Chip) -> Split {
        split_of(chip.block, self.seed, self.test_fraction)
    }

    pub fn select<'a>(&self, chips: &'a [Chip], which: Split) -> Vec<&'a Chip> {
        chips.iter().filter(|c| self.split(c) == which).collect()
    }
}

pub fn write_chips(path: &Path, chips: &[Chip]) -> Result<()> {
    for c in chips {
        if c.input.len() != INPUT_CHANNELS * CHIP_PIXELS || c.target.len() != CHIP_PIXELS {
            return Err(Error::InvalidArgument(format!(
                "chip {} has the wrong size",
                c.id
            )));
        }
    }
    atomic_write(path, |w| {
        let mut bytes = Vec::with_capacity(4 + 4 + 8);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(chips.len() as u64).to_le_bytes());
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        for c in chips {
            bytes.clear();
            bytes.extend_from_slice(&c.id.to_le_bytes());
            bytes.extend_from_slice(&c.lon.to_le_bytes());
            bytes.extend_from_slice(&c.lat.to_le_bytes());
            bytes.extend_from_slice(&c.quarter.to_le_bytes());
            bytes.extend_from_slice(&c.block.to_le_bytes());
            put_f32s(&mut bytes, &c.input);
            put_f32s(&mut bytes, &c.target);
            w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    })
}

pub fn read_chips(path: &Path) -> Result<Vec<Chip>> {
    let bytes = read_file(path)?;
    let corrupt = |reason: &str| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = LeReader::new(&bytes);
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(corrupt("missing WSCF magic"));
    }
    match r.u32() {
        Some(VERSION) => {}
        Some(v) => return Err(corrupt(&format!("unsupported version {v}"))),
        None => return Err(corrupt("truncated header")),
    }
    let count = r.u64().ok_or_else(|| corrupt("truncated header"))?;
    let record = 8 + 8 + 8 + 4 + 8 + 4 * (INPUT_CHANNELS * CHIP_PIXELS + CHIP_PIXELS);
    if (r.remaining() as u64) != count.saturating_mul(record as u64) {
        return Err(corrupt(&format!(
            "{count} chips need {} bytes, found {}",
            count as u128 * record as u128,
            r.remaining()
        )));
    }
    let mut chips = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let truncated = || corrupt("truncated chip record");
        chips.push(Chip {
            id: r.u64().ok_or_else(truncated)?,
            lon: r.f64().ok_or_else(truncated)?,
            lat: r.f64().ok_or_else(truncated)?,
            quarter: r.i32().ok_or_else(truncated)?,
            block: r.u64().ok_or_else(truncated)?,
            input: r.f32s(INPUT_CHANNELS * CHIP_PIXELS).ok_or_else(truncated)?,
            target: r.f32s(CHIP_PIXELS).ok_or_else(truncated)?,
        });
    }
    Ok(chips)
}

/// Per-channel input normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormConstants {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for NormConstants {
    fn default() -> Self {
        Self {
            mean: vec![0.0; INPUT_CHANNELS],
            std: vec![1.0; INPUT_CHANNELS],
        }
    }
}

/// Streaming mean and standard deviation of the SAR layers, merging per-chip
/// moments. Coordinate layers are already in `[-1, 1]` and keep `(0, 1)`.
/// A channel with (near) zero spread gets std 1.
pub fn compute_norm_constants<'a>(
    chips: impl IntoIterator<Item = &'a Chip>,
) -> Result<NormConstants> {
    let mut n = 0.0f64;
    let mut mean = [0.0f64; SAR_LAYERS];
    let mut m2 = [0.0f64; SAR_LAYERS];
    for chip in chips {
        let nb = CHIP_PIXELS as f64;
        for c in 0..SAR_LAYERS {
            let v = &chip.input[c * CHIP_PIXELS..(c + 1) * CHIP_PIXELS];
            let mb = v.iter().map(|&x| x as f64).sum::<f64>() / nb;
            let m2b: f64 = v.iter().map(|&x| (x as f64 - mb).powi(2)).sum();
            let delta = mb - mean[c];
            let total = n + nb;
            mean[c] += delta * nb / total;
            m2[c] += m2b + delta * delta * n * nb / total;
        }
        n += nb;
    }
    if n == 0.0 {
        return Err(Error::InvalidArgument(
            "normalisation needs at least one chip".into(),
        ));
    }
    let mut out = NormConstants::default();
    for c in 0..SAR_LAYERS {
        let std = (m2[c] / n).sqrt();
        out.mean[c] = mean[c];
        out.std[c] = if std > 1e-6 * mean[c].abs().max(1.0) {
            std
        } else {
            log::warn!("input layer {} is constant; using std 1", LAYER_NAMES[c]);
            1.0
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::raster::RasterGeometry;

    #[test]
    fn coordinate_encoding_fixtures() {
        let close = |a: [f32; 3], b: [f32; 3]| a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-6);
        assert!(close(encode_coordinates(0.0, 0.0), [0.0, 1.0, 0.0]));
        assert!(close(encode_coordinates(180.0, 0.0), [0.0, -1.0, 0.0]));
        assert!(close(encode_coordinates(-90.0, 0.0), [-1.0, 0.0, 0.0]));
        assert!((encode_coordinates(0.0, 51.6)[2] - 0.573_333_3).abs() < 1e-6);
    }

    #[test]
    fn acceptance_threshold_is_sixteen() {
        let mut t = vec![f32::NAN; CHIP_PIXELS];
        for v in t.iter_mut().take(15) {
            *v = 9.0;
        }
        assert!(!accept_window(true, &t, MIN_VALID_TARGETS));
        t[15] = 9.0;
        assert!(accept_window(true, &t, MIN_VALID_TARGETS));
        assert!(!accept_window(false, &t, MIN_VALID_TARGETS));
    }

    #[test]
    fn window_outside_raster_is_incomplete() {
        let g = RasterGeometry::new(50, 50, 0.0, 1.0, 0.01).unwrap();
        let r = Raster::filled(
            g,
            LAYER_NAMES[..SAR_LAYERS]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            1.0,
        );
        let mut out = vec![0.0; INPUT_CHANNELS * CHIP_PIXELS];
        assert!(fill_window(&r, 0, 0, CHIP_SIZE, &mut out));
        assert!(fill_window(&r, 10, 10, CHIP_SIZE, &mut out));
        assert!(!fill_window(&r, -1, 0, CHIP_SIZE, &mut out));
        assert!(!fill_window(&r, 0, 11, CHIP_SIZE, &mut out));
        assert!(out[..CHIP_PIXELS].iter().any(|v| v.is_nan()));
    }
}
