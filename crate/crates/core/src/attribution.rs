//! Occlusion attribution: per-channel importance and spatial influence of
//! input pixels on one output pixel.
//!
//! Perturbed inputs replace values with a per-channel background and the
//! attribution is the absolute change of the mean prediction. All passes run
//! in eval mode, so reports are deterministic.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Chip, Raster, RasterGeometry, LAYER_NAMES};
use crate::error::{Error, Result};
use crate::io::write_json;
use crate::network::{ModelState, CHIP_SIZE, INPUT_CHANNELS};
use crate::rng::RngStream;
use crate::tensor::{Mode, Tensor};

pub const METHOD: &str = "occlusion importance";
pub const BACKGROUND_CHIPS: usize = 100;
/// Length of the distance-decay curve (Chebyshev distances `0..DECAY_LEN`).
pub const DECAY_LEN: usize = 28;
const BATCH: usize = 16;

/// Per-channel means over a seeded sample of up to 100 chips. NaN cells are
/// skipped.
pub fn background(chips: &[&Chip], seed: u64) -> Result<Vec<f32>> {
    if chips.is_empty() {
        return Err(Error::InvalidArgument(
            "background needs at least one chip".into(),
        ));
    }
    let rng = RngStream::new(seed, 0xBAC0_0000);
    let mut order: Vec<(u64, usize)> = (0..chips.len())
        .map(|i| (rng.u64_at(chips[i].id), i))
        .collect();
    order.sort_unstable();
    let plane = CHIP_SIZE * CHIP_SIZE;
    let mut sums = [0.0f64; INPUT_CHANNELS];
    let mut counts = vec![0usize; INPUT_CHANNELS];
    for &(_, i) in order.iter().take(BACKGROUND_CHIPS) {
        for (ch, values) in chips[i].input.chunks_exact(plane).enumerate() {
            for v in values.iter().filter(|v| v.is_finite()) {
                sums[ch] += *v as f64;
                counts[ch] += 1;
            }
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { (s / n as f64) as f32 } else { 0.0 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub method: String,
    pub chip_id: u64,
    /// Target pixel in output (cropped) coordinates.
    pub row: usize,
    pub col: usize,
    pub patch_radius: usize,
    pub channels: Vec<String>,
    pub channel_importance: Vec<f64>,
    /// `40 x 40` row-major influence of each input pixel.
    pub influence: Vec<f64>,
    /// Mean influence per Chebyshev ring; `None` where a ring has no pixels.
    pub decay: Vec<Option<f64>>,
}

impl AttributionReport {
    /// Mean influence over all pixels farther than `distance` from the target,
    /// relative to the distance-0 influence.
    pub fn relative_influence_beyond(&self, distance: usize) -> Option<f64> {
        let near = self.decay.first().copied().flatten()?;
        let far = self.mean_influence_beyond(distance)?;
        (near > 0.0).then(|| far / near)
    }

    /// Mean influence over all pixels farther than `distance` from the target.
    pub fn mean_influence_beyond(&self, distance: usize) -> Option<f64> {
        let (tr, tc) = self.input_pixel();
        let far: Vec<f64> = (0..CHIP_SIZE * CHIP_SIZE)
            .filter(|&i| chebyshev(i / CHIP_SIZE, i % CHIP_SIZE, tr, tc) > distance)
            .map(|i| self.influence[i])
            .collect();
        (!far.is_empty()).then(|| far.iter().sum::<f64>() / far.len() as f64)
    }

    fn input_pixel(&self) -> (usize, usize) {
        let m = (CHIP_SIZE - (self.influence.len() as f64).sqrt() as usize) / 2;
        (self.row + m, self.col + m)
    }
}

/// Far-field influence of the decay curve averaged over several targets:
/// mean influence beyond `distance` divided by the mean distance-0 influence.
pub fn pooled_influence_beyond(reports: &[AttributionReport], distance: usize) -> Option<f64> {
    let (mut far, mut near) = (0.0, 0.0);
    for r in reports {
        far += r.mean_influence_beyond(distance)?;
        near += r.decay.first().copied().flatten()?;
    }
    (near > 0.0).then(|| far / near)
}

fn chebyshev(r: usize, c: usize, tr: usize, tc: usize) -> usize {
    r.abs_diff(tr).max(c.abs_diff(tc))
}

fn check_target(
    model: &ModelState<f32>,
    chip: &Chip,
    row: usize,
    col: usize,
    bg: &[f32],
) -> Result<()> {
    let out = model.spec().output_size();
    if row >= out || col >= out {
        return Err(Error::InvalidArgument(format!(
            "target pixel ({row}, {col}) outside the {out}x{out} output"
        )));
    }
    if bg.len() != INPUT_CHANNELS || chip.input.len() != INPUT_CHANNELS * CHIP_SIZE * CHIP_SIZE {
        return Err(Error::InvalidArgument(
            "chip or background has the wrong channel count".into(),
        ));
    }
    Ok(())
}

/// Mean-channel prediction at `(row, col)` for each input.
fn predict_at(
    model: &ModelState<f32>,
    inputs: &[Vec<f32>],
    row: usize,
    col: usize,
) -> Result<Vec<f64>> {
    let out = model.spec().output_size();
    let per_batch: Vec<Result<Vec<f64>>> = inputs
        .par_chunks(BATCH)
        .map(|chunk| {
            let mut data = Vec::with_capacity(chunk.len() * chunk[0].len());
            chunk.iter().for_each(|x| data.extend_from_slice(x));
            let x = Tensor::from_vec([chunk.len(), INPUT_CHANNELS, CHIP_SIZE, CHIP_SIZE], data)?;
            let y = model.forward(&x, Mode::Eval, &mut RngStream::new(0, 0))?;
            Ok((0..chunk.len())
                .map(|b| y.plane_slice(b, 0)[row * out + col] as f64)
                .collect())
        })
        .collect();
    let mut values = Vec::with_capacity(inputs.len());
    for r in per_batch {
        values.extend(r?);
    }
    Ok(values)
}

/// `|prediction(chip) - prediction(chip with channel c set to background)|`.
pub fn channel_importance(
    model: &ModelState<f32>,
    chip: &Chip,
    bg: &[f32],
    row: usize,
    col: usize,
) -> Result<Vec<f64>> {
    check_target(model, chip, row, col, bg)?;
    let plane = CHIP_SIZE * CHIP_SIZE;
    let mut inputs = vec![chip.input.clone()];
    for (ch, &b) in bg.iter().enumerate() {
        let mut x = chip.input.clone();
        x[ch * plane..(ch + 1) * plane].fill(b);
        inputs.push(x);
    }
    let y = predict_at(model, &inputs, row, col)?;
    Ok(y[1..].iter().map(|v| (v - y[0]).abs()).collect())
}

/// Influence grid (`40 x 40`) from occluding a `(2r+1)^2` patch around each
/// input pixel, and its ring-average decay curve.
pub fn spatial_influence(
    model: &ModelState<f32>,
    chip: &Chip,
    bg: &[f32],
    row: usize,
    col: usize,
    radius: usize,
) -> Result<(Vec<f64>, Vec<Option<f64>>)> {
    check_target(model, chip, row, col, bg)?;
    let plane = CHIP_SIZE * CHIP_SIZE;
    let mut inputs = vec![chip.input.clone()];
    for r in 0..CHIP_SIZE {
        for c in 0..CHIP_SIZE {
            let mut x = chip.input.clone();
            for (ch, &b) in bg.iter().enumerate() {
                for rr in r.saturating_sub(radius)..(r + radius + 1).min(CHIP_SIZE) {
                    for cc in c.saturating_sub(radius)..(c + radius + 1).min(CHIP_SIZE) {
                        x[ch * plane + rr * CHIP_SIZE + cc] = b;
                    }
                }
            }
            inputs.push(x);
        }
    }
    let y = predict_at(model, &inputs, row, col)?;
    let influence: Vec<f64> = y[1..].iter().map(|v| (v - y[0]).abs()).collect();
    let m = model.spec().border_margin;
    let (tr, tc) = (row + m, col + m);
    let mut sums = vec![0.0f64; DECAY_LEN];
    let mut counts = vec![0usize; DECAY_LEN];
    for (i, v) in influence.iter().enumerate() {
        let d = chebyshev(i / CHIP_SIZE, i % CHIP_SIZE, tr, tc);
        if d < DECAY_LEN {
            sums[d] += v;
            counts[d] += 1;
        }
    }
    let decay = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    Ok((influence, decay))
}

/// Both attributions for one target pixel.
pub fn attribute(
    model: &ModelState<f32>,
    chip: &Chip,
    bg: &[f32],
    row: usize,
    col: usize,
    radius: usize,
) -> Result<AttributionReport> {
    let channel_importance = channel_importance(model, chip, bg, row, col)?;
    let (influence, decay) = spatial_influence(model, chip, bg, row, col, radius)?;
    Ok(AttributionReport {
        method: METHOD.into(),
        chip_id: chip.id,
        row,
        col,
        patch_radius: radius,
        channels: LAYER_NAMES.iter().map(|s| s.to_string()).collect(),
        channel_importance,
        influence,
        decay,
    })
}

/// Writes the report as JSON and the influence grid as a one-band raster
/// placed on the chip's footprint.
pub fn write_report(
    report: &AttributionReport,
    chip: &Chip,
    pixel_size: f64,
    json: &Path,
    raster: &Path,
) -> Result<()> {
    write_json(json, report)?;
    let half = CHIP_SIZE as f64 / 2.0 * pixel_size;
    let g = RasterGeometry::new(
        CHIP_SIZE,
        CHIP_SIZE,
        chip.lon - half,
        chip.lat + half,
        pixel_size,
    )?;
    let data = report.influence.iter().map(|&v| v as f32).collect();
    let grid = Raster::from_bands(g, vec![(METHOD.replace(' ', "_"), data)])?;
    let mut extra = serde_json::Map::new();
    extra.insert("method".into(), METHOD.into());
    extra.insert("target".into(), serde_json::json!([report.row, report.col]));
    grid.write_with(raster, extra)
}
