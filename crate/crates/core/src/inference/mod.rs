//! Wall-to-wall prediction with shifted-window Monte Carlo dropout
//! ensembles, tiling and mosaicking.
//!
//! Window cores sit on a global grid with a 32-pixel stride, shifted
//! diagonally by each offset. A pixel is predicted by the one window per
//! offset whose core contains it; windows that would leave the raster are
//! pushed back inside, so every pixel except the outer border frame is
//! covered exactly `offsets x passes` times. Dropout draws are derived from
//! the seed and the window's position, which makes results independent of
//! tiling, job order and worker count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fill_window, Raster, RasterGeometry, SAR_LAYERS};
use crate::error::{Error, Result};
use crate::metrics::total_std;
use crate::network::{ModelState, CHIP_SIZE, INPUT_CHANNELS};
use crate::rng::RngStream;
use crate::tensor::{Mode, Tensor};

pub const DEFAULT_OFFSETS: [usize; 5] = [0, 6, 13, 19, 26];
pub const DEFAULT_TILE_SIZE: usize = 1600;
pub const MOSAIC_BANDS: [&str; 4] = ["mean", "sigma_total", "sigma_data", "sigma_model"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Diagonal window-grid shifts in pixels.
    pub offsets: Vec<usize>,
    /// Stochastic passes per offset.
    pub mc_passes: usize,
    /// Keep dropout active; off gives deterministic eval-mode passes.
    pub dropout: bool,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            offsets: DEFAULT_OFFSETS.to_vec(),
            mc_passes: 1,
            dropout: true,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn passes_per_pixel(&self) -> usize {
        self.offsets.len() * self.mc_passes
    }

    fn validate(&self) -> Result<()> {
        if self.offsets.is_empty() || self.mc_passes == 0 {
            return Err(Error::InvalidArgument(
                "ensemble needs at least one offset and one pass".into(),
            ));
        }
        Ok(())
    }
}

/// A rectangular block of output pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileJob {
    pub id: u64,
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Partitions the raster into `tile_size` squares, row-major.
pub fn tile_jobs(geometry: &RasterGeometry, tile_size: usize) -> Vec<TileJob> {
    let mut jobs = Vec::new();
    if tile_size == 0 {
        return jobs;
    }
    for row0 in (0..geometry.height).step_by(tile_size) {
        for col0 in (0..geometry.width).step_by(tile_size) {
            jobs.push(TileJob {
                id: jobs.len() as u64,
                row0,
                col0,
                rows: tile_size.min(geometry.height - row0),
                cols: tile_size.min(geometry.width - col0),
            });
        }
    }
    jobs
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTile {
    pub job: TileJob,
    pub mean: Vec<f32>,
    pub sigma_data: Vec<f32>,
    pub sigma_model: Vec<f32>,
    pub sigma_total: Vec<f32>,
    /// Passes that covered each pixel.
    pub count: Vec<u32>,
    /// Configured passes per pixel.
    pub passes: usize,
}

/// One forward pass over a `1 x 10 x 40 x 40` window.
pub fn predict_window(
    model: &ModelState<f32>,
    window: &Tensor<f32>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Tensor<f32>> {
    model.forward(window, mode, rng)
}

/// Window origins along one axis for `offset`, with the output pixels each
/// window is responsible for: `(window origin, first pixel, end pixel)`.
fn axis_windows(
    extent: usize,
    t0: usize,
    t1: usize,
    offset: usize,
    margin: usize,
) -> Vec<(usize, usize, usize)> {
    let core = CHIP_SIZE - 2 * margin;
    let lo = t0.max(margin);
    let hi = t1.min(extent - margin);
    let mut out = Vec::new();
    if lo >= hi {
        return out;
    }
    let k0 = (lo as isize - offset as isize).div_euclid(core as isize);
    let k1 = (hi as isize - 1 - offset as isize).div_euclid(core as isize);
    for k in k0..=k1 {
        let cs = offset as isize + k * core as isize;
        let origin = (cs - margin as isize).clamp(0, (extent - CHIP_SIZE) as isize) as usize;
        let p0 = cs.max(lo as isize) as usize;
        let p1 = ((cs + core as isize) as usize).min(hi);
        if p0 < p1 {
            out.push((origin, p0, p1));
        }
    }
    out
}

/// Per-pixel Welford accumulator in `f64`.
#[derive(Clone, Copy, Default)]
struct PixelAcc {
    n: u32,
    mean: f64,
    m2: f64,
    var_sum: f64,
}

impl PixelAcc {
    fn push(&mut self, mean: f64, var: f64) {
        self.n += 1;
        let d = mean - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (mean - self.mean);
        self.var_sum += var;
    }
}

/// Predicts every pixel of `job` with the shifted-window ensemble.
pub fn ensemble_predict(
    model: &ModelState<f32>,
    inputs: &Raster,
    job: &TileJob,
    cfg: &EnsembleConfig,
) -> Result<PredictionTile> {
    cfg.validate()?;
    let g = inputs.geometry;
    if g.width < CHIP_SIZE || g.height < CHIP_SIZE {
        return Err(Error::InvalidArgument(format!(
            "raster {}x{} is smaller than one window",
            g.width, g.height
        )));
    }
    if inputs.band_count() != SAR_LAYERS {
        return Err(Error::InvalidArgument(format!(
            "expected {SAR_LAYERS} input bands, got {}",
            inputs.band_count()
        )));
    }
    if job.row0 + job.rows > g.height || job.col0 + job.cols > g.width {
        return Err(Error::InvalidArgument(format!(
            "tile {} extends beyond the raster",
            job.id
        )));
    }
    let spec = model.spec();
    let margin = spec.border_margin;
    let mode = if cfg.dropout { Mode::Mc } else { Mode::Eval };
    let root = RngStream::new(cfg.seed, 0x1F3E_0000);
    let mut acc = vec![PixelAcc::default(); job.rows * job.cols];
    let mut window = vec![0.0f32; INPUT_CHANNELS * CHIP_SIZE * CHIP_SIZE];
    let core = spec.output_size();
    for (oi, &offset) in cfg.offsets.iter().enumerate() {
        let rows = axis_windows(g.height, job.row0, job.row0 + job.rows, offset, margin);
        let cols = axis_windows(g.width, job.col0, job.col0 + job.cols, offset, margin);
        for &(wr, r0, r1) in &rows {
            for &(wc, c0, c1) in &cols {
                if !fill_window(inputs, wr as isize, wc as isize, CHIP_SIZE, &mut window) {
                    let plane = CHIP_SIZE * CHIP_SIZE;
                    for ch in 0..SAR_LAYERS {
                        let fill = spec.norm_mean[ch] as f32;
                        window[ch * plane..(ch + 1) * plane]
                            .iter_mut()
                            .filter(|v| v.is_nan())
                            .for_each(|v| *v = fill);
                    }
                }
                let x =
                    Tensor::from_vec([1, INPUT_CHANNELS, CHIP_SIZE, CHIP_SIZE], window.clone())?;
                for pass in 0..cfg.mc_passes {
                    let mut rng = root.derive(&[oi as u64, pass as u64, wr as u64, wc as u64]);
                    let y = predict_window(model, &x, mode, &mut rng)?;
                    let (mean, var) = (y.plane_slice(0, 0), y.plane_slice(0, 1));
                    for r in r0..r1 {
                        let yr = r - wr - margin;
                        for c in c0..c1 {
                            let yc = c - wc - margin;
                            let i = yr * core + yc;
                            acc[(r - job.row0) * job.cols + (c - job.col0)]
                                .push(mean[i] as f64, var[i] as f64);
                        }
                    }
                }
            }
        }
    }
    let n = acc.len();
    let mut tile = PredictionTile {
        job: *job,
        mean: vec![f32::NAN; n],
        sigma_data: vec![f32::NAN; n],
        sigma_model: vec![f32::NAN; n],
        sigma_total: vec![f32::NAN; n],
        count: vec![0; n],
        passes: cfg.passes_per_pixel(),
    };
    for (i, a) in acc.iter().enumerate() {
        let (r, c) = (job.row0 + i / job.cols, job.col0 + i % job.cols);
        let complete = (0..SAR_LAYERS).all(|b| inputs.get(b, r, c).is_finite());
        if a.n == 0 || !complete {
            continue;
        }
        tile.count[i] = a.n;
        tile.mean[i] = a.mean as f32;
        let sd = (a.var_sum / a.n as f64).sqrt();
        tile.sigma_data[i] = sd as f32;
        if a.n >= 2 {
            let sm = (a.m2 / (a.n - 1) as f64).max(0.0).sqrt();
            tile.sigma_model[i] = sm as f32;
            tile.sigma_total[i] = total_std(sd, sm) as f32;
        }
    }
    Ok(tile)
}

/// Combines tiles into a four-band raster. Overlapping pixels are averaged
/// with the pass counts as weights (variances, not standard deviations, are
/// averaged). Tiles are folded in id order.
pub fn stitch_mosaic(tiles: &[PredictionTile], geometry: RasterGeometry) -> Raster {
    let n = geometry.cells();
    let mut w = vec![0.0f64; n];
    let mut mean = vec![0.0f64; n];
    let mut var_d = vec![0.0f64; n];
    let mut var_m = vec![0.0f64; n];
    let mut model_ok = vec![true; n];
    let mut order: Vec<&PredictionTile> = tiles.iter().collect();
    order.sort_by_key(|t| t.job.id);
    for t in order {
        for (i, &cnt) in t.count.iter().enumerate() {
            if cnt == 0 {
                continue;
            }
            let (r, c) = (t.job.row0 + i / t.job.cols, t.job.col0 + i % t.job.cols);
            let j = r * geometry.width + c;
            let k = cnt as f64;
            w[j] += k;
            mean[j] += k * t.mean[i] as f64;
            var_d[j] += k * (t.sigma_data[i] as f64).powi(2);
            let sm = t.sigma_model[i];
            if sm.is_finite() {
                var_m[j] += k * (sm as f64).powi(2);
            } else {
                model_ok[j] = false;
            }
        }
    }
    let mut out = Raster::filled(
        geometry,
        MOSAIC_BANDS.iter().map(|s| s.to_string()).collect(),
        f32::NAN,
    );
    for j in 0..n {
        if w[j] == 0.0 {
            continue;
        }
        let sd = (var_d[j] / w[j]).sqrt();
        out.data[j] = (mean[j] / w[j]) as f32;
        out.data[2 * n + j] = sd as f32;
        if model_ok[j] {
            let sm = (var_m[j] / w[j]).sqrt();
            out.data[n + j] = total_std(sd, sm) as f32;
            out.data[3 * n + j] = sm as f32;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub workers: usize,
    pub tiles: usize,
    pub failed_tiles: Vec<u64>,
    pub pixels: usize,
    pub seconds: f64,
    pub pixels_per_second: f64,
}

/// Runs `predict` over `jobs` on a pool of `workers` threads. A failing job
/// is retried once; if it fails again it is logged and left out.
pub fn run_jobs<F>(
    jobs: &[TileJob],
    workers: usize,
    predict: F,
) -> Result<(Vec<PredictionTile>, ThroughputReport)>
where
    F: Fn(&TileJob) -> Result<PredictionTile> + Sync,
{
    let workers = workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let results: Vec<(u64, Result<PredictionTile>)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let r = predict(job).or_else(|e| {
                    log::warn!("tile {} failed ({e}); retrying", job.id);
                    predict(job)
                });
                (job.id, r)
            })
            .collect()
    });
    let seconds = start.elapsed().as_secs_f64();
    let mut tiles = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in results {
        match r {
            Ok(t) => tiles.push(t),
            Err(e) => {
                log::error!(
                    "{}",
                    Error::TileFailed {
                        tile: id,
                        reason: e.to_string()
                    }
                );
                failed.push(id);
            }
        }
    }
    let pixels: usize = tiles.iter().map(|t| t.job.rows * t.job.cols).sum();
    let report = ThroughputReport {
        workers,
        tiles: tiles.len(),
        failed_tiles: failed,
        pixels,
        seconds,
        pixels_per_second: if seconds > 0.0 {
            pixels as f64 / seconds
        } else {
            0.0
        },
    };
    Ok((tiles, report))
}

/// Ensemble prediction over all `jobs` and the stitched mosaic.
pub fn run_tiles(
    model: &ModelState<f32>,
    inputs: &Raster,
    jobs: &[TileJob],
    cfg: &EnsembleConfig,
    workers: usize,
) -> Result<(Raster, ThroughputReport)> {
    let (tiles, report) = run_jobs(jobs, workers, |job| {
        ensemble_predict(model, inputs, job, cfg)
    })?;
    Ok((stitch_mosaic(&tiles, inputs.geometry), report))
}

/// Largest absolute difference between horizontally or vertically adjacent
/// valid pixels that straddle a window-core boundary of any of `offsets`.
pub fn seam_jump(mean: &[f32], geometry: &RasterGeometry, offsets: &[usize], margin: usize) -> f64 {
    let core = CHIP_SIZE - 2 * margin;
    let (w, h) = (geometry.width, geometry.height);
    let on_seam = |p: usize| {
        offsets
            .iter()
            .any(|&o| (p + core - o % core).is_multiple_of(core))
    };
    let mut worst = 0.0f64;
    for r in 0..h {
        for c in 0..w {
            let v = mean[r * w + c];
            if !v.is_finite() {
                continue;
            }
            if c > 0 && on_seam(c) {
                let u = mean[r * w + c - 1];
                if u.is_finite() {
                    worst = worst.max((v - u).abs() as f64);
                }
            }
            if r > 0 && on_seam(r) {
                let u = mean[(r - 1) * w + c];
                if u.is_finite() {
                    worst = worst.max((v - u).abs() as f64);
                }
            }
        }
    }
    worst
}
